//! Process families over an iid coordinate sequence `(ω_i)`: causal linear,
//! semi-linear and Hölder functions of semi-linear processes, with exact
//! projections, conditional expectations and variances where they exist.

mod holder;
mod linear;
pub(crate) mod oracle;
mod semilinear;
mod space;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::sequences::{CoefficientSequence, CustomTail};

pub use holder::{
    custom_holder, holder_violation, Centering, EstimationBudget, HolderFn, HolderModel, ProjectionEstimate,
    CENTERING_DRAWS,
};
pub use linear::{CausalLinearModel, DEFAULT_TAIL_FRACTION, MAX_DEFAULT_LAG};
pub(crate) use semilinear::LagFunctions;
pub use semilinear::{linear_as_semilinear, AlphaFn, Alphas, NamedShape, SemiLinearModel, Shape};
pub use space::{InnovationSpace, Sampler};

pub(crate) use holder::draw_coord;
use oracle::{coordinate_sums, perturbation_bound, LagBasis};

/// One coordinate `ω_i`: an atom index on discrete spaces or a value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coord {
    Index(u32),
    Value(f64),
}

/// A past configuration `ω_0, ω_{-1}, ω_{-2}, …` (most recent first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinates {
    Indices(Vec<u32>),
    Values(Vec<f64>),
}

impl Coordinates {
    pub fn len(&self) -> usize {
        match self {
            Coordinates::Indices(v) => v.len(),
            Coordinates::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `ω_{-s}`.
    pub fn get(&self, s: usize) -> Coord {
        match self {
            Coordinates::Indices(v) => Coord::Index(v[s]),
            Coordinates::Values(v) => Coord::Value(v[s]),
        }
    }
}

/// Exact value with a certified truncation error bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleValue {
    pub value: f64,
    pub err_bound: f64,
}

/// `P_0(X_i)` as a function of `ω_0`.
#[derive(Clone)]
pub enum Projection {
    /// `x ↦ coef · x`.
    Scaled { coef: f64 },
    /// Values on the atoms of a discrete space.
    Atoms(Vec<f64>),
    /// A lag function of a sampler space.
    Function(AlphaFn),
}

impl std::fmt::Debug for Projection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Projection::Scaled { coef } => write!(f, "Scaled({coef})"),
            Projection::Atoms(v) => f.debug_tuple("Atoms").field(v).finish(),
            Projection::Function(_) => write!(f, "Function(<fn>)"),
        }
    }
}

impl Projection {
    /// Value at a coordinate value `x` (for `Atoms`, `x` must be an atom of
    /// `space`).
    pub fn at(&self, space: &InnovationSpace, x: f64) -> Result<f64> {
        match self {
            Projection::Scaled { coef } => Ok(coef * x),
            Projection::Atoms(v) => space
                .index_of(x)
                .map(|m| v[m as usize])
                .ok_or_else(|| LabError::PastMismatch(format!("{x} is not an atom of the space"))),
            Projection::Function(f) => Ok(f(x)),
        }
    }

    pub fn norm2(&self, space: &InnovationSpace) -> f64 {
        match self {
            Projection::Scaled { coef } => coef * coef * space.variance(),
            Projection::Atoms(v) => {
                let probs = space.probs().expect("atoms on a discrete space");
                crate::numeric::compensated_sum(v.iter().zip(probs).map(|(a, p)| p * a * a))
            }
            Projection::Function(f) => space.expect(|x| f(x).powi(2)),
        }
    }
}

#[derive(Debug, Clone)]
pub enum ProcessModel {
    Linear(CausalLinearModel),
    SemiLinear(SemiLinearModel),
    Holder(HolderModel),
}

impl ProcessModel {
    pub fn family(&self) -> &'static str {
        match self {
            ProcessModel::Linear(_) => "linear",
            ProcessModel::SemiLinear(_) => "semilinear",
            ProcessModel::Holder(_) => "holder",
        }
    }

    pub fn lag(&self) -> usize {
        match self {
            ProcessModel::Linear(m) => m.lag(),
            ProcessModel::SemiLinear(m) => m.lag(),
            ProcessModel::Holder(m) => m.lag(),
        }
    }

    pub fn space(&self) -> &InnovationSpace {
        match self {
            ProcessModel::Linear(m) => m.innovation(),
            ProcessModel::SemiLinear(m) => m.space(),
            ProcessModel::Holder(m) => m.base().space(),
        }
    }

    /// Certified bound on `Σ_{j>L} ‖α_j‖²`.
    pub fn tail_bound(&self) -> f64 {
        match self {
            ProcessModel::Linear(m) => m.tail_bound(),
            ProcessModel::SemiLinear(m) => m.tail_bound(),
            ProcessModel::Holder(m) => m.base().tail_bound(),
        }
    }

    pub(crate) fn basis(&self, operation: &'static str) -> Result<LagBasis<'_>> {
        match self {
            ProcessModel::Linear(m) => Ok(LagBasis::linear(m)),
            ProcessModel::SemiLinear(m) => Ok(LagBasis::semilinear(m)),
            ProcessModel::Holder(_) => Err(LabError::Unsupported {
                operation,
                family: "holder",
            }),
        }
    }

    /// `‖S_n − S_n^{(L)}‖₂` bound for the neglected lags `R_i`: `n √T` by
    /// Minkowski, or `√n · Σ_{j>L} ‖α_j‖` when that series is known, from
    /// `|Cov(R_0, R_h)| ≤ Σ_j ‖α_j‖ ‖α_{j+h}‖`.
    pub(crate) fn truncation_norm(&self, n: usize) -> f64 {
        let t = self.tail_bound();
        if t == 0.0 {
            return 0.0;
        }
        let crude = n as f64 * t.sqrt();
        let l1 = match self {
            ProcessModel::Holder(_) => None,
            _ => self
                .projection_norms()
                .ok()
                .and_then(|s| s.tail_sum(self.lag() + 1))
                .filter(|t| t.is_finite())
                .map(|t| t.upper),
        };
        match l1 {
            Some(a) => crude.min((n as f64).sqrt() * a),
            None => crude,
        }
    }

    /// Coordinates in the form the oracles and the simulator consume:
    /// values for linear models, native coordinates otherwise.
    pub fn native_past(&self, past: &Coordinates, required: usize) -> Result<Vec<Coord>> {
        if past.len() < required {
            return Err(LabError::InsufficientPast {
                required,
                supplied: past.len(),
            });
        }
        (0..past.len())
            .map(|s| {
                let c = past.get(s);
                match self {
                    ProcessModel::Linear(m) => match c {
                        Coord::Value(x) => {
                            if m.innovation().is_discrete() && m.innovation().index_of(x).is_none() {
                                Err(LabError::PastMismatch(format!("{x} is not an atom of the space")))
                            } else {
                                Ok(Coord::Value(x))
                            }
                        }
                        Coord::Index(i) => m
                            .innovation()
                            .points()
                            .and_then(|p| p.get(i as usize))
                            .map(|&x| Coord::Value(x))
                            .ok_or_else(|| LabError::PastMismatch(format!("atom index {i} is not valid"))),
                    },
                    ProcessModel::SemiLinear(m) => m.coord_of(c),
                    ProcessModel::Holder(m) => m.base().coord_of(c),
                }
            })
            .collect()
    }

    /// Exact `Var(S_n)` through the coordinate decomposition.
    pub fn exact_variance(&self, n: usize) -> Result<OracleValue> {
        if n == 0 {
            return Err(LabError::param("n", "horizon must be ≥ 1"));
        }
        let basis = self.basis("exact_variance")?;
        let v = coordinate_sums(&basis, n, None).total();
        Ok(OracleValue {
            value: v,
            err_bound: perturbation_bound(v, self.truncation_norm(n)),
        })
    }

    /// `E(X_k | F_0)` at a past `ω_0, ω_{-1}, …` (`k ≥ 1`).
    pub fn conditional_x(&self, k: usize, past: &Coordinates) -> Result<f64> {
        let l = self.lag();
        let basis = self.basis("conditional_x")?;
        let coords = self.native_past(past, l)?;
        if k == 0 || k > l {
            return Ok(0.0);
        }
        Ok(oracle::conditional_increments(&basis, k, &coords)?[k - 1])
    }

    /// Exact `E(S_n | F_0) = Σ_{k=1}^{n} Σ_{j≥k} α_j(ω_{k−j})`.
    pub fn conditional_expectation_s(&self, n: usize, past: &Coordinates) -> Result<f64> {
        let l = self.lag();
        let basis = self.basis("conditional_expectation_s")?;
        let coords = self.native_past(past, l)?;
        let mut acc = crate::numeric::CompensatedSum::new();
        let mut lead = vec![crate::numeric::CompensatedSum::new(); basis.width()];
        let mut lagging = lead.clone();
        // W_s = P_{min(n+s, L)} − P_s evaluated at ω_{-s}
        let mut next_lead = 0usize;
        for (s, &c) in coords.iter().enumerate().take(l) {
            for (a, v) in lagging.iter_mut().zip(basis.vector(s)) {
                a.add(v);
            }
            while next_lead <= (n + s).min(l) {
                for (a, v) in lead.iter_mut().zip(basis.vector(next_lead)) {
                    a.add(v);
                }
                next_lead += 1;
            }
            let w: Vec<f64> = lead.iter().zip(&lagging).map(|(a, b)| a.value() - b.value()).collect();
            acc.add(basis.eval(&w, c)?);
        }
        Ok(acc.value())
    }

    /// `max_{1≤k≤n} |E(S_k | F_0)|`.
    pub fn max_conditional_drift(&self, n: usize, past: &Coordinates) -> Result<f64> {
        let l = self.lag();
        let basis = self.basis("max_conditional_drift")?;
        let coords = self.native_past(past, l)?;
        let inc = oracle::conditional_increments(&basis, n, &coords)?;
        let mut acc = crate::numeric::CompensatedSum::new();
        let mut best = 0.0f64;
        for x in inc {
            acc.add(x);
            best = best.max(acc.value().abs());
        }
        Ok(best)
    }

    /// `P_0(X_i)`, exact for linear and semi-linear models.
    pub fn p0_projection(&self, i: usize) -> Result<Projection> {
        match self {
            ProcessModel::Linear(m) => Ok(Projection::Scaled { coef: m.coef(i) }),
            ProcessModel::SemiLinear(m) => {
                if i > m.lag() {
                    return Ok(match m.space().atoms() {
                        Some(w) => Projection::Atoms(vec![0.0; w]),
                        None => Projection::Scaled { coef: 0.0 },
                    });
                }
                match m.row(i) {
                    Some(r) => Ok(Projection::Atoms(r.to_vec())),
                    None => {
                        let model = m.clone();
                        Ok(Projection::Function(std::sync::Arc::new(move |x| model.alpha_at_value(i, x))))
                    }
                }
            }
            ProcessModel::Holder(_) => Err(LabError::Unsupported {
                operation: "p0_projection (use the Monte Carlo estimator)",
                family: "holder",
            }),
        }
    }

    /// The sequence of projection norms `‖P_0(X_i)‖₂` (for Hölder models the
    /// bound `2C ‖|α_i|^γ‖₂`), carrying the tail model the conditions are
    /// decided from.
    pub fn projection_norms(&self) -> Result<CoefficientSequence> {
        match self {
            ProcessModel::Linear(m) => m.projection_norms(),
            ProcessModel::SemiLinear(m) => m.projection_norms(),
            ProcessModel::Holder(h) => {
                let base = h.base();
                let gamma = h.function().gamma();
                let c2 = 2.0 * h.function().constant();
                let prefix: Vec<f64> = (0..=base.lag()).map(|j| c2 * base.alpha_holder_norm(j, gamma)).collect();
                if let Alphas::Factorized { coeffs, shapes } = base.alphas() {
                    // ‖|a_j h|^γ‖ = |a_j|^γ ‖|h|^γ‖: same family as |a_j|^γ
                    let shape_max = (0..shapes.len().min(base.lag() + 1))
                        .filter(|&p| coeffs.value(p) != 0.0)
                        .map(|p| base.alpha_holder_norm(p, gamma) / coeffs.value(p).abs().powf(gamma))
                        .fold(0.0, f64::max);
                    let tail = coeffs.powered(gamma)?.scaled(c2 * shape_max)?;
                    return CoefficientSequence::new(prefix, tail.tail_model().clone());
                }
                if base.tail_bound() == 0.0 {
                    CoefficientSequence::finite(prefix)
                } else {
                    CoefficientSequence::custom(prefix, CustomTail::default())
                }
            }
        }
    }

    /// Whether `Σ_i P_0(X_i)` is known to converge, from the signed
    /// coefficient tail (linear) or finite lag (semi-linear lists/tables).
    pub fn gordin_series_converges(&self) -> Option<bool> {
        match self {
            ProcessModel::Linear(m) => Some(m.coeffs().tail_sum(0).map(|t| t.is_finite()).unwrap_or(false)),
            ProcessModel::SemiLinear(m) => semilinear_series_converges(m),
            ProcessModel::Holder(h) => semilinear_series_converges(h.base()),
        }
    }
}

fn semilinear_series_converges(m: &SemiLinearModel) -> Option<bool> {
    match m.alphas() {
        Alphas::Factorized { coeffs, shapes } => {
            if shapes.len() == 1 {
                coeffs.tail_sum(0).map(|t| t.is_finite()).or(Some(false))
            } else {
                // Σ a_j h_{j mod P}: absolute convergence suffices
                match coeffs.abs().tail_sum(0) {
                    Some(t) if t.is_finite() => Some(true),
                    _ => None,
                }
            }
        }
        _ => (m.tail_bound() == 0.0).then_some(true),
    }
}

// JSON model specification.

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphasDoc {
    Table { table: Vec<Vec<f64>> },
    Factorized { coeffs: CoefficientSequence, shapes: Vec<Shape> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HolderFnDoc {
    AbsPower { gamma: f64 },
    SoftClip { gamma: f64, scale: f64 },
}

fn default_centering_draws() -> usize {
    CENTERING_DRAWS
}

/// `{"family": "linear|semilinear|holder", "space": …, "coeffs"|"alphas": …,
/// "lag": L, "f": …}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub id: Option<String>,
    pub family: Family,
    pub space: InnovationSpace,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<CoefficientSequence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<AlphasDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lag: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<HolderFnDoc>,
    #[serde(default = "default_centering_draws")]
    pub centering_draws: usize,
    #[serde(default)]
    pub centering_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Semilinear,
    Holder,
}

impl ModelSpec {
    fn alphas(&self) -> Result<Alphas> {
        match &self.alphas {
            Some(AlphasDoc::Table { table }) => Ok(Alphas::Table(table.clone())),
            Some(AlphasDoc::Factorized { coeffs, shapes }) => Ok(Alphas::Factorized {
                coeffs: coeffs.clone(),
                shapes: shapes.clone(),
            }),
            None => Err(LabError::param("alphas", "required for this family")),
        }
    }

    pub fn build(&self) -> Result<ProcessModel> {
        match self.family {
            Family::Linear => {
                if self.alphas.is_some() || self.f.is_some() {
                    return Err(LabError::param("family", "linear models take `coeffs` only"));
                }
                let coeffs = self
                    .coeffs
                    .clone()
                    .ok_or_else(|| LabError::param("coeffs", "required for linear models"))?;
                Ok(ProcessModel::Linear(CausalLinearModel::new(coeffs, self.space.clone(), self.lag)?))
            }
            Family::Semilinear => {
                if self.coeffs.is_some() || self.f.is_some() {
                    return Err(LabError::param("family", "semi-linear models take `alphas` only"));
                }
                Ok(ProcessModel::SemiLinear(SemiLinearModel::new(
                    self.space.clone(),
                    self.alphas()?,
                    self.lag,
                )?))
            }
            Family::Holder => {
                if self.coeffs.is_some() {
                    return Err(LabError::param("coeffs", "Hölder models take `alphas` and `f`"));
                }
                let base = SemiLinearModel::new(self.space.clone(), self.alphas()?, self.lag)?;
                let f = match self.f.ok_or_else(|| LabError::param("f", "required for Hölder models"))? {
                    HolderFnDoc::AbsPower { gamma } => HolderFn::AbsPower { gamma },
                    HolderFnDoc::SoftClip { gamma, scale } => HolderFn::SoftClip { gamma, scale },
                };
                Ok(ProcessModel::Holder(HolderModel::new(
                    base,
                    f,
                    self.centering_draws,
                    self.centering_seed,
                )?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(a: Vec<f64>) -> ProcessModel {
        ProcessModel::Linear(
            CausalLinearModel::new(CoefficientSequence::finite(a).unwrap(), InnovationSpace::rademacher(), None)
                .unwrap(),
        )
    }

    fn geometric_linear() -> ProcessModel {
        ProcessModel::Linear(
            CausalLinearModel::new(
                CoefficientSequence::geometric(0.5).unwrap(),
                InnovationSpace::rademacher(),
                None,
            )
            .unwrap(),
        )
    }

    #[test]
    fn iid_and_telescoping_variances() {
        let iid = linear(vec![1.0]);
        let tel = linear(vec![1.0, -1.0]);
        for n in [1usize, 10, 1000] {
            assert_eq!(iid.exact_variance(n).unwrap().value, n as f64);
            assert_eq!(tel.exact_variance(n).unwrap().value, 2.0);
        }
    }

    #[test]
    fn geometric_variance_per_step_tends_to_four() {
        let m = geometric_linear();
        let v = m.exact_variance(1024).unwrap();
        // brute-force coordinate algebra: b_{n,m} = Σ_k a_{k−m}
        let l = m.lag();
        let a: Vec<f64> = (0..=l).map(|j| 0.5f64.powi(j as i32)).collect();
        let n = 1024i64;
        let mut brute = 0.0;
        for mm in (1 - l as i64)..=n {
            let g: f64 = (mm.max(1)..=n).filter(|k| ((k - mm) as usize) <= l).map(|k| a[(k - mm) as usize]).sum();
            brute += g * g;
        }
        assert!((v.value - brute).abs() < 1e-10 * brute);
        assert!((v.value / 1024.0 - 4.0).abs() < 0.02);
        assert!(v.err_bound > 0.0 && v.err_bound < 1e-2 * v.value);
    }

    #[test]
    fn conditional_expectations_worked_examples() {
        let iid = linear(vec![1.0]);
        assert_eq!(iid.conditional_expectation_s(5, &Coordinates::Values(vec![])).unwrap(), 0.0);
        let tel = linear(vec![1.0, -1.0]);
        let past = Coordinates::Values(vec![-1.0]);
        for n in [1usize, 2, 50] {
            assert_eq!(tel.conditional_expectation_s(n, &past).unwrap(), 1.0);
            assert_eq!(tel.max_conditional_drift(n, &past).unwrap(), 1.0);
        }
        // geometric with ω_0 = c, ω_{-1} = d, zero beyond: c + d/2 as n → ∞
        let g = ProcessModel::Linear(
            CausalLinearModel::new(
                CoefficientSequence::geometric(0.5).unwrap(),
                InnovationSpace::normal(1.0).unwrap(),
                None,
            )
            .unwrap(),
        );
        let (c, d) = (0.7, -1.3);
        let mut past = vec![c, d];
        past.resize(g.lag(), 0.0);
        let e = g.conditional_expectation_s(10_000, &Coordinates::Values(past)).unwrap();
        assert!((e - (c + d / 2.0)).abs() < 1e-3, "{e}");
        assert!(matches!(
            g.conditional_expectation_s(3, &Coordinates::Values(vec![1.0])),
            Err(LabError::InsufficientPast { .. })
        ));
    }

    #[test]
    fn conditional_x_sums_to_conditional_s() {
        let g = geometric_linear();
        let past = Coordinates::Indices((0..g.lag()).map(|i| (i % 2) as u32).collect());
        let n = 8;
        let total: f64 = (1..=n).map(|k| g.conditional_x(k, &past).unwrap()).sum();
        let direct = g.conditional_expectation_s(n, &past).unwrap();
        assert!((total - direct).abs() < 1e-14);
    }

    #[test]
    fn projections_of_linear_models() {
        let g = geometric_linear();
        let p = g.p0_projection(3).unwrap();
        assert_eq!(p.at(g.space(), 1.0).unwrap(), 0.125);
        assert_eq!(p.at(g.space(), -1.0).unwrap(), -0.125);
        let embedded = match &g {
            ProcessModel::Linear(m) => ProcessModel::SemiLinear(linear_as_semilinear(m).unwrap()),
            _ => unreachable!(),
        };
        for i in 0..=g.lag() {
            let a = g.p0_projection(i).unwrap();
            let b = embedded.p0_projection(i).unwrap();
            for x in [1.0, -1.0] {
                assert_eq!(a.at(g.space(), x).unwrap().to_bits(), b.at(g.space(), x).unwrap().to_bits());
            }
        }
        for n in [16usize, 256, 4096] {
            assert_eq!(
                g.exact_variance(n).unwrap().value.to_bits(),
                embedded.exact_variance(n).unwrap().value.to_bits()
            );
        }
    }

    #[test]
    fn model_spec_json() {
        let doc = r#"{
            "family": "semilinear",
            "space": {"kind": "discrete", "points": [0, 1, 2, 3], "probs": [0.25, 0.25, 0.25, 0.25]},
            "alphas": {"coeffs": {"prefix": [], "tail": {"kind": "geometric", "params": {"ratio": 0.5}}},
                       "shapes": [[1, 1, -1, -1], [1, -1, -1, 1]]}
        }"#;
        let spec: ModelSpec = serde_json::from_str(doc).unwrap();
        let m = spec.build().unwrap();
        assert_eq!(m.family(), "semilinear");
        assert_eq!(m.lag(), 13);
        let lin = r#"{"family": "linear", "space": {"kind": "rademacher"},
                      "coeffs": {"prefix": [1, -1], "tail": {"kind": "finite_support"}}}"#;
        let m: ModelSpec = serde_json::from_str(lin).unwrap();
        assert_eq!(m.build().unwrap().exact_variance(7).unwrap().value, 2.0);
        let bad = r#"{"family": "linear", "space": {"kind": "rademacher"}}"#;
        assert!(serde_json::from_str::<ModelSpec>(bad).unwrap().build().is_err());
    }

    #[test]
    fn holder_projection_norm_sequence_dominates() {
        let spec: ModelSpec = serde_json::from_str(
            r#"{"family": "holder", "space": {"kind": "rademacher"},
                "alphas": {"coeffs": {"prefix": [], "tail": {"kind": "geometric", "params": {"ratio": 0.5}}},
                           "shapes": ["identity"]},
                "f": {"kind": "abs_power", "gamma": 1}}"#,
        )
        .unwrap();
        let m = spec.build().unwrap();
        let norms = m.projection_norms().unwrap();
        assert_eq!(norms.value(3), 2.0 * 0.125);
        assert!(norms.value(40) > 0.0);
        assert!(m.exact_variance(4).is_err());
    }
}
