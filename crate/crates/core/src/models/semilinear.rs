use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::linear::{default_lag, CausalLinearModel, DEFAULT_TAIL_FRACTION};
use super::space::InnovationSpace;
use super::Coord;
use crate::error::{LabError, Result};
use crate::sequences::{CoefficientSequence, CustomTail, TailModel};

pub type AlphaFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Coordinate function `h` in the factorized form `α_j = a_j · h_{j mod P}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shape {
    Named(NamedShape),
    /// Values on the atoms of a discrete space.
    Values(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedShape {
    Identity,
    Sign,
    /// `x² − E x²`
    CenteredSquare,
}

/// How the lag functions `α_0, α_1, …` are specified.
#[derive(Clone)]
pub enum Alphas {
    /// `table[j][m] = α_j(x_m)` on a discrete space; lag is `rows − 1`.
    Table(Vec<Vec<f64>>),
    /// `α_j = a_j · h_{j mod P}`.
    Factorized {
        coeffs: CoefficientSequence,
        shapes: Vec<Shape>,
    },
    /// Arbitrary centered functions `α_0..α_L` (sampler spaces).
    Functions(Vec<AlphaFn>),
}

impl fmt::Debug for Alphas {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alphas::Table(t) => f.debug_tuple("Table").field(&t.len()).finish(),
            Alphas::Factorized { coeffs, shapes } => f
                .debug_struct("Factorized")
                .field("coeffs", coeffs)
                .field("shapes", shapes)
                .finish(),
            Alphas::Functions(v) => f.debug_tuple("Functions").field(&v.len()).finish(),
        }
    }
}

/// Evaluation form used by the simulator and the oracles.
#[derive(Clone)]
pub(crate) enum LagFunctions {
    /// Row-major `(L+1) × m` table over the atoms.
    Table { width: usize, values: Arc<Vec<f64>> },
    /// `a_0..a_L` and shape evaluators for sampler spaces.
    Factorized { coeffs: Arc<Vec<f64>>, shapes: Vec<ShapeFn> },
    Functions(Vec<AlphaFn>),
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum ShapeFn {
    Identity,
    Sign,
    CenteredSquare { second_moment: f64 },
}

impl ShapeFn {
    #[inline]
    pub(crate) fn eval(self, x: f64) -> f64 {
        match self {
            ShapeFn::Identity => x,
            ShapeFn::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            ShapeFn::CenteredSquare { second_moment } => x * x - second_moment,
        }
    }
}

/// `X_i = Σ_{j=0}^{L} α_j(ω_{i-j})` over iid coordinates `ω`.
#[derive(Clone)]
pub struct SemiLinearModel {
    space: InnovationSpace,
    spec: Alphas,
    lag: usize,
    tail_bound: f64,
    funcs: LagFunctions,
}

impl fmt::Debug for SemiLinearModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SemiLinearModel")
            .field("space", &self.space)
            .field("alphas", &self.spec)
            .field("lag", &self.lag)
            .field("tail_bound", &self.tail_bound)
            .finish()
    }
}

fn shape_on_atoms(shape: &Shape, space: &InnovationSpace) -> Result<Vec<f64>> {
    let points = space.points().expect("discrete space");
    match shape {
        Shape::Values(v) => {
            if v.len() != points.len() {
                return Err(LabError::param(
                    "shapes",
                    format!("shape has {} values for {} atoms", v.len(), points.len()),
                ));
            }
            Ok(v.clone())
        }
        Shape::Named(n) => {
            let f = named_shape_fn(*n, space);
            Ok(points.iter().map(|&x| f.eval(x)).collect())
        }
    }
}

fn named_shape_fn(n: NamedShape, space: &InnovationSpace) -> ShapeFn {
    match n {
        NamedShape::Identity => ShapeFn::Identity,
        NamedShape::Sign => ShapeFn::Sign,
        NamedShape::CenteredSquare => ShapeFn::CenteredSquare {
            second_moment: space.expect(|x| x * x),
        },
    }
}

fn centering_tolerance(scale: f64) -> f64 {
    1e-12 * scale.max(1.0)
}

impl SemiLinearModel {
    /// Builds a model; `lag` applies to factorized specifications only (table
    /// and function lists fix it by their length).
    pub fn new(space: InnovationSpace, alphas: Alphas, lag: Option<usize>) -> Result<Self> {
        match &alphas {
            Alphas::Table(rows) => Self::from_table(space, rows.clone(), alphas),
            Alphas::Factorized { coeffs, shapes } => {
                let (coeffs, shapes) = (coeffs.clone(), shapes.clone());
                Self::from_factorized(space, coeffs, shapes, lag, alphas)
            }
            Alphas::Functions(fs) => {
                if fs.is_empty() {
                    return Err(LabError::InvalidModel("at least one lag function is required".into()));
                }
                if space.is_discrete() {
                    let points = space.points().unwrap();
                    let rows = fs.iter().map(|f| points.iter().map(|&x| f(x)).collect()).collect();
                    return Self::from_table(space, rows, alphas);
                }
                for (j, f) in fs.iter().enumerate() {
                    let mean = space.expect(|x| f(x));
                    let scale = space.expect(|x| f(x).abs());
                    if mean.abs() > 1e-9 * scale.max(1.0) {
                        return Err(LabError::InvalidModel(format!(
                            "α_{j} is not centered: mean {mean}"
                        )));
                    }
                }
                Ok(Self {
                    lag: fs.len() - 1,
                    tail_bound: 0.0,
                    funcs: LagFunctions::Functions(fs.clone()),
                    space,
                    spec: alphas,
                })
            }
        }
    }

    fn from_table(space: InnovationSpace, rows: Vec<Vec<f64>>, spec: Alphas) -> Result<Self> {
        let probs = match space.probs() {
            Some(p) => p.to_vec(),
            None => return Err(LabError::InvalidModel("a lag table needs a discrete space".into())),
        };
        if rows.is_empty() {
            return Err(LabError::InvalidModel("lag table has no rows".into()));
        }
        let width = probs.len();
        let mut values = Vec::with_capacity(rows.len() * width);
        for (j, row) in rows.iter().enumerate() {
            if row.len() != width {
                return Err(LabError::InvalidModel(format!(
                    "row {j} has {} entries for {width} atoms",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(LabError::InvalidModel(format!("row {j} has a non-finite entry")));
            }
            let mean: f64 = crate::numeric::compensated_sum(row.iter().zip(&probs).map(|(a, p)| a * p));
            let scale = row.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            if mean.abs() > centering_tolerance(scale) {
                return Err(LabError::InvalidModel(format!(
                    "α_{j} is not centered: μ(α_{j}) = {mean}"
                )));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            lag: rows.len() - 1,
            tail_bound: 0.0,
            funcs: LagFunctions::Table {
                width,
                values: Arc::new(values),
            },
            space,
            spec,
        })
    }

    fn from_factorized(
        space: InnovationSpace,
        coeffs: CoefficientSequence,
        shapes: Vec<Shape>,
        lag: Option<usize>,
        spec: Alphas,
    ) -> Result<Self> {
        if shapes.is_empty() {
            return Err(LabError::param("shapes", "at least one shape is required"));
        }
        // squared norms ‖h_p‖² and centering of each shape
        let mut norms = Vec::with_capacity(shapes.len());
        let mut atom_values = Vec::new();
        let mut shape_fns = Vec::new();
        for (p, shape) in shapes.iter().enumerate() {
            if space.is_discrete() {
                let v = shape_on_atoms(shape, &space)?;
                let probs = space.probs().unwrap();
                let mean = crate::numeric::compensated_sum(v.iter().zip(probs).map(|(a, p)| a * p));
                let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                if mean.abs() > centering_tolerance(scale) {
                    return Err(LabError::InvalidModel(format!("shape {p} is not centered: mean {mean}")));
                }
                norms.push(crate::numeric::compensated_sum(v.iter().zip(probs).map(|(a, p)| p * a * a)));
                atom_values.push(v);
            } else {
                let f = match shape {
                    Shape::Named(n) => named_shape_fn(*n, &space),
                    Shape::Values(_) => {
                        return Err(LabError::InvalidModel(
                            "shape values on atoms need a discrete space".into(),
                        ))
                    }
                };
                let mean = space.expect(|x| f.eval(x));
                let scale = space.expect(|x| f.eval(x).abs());
                if mean.abs() > 1e-9 * scale.max(1.0) {
                    return Err(LabError::InvalidModel(format!("shape {p} is not centered: mean {mean}")));
                }
                norms.push(space.expect(|x| f.eval(x).powi(2)));
                shape_fns.push(f);
            }
        }
        let max_norm = norms.iter().cloned().fold(0.0, f64::max);
        let lag = match lag {
            Some(l) => l,
            None => default_lag(&coeffs, DEFAULT_TAIL_FRACTION)?,
        };
        let tail_bound = max_norm * coeffs.tail_l2(lag + 1).upper;
        if !tail_bound.is_finite() {
            return Err(LabError::InvalidModel(format!(
                "no certified bound on Σ_{{j>{lag}}} ‖α_j‖²"
            )));
        }
        let a = coeffs.materialize(lag + 1)?;
        let funcs = if space.is_discrete() {
            let width = space.atoms().unwrap();
            let period = atom_values.len();
            let mut values = Vec::with_capacity((lag + 1) * width);
            for (j, &aj) in a.iter().enumerate() {
                values.extend(atom_values[j % period].iter().map(|h| aj * h));
            }
            LagFunctions::Table {
                width,
                values: Arc::new(values),
            }
        } else {
            LagFunctions::Factorized {
                coeffs: Arc::new(a),
                shapes: shape_fns,
            }
        };
        Ok(Self {
            space,
            spec,
            lag,
            tail_bound,
            funcs,
        })
    }

    /// Table model built directly from rows, bypassing the spec copy.
    pub fn from_rows(space: InnovationSpace, rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(space, Alphas::Table(rows.clone()), None)
    }

    /// Overrides the certified bound on `Σ_{j>L} ‖α_j‖²` (for function lists
    /// truncated by the caller).
    pub fn with_tail_bound(mut self, bound: f64) -> Result<Self> {
        if !(bound >= 0.0) || !bound.is_finite() {
            return Err(LabError::param("tail_bound", "must be finite and ≥ 0"));
        }
        self.tail_bound = bound;
        Ok(self)
    }

    pub fn space(&self) -> &InnovationSpace {
        &self.space
    }

    pub fn alphas(&self) -> &Alphas {
        &self.spec
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub(crate) fn lag_functions(&self) -> &LagFunctions {
        &self.funcs
    }

    /// Row `α_j` on the atoms (discrete spaces).
    pub fn row(&self, j: usize) -> Option<&[f64]> {
        match &self.funcs {
            LagFunctions::Table { width, values } if j <= self.lag => {
                Some(&values[j * width..(j + 1) * width])
            }
            _ => None,
        }
    }

    /// `α_j(x)` at a coordinate value.
    pub fn alpha_at_value(&self, j: usize, x: f64) -> f64 {
        if j > self.lag {
            return 0.0;
        }
        match &self.funcs {
            LagFunctions::Table { width, values } => {
                let m = self
                    .space
                    .index_of(x)
                    .unwrap_or_else(|| panic!("{x} is not an atom of the space")) as usize;
                values[j * width + m]
            }
            LagFunctions::Factorized { coeffs, shapes } => coeffs[j] * shapes[j % shapes.len()].eval(x),
            LagFunctions::Functions(fs) => fs[j](x),
        }
    }

    /// `α_j(ω)` at a coordinate (atom index or value).
    #[inline]
    pub fn alpha_coord(&self, j: usize, c: Coord) -> f64 {
        if j > self.lag {
            return 0.0;
        }
        match (&self.funcs, c) {
            (LagFunctions::Table { width, values }, Coord::Index(m)) => values[j * width + m as usize],
            (LagFunctions::Factorized { coeffs, shapes }, Coord::Value(x)) => {
                coeffs[j] * shapes[j % shapes.len()].eval(x)
            }
            (LagFunctions::Functions(fs), Coord::Value(x)) => fs[j](x),
            (_, Coord::Value(x)) => self.alpha_at_value(j, x),
            (_, Coord::Index(m)) => panic!("atom index {m} on a sampler space"),
        }
    }

    /// Native coordinate for this model's space: atom indices on discrete
    /// spaces, values otherwise.
    pub fn coord_of(&self, c: Coord) -> Result<Coord> {
        match (self.space.is_discrete(), c) {
            (true, Coord::Index(m)) if (m as usize) < self.space.atoms().unwrap() => Ok(c),
            (true, Coord::Index(m)) => Err(LabError::PastMismatch(format!("atom index {m} out of range"))),
            (true, Coord::Value(x)) => self
                .space
                .index_of(x)
                .map(Coord::Index)
                .ok_or_else(|| LabError::PastMismatch(format!("{x} is not an atom of the space"))),
            (false, Coord::Value(_)) => Ok(c),
            (false, Coord::Index(_)) => Err(LabError::PastMismatch(
                "atom indices supplied for a continuous space".into(),
            )),
        }
    }

    /// `‖α_j‖²_{2,𝒳}`.
    pub fn alpha_norm2(&self, j: usize) -> f64 {
        if j > self.lag {
            return 0.0;
        }
        match &self.funcs {
            LagFunctions::Table { .. } => {
                let row = self.row(j).unwrap();
                let probs = self.space.probs().unwrap();
                crate::numeric::compensated_sum(row.iter().zip(probs).map(|(a, p)| p * a * a))
            }
            _ => self.space.expect(|x| self.alpha_at_value(j, x).powi(2)),
        }
    }

    /// `‖ |α_j|^γ ‖_{2,𝒳}`.
    pub fn alpha_holder_norm(&self, j: usize, gamma: f64) -> f64 {
        if j > self.lag {
            return 0.0;
        }
        match &self.funcs {
            LagFunctions::Table { .. } => {
                let row = self.row(j).unwrap();
                let probs = self.space.probs().unwrap();
                crate::numeric::compensated_sum(
                    row.iter().zip(probs).map(|(a, p)| p * a.abs().powf(2.0 * gamma)),
                )
                .sqrt()
            }
            _ => self
                .space
                .expect(|x| self.alpha_at_value(j, x).abs().powf(2.0 * gamma))
                .sqrt(),
        }
    }

    /// The sequence `‖α_j‖_{2,𝒳}` with the tail behaviour of the factorized
    /// coefficients (or a bounded custom tail for lists and tables).
    pub fn projection_norms(&self) -> Result<CoefficientSequence> {
        if let Alphas::Factorized { coeffs, .. } = &self.spec {
            let norms: Vec<f64> = (0..=self.lag).map(|j| self.alpha_norm2(j).sqrt()).collect();
            let period_norms = self.shape_norms();
            let hi = period_norms.iter().cloned().fold(0.0, f64::max);
            let lo = period_norms.iter().cloned().fold(f64::INFINITY, f64::min);
            if hi == lo {
                return coeffs.abs().scaled(hi);
            }
            // bounded between lo·|a_j| and hi·|a_j|: same asymptotic class as |a_j|
            let tail = coeffs.abs().scaled(hi)?;
            let mut prefix = norms;
            prefix.truncate(self.lag + 1);
            return CoefficientSequence::new(prefix, tail.tail_model().clone());
        }
        let norms: Vec<f64> = (0..=self.lag).map(|j| self.alpha_norm2(j).sqrt()).collect();
        if self.tail_bound == 0.0 {
            CoefficientSequence::finite(norms)
        } else {
            let b = self.tail_bound;
            CoefficientSequence::custom(
                norms,
                CustomTail {
                    term: None,
                    l2_tail_bound: Some(Arc::new(move |_| b)),
                },
            )
        }
    }

    /// Shape values on the atoms for factorized specifications over a
    /// discrete space.
    /// `Σ_p c_p h_p(x)` for a factorized model.
    pub(crate) fn shape_combination(&self, c: &[f64], x: f64) -> f64 {
        match &self.funcs {
            LagFunctions::Factorized { shapes, .. } => c.iter().zip(shapes).map(|(cp, h)| cp * h.eval(x)).sum(),
            _ => panic!("shape combination needs a factorized model"),
        }
    }

    pub(crate) fn shapes_on_atoms(&self) -> Option<Vec<Vec<f64>>> {
        match (&self.spec, self.space.is_discrete()) {
            (Alphas::Factorized { shapes, .. }, true) => {
                shapes.iter().map(|s| shape_on_atoms(s, &self.space).ok()).collect()
            }
            _ => None,
        }
    }

    fn shape_norms(&self) -> Vec<f64> {
        match &self.spec {
            Alphas::Factorized { shapes, .. } => shapes
                .iter()
                .map(|s| {
                    if self.space.is_discrete() {
                        let v = shape_on_atoms(s, &self.space).unwrap();
                        let probs = self.space.probs().unwrap();
                        crate::numeric::compensated_sum(v.iter().zip(probs).map(|(a, p)| p * a * a)).sqrt()
                    } else {
                        let f = match s {
                            Shape::Named(n) => named_shape_fn(*n, &self.space),
                            Shape::Values(_) => unreachable!(),
                        };
                        self.space.expect(|x| f.eval(x).powi(2)).sqrt()
                    }
                })
                .collect(),
            _ => Vec::new(),
        }
    }

    /// Whether the factorized coefficients carry an analytic tail model.
    pub fn has_tail_model(&self) -> bool {
        match &self.spec {
            Alphas::Factorized { coeffs, .. } => !matches!(coeffs.tail_model(), TailModel::Custom(_)),
            _ => true,
        }
    }
}

/// Embeds a linear model over a discrete space: `α_j(x_m) = a_j x_m`.
pub fn linear_as_semilinear(model: &CausalLinearModel) -> Result<SemiLinearModel> {
    let points = match model.innovation().points() {
        Some(p) => p.to_vec(),
        None => {
            return Err(LabError::Unsupported {
                operation: "linear_as_semilinear",
                family: "sampler-innovation linear",
            })
        }
    };
    let rows: Vec<Vec<f64>> = model
        .truncated_coeffs()
        .iter()
        .map(|&a| points.iter().map(|&x| a * x).collect())
        .collect();
    let shapes = vec![Shape::Named(NamedShape::Identity)];
    let spec = Alphas::Factorized {
        coeffs: model.coeffs().clone(),
        shapes,
    };
    let sl = SemiLinearModel::from_table(model.innovation().clone(), rows, spec)?;
    Ok(SemiLinearModel {
        tail_bound: model.tail_bound(),
        ..sl
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn four_point() -> InnovationSpace {
        InnovationSpace::discrete(vec![0.0, 1.0, 2.0, 3.0], vec![0.25; 4]).unwrap()
    }

    #[test]
    fn rademacher_embedding_rows() {
        let m = CausalLinearModel::new(
            CoefficientSequence::finite(vec![1.0, -1.0]).unwrap(),
            InnovationSpace::rademacher(),
            None,
        )
        .unwrap();
        let s = linear_as_semilinear(&m).unwrap();
        assert_eq!(s.row(0).unwrap(), &[1.0, -1.0]);
        assert_eq!(s.row(1).unwrap(), &[-1.0, 1.0]);
        let single = CausalLinearModel::new(
            CoefficientSequence::finite(vec![1.0]).unwrap(),
            InnovationSpace::rademacher(),
            None,
        )
        .unwrap();
        assert_eq!(linear_as_semilinear(&single).unwrap().row(0).unwrap(), &[1.0, -1.0]);
    }

    #[test]
    fn embedding_needs_discrete_space() {
        let m = CausalLinearModel::new(
            CoefficientSequence::finite(vec![1.0]).unwrap(),
            InnovationSpace::normal(1.0).unwrap(),
            None,
        )
        .unwrap();
        assert!(matches!(linear_as_semilinear(&m), Err(LabError::Unsupported { .. })));
    }

    #[test]
    fn table_centering_enforced() {
        let r = SemiLinearModel::from_rows(InnovationSpace::rademacher(), vec![vec![1.0, 0.0]]);
        assert!(r.is_err());
        let r = SemiLinearModel::from_rows(InnovationSpace::rademacher(), vec![vec![1.0, -1.0, 0.0]]);
        assert!(r.is_err());
    }

    #[test]
    fn factorized_periodic_shapes() {
        let r1 = Shape::Values(vec![1.0, 1.0, -1.0, -1.0]);
        let r12 = Shape::Values(vec![1.0, -1.0, -1.0, 1.0]);
        let m = SemiLinearModel::new(
            four_point(),
            Alphas::Factorized {
                coeffs: CoefficientSequence::geometric(0.5).unwrap(),
                shapes: vec![r1, r12],
            },
            None,
        )
        .unwrap();
        assert_eq!(m.lag(), 13);
        assert_eq!(m.row(2).unwrap(), &[0.25, 0.25, -0.25, -0.25]);
        assert_eq!(m.row(3).unwrap(), &[0.125, -0.125, -0.125, 0.125]);
        assert!((m.alpha_norm2(3) - 1.0 / 64.0).abs() < 1e-18);
        assert!((m.tail_bound() - 4f64.powi(-14) / 0.75).abs() < 1e-20);
        let norms = m.projection_norms().unwrap();
        assert!((norms.value(5) - 1.0 / 32.0).abs() < 1e-16);
    }

    #[test]
    fn sampler_shapes() {
        let m = SemiLinearModel::new(
            InnovationSpace::normal(1.0).unwrap(),
            Alphas::Factorized {
                coeffs: CoefficientSequence::geometric(0.5).unwrap(),
                shapes: vec![
                    Shape::Named(NamedShape::Identity),
                    Shape::Named(NamedShape::CenteredSquare),
                ],
            },
            Some(10),
        )
        .unwrap();
        assert!((m.alpha_norm2(0) - 1.0).abs() < 1e-10);
        // Var(Z² − 1) = 2
        assert!((m.alpha_norm2(1) - 0.5).abs() < 1e-9);
        assert!((m.alpha_at_value(1, 2.0) - 1.5).abs() < 1e-9);
        let bad = SemiLinearModel::new(
            InnovationSpace::normal(1.0).unwrap(),
            Alphas::Functions(vec![Arc::new(|x: f64| x * x)]),
            None,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn shape_json() {
        let s: Vec<Shape> = serde_json::from_str(r#"["identity", [1, -1], "centered_square"]"#).unwrap();
        assert_eq!(s[0], Shape::Named(NamedShape::Identity));
        assert_eq!(s[1], Shape::Values(vec![1.0, -1.0]));
    }
}
