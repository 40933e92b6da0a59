use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::semilinear::{AlphaFn, SemiLinearModel};
use super::space::InnovationSpace;
use super::{Coord, Coordinates};
use crate::error::{LabError, Result};
use crate::numeric::CompensatedSum;
use crate::simulate::streams::{domain, stream, StreamId};

/// Number of draws used when the centering constant cannot be enumerated.
pub const CENTERING_DRAWS: usize = 1_000_000;

/// Exact enumeration of `Y_0` is attempted up to this many support points.
const ENUMERATION_LIMIT: usize = 1 << 20;

/// A γ-Hölder function `f` with constant `C`: `|f(x) − f(y)| ≤ C |x − y|^γ`.
#[derive(Clone)]
pub enum HolderFn {
    /// `|y|^γ`, constant 1.
    AbsPower { gamma: f64 },
    /// `sign(y) (s tanh(|y|/s))^γ`, constant `2^{1−γ}`.
    SoftClip { gamma: f64, scale: f64 },
    Custom { f: AlphaFn, gamma: f64, constant: f64 },
}

impl fmt::Debug for HolderFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HolderFn::AbsPower { gamma } => write!(f, "AbsPower(γ={gamma})"),
            HolderFn::SoftClip { gamma, scale } => write!(f, "SoftClip(γ={gamma}, s={scale})"),
            HolderFn::Custom { gamma, constant, .. } => write!(f, "Custom(γ={gamma}, C={constant})"),
        }
    }
}

impl HolderFn {
    pub fn gamma(&self) -> f64 {
        match *self {
            HolderFn::AbsPower { gamma } | HolderFn::SoftClip { gamma, .. } | HolderFn::Custom { gamma, .. } => {
                gamma
            }
        }
    }

    pub fn constant(&self) -> f64 {
        match *self {
            HolderFn::AbsPower { .. } => 1.0,
            HolderFn::SoftClip { gamma, .. } => 2f64.powf(1.0 - gamma),
            HolderFn::Custom { constant, .. } => constant,
        }
    }

    #[inline]
    pub fn eval(&self, y: f64) -> f64 {
        match self {
            HolderFn::AbsPower { gamma } => y.abs().powf(*gamma),
            HolderFn::SoftClip { gamma, scale } => {
                let g = (scale * (y.abs() / scale).tanh()).powf(*gamma);
                if y < 0.0 {
                    -g
                } else {
                    g
                }
            }
            HolderFn::Custom { f, .. } => f(y),
        }
    }

    fn validate(&self) -> Result<()> {
        let gamma = self.gamma();
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(LabError::param("gamma", format!("must lie in (0,1], got {gamma}")));
        }
        if let HolderFn::SoftClip { scale, .. } = *self {
            if !(scale > 0.0) || !scale.is_finite() {
                return Err(LabError::param("scale", "must be finite and > 0"));
            }
        }
        let c = self.constant();
        if !(c > 0.0) || !c.is_finite() {
            return Err(LabError::param("constant", "must be finite and > 0"));
        }
        if let Some((x, y)) = holder_violation(self) {
            return Err(LabError::InvalidModel(format!(
                "f is not {gamma}-Hölder with constant {c}: fails at ({x}, {y})"
            )));
        }
        Ok(())
    }
}

/// First grid pair violating the Hölder bound, on `[-8, 8]` with step 1/16.
pub fn holder_violation(f: &HolderFn) -> Option<(f64, f64)> {
    let (gamma, c) = (f.gamma(), f.constant());
    let grid: Vec<f64> = (0..=256).map(|i| -8.0 + i as f64 / 16.0).collect();
    let vals: Vec<f64> = grid.iter().map(|&x| f.eval(x)).collect();
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            let lhs = (vals[i] - vals[j]).abs();
            let rhs = c * (grid[i] - grid[j]).abs().powf(gamma);
            if lhs > rhs * (1.0 + 1e-12) + 1e-15 {
                return Some((grid[i], grid[j]));
            }
        }
    }
    None
}

/// How `E f(Y_0)` was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Centering {
    pub value: f64,
    pub se: f64,
    pub exact: bool,
}

/// Monte Carlo budget: outer draws of the past and inner draws of the
/// future per half-sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimationBudget {
    pub outer: usize,
    pub inner: usize,
}

impl Default for EstimationBudget {
    fn default() -> Self {
        Self {
            outer: 4000,
            inner: 32,
        }
    }
}

/// Estimate of `‖P_0(·)‖²₂` from a nested Monte Carlo with two independent
/// inner halves (the product of the halves is unbiased for the square).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectionEstimate {
    pub lag: usize,
    pub norm2: f64,
    pub se2: f64,
    pub norm: f64,
    /// Delta-method standard error of `norm`, capped by `sqrt(se2)`.
    pub norm_se: f64,
    pub outer: usize,
    pub inner: usize,
    pub low_precision: bool,
}

impl ProjectionEstimate {
    fn from_samples(lag: usize, samples: &[f64], budget: EstimationBudget) -> Self {
        let r = samples.len() as f64;
        let mean: f64 = samples.iter().copied().collect::<CompensatedSum>().value() / r;
        let var = samples.iter().map(|x| (x - mean).powi(2)).collect::<CompensatedSum>().value() / (r - 1.0);
        let se2 = (var / r).sqrt();
        let norm = mean.max(0.0).sqrt();
        let cap = se2.sqrt();
        let norm_se = if norm > 0.0 { (se2 / (2.0 * norm)).min(cap) } else { cap };
        Self {
            lag,
            norm2: mean,
            se2,
            norm,
            norm_se,
            outer: samples.len(),
            inner: budget.inner,
            low_precision: se2 > 0.5 * mean.abs(),
        }
    }

    fn exact_zero(lag: usize) -> Self {
        Self {
            lag,
            norm2: 0.0,
            se2: 0.0,
            norm: 0.0,
            norm_se: 0.0,
            outer: 0,
            inner: 0,
            low_precision: false,
        }
    }
}

/// `X_k = f(Y_k) − E f(Y_k)` over a semi-linear base `Y`.
#[derive(Clone)]
pub struct HolderModel {
    base: SemiLinearModel,
    f: HolderFn,
    centering: Centering,
}

impl fmt::Debug for HolderModel {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        fm.debug_struct("HolderModel")
            .field("base", &self.base)
            .field("f", &self.f)
            .field("centering", &self.centering)
            .finish()
    }
}

impl HolderModel {
    /// Builds the model and freezes the centering constant: exact when the
    /// law of `Y_0` has at most 2^20 support points, otherwise estimated
    /// from `draws` samples of the stream family `seed`.
    pub fn new(base: SemiLinearModel, f: HolderFn, draws: usize, seed: u64) -> Result<Self> {
        f.validate()?;
        let gamma = f.gamma();
        let series: f64 = (0..=base.lag()).map(|j| base.alpha_holder_norm(j, gamma)).sum();
        if !series.is_finite() {
            return Err(LabError::InvalidModel("Σ ‖|α_j|^γ‖₂ is not finite".into()));
        }
        let centering = match enumerate_base(&base) {
            Some(law) => Centering {
                value: law
                    .iter()
                    .map(|&(y, p)| p * f.eval(y))
                    .collect::<CompensatedSum>()
                    .value(),
                se: 0.0,
                exact: true,
            },
            None => {
                if draws < 2 {
                    return Err(LabError::param("centering_draws", "need at least 2 draws"));
                }
                let base_ref = &base;
                let f_ref = &f;
                const CHUNK: usize = 10_000;
                let chunks = draws.div_ceil(CHUNK);
                let parts: Vec<(CompensatedSum, CompensatedSum, usize)> = (0..chunks)
                    .into_par_iter()
                    .map(|c| {
                        let mut rng = stream(seed, domain::CENTERING, c as u64).rng();
                        let count = CHUNK.min(draws - c * CHUNK);
                        let mut s = CompensatedSum::new();
                        let mut s2 = CompensatedSum::new();
                        let mut w = Vec::with_capacity(base_ref.lag() + 1);
                        for _ in 0..count {
                            w.clear();
                            for _ in 0..=base_ref.lag() {
                                w.push(draw_coord(base_ref.space(), &mut rng));
                            }
                            let y: f64 = (0..=base_ref.lag()).map(|j| base_ref.alpha_coord(j, w[j])).sum();
                            let v = f_ref.eval(y);
                            s.add(v);
                            s2.add(v * v);
                        }
                        (s, s2, count)
                    })
                    .collect();
                let mut s = CompensatedSum::new();
                let mut s2 = CompensatedSum::new();
                for (a, b, _) in &parts {
                    s.merge(a);
                    s2.merge(b);
                }
                let r = draws as f64;
                let mean = s.value() / r;
                let var = (s2.value() - r * mean * mean) / (r - 1.0);
                Centering {
                    value: mean,
                    se: (var.max(0.0) / r).sqrt(),
                    exact: false,
                }
            }
        };
        Ok(Self { base, f, centering })
    }

    pub fn base(&self) -> &SemiLinearModel {
        &self.base
    }

    pub fn function(&self) -> &HolderFn {
        &self.f
    }

    pub fn centering(&self) -> Centering {
        self.centering
    }

    pub fn lag(&self) -> usize {
        self.base.lag()
    }

    /// `2C ‖|α_i|^γ‖_{2,𝒳}`, the bound on `‖P_0(X_i)‖₂`.
    pub fn projection_bound(&self, i: usize) -> f64 {
        2.0 * self.f.constant() * self.base.alpha_holder_norm(i, self.f.gamma())
    }

    /// `E_{x'} f(rest + α_j(x'))`: exact on discrete spaces, one fresh draw
    /// otherwise.
    fn swap_expectation<R: rand::Rng + ?Sized>(&self, j: usize, rest: f64, rng: &mut R) -> f64 {
        match self.base.space() {
            InnovationSpace::Discrete { probs, .. } => probs
                .iter()
                .enumerate()
                .map(|(m, p)| p * self.f.eval(rest + self.base.alpha_coord(j, Coord::Index(m as u32))))
                .sum(),
            space => {
                let x = space.sample_value(rng);
                self.f.eval(rest + self.base.alpha_coord(j, Coord::Value(x)))
            }
        }
    }

    /// One inner average of `G(ω_0) − E_{x'} G(x')` with `G = Σ_{k∈lags} f(Y_k)`,
    /// where `w` holds `ω_{-L}..ω_L` at positions `0..=2L` and the futures
    /// `ω_1..` are redrawn `inner` times.
    fn inner_difference<R: rand::Rng + ?Sized>(
        &self,
        w: &mut [Coord],
        lags: std::ops::RangeInclusive<usize>,
        inner: usize,
        rng: &mut R,
    ) -> (f64, f64) {
        let l = self.lag();
        let future_len = *lags.end();
        let mut s = CompensatedSum::new();
        let mut s2 = CompensatedSum::new();
        for _ in 0..inner {
            for slot in &mut w[l + 1..=l + future_len] {
                *slot = draw_coord(self.base.space(), rng);
            }
            let mut diff = 0.0;
            for k in lags.clone() {
                // Y_k = Σ_j α_j(ω_{k-j}); ω_0 enters through j = k
                let mut rest = 0.0;
                for j in 0..=l {
                    if j != k {
                        rest += self.base.alpha_coord(j, w[k + l - j]);
                    }
                }
                let own = self.f.eval(rest + self.base.alpha_coord(k, w[l]));
                diff += own - self.swap_expectation(k, rest, rng);
            }
            s.add(diff);
            s2.add(diff * diff);
        }
        let r = inner as f64;
        let mean = s.value() / r;
        let var = if inner > 1 {
            ((s2.value() - r * mean * mean) / (r - 1.0)).max(0.0)
        } else {
            f64::NAN
        };
        (mean, (var / r).sqrt())
    }

    fn nested_norm(&self, lags: std::ops::RangeInclusive<usize>, label: usize, budget: EstimationBudget, seed: u64) -> Result<ProjectionEstimate> {
        if budget.outer < 2 || budget.inner < 1 {
            return Err(LabError::param("budget", "need outer ≥ 2 and inner ≥ 1"));
        }
        let l = self.lag();
        let samples: Vec<f64> = (0..budget.outer as u64)
            .into_par_iter()
            .map(|r| {
                let id: StreamId = stream(seed, domain::PROJECTION ^ label as u64, r);
                let mut rng = id.rng();
                let mut w = vec![Coord::Index(0); 2 * l + 1];
                for c in w.iter_mut().take(l + 1) {
                    *c = draw_coord(self.base.space(), &mut rng);
                }
                let (a, _) = self.inner_difference(&mut w, lags.clone(), budget.inner, &mut rng);
                let (b, _) = self.inner_difference(&mut w, lags.clone(), budget.inner, &mut rng);
                a * b
            })
            .collect();
        Ok(ProjectionEstimate::from_samples(label, &samples, budget))
    }

    /// Estimate of `‖P_0(X_i)‖²₂`.
    ///
    /// Coordinates `ω_1..ω_i` are integrated by inner Monte Carlo and `ω_0` is
    /// swapped against an independent copy; lags beyond `L` give exactly 0.
    pub fn p0_norm(&self, i: usize, budget: EstimationBudget, seed: u64) -> Result<ProjectionEstimate> {
        if i > self.lag() {
            return Ok(ProjectionEstimate::exact_zero(i));
        }
        self.nested_norm(i..=i, i, budget, seed)
    }

    /// Estimate of `‖D‖²₂` with `D = Σ_{k=0}^{L} P_0(X_k)`.
    pub fn martingale_norm(&self, budget: EstimationBudget, seed: u64) -> Result<ProjectionEstimate> {
        let l = self.lag();
        let mut est = self.nested_norm(0..=l, usize::MAX >> 1, budget, seed ^ domain::SIGMA)?;
        est.lag = l;
        Ok(est)
    }

    /// `P_0(X_i)` at a given past `ω_0, ω_{-1}, …` (value and standard error).
    pub fn p0_at(&self, i: usize, past: &Coordinates, inner: usize, seed: u64) -> Result<(f64, f64)> {
        let l = self.lag();
        if i > l {
            return Ok((0.0, 0.0));
        }
        let required = l + 1;
        if past.len() < required {
            return Err(LabError::InsufficientPast {
                required,
                supplied: past.len(),
            });
        }
        let mut w = vec![Coord::Index(0); 2 * l + 1];
        for s in 0..=l {
            w[l - s] = self.base.coord_of(past.get(s))?;
        }
        let mut rng = stream(seed, domain::PROJECTION, i as u64).rng();
        Ok(self.inner_difference(&mut w, i..=i, inner.max(2), &mut rng))
    }

    /// Monte Carlo `E(S_n | F_0)` at a given past.
    pub fn conditional_expectation_s(&self, n: usize, past: &Coordinates, inner: usize, seed: u64) -> Result<(f64, f64)> {
        let l = self.lag();
        if l == 0 {
            return Ok((0.0, 0.0));
        }
        if past.len() < l {
            return Err(LabError::InsufficientPast {
                required: l,
                supplied: past.len(),
            });
        }
        let horizon = n.min(l);
        let mut w = vec![Coord::Index(0); l + horizon];
        // w[pos] = ω_{pos - l + 1}
        for s in 0..l {
            w[l - 1 - s] = self.base.coord_of(past.get(s))?;
        }
        let mut rng = stream(seed, domain::FUTURES, n as u64).rng();
        let mut s = CompensatedSum::new();
        let mut s2 = CompensatedSum::new();
        let reps = inner.max(2);
        for _ in 0..reps {
            for c in w.iter_mut().skip(l) {
                *c = draw_coord(self.base.space(), &mut rng);
            }
            let mut total = 0.0;
            for k in 1..=horizon {
                let y: f64 = (0..=l)
                    .filter(|&j| k + l > j)
                    .map(|j| self.base.alpha_coord(j, w[k + l - 1 - j]))
                    .sum();
                total += self.f.eval(y) - self.centering.value;
            }
            s.add(total);
            s2.add(total * total);
        }
        let r = reps as f64;
        let mean = s.value() / r;
        let var = ((s2.value() - r * mean * mean) / (r - 1.0)).max(0.0);
        Ok((mean, (var / r).sqrt()))
    }
}

#[inline]
pub(crate) fn draw_coord<R: rand::Rng + ?Sized>(space: &InnovationSpace, rng: &mut R) -> Coord {
    if space.is_discrete() {
        Coord::Index(space.sample_index(rng))
    } else {
        Coord::Value(space.sample_value(rng))
    }
}

/// Law of `Y_0 = Σ_j α_j(ω_{-j})` as `(value, probability)` pairs, when the
/// base is discrete and the support stays below the enumeration limit.
fn enumerate_base(base: &SemiLinearModel) -> Option<Vec<(f64, f64)>> {
    let probs = base.space().probs()?;
    let mut law = vec![(0.0f64, 1.0f64)];
    for j in 0..=base.lag() {
        let row = base.row(j)?;
        if law.len().saturating_mul(row.len()) > ENUMERATION_LIMIT {
            return None;
        }
        let mut next = Vec::with_capacity(law.len() * row.len());
        for &(y, p) in &law {
            for (a, q) in row.iter().zip(probs) {
                if *q > 0.0 {
                    next.push((y + a, p * q));
                }
            }
        }
        next.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(next.len());
        for (y, p) in next {
            match merged.last_mut() {
                Some(last) if last.0 == y => last.1 += p,
                _ => merged.push((y, p)),
            }
        }
        law = merged;
    }
    Some(law)
}

/// Convenience constructor for custom Hölder functions.
pub fn custom_holder(f: impl Fn(f64) -> f64 + Send + Sync + 'static, gamma: f64, constant: f64) -> HolderFn {
    HolderFn::Custom {
        f: Arc::new(f),
        gamma,
        constant,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::semilinear::{Alphas, NamedShape, Shape};
    use crate::sequences::CoefficientSequence;

    fn geometric_base(rho: f64) -> SemiLinearModel {
        SemiLinearModel::new(
            InnovationSpace::rademacher(),
            Alphas::Factorized {
                coeffs: CoefficientSequence::geometric(rho).unwrap(),
                shapes: vec![Shape::Named(NamedShape::Identity)],
            },
            None,
        )
        .unwrap()
    }

    #[test]
    fn builtin_functions_are_holder() {
        for f in [
            HolderFn::AbsPower { gamma: 1.0 },
            HolderFn::AbsPower { gamma: 0.5 },
            HolderFn::SoftClip { gamma: 1.0, scale: 2.0 },
            HolderFn::SoftClip { gamma: 0.6, scale: 1.0 },
        ] {
            assert!(holder_violation(&f).is_none(), "{f:?}");
        }
        let bad = custom_holder(|x| x * x, 1.0, 1.0);
        assert!(holder_violation(&bad).is_some());
        assert!(HolderModel::new(geometric_base(0.5), bad, 10, 0).is_err());
    }

    #[test]
    fn exact_centering_single_lag() {
        // Y = ±1 ⇒ E|Y| = 1
        let base = SemiLinearModel::from_rows(InnovationSpace::rademacher(), vec![vec![1.0, -1.0]]).unwrap();
        let m = HolderModel::new(base, HolderFn::AbsPower { gamma: 1.0 }, 10, 0).unwrap();
        assert_eq!(m.centering().value, 1.0);
        assert!(m.centering().exact);
    }

    #[test]
    fn centering_enumeration_matches_brute_force() {
        // oracle: brute-force over all 2^3 sign patterns of ±1 ± 1/2 ± 1/4
        let base = SemiLinearModel::new(
            InnovationSpace::rademacher(),
            Alphas::Factorized {
                coeffs: CoefficientSequence::geometric(0.5).unwrap(),
                shapes: vec![Shape::Named(NamedShape::Identity)],
            },
            Some(2),
        )
        .unwrap();
        let mut brute = 0.0;
        for mask in 0..8u32 {
            let y: f64 = (0..3)
                .map(|j| if mask >> j & 1 == 1 { 0.5f64.powi(j) } else { -0.5f64.powi(j) })
                .sum();
            brute += y.abs() / 8.0;
        }
        let m = HolderModel::new(base, HolderFn::AbsPower { gamma: 1.0 }, 10, 0).unwrap();
        assert!((m.centering().value - brute).abs() < 1e-15);
    }

    #[test]
    fn mc_centering_for_sampler_base() {
        let base = SemiLinearModel::new(
            InnovationSpace::normal(1.0).unwrap(),
            Alphas::Factorized {
                coeffs: CoefficientSequence::finite(vec![1.0]).unwrap(),
                shapes: vec![Shape::Named(NamedShape::Identity)],
            },
            None,
        )
        .unwrap();
        let m = HolderModel::new(base, HolderFn::AbsPower { gamma: 1.0 }, 200_000, 11).unwrap();
        let c = m.centering();
        assert!(!c.exact);
        // E|Z| = sqrt(2/π)
        let target = (2.0 / std::f64::consts::PI).sqrt();
        assert!((c.value - target).abs() < 4.0 * c.se, "{} ± {}", c.value, c.se);
    }

    #[test]
    fn projection_lag_zero_single_coordinate() {
        // X_0 = |ε| − 1 = 0 for Rademacher: projection vanishes
        let base = SemiLinearModel::from_rows(InnovationSpace::rademacher(), vec![vec![1.0, -1.0]]).unwrap();
        let m = HolderModel::new(base, HolderFn::AbsPower { gamma: 1.0 }, 10, 0).unwrap();
        let e = m.p0_norm(0, EstimationBudget { outer: 100, inner: 4 }, 1).unwrap();
        assert_eq!(e.norm2, 0.0);
        // identity-like f: P_0(X_0) = ε, norm 1
        let base = SemiLinearModel::from_rows(InnovationSpace::rademacher(), vec![vec![1.0, -1.0]]).unwrap();
        let soft = HolderModel::new(base, HolderFn::SoftClip { gamma: 1.0, scale: 1e6 }, 10, 0).unwrap();
        let e = soft.p0_norm(0, EstimationBudget { outer: 100, inner: 4 }, 1).unwrap();
        assert!((e.norm2 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn projection_obeys_holder_bound() {
        let m = HolderModel::new(geometric_base(0.5), HolderFn::AbsPower { gamma: 1.0 }, 10, 0).unwrap();
        for i in [0usize, 1, 3, 8] {
            let e = m.p0_norm(i, EstimationBudget { outer: 400, inner: 8 }, 5).unwrap();
            assert!(e.norm <= m.projection_bound(i) + 3.0 * e.norm_se, "i={i}: {e:?}");
        }
        assert_eq!(m.p0_norm(40, EstimationBudget::default(), 5).unwrap().norm2, 0.0);
    }

    #[test]
    fn p0_at_requires_past() {
        let m = HolderModel::new(geometric_base(0.5), HolderFn::AbsPower { gamma: 1.0 }, 10, 0).unwrap();
        let short = Coordinates::Indices(vec![0; 3]);
        assert!(matches!(m.p0_at(1, &short, 8, 0), Err(LabError::InsufficientPast { .. })));
        let past = Coordinates::Indices(vec![0; m.lag() + 1]);
        let (v, se) = m.p0_at(0, &past, 16, 0).unwrap();
        assert!(v.is_finite() && se.is_finite());
    }
}
