use std::sync::Arc;

use super::space::InnovationSpace;
use crate::error::{LabError, Result};
use crate::sequences::{CoefficientSequence, TailModel};

/// Relative size of the neglected ℓ² tail used to pick a default lag.
pub const DEFAULT_TAIL_FRACTION: f64 = 1e-8;

/// Largest lag searched when choosing a default truncation.
pub const MAX_DEFAULT_LAG: usize = 1 << 26;

/// Coefficients are cached in memory up to this many terms.
const CACHE_LIMIT: usize = 1 << 22;

/// `X_i = Σ_{j=0}^{L} a_j ε_{i-j}` with iid centered innovations.
#[derive(Debug, Clone)]
pub struct CausalLinearModel {
    coeffs: CoefficientSequence,
    innovation: InnovationSpace,
    lag: usize,
    tail_bound: f64,
    cache: Option<Arc<Vec<f64>>>,
}

/// Smallest `L` with `Σ_{j>L} u_j² ≤ fraction · Σ_j u_j²`.
pub(crate) fn default_lag(seq: &CoefficientSequence, fraction: f64) -> Result<usize> {
    if let TailModel::FiniteSupport = seq.tail_model() {
        let last = seq.prefix().iter().rposition(|&x| x != 0.0).unwrap_or(0);
        return Ok(last);
    }
    let total = seq.tail_l2(0).upper;
    if !total.is_finite() {
        return Err(LabError::InvalidModel(
            "coefficients are not square-summable (or carry no certified ℓ² bound); \
             supply an explicit lag with a bounded custom tail"
                .into(),
        ));
    }
    if total == 0.0 {
        return Ok(0);
    }
    let target = fraction * total;
    let ok = |l: usize| seq.tail_l2(l + 1).upper <= target;
    let mut hi = 1usize;
    while !ok(hi) {
        hi *= 2;
        if hi > MAX_DEFAULT_LAG {
            return Err(LabError::Budget(format!(
                "default lag would exceed {MAX_DEFAULT_LAG}; set `lag` explicitly"
            )));
        }
    }
    let mut lo = 0usize;
    if ok(0) {
        return Ok(0);
    }
    // invariant: !ok(lo), ok(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

impl CausalLinearModel {
    pub fn new(coeffs: CoefficientSequence, innovation: InnovationSpace, lag: Option<usize>) -> Result<Self> {
        let var = innovation.variance();
        if !(var > 0.0) {
            return Err(LabError::InvalidModel("innovation variance must be > 0".into()));
        }
        if innovation.mean().abs() > 1e-12 * var.sqrt().max(1.0) {
            return Err(LabError::InvalidModel(format!(
                "innovations must be centered, mean is {}",
                innovation.mean()
            )));
        }
        let lag = match lag {
            Some(l) => l,
            None => default_lag(&coeffs, DEFAULT_TAIL_FRACTION)?,
        };
        let tail_bound = coeffs.tail_l2(lag + 1).upper;
        if !tail_bound.is_finite() {
            return Err(LabError::InvalidModel(format!(
                "no certified bound on Σ_{{j>{lag}}} a_j²; coefficients must be square-summable"
            )));
        }
        let cache = if lag < CACHE_LIMIT {
            Some(Arc::new(coeffs.materialize(lag + 1)?))
        } else {
            // fail early on unknown terms without storing them
            coeffs.materialize(1)?;
            if coeffs.term(lag).is_none() {
                return Err(LabError::InvalidModel(format!("coefficient {lag} is unknown")));
            }
            None
        };
        Ok(Self {
            coeffs,
            innovation,
            lag,
            tail_bound,
            cache,
        })
    }

    pub fn coeffs(&self) -> &CoefficientSequence {
        &self.coeffs
    }

    pub fn innovation(&self) -> &InnovationSpace {
        &self.innovation
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    /// Certified upper bound on `Σ_{j>L} a_j²`.
    pub fn coefficient_tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// Certified upper bound on `Σ_{j>L} ‖a_j ε‖²`.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound * self.innovation.variance()
    }

    /// `a_j` for `j ≤ L`, zero beyond.
    #[inline]
    pub fn coef(&self, j: usize) -> f64 {
        if j > self.lag {
            return 0.0;
        }
        match &self.cache {
            Some(c) => c[j],
            None => self.coeffs.value(j),
        }
    }

    /// `a_0..=a_L`, materialized.
    pub fn truncated_coeffs(&self) -> Vec<f64> {
        match &self.cache {
            Some(c) => c.as_ref().clone(),
            None => (0..=self.lag).map(|j| self.coeffs.value(j)).collect(),
        }
    }

    /// `‖P_0(X_j)‖₂ = |a_j| σ_ε` as a sequence.
    pub fn projection_norms(&self) -> Result<CoefficientSequence> {
        self.coeffs.abs().scaled(self.innovation.variance().sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_lag_geometric_half() {
        // 4^{-(L+1)} ≤ 1e-8 first holds at L + 1 = 14
        let s = CoefficientSequence::geometric(0.5).unwrap();
        assert_eq!(default_lag(&s, 1e-8).unwrap(), 13);
    }

    #[test]
    fn default_lag_finite_support() {
        let s = CoefficientSequence::finite(vec![1.0, -1.0, 0.0]).unwrap();
        assert_eq!(default_lag(&s, 1e-8).unwrap(), 1);
    }

    #[test]
    fn rejects_non_square_summable() {
        let s = CoefficientSequence::power_law(0.5, 1.0).unwrap();
        assert!(CausalLinearModel::new(s.clone(), InnovationSpace::rademacher(), None).is_err());
        assert!(CausalLinearModel::new(s, InnovationSpace::rademacher(), Some(10)).is_err());
    }

    #[test]
    fn rejects_uncentered_innovation() {
        let sp = InnovationSpace::discrete(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let s = CoefficientSequence::finite(vec![1.0]).unwrap();
        assert!(CausalLinearModel::new(s, sp, None).is_err());
    }

    #[test]
    fn coefficients_beyond_lag_vanish() {
        let s = CoefficientSequence::geometric(0.5).unwrap();
        let m = CausalLinearModel::new(s, InnovationSpace::rademacher(), Some(5)).unwrap();
        assert_eq!(m.coef(5), 1.0 / 32.0);
        assert_eq!(m.coef(6), 0.0);
        assert!((m.tail_bound() - 4f64.powi(-6) / 0.75).abs() < 1e-15);
    }
}
