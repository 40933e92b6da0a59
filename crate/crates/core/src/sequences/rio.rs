use serde::Serialize;

use super::{Classification, Condition, ConditionVerdict, CoefficientSequence, TailModel};
use crate::error::{LabError, Result};
use crate::numeric::{gauss_legendre_16, gl_panel, CompensatedSum};

/// Default quadrature node budget for [`rio_integral`].
pub const DEFAULT_RIO_NODES: usize = 1 << 12;

/// Largest index summed when reporting partial sums of the integral series.
const RIO_GRID_MAX: usize = 1 << 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RioIntegral {
    pub value: f64,
    /// Estimated mass of the panels not evaluated (geometric extrapolation).
    pub remainder: f64,
    pub nodes_used: usize,
    pub classification: Classification,
}

/// `∫_0^{alpha} Q(u)² du` by 16-point Gauss–Legendre on the dyadic panels
/// `[alpha 2^{-j-1}, alpha 2^{-j}]`, `j = 0, 1, …`, until the panel masses
/// become negligible or the node budget runs out.
///
/// The integral is classified `Diverges` when panel masses stop shrinking
/// (or become non-finite), `Unknown` when the budget ends with a
/// non-negligible extrapolated remainder.
pub fn rio_integral<Q: Fn(f64) -> f64>(alpha: f64, quantile: Q, nodes: usize) -> Result<RioIntegral> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(LabError::param("alpha", format!("must lie in [0,1], got {alpha}")));
    }
    if nodes < 32 {
        return Err(LabError::param("nodes", "budget must allow at least two panels"));
    }
    if alpha == 0.0 {
        return Ok(RioIntegral {
            value: 0.0,
            remainder: 0.0,
            nodes_used: 0,
            classification: Classification::Converges,
        });
    }
    let rule = gauss_legendre_16();
    let sq = |u: f64| {
        let q = quantile(u);
        q * q
    };
    let mut acc = CompensatedSum::new();
    let mut hi = alpha;
    let mut used = 0;
    let mut prev: Option<f64> = None;
    let mut ratio = 0.0;
    let mut growing = 0usize;
    while used + 16 <= nodes {
        let lo = 0.5 * hi;
        let v = gl_panel(rule, lo, hi, &sq);
        used += 16;
        if !v.is_finite() {
            return Ok(diverged(used));
        }
        acc.add(v);
        if let Some(p) = prev {
            if p > 0.0 {
                ratio = v / p;
                growing = if ratio >= 1.0 { growing + 1 } else { 0 };
            }
        }
        // a log-type singularity keeps panel masses constant
        if growing >= 8 {
            return Ok(diverged(used));
        }
        prev = Some(v);
        if v <= 1e-17 * acc.value() || lo < f64::MIN_POSITIVE * 16.0 {
            return Ok(RioIntegral {
                value: acc.value(),
                remainder: v,
                nodes_used: used,
                classification: Classification::Converges,
            });
        }
        hi = lo;
    }
    let last = prev.unwrap_or(0.0);
    let (remainder, classification) = if ratio < 1.0 {
        let r = last * ratio / (1.0 - ratio);
        let class = if r <= 1e-10 * acc.value() {
            Classification::Converges
        } else {
            Classification::Unknown
        };
        (r, class)
    } else {
        (f64::INFINITY, Classification::Diverges)
    };
    Ok(RioIntegral {
        value: acc.value() + if remainder.is_finite() { remainder } else { 0.0 },
        remainder,
        nodes_used: used,
        classification,
    })
}

fn diverged(used: usize) -> RioIntegral {
    RioIntegral {
        value: f64::INFINITY,
        remainder: f64::INFINITY,
        nodes_used: used,
        classification: Classification::Diverges,
    }
}

/// Decides `Σ_k ∫_0^{α(k)} Q² < ∞` for mixing coefficients `α(k)` given as a
/// sequence.
///
/// Finitely supported `α` with every integral finite is certified
/// convergent; any divergent integral gives `Diverges`. Infinite `α`
/// sequences are `Unknown`, since the quantile function carries no tail
/// model.
pub fn check_rio<Q: Fn(f64) -> f64>(
    alpha: &CoefficientSequence,
    quantile: Q,
    nodes: usize,
) -> Result<ConditionVerdict> {
    let finite = matches!(alpha.tail_model(), TailModel::FiniteSupport);
    let len = if finite {
        alpha.prefix().len()
    } else {
        RIO_GRID_MAX + 1
    };
    let mut sums = Vec::new();
    let mut acc = CompensatedSum::new();
    let mut class = if finite {
        Classification::Converges
    } else {
        Classification::Unknown
    };
    let grid = super::PARTIAL_SUM_GRID;
    for k in 0..len {
        let a = match alpha.term(k) {
            Some(a) => a,
            None => break,
        };
        let r = rio_integral(a, &quantile, nodes)?;
        match r.classification {
            Classification::Diverges => {
                class = Classification::Diverges;
                break;
            }
            Classification::Unknown if finite => class = Classification::Unknown,
            _ => {}
        }
        acc.add(r.value);
        if grid.contains(&k) {
            sums.push((k, acc.value()));
        }
    }
    if finite && class != Classification::Diverges {
        sums.push((len.saturating_sub(1), acc.value()));
    }
    Ok(ConditionVerdict {
        condition: Condition::RioSum,
        classification: class,
        partial_sums: sums,
        certified: class != Classification::Unknown,
    })
}
