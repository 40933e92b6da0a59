//! Coefficient sequences with analytic tail models, and exact decisions of
//! the summability conditions built from them.
//!
//! A sequence is a finite prefix `u_0..u_M` followed by a tail model whose
//! closed form is evaluated at the global index `i` (the prefix overrides
//! the formula where it is defined). Convergence is decided from the tail
//! model only; raw truncated sums never produce a verdict.

mod rio;
mod tail;
mod verdict;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub use rio::{check_rio, rio_integral, RioIntegral, DEFAULT_RIO_NODES};
pub use tail::TailSum;
pub use verdict::{
    check_gl, check_h, check_mw, lemma_series_lhs, Classification, Condition, ConditionVerdict,
    VerdictRow, PARTIAL_SUM_GRID,
};

/// Index-to-value function used by custom sequences.
pub type TermFn = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// Custom tail: optional term formula and an optional certified bound
/// `T(k) ≥ Σ_{i≥k} u_i²` valid for `k` past the prefix.
#[derive(Clone, Default)]
pub struct CustomTail {
    pub term: Option<TermFn>,
    pub l2_tail_bound: Option<TermFn>,
}

impl fmt::Debug for CustomTail {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomTail")
            .field("term", &self.term.as_ref().map(|_| "<fn>"))
            .field("l2_tail_bound", &self.l2_tail_bound.as_ref().map(|_| "<fn>"))
            .finish()
    }
}

/// Closed-form description of the terms beyond the prefix.
#[derive(Debug, Clone)]
pub enum TailModel {
    /// All terms past the prefix are exactly zero.
    FiniteSupport,
    /// `u_i = scale · ratio^i`.
    Geometric { ratio: f64, scale: f64 },
    /// `u_i = scale · (i+1)^{-exponent}`.
    PowerLaw { exponent: f64, scale: f64 },
    /// `u_{2^k} = scale · 2^{-k/2} k^{-exponent}` for `k ≥ 1`, zero elsewhere.
    DyadicSpikes { exponent: f64, scale: f64 },
    /// `u_i = scale · (i+2)^{-exponent} · ln(i+2)^{-log_exponent}`.
    PowerLog {
        exponent: f64,
        log_exponent: f64,
        scale: f64,
    },
    Custom(CustomTail),
}

impl TailModel {
    pub fn kind(&self) -> &'static str {
        match self {
            TailModel::FiniteSupport => "finite_support",
            TailModel::Geometric { .. } => "geometric",
            TailModel::PowerLaw { .. } => "power_law",
            TailModel::DyadicSpikes { .. } => "dyadic_spikes",
            TailModel::PowerLog { .. } => "power_log",
            TailModel::Custom(_) => "custom",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            TailModel::Geometric { ratio, scale } => {
                if !(ratio > 0.0 && ratio < 1.0) {
                    return Err(LabError::param("ratio", format!("must lie in (0,1), got {ratio}")));
                }
                if !scale.is_finite() {
                    return Err(LabError::param("scale", "must be finite"));
                }
            }
            TailModel::PowerLaw { exponent, scale } => {
                if !(exponent > 0.0) || !exponent.is_finite() {
                    return Err(LabError::param("exponent", format!("must be > 0, got {exponent}")));
                }
                if !(scale >= 0.0) || !scale.is_finite() {
                    return Err(LabError::param("scale", format!("must be ≥ 0, got {scale}")));
                }
            }
            TailModel::DyadicSpikes { exponent, scale } => {
                if !(exponent > 0.5 && exponent < 1.0) {
                    return Err(LabError::param(
                        "exponent",
                        format!("dyadic spikes need b in (1/2, 1), got {exponent}"),
                    ));
                }
                if !(scale >= 0.0) || !scale.is_finite() {
                    return Err(LabError::param("scale", format!("must be ≥ 0, got {scale}")));
                }
            }
            TailModel::PowerLog {
                exponent,
                log_exponent,
                scale,
            } => {
                if !(exponent > 0.0) || !exponent.is_finite() {
                    return Err(LabError::param("exponent", format!("must be > 0, got {exponent}")));
                }
                if !(log_exponent >= 0.0) || !log_exponent.is_finite() {
                    return Err(LabError::param(
                        "log_exponent",
                        format!("must be ≥ 0, got {log_exponent}"),
                    ));
                }
                if !(scale >= 0.0) || !scale.is_finite() {
                    return Err(LabError::param("scale", format!("must be ≥ 0, got {scale}")));
                }
            }
            TailModel::FiniteSupport | TailModel::Custom(_) => {}
        }
        Ok(())
    }

    /// Formula value at global index `i`; `None` when the model has no
    /// term formula.
    fn formula(&self, i: usize) -> Option<f64> {
        match *self {
            TailModel::FiniteSupport => Some(0.0),
            TailModel::Geometric { ratio, scale } => Some(scale * ratio.powf(i as f64)),
            TailModel::PowerLaw { exponent, scale } => Some(scale * ((i + 1) as f64).powf(-exponent)),
            TailModel::DyadicSpikes { exponent, scale } => Some(scale * dyadic_term(i, exponent)),
            TailModel::PowerLog {
                exponent,
                log_exponent,
                scale,
            } => {
                let x = (i + 2) as f64;
                Some(scale * x.powf(-exponent) * x.ln().powf(-log_exponent))
            }
            TailModel::Custom(ref c) => c.term.as_ref().map(|t| t(i)),
        }
    }
}

pub(crate) fn dyadic_term(i: usize, b: f64) -> f64 {
    if i >= 2 && i.is_power_of_two() {
        let k = i.trailing_zeros() as f64;
        (-0.5 * k).exp2() * k.powf(-b)
    } else {
        0.0
    }
}

/// A real sequence `(u_i)_{i≥0}`: explicit prefix plus analytic tail.
#[derive(Debug, Clone)]
pub struct CoefficientSequence {
    prefix: Vec<f64>,
    tail: TailModel,
    nonnegative: bool,
}

impl CoefficientSequence {
    pub fn new(prefix: Vec<f64>, tail: TailModel) -> Result<Self> {
        tail.validate()?;
        if let Some(bad) = prefix.iter().find(|x| !x.is_finite()) {
            return Err(LabError::param("prefix", format!("non-finite entry {bad}")));
        }
        let tail_nonneg = match tail {
            TailModel::Geometric { scale, .. } => scale >= 0.0,
            TailModel::Custom(_) => false,
            _ => true,
        };
        let nonnegative = tail_nonneg && prefix.iter().all(|&x| x >= 0.0);
        Ok(Self {
            prefix,
            tail,
            nonnegative,
        })
    }

    pub fn finite(values: Vec<f64>) -> Result<Self> {
        Self::new(values, TailModel::FiniteSupport)
    }

    pub fn geometric(ratio: f64) -> Result<Self> {
        Self::new(Vec::new(), TailModel::Geometric { ratio, scale: 1.0 })
    }

    pub fn power_law(exponent: f64, scale: f64) -> Result<Self> {
        Self::new(Vec::new(), TailModel::PowerLaw { exponent, scale })
    }

    pub fn power_log(exponent: f64, log_exponent: f64, scale: f64) -> Result<Self> {
        Self::new(
            Vec::new(),
            TailModel::PowerLog {
                exponent,
                log_exponent,
                scale,
            },
        )
    }

    pub fn custom(prefix: Vec<f64>, tail: CustomTail) -> Result<Self> {
        Self::new(prefix, TailModel::Custom(tail))
    }

    pub fn prefix(&self) -> &[f64] {
        &self.prefix
    }

    pub fn tail_model(&self) -> &TailModel {
        &self.tail
    }

    pub fn is_nonnegative(&self) -> bool {
        self.nonnegative
    }

    pub fn has_tail_model(&self) -> bool {
        !matches!(self.tail, TailModel::Custom(_))
    }

    /// `u_i`, or `None` for custom sequences past their known terms.
    pub fn term(&self, i: usize) -> Option<f64> {
        match self.prefix.get(i) {
            Some(&v) => Some(v),
            None => self.tail.formula(i),
        }
    }

    /// `u_i` for sequences whose every term is known.
    ///
    /// Panics on custom sequences without a term formula past the prefix.
    pub fn value(&self, i: usize) -> f64 {
        self.term(i)
            .unwrap_or_else(|| panic!("term {i} of a custom sequence is unknown"))
    }

    /// Returns the first `len` terms, failing if any is unknown.
    pub fn materialize(&self, len: usize) -> Result<Vec<f64>> {
        (0..len)
            .map(|i| {
                self.term(i).ok_or_else(|| {
                    LabError::InvalidModel(format!(
                        "custom sequence has no term at index {i} (prefix length {})",
                        self.prefix.len()
                    ))
                })
            })
            .collect()
    }

    /// Sequence with every term multiplied by `factor ≥ 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0) || !factor.is_finite() {
            return Err(LabError::param("factor", "must be finite and ≥ 0"));
        }
        let prefix = self.prefix.iter().map(|x| x * factor).collect();
        let tail = match self.tail.clone() {
            TailModel::Geometric { ratio, scale } => TailModel::Geometric {
                ratio,
                scale: scale * factor,
            },
            TailModel::PowerLaw { exponent, scale } => TailModel::PowerLaw {
                exponent,
                scale: scale * factor,
            },
            TailModel::PowerLog {
                exponent,
                log_exponent,
                scale,
            } => TailModel::PowerLog {
                exponent,
                log_exponent,
                scale: scale * factor,
            },
            TailModel::DyadicSpikes { exponent, scale } => TailModel::DyadicSpikes {
                exponent,
                scale: scale * factor,
            },
            TailModel::Custom(c) => {
                let term = c.term.map(|t| -> TermFn { Arc::new(move |i| factor * t(i)) });
                let l2_tail_bound = c
                    .l2_tail_bound
                    .map(|t| -> TermFn { Arc::new(move |k| factor * factor * t(k)) });
                TailModel::Custom(CustomTail {
                    term,
                    l2_tail_bound,
                })
            }
            other => other,
        };
        Self::new(prefix, tail)
    }

    /// `|u_i|^γ` for `γ ∈ (0, 1]`. Dyadic spikes leave their family and
    /// become a custom tail without a bound.
    pub fn powered(&self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(LabError::param("gamma", format!("must lie in (0,1], got {gamma}")));
        }
        if gamma == 1.0 {
            return Ok(self.abs());
        }
        let prefix = self.prefix.iter().map(|x| x.abs().powf(gamma)).collect();
        let tail = match self.tail.clone() {
            TailModel::FiniteSupport => TailModel::FiniteSupport,
            TailModel::Geometric { ratio, scale } => TailModel::Geometric {
                ratio: ratio.powf(gamma),
                scale: scale.abs().powf(gamma),
            },
            TailModel::PowerLaw { exponent, scale } => TailModel::PowerLaw {
                exponent: exponent * gamma,
                scale: scale.powf(gamma),
            },
            TailModel::PowerLog {
                exponent,
                log_exponent,
                scale,
            } => TailModel::PowerLog {
                exponent: exponent * gamma,
                log_exponent: log_exponent * gamma,
                scale: scale.powf(gamma),
            },
            TailModel::DyadicSpikes { exponent, scale } => TailModel::Custom(CustomTail {
                term: Some(Arc::new(move |i| (scale * dyadic_term(i, exponent)).powf(gamma))),
                l2_tail_bound: None,
            }),
            TailModel::Custom(c) => TailModel::Custom(CustomTail {
                term: c.term.map(|t| -> TermFn { Arc::new(move |i| t(i).abs().powf(gamma)) }),
                l2_tail_bound: None,
            }),
        };
        Self::new(prefix, tail)
    }

    /// Sequence of absolute values.
    pub fn abs(&self) -> Self {
        let mut out = self.clone();
        out.prefix.iter_mut().for_each(|x| *x = x.abs());
        if let TailModel::Geometric { ref mut scale, .. } = out.tail {
            *scale = scale.abs();
        }
        if let TailModel::Custom(ref mut c) = out.tail {
            if let Some(t) = c.term.take() {
                c.term = Some(Arc::new(move |i| t(i).abs()));
            }
        }
        out.nonnegative = !matches!(out.tail, TailModel::Custom(_));
        out
    }

    /// `Some(true)` when the whole sequence is provably nonincreasing
    /// (after taking absolute values), `None` when it cannot be decided.
    pub fn is_nonincreasing(&self) -> Option<bool> {
        let abs: Vec<f64> = self.prefix.iter().map(|x| x.abs()).collect();
        if abs.windows(2).any(|w| w[1] > w[0]) {
            return Some(false);
        }
        let m = self.prefix.len();
        let first_tail = self.tail.formula(m).map(f64::abs);
        if let (Some(&last), Some(next)) = (abs.last(), first_tail) {
            if next > last {
                return Some(false);
            }
        }
        match self.tail {
            TailModel::FiniteSupport
            | TailModel::Geometric { .. }
            | TailModel::PowerLaw { .. }
            | TailModel::PowerLog { .. } => Some(true),
            TailModel::DyadicSpikes { .. } => Some(false),
            TailModel::Custom(_) => None,
        }
    }

    /// `Σ_{i≥k} |u_i|^q`, exact where the tail model has a closed form.
    pub fn tail_power(&self, k: usize, q: f64) -> TailSum {
        tail::tail_power(self, k, q)
    }

    /// `Σ_{i≥k} u_i²`.
    pub fn tail_l2(&self, k: usize) -> TailSum {
        self.tail_power(k, 2.0)
    }

    /// `Σ_{i≥k} u_i²`, refusing sequences without an exact tail.
    pub fn tail_l2_exact(&self, k: usize) -> Result<f64> {
        let t = self.tail_l2(k);
        if t.exact {
            Ok(t.value)
        } else {
            Err(LabError::InexactTail)
        }
    }

    /// Signed tail `Σ_{i≥k} u_i`; `None` if it does not converge or is
    /// unknown.
    pub fn tail_sum(&self, k: usize) -> Option<TailSum> {
        tail::signed_tail(self, k)
    }
}

/// The sequence used to separate the strong Maxwell–Woodroofe condition from
/// Gordin–Lifšic + Hannan: spikes `2^{-k/2} k^{-b}` at indices `2^k`.
pub fn counterexample_sequence(b: f64) -> Result<CoefficientSequence> {
    if !(b > 0.5 && b < 1.0) {
        return Err(LabError::param("b", format!("must lie in (1/2, 1), got {b}")));
    }
    CoefficientSequence::new(
        Vec::new(),
        TailModel::DyadicSpikes {
            exponent: b,
            scale: 1.0,
        },
    )
}

// JSON document: {"prefix": [...], "tail": {"kind": "...", "params": {...}}}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SequenceDoc {
    #[serde(default)]
    prefix: Vec<f64>,
    tail: TailDoc,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case", deny_unknown_fields)]
enum TailDoc {
    FiniteSupport,
    Geometric {
        ratio: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    PowerLaw {
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    DyadicSpikes {
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    PowerLog {
        exponent: f64,
        log_exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Custom {
        #[serde(default)]
        l2_tail_bound: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl Serialize for CoefficientSequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let tail = match &self.tail {
            TailModel::FiniteSupport => TailDoc::FiniteSupport,
            &TailModel::Geometric { ratio, scale } => TailDoc::Geometric { ratio, scale },
            &TailModel::PowerLaw { exponent, scale } => TailDoc::PowerLaw { exponent, scale },
            &TailModel::DyadicSpikes { exponent, scale } => TailDoc::DyadicSpikes { exponent, scale },
            &TailModel::PowerLog {
                exponent,
                log_exponent,
                scale,
            } => TailDoc::PowerLog {
                exponent,
                log_exponent,
                scale,
            },
            TailModel::Custom(c) => TailDoc::Custom {
                l2_tail_bound: c
                    .l2_tail_bound
                    .as_ref()
                    .map(|t| t(self.prefix.len())),
            },
        };
        SequenceDoc {
            prefix: self.prefix.clone(),
            tail,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CoefficientSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = SequenceDoc::deserialize(d)?;
        let tail = match doc.tail {
            TailDoc::FiniteSupport => TailModel::FiniteSupport,
            TailDoc::Geometric { ratio, scale } => TailModel::Geometric { ratio, scale },
            TailDoc::PowerLaw { exponent, scale } => TailModel::PowerLaw { exponent, scale },
            TailDoc::DyadicSpikes { exponent, scale } => TailModel::DyadicSpikes { exponent, scale },
            TailDoc::PowerLog {
                exponent,
                log_exponent,
                scale,
            } => TailModel::PowerLog {
                exponent,
                log_exponent,
                scale,
            },
            TailDoc::Custom { l2_tail_bound } => TailModel::Custom(CustomTail {
                term: None,
                l2_tail_bound: l2_tail_bound.map(|b| -> TermFn { Arc::new(move |_| b) }),
            }),
        };
        CoefficientSequence::new(doc.prefix, tail).map_err(serde::de::Error::custom)
    }
}
