use serde::Serialize;

use super::{CoefficientSequence, TailModel};
use crate::numeric::{gauss_legendre_16, gl_panel, hurwitz_zeta, CompensatedSum};

/// A tail sum together with a certified upper bound.
///
/// `exact` is true when `value` comes from a closed form (up to rounding,
/// which `upper` absorbs); otherwise `value` is the best available estimate
/// and only `upper` is guaranteed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailSum {
    pub value: f64,
    pub upper: f64,
    pub exact: bool,
}

impl TailSum {
    fn exact(value: f64, terms: usize) -> Self {
        let slack = (terms as f64 + 4.0) * f64::EPSILON;
        Self {
            value,
            upper: value * (1.0 + slack),
            exact: true,
        }
    }

    fn infinite() -> Self {
        Self {
            value: f64::INFINITY,
            upper: f64::INFINITY,
            exact: true,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Number of terms summed directly before switching to an integral
/// enclosure for tails without a closed form.
const DIRECT_TERMS: usize = 1 << 16;

pub(super) fn tail_power(seq: &CoefficientSequence, k: usize, q: f64) -> TailSum {
    assert!(q > 0.0, "tail power must be positive");
    let m = seq.prefix.len();
    let mut head = CompensatedSum::new();
    for &u in seq.prefix.iter().skip(k) {
        head.add(u.abs().powf(q));
    }
    let head_terms = m.saturating_sub(k);
    let start = k.max(m);
    let head = head.value();

    match seq.tail {
        TailModel::FiniteSupport => TailSum::exact(head, head_terms),
        TailModel::Geometric { ratio, scale } => {
            let rq = ratio.powf(q);
            let t = scale.abs().powf(q) * rq.powf(start as f64) / (1.0 - rq);
            TailSum::exact(head + t, head_terms + 8)
        }
        TailModel::PowerLaw { exponent, scale } => {
            if scale == 0.0 {
                return TailSum::exact(head, head_terms);
            }
            let s = exponent * q;
            if s <= 1.0 {
                return TailSum::infinite();
            }
            let t = scale.powf(q) * hurwitz_zeta(s, (start + 1) as f64);
            TailSum::exact(head + t, head_terms + 32)
        }
        TailModel::DyadicSpikes { exponent, scale } => {
            let t = dyadic_tail(start, exponent, q);
            TailSum::exact(head + scale.powf(q) * t, head_terms + 64)
        }
        TailModel::PowerLog {
            exponent,
            log_exponent,
            scale,
        } => {
            if scale == 0.0 {
                return TailSum::exact(head, head_terms);
            }
            let (value, upper) = power_log_tail(start, exponent * q, log_exponent * q);
            if !value.is_finite() {
                return TailSum::infinite();
            }
            let c = scale.powf(q);
            let slack = 1.0 + (DIRECT_TERMS as f64 + 64.0) * f64::EPSILON;
            TailSum {
                value: head + c * value,
                upper: (head + c * upper) * slack,
                exact: false,
            }
        }
        TailModel::Custom(ref c) => {
            let upper = match (&c.l2_tail_bound, q == 2.0) {
                (Some(bound), true) => bound(start),
                _ => f64::INFINITY,
            };
            TailSum {
                value: head,
                upper: (head + upper) * (1.0 + (head_terms as f64 + 4.0) * f64::EPSILON),
                exact: false,
            }
        }
    }
}

/// `Σ_{j≥1, 2^j ≥ start} (2^{-j/2} j^{-b})^q`.
fn dyadic_tail(start: usize, b: f64, q: f64) -> f64 {
    let mut j = if start <= 2 {
        1
    } else {
        // smallest j with 2^j >= start
        (usize::BITS - (start - 1).leading_zeros()) as i32
    };
    let mut acc = CompensatedSum::new();
    loop {
        let term = ((-0.5 * j as f64).exp2() * (j as f64).powf(-b)).powf(q);
        acc.add(term);
        if term == 0.0 || term < acc.value() * 1e-20 || j > 4096 {
            break;
        }
        j += 1;
    }
    acc.value()
}

/// Tail `Σ_{i≥start} (i+2)^{-s} ln(i+2)^{-t}` as (estimate, certified upper).
///
/// Direct summation of `DIRECT_TERMS` terms, then the integral enclosure
/// `∫_x^∞ f ≤ Σ_{i≥x} f(i) ≤ f(x) + ∫_x^∞ f` for the decreasing remainder.
fn power_log_tail(start: usize, s: f64, t: f64) -> (f64, f64) {
    if s < 1.0 || (s == 1.0 && t <= 1.0) {
        return (f64::INFINITY, f64::INFINITY);
    }
    let f = |i: f64| {
        let x = i + 2.0;
        x.powf(-s) * x.ln().powf(-t)
    };
    let mut direct = CompensatedSum::new();
    for i in start..start + DIRECT_TERMS {
        direct.add(f(i as f64));
    }
    let x = (start + DIRECT_TERMS) as f64;
    let w0 = (x + 2.0).ln();
    let integral = if s == 1.0 {
        w0.powf(1.0 - t) / (t - 1.0)
    } else {
        // ∫_{w0}^∞ e^{-βw} w^{-t} dw with w = w0 + y/β
        let beta = s - 1.0;
        let rule = gauss_legendre_16();
        let g = |y: f64| (-y).exp() * (w0 + y / beta).powf(-t);
        let mut acc = CompensatedSum::new();
        let mut lo = 0.0;
        while lo < 80.0 {
            acc.add(gl_panel(rule, lo, lo + 2.0, &g));
            lo += 2.0;
        }
        (x + 2.0).powf(-beta) / beta * acc.value()
    };
    let fx = f(x);
    let d = direct.value();
    (d + integral + 0.5 * fx, d + integral + fx)
}

/// Signed tail `Σ_{i≥k} u_i`, defined when the tail converges absolutely.
pub(super) fn signed_tail(seq: &CoefficientSequence, k: usize) -> Option<TailSum> {
    let m = seq.prefix.len();
    let mut head = CompensatedSum::new();
    for &u in seq.prefix.iter().skip(k) {
        head.add(u);
    }
    let start = k.max(m);
    let head_terms = m.saturating_sub(k);
    let head = head.value();
    let t = match seq.tail {
        TailModel::FiniteSupport => 0.0,
        TailModel::Geometric { ratio, scale } => scale * ratio.powf(start as f64) / (1.0 - ratio),
        TailModel::PowerLaw { exponent, scale } => {
            if scale == 0.0 {
                0.0
            } else if exponent <= 1.0 {
                return None;
            } else {
                scale * hurwitz_zeta(exponent, (start + 1) as f64)
            }
        }
        TailModel::DyadicSpikes { exponent, scale } => scale * dyadic_tail(start, exponent, 1.0),
        TailModel::PowerLog {
            exponent,
            log_exponent,
            scale,
        } => {
            if scale == 0.0 {
                0.0
            } else {
                let (v, up) = power_log_tail(start, exponent, log_exponent);
                if !v.is_finite() {
                    return None;
                }
                return Some(TailSum {
                    value: head + scale * v,
                    upper: head.abs() + scale * up,
                    exact: false,
                });
            }
        }
        TailModel::Custom(_) => return None,
    };
    let value = head + t;
    Some(TailSum {
        value,
        upper: value.abs() * (1.0 + (head_terms as f64 + 8.0) * f64::EPSILON),
        exact: true,
    })
}
