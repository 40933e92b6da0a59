use std::fmt;

use serde::Serialize;

use super::{CoefficientSequence, TailModel};
use crate::error::{LabError, Result};
use crate::numeric::CompensatedSum;

/// Dyadic cutoffs `2^4, …, 2^20` at which partial sums are reported.
pub const PARTIAL_SUM_GRID: [usize; 17] = {
    let mut g = [0usize; 17];
    let mut i = 0;
    while i < 17 {
        g[i] = 1 << (i + 4);
        i += 1;
    }
    g
};

const GRID_MAX: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Classification {
    Converges,
    Diverges,
    Unknown,
}

impl Classification {
    fn from_bool(converges: bool) -> Self {
        if converges {
            Classification::Converges
        } else {
            Classification::Diverges
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Classification::Converges => "Converges",
            Classification::Diverges => "Diverges",
            Classification::Unknown => "Unknown",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Condition {
    /// `Σ_k k u_k²`
    GL,
    /// `Σ_k u_k`
    H,
    /// `Σ_{k≥1} k^{-1/2} (Σ_{i≥k} u_i²)^{1/2}`
    MWstrong,
    /// `Σ_{k≥1} (k^{-1} Σ_{i≥k} u_i^q)^{1/q}`
    LemmaSeriesLHS(f64),
    /// `Σ_k ∫_0^{α(k)} Q²`
    RioSum,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::GL => f.write_str("GL"),
            Condition::H => f.write_str("H"),
            Condition::MWstrong => f.write_str("MW"),
            Condition::LemmaSeriesLHS(q) => write!(f, "LemmaLHS(q={q})"),
            Condition::RioSum => f.write_str("Rio"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub condition: Condition,
    pub classification: Classification,
    /// `(N, Σ_{k≤N} term_k)` on the dyadic grid.
    pub partial_sums: Vec<(usize, f64)>,
    pub certified: bool,
}

/// One CSV row of a verdict: `(condition, classification, N, partial_sum, certified)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerdictRow {
    pub condition: String,
    pub classification: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub partial_sum: f64,
    pub certified: bool,
}

impl ConditionVerdict {
    fn new(condition: Condition, classification: Classification, partial_sums: Vec<(usize, f64)>) -> Self {
        Self {
            condition,
            classification,
            partial_sums,
            certified: classification != Classification::Unknown,
        }
    }

    pub fn rows(&self) -> Vec<VerdictRow> {
        self.partial_sums
            .iter()
            .map(|&(n, s)| VerdictRow {
                condition: self.condition.to_string(),
                classification: self.classification.to_string(),
                n,
                partial_sum: s,
                certified: self.certified,
            })
            .collect()
    }
}

/// Bertrand series `Σ n^{-a} ln(n)^{-b}` converges iff `a > 1`, or `a = 1` and `b > 1`.
fn bertrand(a: f64, b: f64) -> bool {
    a > 1.0 || (a == 1.0 && b > 1.0)
}

/// Every condition is decided by the asymptotic class of `|u_i|`; the prefix
/// never matters.
#[derive(Debug, Clone, Copy)]
enum Asymptotics {
    /// Zero or exponentially decaying tail.
    Summable,
    /// `i^{-p} ln(i)^{-r}` up to constants.
    PowerLog { p: f64, r: f64 },
    /// Spikes `2^{-k/2} k^{-b}` at `i = 2^k`.
    Dyadic,
    Undetermined,
}

fn asymptotics(seq: &CoefficientSequence) -> Asymptotics {
    match *seq.tail_model() {
        TailModel::FiniteSupport | TailModel::Geometric { .. } => Asymptotics::Summable,
        TailModel::PowerLaw { scale, .. }
        | TailModel::DyadicSpikes { scale, .. }
        | TailModel::PowerLog { scale, .. }
            if scale == 0.0 =>
        {
            Asymptotics::Summable
        }
        TailModel::PowerLaw { exponent, .. } => Asymptotics::PowerLog { p: exponent, r: 0.0 },
        TailModel::PowerLog {
            exponent,
            log_exponent,
            ..
        } => Asymptotics::PowerLog {
            p: exponent,
            r: log_exponent,
        },
        TailModel::DyadicSpikes { .. } => Asymptotics::Dyadic,
        TailModel::Custom(_) => Asymptotics::Undetermined,
    }
}

/// Terms `|u_0|, …, |u_{len-1}|`, stopping early at the first unknown term.
fn known_abs_terms(seq: &CoefficientSequence, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        match seq.term(i) {
            Some(v) => out.push(v.abs()),
            None => break,
        }
    }
    out
}

/// Partial sums of `summand(k)` for `k` in `first..=N`, sampled on the grid.
fn grid_partial_sums(first: usize, last_known: usize, summand: impl Fn(usize) -> f64) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    let mut acc = CompensatedSum::new();
    let mut grid = PARTIAL_SUM_GRID.iter().peekable();
    for k in first..=GRID_MAX.min(last_known) {
        acc.add(summand(k));
        if grid.peek() == Some(&&k) {
            out.push((k, acc.value()));
            grid.next();
        }
    }
    out
}

/// `T_q(k) = Σ_{i≥k} |u_i|^q` for `k = 0..=GRID_MAX`, by backward
/// accumulation from the exact tail at `GRID_MAX + 1`.
fn tails_on_grid(seq: &CoefficientSequence, terms: &[f64], q: f64) -> Option<Vec<f64>> {
    if terms.len() <= GRID_MAX {
        return None;
    }
    let start = seq.tail_power(GRID_MAX + 1, q);
    if !start.value.is_finite() {
        return Some(vec![f64::INFINITY; GRID_MAX + 1]);
    }
    let mut tails = vec![0.0; GRID_MAX + 1];
    let mut acc = CompensatedSum::from_value(start.value);
    for k in (0..=GRID_MAX).rev() {
        acc.add(terms[k].powf(q));
        tails[k] = acc.value();
    }
    Some(tails)
}

/// Decides `Σ_k k u_k² < ∞`.
pub fn check_gl(seq: &CoefficientSequence) -> ConditionVerdict {
    let class = match asymptotics(seq) {
        Asymptotics::Summable | Asymptotics::Dyadic => Classification::Converges,
        Asymptotics::PowerLog { p, r } => Classification::from_bool(bertrand(2.0 * p - 1.0, 2.0 * r)),
        Asymptotics::Undetermined => Classification::Unknown,
    };
    let terms = known_abs_terms(seq, GRID_MAX + 1);
    let sums = grid_partial_sums(0, terms.len().saturating_sub(1), |k| k as f64 * terms[k] * terms[k]);
    ConditionVerdict::new(Condition::GL, class, sums)
}

/// Decides `Σ_k |u_k| < ∞`.
pub fn check_h(seq: &CoefficientSequence) -> ConditionVerdict {
    let class = match asymptotics(seq) {
        Asymptotics::Summable | Asymptotics::Dyadic => Classification::Converges,
        Asymptotics::PowerLog { p, r } => Classification::from_bool(bertrand(p, r)),
        Asymptotics::Undetermined => Classification::Unknown,
    };
    let terms = known_abs_terms(seq, GRID_MAX + 1);
    let sums = grid_partial_sums(0, terms.len().saturating_sub(1), |k| terms[k]);
    ConditionVerdict::new(Condition::H, class, sums)
}

/// Decides `Σ_{k≥1} k^{-1/2} (Σ_{i≥k} u_i²)^{1/2} < ∞`.
pub fn check_mw(seq: &CoefficientSequence) -> ConditionVerdict {
    let class = match asymptotics(seq) {
        Asymptotics::Summable => Classification::Converges,
        Asymptotics::Dyadic => Classification::Diverges,
        Asymptotics::PowerLog { p, r } => {
            Classification::from_bool(bertrand(2.0 * p, 2.0 * r) && bertrand(p, r))
        }
        Asymptotics::Undetermined => Classification::Unknown,
    };
    let terms = known_abs_terms(seq, GRID_MAX + 1);
    let sums = match tails_on_grid(seq, &terms, 2.0) {
        Some(t) => grid_partial_sums(1, GRID_MAX, |k| (t[k] / k as f64).sqrt()),
        None => Vec::new(),
    };
    ConditionVerdict::new(Condition::MWstrong, class, sums)
}

/// Decides `Σ_{k≥1} (k^{-1} Σ_{i≥k} |u_i|^q)^{1/q} < ∞` for `q > 1`.
///
/// Both directions of the comparison with `Σ u_k` are enforced: a convergent
/// left-hand side with a divergent `Σ u_k`, or disagreeing verdicts on a
/// nonincreasing sequence, is reported as a consistency error.
pub fn lemma_series_lhs(seq: &CoefficientSequence, q: f64) -> Result<ConditionVerdict> {
    if !(q > 1.0) || !q.is_finite() {
        return Err(LabError::param("q", format!("must be finite and > 1, got {q}")));
    }
    let class = match asymptotics(seq) {
        Asymptotics::Summable => Classification::Converges,
        Asymptotics::Dyadic => Classification::from_bool(q < 2.0),
        Asymptotics::PowerLog { p, r } => {
            Classification::from_bool(bertrand(p * q, r * q) && bertrand(p, r))
        }
        Asymptotics::Undetermined => Classification::Unknown,
    };
    let terms = known_abs_terms(seq, GRID_MAX + 1);
    let sums = match tails_on_grid(seq, &terms, q) {
        Some(t) => grid_partial_sums(1, GRID_MAX, |k| (t[k] / k as f64).powf(1.0 / q)),
        None => Vec::new(),
    };
    let verdict = ConditionVerdict::new(Condition::LemmaSeriesLHS(q), class, sums);

    let h = check_h(seq).classification;
    if class == Classification::Converges && h == Classification::Diverges {
        return Err(LabError::Consistency(format!(
            "lemma series converges (q={q}) but Σu diverges"
        )));
    }
    if seq.is_nonincreasing() == Some(true)
        && class != Classification::Unknown
        && h != Classification::Unknown
        && class != h
    {
        return Err(LabError::Consistency(format!(
            "monotone sequence: lemma series {class} (q={q}) but Σu {h}"
        )));
    }
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequences::{counterexample_sequence, CustomTail};

    fn last(v: &ConditionVerdict) -> f64 {
        v.partial_sums.last().unwrap().1
    }

    #[test]
    fn grid_is_dyadic() {
        assert_eq!(PARTIAL_SUM_GRID[0], 16);
        assert_eq!(PARTIAL_SUM_GRID[16], 1 << 20);
    }

    #[test]
    fn geometric_converges_everywhere() {
        let s = CoefficientSequence::geometric(0.5).unwrap();
        for v in [check_gl(&s), check_h(&s), check_mw(&s), lemma_series_lhs(&s, 2.0).unwrap()] {
            assert_eq!(v.classification, Classification::Converges);
            assert!(v.certified);
        }
        // Σ 2^{-k} = 2
        assert!((last(&check_h(&s)) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn dyadic_lattice() {
        for b in [0.6, 0.75, 0.9] {
            let s = counterexample_sequence(b).unwrap();
            assert_eq!(check_gl(&s).classification, Classification::Converges);
            assert_eq!(check_h(&s).classification, Classification::Converges);
            assert_eq!(check_mw(&s).classification, Classification::Diverges);
        }
    }

    #[test]
    fn harmonic_gl_diverges_with_growing_partial_sums() {
        let s = CoefficientSequence::power_law(1.0, 1.0).unwrap();
        let v = check_gl(&s);
        assert_eq!(v.classification, Classification::Diverges);
        // Σ_{k≤N} k/(k+1)² ≈ ln N; exceeds 10 by N = 2^17 > 10^5
        let at = v.partial_sums.iter().find(|(n, _)| *n == 1 << 17).unwrap().1;
        assert!(at > 10.0, "{at}");
        assert_eq!(check_h(&s).classification, Classification::Diverges);
    }

    #[test]
    fn three_halves_h_converges() {
        let s = CoefficientSequence::power_law(1.5, 1.0).unwrap();
        let v = check_h(&s);
        assert_eq!(v.classification, Classification::Converges);
        // ζ(3/2) ≈ 2.612; partial sum at 2^20 is within 2/√N of it
        assert!((last(&v) - 2.612375348685488).abs() < 2e-3);
    }

    #[test]
    fn mw_partial_sums_match_brute_force() {
        // finite support (1, 1): T(1) = 1, T(k) = 0 for k ≥ 2; series = 1
        let s = CoefficientSequence::finite(vec![1.0, -1.0]).unwrap();
        let v = check_mw(&s);
        assert_eq!(v.classification, Classification::Converges);
        assert!((last(&v) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lemma_examples() {
        let s = CoefficientSequence::power_law(1.5, 1.0).unwrap();
        assert_eq!(lemma_series_lhs(&s, 2.0).unwrap().classification, Classification::Converges);
        let s = CoefficientSequence::power_law(1.0, 1.0).unwrap();
        assert_eq!(lemma_series_lhs(&s, 2.0).unwrap().classification, Classification::Diverges);
        let s = CoefficientSequence::finite(vec![1.0]).unwrap();
        let v = lemma_series_lhs(&s, 2.0).unwrap();
        assert_eq!(v.classification, Classification::Converges);
        assert!((last(&v) - 0.0).abs() < 1e-15);
        assert!(lemma_series_lhs(&s, 1.0).is_err());
    }

    #[test]
    fn lemma_dyadic_depends_on_q() {
        let s = counterexample_sequence(0.75).unwrap();
        assert_eq!(lemma_series_lhs(&s, 2.0).unwrap().classification, Classification::Diverges);
        assert_eq!(lemma_series_lhs(&s, 3.0).unwrap().classification, Classification::Diverges);
        assert_eq!(lemma_series_lhs(&s, 1.5).unwrap().classification, Classification::Converges);
    }

    #[test]
    fn lemma_partial_sums_brute_force() {
        // oracle: direct O(N²)-free evaluation for u_i = 2^{-i}, q = 2 up to k = 64
        let s = CoefficientSequence::geometric(0.5).unwrap();
        let v = lemma_series_lhs(&s, 2.0).unwrap();
        let brute: f64 = (1..=16u32)
            .map(|k| {
                let t: f64 = (k..200).map(|i| 4f64.powi(-(i as i32))).sum();
                (t / k as f64).sqrt()
            })
            .sum();
        assert!((v.partial_sums[0].1 - brute).abs() < 1e-14);
    }

    #[test]
    fn power_log_classes() {
        // 1/((k+2) ln(k+2)): Σ k u_k² converges, Σ u_k diverges
        let s = CoefficientSequence::power_log(1.0, 1.0, 1.0).unwrap();
        assert_eq!(check_gl(&s).classification, Classification::Converges);
        assert_eq!(check_h(&s).classification, Classification::Diverges);
        assert_eq!(check_mw(&s).classification, Classification::Diverges);
        assert_eq!(lemma_series_lhs(&s, 2.0).unwrap().classification, Classification::Diverges);
        let s = CoefficientSequence::power_log(1.0, 2.0, 1.0).unwrap();
        assert_eq!(check_h(&s).classification, Classification::Converges);
        assert_eq!(check_mw(&s).classification, Classification::Converges);
    }

    #[test]
    fn custom_is_unknown_and_uncertified() {
        let s = CoefficientSequence::custom(vec![1.0, 0.5], CustomTail::default()).unwrap();
        for v in [check_gl(&s), check_h(&s), check_mw(&s), lemma_series_lhs(&s, 2.0).unwrap()] {
            assert_eq!(v.classification, Classification::Unknown);
            assert!(!v.certified);
        }
    }

    #[test]
    fn rows_carry_verdict() {
        let s = counterexample_sequence(0.75).unwrap();
        let rows = check_mw(&s).rows();
        assert_eq!(rows.len(), PARTIAL_SUM_GRID.len());
        assert_eq!(rows[0].condition, "MW");
        assert_eq!(rows[0].classification, "Diverges");
        assert!(rows[0].certified);
    }
}
