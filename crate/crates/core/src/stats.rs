//! Distributional tests: Kolmogorov–Smirnov against the normal and
//! Brownian-supremum laws, annealed and quenched, plus diagnostics for
//! models without a limiting variance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{LabError, Result};
use crate::martingale::{gordin_increment, McEstimate};
use crate::models::{Coordinates, EstimationBudget, ProcessModel};
use crate::simulate::streams::{domain, stream, stream_key};
use crate::simulate::{replicate_batch, with_workers, BatchOptions, ReplicateBatch};

/// Smallest sample for which the asymptotic p-value is used.
pub const MIN_KS_SAMPLES: usize = 1000;
/// Fraction of tied sample values above which a result is flagged.
pub const TIE_TOLERANCE: f64 = 0.01;
/// Below this the limiting variance counts as zero.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoodnessOfFitResult {
    pub test: &'static str,
    pub size: usize,
    pub statistic: f64,
    pub pvalue: f64,
    pub reference: String,
    pub alpha: f64,
    pub pass: bool,
    /// Samples equal to their predecessor in sorted order.
    pub ties: usize,
    pub ties_flagged: bool,
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // P(K ≤ λ) = √(2π)/λ Σ_{k≥1} exp(−(2k−1)²π²/(8λ²))
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut s = 0.0;
        for k in 1..=20 {
            let m = (2 * k - 1) as f64;
            let t = (-m * m * c).exp();
            s += t;
            if t < 1e-17 * s {
                break;
            }
        }
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    // 2 Σ_{k≥1} (−1)^{k−1} exp(−2k²λ²)
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let t = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { t } else { -t };
        if t < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sided one-sample KS test with the asymptotic p-value `Q(√R D)`.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64, reference: &str, alpha: f64) -> Result<GoodnessOfFitResult> {
    let r = samples.len();
    if r < MIN_KS_SAMPLES {
        return Err(LabError::param("samples", format!("need at least {MIN_KS_SAMPLES}, got {r}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LabError::param("alpha", "must lie in (0, 1)"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(LabError::param("samples", "non-finite value"));
    }
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let rf = r as f64;
    let mut d = 0.0f64;
    let mut ties = 0;
    for (i, &v) in x.iter().enumerate() {
        if i > 0 && x[i - 1] == v {
            ties += 1;
        }
        let f = cdf(v);
        d = d.max(f - i as f64 / rf).max((i + 1) as f64 / rf - f);
    }
    let pvalue = kolmogorov_survival(rf.sqrt() * d);
    Ok(GoodnessOfFitResult {
        test: "KS",
        size: r,
        statistic: d,
        pvalue,
        reference: reference.to_string(),
        alpha,
        pass: pvalue >= alpha,
        ties,
        ties_flagged: ties as f64 > TIE_TOLERANCE * rf,
    })
}

/// Standard normal cdf.
pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn check_sigma2(sigma2: f64) -> Result<f64> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(sigma2.sqrt())
    } else {
        Err(LabError::param("sigma2", "must be positive and finite"))
    }
}

/// Cdf of `N(0, σ²)`.
pub fn normal_reference(sigma2: f64) -> Result<impl Fn(f64) -> f64 + Send + Sync> {
    let s = check_sigma2(sigma2)?;
    Ok(move |x: f64| phi(x / s))
}

/// Cdf of `σ sup_{t≤1} W_t`: `2Φ(x/σ) − 1` on `x ≥ 0`.
pub fn bm_sup_reference(sigma2: f64) -> Result<impl Fn(f64) -> f64 + Send + Sync> {
    let s = check_sigma2(sigma2)?;
    Ok(move |x: f64| if x < 0.0 { 0.0 } else { (1.0 - erfc(x / (s * std::f64::consts::SQRT_2))).max(0.0) })
}

/// `σ² = ‖D‖²₂` of the limiting martingale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceVariance {
    pub value: f64,
    /// Standard error (nested Monte Carlo) or truncation error bound.
    pub error: f64,
    pub exact: bool,
}

/// `σ²` from the exact oracle, or from an independent nested Monte Carlo
/// stream for Hölder models; refuses when `Σ P_0(X_k)` is not known to
/// converge or `σ² = 0`.
pub fn reference_variance(model: &ProcessModel, seed: u64) -> Result<ReferenceVariance> {
    match model.gordin_series_converges() {
        Some(true) => {}
        Some(false) => return Err(LabError::DivergentReference("Diverges".into())),
        None => return Err(LabError::DivergentReference("Unknown".into())),
    }
    let out = match model {
        ProcessModel::Linear(m) => {
            let t = m.coeffs().tail_sum(0).expect("convergent series has a tail sum");
            let var = m.innovation().variance();
            let err = var * (t.upper.abs().max(t.value.abs()).powi(2) - t.value.powi(2)).abs();
            ReferenceVariance {
                value: var * t.value * t.value,
                error: err,
                exact: true,
            }
        }
        ProcessModel::SemiLinear(_) => {
            let d = gordin_increment(model, model.lag())?;
            let r = tail_l1(model);
            ReferenceVariance {
                value: d.norm * d.norm,
                error: 2.0 * d.norm * r + r * r,
                exact: true,
            }
        }
        ProcessModel::Holder(h) => {
            let e = h.martingale_norm(EstimationBudget::default(), stream_key(seed, domain::SIGMA))?;
            ReferenceVariance {
                value: e.norm2,
                error: e.se2,
                exact: false,
            }
        }
    };
    if out.value.abs() <= DEGENERATE_VARIANCE {
        return Err(LabError::DegenerateVariance);
    }
    Ok(out)
}

/// `Σ_{j>L} ‖α_j‖`, bounding `‖D − D_L‖₂`.
fn tail_l1(model: &ProcessModel) -> f64 {
    if model.tail_bound() == 0.0 {
        return 0.0;
    }
    model
        .projection_norms()
        .ok()
        .and_then(|s| s.tail_sum(model.lag() + 1))
        .filter(|t| t.is_finite())
        .map(|t| t.upper)
        .unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, Copy)]
pub struct TestOptions<'a> {
    pub alpha: f64,
    /// Pinned pasts; one test per past when given.
    pub pasts: Option<&'a [Coordinates]>,
    pub workers: Option<usize>,
}

impl Default for TestOptions<'_> {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            pasts: None,
            workers: None,
        }
    }
}

/// Results of one distributional test: one entry per pinned past, or a
/// single annealed entry with `past_id = None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestOutcome {
    pub sigma2: ReferenceVariance,
    pub n: usize,
    pub results: Vec<(Option<usize>, GoodnessOfFitResult)>,
}

impl TestOutcome {
    pub fn passes(&self) -> usize {
        self.results.iter().filter(|(_, r)| r.pass).count()
    }
}

/// Seed of the futures run under pinned past `p`.
pub fn futures_seed(seed: u64, p: usize) -> u64 {
    stream(seed, domain::FUTURES, p as u64).child(domain::PATHS)
}

fn batches(
    model: &ProcessModel,
    n: usize,
    replicates: usize,
    seed: u64,
    options: &TestOptions<'_>,
) -> Result<Vec<(Option<usize>, ReplicateBatch)>> {
    match options.pasts {
        None => Ok(vec![(
            None,
            replicate_batch(
                model,
                n,
                replicates,
                seed,
                &BatchOptions {
                    workers: options.workers,
                    ..Default::default()
                },
            )?,
        )]),
        Some(pasts) => pasts
            .iter()
            .enumerate()
            .map(|(p, past)| {
                let native = model.native_past(past, model.lag())?;
                let b = replicate_batch(
                    model,
                    n,
                    replicates,
                    futures_seed(seed, p),
                    &BatchOptions {
                        past: Some(&native),
                        workers: options.workers,
                        ..Default::default()
                    },
                )?;
                Ok((Some(p), b))
            })
            .collect(),
    }
}

/// KS of `S_n/√n` against `N(0, σ²)`; quenched when pasts are given.
pub fn clt_test(
    model: &ProcessModel,
    n: usize,
    replicates: usize,
    seed: u64,
    options: &TestOptions<'_>,
) -> Result<TestOutcome> {
    Ok(clt_and_wip(model, n, replicates, seed, options)?.0)
}

/// KS of `n^{-1/2} max(0, max_k S_k)` against the Brownian supremum law.
pub fn wip_sup_test(
    model: &ProcessModel,
    n: usize,
    replicates: usize,
    seed: u64,
    options: &TestOptions<'_>,
) -> Result<TestOutcome> {
    Ok(clt_and_wip(model, n, replicates, seed, options)?.1)
}

/// Both tests from the same replicates.
pub fn clt_and_wip(
    model: &ProcessModel,
    n: usize,
    replicates: usize,
    seed: u64,
    options: &TestOptions<'_>,
) -> Result<(TestOutcome, TestOutcome)> {
    let sigma2 = reference_variance(model, seed)?;
    let normal = normal_reference(sigma2.value)?;
    let sup = bm_sup_reference(sigma2.value)?;
    let normal_tag = format!("N(0,{})", sigma2.value);
    let sup_tag = format!("BMsup({})", sigma2.value);
    let mut clt = TestOutcome {
        sigma2,
        n,
        results: Vec::new(),
    };
    let mut wip = clt.clone();
    for (p, b) in batches(model, n, replicates, seed, options)? {
        clt.results.push((p, ks_test(&b.normalized_sums(), &normal, &normal_tag, options.alpha)?));
        wip.results.push((p, ks_test(&b.normalized_sup(), &sup, &sup_tag, options.alpha)?));
    }
    Ok((clt, wip))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundednessFlag {
    /// `Var(S_n)/n` constant along the grid.
    Stable,
    /// Monotone with a finite known limit.
    Converging,
    /// Monotone increase of at least 20% from first to last grid point.
    Growth,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundednessRow {
    pub n: usize,
    pub var_over_n: f64,
    pub err_bound: f64,
    /// Empirical 0.9-quantile of `|S_n|/√n`.
    pub q90: Option<f64>,
    /// Sample variance of `S_n` from the same replicates.
    pub sample_var: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundednessTable {
    pub rows: Vec<BoundednessRow>,
    pub flag: BoundednessFlag,
    /// `σ²` when `Σ P_0(X_k)` converges.
    pub limit: Option<f64>,
    /// Last grid value over the limit.
    pub ratio_to_limit: Option<f64>,
}

/// Unbiased sample variance.
pub fn sample_variance(x: &[f64]) -> f64 {
    McEstimate::from_samples(x).se.powi(2) * x.len() as f64
}

/// `SE` of the sample variance of `R` normal draws with variance `σ²`:
/// `σ² √(2/(R−1))`.
pub fn chi2_variance_se(sigma2: f64, replicates: usize) -> f64 {
    sigma2 * (2.0 / (replicates as f64 - 1.0).max(1.0)).sqrt()
}

/// Growth ratio and monotonicity that raise [`BoundednessFlag::Growth`].
pub const GROWTH_RATIO: f64 = 1.2;

/// Exact `Var(S_n)/n` over `n_grid`, with empirical quantiles when
/// `replicates > 0`.
pub fn boundedness_diagnostic(
    model: &ProcessModel,
    n_grid: &[usize],
    replicates: usize,
    seed: u64,
    workers: Option<usize>,
) -> Result<BoundednessTable> {
    if n_grid.is_empty() {
        return Err(LabError::param("n_grid", "empty grid"));
    }
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let v = model.exact_variance(n)?;
        let (q90, sample_var) = if replicates > 0 {
            let b = replicate_batch(
                model,
                n,
                replicates,
                seed,
                &BatchOptions {
                    workers,
                    ..Default::default()
                },
            )?;
            let sums: Vec<f64> = b.stats.iter().map(|s| s.s_n).collect();
            let mut a: Vec<f64> = b.normalized_sums().iter().map(|x| x.abs()).collect();
            a.sort_by(f64::total_cmp);
            let k = ((0.9 * a.len() as f64).ceil() as usize).clamp(1, a.len()) - 1;
            (Some(a[k]), Some(sample_variance(&sums)))
        } else {
            (None, None)
        };
        rows.push(BoundednessRow {
            n,
            var_over_n: v.value / n as f64,
            err_bound: v.err_bound / n as f64,
            q90,
            sample_var,
        });
    }
    let limit = match reference_variance(model, seed) {
        Ok(r) => Some(r.value),
        Err(LabError::DegenerateVariance) => Some(0.0),
        Err(_) => None,
    };
    let v: Vec<f64> = rows.iter().map(|r| r.var_over_n).collect();
    let (first, last) = (v[0], v[v.len() - 1]);
    let scale = first.abs().max(1e-300);
    let flag = if v.iter().all(|x| (x - first).abs() <= 1e-12 * scale) {
        BoundednessFlag::Stable
    } else if v.windows(2).all(|w| w[1] > w[0]) && last >= GROWTH_RATIO * first {
        BoundednessFlag::Growth
    } else if limit.is_some() && (v.windows(2).all(|w| w[1] >= w[0]) || v.windows(2).all(|w| w[1] <= w[0])) {
        BoundednessFlag::Converging
    } else {
        BoundednessFlag::Inconclusive
    };
    Ok(BoundednessTable {
        rows,
        flag,
        limit,
        ratio_to_limit: limit.filter(|&l| l > 0.0).map(|l| last / l),
    })
}

/// `n^{-1} E max_{k≤n} E(S_k | F_0)²` over random pasts, each term exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftRow {
    pub n: usize,
    pub value: f64,
    pub se: f64,
}

pub fn drift_decay(
    model: &ProcessModel,
    n_grid: &[usize],
    pasts: &[Coordinates],
    workers: Option<usize>,
) -> Result<Vec<DriftRow>> {
    if pasts.len() < 2 {
        return Err(LabError::param("pasts", "need at least two pasts"));
    }
    let per_past: Vec<Vec<f64>> = with_workers(workers, || {
        pasts
            .par_iter()
            .map(|p| {
                n_grid
                    .iter()
                    .map(|&n| model.max_conditional_drift(n, p).map(|m| m * m / n as f64))
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()
    })??;
    Ok(n_grid
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let col: Vec<f64> = per_past.iter().map(|r| r[j]).collect();
            let e = McEstimate::from_samples(&col);
            DriftRow {
                n,
                value: e.value,
                se: e.se,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CausalLinearModel, InnovationSpace};
    use crate::sequences::CoefficientSequence;
    use crate::simulate::draw_pasts;

    fn linear(seq: CoefficientSequence, space: InnovationSpace) -> ProcessModel {
        ProcessModel::Linear(CausalLinearModel::new(seq, space, None).unwrap())
    }

    #[test]
    fn kolmogorov_law_values() {
        // Q(1.3581) ≈ 0.05, Q(1.6276) ≈ 0.01
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        // the two series agree where they meet
        let a = kolmogorov_survival(1.0 - 1e-12);
        let b = kolmogorov_survival(1.0);
        assert!((a - b).abs() < 1e-10);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
    }

    #[test]
    fn perfect_fit_statistic() {
        let r = 2000;
        let cdf = normal_reference(1.0).unwrap();
        let q: Vec<f64> = (0..r)
            .map(|i| {
                let u = (i as f64 + 0.5) / r as f64;
                statrs::function::erf::erfc_inv(2.0 * (1.0 - u)) * -std::f64::consts::SQRT_2
            })
            .collect();
        let t = ks_test(&q, &cdf, "N(0,1)", 0.01).unwrap();
        assert!((t.statistic - 0.5 / r as f64).abs() < 1e-9);
        assert!(t.pvalue > 0.999);
    }

    #[test]
    fn location_shift_rejected() {
        let m = linear(CoefficientSequence::finite(vec![1.0]).unwrap(), InnovationSpace::normal(1.0).unwrap());
        let b = replicate_batch(&m, 1, 10_000, 5, &BatchOptions::default()).unwrap();
        let shifted = |x: f64| phi(x - 1.0);
        let t = ks_test(&b.normalized_sums(), shifted, "N(1,1)", 0.01).unwrap();
        assert!(!t.pass);
        assert!((t.statistic - 0.383).abs() < 0.02);
    }

    #[test]
    fn reference_laws() {
        let s = bm_sup_reference(1.0).unwrap();
        assert_eq!(s(0.0), 0.0);
        assert_eq!(s(-1.0), 0.0);
        let v = s(1.959963984540054);
        assert!((v - 0.95).abs() < 1e-10, "{v}");
        assert_eq!(normal_reference(4.0).unwrap()(0.0), 0.5);
        assert!(normal_reference(0.0).is_err());
    }

    #[test]
    fn iid_normal_exact_fit() {
        let m = linear(CoefficientSequence::finite(vec![1.0]).unwrap(), InnovationSpace::normal(1.0).unwrap());
        let out = clt_test(&m, 1, 5000, 11, &TestOptions::default()).unwrap();
        assert_eq!(out.sigma2.value, 1.0);
        assert!(out.results[0].1.pass);
    }

    #[test]
    fn refusals() {
        let tel = linear(CoefficientSequence::finite(vec![1.0, -1.0]).unwrap(), InnovationSpace::normal(1.0).unwrap());
        assert_eq!(clt_test(&tel, 64, 1000, 1, &TestOptions::default()).unwrap_err(), LabError::DegenerateVariance);
        let div = ProcessModel::Linear(
            CausalLinearModel::new(
                CoefficientSequence::power_log(1.0, 1.0, 1.0).unwrap(),
                InnovationSpace::normal(1.0).unwrap(),
                Some(1000),
            )
            .unwrap(),
        );
        assert!(matches!(
            wip_sup_test(&div, 64, 1000, 1, &TestOptions::default()),
            Err(LabError::DivergentReference(_))
        ));
    }

    #[test]
    fn boundedness_flags() {
        let iid = linear(CoefficientSequence::finite(vec![1.0]).unwrap(), InnovationSpace::rademacher());
        let t = boundedness_diagnostic(&iid, &[10, 100, 1000], 0, 0, None).unwrap();
        assert_eq!(t.flag, BoundednessFlag::Stable);
        let tel = linear(CoefficientSequence::finite(vec![1.0, -1.0]).unwrap(), InnovationSpace::rademacher());
        let t = boundedness_diagnostic(&tel, &[10, 100, 1000], 0, 0, None).unwrap();
        assert_eq!((t.flag, t.limit, t.ratio_to_limit), (BoundednessFlag::Converging, Some(0.0), None));
        let geo = linear(CoefficientSequence::geometric(0.5).unwrap(), InnovationSpace::rademacher());
        let t = boundedness_diagnostic(&geo, &[1000, 10_000, 100_000], 200, 3, None).unwrap();
        assert_eq!(t.flag, BoundednessFlag::Converging);
        assert!((t.ratio_to_limit.unwrap() - 1.0).abs() < 1e-3);
        assert!(t.rows.iter().all(|r| r.q90.unwrap() > 0.0));
    }

    #[test]
    fn drift_decays_for_geometric() {
        let geo = linear(CoefficientSequence::geometric(0.5).unwrap(), InnovationSpace::normal(1.0).unwrap());
        let pasts = draw_pasts(&geo, 500, 2);
        let rows = drift_decay(&geo, &[64, 256, 1024], &pasts, None).unwrap();
        assert!(rows.windows(2).all(|w| w[1].value < w[0].value));
        let one = drift_decay(&geo, &[64], &pasts, Some(1)).unwrap();
        assert_eq!(one[0], rows[0]);
    }
}
