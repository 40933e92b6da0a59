//! Gordin's martingale approximant and the approximation error functionals
//! `n^{-1}‖S_n − M_n‖²` (plain and maximal, annealed and quenched).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::models::oracle::{self, coordinate_sums, perturbation_bound, LagBasis};
use crate::models::{
    Alphas, Coord, EstimationBudget, HolderModel, OracleValue, ProcessModel, Projection, SemiLinearModel,
};
use crate::numeric::CompensatedSum;
use crate::simulate::{replicate_batch, BatchOptions};

/// `D_N = Σ_{k≤N} P_0(X_k)` as a function of the single coordinate `ω_0`.
#[derive(Clone)]
pub struct MartingaleApproximant {
    pub truncation: usize,
    pub increment: Projection,
    /// `‖D_N‖₂`.
    pub norm: f64,
    /// `(M, ‖D_{2M} − D_M‖₂)` for dyadic `M ≤ N`.
    pub cauchy: Vec<(usize, f64)>,
    /// Whether `Σ_k P_0(X_k)` is known to converge.
    pub converges: Option<bool>,
    /// Coordinates of `D_N` in the model's lag basis.
    pub(crate) coords: Vec<f64>,
}

impl fmt::Debug for MartingaleApproximant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MartingaleApproximant")
            .field("truncation", &self.truncation)
            .field("increment", &self.increment)
            .field("norm", &self.norm)
            .field("cauchy", &self.cauchy)
            .field("converges", &self.converges)
            .finish()
    }
}

impl MartingaleApproximant {
    /// For linear models, the scalar `c` with `D = c ε_0`.
    pub fn scalar(&self) -> Option<f64> {
        match self.increment {
            Projection::Scaled { coef } => Some(coef),
            _ => None,
        }
    }
}

/// Basis coordinates of `D_N`; exact in `N` for linear and factorized
/// models, `P_min(N,L)` for tables and function lists.
fn increment_coords(model: &ProcessModel, basis: &LagBasis<'_>, big_n: usize) -> Vec<f64> {
    match model {
        ProcessModel::Linear(m) => {
            let c: CompensatedSum = (0..=big_n).map(|k| m.coeffs().value(k)).collect();
            vec![c.value()]
        }
        ProcessModel::SemiLinear(s) => match s.alphas() {
            Alphas::Factorized { coeffs, shapes } => {
                let period = shapes.len();
                let mut class = vec![CompensatedSum::new(); period];
                for k in 0..=big_n {
                    class[k % period].add(coeffs.value(k));
                }
                let c: Vec<f64> = class.iter().map(|a| a.value()).collect();
                match s.shapes_on_atoms() {
                    Some(h) => {
                        let width = h[0].len();
                        (0..width)
                            .map(|m| c.iter().zip(&h).map(|(cp, hp)| cp * hp[m]).sum())
                            .collect()
                    }
                    None => c,
                }
            }
            _ => basis.prefix(big_n),
        },
        ProcessModel::Holder(_) => unreachable!("no lag basis for Hölder models"),
    }
}

fn increment_projection(model: &SemiLinearModel, coords: &[f64]) -> Projection {
    if model.space().is_discrete() {
        return Projection::Atoms(coords.to_vec());
    }
    let c = coords.to_vec();
    match model.alphas() {
        Alphas::Factorized { .. } => {
            let m = model.clone();
            Projection::Function(Arc::new(move |x| m.shape_combination(&c, x)))
        }
        _ => {
            let m = model.clone();
            Projection::Function(Arc::new(move |x| {
                c.iter().enumerate().map(|(j, w)| w * m.alpha_at_value(j, x)).sum()
            }))
        }
    }
}

/// `D_N = Σ_{k=0}^{N} P_0(X_k)` with Cauchy diagnostics over dyadic `M ≤ N`.
pub fn gordin_increment(model: &ProcessModel, big_n: usize) -> Result<MartingaleApproximant> {
    let basis = model.basis("gordin_increment")?;
    let coords = increment_coords(model, &basis, big_n);
    let norm = basis.norm2(&coords).max(0.0).sqrt();
    let mut cauchy = Vec::new();
    let mut m = 1usize;
    while m <= big_n {
        let a = increment_coords(model, &basis, m);
        let b = increment_coords(model, &basis, 2 * m);
        let diff: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        cauchy.push((m, basis.norm2(&diff).max(0.0).sqrt()));
        m *= 2;
    }
    let increment = match model {
        ProcessModel::Linear(_) => Projection::Scaled { coef: coords[0] },
        ProcessModel::SemiLinear(s) => increment_projection(s, &coords),
        ProcessModel::Holder(_) => unreachable!(),
    };
    Ok(MartingaleApproximant {
        truncation: big_n,
        increment,
        norm,
        cauchy,
        converges: model.gordin_series_converges(),
        coords,
    })
}

/// `‖D‖²₂` for a Hölder model by nested Monte Carlo (value, standard error).
pub fn holder_increment_norm(model: &HolderModel, budget: EstimationBudget, seed: u64) -> Result<(f64, f64)> {
    let e = model.martingale_norm(budget, seed)?;
    Ok((e.norm2, e.se2))
}

/// `n^{-1}‖S_n − Σ_{k=1}^{n} D∘T^k‖²₂` by the coordinate oracle. With
/// `centered`, the `F_0`-measurable part `E(S_n | F_0)` is dropped: this is
/// the quenched error, the same for every past.
pub fn ma_error_exact(model: &ProcessModel, d: &MartingaleApproximant, n: usize, centered: bool) -> Result<OracleValue> {
    if n == 0 {
        return Err(LabError::param("n", "horizon must be ≥ 1"));
    }
    let basis = model.basis("ma_error_exact")?;
    let sums = coordinate_sums(&basis, n, Some(&d.coords));
    let total = if centered { sums.future } else { sums.total() };
    let nf = n as f64;
    Ok(OracleValue {
        value: total / nf,
        err_bound: perturbation_bound(total, model.truncation_norm(n)) / nf,
    })
}

/// Monte Carlo estimate with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
    pub replicates: usize,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64]) -> Self {
        let r = samples.len() as f64;
        let mean = samples.iter().copied().collect::<CompensatedSum>().value() / r;
        let var = samples.iter().map(|x| (x - mean).powi(2)).collect::<CompensatedSum>().value() / (r - 1.0).max(1.0);
        Self {
            value: mean,
            se: (var / r).sqrt(),
            replicates: samples.len(),
        }
    }
}

/// Options of the Monte Carlo error functionals.
#[derive(Debug, Clone, Copy, Default)]
pub struct McOptions<'a> {
    /// Pinned past `ω_0, ω_{-1}, …` in native form.
    pub past: Option<&'a [Coord]>,
    /// Remove `E(S_k | F_0)` from the deviation; needs a pinned past.
    pub centered: bool,
    pub workers: Option<usize>,
}

/// Plain and maximal error estimates from one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorEstimates {
    /// `n^{-1} E(S_n − M_n)²`
    pub plain: McEstimate,
    /// `n^{-1} E max_{k≤n} (S_k − M_k)²`
    pub maximal: McEstimate,
}

impl ErrorEstimates {
    pub fn get(&self, maximal: bool) -> McEstimate {
        if maximal {
            self.maximal
        } else {
            self.plain
        }
    }
}

/// Monte Carlo error functionals; averages over futures only when a past is
/// pinned, and with `centered` measures `S_k − E(S_k | F_0) − M_k`.
pub fn ma_error_mc(
    model: &ProcessModel,
    d: &MartingaleApproximant,
    n: usize,
    replicates: usize,
    seed: u64,
    options: McOptions<'_>,
) -> Result<ErrorEstimates> {
    if let ProcessModel::Holder(_) = model {
        return Err(LabError::Unsupported {
            operation: "ma_error_mc",
            family: "holder",
        });
    }
    let drift = match (options.centered, options.past) {
        (false, _) => Vec::new(),
        (true, Some(past)) => {
            if past.len() < model.lag() {
                return Err(LabError::InsufficientPast {
                    required: model.lag(),
                    supplied: past.len(),
                });
            }
            oracle::conditional_increments(&model.basis("ma_error_mc")?, n, past)?
        }
        (true, None) => return Err(LabError::param("centered", "a pinned past is required")),
    };
    let batch = replicate_batch(
        model,
        n,
        replicates,
        seed,
        &BatchOptions {
            past: options.past,
            martingale: Some(&d.increment),
            drift: &drift,
            workers: options.workers,
        },
    )?;
    let nf = n as f64;
    let sq = |v: Option<f64>| v.map_or(f64::NAN, |v| v * v / nf);
    let plain: Vec<f64> = batch.stats.iter().map(|s| sq(s.end_dev)).collect();
    let maximal: Vec<f64> = batch.stats.iter().map(|s| sq(s.max_absdev)).collect();
    Ok(ErrorEstimates {
        plain: McEstimate::from_samples(&plain),
        maximal: McEstimate::from_samples(&maximal),
    })
}

/// `n^{-1} Σ_{k=1}^{n} E(X_0 E(S_{k−1} | F_{−N}))`.
pub fn remote_covariance_statistic(model: &ProcessModel, big_n: usize, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(LabError::param("n", "horizon must be ≥ 1"));
    }
    Ok(oracle::remote_covariance(model.basis("remote_covariance_statistic")?, big_n, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RemoteCovarianceRow {
    #[serde(rename = "N")]
    pub big_n: usize,
    pub n: usize,
    pub value: f64,
}

/// The statistic over an `(N, n)` grid.
pub fn remote_covariance_grid(model: &ProcessModel, big_ns: &[usize], ns: &[usize]) -> Result<Vec<RemoteCovarianceRow>> {
    let cells = big_ns.len().saturating_mul(ns.len());
    let work = cells.saturating_mul(ns.iter().copied().max().unwrap_or(0) + model.lag());
    if work > 1 << 34 {
        return Err(LabError::Budget(format!("remote-covariance grid of {cells} cells is too large")));
    }
    let mut out = Vec::with_capacity(cells);
    for &big_n in big_ns {
        for &n in ns {
            out.push(RemoteCovarianceRow {
                big_n,
                n,
                value: remote_covariance_statistic(model, big_n, n)?,
            });
        }
    }
    Ok(out)
}

/// `E sup_{k≥N} |Σ_{i≥k} P_0(X_i)|²`.
///
/// Linear: `σ² (sup_{k≥N} |Σ_{i≥k} a_i|)²` from the signed tails. Discrete
/// semi-linear: the supremum is taken pointwise on each atom. The bound
/// covers tails beyond the truncation lag.
pub fn tail_sup_statistic(model: &ProcessModel, big_n: usize) -> Result<OracleValue> {
    match model {
        ProcessModel::Linear(m) => {
            let l = m.lag();
            let var = m.innovation().variance();
            let seq = m.coeffs();
            let beyond = match seq.tail_sum(l + 1) {
                Some(t) if t.is_finite() => t.value,
                _ => {
                    return Ok(OracleValue {
                        value: f64::INFINITY,
                        err_bound: 0.0,
                    })
                }
            };
            // |tail_k| for k > L + 1 is at most Σ_{i>L} |a_i|
            let slack = seq.abs().tail_sum(l + 1).map(|t| t.upper).unwrap_or(f64::INFINITY);
            let mut tail = CompensatedSum::from_value(beyond);
            let mut sup = if big_n <= l + 1 { beyond.abs() } else { 0.0 };
            for k in (big_n..=l).rev() {
                tail.add(m.coef(k));
                sup = sup.max(tail.value().abs());
            }
            let value = var * sup * sup;
            let hi = var * sup.max(slack).powi(2);
            Ok(OracleValue {
                value,
                err_bound: if big_n > l { hi } else { hi - value },
            })
        }
        ProcessModel::SemiLinear(s) => {
            let probs = s.space().probs().ok_or(LabError::Unsupported {
                operation: "tail_sup_statistic",
                family: "sampler-space semi-linear",
            })?;
            let l = s.lag();
            let width = probs.len();
            let mut tail = vec![CompensatedSum::new(); width];
            let mut sup = vec![0.0f64; width];
            for k in (big_n.min(l + 1)..=l).rev() {
                let row = s.row(k).unwrap();
                for m in 0..width {
                    tail[m].add(row[m]);
                    if k >= big_n {
                        sup[m] = sup[m].max(tail[m].value().abs());
                    }
                }
            }
            let value: f64 = probs.iter().zip(&sup).map(|(p, v)| p * v * v).sum();
            let err_bound = if s.tail_bound() == 0.0 {
                0.0
            } else {
                match s.alphas() {
                    Alphas::Factorized { coeffs, .. } => {
                        let hmax = s
                            .shapes_on_atoms()
                            .map(|h| h.iter().flatten().fold(0.0f64, |a, x| a.max(x.abs())))
                            .unwrap_or(f64::INFINITY);
                        let a = coeffs.abs().tail_sum(l + 1).map(|t| t.upper).unwrap_or(f64::INFINITY);
                        let r = hmax * a;
                        let top = sup.iter().fold(0.0f64, |x, y| x.max(*y));
                        2.0 * top * r + r * r
                    }
                    _ => f64::INFINITY,
                }
            };
            Ok(OracleValue { value, err_bound })
        }
        ProcessModel::Holder(_) => Err(LabError::Unsupported {
            operation: "tail_sup_statistic",
            family: "holder",
        }),
    }
}

/// The four approximation functionals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Functional {
    #[serde(rename = "MA")]
    Ma,
    #[serde(rename = "MMA")]
    Mma,
    #[serde(rename = "MA0")]
    Ma0,
    #[serde(rename = "MMA0")]
    Mma0,
}

impl Functional {
    pub fn as_str(self) -> &'static str {
        match self {
            Functional::Ma => "MA",
            Functional::Mma => "MMA",
            Functional::Ma0 => "MA0",
            Functional::Mma0 => "MMA0",
        }
    }

    pub fn maximal(self) -> bool {
        matches!(self, Functional::Mma | Functional::Mma0)
    }

    pub fn quenched(self) -> bool {
        matches!(self, Functional::Ma0 | Functional::Mma0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ExactOracle,
    MonteCarlo,
}

/// One row of an approximation report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproximationRow {
    pub model_id: String,
    pub functional: Functional,
    pub n: usize,
    pub value: f64,
    pub se: f64,
    pub method: Method,
    pub past_id: Option<usize>,
    pub trunc_n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ApproximationReport {
    pub rows: Vec<ApproximationRow>,
}

impl ApproximationReport {
    /// Whether the values of `functional` for `method` decrease strictly
    /// along the horizon grid, with last below `first / ratio`.
    pub fn decays(&self, functional: Functional, method: Method, ratio: f64) -> bool {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.functional == functional && r.method == method && r.past_id.is_none())
            .map(|r| r.value)
            .collect();
        vals.len() >= 2 && vals.windows(2).all(|w| w[1] < w[0]) && vals[vals.len() - 1] < vals[0] / ratio
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CausalLinearModel, InnovationSpace};
    use crate::sequences::{counterexample_sequence, CoefficientSequence};

    fn linear(seq: CoefficientSequence) -> ProcessModel {
        ProcessModel::Linear(CausalLinearModel::new(seq, InnovationSpace::rademacher(), None).unwrap())
    }

    #[test]
    fn gordin_increments_of_worked_examples() {
        let iid = linear(CoefficientSequence::finite(vec![1.0]).unwrap());
        let d = gordin_increment(&iid, 5).unwrap();
        assert_eq!(d.scalar(), Some(1.0));
        assert_eq!(d.norm, 1.0);
        let geo = linear(CoefficientSequence::geometric(0.5).unwrap());
        let d = gordin_increment(&geo, 40).unwrap();
        assert!((d.scalar().unwrap() - (2.0 - 2f64.powi(-40))).abs() < 1e-15);
        assert_eq!(d.converges, Some(true));
        // Cauchy: ‖D_{2M} − D_M‖ = 2^{-M}(1 − 2^{-M})
        for &(m, v) in &d.cauchy {
            let exact = 2f64.powi(-(m as i32)) * (1.0 - 2f64.powi(-(m as i32)));
            assert!((v - exact).abs() < 1e-15);
        }
        let tel = linear(CoefficientSequence::finite(vec![1.0, -1.0]).unwrap());
        assert_eq!(gordin_increment(&tel, 3).unwrap().scalar(), Some(0.0));
    }

    #[test]
    fn ma_error_of_iid_and_telescoping() {
        let iid = linear(CoefficientSequence::finite(vec![1.0]).unwrap());
        let d = gordin_increment(&iid, 0).unwrap();
        for n in [1usize, 64, 4096] {
            assert_eq!(ma_error_exact(&iid, &d, n, false).unwrap().value, 0.0);
        }
        let tel = linear(CoefficientSequence::finite(vec![1.0, -1.0]).unwrap());
        let d = gordin_increment(&tel, 4).unwrap();
        for n in [1usize, 3, 1024] {
            let v = ma_error_exact(&tel, &d, n, false).unwrap().value;
            assert!((v - 2.0 / n as f64).abs() <= 1e-12 * 2.0 / n as f64);
        }
    }

    #[test]
    fn exact_error_matches_coefficient_brute_force() {
        // S_n − M_n = Σ_t b_t ε_t, b_t = Σ_{k=1}^{n} a_{k−t} − c·1{1≤t≤n}
        let seq = CoefficientSequence::finite(vec![0.7, -0.2, 0.4, 0.1, -0.3]).unwrap();
        let a: Vec<f64> = (0..5).map(|k| seq.value(k)).collect();
        let m = linear(seq);
        for big_n in [0usize, 2, 10] {
            let d = gordin_increment(&m, big_n).unwrap();
            let c = d.scalar().unwrap();
            for n in [1usize, 3, 17] {
                let mut future = 0.0;
                let mut total = 0.0;
                for t in -(a.len() as i64)..=n as i64 {
                    let mut b: f64 = (1..=n as i64).filter(|k| (0..5).contains(&(k - t))).map(|k| a[(k - t) as usize]).sum();
                    if t >= 1 {
                        b -= c;
                        future += b * b;
                    }
                    total += b * b;
                }
                let v = ma_error_exact(&m, &d, n, false).unwrap().value;
                let v0 = ma_error_exact(&m, &d, n, true).unwrap().value;
                assert!((v - total / n as f64).abs() < 1e-12, "{big_n} {n}");
                assert!((v0 - future / n as f64).abs() < 1e-12, "{big_n} {n}");
            }
        }
    }

    #[test]
    fn mc_matches_exact_for_geometric() {
        let geo = linear(CoefficientSequence::geometric(0.5).unwrap());
        let d = gordin_increment(&geo, 60).unwrap();
        let n = 64;
        let exact = ma_error_exact(&geo, &d, n, false).unwrap().value;
        let both = ma_error_mc(&geo, &d, n, 4000, 3, McOptions::default()).unwrap();
        let mc = both.plain;
        assert!((mc.value - exact).abs() < 4.0 * mc.se, "{mc:?} vs {exact}");
        assert!(both.maximal.value >= mc.value);
    }

    #[test]
    fn maximal_error_matches_enumeration_at_small_n() {
        // a = (1, −1), D = 0: S_k = ε_k − ε_0. Enumerate all 2^9 sign patterns at n = 8.
        let tel = linear(CoefficientSequence::finite(vec![1.0, -1.0]).unwrap());
        let d = gordin_increment(&tel, 1).unwrap();
        let n = 8;
        let mut exact = 0.0;
        for mask in 0u32..512 {
            let e = |i: u32| if mask >> i & 1 == 1 { 1.0f64 } else { -1.0 };
            let mx = (1..=n).map(|k| (e(k) - e(0)).abs()).fold(0.0, f64::max);
            exact += mx * mx / 512.0;
        }
        exact /= n as f64;
        let mc = ma_error_mc(&tel, &d, n as usize, 20_000, 1, McOptions::default()).unwrap().maximal;
        assert!((mc.value - exact).abs() < 4.0 * mc.se, "{mc:?} vs {exact}");
    }

    #[test]
    fn quenched_centered_error_is_past_independent() {
        use crate::models::{Alphas, NamedShape, SemiLinearModel, Shape};
        use crate::simulate::draw_pasts;
        let space = InnovationSpace::discrete(vec![-1.0, 0.0, 2.0], vec![0.5, 0.25, 0.25]).unwrap();
        let m = ProcessModel::SemiLinear(
            SemiLinearModel::new(
                space,
                Alphas::Factorized {
                    coeffs: CoefficientSequence::geometric(0.6).unwrap(),
                    shapes: vec![Shape::Named(NamedShape::Identity), Shape::Named(NamedShape::CenteredSquare)],
                },
                None,
            )
            .unwrap(),
        );
        let d = gordin_increment(&m, m.lag()).unwrap();
        let n = 128;
        let exact = ma_error_exact(&m, &d, n, true).unwrap();
        for (p, past) in draw_pasts(&m, 3, 4).iter().enumerate() {
            let native = m.native_past(past, m.lag()).unwrap();
            let e = ma_error_mc(
                &m,
                &d,
                n,
                4000,
                10 + p as u64,
                McOptions {
                    past: Some(&native),
                    centered: true,
                    ..Default::default()
                },
            )
            .unwrap()
            .plain;
            assert!((e.value - exact.value).abs() < 4.0 * e.se + exact.err_bound, "{e:?} vs {exact:?}");
        }
    }

    #[test]
    fn remote_covariance_examples() {
        let iid = linear(CoefficientSequence::finite(vec![1.0]).unwrap());
        for big_n in 1..4 {
            assert_eq!(remote_covariance_statistic(&iid, big_n, 50).unwrap(), 0.0);
        }
        let geo = linear(CoefficientSequence::geometric(0.5).unwrap());
        let grid = remote_covariance_grid(&geo, &[1, 2, 4, 8, 16], &[16, 256, 4096]).unwrap();
        for n in [16usize, 256, 4096] {
            let col: Vec<f64> = grid.iter().filter(|r| r.n == n).map(|r| r.value).collect();
            assert!(col.windows(2).all(|w| w[1] <= w[0]), "{col:?}");
        }
    }

    #[test]
    fn tail_sup_examples() {
        let iid = linear(CoefficientSequence::finite(vec![1.0]).unwrap());
        assert_eq!(tail_sup_statistic(&iid, 1).unwrap().value, 0.0);
        let geo = linear(CoefficientSequence::geometric(0.5).unwrap());
        let v = tail_sup_statistic(&geo, 10).unwrap();
        assert!((v.value - 2f64.powi(-18)).abs() < 1e-18);
        let spikes = ProcessModel::Linear(
            CausalLinearModel::new(counterexample_sequence(0.75).unwrap(), InnovationSpace::rademacher(), Some(1 << 12))
                .unwrap(),
        );
        let vals: Vec<f64> = [2usize, 16, 128, 1024].iter().map(|&n| tail_sup_statistic(&spikes, n).unwrap().value).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]), "{vals:?}");
    }
}
