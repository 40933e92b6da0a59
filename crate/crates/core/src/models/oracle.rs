//! Exact second-order oracles for linear and semi-linear models.
//!
//! Every lag function is written as a vector in a finite basis of
//! `L²(μ)` with Gram matrix `G`: the single coordinate `x` for linear
//! models, atom indicators for tables, the shape functions for factorized
//! samplers and the lag functions themselves for function lists. Partial
//! sums then decompose over coordinates,
//!
//! ```text
//! S_n = Σ_{t<n} C_t(ω_{n-t}) + Σ_{s<L} W_s(ω_{-s}),
//! C_t = P_{min(t,L)},   W_s = P_{min(n+s,L)} − P_s,   P_j = Σ_{i≤j} α_i,
//! ```
//!
//! and the coordinates are independent, so second moments are sums of
//! squared norms.

use rustfft::{num_complex::Complex, FftPlanner};

use super::linear::CausalLinearModel;
use super::semilinear::{AlphaFn, LagFunctions, SemiLinearModel, ShapeFn};
use super::space::InnovationSpace;
use super::Coord;
use crate::error::{LabError, Result};
use crate::numeric::CompensatedSum;

/// Direct `O(L·n)` evaluation of conditional drifts is used below this
/// many operations; larger problems go through FFT correlation.
const DIRECT_DRIFT_LIMIT: usize = 1 << 24;

enum Kind<'a> {
    Linear {
        model: &'a CausalLinearModel,
        variance: f64,
        points: Option<&'a [f64]>,
    },
    Table {
        values: &'a [f64],
        probs: &'a [f64],
    },
    Shapes {
        coeffs: &'a [f64],
        shapes: &'a [ShapeFn],
        gram: Vec<f64>,
    },
    Functions {
        fs: &'a [AlphaFn],
        gram: Vec<f64>,
    },
}

/// Lag functions `α_start..α_L` as basis vectors.
pub(crate) struct LagBasis<'a> {
    kind: Kind<'a>,
    width: usize,
    lag: usize,
    /// Lags below `start` are treated as zero.
    start: usize,
}

fn gram_matrix(space: &InnovationSpace, funcs: &[&dyn Fn(f64) -> f64]) -> Vec<f64> {
    let w = funcs.len();
    let mut g = vec![0.0; w * w];
    for p in 0..w {
        for q in p..w {
            let v = space.expect(|x| funcs[p](x) * funcs[q](x));
            g[p * w + q] = v;
            g[q * w + p] = v;
        }
    }
    g
}

impl<'a> LagBasis<'a> {
    pub(crate) fn linear(model: &'a CausalLinearModel) -> Self {
        Self {
            kind: Kind::Linear {
                model,
                variance: model.innovation().variance(),
                points: model.innovation().points(),
            },
            width: 1,
            lag: model.lag(),
            start: 0,
        }
    }

    pub(crate) fn semilinear(model: &'a SemiLinearModel) -> Self {
        let space = model.space();
        let (kind, width) = match model.lag_functions() {
            LagFunctions::Table { width, values } => (
                Kind::Table {
                    values: values.as_slice(),
                    probs: space.probs().expect("table over a discrete space"),
                },
                *width,
            ),
            LagFunctions::Factorized { coeffs, shapes } => {
                let evals: Vec<Box<dyn Fn(f64) -> f64>> = shapes
                    .iter()
                    .map(|&h| Box::new(move |x| h.eval(x)) as Box<dyn Fn(f64) -> f64>)
                    .collect();
                let refs: Vec<&dyn Fn(f64) -> f64> = evals.iter().map(|b| b.as_ref()).collect();
                (
                    Kind::Shapes {
                        coeffs: coeffs.as_slice(),
                        shapes: shapes.as_slice(),
                        gram: gram_matrix(space, &refs),
                    },
                    shapes.len(),
                )
            }
            LagFunctions::Functions(fs) => {
                let refs: Vec<&dyn Fn(f64) -> f64> = fs.iter().map(|f| f.as_ref() as &dyn Fn(f64) -> f64).collect();
                (
                    Kind::Functions {
                        fs: fs.as_slice(),
                        gram: gram_matrix(space, &refs),
                    },
                    fs.len(),
                )
            }
        };
        Self {
            kind,
            width,
            lag: model.lag(),
            start: 0,
        }
    }

    /// The same basis with `α_j` zeroed for `j < start`.
    pub(crate) fn starting_at(mut self, start: usize) -> Self {
        self.start = start;
        self
    }

    pub(crate) fn width(&self) -> usize {
        self.width
    }

    pub(crate) fn lag(&self) -> usize {
        self.lag
    }

    /// Adds `α_j` to the component accumulators.
    #[inline]
    fn accumulate(&self, j: usize, acc: &mut [CompensatedSum]) {
        if j < self.start || j > self.lag {
            return;
        }
        match &self.kind {
            Kind::Linear { model, .. } => acc[0].add(model.coef(j)),
            Kind::Table { values, .. } => {
                let row = &values[j * self.width..(j + 1) * self.width];
                for (a, v) in acc.iter_mut().zip(row) {
                    a.add(*v);
                }
            }
            Kind::Shapes { coeffs, .. } => acc[j % self.width].add(coeffs[j]),
            Kind::Functions { .. } => acc[j].add(1.0),
        }
    }

    /// `α_j` as a basis vector.
    pub(crate) fn vector(&self, j: usize) -> Vec<f64> {
        let mut acc = vec![CompensatedSum::new(); self.width];
        self.accumulate(j, &mut acc);
        acc.iter().map(|a| a.value()).collect()
    }

    pub(crate) fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        match &self.kind {
            Kind::Linear { variance, .. } => variance * u[0] * v[0],
            Kind::Table { probs, .. } => {
                let mut acc = CompensatedSum::new();
                for ((a, b), p) in u.iter().zip(v).zip(probs.iter()) {
                    acc.add(p * a * b);
                }
                acc.value()
            }
            Kind::Shapes { gram, .. } | Kind::Functions { gram, .. } => {
                let w = self.width;
                let mut acc = CompensatedSum::new();
                for p in 0..w {
                    if u[p] == 0.0 {
                        continue;
                    }
                    for q in 0..w {
                        acc.add(u[p] * gram[p * w + q] * v[q]);
                    }
                }
                acc.value()
            }
        }
    }

    #[inline]
    pub(crate) fn norm2(&self, v: &[f64]) -> f64 {
        self.inner(v, v)
    }

    /// Basis functions evaluated at one coordinate.
    pub(crate) fn basis_values(&self, c: Coord) -> Result<Vec<f64>> {
        let value = |c: Coord, points: Option<&[f64]>| -> Result<f64> {
            match c {
                Coord::Value(x) => Ok(x),
                Coord::Index(m) => points
                    .and_then(|p| p.get(m as usize).copied())
                    .ok_or_else(|| LabError::PastMismatch(format!("atom index {m} is not valid here"))),
            }
        };
        match &self.kind {
            Kind::Linear { points, .. } => Ok(vec![value(c, *points)?]),
            Kind::Table { .. } => match c {
                Coord::Index(m) if (m as usize) < self.width => {
                    let mut e = vec![0.0; self.width];
                    e[m as usize] = 1.0;
                    Ok(e)
                }
                _ => Err(LabError::PastMismatch("table models take atom indices".into())),
            },
            Kind::Shapes { shapes, .. } => {
                let x = value(c, None)?;
                Ok(shapes.iter().map(|h| h.eval(x)).collect())
            }
            Kind::Functions { fs, .. } => {
                let x = value(c, None)?;
                Ok(fs.iter().map(|f| f(x)).collect())
            }
        }
    }

    /// `v(c) = Σ_p v_p b_p(c)`.
    pub(crate) fn eval(&self, v: &[f64], c: Coord) -> Result<f64> {
        let b = self.basis_values(c)?;
        Ok(v.iter().zip(&b).map(|(x, y)| x * y).sum())
    }

    /// Prefix `P_min(j, L)` as a vector.
    pub(crate) fn prefix(&self, j: usize) -> Vec<f64> {
        let mut c = Cursor::new(self.width);
        c.advance_to(self, j.min(self.lag));
        c.values()
    }
}

/// Compensated running prefix `P_pos`.
struct Cursor {
    next: usize,
    acc: Vec<CompensatedSum>,
}

impl Cursor {
    fn new(width: usize) -> Self {
        Self {
            next: 0,
            acc: vec![CompensatedSum::new(); width],
        }
    }

    /// Includes lags up to and including `j`.
    fn advance_to(&mut self, basis: &LagBasis<'_>, j: usize) {
        while self.next <= j {
            basis.accumulate(self.next, &mut self.acc);
            self.next += 1;
        }
    }

    fn values(&self) -> Vec<f64> {
        self.acc.iter().map(|a| a.value()).collect()
    }
}

/// Second moments of the two coordinate blocks of `S_n − M_n`, where
/// `M_n = Σ_{u=1}^{n} d(ω_u)` (`d = 0` gives `Var(S_n)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct CoordinateSums {
    /// `Σ_{t<n} ‖C_t − d‖²`, the coordinates `ω_1..ω_n`.
    pub future: f64,
    /// `Σ_{s<L} ‖W_s‖²`, the coordinates `ω_0, ω_{-1}, …`.
    pub past: f64,
}

impl CoordinateSums {
    pub fn total(&self) -> f64 {
        self.future + self.past
    }
}

pub(crate) fn coordinate_sums(basis: &LagBasis<'_>, n: usize, d: Option<&[f64]>) -> CoordinateSums {
    let w = basis.width();
    let l = basis.lag();
    let zero = vec![0.0; w];
    let d = d.unwrap_or(&zero);
    let diff = |p: &[f64]| -> Vec<f64> { p.iter().zip(d).map(|(a, b)| a - b).collect() };

    let mut future = CompensatedSum::new();
    let mut cur = Cursor::new(w);
    for t in 0..n.min(l) {
        cur.advance_to(basis, t);
        future.add(basis.norm2(&diff(&cur.values())));
    }
    if n > l {
        cur.advance_to(basis, l);
        future.add((n - l) as f64 * basis.norm2(&diff(&cur.values())));
    }

    let mut past = CompensatedSum::new();
    let mut lagging = Cursor::new(w);
    let mut leading = Cursor::new(w);
    for s in 0..l {
        lagging.advance_to(basis, s);
        leading.advance_to(basis, (n + s).min(l));
        let lead = leading.values();
        let lagv = lagging.values();
        let v: Vec<f64> = lead.iter().zip(&lagv).map(|(a, b)| a - b).collect();
        past.add(basis.norm2(&v));
    }
    CoordinateSums {
        future: future.value(),
        past: past.value(),
    }
}

/// Bound on `|E Q² − E Q_L²|` when `‖Q − Q_L‖₂ ≤ r` and `E Q_L² = v`.
pub(crate) fn perturbation_bound(v: f64, r: f64) -> f64 {
    2.0 * v.max(0.0).sqrt() * r + r * r
}

/// `E(X_k | F_0) = Σ_s α_{k+s}(ω_{-s})` for `k = 1..=min(n, L)`.
pub(crate) fn conditional_increments(basis: &LagBasis<'_>, n: usize, past: &[Coord]) -> Result<Vec<f64>> {
    increments_with_limit(basis, n, past, DIRECT_DRIFT_LIMIT)
}

fn increments_with_limit(basis: &LagBasis<'_>, n: usize, past: &[Coord], direct_limit: usize) -> Result<Vec<f64>> {
    let l = basis.lag();
    let horizon = n.min(l);
    if horizon == 0 {
        return Ok(Vec::new());
    }
    // b[s][p] = b_p(ω_{-s}) for s = 0..L-1
    let b: Vec<Vec<f64>> = past[..l].iter().map(|&c| basis.basis_values(c)).collect::<Result<_>>()?;
    let w = basis.width();
    if horizon.saturating_mul(l).saturating_mul(w) <= direct_limit {
        let vectors: Vec<Vec<f64>> = (0..=l).map(|j| basis.vector(j)).collect();
        return Ok((1..=horizon)
            .map(|k| {
                let mut acc = CompensatedSum::new();
                for s in 0..=(l - k) {
                    let v = &vectors[k + s];
                    for p in 0..w {
                        acc.add(v[p] * b[s][p]);
                    }
                }
                acc.value()
            })
            .collect());
    }
    // cross-correlation per basis component via FFT
    let size = (2 * (l + 1)).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut out = vec![0.0; horizon];
    for p in 0..w {
        let mut a: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); size];
        for (j, slot) in a.iter_mut().enumerate().take(l + 1) {
            slot.re = basis.vector(j)[p];
        }
        // reversed past so that the convolution index is k + s − s = k
        let mut r: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); size];
        for (s, row) in b.iter().take(l).enumerate() {
            r[(size - s) % size].re = row[p];
        }
        fwd.process(&mut a);
        fwd.process(&mut r);
        for (x, y) in a.iter_mut().zip(&r) {
            *x *= y;
        }
        inv.process(&mut a);
        let scale = 1.0 / size as f64;
        for k in 1..=horizon {
            out[k - 1] += a[k].re * scale;
        }
    }
    Ok(out)
}

/// `γ_N(i) = Σ_{m≥N} ⟨α_m, α_{m+i}⟩` (truncated lags).
pub(crate) fn tail_covariance(basis: &LagBasis<'_>, big_n: usize, i: usize) -> f64 {
    let l = basis.lag();
    let mut acc = CompensatedSum::new();
    let mut m = big_n;
    while m + i <= l {
        acc.add(basis.inner(&basis.vector(m), &basis.vector(m + i)));
        m += 1;
    }
    acc.value()
}

/// `n^{-1} Σ_{k=1}^{n} E(X_0 E(S_{k−1} | F_{−N}))`, through the variance of the
/// process built from `α_j, j ≥ N` only.
pub(crate) fn remote_covariance(basis: LagBasis<'_>, big_n: usize, n: usize) -> f64 {
    let gamma0 = tail_covariance(&basis, big_n, 0);
    let zeroed = basis.starting_at(big_n);
    let var = coordinate_sums(&zeroed, n, None).total();
    (var - n as f64 * gamma0) / (2.0 * n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::semilinear::linear_as_semilinear;
    use crate::sequences::CoefficientSequence;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear(a: Vec<f64>) -> CausalLinearModel {
        CausalLinearModel::new(
            CoefficientSequence::finite(a).unwrap(),
            InnovationSpace::rademacher(),
            None,
        )
        .unwrap()
    }

    /// Oracle: variance through the explicit coefficient of every coordinate,
    /// `g_{n,m} = Σ_{k=max(1,m)}^{n} a_{k−m}` for `m = 1−L..n`.
    fn brute_variance(a: &[f64], n: usize) -> f64 {
        let l = a.len() - 1;
        let mut total = 0.0;
        for m in (1 - l as i64)..=(n as i64) {
            let mut g = 0.0;
            for k in m.max(1)..=(n as i64) {
                let j = (k - m) as usize;
                if j <= l {
                    g += a[j];
                }
            }
            total += g * g;
        }
        total
    }

    #[test]
    fn variance_matches_coordinate_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let len = rng.random_range(1..12);
            let a: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = linear(a.clone());
            let l = m.lag();
            let a = &a[..=l];
            let basis = LagBasis::linear(&m);
            for n in [1usize, 2, 5, 17, 40] {
                let v = coordinate_sums(&basis, n, None).total();
                let b = brute_variance(a, n);
                assert!((v - b).abs() < 1e-12 * b.max(1.0), "n={n}: {v} vs {b}");
            }
        }
    }

    #[test]
    fn telescoping_variance_is_two() {
        let m = linear(vec![1.0, -1.0]);
        let basis = LagBasis::linear(&m);
        for n in [1usize, 2, 100, 4096] {
            assert_eq!(coordinate_sums(&basis, n, None).total(), 2.0);
        }
    }

    #[test]
    fn table_embedding_is_bit_identical_for_rademacher() {
        let m = CausalLinearModel::new(
            CoefficientSequence::geometric(0.5).unwrap(),
            InnovationSpace::rademacher(),
            Some(20),
        )
        .unwrap();
        let s = linear_as_semilinear(&m).unwrap();
        let (bl, bs) = (LagBasis::linear(&m), LagBasis::semilinear(&s));
        for n in [1usize, 7, 64, 1024] {
            assert_eq!(
                coordinate_sums(&bl, n, None).total().to_bits(),
                coordinate_sums(&bs, n, None).total().to_bits()
            );
        }
    }

    #[test]
    fn drift_direct_and_fft_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..300).map(|j| 0.97f64.powi(j) * rng.random_range(-1.0..1.0)).collect();
        let m = CausalLinearModel::new(
            CoefficientSequence::finite(a).unwrap(),
            InnovationSpace::normal(1.0).unwrap(),
            None,
        )
        .unwrap();
        let basis = LagBasis::linear(&m);
        let past: Vec<Coord> = (0..m.lag()).map(|_| Coord::Value(rng.random_range(-2.0..2.0))).collect();
        let direct = increments_with_limit(&basis, 250, &past, usize::MAX).unwrap();
        let fft = increments_with_limit(&basis, 250, &past, 0).unwrap();
        for (k, (x, y)) in direct.iter().zip(&fft).enumerate() {
            assert!((x - y).abs() < 1e-10, "k={}", k + 1);
        }
    }

    #[test]
    fn drift_fft_on_table_basis() {
        let space = InnovationSpace::discrete(vec![0.0, 1.0, 2.0], vec![0.25, 0.25, 0.5]).unwrap();
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|j| {
                let c = 0.8f64.powi(j);
                vec![c, c, -c]
            })
            .collect();
        let s = SemiLinearModel::from_rows(space, rows).unwrap();
        let basis = LagBasis::semilinear(&s);
        let past: Vec<Coord> = (0..s.lag()).map(|i| Coord::Index((i % 3) as u32)).collect();
        let direct = increments_with_limit(&basis, 60, &past, usize::MAX).unwrap();
        let fft = increments_with_limit(&basis, 60, &past, 0).unwrap();
        assert_eq!(direct.len(), s.lag());
        for (x, y) in direct.iter().zip(&fft) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn remote_covariance_matches_direct_covariance_sum() {
        let m = CausalLinearModel::new(
            CoefficientSequence::geometric(0.5).unwrap(),
            InnovationSpace::rademacher(),
            None,
        )
        .unwrap();
        for big_n in [1usize, 2, 5] {
            for n in [2usize, 9, 40] {
                let basis = LagBasis::linear(&m);
                let direct: f64 = (1..n).map(|i| (n - i) as f64 * tail_covariance(&basis, big_n, i)).sum::<f64>() / n as f64;
                let fast = remote_covariance(LagBasis::linear(&m), big_n, n);
                assert!((fast - direct).abs() < 1e-13, "N={big_n} n={n}: {fast} vs {direct}");
            }
        }
    }
}
