use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;

use super::streams::StreamId;
use crate::error::{LabError, Result};
use crate::models::{draw_coord, Coord, InnovationSpace, LagFunctions, ProcessModel, Projection, SemiLinearModel};

/// Largest number of coordinates `n + L` a single path may hold.
pub const MAX_PATH_COORDINATES: usize = 1 << 28;

/// Linear models switch to FFT convolution from this lag on.
pub const FFT_MIN_LAG: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Convolution {
    /// FFT for linear models with `L ≥ FFT_MIN_LAG`, direct otherwise.
    #[default]
    Auto,
    Direct,
    Fft,
}

/// Coordinates `ω_{1−L}..ω_n`, stored at position `m + L − 1`.
#[derive(Debug, Clone)]
pub(crate) enum CoordBuf {
    Idx(Vec<u32>),
    Val(Vec<f64>),
}

impl CoordBuf {
    fn for_model(model: &ProcessModel) -> Self {
        match model {
            ProcessModel::Linear(_) => CoordBuf::Val(Vec::new()),
            _ if model.space().is_discrete() => CoordBuf::Idx(Vec::new()),
            _ => CoordBuf::Val(Vec::new()),
        }
    }

    fn get(&self, pos: usize) -> Coord {
        match self {
            CoordBuf::Idx(v) => Coord::Index(v[pos]),
            CoordBuf::Val(v) => Coord::Value(v[pos]),
        }
    }
}

/// Running statistics of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerminalStats {
    pub s_n: f64,
    /// `max_{1≤k≤n} S_k`.
    pub max_s: f64,
    /// `max_{1≤k≤n} |S_k − M_k|` when paired with a martingale.
    pub max_absdev: Option<f64>,
    /// `S_n − M_n` when paired with a martingale.
    pub end_dev: Option<f64>,
}

/// A realized path `S_1..S_n` with its increments and running maxima.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialSumTrajectory {
    pub n: usize,
    pub stream: StreamId,
    pub increments: Vec<f64>,
    pub sums: Vec<f64>,
    pub running_max: Vec<f64>,
    /// `max_{k≤j} |S_k − M_k|` when paired with a martingale.
    pub running_max_abs_dev: Option<Vec<f64>>,
    /// `S_n − M_n` when paired with a martingale.
    pub end_dev: Option<f64>,
}

impl PartialSumTrajectory {
    pub fn terminal(&self) -> TerminalStats {
        TerminalStats {
            s_n: *self.sums.last().unwrap(),
            max_s: *self.running_max.last().unwrap(),
            max_absdev: self.running_max_abs_dev.as_ref().map(|v| *v.last().unwrap()),
            end_dev: self.end_dev,
        }
    }
}

/// Reusable per-worker buffers.
#[derive(Debug)]
pub(crate) struct Workspace {
    coords: CoordBuf,
    x: Vec<f64>,
    d: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(model: &ProcessModel) -> Self {
        Self {
            coords: CoordBuf::for_model(model),
            x: Vec::new(),
            d: Vec::new(),
        }
    }
}

pub(crate) fn check_budget(n: usize, lag: usize) -> Result<()> {
    if n == 0 {
        return Err(LabError::param("n", "horizon must be ≥ 1"));
    }
    let coords = n.checked_add(lag).filter(|&c| c <= MAX_PATH_COORDINATES);
    if coords.is_none() {
        return Err(LabError::Budget(format!(
            "a path of horizon {n} with lag {lag} exceeds {MAX_PATH_COORDINATES} coordinates"
        )));
    }
    Ok(())
}

fn check_past(model: &ProcessModel, past: Option<&[Coord]>) -> Result<()> {
    if let Some(p) = past {
        let l = model.lag();
        if p.len() < l {
            return Err(LabError::InsufficientPast {
                required: l,
                supplied: p.len(),
            });
        }
        for &c in &p[..l] {
            let ok = match (model, c) {
                (ProcessModel::Linear(_), Coord::Value(_)) => true,
                (_, Coord::Index(m)) => model.space().atoms().is_some_and(|w| (m as usize) < w),
                (_, Coord::Value(_)) => !model.space().is_discrete(),
            };
            if !ok {
                return Err(LabError::PastMismatch(
                    "past must be in native form (see ProcessModel::native_past)".into(),
                ));
            }
        }
    }
    Ok(())
}

/// Draws `ω_1..ω_n` first, then `ω_0, ω_{-1}, …` unless the past is pinned,
/// so that pinned and free runs of one stream share their futures.
fn fill_coordinates<R: rand::Rng + ?Sized>(
    model: &ProcessModel,
    n: usize,
    rng: &mut R,
    past: Option<&[Coord]>,
    buf: &mut CoordBuf,
) {
    let l = model.lag();
    let space = model.space();
    let total = n + l;
    let linear = matches!(model, ProcessModel::Linear(_));
    let draw = |rng: &mut R| -> Coord {
        if linear {
            Coord::Value(space.sample_value(rng))
        } else {
            draw_coord(space, rng)
        }
    };
    let put = |buf: &mut CoordBuf, pos: usize, c: Coord| match (buf, c) {
        (CoordBuf::Idx(v), Coord::Index(m)) => v[pos] = m,
        (CoordBuf::Val(v), Coord::Value(x)) => v[pos] = x,
        _ => unreachable!("coordinate kind fixed by the model"),
    };
    match buf {
        CoordBuf::Idx(v) => v.resize(total, 0),
        CoordBuf::Val(v) => v.resize(total, 0.0),
    }
    for pos in l..total {
        let c = draw(rng);
        put(buf, pos, c);
    }
    for s in 0..l {
        let c = match past {
            Some(p) => p[s],
            None => draw(rng),
        };
        put(buf, l - 1 - s, c);
    }
}

fn semilinear_increments(m: &SemiLinearModel, n: usize, buf: &CoordBuf, x: &mut [f64]) {
    let l = m.lag();
    x.iter_mut().for_each(|v| *v = 0.0);
    // X_i at x[i-1]; α_j reads position i − j + L − 1
    match (m.lag_functions(), buf) {
        (LagFunctions::Table { width, values }, CoordBuf::Idx(idx)) => {
            for j in 0..=l {
                let row = &values[j * width..(j + 1) * width];
                let src = &idx[l - j..l - j + n];
                for (xi, &m) in x.iter_mut().zip(src) {
                    *xi += row[m as usize];
                }
            }
        }
        (LagFunctions::Factorized { coeffs, shapes }, CoordBuf::Val(v)) => {
            let evaluated: Vec<Vec<f64>> = shapes.iter().map(|h| v.iter().map(|&y| h.eval(y)).collect()).collect();
            for j in 0..=l {
                let a = coeffs[j];
                let src = &evaluated[j % shapes.len()][l - j..l - j + n];
                for (xi, &h) in x.iter_mut().zip(src) {
                    *xi += a * h;
                }
            }
        }
        (LagFunctions::Functions(fs), CoordBuf::Val(v)) => {
            for (j, f) in fs.iter().enumerate() {
                let src = &v[l - j..l - j + n];
                for (xi, &y) in x.iter_mut().zip(src) {
                    *xi += f(y);
                }
            }
        }
        _ => unreachable!("coordinate kind fixed by the model"),
    }
}

fn linear_direct(reversed: &[f64], e: &[f64], x: &mut [f64]) {
    let len = reversed.len();
    for (i, xi) in x.iter_mut().enumerate() {
        let window = &e[i..i + len];
        let mut acc = [0.0f64; 4];
        let chunks = len / 4;
        for c in 0..chunks {
            let k = 4 * c;
            acc[0] += reversed[k] * window[k];
            acc[1] += reversed[k + 1] * window[k + 1];
            acc[2] += reversed[k + 2] * window[k + 2];
            acc[3] += reversed[k + 3] * window[k + 3];
        }
        let mut tail = 0.0;
        for k in 4 * chunks..len {
            tail += reversed[k] * window[k];
        }
        *xi = (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail;
    }
}

fn linear_fft(a: &[f64], e: &[f64], x: &mut [f64]) {
    let l = a.len() - 1;
    let size = (e.len() + a.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut fa: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); size];
    let mut fe = fa.clone();
    for (s, &v) in fa.iter_mut().zip(a) {
        s.re = v;
    }
    for (s, &v) in fe.iter_mut().zip(e) {
        s.re = v;
    }
    fwd.process(&mut fa);
    fwd.process(&mut fe);
    for (p, q) in fa.iter_mut().zip(&fe) {
        *p *= q;
    }
    inv.process(&mut fa);
    let scale = 1.0 / size as f64;
    for (i, xi) in x.iter_mut().enumerate() {
        *xi = fa[i + l].re * scale;
    }
}

/// `X_1..X_n` into `ws.x` from the coordinates already in `ws.coords`.
fn increments(model: &ProcessModel, n: usize, ws: &mut Workspace, method: Convolution) {
    ws.x.resize(n, 0.0);
    match model {
        ProcessModel::Linear(m) => {
            let CoordBuf::Val(e) = &ws.coords else { unreachable!() };
            let a = m.truncated_coeffs();
            let use_fft = match method {
                Convolution::Auto => m.lag() >= FFT_MIN_LAG,
                Convolution::Direct => false,
                Convolution::Fft => true,
            };
            if use_fft {
                linear_fft(&a, e, &mut ws.x);
            } else {
                let reversed: Vec<f64> = a.iter().rev().copied().collect();
                linear_direct(&reversed, e, &mut ws.x);
            }
        }
        ProcessModel::SemiLinear(m) => semilinear_increments(m, n, &ws.coords, &mut ws.x),
        ProcessModel::Holder(h) => {
            semilinear_increments(h.base(), n, &ws.coords, &mut ws.x);
            let c = h.centering().value;
            let f = h.function();
            ws.x.iter_mut().for_each(|y| *y = f.eval(*y) - c);
        }
    }
}

/// `d(ω_1)..d(ω_n)` into `ws.d`.
fn martingale_values(space: &InnovationSpace, d: &Projection, n: usize, l: usize, ws: &mut Workspace) -> Result<()> {
    ws.d.clear();
    for pos in l..l + n {
        let v = match (d, ws.coords.get(pos)) {
            (Projection::Atoms(v), Coord::Index(m)) => v[m as usize],
            (Projection::Scaled { coef }, Coord::Index(m)) => coef * space.points().unwrap()[m as usize],
            (p, Coord::Value(x)) => p.at(space, x)?,
            (Projection::Function(_), Coord::Index(_)) => {
                return Err(LabError::InvalidModel("function increment on a discrete space".into()))
            }
        };
        ws.d.push(v);
    }
    Ok(())
}

fn simulate_into(
    model: &ProcessModel,
    n: usize,
    stream: StreamId,
    past: Option<&[Coord]>,
    martingale: Option<&Projection>,
    method: Convolution,
    ws: &mut Workspace,
) -> Result<()> {
    let mut rng = stream.rng();
    fill_coordinates(model, n, &mut rng, past, &mut ws.coords);
    increments(model, n, ws, method);
    if let Some(d) = martingale {
        martingale_values(model.space(), d, n, model.lag(), ws)?;
    }
    Ok(())
}

/// Validates the request once for a batch.
pub(crate) fn prepare(model: &ProcessModel, n: usize, past: Option<&[Coord]>) -> Result<()> {
    check_budget(n, model.lag())?;
    check_past(model, past)
}

/// Streaming terminal statistics of one replicate.
pub(crate) fn replicate_stats(
    model: &ProcessModel,
    n: usize,
    stream: StreamId,
    past: Option<&[Coord]>,
    martingale: Option<&Projection>,
    drift: &[f64],
    ws: &mut Workspace,
) -> Result<TerminalStats> {
    simulate_into(model, n, stream, past, martingale, Convolution::Auto, ws)?;
    let mut s = 0.0;
    let mut max_s = f64::NEG_INFINITY;
    let mut m = 0.0;
    let mut max_dev = 0.0f64;
    let paired = martingale.is_some();
    for k in 0..n {
        s += ws.x[k];
        max_s = max_s.max(s);
        if paired {
            m += ws.d[k] + drift.get(k).copied().unwrap_or(0.0);
            max_dev = max_dev.max((s - m).abs());
        }
    }
    Ok(TerminalStats {
        s_n: s,
        max_s,
        max_absdev: paired.then_some(max_dev),
        end_dev: paired.then_some(s - m),
    })
}

/// One path on `stream`; `past` (native coordinates, `ω_0` first) pins
/// `ω_{≤0}`.
pub fn sample_path(
    model: &ProcessModel,
    n: usize,
    stream: StreamId,
    past: Option<&[Coord]>,
    martingale: Option<&Projection>,
) -> Result<PartialSumTrajectory> {
    sample_path_with(model, n, stream, past, martingale, Convolution::Auto)
}

pub fn sample_path_with(
    model: &ProcessModel,
    n: usize,
    stream: StreamId,
    past: Option<&[Coord]>,
    martingale: Option<&Projection>,
    method: Convolution,
) -> Result<PartialSumTrajectory> {
    prepare(model, n, past)?;
    let mut ws = Workspace::new(model);
    simulate_into(model, n, stream, past, martingale, method, &mut ws)?;
    let mut sums = Vec::with_capacity(n);
    let mut running_max = Vec::with_capacity(n);
    let mut dev = martingale.map(|_| Vec::with_capacity(n));
    let (mut s, mut mx, mut m, mut md) = (0.0, f64::NEG_INFINITY, 0.0, 0.0f64);
    for k in 0..n {
        s += ws.x[k];
        mx = mx.max(s);
        sums.push(s);
        running_max.push(mx);
        if let Some(dv) = dev.as_mut() {
            m += ws.d[k];
            md = md.max((s - m).abs());
            dv.push(md);
        }
    }
    Ok(PartialSumTrajectory {
        n,
        stream,
        increments: ws.x,
        sums,
        running_max,
        end_dev: dev.as_ref().map(|_| s - m),
        running_max_abs_dev: dev,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{CausalLinearModel, Coordinates, SemiLinearModel};
    use crate::sequences::CoefficientSequence;
    use crate::simulate::streams::{domain, stream};

    fn linear(a: Vec<f64>, space: InnovationSpace) -> ProcessModel {
        ProcessModel::Linear(CausalLinearModel::new(CoefficientSequence::finite(a).unwrap(), space, None).unwrap())
    }

    #[test]
    fn iid_path_reconstructs_from_increments() {
        let m = linear(vec![1.0], InnovationSpace::normal(1.0).unwrap());
        let p = sample_path(&m, 3, stream(1, domain::PATHS, 0), None, None).unwrap();
        let mut s = 0.0;
        for k in 0..3 {
            s += p.increments[k];
            assert_eq!(p.sums[k], s);
        }
        assert_eq!(p.running_max[2], p.sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    }

    #[test]
    fn telescoping_path_is_last_minus_initial() {
        let m = linear(vec![1.0, -1.0], InnovationSpace::normal(1.0).unwrap());
        let id = stream(4, domain::PATHS, 2);
        let p = sample_path(&m, 5, id, None, None).unwrap();
        // replay the coordinate draws: ω_1..ω_5 then ω_0
        let mut rng = id.rng();
        let space = InnovationSpace::normal(1.0).unwrap();
        let fut: Vec<f64> = (0..5).map(|_| space.sample_value(&mut rng)).collect();
        let w0 = space.sample_value(&mut rng);
        assert!((p.sums[4] - (fut[4] - w0)).abs() < 1e-15);
    }

    #[test]
    fn pinned_past_is_deterministic_and_used() {
        let m = ProcessModel::SemiLinear(
            SemiLinearModel::from_rows(
                InnovationSpace::rademacher(),
                vec![vec![1.0, -1.0], vec![0.5, -0.5], vec![0.25, -0.25]],
            )
            .unwrap(),
        );
        let past = m.native_past(&Coordinates::Values(vec![1.0, 1.0]), 2).unwrap();
        let id = stream(9, domain::PATHS, 0);
        let a = sample_path(&m, 4, id, Some(&past), None).unwrap();
        let b = sample_path(&m, 4, id, Some(&past), None).unwrap();
        assert_eq!(a, b);
        // X_1 = α_0(ω_1) + α_1(ω_0) + α_2(ω_{-1}) with ω_0 = ω_{-1} = +1
        let x1_past = 0.5 + 0.25;
        let own = a.increments[0] - x1_past;
        assert!(own == 1.0 || own == -1.0);
        let short = vec![Coord::Index(0)];
        assert!(sample_path(&m, 4, id, Some(&short), None).is_err());
    }

    #[test]
    fn fft_path_matches_direct() {
        let a: Vec<f64> = (0..200).map(|j| 0.98f64.powi(j) * if j % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let m = linear(a, InnovationSpace::normal(1.0).unwrap());
        let id = stream(3, domain::PATHS, 7);
        let n = 1 << 14;
        let d = sample_path_with(&m, n, id, None, None, Convolution::Direct).unwrap();
        let f = sample_path_with(&m, n, id, None, None, Convolution::Fft).unwrap();
        let scale = d.increments.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        for (x, y) in d.increments.iter().zip(&f.increments) {
            assert!((x - y).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn martingale_deviation_vanishes_for_iid() {
        let m = linear(vec![1.0], InnovationSpace::rademacher());
        let d = Projection::Scaled { coef: 1.0 };
        let p = sample_path(&m, 64, stream(0, domain::PATHS, 0), None, Some(&d)).unwrap();
        assert_eq!(p.terminal().max_absdev, Some(0.0));
        assert_eq!(p.terminal().end_dev, Some(0.0));
    }

    #[test]
    fn budget_guard() {
        let m = linear(vec![1.0], InnovationSpace::rademacher());
        assert!(matches!(
            sample_path(&m, MAX_PATH_COORDINATES + 1, stream(0, 0, 0), None, None),
            Err(LabError::Budget(_))
        ));
    }
}
