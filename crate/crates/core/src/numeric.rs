//! Small numerical kernels shared by the rest of the crate: compensated
//! summation, the Hurwitz zeta function and Gauss–Legendre rules.

use std::sync::OnceLock;

/// Neumaier-compensated accumulator.
///
/// Merging two accumulators is associative up to the compensation term,
/// which keeps parallel reductions stable.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub const fn new() -> Self {
        Self { sum: 0.0, comp: 0.0 }
    }

    pub fn from_value(value: f64) -> Self {
        Self { sum: value, comp: 0.0 }
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

/// Compensated sum of an iterator of floats.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

// B_{2k} / (2k)! for k = 1..=10
const BERNOULLI_OVER_FACTORIAL: [f64; 10] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30240.0,
    -1.0 / 1209600.0,
    1.0 / 47900160.0,
    -691.0 / 1307674368000.0,
    1.0 / 74724249600.0,
    -3617.0 / 10670622842880000.0,
    43867.0 / 5109094217170944000.0,
    -174611.0 / 802857662698291200000.0,
];

/// Hurwitz zeta `ζ(s, a) = Σ_{i≥0} (a + i)^{-s}` for `s > 1`, `a > 0`.
///
/// Direct summation up to a shift of 16 followed by an Euler–Maclaurin
/// remainder with ten Bernoulli corrections; relative accuracy is at the
/// level of a few ulps for the arguments used in this crate.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    assert!(s > 1.0, "hurwitz_zeta requires s > 1, got {s}");
    assert!(a > 0.0, "hurwitz_zeta requires a > 0, got {a}");
    const SHIFT: f64 = 16.0;
    let mut head = CompensatedSum::new();
    let mut x = a;
    while x < SHIFT {
        head.add(x.powf(-s));
        x += 1.0;
    }
    // x >= SHIFT: Euler–Maclaurin on Σ_{i≥0} (x+i)^{-s}
    let mut tail = CompensatedSum::new();
    tail.add(x.powf(1.0 - s) / (s - 1.0));
    tail.add(0.5 * x.powf(-s));
    // rising factorial s (s+1) ... (s+2k-2) times x^{-s-2k+1}
    let mut rising = s;
    let mut power = x.powf(-s - 1.0);
    let inv_x2 = 1.0 / (x * x);
    for (k, coeff) in BERNOULLI_OVER_FACTORIAL.iter().enumerate() {
        let term = coeff * rising * power;
        tail.add(term);
        if term.abs() < 1e-18 * tail.value().abs() {
            break;
        }
        let k2 = 2.0 * (k as f64 + 1.0);
        rising *= (s + k2 - 1.0) * (s + k2);
        power *= inv_x2;
    }
    head.merge(&tail);
    head.value()
}

/// Gauss–Legendre rule on `[-1, 1]` with `m` nodes, computed by Newton
/// iteration on the Legendre recurrence.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(m >= 1);
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let mf = m as f64;
    for i in 0..m.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (mf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=m {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { x } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = mf * (x * pm - pm1) / (x * x - 1.0);
            let dx = pm / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    (nodes, weights)
}

/// Cached 16-point rule used by the composite integrators.
pub fn gauss_legendre_16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// Integrates `f` over `[a, b]` with a single Gauss–Legendre panel.
pub fn gl_panel<F: Fn(f64) -> f64>(rule: &(Vec<f64>, Vec<f64>), a: f64, b: f64, f: &F) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = CompensatedSum::new();
    for (x, w) in rule.0.iter().zip(&rule.1) {
        acc.add(w * f(mid + half * x));
    }
    half * acc.value()
}

/// Expectation `∫_0^1 g(u) du` for integrands that may blow up (integrably)
/// at both endpoints: dyadic panels accumulate toward 0 and toward 1.
pub fn integrate_unit_interval<F: Fn(f64) -> f64>(g: F, depth: usize) -> f64 {
    let rule = gauss_legendre_16();
    let mut acc = CompensatedSum::new();
    acc.add(gl_panel(rule, 0.25, 0.75, &g));
    let mut width = 0.25;
    for _ in 0..depth {
        let lo = width / 2.0;
        acc.add(gl_panel(rule, lo, width, &g));
        acc.add(gl_panel(rule, 1.0 - width, 1.0 - lo, &g));
        width = lo;
    }
    acc.value()
}

/// Smallest power of two that is at least `x`.
pub fn next_pow2(x: usize) -> usize {
    x.max(1).next_power_of_two()
}
