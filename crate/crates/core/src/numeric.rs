//! Small numerical kernels shared by the solver, the tax code and the
//! best-response searches.

/// Neumaier's variant of Kahan summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.carry += (self.sum - t) + value;
        } else {
            self.carry += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

impl std::iter::FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = CompensatedSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Compensated sum of an iterator of floats.
pub fn csum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search for the maximum of a unimodal `f` on `[lo, hi]`.
///
/// The endpoints are evaluated as candidates as well, so a monotone
/// function returns the better endpoint exactly.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iterations = 0;
    while (b - a) > tol * (1.0 + a.abs().max(b.abs())) && iterations < 200 {
        iterations += 1;
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc >= fd { (c, fc) } else { (d, fd) };
    for x in [lo, hi] {
        let fx = f(x);
        if fx > best.1 {
            best = (x, fx);
        }
    }
    best
}

/// Root of a continuous, nonincreasing function `g` on `[lo, hi]`, clamped
/// to the interval when `g` does not change sign. Newton steps using `dg`
/// are taken when they stay inside the current bracket; otherwise the
/// bracket is bisected.
pub fn decreasing_root<G, D>(mut g: G, mut dg: D, lo: f64, hi: f64, tol: f64) -> f64
where
    G: FnMut(f64) -> f64,
    D: FnMut(f64) -> f64,
{
    let g_lo = g(lo);
    if g_lo <= 0.0 {
        return lo;
    }
    let g_hi = g(hi);
    if g_hi >= 0.0 {
        return hi;
    }
    let (mut a, mut b) = (lo, hi);
    let mut x = 0.5 * (a + b);
    for _ in 0..300 {
        let gx = g(x);
        if gx == 0.0 {
            return x;
        }
        if gx > 0.0 {
            a = x;
        } else {
            b = x;
        }
        let slope = dg(x);
        let step = gx / slope;
        let newton = x - step;
        if slope < 0.0 && newton.is_finite() && newton >= a && newton <= b {
            if step.abs() <= tol * (1.0 + x.abs()) {
                return newton;
            }
            x = newton;
        } else {
            x = 0.5 * (a + b);
        }
        if b - a <= tol * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

/// Relative closeness used by invariant checks.
pub fn rel_close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * (1.0 + a.abs().max(b.abs()))
}
