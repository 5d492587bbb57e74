//! Adaptive Gauss–Kronrod quadrature, fixed Gauss–Legendre rules and the
//! normalizing constants of the fractional kernels.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::Serialize;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_351_996,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_35,
    0.295_524_224_714_752_87,
];

/// Value of an integral together with an error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, error: 0.0, converged: true }
    }
}

/// Stopping rule for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    /// Maximum number of bisections of any initial panel.
    pub max_depth: u32,
    /// Global cap on the number of panels.
    pub max_panels: usize,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tolerance { abs, rel, max_depth: 60, max_panels: 4000 }
    }

    pub fn with_depth(mut self, depth: u32) -> Self {
        self.max_depth = depth;
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    inner: f64,
    depth: u32,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        let (ea, eb) = (self.error + self.inner, other.error + other.inner);
        ea.total_cmp(&eb).then(other.a.total_cmp(&self.a))
    }
}

fn kronrod<F: FnMut(f64) -> (f64, f64)>(f: &mut F, a: f64, b: f64) -> (f64, f64, f64) {
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let (fc, ec) = f(c);
    let mut rk = fc * WGK[10];
    let mut rg = 0.0;
    let mut inner = ec * WGK[10];
    let mut vals = [0.0f64; 21];
    vals[10] = fc;
    let mut rabs = rk.abs();
    for j in 0..10 {
        let x = hl * XGK[j];
        let (f1, e1) = f(c - x);
        let (f2, e2) = f(c + x);
        vals[j] = f1;
        vals[20 - j] = f2;
        rk += WGK[j] * (f1 + f2);
        inner += WGK[j] * (e1 + e2);
        rabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            rg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = rk * 0.5;
    let mut rasc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        rasc += WGK[j] * ((vals[j] - mean).abs() + (vals[20 - j] - mean).abs());
    }
    let ahl = hl.abs();
    let (rasc, rabs) = (rasc * ahl, rabs * ahl);
    let mut err = ((rk - rg) * hl).abs();
    if rasc != 0.0 && err != 0.0 {
        err = rasc * (200.0 * err / rasc).powf(1.5).min(1.0);
    }
    if rabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * rabs);
    }
    (rk * hl, err, inner * ahl)
}

/// Integrates `f` over `[breaks[0], breaks[last]]`, with the interior
/// breakpoints used as initial panel boundaries.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], tol: Tolerance) -> Estimate {
    integrate_nested(|x| (f(x), 0.0), breaks, tol)
}

/// Like [`integrate`] for integrands that carry their own error estimate;
/// the integrated inner error is added to the result's error.
pub fn integrate_nested<F: FnMut(f64) -> (f64, f64)>(
    mut f: F,
    breaks: &[f64],
    tol: Tolerance,
) -> Estimate {
    let mut heap = BinaryHeap::new();
    let (mut v, mut e) = (0.0, 0.0);
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (value, error, inner) = kronrod(&mut f, w[0], w[1]);
            v += value;
            e += error + inner;
            heap.push(Panel { a: w[0], b: w[1], value, error, inner, depth: 0 });
        }
    }
    let mut finished: Vec<Panel> = Vec::new();
    loop {
        if e <= tol.abs.max(tol.rel * v.abs()) {
            return finish(heap, finished, true);
        }
        if heap.len() + finished.len() >= tol.max_panels {
            return finish(heap, finished, false);
        }
        let Some(p) = heap.pop() else {
            return finish(heap, finished, false);
        };
        let m = 0.5 * (p.a + p.b);
        if p.depth >= tol.max_depth || m <= p.a || m >= p.b {
            finished.push(p);
            if heap.is_empty() {
                return finish(heap, finished, false);
            }
            continue;
        }
        let (v1, e1, i1) = kronrod(&mut f, p.a, m);
        let (v2, e2, i2) = kronrod(&mut f, m, p.b);
        v += v1 + v2 - p.value;
        e = (e + e1 + i1 + e2 + i2 - p.error - p.inner).max(0.0);
        heap.push(Panel { a: p.a, b: m, value: v1, error: e1, inner: i1, depth: p.depth + 1 });
        heap.push(Panel { a: m, b: p.b, value: v2, error: e2, inner: i2, depth: p.depth + 1 });
    }
}

fn finish(heap: BinaryHeap<Panel>, finished: Vec<Panel>, converged: bool) -> Estimate {
    // sum in panel order so the result does not depend on heap layout
    let mut all: Vec<Panel> = heap.into_vec();
    all.extend(finished);
    all.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut value = 0.0;
    let mut error = 0.0;
    for p in &all {
        value += p.value;
        error += p.error + p.inner;
    }
    Estimate { value, error, converged }
}

/// Runs [`integrate`] and returns the final panel boundaries, so that a
/// family of similar integrands can reuse the partition.
pub fn partition<F: FnMut(f64) -> f64>(mut f: F, breaks: &[f64], tol: Tolerance) -> Vec<(f64, f64)> {
    let mut panels = Vec::new();
    let mut heap = BinaryHeap::new();
    let (mut v, mut e) = (0.0, 0.0);
    let mut g = |x: f64| (f(x), 0.0);
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            let (value, error, inner) = kronrod(&mut g, w[0], w[1]);
            v += value;
            e += error;
            heap.push(Panel { a: w[0], b: w[1], value, error, inner, depth: 0 });
        }
    }
    while e > tol.abs.max(tol.rel * v.abs()) && heap.len() + panels.len() < tol.max_panels {
        let Some(p) = heap.pop() else { break };
        let m = 0.5 * (p.a + p.b);
        if p.depth >= tol.max_depth || m <= p.a || m >= p.b {
            panels.push((p.a, p.b));
            continue;
        }
        let (v1, e1, _) = kronrod(&mut g, p.a, m);
        let (v2, e2, _) = kronrod(&mut g, m, p.b);
        v += v1 + v2 - p.value;
        e = (e + e1 + e2 - p.error).max(0.0);
        heap.push(Panel { a: p.a, b: m, value: v1, error: e1, inner: 0.0, depth: p.depth + 1 });
        heap.push(Panel { a: m, b: p.b, value: v2, error: e2, inner: 0.0, depth: p.depth + 1 });
    }
    panels.extend(heap.into_iter().map(|p| (p.a, p.b)));
    panels.sort_by(|x, y| x.0.total_cmp(&y.0));
    panels
}

/// Kronrod nodes on `[a, b]` with their Kronrod weights and the embedded
/// Gauss weights (zero at nodes that are not Gauss nodes).
pub fn kronrod_rule(a: f64, b: f64) -> [(f64, f64, f64); 21] {
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let mut out = [(0.0, 0.0, 0.0); 21];
    for j in 0..10 {
        let g = if j % 2 == 1 { WG[j / 2] * hl } else { 0.0 };
        out[j] = (c - hl * XGK[j], WGK[j] * hl, g);
        out[20 - j] = (c + hl * XGK[j], WGK[j] * hl, g);
    }
    out[10] = (c, WGK[10] * hl, 0.0);
    out
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Surface area of the unit sphere in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (d as f64 - 2.0) * sphere_area(d - 2),
    }
}

/// `∫_0^∞ r^m (1 + r²)^{-p} dr` for `p > (m + 1) / 2`.
///
/// The unbounded part is mapped onto `[0, 1]` with `r = w^{-1/q}`, where
/// `q = 2p - m - 1` is the decay exponent, leaving a smooth integrand.
pub fn radial_moment(m: f64, p: f64) -> Estimate {
    let q = 2.0 * p - m - 1.0;
    let tol = Tolerance::new(1e-15, 1e-14);
    let head = integrate(|r| r.powf(m) * (1.0 + r * r).powf(-p), &[0.0, 1.0], tol);
    let tail = integrate(
        |w| {
            let v = w.powf(1.0 / q);
            (1.0 + v * v).powf(-p) / q
        },
        &[0.0, 1.0],
        tol,
    );
    Estimate {
        value: head.value + tail.value,
        error: head.error + tail.error,
        converged: head.converged && tail.converged,
    }
}

/// Normalizing constant of the Poisson kernel `C t^s / (|x|² + t²)^{(n+s)/2}`
/// from the condition that it has unit mass for every `t > 0`.
pub fn poisson_constant(n: usize, s: f64) -> f64 {
    let mass = sphere_area(n) * radial_moment(n as f64 - 1.0, (n as f64 + s) / 2.0).value;
    1.0 / mass
}

/// `∫_{R^{n-1}} (1 + |w|²)^{-(n+s)/2} dw`, so that a point at height `x_n`
/// above the boundary of a half-space interacts with the opposite half-space
/// with total strength `κ / (s x_n^s)`.
pub fn halfspace_constant(n: usize, s: f64) -> f64 {
    if n == 1 {
        return 1.0;
    }
    sphere_area(n - 1) * radial_moment(n as f64 - 2.0, (n as f64 + s) / 2.0).value
}
