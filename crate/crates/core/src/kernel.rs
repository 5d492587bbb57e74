//! Interaction of pairs of grid cells and of single cells with the
//! complement of the window.
//!
//! For cubes `Q` and `Q + e` of unit side,
//! `∫_Q ∫_{Q+e} |x - y|^{-(n+s)} = ∫ |z|^{-(n+s)} T(z - e) dz` where `T` is the
//! tensor tent `Π (1 - |w_i|)_+`. Along each ray from the origin `T` is
//! piecewise polynomial, so the radial integral is evaluated in closed form
//! and only the angular integral is numerical. This handles touching cells
//! exactly. Separated cells use tensor Gauss rules on the tent's support,
//! and distant ones the midpoint value.

use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use crate::geometry::GridSet;
use crate::quad::{self, gauss_legendre, integrate, integrate_nested, Estimate, Tolerance};

/// Kernel table for one grid geometry, already scaled to the cell size.
#[derive(Debug)]
pub struct CellKernel {
    n: usize,
    res: usize,
    s: f64,
    h: f64,
    farfield_ratio: f64,
    values: Vec<f64>,
    errors: Vec<f64>,
    /// `I(Q, R^n \ Q)` for one cell.
    pub cell_perimeter: Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Zone {
    Touching,
    Near,
    Far,
}

impl CellKernel {
    pub fn new(n: usize, res: usize, h: f64, s: f64, farfield_ratio: f64) -> Self {
        let total = res.pow(n as u32);
        let far2 = farfield_ratio * farfield_ratio * n as f64;
        let (values, errors): (Vec<f64>, Vec<f64>) = (0..total)
            .into_par_iter()
            .map(|idx| {
                let mut e = [0i64; 3];
                let mut rest = idx;
                for slot in e.iter_mut().take(n) {
                    *slot = (rest % res) as i64;
                    rest /= res;
                }
                let e = &e[..n];
                if e.iter().all(|&v| v == 0) {
                    return (0.0, 0.0);
                }
                let r2: f64 = e.iter().map(|&v| (v * v) as f64).sum();
                let zone = if e.iter().all(|&v| v <= 1) {
                    Zone::Touching
                } else if r2 > far2 {
                    Zone::Far
                } else {
                    Zone::Near
                };
                let est = match zone {
                    Zone::Touching => touching_unit(e, s),
                    Zone::Near => near_unit(e, s),
                    Zone::Far => far_unit(e, s),
                };
                (est.value, est.error)
            })
            .unzip();
        let scale = h.powf(n as f64 - s);
        let per = unit_cell_perimeter(n, s);
        CellKernel {
            n,
            res,
            s,
            h,
            farfield_ratio,
            values: values.into_iter().map(|v| v * scale).collect(),
            errors: errors.into_iter().map(|v| v * scale).collect(),
            cell_perimeter: Estimate { value: per.value * scale, error: per.error * scale, converged: per.converged },
        }
    }

    /// Shared table for the geometry of `set`.
    pub fn for_grid(set: &GridSet, s: f64, farfield_ratio: f64) -> Arc<CellKernel> {
        static CACHE: OnceLock<Mutex<Vec<Arc<CellKernel>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
        let (n, res, h) = (set.dim(), set.resolution(), set.h());
        {
            let guard = cache.lock().expect("kernel cache poisoned");
            if let Some(k) = guard.iter().find(|k| {
                k.n == n && k.res == res && k.h == h && k.s == s && k.farfield_ratio == farfield_ratio
            }) {
                return k.clone();
            }
        }
        let k = Arc::new(CellKernel::new(n, res, h, s, farfield_ratio));
        let mut guard = cache.lock().expect("kernel cache poisoned");
        if guard.len() >= 8 {
            guard.remove(0);
        }
        guard.push(k.clone());
        k
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn resolution(&self) -> usize {
        self.res
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    /// Linear index of an absolute offset.
    #[inline]
    pub fn offset_index(&self, a: &[usize; 3], b: &[usize; 3]) -> usize {
        let mut idx = 0;
        for d in (0..self.n).rev() {
            idx = idx * self.res + a[d].abs_diff(b[d]);
        }
        idx
    }

    #[inline]
    pub fn value(&self, offset_index: usize) -> f64 {
        self.values[offset_index]
    }

    #[inline]
    pub fn error(&self, offset_index: usize) -> f64 {
        self.errors[offset_index]
    }

    /// `K(|a_1 - b_1|, …)` for two multi-indices.
    #[inline]
    pub fn between(&self, a: &[usize; 3], b: &[usize; 3]) -> f64 {
        self.values[self.offset_index(a, b)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn errors(&self) -> &[f64] {
        &self.errors
    }

    /// For every cell `c`, the sum of `K(c, c')` over cells `c'` of the box
    /// `Π [lo_d, hi_d)` (index ranges), excluding `c` itself; values and
    /// accumulated kernel errors.
    pub fn box_sums(&self, lo: &[usize], hi: &[usize]) -> (Vec<f64>, Vec<f64>) {
        (self.box_sum_of(&self.values, lo, hi), self.box_sum_of(self.errors(), lo, hi))
    }

    fn box_sum_of(&self, table: &[f64], lo: &[usize], hi: &[usize]) -> Vec<f64> {
        // successive one-dimensional sums: after processing axis d the
        // array is indexed by cell coordinates on axes < d+1 and by
        // absolute offsets on the remaining axes
        let res = self.res;
        let mut cur = table.to_vec();
        for d in 0..self.n {
            let stride = res.pow(d as u32);
            let next: Vec<f64> = (0..cur.len())
                .into_par_iter()
                .map(|idx| {
                    let c = (idx / stride) % res;
                    let base = idx - c * stride;
                    let mut acc = 0.0;
                    for a in lo[d]..hi[d] {
                        acc += cur[base + a.abs_diff(c) * stride];
                    }
                    acc
                })
                .collect();
            cur = next;
        }
        cur
    }
}

/// `∫_0^∞ r^{-1-s} p(r) dr` for a function that is polynomial between the
/// sorted breakpoints; `piece(mid)` returns the coefficients on the piece
/// containing `mid` (`None` where it vanishes) and `tail` is the constant
/// value beyond the last breakpoint.
fn radial_piecewise(breaks: &[f64], s: f64, tail: f64, piece: impl Fn(f64) -> Option<[f64; 4]>) -> f64 {
    let mut total = 0.0;
    let mut prev = 0.0;
    for &b in breaks.iter().chain(std::iter::once(&f64::INFINITY)) {
        if b <= prev {
            continue;
        }
        if b.is_infinite() {
            if tail != 0.0 {
                total += tail * prev.powf(-s) / s;
            }
            break;
        }
        let mid = 0.5 * (prev + b);
        if let Some(c) = piece(mid) {
            for (k, ck) in c.iter().enumerate() {
                if *ck == 0.0 || k == 0 && prev == 0.0 {
                    continue;
                }
                let p = k as f64 - s;
                let lower = if prev == 0.0 { 0.0 } else { prev.powf(p) };
                total += ck * (b.powf(p) - lower) / p;
            }
        }
        prev = b;
    }
    total
}

fn mul_linear(poly: &mut [f64; 4], a: f64, b: f64) {
    // poly *= a + b r
    for k in (0..4).rev() {
        let lower = if k > 0 { poly[k - 1] } else { 0.0 };
        poly[k] = poly[k] * a + lower * b;
    }
}

/// Radial integral of `r^{-1-s} T(ru - e)` along direction `u`.
fn tent_ray(u: &[f64], e: &[i64], s: f64) -> f64 {
    let mut breaks: Vec<f64> = Vec::with_capacity(3 * u.len());
    for (ui, ei) in u.iter().zip(e) {
        if *ui != 0.0 {
            for k in [-1.0, 0.0, 1.0] {
                let r = (*ei as f64 + k) / ui;
                if r > 0.0 {
                    breaks.push(r);
                }
            }
        }
    }
    breaks.sort_by(f64::total_cmp);
    radial_piecewise(&breaks, s, 0.0, |r| {
        let mut poly = [1.0, 0.0, 0.0, 0.0];
        for (ui, ei) in u.iter().zip(e) {
            let w = r * ui - *ei as f64;
            if w.abs() >= 1.0 {
                return None;
            }
            let sg = if w >= 0.0 { 1.0 } else { -1.0 };
            mul_linear(&mut poly, 1.0 + sg * *ei as f64, -sg * ui);
        }
        Some(poly)
    })
}

/// Radial integral of `r^{-1-s} (1 - T(ru))`.
fn cell_complement_ray(u: &[f64], s: f64) -> f64 {
    let rho = u.iter().map(|v| v.abs()).fold(0.0, f64::max).recip();
    let mut prod = [1.0, 0.0, 0.0, 0.0];
    for ui in u {
        mul_linear(&mut prod, 1.0, -ui.abs());
    }
    let poly = [0.0, -prod[1], -prod[2], -prod[3]];
    radial_piecewise(&[rho], s, 1.0, |r| (r < rho).then_some(poly))
}

/// Integrates a direction function over the unit sphere of `R^n` with
/// angular breakpoints at the given planar angles (used for `n = 2`).
fn sphere_integral(n: usize, planar_breaks: &[f64], f: impl Fn(&[f64]) -> f64 + Sync) -> Estimate {
    use std::f64::consts::PI;
    match n {
        1 => Estimate::exact(f(&[1.0]) + f(&[-1.0])),
        2 => {
            let mut breaks: Vec<f64> = (0..=8).map(|k| k as f64 * PI / 4.0).collect();
            breaks.extend(planar_breaks.iter().map(|a| a.rem_euclid(2.0 * PI)));
            breaks.sort_by(f64::total_cmp);
            breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
            integrate(|phi| f(&[phi.cos(), phi.sin()]), &breaks, Tolerance::new(1e-15, 1e-12))
        }
        _ => {
            let phis: Vec<f64> = (0..=8).map(|k| k as f64 * PI / 4.0).collect();
            let thetas: Vec<f64> = (0..=4).map(|k| k as f64 * PI / 4.0).collect();
            integrate_nested(
                |theta| {
                    let (st, ct) = theta.sin_cos();
                    let inner = integrate(
                        |phi| f(&[st * phi.cos(), st * phi.sin(), ct]),
                        &phis,
                        Tolerance::new(1e-13, 1e-10),
                    );
                    (inner.value * st, inner.error * st)
                },
                &thetas,
                Tolerance::new(1e-12, 1e-9),
            )
        }
    }
}

fn touching_unit(e: &[i64], s: f64) -> Estimate {
    let mut angles = Vec::new();
    if e.len() == 2 {
        for k0 in -1..=1 {
            for k1 in -1..=1 {
                let (a, b) = ((e[0] + k0) as f64, (e[1] + k1) as f64);
                if a != 0.0 || b != 0.0 {
                    angles.push(b.atan2(a));
                }
            }
        }
    }
    sphere_integral(e.len(), &angles, |u| tent_ray(u, e, s))
}

/// `I(Q, R^n \ Q)` for the unit cube.
pub fn unit_cell_perimeter(n: usize, s: f64) -> Estimate {
    sphere_integral(n, &[], |u| cell_complement_ray(u, s))
}

fn near_unit(e: &[i64], s: f64) -> Estimate {
    let hi = tent_gauss(e, s, if e.len() >= 3 { 6 } else { 8 });
    let lo = tent_gauss(e, s, if e.len() >= 3 { 4 } else { 6 });
    Estimate { value: hi, error: (hi - lo).abs(), converged: true }
}

fn tent_gauss(e: &[i64], s: f64, order: usize) -> f64 {
    let n = e.len();
    let alpha = n as f64 + s;
    let (x, w) = gauss_legendre(order);
    // nodes on [0, 1]
    let nodes: Vec<(f64, f64)> = x.iter().zip(&w).map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).collect();
    let mut total = 0.0;
    for corner in 0..(1usize << n) {
        let mut sum = 0.0;
        let points = order.pow(n as u32);
        for p in 0..points {
            let mut rest = p;
            let mut r2 = 0.0;
            let mut weight = 1.0;
            for (d, ed) in e.iter().enumerate() {
                let (t, wt) = nodes[rest % order];
                rest /= order;
                // local coordinate w in [-1, 0] or [0, 1]
                let wloc = if (corner >> d) & 1 == 1 { t } else { -t };
                let z = *ed as f64 + wloc;
                r2 += z * z;
                weight *= wt * (1.0 - t);
            }
            sum += weight * r2.powf(-alpha / 2.0);
        }
        total += sum;
    }
    total
}

fn far_unit(e: &[i64], s: f64) -> Estimate {
    let n = e.len() as f64;
    let alpha = n + s;
    let r2: f64 = e.iter().map(|&v| (v * v) as f64).sum();
    let mid = r2.powf(-alpha / 2.0);
    let correction = mid * alpha * (alpha + 2.0 - n) / (12.0 * r2);
    Estimate { value: mid, error: correction, converged: true }
}

/// Unit-cell interaction at an arbitrary offset, choosing the same method as
/// the kernel table. Exposed for tests.
pub fn unit_pair(e: &[i64], s: f64, farfield_ratio: f64) -> Estimate {
    let abs: Vec<i64> = e.iter().map(|v| v.abs()).collect();
    let r2: f64 = abs.iter().map(|&v| (v * v) as f64).sum();
    if abs.iter().all(|&v| v <= 1) {
        touching_unit(&abs, s)
    } else if r2 > farfield_ratio * farfield_ratio * abs.len() as f64 {
        far_unit(&abs, s)
    } else {
        near_unit(&abs, s)
    }
}

/// Per-cell interactions with the complement of the window.
#[derive(Debug, Clone)]
pub struct ExteriorFields {
    /// `I(c, R^n \ W)`.
    pub all: Vec<f64>,
    /// `I(c, {x_n > 0} \ W)`, present when the wall runs along cell faces.
    pub upper: Option<Vec<f64>>,
    /// `I(c, {x_n < 0} \ W)`.
    pub lower: Option<Vec<f64>>,
    /// Error bound shared by the three fields at each cell.
    pub error: Vec<f64>,
    /// `Σ_{c' ∈ W, c' ≠ c} K(c, c')`.
    pub window_sum: Vec<f64>,
}

impl ExteriorFields {
    pub fn new(kernel: &CellKernel, grid: &GridSet) -> Self {
        let n = grid.dim();
        let res = grid.resolution();
        let lo = vec![0; n];
        let hi = vec![res; n];
        let (window_sum, window_err) = kernel.box_sums(&lo, &hi);
        let per = kernel.cell_perimeter;
        let all: Vec<f64> = window_sum.iter().map(|w| per.value - w).collect();
        let mut error: Vec<f64> = window_err.iter().map(|e| e + per.error).collect();
        let (mut upper, mut lower) = (None, None);
        if let Some(wall) = grid.wall_layer() {
            let kappa = quad::halfspace_constant(n, kernel.s());
            let s = kernel.s();
            let h = grid.h();
            let mut below_hi = hi.clone();
            below_hi[n - 1] = wall;
            let mut above_lo = lo.clone();
            above_lo[n - 1] = wall;
            let (below, below_err) = kernel.box_sums(&lo, &below_hi);
            let (above, above_err) = kernel.box_sums(&above_lo, &hi);
            let mut up = vec![0.0; all.len()];
            let mut down = vec![0.0; all.len()];
            for c in 0..all.len() {
                let k = grid.multi_index(c)[n - 1];
                // distances of the cell's faces from the wall
                let (near, far) = if k >= wall {
                    ((k - wall) as f64 * h, (k - wall + 1) as f64 * h)
                } else {
                    ((wall - k - 1) as f64 * h, (wall - k) as f64 * h)
                };
                let opposite =
                    kappa / s * h.powi(n as i32 - 1) * (far.powf(1.0 - s) - near.powf(1.0 - s)) / (1.0 - s);
                if k >= wall {
                    down[c] = opposite - below[c];
                    up[c] = all[c] - down[c];
                    error[c] += below_err[c];
                } else {
                    up[c] = opposite - above[c];
                    down[c] = all[c] - up[c];
                    error[c] += above_err[c];
                }
            }
            upper = Some(up);
            lower = Some(down);
        }
        ExteriorFields { all, upper, lower, error, window_sum }
    }
}

/// `I(c, {x_n < 0})` for a cell whose `x_n`-range is `[a, b]` with `a ≥ 0`.
pub fn cell_halfspace_interaction(n: usize, s: f64, h: f64, a: f64, b: f64) -> f64 {
    let kappa = quad::halfspace_constant(n, s);
    kappa / s * h.powi(n as i32 - 1) * (b.powf(1.0 - s) - a.powf(1.0 - s)) / (1.0 - s)
}
