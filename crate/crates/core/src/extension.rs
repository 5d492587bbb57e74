//! The s-extension of a planar trace set into `{(x, t) : t > 0}`, the
//! weighted Dirichlet energy and the scale-normalized profile Φ.
//!
//! Fields are sampled at the cell centres of the trace grid on a geometric
//! ladder of heights. The grid part of the extension is an exact
//! convolution of cell masses of the Poisson kernel (via FFT); the part of
//! the set outside the window, when present, is added by angular quadrature.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::energies::{term, EnergyBreakdown};
use crate::error::{invalid, Error, Result};
use crate::geometry::{GridSet, Region, Window};
use crate::interaction::{
    self, breakpoints, InteractionResult, KernelParams, QuadratureConfig, SetRef,
};
use crate::kernel::{cell_halfspace_interaction, CellKernel};
use crate::quad::{self, gauss_legendre, Estimate, Tolerance};
use crate::rays;

/// `P(x, t) = C t^s / (|x|² + t²)^{(n+s)/2}` with `C` fixed by unit mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoissonKernel {
    pub params: KernelParams,
    pub normalization: f64,
}

impl PoissonKernel {
    pub fn new(params: &KernelParams) -> Result<Self> {
        params.validate()?;
        Ok(PoissonKernel { params: *params, normalization: quad::poisson_constant(params.n, params.s) })
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        let (n, s) = (self.params.n as f64, self.params.s);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        self.normalization * t.powf(s) * (r2 + t * t).powf(-0.5 * (n + s))
    }

    /// Mass of `P(·, t)` outside the ball of the given radius about the origin.
    pub fn tail_mass(&self, radius: f64, t: f64) -> f64 {
        if radius <= 0.0 {
            return 1.0;
        }
        let (n, s) = (self.params.n as f64, self.params.s);
        // |x| = t/v and w = v^s remove the algebraic endpoint behaviour
        let top = (t / radius).powf(s);
        let est = quad::integrate(|w| (1.0 + w.powf(2.0 / s)).powf(-0.5 * (n + s)), &[0.0, top], Tolerance::new(1e-300, 1e-13));
        self.normalization * quad::sphere_area(self.params.n) * est.value / s
    }
}

/// Ratio aimed for between consecutive heights of the default ladder.
pub const LADDER_RATIO: f64 = 1.3;

/// Heights `0, t_0, …, top` with `t_0 = h/4` and `levels` positive entries
/// in geometric progression.
pub fn ladder(h: f64, top: f64, levels: usize) -> Result<Vec<f64>> {
    if levels < 3 {
        return invalid("at least three height levels are needed");
    }
    let t0 = h / 4.0;
    if !(top > t0 && top.is_finite()) {
        return invalid("ladder top must exceed a quarter cell");
    }
    let q = (top / t0).powf(1.0 / (levels - 1) as f64);
    let mut ts = vec![0.0];
    ts.extend((0..levels).map(|k| if k + 1 == levels { top } else { t0 * q.powi(k as i32) }));
    Ok(ts)
}

/// Number of levels giving a ratio no larger than [`LADDER_RATIO`].
pub fn default_levels(h: f64, top: f64) -> usize {
    let span = (top / (h / 4.0)).max(1.0).ln();
    ((span / LADDER_RATIO.ln()).ceil() as usize + 1).max(3)
}

/// A set given by its cells in a window plus, optionally, an analytic
/// region whose part outside the window also belongs to the set.
#[derive(Debug, Clone)]
pub struct Trace {
    pub grid: GridSet,
    pub exterior: Option<Region>,
}

impl Trace {
    pub fn new(grid: GridSet) -> Self {
        Trace { grid, exterior: None }
    }

    pub fn from_region(region: &Region, window: Window, resolution: usize) -> Result<Self> {
        region.check_dim(window.dim())?;
        let grid = GridSet::rasterize(region, window.clone(), resolution)?;
        let exterior = match region.exterior(&window) {
            Some(e) if e.is_none() => None,
            _ => Some(region.clone()),
        };
        Ok(Trace { grid, exterior })
    }

    pub fn coarsened(&self) -> Result<Self> {
        Ok(Trace { grid: self.grid.coarsened()?, exterior: self.exterior.clone() })
    }

    /// The set `E / r`.
    pub fn rescaled(&self, r: f64) -> Result<Self> {
        let grid = self.grid.rescaled(r)?;
        Ok(Trace { grid, exterior: self.exterior.as_ref().map(|e| e.scaled(1.0 / r)) })
    }

    /// Grid cells are checked exactly; the exterior region by its half-space
    /// classification when available, otherwise by sampling the lower half.
    pub fn in_upper_halfspace(&self) -> bool {
        if !self.grid.in_upper_halfspace() {
            return false;
        }
        let Some(region) = &self.exterior else { return true };
        if let Some(e) = region.exterior(self.grid.window()) {
            return !e.lower;
        }
        let scale = self.grid.window().side;
        (1..60).all(|i| {
            let rho = scale * 1e-3 * 1.25f64.powi(i);
            (1..720).all(|k| {
                let phi = -PI * k as f64 / 720.0;
                !region.contains(&[rho * phi.cos(), rho * phi.sin()])
            })
        })
    }
}

/// `U` sampled at nodes `(x_i, y_j, t_k)` with `t_0 = 0` holding the trace.
#[derive(Debug, Clone)]
pub struct ExtensionField {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ts: Vec<f64>,
    taus: Vec<f64>,
    s: f64,
    values: Vec<f64>,
    /// Largest amount by which a computed value left `[0, 1]` before being
    /// clamped back.
    pub clamped_excess: f64,
    /// Bound on the angular quadrature error of the exterior contribution.
    pub quadrature_error: f64,
}

fn check_axis(v: &[f64], name: &str) -> Result<()> {
    if v.len() < 2 || v.windows(2).any(|w| !(w[1] > w[0])) || v.iter().any(|x| !x.is_finite()) {
        return invalid(format!("{name} nodes must be at least two increasing finite values"));
    }
    Ok(())
}

fn locate(v: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = v.len();
    if !(x >= v[0] && x <= v[n - 1]) {
        return None;
    }
    let i = v.partition_point(|&a| a <= x).saturating_sub(1).min(n - 2);
    Some((i, (x - v[i]) / (v[i + 1] - v[i])))
}

/// Centred differences on a nonuniform axis, one-sided at the ends.
fn axis_difference(pos: &[f64], at: impl Fn(usize) -> f64, i: usize) -> f64 {
    let n = pos.len();
    let (a, b) = if i == 0 {
        (0, 1)
    } else if i + 1 == n {
        (n - 2, n - 1)
    } else {
        (i - 1, i + 1)
    };
    (at(b) - at(a)) / (pos[b] - pos[a])
}

struct Gradients {
    x: Vec<f64>,
    y: Vec<f64>,
    tau: Vec<f64>,
}

impl ExtensionField {
    /// Samples `f(x, y, t)` on the given nodes; `ts[0]` must be 0.
    pub fn from_fn(
        xs: Vec<f64>,
        ys: Vec<f64>,
        ts: Vec<f64>,
        s: f64,
        f: impl Fn(f64, f64, f64) -> f64 + Sync,
    ) -> Result<Self> {
        check_axis(&xs, "x")?;
        check_axis(&ys, "y")?;
        check_axis(&ts, "t")?;
        if ts[0] != 0.0 {
            return invalid("the first height must be 0");
        }
        if !(s > 0.0 && s < 1.0) {
            return invalid("fractional order must lie in (0, 1)");
        }
        let (nx, ny) = (xs.len(), ys.len());
        let values = (0..nx * ny * ts.len())
            .into_par_iter()
            .map(|idx| f(xs[idx % nx], ys[(idx / nx) % ny], ts[idx / (nx * ny)]))
            .collect();
        let taus = ts.iter().map(|t| t.powf(s)).collect();
        Ok(ExtensionField { xs, ys, ts, taus, s, values, clamped_excess: 0.0, quadrature_error: 0.0 })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn heights(&self) -> &[f64] {
        &self.ts
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values at height index `k`, first axis fastest.
    pub fn level(&self, k: usize) -> &[f64] {
        let m = self.xs.len() * self.ys.len();
        &self.values[k * m..(k + 1) * m]
    }

    pub fn value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.ys.len() + j) * self.xs.len() + i
    }

    pub fn same_nodes(&self, other: &ExtensionField) -> bool {
        self.xs == other.xs && self.ys == other.ys && self.ts == other.ts && self.s == other.s
    }

    /// Applies `f(node, value)` at every node.
    pub fn map(&self, f: impl Fn([f64; 3], f64) -> f64 + Sync) -> ExtensionField {
        let (nx, ny) = (self.xs.len(), self.ys.len());
        let values = self
            .values
            .par_iter()
            .enumerate()
            .map(|(idx, &u)| f([self.xs[idx % nx], self.ys[(idx / nx) % ny], self.ts[idx / (nx * ny)]], u))
            .collect();
        ExtensionField { values, clamped_excess: 0.0, quadrature_error: 0.0, ..self.clone() }
    }

    /// Trilinear interpolation in `(x, y, t^s)`; `None` outside the nodes.
    pub fn sample(&self, x: f64, y: f64, t: f64) -> Option<f64> {
        let st = self.stencil(x, y, t)?;
        Some(st.iter().map(|&(idx, w)| w * self.values[idx]).sum())
    }

    fn stencil(&self, x: f64, y: f64, t: f64) -> Option<[(usize, f64); 8]> {
        let (i, fx) = locate(&self.xs, x)?;
        let (j, fy) = locate(&self.ys, y)?;
        let (k, ft) = locate(&self.taus, t.max(0.0).powf(self.s))?;
        let mut out = [(0, 0.0); 8];
        for (c, slot) in out.iter_mut().enumerate() {
            let (di, dj, dk) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            let w = (if di == 1 { fx } else { 1.0 - fx })
                * (if dj == 1 { fy } else { 1.0 - fy })
                * (if dk == 1 { ft } else { 1.0 - ft });
            *slot = (self.index(i + di, j + dj, k + dk), w);
        }
        Some(out)
    }

    /// Every other node in `x` and `y`; the trace level, every other
    /// positive level and the top level.
    pub fn subsampled(&self) -> ExtensionField {
        let xi: Vec<usize> = (0..self.xs.len()).step_by(2).collect();
        let yi: Vec<usize> = (0..self.ys.len()).step_by(2).collect();
        let mut ki: Vec<usize> = std::iter::once(0).chain((1..self.ts.len()).step_by(2)).collect();
        if *ki.last().unwrap() != self.ts.len() - 1 {
            ki.push(self.ts.len() - 1);
        }
        let mut values = Vec::with_capacity(xi.len() * yi.len() * ki.len());
        for &k in &ki {
            for &j in &yi {
                for &i in &xi {
                    values.push(self.value(i, j, k));
                }
            }
        }
        ExtensionField {
            xs: xi.iter().map(|&i| self.xs[i]).collect(),
            ys: yi.iter().map(|&j| self.ys[j]).collect(),
            ts: ki.iter().map(|&k| self.ts[k]).collect(),
            taus: ki.iter().map(|&k| self.taus[k]).collect(),
            values,
            ..self.clone()
        }
    }

    fn gradients(&self) -> Gradients {
        let (nx, ny, nt) = (self.xs.len(), self.ys.len(), self.ts.len());
        let mut g = Gradients { x: vec![0.0; self.values.len()], y: vec![0.0; self.values.len()], tau: vec![0.0; self.values.len()] };
        for k in 0..nt {
            for j in 0..ny {
                for i in 0..nx {
                    let idx = self.index(i, j, k);
                    g.x[idx] = axis_difference(&self.xs, |a| self.value(a, j, k), i);
                    g.y[idx] = axis_difference(&self.ys, |b| self.value(i, b, k), j);
                    g.tau[idx] = axis_difference(&self.taus, |c| self.value(i, j, c), k);
                }
            }
        }
        g
    }

    /// `U + A t ψ`, where ψ is the collar cutoff of the half-ball of radius `radius`.
    pub fn with_bump(&self, radius: f64, amplitude: f64) -> ExtensionField {
        self.map(|p, u| u + amplitude * p[2] * collar_cutoff(radius, p))
    }

    /// `U + ψ (U(x, λt) - U)` with ψ the collar cutoff; needs `λ·radius` below the ladder top.
    pub fn stretched(&self, radius: f64, factor: f64) -> Result<ExtensionField> {
        if !(factor > 0.0) || factor * radius > *self.ts.last().unwrap() {
            return invalid("stretched field would sample above the ladder top");
        }
        Ok(self.map(|p, u| {
            let psi = collar_cutoff(radius, p);
            if psi == 0.0 {
                return u;
            }
            let v = self.sample(p[0], p[1], factor * p[2]).unwrap_or(u);
            u + psi * (v - u)
        }))
    }
}

/// Width of the collar, relative to the radius, on which competitors must
/// agree with the extension.
pub const COLLAR_FRACTION: f64 = 0.1;

/// Smooth cutoff: 1 on `B_{R-2η}`, 0 outside `B_{R-η}`, with `η = R/10`.
pub fn collar_cutoff(radius: f64, p: [f64; 3]) -> f64 {
    let eta = COLLAR_FRACTION * radius;
    let rho = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let inner = radius - 2.0 * eta;
    if rho <= inner {
        1.0
    } else if rho >= radius - eta {
        0.0
    } else {
        0.5 * (1.0 + (PI * (rho - inner) / eta).cos())
    }
}

/// `∫_0^x ∫_0^y` of the kernel at height `t`, without the factor `C / s`.
fn corner_integral(x: f64, y: f64, t: f64, s: f64) -> f64 {
    let split = y.atan2(x);
    let radial = |rho: f64| -((-0.5 * s) * (rho / t).powi(2).ln_1p()).exp_m1();
    let tol = Tolerance::new(1e-17, 1e-13);
    let a = quad::integrate(|p| radial(x / p.cos()), &[0.0, split], tol).value;
    let b = quad::integrate(|p| radial(y / p.sin()), &[split, 0.5 * PI], tol).value;
    a + b
}

/// Exact masses of the kernel over the cells at every offset in
/// `(-res, res)^2`, on a `2 res` periodic array for circular convolution.
fn mass_array(res: usize, h: f64, t: f64, s: f64, c: f64) -> Vec<Complex<f64>> {
    let pairs: Vec<(usize, usize)> = (0..res).flat_map(|k| (k..res).map(move |l| (k, l))).collect();
    let vals: Vec<f64> = pairs
        .par_iter()
        .map(|&(k, l)| corner_integral((k as f64 + 0.5) * h, (l as f64 + 0.5) * h, t, s))
        .collect();
    let mut corner = vec![0.0; res * res];
    for (&(k, l), v) in pairs.iter().zip(vals) {
        corner[k * res + l] = v;
        corner[l * res + k] = v;
    }
    let signed = |mx: i64, my: i64| {
        let part = |m: i64| if m >= 0 { (1.0, m as usize) } else { (-1.0, (-m - 1) as usize) };
        let ((sx, kx), (sy, ky)) = (part(mx), part(my));
        sx * sy * corner[kx * res + ky]
    };
    let m = 2 * res;
    let r = res as i64;
    let mut out = vec![Complex::new(0.0, 0.0); m * m];
    for dy in 1 - r..r {
        for dx in 1 - r..r {
            let mass = signed(dx, dy) - signed(dx - 1, dy) - signed(dx, dy - 1) + signed(dx - 1, dy - 1);
            let row = dy.rem_euclid(m as i64) as usize;
            let col = dx.rem_euclid(m as i64) as usize;
            out[row * m + col] = Complex::new(c / s * mass, 0.0);
        }
    }
    out
}

fn fft2(data: &mut [Complex<f64>], m: usize, fft: &Arc<dyn Fft<f64>>) {
    for row in data.chunks_mut(m) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); m];
    for j in 0..m {
        for i in 0..m {
            col[i] = data[i * m + j];
        }
        fft.process(&mut col);
        for i in 0..m {
            data[i * m + j] = col[i];
        }
    }
}

/// Contribution of the region's part outside the window at one node, for
/// every positive height, with a bound on the quadrature error.
fn exterior_contribution(
    region: &Region,
    window_box: &Region,
    vertices: &[[f64; 2]],
    x: [f64; 2],
    s: f64,
    c: f64,
    ts: &[f64],
    rel: f64,
) -> (Vec<f64>, f64) {
    let chords = |u: [f64; 2]| rays::intersect(&region.ray(&x, &u), &rays::complement(&window_box.ray(&x, &u)));
    // the height-zero limit has the sharpest angular features
    let shape = |phi: f64| -> f64 {
        chords([phi.cos(), phi.sin()])
            .iter()
            .map(|&(a, b)| a.powf(-s) - if b.is_infinite() { 0.0 } else { b.powf(-s) })
            .sum()
    };
    let panels = quad::partition(shape, &breakpoints(x, vertices), Tolerance::new(1e-300, rel));
    let mut nodes = Vec::with_capacity(21 * panels.len());
    for (a, b) in panels {
        for (phi, wk, wg) in quad::kronrod_rule(a, b) {
            let spans = chords([phi.cos(), phi.sin()]);
            if !spans.is_empty() {
                nodes.push((wk, wg, spans));
            }
        }
    }
    let mut out = Vec::with_capacity(ts.len());
    let mut err: f64 = 0.0;
    for &t in ts {
        let (mut vk, mut vg) = (0.0, 0.0);
        for (wk, wg, spans) in &nodes {
            let f: f64 = spans
                .iter()
                .map(|&(a, b)| {
                    let lo = (1.0 + (a / t).powi(2)).powf(-0.5 * s);
                    let hi = if b.is_infinite() { 0.0 } else { (1.0 + (b / t).powi(2)).powf(-0.5 * s) };
                    lo - hi
                })
                .sum();
            vk += wk * f;
            vg += wg * f;
        }
        out.push(c / s * vk);
        err = err.max(c / s * (vk - vg).abs());
    }
    (out, err)
}

/// Extension of the trace at all cell centres of its grid.
pub fn extend(trace: &Trace, top: f64, levels: usize, params: &KernelParams, cfg: &QuadratureConfig) -> Result<ExtensionField> {
    extend_within(trace, top, levels, f64::INFINITY, params, cfg)
}

/// Extension at the cell centres within `half_width` of the origin in each
/// coordinate, on heights `ladder(h, top, levels)`.
pub fn extend_within(
    trace: &Trace,
    top: f64,
    levels: usize,
    half_width: f64,
    params: &KernelParams,
    cfg: &QuadratureConfig,
) -> Result<ExtensionField> {
    params.validate()?;
    cfg.validate()?;
    if params.n != 2 || trace.grid.dim() != 2 {
        return Err(Error::Unsupported("the extension is implemented for planar traces".into()));
    }
    let grid = &trace.grid;
    let (res, h, s) = (grid.resolution(), grid.h(), params.s);
    let ts = ladder(h, top, levels)?;
    let window = grid.window();
    let pick = |axis: usize| -> Vec<usize> {
        (0..res).filter(|&i| (window.min[axis] + (i as f64 + 0.5) * h).abs() <= half_width).collect()
    };
    let (ix, iy) = (pick(0), pick(1));
    if ix.len() < 2 || iy.len() < 2 {
        return invalid("node box must contain at least two cell centres per axis");
    }
    let c = PoissonKernel::new(params)?.normalization;

    let m = 2 * res;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let inv = planner.plan_fft_inverse(m);
    let mut chi = vec![Complex::new(0.0, 0.0); m * m];
    for idx in grid.occupied() {
        let mi = grid.multi_index(idx);
        chi[mi[1] * m + mi[0]] = Complex::new(1.0, 0.0);
    }
    fft2(&mut chi, m, &fwd);
    let scale = 1.0 / (m * m) as f64;
    let grid_levels: Vec<Vec<f64>> = ts[1..]
        .par_iter()
        .map(|&t| {
            let mut ker = mass_array(res, h, t, s, c);
            fft2(&mut ker, m, &fwd);
            for (k, x) in ker.iter_mut().zip(&chi) {
                *k *= x;
            }
            fft2(&mut ker, m, &inv);
            let mut out = Vec::with_capacity(ix.len() * iy.len());
            for &j in &iy {
                for &i in &ix {
                    out.push(ker[j * m + i].re * scale);
                }
            }
            out
        })
        .collect();

    let xs: Vec<f64> = ix.iter().map(|&i| window.min[0] + (i as f64 + 0.5) * h).collect();
    let ys: Vec<f64> = iy.iter().map(|&j| window.min[1] + (j as f64 + 0.5) * h).collect();
    let plane = xs.len() * ys.len();
    let mut values = vec![0.0; plane * ts.len()];
    for (p, (&j, &i)) in iy.iter().flat_map(|j| ix.iter().map(move |i| (j, i))).enumerate() {
        values[p] = if grid.get(grid.linear_index(&[i, j])) { 1.0 } else { 0.0 };
    }
    for (k, lvl) in grid_levels.iter().enumerate() {
        values[(k + 1) * plane..(k + 2) * plane].copy_from_slice(lvl);
    }

    let mut quadrature_error = 0.0;
    if let Some(region) = &trace.exterior {
        let window_box = Region::Box { min: window.min.clone(), max: vec![window.max(0), window.max(1)] };
        let mut vertices = region.vertices();
        vertices.extend(window_box.vertices());
        let rel = cfg.rel_tol.min(1e-6);
        let parts: Vec<(Vec<f64>, f64)> = (0..plane)
            .into_par_iter()
            .map(|p| {
                let x = [xs[p % xs.len()], ys[p / xs.len()]];
                exterior_contribution(region, &window_box, &vertices, x, s, c, &ts[1..], rel)
            })
            .collect();
        for (p, (vals, err)) in parts.iter().enumerate() {
            for (k, v) in vals.iter().enumerate() {
                values[(k + 1) * plane + p] += v;
            }
            quadrature_error = f64::max(quadrature_error, *err);
        }
    }

    let mut excess: f64 = 0.0;
    for v in &mut values {
        excess = excess.max(-*v).max(*v - 1.0);
        *v = v.clamp(0.0, 1.0);
    }
    let taus = ts.iter().map(|t| t.powf(s)).collect();
    Ok(ExtensionField { xs, ys, ts, taus, s, values, clamped_excess: excess.max(0.0), quadrature_error })
}

/// Integration domain in `(x, y, t)` space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Domain {
    /// `{|X| < radius, t > 0}` about the origin.
    HalfBall { radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
}

impl Domain {
    fn contains(&self, p: [f64; 3]) -> bool {
        match self {
            Domain::HalfBall { radius } => p[2] > 0.0 && p[0] * p[0] + p[1] * p[1] + p[2] * p[2] < radius * radius,
            Domain::Box { min, max } => (0..3).all(|d| p[d] > min[d] && p[d] < max[d]),
        }
    }

    fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            Domain::HalfBall { radius } => ([-radius, -radius, 0.0], [radius, radius, radius]),
            Domain::Box { min, max } => (min, max),
        }
    }
}

fn check_coverage(u: &ExtensionField, domain: &Domain) -> Result<()> {
    let (lo, hi) = domain.bounds();
    let axes = [&u.xs, &u.ys, &u.ts];
    for d in 0..3 {
        let (a, b) = (axes[d][0], *axes[d].last().unwrap());
        let slack = 1e-9 * (b - a);
        if !(lo[d] < hi[d]) || lo[d] < a - slack || hi[d] > b + slack {
            return invalid("integration domain exceeds the sampled region");
        }
    }
    Ok(())
}

/// Brick-wise energy: squared edge differences averaged per brick, the
/// horizontal part weighted by `∫ t^{1-s}` over the slab and the vertical
/// part taken linear in `t^s` within the slab.
fn brick_energy(u: &ExtensionField, domain: &Domain) -> f64 {
    let (nx, ny, nt) = (u.xs.len(), u.ys.len(), u.ts.len());
    let s = u.s;
    let slabs: Vec<f64> = (0..nt - 1)
        .into_par_iter()
        .map(|k| {
            let (t0, t1) = (u.ts[k], u.ts[k + 1]);
            let wt = (t1.powf(2.0 - s) - t0.powf(2.0 - s)) / (2.0 - s);
            let dtau = u.taus[k + 1] - u.taus[k];
            let wtau = s * dtau;
            let tc = 0.5 * (t0 + t1);
            let mut acc = 0.0;
            for j in 0..ny - 1 {
                let dy = u.ys[j + 1] - u.ys[j];
                let yc = 0.5 * (u.ys[j] + u.ys[j + 1]);
                for i in 0..nx - 1 {
                    let dx = u.xs[i + 1] - u.xs[i];
                    let xc = 0.5 * (u.xs[i] + u.xs[i + 1]);
                    if !domain.contains([xc, yc, tc]) {
                        continue;
                    }
                    let (mut ex, mut ey, mut et) = (0.0, 0.0, 0.0);
                    for a in 0..2 {
                        for b in 0..2 {
                            let gx = (u.value(i + 1, j + a, k + b) - u.value(i, j + a, k + b)) / dx;
                            let gy = (u.value(i + a, j + 1, k + b) - u.value(i + a, j, k + b)) / dy;
                            let gt = (u.value(i + a, j + b, k + 1) - u.value(i + a, j + b, k)) / dtau;
                            ex += gx * gx;
                            ey += gy * gy;
                            et += gt * gt;
                        }
                    }
                    acc += dx * dy * 0.25 * ((ex + ey) * wt + et * wtau);
                }
            }
            acc
        })
        .collect();
    slabs.iter().sum()
}

/// `∫ t^{1-s} |∇U|²` over the domain. The error compares with the field
/// restricted to every other node; it does not see the layer of width `h`
/// along jumps of the trace, which costs `O(h^{1-s})`.
pub fn weighted_dirichlet(u: &ExtensionField, domain: &Domain) -> Result<Estimate> {
    check_coverage(u, domain)?;
    let fine = brick_energy(u, domain);
    let coarse = brick_energy(&u.subsampled(), domain);
    Ok(Estimate { value: fine, error: (fine - coarse).abs(), converged: true })
}

/// Checks that the trace level of `u` is the indicator of `trace`.
fn check_trace(u: &ExtensionField, trace: &GridSet) -> Result<()> {
    let level = u.level(0);
    for (p, &v) in level.iter().enumerate() {
        let x = [u.xs[p % u.xs.len()], u.ys[p / u.xs.len()]];
        let want = if trace.contains_point(&x) { 1.0 } else { 0.0 };
        if (v - want).abs() > 1e-12 {
            return invalid(format!("field trace differs from the set at ({}, {})", x[0], x[1]));
        }
    }
    Ok(())
}

/// `∫_{B_R^+} t^{1-s}|∇U|² + (σ - 1) I_s(F ∩ B_R, H^c)`.
pub fn capillarity_extension_energy(
    u: &ExtensionField,
    trace: &GridSet,
    radius: f64,
    sigma: f64,
    params: &KernelParams,
    cfg: &QuadratureConfig,
) -> Result<EnergyBreakdown> {
    if !trace.in_upper_halfspace() {
        return invalid("trace must lie in the upper half-space");
    }
    check_trace(u, trace)?;
    let dir = weighted_dirichlet(u, &Domain::HalfBall { radius })?;
    let ball = GridSet::rasterize(&Region::ball(vec![0.0; 2], radius), trace.window().clone(), trace.resolution())?;
    let inside = trace.intersection(&ball)?;
    let wall = interaction::interaction(SetRef::Grid(&inside), SetRef::Region(&Region::HalfSpace.complement()), params, cfg)?;
    let dirichlet = InteractionResult { value: dir.value, error_estimate: dir.error, tail_bound: 0.0, converged: true };
    Ok(EnergyBreakdown::from_terms(vec![term("dirichlet", 1.0, dirichlet), term("wall", sigma - 1.0, wall)]))
}

/// Energies of a competitor and of the extension over a half-ball.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OptimalityGap {
    pub reference: f64,
    pub competitor: f64,
    /// `competitor - reference`; the wetting terms cancel.
    pub gap: f64,
}

/// Compares a competitor with the extension of `trace` on the half-ball of
/// radius `radius`. The competitor must share the trace and agree with the
/// extension on the collar of width `R/10` and beyond.
pub fn extension_optimality_check(
    trace: &GridSet,
    reference: &ExtensionField,
    competitor: &ExtensionField,
    radius: f64,
) -> Result<OptimalityGap> {
    if !reference.same_nodes(competitor) {
        return invalid("competitor is sampled on different nodes");
    }
    check_trace(reference, trace)?;
    if reference.level(0) != competitor.level(0) {
        return invalid("competitor has a different trace");
    }
    let (nx, ny) = (reference.xs.len(), reference.ys.len());
    let inner = (1.0 - COLLAR_FRACTION) * radius;
    for (idx, (a, b)) in reference.values.iter().zip(&competitor.values).enumerate() {
        let p = [reference.xs[idx % nx], reference.ys[(idx / nx) % ny], reference.ts[idx / (nx * ny)]];
        if (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() >= inner && (a - b).abs() > 1e-12 {
            return invalid("competitor differs from the extension near the boundary of the domain");
        }
    }
    let domain = Domain::HalfBall { radius };
    check_coverage(reference, &domain)?;
    let e_ref = brick_energy(reference, &domain);
    let e_comp = brick_energy(competitor, &domain);
    Ok(OptimalityGap { reference: e_ref, competitor: e_comp, gap: e_comp - e_ref })
}

/// Gauss nodes in the polar angle times a uniform azimuthal rule over the
/// upper hemisphere of radius `r`; `f(U, ∂_r U, t)` is integrated against
/// surface measure.
fn hemisphere(u: &ExtensionField, g: &Gradients, r: f64, h: f64, polar: usize, f: impl Fn(f64, f64, f64) -> f64 + Sync) -> f64 {
    let (xt, wt) = gauss_legendre(polar);
    let n_phi = ((8.0 * PI * r / h).ceil() as usize).max(64);
    let dphi = 2.0 * PI / n_phi as f64;
    let s = u.s;
    let rows: Vec<f64> = (0..polar)
        .into_par_iter()
        .map(|a| {
            let theta = 0.25 * PI * (1.0 + xt[a]);
            let (st, ct) = theta.sin_cos();
            let t = r * ct;
            let tau = t.powf(s);
            let mut acc = 0.0;
            for b in 0..n_phi {
                let phi = (b as f64 + 0.5) * dphi;
                let (x, y) = (r * st * phi.cos(), r * st * phi.sin());
                let Some(st8) = u.stencil(x, y, t) else { continue };
                let (mut val, mut gx, mut gy, mut gtau) = (0.0, 0.0, 0.0, 0.0);
                for (idx, w) in st8 {
                    val += w * u.values[idx];
                    gx += w * g.x[idx];
                    gy += w * g.y[idx];
                    gtau += w * g.tau[idx];
                }
                let dr = (x * gx + y * gy + s * tau * gtau) / r;
                acc += f(val, dr, t);
            }
            acc * wt[a] * 0.25 * PI * r * r * st * dphi
        })
        .collect();
    rows.iter().sum()
}

fn check_sphere(u: &ExtensionField, r: f64) -> Result<f64> {
    let h = u.xs[1] - u.xs[0];
    let reach = r + 2.0 * h;
    let ok = u.xs[0] <= -reach && *u.xs.last().unwrap() >= reach && u.ys[0] <= -reach && *u.ys.last().unwrap() >= reach;
    if !(r > 0.0) || !ok || r > *u.ts.last().unwrap() {
        return invalid("sphere is not strictly inside the sampled region");
    }
    Ok(h)
}

/// Default number of polar nodes on the hemisphere.
pub const POLAR_NODES: usize = 64;

/// `∫_{∂B_r ∩ {t>0}} t^{1-s} (∂_r U)²`, with the error from the field
/// restricted to every other node.
pub fn normal_gradient_boundary_integral(u: &ExtensionField, r: f64) -> Result<Estimate> {
    let h = check_sphere(u, r)?;
    let s = u.s;
    let f = |_: f64, dr: f64, t: f64| t.powf(1.0 - s) * dr * dr;
    let fine = hemisphere(u, &u.gradients(), r, h, POLAR_NODES, f);
    let coarse_field = u.subsampled();
    let coarse = hemisphere(&coarse_field, &coarse_field.gradients(), r, h, POLAR_NODES, f);
    Ok(Estimate { value: fine, error: (fine - coarse).abs(), converged: true })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhiOptions {
    /// Positive height levels; by default chosen from [`LADDER_RATIO`].
    pub levels: Option<usize>,
    /// Repeat on the coarsened trace and add the change to the error.
    pub resolution_check: bool,
    pub polar_nodes: usize,
}

impl Default for PhiOptions {
    fn default() -> Self {
        PhiOptions { levels: None, resolution_check: true, polar_nodes: POLAR_NODES }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhiProfile {
    pub radii: Vec<f64>,
    pub sigma: f64,
    pub phi: Vec<f64>,
    pub dirichlet_part: Vec<f64>,
    pub wetting_part: Vec<f64>,
    pub errors: Vec<f64>,
    /// `∫_{∂B_r^+} t^{1-s}(∂_r U)²` per radius.
    pub normal_gradient: Vec<f64>,
    /// `phi[k+1] >= phi[k] - 3 (errors[k] + errors[k+1])`.
    pub monotone: Vec<bool>,
}

impl PhiProfile {
    /// Φ rebuilt from the stored parts.
    pub fn recomputed(&self) -> Vec<f64> {
        self.dirichlet_part.iter().zip(&self.wetting_part).map(|(g, j)| g + (self.sigma - 1.0) * j).collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone.iter().all(|&m| m)
    }

    pub fn spread(&self) -> f64 {
        let max = self.phi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = self.phi.iter().cloned().fold(f64::INFINITY, f64::min);
        max - min
    }
}

struct CellEntry {
    center: [f64; 2],
    /// `I_s(c, E^c)` and its error.
    bulk: f64,
    bulk_err: f64,
    /// `I_s(c, H^c)`.
    wet: f64,
    grad_bulk: [f64; 2],
    grad_wet: [f64; 2],
}

/// `|c ∩ B_r|` and the first moments about the cell centre.
fn disk_cell_moments(center: [f64; 2], h: f64, r: f64) -> (f64, f64, f64) {
    let (x0, x1) = ((center[0] - 0.5 * h).max(-r), (center[0] + 0.5 * h).min(r));
    let (y0, y1) = (center[1] - 0.5 * h, center[1] + 0.5 * h);
    if x1 <= x0 {
        return (0.0, 0.0, 0.0);
    }
    let mut breaks = vec![x0, x1];
    for y in [y0, y1] {
        if y.abs() < r {
            let x = (r * r - y * y).sqrt();
            breaks.extend([-x, x].into_iter().filter(|v| *v > x0 && *v < x1));
        }
    }
    breaks.sort_by(f64::total_cmp);
    let chord = |x: f64| {
        let half = (r * r - x * x).max(0.0).sqrt();
        let (lo, hi) = (y0.max(-half), y1.min(half));
        if hi > lo {
            (hi - lo, 0.5 * (lo + hi))
        } else {
            (0.0, 0.0)
        }
    };
    let tol = Tolerance::new(1e-16 * h * h, 1e-12);
    let area = quad::integrate(|x| chord(x).0, &breaks, tol).value;
    let mx = quad::integrate(|x| (x - center[0]) * chord(x).0, &breaks, tol).value;
    let my = quad::integrate(|x| (chord(x).1 - center[1]) * chord(x).0, &breaks, tol).value;
    (area, mx, my)
}

/// Per-cell interaction data for the cells of `E` near the origin.
fn cell_entries(trace: &Trace, reach: f64, params: &KernelParams, cfg: &QuadratureConfig) -> Result<Vec<CellEntry>> {
    let grid = &trace.grid;
    let (h, s) = (grid.h(), params.s);
    let kernel = CellKernel::for_grid(grid, s, cfg.farfield_ratio);
    let occupied: Vec<usize> = grid.occupied().collect();
    let near: Vec<usize> = occupied
        .iter()
        .copied()
        .filter(|&c| {
            let x = grid.center(c);
            x[0].hypot(x[1]) < reach
        })
        .collect();
    let exterior = match &trace.exterior {
        Some(region) => exterior_cell_potentials(grid, region, &near, s, cfg.rel_tol.min(1e-6)),
        None => HashMap::new(),
    };
    let bulk: Vec<(f64, f64)> = near
        .par_iter()
        .map(|&c| {
            let mc = grid.multi_index(c);
            let (mut sum, mut err) = (0.0, 0.0);
            for &o in &occupied {
                if o != c {
                    let oi = kernel.offset_index(&mc, &grid.multi_index(o));
                    sum += kernel.value(oi);
                    err += kernel.error(oi);
                }
            }
            let per = kernel.cell_perimeter;
            let (ext, ext_err) = exterior.get(&c).copied().unwrap_or((0.0, 0.0));
            (per.value - sum - ext, err + per.error + ext_err)
        })
        .collect();
    let position: HashMap<usize, usize> = near.iter().enumerate().map(|(p, &c)| (c, p)).collect();
    // the wall interaction of a cell depends only on its height above the wall
    let rows = near.iter().map(|&c| grid.center(c)[1] / h).fold(0.0f64, f64::max).ceil() as usize + 2;
    let wet_row: Vec<f64> =
        (0..=rows).into_par_iter().map(|k| cell_halfspace_interaction(2, s, h, k as f64 * h, (k + 1) as f64 * h)).collect();
    let wet_at = |bottom: f64| wet_row[(bottom.max(0.0) / h).round() as usize];
    let res = grid.resolution();
    let mut out = Vec::with_capacity(near.len());
    for (p, &c) in near.iter().enumerate() {
        let mi = grid.multi_index(c);
        let x = grid.center(c);
        let mut grad_bulk = [0.0; 2];
        for d in 0..2 {
            let step = |delta: i64| -> Option<f64> {
                let k = mi[d] as i64 + delta;
                if k < 0 || k >= res as i64 {
                    return None;
                }
                let mut m = mi;
                m[d] = k as usize;
                position.get(&grid.linear_index(&m[..2])).map(|&q| bulk[q].0)
            };
            grad_bulk[d] = match (step(-1), step(1)) {
                (Some(a), Some(b)) => (b - a) / (2.0 * h),
                (Some(a), None) => (bulk[p].0 - a) / h,
                (None, Some(b)) => (b - bulk[p].0) / h,
                (None, None) => 0.0,
            };
        }
        let bottom = x[1] - 0.5 * h;
        let wet = wet_at(bottom);
        let dwet = if bottom >= h { (wet_at(bottom + h) - wet_at(bottom - h)) / (2.0 * h) } else { (wet_at(bottom + h) - wet) / h };
        out.push(CellEntry {
            center: [x[0], x[1]],
            bulk: bulk[p].0,
            bulk_err: bulk[p].1,
            wet,
            grad_bulk,
            grad_wet: [0.0, dwet],
        });
    }
    Ok(out)
}

/// `I_s(c, R \\ W)` for the given cells: the potential at the centre plus
/// the Laplacian correction from the four neighbouring centres.
fn exterior_cell_potentials(grid: &GridSet, region: &Region, cells: &[usize], s: f64, rel: f64) -> HashMap<usize, (f64, f64)> {
    let res = grid.resolution() as i64;
    let neighbours = |c: usize| -> Vec<usize> {
        let mi = grid.multi_index(c);
        let mut out = Vec::with_capacity(4);
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let (x, y) = (mi[0] as i64 + dx, mi[1] as i64 + dy);
            if (0..res).contains(&x) && (0..res).contains(&y) {
                out.push(grid.linear_index(&[x as usize, y as usize]));
            }
        }
        out
    };
    let mut points: Vec<usize> = cells.iter().flat_map(|&c| std::iter::once(c).chain(neighbours(c))).collect();
    points.sort_unstable();
    points.dedup();
    let tol = Tolerance::new(1e-300, rel);
    let pot: HashMap<usize, Estimate> = points
        .par_iter()
        .map(|&c| {
            let x = grid.center(c);
            (c, interaction::window_exterior_potential(grid.window(), region, [x[0], x[1]], s, tol))
        })
        .collect();
    let h = grid.h();
    let w = grid.window();
    cells
        .iter()
        .map(|&c| {
            let v = pot[&c];
            let nb = neighbours(c);
            let x = grid.center(c);
            let edge = (0..2).map(|d| (x[d] - w.min[d]).min(w.max(d) - x[d])).fold(f64::INFINITY, f64::min);
            let (mut corr, mut err) = (0.0, h * h * v.error);
            if nb.len() == 4 {
                corr = h * h * (nb.iter().map(|q| pot[q].value).sum::<f64>() - 4.0 * v.value) / 24.0;
                err += nb.iter().map(|q| h * h * pot[q].error / 6.0).sum::<f64>() + corr.abs() * (h / edge).powi(2);
            } else {
                err += h * h * v.value;
            }
            (c, (h * h * v.value + corr, err))
        })
        .collect()
}

/// Sums over `E ∩ B_r` with exact area fractions and a first-moment
/// correction; returns `(bulk, bulk error, wet, wet error)`.
fn disk_sums(cells: &[CellEntry], h: f64, r: f64) -> (f64, f64, f64, f64) {
    let (mut bulk, mut bulk_err, mut wet, mut wet_err) = (0.0, 0.0, 0.0, 0.0);
    let half = 0.5 * h;
    for c in cells {
        let (ax, ay) = (c.center[0].abs(), c.center[1].abs());
        let near = (ax - half).max(0.0).hypot((ay - half).max(0.0));
        if near >= r {
            continue;
        }
        let far = (ax + half).hypot(ay + half);
        if far <= r {
            bulk += c.bulk;
            bulk_err += c.bulk_err;
            wet += c.wet;
            continue;
        }
        let (area, mx, my) = disk_cell_moments(c.center, h, r);
        let w = area / (h * h);
        let cb = (c.grad_bulk[0] * mx + c.grad_bulk[1] * my) / (h * h);
        let cw = (c.grad_wet[0] * mx + c.grad_wet[1] * my) / (h * h);
        bulk += w * c.bulk + cb;
        bulk_err += w * c.bulk_err + cb.abs();
        wet += w * c.wet + cw;
        wet_err += cw.abs();
    }
    (bulk, bulk_err, wet, wet_err)
}

struct PhiPieces {
    g: Vec<f64>,
    j: Vec<f64>,
    err: Vec<f64>,
    normal: Vec<f64>,
}

fn phi_pieces(
    trace: &Trace,
    radii: &[f64],
    sigma: f64,
    params: &KernelParams,
    cfg: &QuadratureConfig,
    opts: &PhiOptions,
) -> Result<PhiPieces> {
    let grid = &trace.grid;
    let (h, s) = (grid.h(), params.s);
    let r_max = *radii.last().unwrap();
    let reach = r_max + 3.0 * h;
    let w = grid.window();
    if (0..2).any(|d| w.min[d] > -reach || w.max(d) < reach) {
        return invalid("radii reach too close to the window boundary");
    }
    let top = 2.0 * r_max;
    let levels = opts.levels.unwrap_or_else(|| default_levels(h, top));
    let u = extend_within(trace, top, levels, reach, params, cfg)?;
    let coarse = u.subsampled();
    let (gf, gc) = (u.gradients(), coarse.gradients());
    let c = PoissonKernel::new(params)?.normalization;
    let cells = cell_entries(trace, r_max + 2.0 * h, params, cfg)?;
    let mut out = PhiPieces { g: vec![], j: vec![], err: vec![], normal: vec![] };
    let flux = |v: f64, dr: f64, t: f64| t.powf(1.0 - s) * v * dr;
    let normal = |_: f64, dr: f64, t: f64| t.powf(1.0 - s) * dr * dr;
    for &r in radii {
        let cap = hemisphere(&u, &gf, r, h, opts.polar_nodes, flux);
        let cap_coarse = hemisphere(&coarse, &gc, r, h, opts.polar_nodes, flux);
        let (bulk, bulk_err, wet, wet_err) = disk_sums(&cells, h, r);
        let scale = r.powf(s - 2.0);
        out.g.push(scale * (c * s * bulk + cap));
        out.j.push(scale * wet);
        out.err.push(scale * (c * s * bulk_err + (cap - cap_coarse).abs() + (sigma - 1.0).abs() * wet_err));
        out.normal.push(hemisphere(&u, &gf, r, h, opts.polar_nodes, normal));
    }
    Ok(out)
}

/// Φ, its Dirichlet and wetting parts, and error estimates on a list of
/// radii. The Dirichlet part is obtained from the flux of the extension
/// through the flat and spherical parts of `∂B_r^+`.
pub fn phi_profile(
    trace: &Trace,
    radii: &[f64],
    sigma: f64,
    params: &KernelParams,
    cfg: &QuadratureConfig,
    opts: &PhiOptions,
) -> Result<PhiProfile> {
    params.validate()?;
    if params.n != 2 {
        return Err(Error::Unsupported("the profile is implemented for planar sets".into()));
    }
    if !(sigma > -1.0 && sigma < 1.0) {
        return invalid("sigma must lie in (-1, 1)");
    }
    if radii.is_empty() || radii[0] <= 0.0 || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return invalid("radii must be positive and increasing");
    }
    if opts.polar_nodes < 4 {
        return invalid("too few polar nodes");
    }
    if !trace.in_upper_halfspace() {
        return invalid("set must lie in the upper half-space");
    }
    if trace.grid.wall_layer().is_none() {
        return invalid("grid must have the wall on cell faces");
    }
    let fine = phi_pieces(trace, radii, sigma, params, cfg, opts)?;
    let mut errors = fine.err.clone();
    let phi: Vec<f64> = fine.g.iter().zip(&fine.j).map(|(g, j)| g + (sigma - 1.0) * j).collect();
    if opts.resolution_check {
        let coarse = phi_pieces(&trace.coarsened()?, radii, sigma, params, cfg, opts)?;
        for k in 0..radii.len() {
            let other = coarse.g[k] + (sigma - 1.0) * coarse.j[k];
            errors[k] += (phi[k] - other).abs();
        }
    }
    let monotone = (1..radii.len()).map(|k| phi[k] >= phi[k - 1] - 3.0 * (errors[k] + errors[k - 1])).collect();
    Ok(PhiProfile {
        radii: radii.to_vec(),
        sigma,
        phi,
        dirichlet_part: fine.g,
        wetting_part: fine.j,
        errors,
        normal_gradient: fine.normal,
        monotone,
    })
}
