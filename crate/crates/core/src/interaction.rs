//! The fractional interaction `I_s(A, B) = ∫_A ∫_B |x - y|^{-(n+s)} dx dy`
//! of disjoint sets.
//!
//! Grid sets are handled through an [`AtomTable`]: the window's cells are
//! labelled by their membership in a list of layers, cell pairs are summed
//! once per pair of labels, and any interaction between unions of labels is
//! then a regrouping of the same table entries. The complement of the window
//! is represented exactly by per-cell exterior interactions.
//!
//! Planar analytic regions are integrated along rays: the potential
//! `V_B(x) = ∫_B |x - y|^{-(2+s)} dy` reduces to an angular integral of
//! `(a^{-s} - b^{-s}) / s` over the chords `(a, b)` of `B` seen from `x`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Exterior, GridSet, Region, Window};
use crate::kernel::{CellKernel, ExteriorFields};
use crate::quad::{self, gauss_legendre, integrate, integrate_nested, Estimate, Tolerance};
use crate::rays::{self, Spans};

/// Dimension and fractional order of the kernel `|z|^{-(n+s)}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub n: usize,
    pub s: f64,
}

impl KernelParams {
    pub fn new(n: usize, s: f64) -> Result<Self> {
        let p = KernelParams { n, s };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return invalid("dimension must be at least 1");
        }
        if !(self.s > 0.0 && self.s < 1.0) {
            return invalid(format!("fractional order s = {} is not in (0, 1)", self.s));
        }
        Ok(())
    }

    pub fn exponent(&self) -> f64 {
        self.n as f64 + self.s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub max_subdivision_depth: u32,
    /// Cell pairs farther apart than this many cell diameters use the
    /// midpoint value.
    pub farfield_ratio: f64,
    /// Truncation radius for unbounded analytic sets.
    pub tail_radius: Option<f64>,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig { rel_tol: 1e-4, max_subdivision_depth: 30, farfield_ratio: 32.0, tail_radius: None }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol < 1.0) {
            return invalid("rel_tol must lie in (0, 1)");
        }
        if !(self.farfield_ratio >= 2.0) {
            return invalid("farfield_ratio must be at least 2");
        }
        if let Some(r) = self.tail_radius {
            if !(r > 0.0 && r.is_finite()) {
                return invalid("tail_radius must be positive");
            }
        }
        Ok(())
    }

    fn tolerance(&self, rel: f64) -> Tolerance {
        Tolerance::new(1e-300, rel).with_depth(self.max_subdivision_depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionResult {
    pub value: f64,
    pub error_estimate: f64,
    pub tail_bound: f64,
    pub converged: bool,
}

impl InteractionResult {
    pub fn zero() -> Self {
        InteractionResult { value: 0.0, error_estimate: 0.0, tail_bound: 0.0, converged: true }
    }

    /// `Σ coef · term` with errors added in absolute value.
    pub fn combine(terms: &[(f64, InteractionResult)]) -> Self {
        let mut out = InteractionResult::zero();
        for (c, t) in terms {
            out.value += c * t.value;
            out.error_estimate += c.abs() * t.error_estimate;
            out.tail_bound += c.abs() * t.tail_bound;
            out.converged &= t.converged;
        }
        out
    }

    /// Total uncertainty: quadrature error plus tail bound.
    pub fn uncertainty(&self) -> f64 {
        self.error_estimate + self.tail_bound
    }
}

/// Either kind of set.
#[derive(Debug, Clone, Copy)]
pub enum SetRef<'a> {
    Grid(&'a GridSet),
    Region(&'a Region),
}

impl<'a> From<&'a GridSet> for SetRef<'a> {
    fn from(g: &'a GridSet) -> Self {
        SetRef::Grid(g)
    }
}

impl<'a> From<&'a Region> for SetRef<'a> {
    fn from(r: &'a Region) -> Self {
        SetRef::Region(r)
    }
}

/// `I_s(a, b)` for disjoint sets.
pub fn interaction(a: SetRef, b: SetRef, params: &KernelParams, cfg: &QuadratureConfig) -> Result<InteractionResult> {
    params.validate()?;
    cfg.validate()?;
    match (a, b) {
        (SetRef::Grid(x), SetRef::Grid(y)) => grid_pair(x, y, params, cfg),
        (SetRef::Grid(g), SetRef::Region(r)) | (SetRef::Region(r), SetRef::Grid(g)) => grid_region(g, r, params, cfg),
        (SetRef::Region(x), SetRef::Region(y)) => region_pair(x, y, params, cfg),
    }
}

fn check_grid(g: &GridSet, params: &KernelParams) -> Result<()> {
    if g.dim() != params.n {
        return invalid(format!("grid set has dimension {}, kernel expects {}", g.dim(), params.n));
    }
    Ok(())
}

fn grid_pair(x: &GridSet, y: &GridSet, params: &KernelParams, cfg: &QuadratureConfig) -> Result<InteractionResult> {
    check_grid(x, params)?;
    if !x.same_grid(y) {
        return invalid("grid sets live on different grids");
    }
    let cells = x.overlap(y)?;
    if cells > 0 {
        return Err(Error::Overlapping { cells });
    }
    let table = AtomTable::build(&[Layer::grid(x), Layer::grid(y)], params, cfg)?;
    table.interaction(|m| m & 1 != 0, |m| m & 2 != 0)
}

fn grid_region(g: &GridSet, r: &Region, params: &KernelParams, cfg: &QuadratureConfig) -> Result<InteractionResult> {
    check_grid(g, params)?;
    r.check_dim(params.n)?;
    let inside = GridSet::rasterize(r, g.window().clone(), g.resolution())?;
    let cells = g.overlap(&inside)?;
    if cells > 0 {
        return Err(Error::Overlapping { cells });
    }
    if r.exterior(g.window()).is_some() {
        let table = AtomTable::build(&[Layer::grid(g), Layer::region(r, g)?], params, cfg)?;
        return table.interaction(|m| m & 1 != 0, |m| m & 2 != 0);
    }
    if params.n != 2 {
        return Err(Error::Unsupported(
            "regions that leave the window in a general way are only supported in the plane".into(),
        ));
    }
    let inner = AtomTable::build(&[Layer::grid(g), Layer::grid(&inside)], params, cfg)?.interaction(|m| m & 1 != 0, |m| m & 2 != 0)?;
    let mut value = inner.value;
    let mut error = inner.error_estimate;
    let mut converged = inner.converged;
    for c in g.occupied() {
        let est = cell_exterior_potential(g, c, r, params.s, cfg.rel_tol * 0.1)?;
        value += est.value;
        error += est.error;
        converged &= est.converged;
    }
    Ok(InteractionResult { value, error_estimate: error, tail_bound: 0.0, converged: converged && error <= cfg.rel_tol * value.abs() })
}

/// One membership layer of an [`AtomTable`].
#[derive(Debug, Clone)]
pub struct Layer {
    template: GridSet,
    exterior: Exterior,
}

impl Layer {
    pub fn grid(g: &GridSet) -> Layer {
        Layer { template: g.clone(), exterior: Exterior::NONE }
    }

    /// A region rasterized on the grid of `like`; its part outside the
    /// window must be expressible through the two exterior halves.
    pub fn region(r: &Region, like: &GridSet) -> Result<Layer> {
        let exterior = r.exterior(like.window()).ok_or_else(|| {
            Error::Unsupported("region outside the window is not a union of half-space pieces".into())
        })?;
        Ok(Layer { template: GridSet::rasterize(r, like.window().clone(), like.resolution())?, exterior })
    }

    pub fn set(&self) -> &GridSet {
        &self.template
    }
}

const EXTERIOR_FLAG: u32 = 1 << 31;

/// Interactions between all pairs of atoms of a layered partition of space.
#[derive(Debug, Clone)]
pub struct AtomTable {
    masks: Vec<u32>,
    exterior: Vec<bool>,
    values: Vec<f64>,
    errors: Vec<f64>,
    rel_tol: f64,
}

impl AtomTable {
    pub fn build(layers: &[Layer], params: &KernelParams, cfg: &QuadratureConfig) -> Result<AtomTable> {
        params.validate()?;
        cfg.validate()?;
        let first = layers.first().ok_or_else(|| Error::InvalidArgument("no layers".into()))?;
        if layers.len() > 30 {
            return invalid("too many layers");
        }
        let grid = &first.template;
        check_grid(grid, params)?;
        for l in layers {
            if !l.template.same_grid(grid) {
                return invalid("layers live on different grids");
            }
        }
        let kernel = CellKernel::for_grid(grid, params.s, cfg.farfield_ratio);
        let fields = exterior_fields(&kernel, grid);

        let total = grid.len();
        let mut cell_mask = vec![0u32; total];
        for (bit, l) in layers.iter().enumerate() {
            for i in l.template.occupied() {
                cell_mask[i] |= 1 << bit;
            }
        }
        let split = layers.iter().any(|l| l.exterior.upper != l.exterior.lower);
        let ext_masks: Vec<(u32, u8)> = if split {
            if grid.wall_layer().is_none() {
                return Err(Error::Unsupported("half-space layers need the wall on cell faces".into()));
            }
            let pick = |upper: bool| {
                layers.iter().enumerate().fold(0u32, |acc, (bit, l)| {
                    let inside = if upper { l.exterior.upper } else { l.exterior.lower };
                    if inside {
                        acc | 1 << bit
                    } else {
                        acc
                    }
                })
            };
            vec![(pick(true) | EXTERIOR_FLAG, 1), (pick(false) | EXTERIOR_FLAG, 2)]
        } else {
            let m = layers.iter().enumerate().fold(0u32, |acc, (bit, l)| if l.exterior.upper { acc | 1 << bit } else { acc });
            vec![(m | EXTERIOR_FLAG, 0)]
        };

        let mut ids: BTreeMap<u32, usize> = BTreeMap::new();
        for m in &cell_mask {
            let next = ids.len();
            ids.entry(*m).or_insert(next);
        }
        let grid_atoms = ids.len();
        let mut masks = vec![0u32; grid_atoms + ext_masks.len()];
        for (m, id) in &ids {
            masks[*id] = *m;
        }
        for (k, (m, _)) in ext_masks.iter().enumerate() {
            masks[grid_atoms + k] = *m;
        }
        let atoms = masks.len();
        let label: Vec<u16> = cell_mask.iter().map(|m| ids[m] as u16).collect();

        let (values, errors) = pair_sums(&kernel, grid, &label, atoms);
        let mut values = values;
        let mut errors = errors;
        for c in 0..total {
            let a = label[c] as usize;
            for (k, (_, piece)) in ext_masks.iter().enumerate() {
                let v = match piece {
                    1 => fields.upper.as_ref().expect("split fields")[c],
                    2 => fields.lower.as_ref().expect("split fields")[c],
                    _ => fields.all[c],
                };
                let b = grid_atoms + k;
                values[a * atoms + b] += v;
                values[b * atoms + a] += v;
                errors[a * atoms + b] += fields.error[c];
                errors[b * atoms + a] += fields.error[c];
            }
        }
        let mut exterior = vec![false; atoms];
        for e in exterior.iter_mut().skip(grid_atoms) {
            *e = true;
        }
        Ok(AtomTable { masks: masks.into_iter().map(|m| m & !EXTERIOR_FLAG).collect(), exterior, values, errors, rel_tol: cfg.rel_tol })
    }

    pub fn atoms(&self) -> usize {
        self.masks.len()
    }

    /// `I_s(X, Y)` where `X` and `Y` are the unions of atoms whose layer
    /// masks satisfy the predicates.
    pub fn interaction(&self, x: impl Fn(u32) -> bool, y: impl Fn(u32) -> bool) -> Result<InteractionResult> {
        let n = self.atoms();
        let xs: Vec<usize> = (0..n).filter(|&a| x(self.masks[a])).collect();
        let ys: Vec<usize> = (0..n).filter(|&a| y(self.masks[a])).collect();
        if xs.iter().any(|a| ys.contains(a)) {
            return invalid("interaction of overlapping selections");
        }
        let unbounded_x = xs.iter().any(|&a| self.exterior[a]);
        let unbounded_y = ys.iter().any(|&a| self.exterior[a]);
        if unbounded_x && unbounded_y {
            return invalid("both selections reach outside the window");
        }
        // canonical pair order keeps I(X, Y) and I(Y, X) bitwise equal
        let mut value = 0.0;
        let mut error = 0.0;
        for a in 0..n {
            for b in a + 1..n {
                let cross = (xs.contains(&a) && ys.contains(&b)) || (ys.contains(&a) && xs.contains(&b));
                if cross {
                    value += self.values[a * n + b];
                    error += self.errors[a * n + b];
                }
            }
        }
        Ok(InteractionResult {
            value,
            error_estimate: error,
            tail_bound: 0.0,
            converged: error <= self.rel_tol * value.abs() || value == 0.0,
        })
    }
}

fn exterior_fields(kernel: &Arc<CellKernel>, grid: &GridSet) -> Arc<ExteriorFields> {
    use std::sync::{Mutex, OnceLock};
    type Entry = (Arc<CellKernel>, Window, Arc<ExteriorFields>);
    static CACHE: OnceLock<Mutex<Vec<Entry>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(Vec::new()));
    {
        let guard = cache.lock().expect("exterior cache poisoned");
        if let Some((_, _, f)) = guard.iter().find(|(k, w, _)| Arc::ptr_eq(k, kernel) && w == grid.window()) {
            return f.clone();
        }
    }
    let f = Arc::new(ExteriorFields::new(kernel, grid));
    let mut guard = cache.lock().expect("exterior cache poisoned");
    if guard.len() >= 8 {
        guard.remove(0);
    }
    guard.push((kernel.clone(), grid.window().clone(), f.clone()));
    f
}

/// Shared per-cell exterior interactions for a grid.
pub fn grid_exterior(grid: &GridSet, params: &KernelParams, cfg: &QuadratureConfig) -> Arc<ExteriorFields> {
    let kernel = CellKernel::for_grid(grid, params.s, cfg.farfield_ratio);
    exterior_fields(&kernel, grid)
}

/// Symmetric matrix of summed cell-pair interactions between labels.
fn pair_sums(kernel: &CellKernel, grid: &GridSet, label: &[u16], atoms: usize) -> (Vec<f64>, Vec<f64>) {
    const CHUNK: usize = 256;
    let total = label.len();
    let mi: Vec<[usize; 3]> = (0..total).map(|i| grid.multi_index(i)).collect();
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut v = vec![0.0; atoms * atoms];
            let mut e = vec![0.0; atoms * atoms];
            let mut row_v = vec![0.0; atoms];
            let mut row_e = vec![0.0; atoms];
            for i in chunk * CHUNK..((chunk + 1) * CHUNK).min(total) {
                let li = label[i];
                row_v.iter_mut().for_each(|x| *x = 0.0);
                row_e.iter_mut().for_each(|x| *x = 0.0);
                for j in i + 1..total {
                    let lj = label[j];
                    if lj != li {
                        let k = kernel.offset_index(&mi[i], &mi[j]);
                        row_v[lj as usize] += kernel.value(k);
                        row_e[lj as usize] += kernel.error(k);
                    }
                }
                let base = li as usize * atoms;
                for b in 0..atoms {
                    v[base + b] += row_v[b];
                    e[base + b] += row_e[b];
                }
            }
            (v, e)
        })
        .collect();
    let mut v = vec![0.0; atoms * atoms];
    let mut e = vec![0.0; atoms * atoms];
    for (pv, pe) in &partials {
        for k in 0..atoms * atoms {
            v[k] += pv[k];
            e[k] += pe[k];
        }
    }
    // fold into a symmetric matrix: entry (a, b) collected pairs with the
    // lower-indexed cell in `a`
    let mut sv = vec![0.0; atoms * atoms];
    let mut se = vec![0.0; atoms * atoms];
    for a in 0..atoms {
        for b in 0..atoms {
            if a != b {
                sv[a * atoms + b] = v[a * atoms + b] + v[b * atoms + a];
                se[a * atoms + b] = e[a * atoms + b] + e[b * atoms + a];
            }
        }
    }
    (sv, se)
}

/// Angular breakpoints at the directions of the given points seen from `x`.
pub(crate) fn breakpoints(x: [f64; 2], points: &[[f64; 2]]) -> Vec<f64> {
    let mut b: Vec<f64> = vec![0.0, 0.5 * PI, PI, 1.5 * PI, 2.0 * PI];
    for p in points {
        let (dx, dy) = (p[0] - x[0], p[1] - x[1]);
        if dx != 0.0 || dy != 0.0 {
            b.push(dy.atan2(dx).rem_euclid(2.0 * PI));
        }
    }
    b.sort_by(f64::total_cmp);
    b.dedup_by(|a, c| (*a - *c).abs() < 1e-14);
    b
}

/// `∫ |x - y|^{-(2+s)} dy` over the set whose chords along direction `u`
/// from `x` are returned by `chords`.
pub fn planar_potential(x: [f64; 2], s: f64, chords: impl Fn([f64; 2]) -> Spans, vertices: &[[f64; 2]], tol: Tolerance) -> Estimate {
    let breaks = breakpoints(x, vertices);
    integrate(
        |phi| {
            let u = [phi.cos(), phi.sin()];
            let mut acc = 0.0;
            for (a, b) in chords(u) {
                let lo = if a <= 0.0 { f64::INFINITY } else { a.powf(-s) };
                let hi = if b.is_infinite() { 0.0 } else { b.powf(-s) };
                acc += lo - hi;
            }
            acc / s
        },
        &breaks,
        tol,
    )
}

/// Potential `∫_{R \ W} |x - y|^{-(2+s)} dy` at a point `x` of the window.
pub fn window_exterior_potential(window: &Window, r: &Region, x: [f64; 2], s: f64, tol: Tolerance) -> Estimate {
    let win = Region::Box { min: window.min.clone(), max: vec![window.max(0), window.max(1)] };
    let mut verts = r.vertices();
    verts.extend(win.vertices());
    planar_potential(
        x,
        s,
        |u| {
            let out = rays::complement(&win.ray(&x, &u));
            rays::intersect(&r.ray(&x, &u), &out)
        },
        &verts,
        tol,
    )
}

/// `I_s(c, R \ W)` for a single cell `c` of a planar grid, by a tensor Gauss
/// rule over the cell applied to the exact potential of the region's part
/// outside the window. The error compares two rule orders.
pub fn cell_exterior_potential(g: &GridSet, cell: usize, r: &Region, s: f64, rel: f64) -> Result<Estimate> {
    if g.dim() != 2 {
        return Err(Error::Unsupported("planar only".into()));
    }
    let center = g.center(cell);
    let h = g.h();
    let tol = Tolerance::new(1e-300, rel);
    let rule = |order: usize| -> Estimate {
        let (xs, ws) = gauss_legendre(order);
        let mut value = 0.0;
        let mut error = 0.0;
        let mut converged = true;
        for i in 0..order {
            for j in 0..order {
                let p = [center[0] + 0.5 * h * xs[i], center[1] + 0.5 * h * xs[j]];
                let est = window_exterior_potential(g.window(), r, p, s, tol);
                let wt = ws[i] * ws[j] * 0.25 * h * h;
                value += wt * est.value;
                error += wt * est.error;
                converged &= est.converged;
            }
        }
        Estimate { value, error, converged }
    };
    let fine = rule(3);
    let coarse = rule(2);
    Ok(Estimate { value: fine.value, error: fine.error + (fine.value - coarse.value).abs(), converged: fine.converged })
}

/// Panel budget of the inner levels of the nested region-pair quadrature.
const INNER_PANELS: usize = 50;

fn region_pair(x: &Region, y: &Region, params: &KernelParams, cfg: &QuadratureConfig) -> Result<InteractionResult> {
    if params.n != 2 {
        return Err(Error::Unsupported("analytic region pairs are only supported in the plane".into()));
    }
    x.check_dim(2)?;
    y.check_dim(2)?;
    let (inner, outer) = match (x.bounding_box(), y.bounding_box()) {
        (Some(_), _) => (x, y),
        (None, Some(_)) => (y, x),
        (None, None) => return invalid("both regions are unbounded"),
    };
    let (lo, hi) = inner.bounding_box().expect("bounded");
    check_disjoint_regions(inner, outer, &lo, &hi)?;

    let s = params.s;
    let mut tail_bound = 0.0;
    let outer_eff = match cfg.tail_radius {
        Some(radius) if outer.bounding_box().is_none() => {
            tail_bound = tail_interaction_bound(SetRef::Region(inner), radius, params)?;
            outer.clone().and(Region::ball(vec![0.0, 0.0], radius))
        }
        _ => outer.clone(),
    };
    let p = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
    let outer_vertices = outer_eff.vertices();
    let rel = cfg.rel_tol * 0.1;
    let tol_outer = cfg.tolerance(cfg.rel_tol * 0.5);
    // touching sets make the inner integrands singular at the shared boundary
    let mut tol_inner = cfg.tolerance(rel);
    tol_inner.max_panels = tol_inner.max_panels.min(INNER_PANELS);
    let potential = |q: [f64; 2]| planar_potential(q, s, |u| outer_eff.ray(&q, &u), &outer_vertices, tol_inner);
    let est = integrate_nested(
        |psi| {
            let v = [psi.cos(), psi.sin()];
            let mut value = 0.0;
            let mut error = 0.0;
            for (a, b) in inner.ray(&p, &v) {
                // ρ = a + (b - a) w(u) flattens a d^{-s} blow-up at either end
                let m = 1.0 / (1.0 - s);
                let radial = integrate_nested(
                    |u| {
                        let (um, vm) = (u.powf(m), (1.0 - u).powf(m));
                        let den = um + vm;
                        let w = um / den;
                        let dw = m * (u * (1.0 - u)).powf(m - 1.0) / (den * den);
                        let rho = a + (b - a) * w;
                        let e = potential([p[0] + rho * v[0], p[1] + rho * v[1]]);
                        let jac = (b - a) * dw * rho;
                        (e.value * jac, e.error * jac)
                    },
                    &[0.0, 1.0],
                    tol_inner,
                );
                value += radial.value;
                error += radial.error;
            }
            (value, error)
        },
        &breakpoints(p, &inner.vertices()),
        tol_outer,
    );
    Ok(InteractionResult {
        value: est.value,
        error_estimate: est.error,
        tail_bound,
        converged: est.converged && est.error <= cfg.rel_tol * est.value.abs(),
    })
}

fn check_disjoint_regions(inner: &Region, outer: &Region, lo: &[f64], hi: &[f64]) -> Result<()> {
    let side = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let w = Window::new(lo.to_vec(), side)?;
    let a = GridSet::rasterize(inner, w.clone(), 64)?;
    let b = GridSet::rasterize(outer, w, 64)?;
    let cells = a.overlap(&b)?;
    if cells > 0 {
        return Err(Error::Overlapping { cells });
    }
    Ok(())
}

/// Upper bound on `I_s(a, R^n \ B_R)` for `a ⊆ B_{R/2}`.
pub fn tail_interaction_bound(a: SetRef, radius: f64, params: &KernelParams) -> Result<f64> {
    params.validate()?;
    let (measure, bbox) = match a {
        SetRef::Grid(g) => (g.measure(), g.bounding_box()),
        SetRef::Region(r) => {
            let bbox = r.bounding_box().ok_or_else(|| Error::InvalidArgument("set is unbounded".into()))?;
            let side = (0..bbox.0.len()).map(|d| bbox.1[d] - bbox.0[d]).fold(0.0, f64::max);
            let g = GridSet::rasterize(r, Window::new(bbox.0.clone(), side)?, if params.n == 3 { 48 } else { 256 })?;
            // the rasterized measure is only used for the bound; pad it by
            // the boundary cells so the bound stays an upper bound
            let pad = boundary_cells(&g) as f64 * g.cell_volume();
            (g.measure() + pad, Some(bbox))
        }
    };
    let Some((lo, hi)) = bbox else {
        return Ok(0.0);
    };
    let far = lo
        .iter()
        .zip(&hi)
        .map(|(l, h)| l.abs().max(h.abs()).powi(2))
        .sum::<f64>()
        .sqrt();
    if far > radius / 2.0 {
        return invalid(format!("set reaches distance {far} from the origin, beyond half the tail radius {radius}"));
    }
    let s = params.s;
    Ok(measure * quad::sphere_area(params.n) * (radius / 2.0).powf(-s) / s)
}

fn boundary_cells(g: &GridSet) -> usize {
    let n = g.dim();
    let res = g.resolution();
    g.occupied()
        .filter(|&i| {
            let mi = g.multi_index(i);
            (0..n).any(|d| {
                [-1i64, 1].iter().any(|&step| {
                    let t = mi[d] as i64 + step;
                    if t < 0 || t >= res as i64 {
                        return true;
                    }
                    let mut m = mi;
                    m[d] = t as usize;
                    !g.get(g.linear_index(&m[..n]))
                })
            })
        })
        .count()
}

/// Monte Carlo estimate of `I_s(a, b)` by uniform sampling of both
/// bounding boxes; the error estimate is three standard errors.
pub fn monte_carlo_interaction(a: SetRef, b: SetRef, params: &KernelParams, samples: usize, seed: u64) -> Result<InteractionResult> {
    params.validate()?;
    if samples == 0 {
        return invalid("Monte Carlo needs at least one sample");
    }
    let bbox = |s: SetRef| -> Result<(Vec<f64>, Vec<f64>)> {
        match s {
            SetRef::Grid(g) => Ok(g.bounding_box().unwrap_or((vec![0.0; g.dim()], vec![0.0; g.dim()]))),
            SetRef::Region(r) => r.bounding_box().ok_or_else(|| Error::InvalidArgument("Monte Carlo needs bounded sets".into())),
        }
    };
    let contains = |s: SetRef, x: &[f64]| match s {
        SetRef::Grid(g) => g.contains_point(x),
        SetRef::Region(r) => r.contains(x),
    };
    let (alo, ahi) = bbox(a)?;
    let (blo, bhi) = bbox(b)?;
    let n = params.n;
    let vol = |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).map(|(l, h)| h - l).product::<f64>();
    let scale = vol(&alo, &ahi) * vol(&blo, &bhi);
    if scale == 0.0 {
        return Ok(InteractionResult::zero());
    }
    let alpha = params.exponent();
    const BLOCK: usize = 1 << 16;
    let blocks = samples.div_ceil(BLOCK);
    let partial: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut x = vec![0.0; n];
            let mut y = vec![0.0; n];
            let (mut s1, mut s2) = (0.0, 0.0);
            let count = BLOCK.min(samples - k * BLOCK);
            for _ in 0..count {
                for d in 0..n {
                    x[d] = rng.gen_range(alo[d]..ahi[d]);
                    y[d] = rng.gen_range(blo[d]..bhi[d]);
                }
                if contains(a, &x) && contains(b, &y) {
                    let r2: f64 = x.iter().zip(&y).map(|(p, q)| (p - q) * (p - q)).sum();
                    let f = r2.powf(-alpha / 2.0);
                    s1 += f;
                    s2 += f * f;
                }
            }
            (s1, s2)
        })
        .collect();
    let (s1, s2) = partial.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let m = samples as f64;
    let mean = s1 / m;
    let var = (s2 / m - mean * mean).max(0.0);
    let se = (var / m).sqrt();
    Ok(InteractionResult { value: scale * mean, error_estimate: 3.0 * scale * se, tail_bound: 0.0, converged: true })
}
