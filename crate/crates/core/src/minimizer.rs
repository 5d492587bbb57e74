//! Volume-constrained annealing of the discrete capillarity energy in a
//! planar container, and blow-up diagnostics at a contact point on the wall.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::extension::{phi_profile, PhiOptions, PhiProfile, Trace};
use crate::geometry::{GridSet, Window};
use crate::interaction::{KernelParams, QuadratureConfig};
use crate::kernel::CellKernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MoveKind {
    /// Vacate one boundary cell of the set and occupy one boundary cell of
    /// its complement in the container.
    #[default]
    SwapPair,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealConfig {
    /// Starting temperature; by default the median `|ΔC|` of 100 random moves.
    pub initial_temperature: Option<f64>,
    pub cooling_ratio: f64,
    pub sweeps: usize,
    pub volume_cells: usize,
    pub seed: u64,
    pub move_kind: MoveKind,
    /// Finish with steepest-descent swaps until none lowers the energy.
    pub polish: bool,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            initial_temperature: None,
            cooling_ratio: 0.95,
            sweeps: 200,
            volume_cells: 0,
            seed: 0,
            move_kind: MoveKind::SwapPair,
            polish: true,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cooling_ratio > 0.0 && self.cooling_ratio < 1.0) {
            return invalid("cooling_ratio must lie in (0, 1)");
        }
        if let Some(t) = self.initial_temperature {
            if !(t > 0.0 && t.is_finite()) {
                return invalid("initial_temperature must be positive");
            }
        }
        Ok(())
    }
}

/// Vector of indices with O(1) insertion, removal and uniform choice.
#[derive(Debug, Clone)]
struct IndexPool {
    items: Vec<usize>,
    pos: Vec<usize>,
}

impl IndexPool {
    fn new(capacity: usize) -> Self {
        IndexPool { items: Vec::new(), pos: vec![usize::MAX; capacity] }
    }

    fn insert(&mut self, k: usize) {
        if self.pos[k] == usize::MAX {
            self.pos[k] = self.items.len();
            self.items.push(k);
        }
    }

    fn remove(&mut self, k: usize) {
        let p = self.pos[k];
        if p != usize::MAX {
            let last = *self.items.last().unwrap();
            self.items.swap_remove(p);
            if last != k {
                self.pos[last] = p;
            }
            self.pos[k] = usize::MAX;
        }
    }

    fn pick(&self, rng: &mut impl Rng) -> Option<usize> {
        (!self.items.is_empty()).then(|| self.items[rng.gen_range(0..self.items.len())])
    }
}

/// A set inside a container together with the per-cell interaction sums
/// needed to update the energy after single-cell changes.
///
/// Cells of the container are addressed by their position in
/// [`CapillarityState::members`].
#[derive(Debug, Clone)]
pub struct CapillarityState {
    container: GridSet,
    set: GridSet,
    kernel: Arc<CellKernel>,
    sigma: f64,
    members: Vec<usize>,
    index: Vec<[usize; 3]>,
    slot: Vec<usize>,
    neighbours: Vec<Vec<usize>>,
    /// `Σ_{E \ c} K(c, ·)`.
    in_set: Vec<f64>,
    /// `Σ_{ω \ c} K(c, ·)`.
    in_container: Vec<f64>,
    /// `I_s(c, ω^c)`.
    wall: Vec<f64>,
    energy: f64,
    inner_boundary: IndexPool,
    outer_boundary: IndexPool,
}

impl CapillarityState {
    pub fn new(container: &GridSet, set: &GridSet, sigma: f64, params: &KernelParams, cfg: &QuadratureConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        if params.n != container.dim() {
            return invalid("kernel dimension differs from the grid");
        }
        if !set.same_grid(container) {
            return invalid("set and container live on different grids");
        }
        if set.difference(container)?.count() > 0 {
            return invalid("set is not contained in the container");
        }
        let kernel = CellKernel::for_grid(container, params.s, cfg.farfield_ratio);
        let members: Vec<usize> = container.occupied().collect();
        let index: Vec<[usize; 3]> = members.iter().map(|&c| container.multi_index(c)).collect();
        let mut slot = vec![usize::MAX; container.len()];
        for (p, &c) in members.iter().enumerate() {
            slot[c] = p;
        }
        let m = members.len();
        let mut in_container = vec![0.0; m];
        let mut in_set = vec![0.0; m];
        for p in 0..m {
            let (mut a, mut b) = (0.0, 0.0);
            for q in 0..m {
                let k = kernel.value(kernel.offset_index(&index[p], &index[q]));
                a += k;
                if set.get(members[q]) {
                    b += k;
                }
            }
            in_container[p] = a;
            in_set[p] = b;
        }
        let per = kernel.cell_perimeter.value;
        let wall = in_container.iter().map(|v| per - v).collect();
        let n = container.dim();
        let res = container.resolution() as i64;
        let neighbours = index
            .iter()
            .map(|mi| {
                let mut out = Vec::with_capacity(2 * n);
                for d in 0..n {
                    for delta in [-1i64, 1] {
                        let k = mi[d] as i64 + delta;
                        if (0..res).contains(&k) {
                            let mut other = *mi;
                            other[d] = k as usize;
                            let q = slot[container.linear_index(&other[..n])];
                            if q != usize::MAX {
                                out.push(q);
                            }
                        }
                    }
                }
                out
            })
            .collect();
        let mut state = CapillarityState {
            container: container.clone(),
            set: set.clone(),
            kernel,
            sigma,
            members,
            index,
            slot,
            neighbours,
            in_set,
            in_container,
            wall,
            energy: 0.0,
            inner_boundary: IndexPool::new(m),
            outer_boundary: IndexPool::new(m),
        };
        state.energy = state.recompute_energy();
        for p in 0..m {
            state.refresh_boundary(p);
        }
        Ok(state)
    }

    pub fn set(&self) -> &GridSet {
        &self.set
    }

    pub fn container(&self) -> &GridSet {
        &self.container
    }

    /// Running energy, updated by the incremental deltas.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Linear grid indices of the container cells.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Position of a grid cell among the container cells.
    pub fn position(&self, cell: usize) -> Option<usize> {
        self.slot.get(cell).copied().filter(|&p| p != usize::MAX)
    }

    fn occupied(&self, p: usize) -> bool {
        self.set.get(self.members[p])
    }

    /// `C(E) = Σ_{c ∈ E} [Σ_{ω \ E} K(c, ·) + σ I_s(c, ω^c)]` from the stored sums.
    pub fn recompute_energy(&self) -> f64 {
        (0..self.members.len())
            .filter(|&p| self.occupied(p))
            .map(|p| self.in_container[p] - self.in_set[p] + self.sigma * self.wall[p])
            .sum()
    }

    fn gain(&self, p: usize) -> f64 {
        self.in_container[p] - 2.0 * self.in_set[p] + self.sigma * self.wall[p]
    }

    /// Energy change from toggling the cell at position `p`.
    pub fn toggle_delta(&self, p: usize) -> f64 {
        if self.occupied(p) {
            -self.gain(p)
        } else {
            self.gain(p)
        }
    }

    fn pair(&self, p: usize, q: usize) -> f64 {
        self.kernel.value(self.kernel.offset_index(&self.index[p], &self.index[q]))
    }

    /// Energy change from vacating `out` (occupied) and filling `into` (empty).
    pub fn swap_delta(&self, out: usize, into: usize) -> f64 {
        -self.gain(out) + self.gain(into) + 2.0 * self.pair(out, into)
    }

    /// Toggles the cell at position `p` and returns the energy change.
    pub fn toggle(&mut self, p: usize) -> f64 {
        let delta = self.toggle_delta(p);
        let adding = !self.occupied(p);
        let sign = if adding { 1.0 } else { -1.0 };
        for q in 0..self.members.len() {
            if q != p {
                self.in_set[q] += sign * self.pair(p, q);
            }
        }
        self.set.set(self.members[p], adding);
        self.energy += delta;
        self.refresh_boundary(p);
        for i in 0..self.neighbours[p].len() {
            let q = self.neighbours[p][i];
            self.refresh_boundary(q);
        }
        delta
    }

    fn refresh_boundary(&mut self, p: usize) {
        let occ = self.occupied(p);
        let mixed = self.neighbours[p].iter().any(|&q| self.occupied(q) != occ);
        if occ {
            self.outer_boundary.remove(p);
            if mixed {
                self.inner_boundary.insert(p)
            } else {
                self.inner_boundary.remove(p)
            }
        } else {
            self.inner_boundary.remove(p);
            if mixed {
                self.outer_boundary.insert(p)
            } else {
                self.outer_boundary.remove(p)
            }
        }
    }

    fn propose(&self, rng: &mut impl Rng) -> Option<(usize, usize)> {
        Some((self.inner_boundary.pick(rng)?, self.outer_boundary.pick(rng)?))
    }

    /// Applies the best energy-lowering boundary swap; returns its delta.
    fn best_swap(&mut self) -> Option<f64> {
        let mut best: Option<(f64, usize, usize)> = None;
        let floor = 1e-12 * self.energy.abs().max(1.0);
        for &out in &self.inner_boundary.items {
            for &into in &self.outer_boundary.items {
                let d = self.swap_delta(out, into);
                if d < -floor && best.map_or(true, |(b, _, _)| d < b) {
                    best = Some((d, out, into));
                }
            }
        }
        let (_, out, into) = best?;
        Some(self.toggle(out) + self.toggle(into))
    }
}

/// One row of the annealing log.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SweepRecord {
    pub sweep: usize,
    pub temperature: f64,
    pub energy: f64,
    pub best_energy: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnnealOutcome {
    #[serde(skip)]
    pub set: GridSet,
    pub energy: f64,
    pub initial_temperature: f64,
    pub trace: Vec<SweepRecord>,
    pub proposals: usize,
    pub accepted: usize,
    pub polish_swaps: usize,
}

impl AnnealOutcome {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("sweep,temperature,energy,best_energy,acceptance\n");
        for r in &self.trace {
            out.push_str(&format!("{},{:e},{:.15e},{:.15e},{:.6}\n", r.sweep, r.temperature, r.energy, r.best_energy, r.acceptance));
        }
        out
    }
}

/// Starting set: the container cells with the smallest
/// `|x - x̄| + (y - y_min)/2`, a low wedge centred on the container.
fn initial_set(container: &GridSet, volume: usize) -> Result<GridSet> {
    let cells: Vec<usize> = container.occupied().collect();
    let centers: Vec<Vec<f64>> = cells.iter().map(|&c| container.center(c)).collect();
    let xbar = centers.iter().map(|x| x[0]).sum::<f64>() / centers.len().max(1) as f64;
    let ymin = centers.iter().map(|x| x[1]).fold(f64::INFINITY, f64::min);
    let mut order: Vec<usize> = (0..cells.len()).collect();
    let key = |i: usize| (centers[i][0] - xbar).abs() + 0.5 * (centers[i][1] - ymin);
    order.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    let mut set = GridSet::empty(container.window().clone(), container.resolution())?;
    for &i in order.iter().take(volume) {
        set.set(cells[i], true);
    }
    Ok(set)
}

/// Simulated annealing with volume-preserving swaps, then optional
/// steepest-descent polishing. Returns the lowest-energy state visited.
pub fn minimize(
    container: &GridSet,
    sigma: f64,
    params: &KernelParams,
    anneal: &AnnealConfig,
    cfg: &QuadratureConfig,
) -> Result<AnnealOutcome> {
    anneal.validate()?;
    if params.n != 2 {
        return Err(Error::Unsupported("the minimizer is planar".into()));
    }
    if !(sigma > -1.0 && sigma < 1.0) {
        return invalid("sigma must lie in (-1, 1)");
    }
    if anneal.volume_cells > container.count() {
        return invalid(format!("volume of {} cells exceeds the container's {}", anneal.volume_cells, container.count()));
    }
    let start = initial_set(container, anneal.volume_cells)?;
    let mut state = CapillarityState::new(container, &start, sigma, params, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(anneal.seed);

    let t0 = match anneal.initial_temperature {
        Some(t) => t,
        None => {
            let mut probes: Vec<f64> =
                (0..100).filter_map(|_| state.propose(&mut rng)).map(|(a, b)| state.swap_delta(a, b).abs()).collect();
            probes.sort_by(f64::total_cmp);
            probes.get(probes.len() / 2).copied().filter(|t| *t > 0.0).unwrap_or(1.0)
        }
    };

    let mut best_set = state.set().clone();
    let mut best_energy = state.energy();
    let mut trace = Vec::with_capacity(anneal.sweeps + 1);
    let (mut proposals, mut accepted) = (0usize, 0usize);
    let mut temperature = t0;
    let per_sweep = anneal.volume_cells.max(1);
    for sweep in 0..anneal.sweeps {
        let mut taken = 0usize;
        for _ in 0..per_sweep {
            let Some((out, into)) = state.propose(&mut rng) else { break };
            proposals += 1;
            let d = state.swap_delta(out, into);
            let u: f64 = rng.gen();
            if d <= 0.0 || u < (-d / temperature).exp() {
                state.toggle(out);
                state.toggle(into);
                taken += 1;
            }
        }
        accepted += taken;
        if state.energy() < best_energy {
            best_energy = state.energy();
            best_set = state.set().clone();
        }
        trace.push(SweepRecord {
            sweep,
            temperature,
            energy: state.energy(),
            best_energy,
            acceptance: taken as f64 / per_sweep as f64,
        });
        temperature *= anneal.cooling_ratio;
    }

    let mut state = CapillarityState::new(container, &best_set, sigma, params, cfg)?;
    let mut polish_swaps = 0;
    if anneal.polish {
        while polish_swaps < 10 * per_sweep {
            if state.best_swap().is_none() {
                break;
            }
            polish_swaps += 1;
        }
    }
    let energy = state.recompute_energy();
    trace.push(SweepRecord {
        sweep: anneal.sweeps,
        temperature: 0.0,
        energy,
        best_energy: energy.min(best_energy),
        acceptance: 0.0,
    });
    Ok(AnnealOutcome {
        set: state.set().clone(),
        energy,
        initial_temperature: t0,
        trace,
        proposals,
        accepted,
        polish_swaps,
    })
}

/// Exact energy change from toggling one container cell of `set`.
pub fn incremental_delta(
    set: &GridSet,
    container: &GridSet,
    cell: usize,
    sigma: f64,
    params: &KernelParams,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if cell >= container.len() || !container.get(cell) {
        return invalid("cell is not inside the container");
    }
    if !set.same_grid(container) {
        return invalid("set and container live on different grids");
    }
    params.validate()?;
    let kernel = CellKernel::for_grid(container, params.s, cfg.farfield_ratio);
    let mc = container.multi_index(cell);
    let (mut in_set, mut in_container) = (0.0, 0.0);
    for q in container.occupied() {
        let k = kernel.value(kernel.offset_index(&mc, &container.multi_index(q)));
        in_container += k;
        if set.get(q) {
            in_set += k;
        }
    }
    let wall = kernel.cell_perimeter.value - in_container;
    let gain = in_container - 2.0 * in_set + sigma * wall;
    Ok(if set.get(cell) { -gain } else { gain })
}

/// Which side of the contact point the set occupies along the wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Positive,
    Negative,
}

/// Number of rows above the wall averaged when locating the contact point.
const CONTACT_ROWS: usize = 3;

/// The wall point between two container cells where the occupancy of the
/// rows next to the wall changes most, and the side the set lies on.
pub fn find_contact_point(set: &GridSet, container: &GridSet) -> Result<([f64; 2], Side)> {
    if set.dim() != 2 || !set.same_grid(container) {
        return invalid("contact points need a planar set on the container grid");
    }
    let Some(wall) = set.wall_layer() else { return invalid("grid must have the wall on cell faces") };
    let res = set.resolution();
    let rows = CONTACT_ROWS.min(res - wall);
    let occupancy = |i: usize| (0..rows).filter(|&k| set.get(set.linear_index(&[i, wall + k]))).count() as f64 / rows as f64;
    let in_container = |i: usize| container.get(container.linear_index(&[i, wall]));
    let mut best: Option<(f64, usize)> = None;
    for i in 0..res - 1 {
        if in_container(i) && in_container(i + 1) {
            let jump = (occupancy(i + 1) - occupancy(i)).abs();
            if jump > 0.0 && best.map_or(true, |(b, _)| jump > b) {
                best = Some((jump, i));
            }
        }
    }
    let Some((_, i)) = best else { return invalid("set has no contact point inside the container's wall") };
    let x = set.window().min[0] + (i + 1) as f64 * set.h();
    let side = if occupancy(i + 1) > occupancy(i) { Side::Positive } else { Side::Negative };
    Ok(([x, 0.0], side))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlowupOptions {
    /// Cells per axis of the `[-1, 1]²` grid the rescaled sets are sampled on.
    pub resolution: usize,
    /// Adhesion coefficient for the Φ profile; `None` skips it.
    pub phi_sigma: Option<f64>,
}

impl Default for BlowupOptions {
    fn default() -> Self {
        BlowupOptions { resolution: 128, phi_sigma: None }
    }
}

/// Inner and outer radius, relative to the unit ball, of the annulus used
/// by the sector fit.
pub const FIT_ANNULUS: (f64, f64) = (0.2, 0.8);

#[derive(Debug, Clone, Serialize)]
pub struct BlowupReport {
    pub contact_point: [f64; 2],
    pub side: Side,
    pub radii: Vec<f64>,
    /// `|E_{r_j} Δ E_{r_k}|` restricted to the unit ball.
    pub distances: Vec<Vec<f64>>,
    /// `distances[j][j + 1]`.
    pub consecutive: Vec<f64>,
    /// Best sector angle per radius, radians.
    pub fitted_angles: Vec<f64>,
    /// Best sector angle over all radii jointly, radians.
    pub fitted_angle: f64,
    pub phi: Option<PhiProfile>,
    #[serde(skip)]
    pub sets: Vec<GridSet>,
}

impl BlowupReport {
    pub fn consecutive_decreasing(&self) -> bool {
        self.consecutive.windows(2).all(|w| w[1] <= w[0])
    }
}

fn unit_window() -> Window {
    Window::centered(2, 1.0).expect("valid window")
}

/// Mismatch counts against the sectors of angle 1°, …, 179° on the fit
/// annulus in the upper half.
fn sector_mismatch(set: &GridSet, side: Side) -> Vec<usize> {
    let (lo, hi) = FIT_ANNULUS;
    let mut counts = vec![0usize; 179];
    let mut x = [0.0; 2];
    for c in 0..set.len() {
        set.center_into(c, &mut x);
        let rho = x[0].hypot(x[1]);
        if x[1] <= 0.0 || rho < lo || rho > hi {
            continue;
        }
        let phi = x[1].atan2(x[0]);
        let from_wall = match side {
            Side::Positive => phi,
            Side::Negative => PI - phi,
        };
        let occupied = set.get(c);
        for (k, slot) in counts.iter_mut().enumerate() {
            let inside = from_wall < (k + 1) as f64 * PI / 180.0;
            if inside != occupied {
                *slot += 1;
            }
        }
    }
    counts
}

fn argmin_angle(counts: &[usize]) -> f64 {
    let k = (0..counts.len()).min_by_key(|&k| (counts[k], k)).unwrap_or(89);
    (k + 1) as f64 * PI / 180.0
}

/// Rescales `set` about a wall point by each radius, compares the rescaled
/// sets on the unit ball and fits a sector with apex at the origin.
pub fn blowup(
    set: &GridSet,
    contact_point: [f64; 2],
    radii: &[f64],
    params: &KernelParams,
    cfg: &QuadratureConfig,
    opts: &BlowupOptions,
) -> Result<BlowupReport> {
    if set.dim() != 2 {
        return Err(Error::Unsupported("blow-up is planar".into()));
    }
    if contact_point[1] != 0.0 || !set.window().contains(&contact_point) {
        return invalid("contact point must lie on the wall inside the window");
    }
    if radii.is_empty() || radii.windows(2).any(|w| !(w[1] < w[0])) {
        return invalid("radii must be decreasing");
    }
    let floor = 4.0 * set.h();
    if radii.iter().any(|&r| r < floor) {
        return invalid(format!("radii must be at least four cells ({floor})"));
    }
    if opts.resolution < 8 {
        return invalid("blow-up resolution is too small");
    }
    let shifted = set.translated(&[-contact_point[0], -contact_point[1]])?;
    let sets: Vec<GridSet> =
        radii.iter().map(|&r| shifted.rescaled(r)?.resample(unit_window(), opts.resolution)).collect::<Result<_>>()?;
    let cell = sets[0].cell_volume();
    let mut in_ball = vec![false; sets[0].len()];
    let mut x = [0.0; 2];
    for (c, slot) in in_ball.iter_mut().enumerate() {
        sets[0].center_into(c, &mut x);
        *slot = x[0].hypot(x[1]) < 1.0;
    }
    let distance = |a: &GridSet, b: &GridSet| {
        (0..a.len()).filter(|&c| in_ball[c] && a.get(c) != b.get(c)).count() as f64 * cell
    };
    let k = sets.len();
    let mut distances = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in i + 1..k {
            let d = distance(&sets[i], &sets[j]);
            distances[i][j] = d;
            distances[j][i] = d;
        }
    }
    let consecutive = (0..k.saturating_sub(1)).map(|i| distances[i][i + 1]).collect();

    let (mut pos, mut neg) = (0usize, 0usize);
    for s in &sets {
        for c in s.occupied() {
            s.center_into(c, &mut x);
            if x[1] > 0.0 && x[0].hypot(x[1]) <= FIT_ANNULUS.1 {
                if x[0] > 0.0 {
                    pos += 1
                } else {
                    neg += 1
                }
            }
        }
    }
    let side = if pos >= neg { Side::Positive } else { Side::Negative };
    let per_radius: Vec<Vec<usize>> = sets.iter().map(|s| sector_mismatch(s, side)).collect();
    let fitted_angles = per_radius.iter().map(|c| argmin_angle(c)).collect();
    let joint: Vec<usize> = (0..179).map(|a| per_radius.iter().map(|c| c[a]).sum()).collect();
    let fitted_angle = argmin_angle(&joint);

    let phi = match opts.phi_sigma {
        Some(sigma) => {
            let mut ascending = radii.to_vec();
            ascending.reverse();
            Some(phi_profile(&Trace::new(shifted), &ascending, sigma, params, cfg, &PhiOptions::default())?)
        }
        None => None,
    };
    Ok(BlowupReport {
        contact_point,
        side,
        radii: radii.to_vec(),
        distances,
        consecutive,
        fitted_angles,
        fitted_angle,
        phi,
        sets,
    })
}
