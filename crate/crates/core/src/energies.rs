//! Capillarity energy, relative fractional perimeters and the quantities
//! compared in the blow-up argument, each returned as a breakdown into
//! named interaction terms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::geometry::{GridSet, Region, Window};
use crate::interaction::{AtomTable, InteractionResult, KernelParams, Layer, QuadratureConfig, SetRef};

#[derive(Debug, Clone, Serialize)]
pub struct EnergyTerm {
    pub label: String,
    pub coefficient: f64,
    pub result: InteractionResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyBreakdown {
    pub terms: Vec<EnergyTerm>,
    pub total: InteractionResult,
}

impl EnergyBreakdown {
    pub(crate) fn from_terms(terms: Vec<EnergyTerm>) -> Self {
        let parts: Vec<(f64, InteractionResult)> = terms.iter().map(|t| (t.coefficient, t.result)).collect();
        EnergyBreakdown { total: InteractionResult::combine(&parts), terms }
    }

    pub fn value(&self) -> f64 {
        self.total.value
    }

    pub fn term(&self, label: &str) -> Option<&EnergyTerm> {
        self.terms.iter().find(|t| t.label == label)
    }
}

pub(crate) fn term(label: &str, coefficient: f64, result: InteractionResult) -> EnergyTerm {
    EnergyTerm { label: label.into(), coefficient, result }
}

fn layer_of(set: SetRef, like: &GridSet) -> Result<Layer> {
    match set {
        SetRef::Grid(g) => {
            if !g.same_grid(like) {
                return invalid("sets live on different grids");
            }
            Ok(Layer::grid(g))
        }
        SetRef::Region(r) => Layer::region(r, like),
    }
}

const B0: u32 = 1;
const B1: u32 = 2;
const B2: u32 = 4;

/// `I_s(E, E^c ∩ ω) + σ I_s(E, ω^c)` for `E ⊆ ω`.
pub fn capillarity_energy(
    e: &GridSet,
    container: SetRef,
    sigma: f64,
    params: &KernelParams,
    cfg: &QuadratureConfig,
) -> Result<EnergyBreakdown> {
    let omega = layer_of(container, e)?;
    let outside = e.difference(omega.set())?.count();
    if outside > 0 {
        return invalid(format!("{outside} cell(s) of the set lie outside the container"));
    }
    let table = AtomTable::build(&[Layer::grid(e), omega], params, cfg)?;
    let inner = table.interaction(|m| m & B0 != 0, |m| m & B0 == 0 && m & B1 != 0)?;
    let wall = table.interaction(|m| m & B0 != 0, |m| m & B1 == 0)?;
    Ok(EnergyBreakdown::from_terms(vec![term("interface", 1.0, inner), term("wall", sigma, wall)]))
}

/// The three terms of `Per_s(F, ω)` for the layer pair selected by masks.
fn perimeter_terms(table: &AtomTable, f: u32, omega: impl Fn(u32) -> bool + Copy) -> Result<Vec<EnergyTerm>> {
    let inside = table.interaction(|m| m & f != 0 && omega(m), |m| m & f == 0 && omega(m))?;
    let out_in = table.interaction(|m| m & f != 0 && omega(m), |m| m & f == 0 && !omega(m))?;
    let in_out = table.interaction(|m| m & f != 0 && !omega(m), |m| m & f == 0 && omega(m))?;
    Ok(vec![
        term("inside_inside", 1.0, inside),
        term("inside_outside", 1.0, out_in),
        term("outside_inside", 1.0, in_out),
    ])
}

/// Fractional perimeter of `F` relative to `ω`.
pub fn fractional_perimeter(
    f: &GridSet,
    omega: SetRef,
    params: &KernelParams,
    cfg: &QuadratureConfig,
) -> Result<EnergyBreakdown> {
    let table = AtomTable::build(&[Layer::grid(f), layer_of(omega, f)?], params, cfg)?;
    Ok(EnergyBreakdown::from_terms(perimeter_terms(&table, B0, |m| m & B1 != 0)?))
}

fn check_upper(f: &GridSet) -> Result<()> {
    if !f.in_upper_halfspace() {
        return invalid("set must lie in the upper half-space");
    }
    if f.wall_layer().is_none() {
        return invalid("grid must have the wall on cell faces");
    }
    Ok(())
}

fn ball_half_table(f: &GridSet, radius: f64, params: &KernelParams, cfg: &QuadratureConfig) -> Result<AtomTable> {
    check_upper(f)?;
    let ball = Region::ball(vec![0.0; f.dim()], radius);
    AtomTable::build(&[Layer::grid(f), Layer::region(&ball, f)?, Layer::region(&Region::HalfSpace, f)?], params, cfg)
}

/// `Per_s(F, B_R ∩ H) + (σ - 1) I_s(F ∩ B_R, H^c)` for `F ⊆ H`.
pub fn per_s_sigma(
    f: &GridSet,
    radius: f64,
    sigma: f64,
    params: &KernelParams,
    cfg: &QuadratureConfig,
) -> Result<EnergyBreakdown> {
    let table = ball_half_table(f, radius, params, cfg)?;
    let mut terms = perimeter_terms(&table, B0, |m| m & B1 != 0 && m & B2 != 0)?;
    let wall = table.interaction(|m| m & B0 != 0 && m & B1 != 0, |m| m & B2 == 0)?;
    terms.push(term("wall", sigma - 1.0, wall));
    Ok(EnergyBreakdown::from_terms(terms))
}

/// `I_s(F ∩ B_R, F^c ∩ H) + I_s(F \ B_R, F^c ∩ B_R ∩ H) + σ I_s(F ∩ B_R, H^c)`.
pub fn minimizer_comparison_energy(
    f: &GridSet,
    radius: f64,
    sigma: f64,
    params: &KernelParams,
    cfg: &QuadratureConfig,
) -> Result<EnergyBreakdown> {
    let table = ball_half_table(f, radius, params, cfg)?;
    let a = table.interaction(|m| m & B0 != 0 && m & B1 != 0, |m| m & B0 == 0 && m & B2 != 0)?;
    let b = table.interaction(|m| m & B0 != 0 && m & B1 == 0, |m| m & B0 == 0 && m & B1 != 0 && m & B2 != 0)?;
    let c = table.interaction(|m| m & B0 != 0 && m & B1 != 0, |m| m & B2 == 0)?;
    Ok(EnergyBreakdown::from_terms(vec![
        term("ball_half", 1.0, a),
        term("outside_ball", 1.0, b),
        term("wall", sigma, c),
    ]))
}

/// Outcome of one identity over a batch of random sets.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub name: String,
    pub trials: usize,
    pub max_relative_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Random subset of the upper half of `window`: a union of a few balls with
/// a sprinkling of isolated cells flipped.
pub fn random_upper_set(window: &Window, resolution: usize, rng: &mut impl Rng) -> Result<GridSet> {
    let n = window.dim();
    let half = window.side / 2.0;
    let mut balls = Vec::new();
    for _ in 0..rng.gen_range(1..=4) {
        let mut c: Vec<f64> = (0..n).map(|d| window.min[d] + half + rng.gen_range(-0.8..0.8) * half).collect();
        c[n - 1] = rng.gen_range(0.0..0.8) * half;
        balls.push(Region::ball(c, rng.gen_range(0.1..0.5) * half));
    }
    let blob = Region::Union(balls).and(Region::HalfSpace);
    let mut set = GridSet::rasterize(&blob, window.clone(), resolution)?;
    let mut x = vec![0.0; n];
    for i in 0..set.len() {
        set.center_into(i, &mut x);
        if x[n - 1] > 0.0 && rng.gen_bool(0.05) {
            set.set(i, !set.get(i));
        }
    }
    Ok(set)
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        diff.abs()
    } else {
        diff.abs() / scale
    }
}

/// Checks the algebraic identities between the energies on seeded random
/// sets in `[-3, 3]^n` with unit ball radius.
pub fn verify_identities(
    params: &KernelParams,
    cfg: &QuadratureConfig,
    resolution: usize,
    trials: usize,
    seed: u64,
    tolerance: f64,
) -> Result<Vec<IdentityReport>> {
    let window = Window::centered(params.n, 3.0)?;
    let radius = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..trials {
        let f = random_upper_set(&window, resolution, &mut rng)?;
        let sigma = rng.gen_range(-0.95..0.95);

        let lhs = per_s_sigma(&f, radius, sigma, params, cfg)?.value();
        let rhs = minimizer_comparison_energy(&f, radius, sigma, params, cfg)?.value();
        worst[0] = worst[0].max(relative(lhs - rhs, lhs.abs().max(rhs.abs())));

        let ball = Region::ball(vec![0.0; params.n], radius);
        let half_ball = ball.clone().and(Region::HalfSpace);
        let full = fractional_perimeter(&f, SetRef::Region(&ball), params, cfg)?.value();
        let upper = fractional_perimeter(&f, SetRef::Region(&half_ball), params, cfg)?.value();
        let b_layer = GridSet::rasterize(&ball, window.clone(), resolution)?;
        let lower_ball = GridSet::rasterize(&ball.clone().and(Region::HalfSpace.complement()), window.clone(), resolution)?;
        let outside = f.difference(&b_layer)?;
        let cross = crate::interaction::interaction(SetRef::Grid(&outside), SetRef::Grid(&lower_ball), params, cfg)?.value;
        worst[1] = worst[1].max(relative(full - upper - cross, full.abs()));

        let mut e = f.clone();
        let mut x = vec![0.0; params.n];
        for i in 0..e.len() {
            e.center_into(i, &mut x);
            if ball.contains(&x) && x[params.n - 1] > 0.0 && rng.gen_bool(0.3) {
                e.set(i, !e.get(i));
            }
        }
        let bigger = Region::ball(vec![0.0; params.n], radius + 1.0);
        let per = |g: &GridSet, r: &Region| fractional_perimeter(g, SetRef::Region(r), params, cfg).map(|b| b.value());
        let (eb, fb, es, fs) = (per(&e, &bigger)?, per(&f, &bigger)?, per(&e, &ball)?, per(&f, &ball)?);
        let scale = eb.abs().max(fb.abs()).max(es.abs()).max(fs.abs());
        worst[2] = worst[2].max(relative((eb - fb) - (es - fs), scale));
    }
    let names = ["equivalence", "localization", "telescoping"];
    Ok(names
        .iter()
        .zip(worst)
        .map(|(name, w)| IdentityReport {
            name: (*name).into(),
            trials,
            max_relative_violation: w,
            tolerance,
            passed: w <= tolerance,
        })
        .collect())
}
