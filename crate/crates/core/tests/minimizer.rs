use std::f64::consts::PI;

use fraccap_core::energies::capillarity_energy;
use fraccap_core::interaction::{interaction, SetRef};
use fraccap_core::minimizer::{
    blowup, find_contact_point, incremental_delta, minimize, AnnealConfig, BlowupOptions, CapillarityState, Side,
};
use fraccap_core::{Error, GridSet, KernelParams, QuadratureConfig, Region, Window};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PLANE: KernelParams = KernelParams { n: 2, s: 0.5 };

fn cfg() -> QuadratureConfig {
    QuadratureConfig::default()
}

fn half_disk() -> Region {
    Region::ball(vec![0.0, 0.0], 1.0).and(Region::HalfSpace)
}

fn container(res: usize) -> GridSet {
    GridSet::rasterize(&half_disk(), Window::centered(2, 1.0).unwrap(), res).unwrap()
}

fn short_run(volume_cells: usize, seed: u64) -> AnnealConfig {
    AnnealConfig { volume_cells, seed, sweeps: 20, ..AnnealConfig::default() }
}

fn random_subset(omega: &GridSet, fill: f64, rng: &mut impl Rng) -> GridSet {
    let mut e = GridSet::empty(omega.window().clone(), omega.resolution()).unwrap();
    for c in omega.occupied() {
        if rng.gen_bool(fill) {
            e.set(c, true);
        }
    }
    e
}

#[test]
fn zero_volume_gives_the_empty_set() {
    let omega = container(32);
    let out = minimize(&omega, 0.3, &PLANE, &short_run(0, 1), &cfg()).unwrap();
    assert_eq!(out.set.count(), 0);
    assert_eq!(out.energy, 0.0);
}

#[test]
fn full_volume_fills_the_container() {
    let omega = container(32);
    let sigma = 0.4;
    let out = minimize(&omega, sigma, &PLANE, &short_run(omega.count(), 1), &cfg()).unwrap();
    assert_eq!(out.set, omega);
    let wall = interaction(SetRef::Grid(&omega), SetRef::Region(&half_disk().complement()), &PLANE, &cfg()).unwrap();
    let want = sigma * wall.value;
    assert!((out.energy - want).abs() <= sigma * wall.uncertainty() + 1e-6 * want, "{} vs {want}", out.energy);
}

#[test]
fn infeasible_requests_are_rejected() {
    let omega = container(16);
    let too_big = short_run(omega.count() + 1, 1);
    assert!(matches!(minimize(&omega, 0.0, &PLANE, &too_big, &cfg()), Err(Error::InvalidArgument(_))));
    assert!(minimize(&omega, 1.0, &PLANE, &short_run(10, 1), &cfg()).is_err());
    let hot = AnnealConfig { cooling_ratio: 1.0, ..short_run(10, 1) };
    assert!(minimize(&omega, 0.0, &PLANE, &hot, &cfg()).is_err());
    let space = KernelParams { n: 3, s: 0.5 };
    assert!(minimize(&omega, 0.0, &space, &short_run(10, 1), &cfg()).is_err());
}

#[test]
fn incremental_energy_tracks_a_thousand_moves() {
    let omega = container(48);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let start = random_subset(&omega, 0.3, &mut rng);
    let mut state = CapillarityState::new(&omega, &start, 0.35, &PLANE, &cfg()).unwrap();
    let initial = state.energy();
    let m = state.members().len();
    let mut sum = 0.0;
    for step in 1..=1000 {
        sum += state.toggle(rng.gen_range(0..m));
        if step % 250 == 0 {
            let fresh = CapillarityState::new(&omega, state.set(), 0.35, &PLANE, &cfg()).unwrap().energy();
            assert!((state.energy() - fresh).abs() <= 1e-8 * fresh.abs(), "step {step}: {} vs {fresh}", state.energy());
        }
    }
    // the deltas telescope to the total change
    let fresh = CapillarityState::new(&omega, state.set(), 0.35, &PLANE, &cfg()).unwrap().energy();
    assert!((initial + sum - fresh).abs() <= 1e-8 * fresh.abs());
}

#[test]
fn deltas_telescope_over_a_hundred_swaps() {
    let omega = container(48);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let start = random_subset(&omega, 0.5, &mut rng);
    let mut state = CapillarityState::new(&omega, &start, -0.2, &PLANE, &cfg()).unwrap();
    let volume = state.set().count();
    let initial = state.recompute_energy();
    let mut sum = 0.0;
    let m = state.members().len();
    let mut swaps = 0;
    while swaps < 100 {
        let (a, b) = (rng.gen_range(0..m), rng.gen_range(0..m));
        let (ca, cb) = (state.members()[a], state.members()[b]);
        if !(state.set().get(ca) && !state.set().get(cb)) {
            continue;
        }
        let predicted = state.swap_delta(a, b);
        let applied = state.toggle(a) + state.toggle(b);
        assert!((predicted - applied).abs() <= 1e-10 * predicted.abs().max(1.0));
        sum += applied;
        swaps += 1;
        assert_eq!(state.set().count(), volume);
    }
    let fresh = CapillarityState::new(&omega, state.set(), -0.2, &PLANE, &cfg()).unwrap().energy();
    assert!((initial + sum - fresh).abs() <= 1e-10 * fresh.abs(), "{} vs {fresh}", initial + sum);
}

#[test]
fn toggling_twice_is_the_identity() {
    let omega = container(32);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = random_subset(&omega, 0.4, &mut rng);
    let mut state = CapillarityState::new(&omega, &start, 0.1, &PLANE, &cfg()).unwrap();
    let before = state.energy();
    for p in [0, 17, state.members().len() - 1] {
        let d = state.toggle_delta(p);
        assert_eq!(state.toggle(p), d);
        assert_eq!(state.toggle_delta(p), -d);
        state.toggle(p);
    }
    assert_eq!(state.set(), &start);
    assert!((state.energy() - before).abs() <= 1e-12 * before.abs());
}

#[test]
fn single_cell_delta_matches_the_energy_difference() {
    let omega = container(48);
    let sigma = 0.25;
    let e = GridSet::rasterize(&Region::ball(vec![-0.4, 0.0], 0.3).and(Region::HalfSpace), omega.window().clone(), 48).unwrap();
    let energy = |g: &GridSet| capillarity_energy(g, SetRef::Grid(&omega), sigma, &PLANE, &cfg()).unwrap();
    let base = energy(&e);
    // an isolated cell far from the droplet, and one on its rim
    for x in [[0.6, 0.3], [-0.1, 0.05]] {
        let cell = omega.locate(&x).unwrap();
        let mut f = e.clone();
        f.set(cell, !f.get(cell));
        let after = energy(&f);
        let delta = incremental_delta(&e, &omega, cell, sigma, &PLANE, &cfg()).unwrap();
        let direct = after.value() - base.value();
        let bars = after.total.uncertainty() + base.total.uncertainty();
        assert!((delta - direct).abs() <= bars + 1e-6 * direct.abs(), "{x:?}: {delta} vs {direct}");
    }
    let outside = omega.locate(&[0.5, -0.5]).unwrap();
    assert!(matches!(incremental_delta(&e, &omega, outside, sigma, &PLANE, &cfg()), Err(Error::InvalidArgument(_))));
}

#[test]
fn seeded_runs_are_identical_and_conserve_volume() {
    let omega = container(32);
    let volume = omega.count() * 3 / 10;
    let run = |seed| minimize(&omega, 0.2, &PLANE, &short_run(volume, seed), &cfg()).unwrap();
    let (a, b) = (run(11), run(11));
    assert_eq!(a.set, b.set);
    assert_eq!(a.energy.to_bits(), b.energy.to_bits());
    assert_eq!(a.trace_csv(), b.trace_csv());
    assert_eq!(a.set.count(), volume);
    assert_eq!(a.set.difference(&omega).unwrap().count(), 0);
    for w in a.trace.windows(2) {
        assert!(w[1].best_energy <= w[0].best_energy);
    }
    let direct = capillarity_energy(&a.set, SetRef::Grid(&omega), 0.2, &PLANE, &cfg()).unwrap();
    assert!((a.energy - direct.value()).abs() <= direct.total.uncertainty() + 1e-6 * direct.value());
}

#[test]
fn annealing_lowers_the_energy_of_the_starting_wedge() {
    let omega = container(32);
    let volume = omega.count() * 3 / 10;
    let lazy = AnnealConfig { sweeps: 0, polish: false, ..short_run(volume, 2) };
    let start = minimize(&omega, 0.0, &PLANE, &lazy, &cfg()).unwrap();
    let annealed = minimize(&omega, 0.0, &PLANE, &short_run(volume, 2), &cfg()).unwrap();
    assert!(annealed.energy < start.energy);
    assert!(annealed.accepted <= annealed.proposals);
}

fn sector_set(apex_x: f64, angle: f64, res: usize) -> GridSet {
    let region = Region::Sector { apex: [apex_x, 0.0], alpha: 0.0, beta: angle };
    GridSet::rasterize(&region, Window::centered(2, 1.0).unwrap(), res).unwrap()
}

const LADDER: [f64; 4] = [0.5, 0.25, 0.125, 0.0625];

#[test]
fn blowup_of_a_sector_recovers_its_angle() {
    // at four cells the staircase of a slanted edge tilts the fit by several
    // degrees, so the rungs here keep at least sixteen cells
    let ladder = &LADDER[..3];
    for degrees in [30.0f64, 45.0, 90.0, 120.0] {
        let e = sector_set(0.0, degrees.to_radians(), 128);
        let rep = blowup(&e, [0.0, 0.0], ladder, &PLANE, &cfg(), &BlowupOptions::default()).unwrap();
        assert!((rep.fitted_angle.to_degrees() - degrees).abs() <= 2.0, "{degrees}: {}", rep.fitted_angle.to_degrees());
        assert_eq!(rep.side, Side::Positive);
        // a cone is its own blow-up: only rasterization separates the sets
        let bound = 4.0 * 2.0 / 128.0;
        for row in &rep.distances {
            assert!(row.iter().all(|&d| (0.0..=bound).contains(&d)), "{row:?}");
        }
    }
    let mirrored = GridSet::rasterize(&Region::sector(PI - 1.0, PI), Window::centered(2, 1.0).unwrap(), 128).unwrap();
    let rep = blowup(&mirrored, [0.0, 0.0], ladder, &PLANE, &cfg(), &BlowupOptions::default()).unwrap();
    assert_eq!(rep.side, Side::Negative);
    assert!((rep.fitted_angle - 1.0).abs() <= 2f64.to_radians());
}

#[test]
fn blowup_ignores_what_lies_outside_the_ladder() {
    let sector = sector_set(0.25, 100f64.to_radians(), 128);
    let blob = GridSet::rasterize(&Region::ball(vec![-0.75, 0.75], 0.2), sector.window().clone(), 128).unwrap();
    let both = sector.union(&blob).unwrap();
    let a = blowup(&sector, [0.25, 0.0], &LADDER, &PLANE, &cfg(), &BlowupOptions::default()).unwrap();
    let b = blowup(&both, [0.25, 0.0], &LADDER, &PLANE, &cfg(), &BlowupOptions::default()).unwrap();
    assert_eq!(a.distances, b.distances);
    assert_eq!(a.fitted_angles, b.fitted_angles);
    assert_eq!(a.fitted_angle, b.fitted_angle);
}

#[test]
fn blowup_rejects_radii_below_four_cells_or_out_of_order() {
    let e = sector_set(0.0, 1.0, 64);
    let h = e.h();
    assert!(matches!(blowup(&e, [0.0, 0.0], &[0.5, 3.0 * h], &PLANE, &cfg(), &BlowupOptions::default()), Err(Error::InvalidArgument(_))));
    assert!(blowup(&e, [0.0, 0.0], &[0.25, 0.5], &PLANE, &cfg(), &BlowupOptions::default()).is_err());
    assert!(blowup(&e, [0.0, 0.1], &[0.5], &PLANE, &cfg(), &BlowupOptions::default()).is_err());
}

#[test]
fn contact_point_of_a_sector_is_its_apex() {
    let omega = container(64);
    let e = sector_set(0.25, 1.2, 64).intersection(&omega).unwrap();
    let (p, side) = find_contact_point(&e, &omega).unwrap();
    // three rows are averaged, so a slanted edge may move the jump by a cell
    assert!((p[0] - 0.25).abs() <= omega.h() && p[1] == 0.0, "{p:?}");
    assert_eq!(side, Side::Positive);
    let floating = GridSet::rasterize(&Region::ball(vec![0.0, 0.5], 0.2), omega.window().clone(), 64).unwrap();
    assert!(find_contact_point(&floating, &omega).is_err());
}

#[test]
fn blowup_profile_comes_with_ascending_radii() {
    let e = sector_set(0.0, 1.3, 64);
    let opts = BlowupOptions { phi_sigma: Some(0.1), ..BlowupOptions::default() };
    let rep = blowup(&e, [0.0, 0.0], &[0.5, 0.25], &PLANE, &cfg(), &opts).unwrap();
    let phi = rep.phi.unwrap();
    assert_eq!(phi.radii, vec![0.25, 0.5]);
    assert_eq!(phi.sigma, 0.1);
}
