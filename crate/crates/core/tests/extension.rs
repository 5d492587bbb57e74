use std::f64::consts::{FRAC_PI_2, PI};

use fraccap_core::extension::{
    capillarity_extension_energy, default_levels, extend, extension_optimality_check, ladder,
    normal_gradient_boundary_integral, phi_profile, weighted_dirichlet, Domain, ExtensionField, PhiOptions,
    PoissonKernel, Trace,
};
use fraccap_core::interaction::{interaction, SetRef};
use fraccap_core::{Error, GridSet, KernelParams, QuadratureConfig, Region, Window};
use proptest::prelude::*;
use statrs::function::gamma::gamma;

const PLANE: KernelParams = KernelParams { n: 2, s: 0.5 };

fn square(half: f64) -> Window {
    Window::centered(2, half).unwrap()
}

fn cfg() -> QuadratureConfig {
    QuadratureConfig::default()
}

fn quick() -> PhiOptions {
    PhiOptions { resolution_check: false, ..PhiOptions::default() }
}

fn levels_for(g: &GridSet, top: f64) -> usize {
    default_levels(g.h(), top)
}

/// `Γ((n+s)/2) / (π^{n/2} Γ(s/2))`, the constant giving unit mass.
fn gamma_constant(n: usize, s: f64) -> f64 {
    let n = n as f64;
    gamma((n + s) / 2.0) / (PI.powf(n / 2.0) * gamma(s / 2.0))
}

#[test]
fn poisson_kernel_has_unit_mass() {
    for n in [2, 3] {
        for s in [0.25, 0.5, 0.75] {
            let k = PoissonKernel::new(&KernelParams { n, s }).unwrap();
            let want = gamma_constant(n, s);
            assert!((k.normalization - want).abs() <= 1e-6 * want, "n={n} s={s}: {} vs {want}", k.normalization);
            assert!((k.tail_mass(1e-12, 1.0) - 1.0).abs() < 1e-6);
        }
    }
    // in the plane the mass beyond R is (1 + R²/t²)^{-s/2}
    for s in [0.25, 0.5, 0.75] {
        let k = PoissonKernel::new(&KernelParams { n: 2, s }).unwrap();
        for (r, t) in [(3.0f64, 1.0f64), (0.1, 0.01), (1.0, 30.0)] {
            let want = (1.0 + (r / t) * (r / t)).powf(-0.5 * s);
            assert!((k.tail_mass(r, t) - want).abs() < 1e-10, "s={s} R={r} t={t}");
        }
    }
}

#[test]
fn poisson_kernel_is_homogeneous() {
    let k = PoissonKernel::new(&PLANE).unwrap();
    for lambda in [0.1, 0.5, 3.0, 17.0] {
        for (x, t) in [([0.3, -0.2], 0.1), ([2.0, 1.0], 1.5), ([0.0, 0.0], 0.7)] {
            let scaled = k.value(&[lambda * x[0], lambda * x[1]], lambda * t);
            let want = k.value(&x, t) / (lambda * lambda);
            assert!((scaled - want).abs() <= 1e-13 * want, "{scaled} vs {want}");
        }
    }
}

#[test]
fn discrete_kernel_mass_is_bracketed_by_the_tail() {
    let k = PoissonKernel::new(&PLANE).unwrap();
    let (half, res) = (4.0, 256);
    let h = 2.0 * half / res as f64;
    for t in [2.0 * h, 0.2, 1.0] {
        let mut sum = 0.0;
        for i in 0..res {
            for j in 0..res {
                let x = [-half + (i as f64 + 0.5) * h, -half + (j as f64 + 0.5) * h];
                sum += k.value(&x, t) * h * h;
            }
        }
        let eps = k.tail_mass(half, t);
        assert!(sum <= 1.0 + 1e-6 && sum >= 1.0 - eps - 1e-6, "t={t}: {sum}, tail {eps}");
    }
}

#[test]
fn ladder_is_geometric_toward_zero() {
    let ts = ladder(0.1, 2.0, 12).unwrap();
    assert_eq!(ts.len(), 13);
    assert_eq!(ts[0], 0.0);
    assert!((ts[1] - 0.025).abs() < 1e-15);
    assert_eq!(*ts.last().unwrap(), 2.0);
    let q = ts[2] / ts[1];
    for w in ts[1..].windows(2) {
        assert!((w[1] / w[0] - q).abs() < 1e-9);
    }
    assert!(ladder(0.1, 2.0, 2).is_err());
    assert!(default_levels(0.1, 2.0) >= 3);
}

#[test]
fn empty_trace_extends_to_zero() {
    let g = GridSet::empty(square(1.0), 32).unwrap();
    let u = extend(&Trace::new(g.clone()), 1.0, levels_for(&g, 1.0), &PLANE, &cfg()).unwrap();
    assert!(u.values().iter().all(|&v| v == 0.0));
}

#[test]
fn full_window_extension_is_below_one_and_decays() {
    let g = GridSet::rasterize(&Region::Box { min: vec![-2.0; 2], max: vec![2.0; 2] }, square(1.0), 32).unwrap();
    assert_eq!(g.count(), g.len());
    let u = extend(&Trace::new(g.clone()), 2.0, levels_for(&g, 2.0), &PLANE, &cfg()).unwrap();
    let centre = |t: f64| u.sample(0.0, 0.0, t).unwrap();
    let ts = u.heights().to_vec();
    for w in ts[1..].windows(2) {
        assert!(centre(w[1]) < centre(w[0]), "not decreasing at t={}", w[1]);
    }
    assert!(u.values().iter().all(|&v| v <= 1.0));
    assert!(centre(2.0) < 0.6);
}

#[test]
fn halfplane_extension_is_one_half_on_the_wall() {
    let trace = Trace::from_region(&Region::HalfSpace, square(1.0), 64).unwrap();
    let u = extend(&trace, 1.0, levels_for(&trace.grid, 1.0), &PLANE, &cfg()).unwrap();
    for &t in &u.heights()[1..] {
        let v = u.sample(0.0, 0.0, t).unwrap();
        assert!((v - 0.5).abs() < 1e-2, "U(0,{t}) = {v}");
    }
    // away from the boundary the bottom level is already close to the trace
    let t0 = u.heights()[1];
    assert!(u.sample(0.0, 0.5, t0).unwrap() > 0.95);
    assert!(u.sample(0.0, -0.5, t0).unwrap() < 0.05);
}

#[test]
fn weighted_dirichlet_of_constants_and_a_linear_field() {
    let nodes: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let ts = ladder(0.05, 1.0, 14).unwrap();
    let unit = Domain::Box { min: [0.0; 3], max: [1.0; 3] };
    let c = ExtensionField::from_fn(nodes.clone(), nodes.clone(), ts.clone(), 0.5, |_, _, _| 0.7).unwrap();
    assert_eq!(weighted_dirichlet(&c, &unit).unwrap().value, 0.0);
    let lin = ExtensionField::from_fn(nodes.clone(), nodes.clone(), ts, 0.5, |x, _, _| x).unwrap();
    let e = weighted_dirichlet(&lin, &unit).unwrap();
    assert!((e.value - 2.0 / 3.0).abs() < 1e-3, "{e:?}");
    let outside = Domain::Box { min: [0.0; 3], max: [1.5, 1.0, 1.0] };
    assert!(matches!(weighted_dirichlet(&lin, &outside), Err(Error::InvalidArgument(_))));
}

#[test]
fn halfplane_dirichlet_energy_is_stable_under_height_refinement() {
    let trace = Trace::from_region(&Region::HalfSpace, square(1.5), 96).unwrap();
    let top = 1.2;
    let base = levels_for(&trace.grid, top);
    let dom = Domain::HalfBall { radius: 1.0 };
    let coarse = weighted_dirichlet(&extend(&trace, top, base, &PLANE, &cfg()).unwrap(), &dom).unwrap();
    let fine = weighted_dirichlet(&extend(&trace, top, 2 * base, &PLANE, &cfg()).unwrap(), &dom).unwrap();
    assert!(coarse.value.is_finite() && coarse.value > 0.0);
    assert!((fine.value - coarse.value).abs() < 0.02 * fine.value, "{} vs {}", coarse.value, fine.value);
}

#[test]
fn capillarity_extension_energy_trivial_cases() {
    let g = GridSet::empty(square(1.0), 32).unwrap();
    let u = extend(&Trace::new(g.clone()), 1.0, levels_for(&g, 1.0), &PLANE, &cfg()).unwrap();
    let b = capillarity_extension_energy(&u, &g, 0.8, 0.3, &PLANE, &cfg()).unwrap();
    assert_eq!(b.value(), 0.0);

    let f = GridSet::rasterize(&Region::ball(vec![0.1, 0.2], 0.3).and(Region::HalfSpace), square(1.0), 48).unwrap();
    let u = extend(&Trace::new(f.clone()), 1.0, levels_for(&f, 1.0), &PLANE, &cfg()).unwrap();
    let b = capillarity_extension_energy(&u, &f, 0.8, 1.0, &PLANE, &cfg()).unwrap();
    let d = weighted_dirichlet(&u, &Domain::HalfBall { radius: 0.8 }).unwrap();
    assert_eq!(b.value(), d.value);

    let low = GridSet::rasterize(&Region::ball(vec![0.0, 0.0], 0.3), square(1.0), 48).unwrap();
    let ul = extend(&Trace::new(low.clone()), 1.0, levels_for(&low, 1.0), &PLANE, &cfg()).unwrap();
    assert!(matches!(capillarity_extension_energy(&ul, &low, 0.8, 0.0, &PLANE, &cfg()), Err(Error::InvalidArgument(_))));
    assert!(matches!(capillarity_extension_energy(&u, &low, 0.8, 0.0, &PLANE, &cfg()), Err(Error::InvalidArgument(_))));
}

#[test]
fn quarter_sector_extension_energy_against_independent_terms() {
    let sector = Region::sector(0.0, FRAC_PI_2);
    let (radius, sigma) = (0.6, 0.2);
    let at = |res: usize| {
        let trace = Trace::from_region(&sector, square(1.0), res).unwrap();
        let u = extend(&trace, 1.0, levels_for(&trace.grid, 1.0), &PLANE, &cfg()).unwrap();
        let b = capillarity_extension_energy(&u, &trace.grid, radius, sigma, &PLANE, &cfg()).unwrap();
        // the flux of the extension through ∂B_r^+ gives the Dirichlet part independently
        let p = phi_profile(&trace, &[radius], sigma, &PLANE, &cfg(), &quick()).unwrap();
        let scale = radius.powf(2.0 - PLANE.s);
        (trace.grid, b, p.dirichlet_part[0] * scale, p.errors[0] * scale)
    };
    let (coarse_set, coarse, coarse_flux, coarse_err) = at(48);
    let (fine_set, fine, fine_flux, fine_err) = at(96);
    assert!((coarse_flux - fine_flux).abs() <= coarse_err + fine_err, "{coarse_flux} vs {fine_flux}");

    // the wetting term is the raw interaction of the clipped sector with the lower half-plane
    let disk = GridSet::rasterize(&Region::ball(vec![0.0, 0.0], radius), square(1.0), 96).unwrap();
    let inside = fine_set.intersection(&disk).unwrap();
    let raw = interaction(SetRef::Grid(&inside), SetRef::Region(&Region::HalfSpace.complement()), &PLANE, &cfg()).unwrap();
    let wall = fine.term("wall").unwrap();
    assert_eq!(wall.result.value, raw.value);
    assert_eq!(wall.coefficient, sigma - 1.0);
    assert!(coarse_set.count() > 0);

    // the brick quadrature misses an O(h^{1-s}) layer along the jump of the
    // trace: it sits below the flux value and closes in on it under refinement
    let bricks = |b: &fraccap_core::energies::EnergyBreakdown| b.term("dirichlet").unwrap().result.value;
    let (gap_coarse, gap_fine) = (fine_flux - bricks(&coarse), fine_flux - bricks(&fine));
    assert!(gap_coarse > gap_fine && gap_fine > 0.0, "{gap_coarse} then {gap_fine}");
    assert!(gap_fine < 0.1 * fine_flux);
}

fn sector_extension(res: usize) -> (GridSet, ExtensionField) {
    let trace = Trace::from_region(&Region::sector(0.4, 2.1), square(1.0), res).unwrap();
    let u = extend(&trace, 1.0, levels_for(&trace.grid, 1.0), &PLANE, &cfg()).unwrap();
    (trace.grid, u)
}

#[test]
fn extension_beats_every_admissible_competitor() {
    let (f, u) = sector_extension(48);
    let radius = 0.7;
    let same = extension_optimality_check(&f, &u, &u, radius).unwrap();
    assert_eq!(same.gap, 0.0);
    let competitors = [
        u.with_bump(radius, 0.3),
        u.with_bump(radius, -0.3),
        u.with_bump(radius, 0.05),
        u.stretched(radius, 1.4).unwrap(),
        u.stretched(radius, 0.6).unwrap(),
    ];
    for (k, c) in competitors.iter().enumerate() {
        let gap = extension_optimality_check(&f, &u, c, radius).unwrap();
        assert!(gap.gap >= -1e-6, "competitor {k}: {gap:?}");
        assert!(gap.gap > 0.0, "competitor {k} should cost energy: {gap:?}");
    }
}

#[test]
fn competitors_must_share_trace_and_collar() {
    let (f, u) = sector_extension(32);
    let other = u.map(|p, v| if p[2] == 0.0 { 1.0 - v } else { v });
    assert!(matches!(extension_optimality_check(&f, &u, &other, 0.7), Err(Error::InvalidArgument(_))));
    let loose = u.map(|p, v| if p[2] > 0.0 { v + 0.01 } else { v });
    assert!(matches!(extension_optimality_check(&f, &u, &loose, 0.7), Err(Error::InvalidArgument(_))));
}

#[test]
fn empty_set_has_flat_zero_profile() {
    let g = GridSet::empty(square(1.0), 32).unwrap();
    let p = phi_profile(&Trace::new(g), &[0.25, 0.5, 0.75], 0.0, &PLANE, &cfg(), &quick()).unwrap();
    assert!(p.phi.iter().all(|&v| v == 0.0), "{:?}", p.phi);
}

#[test]
fn profile_parts_recompose_exactly() {
    let trace = Trace::from_region(&Region::sector(0.3, 1.9), square(1.0), 48).unwrap();
    let p = phi_profile(&trace, &[0.3, 0.5, 0.7], 0.35, &PLANE, &cfg(), &quick()).unwrap();
    assert_eq!(p.recomputed(), p.phi);
    assert_eq!(p.monotone.len(), 2);
    assert!(p.errors.iter().all(|&e| e >= 0.0 && e.is_finite()));
}

#[test]
fn profile_rejects_bad_radii_and_sets_below_the_wall() {
    let trace = Trace::from_region(&Region::sector(0.3, 1.9), square(1.0), 32).unwrap();
    assert!(phi_profile(&trace, &[0.5, 0.3], 0.0, &PLANE, &cfg(), &quick()).is_err());
    assert!(phi_profile(&trace, &[], 0.0, &PLANE, &cfg(), &quick()).is_err());
    assert!(phi_profile(&trace, &[0.5], 1.0, &PLANE, &cfg(), &quick()).is_err());
    let low = Trace::new(GridSet::rasterize(&Region::ball(vec![0.0, 0.0], 0.3), square(1.0), 32).unwrap());
    assert!(matches!(phi_profile(&low, &[0.5], 0.0, &PLANE, &cfg(), &quick()), Err(Error::InvalidArgument(_))));
}

#[test]
fn cone_profile_is_flat_at_moderate_resolution() {
    let radii: Vec<f64> = (0..5).map(|i| 0.25 + 0.125 * i as f64).collect();
    let trace = Trace::from_region(&Region::sector(0.0, FRAC_PI_2), square(1.0), 64).unwrap();
    let p = phi_profile(&trace, &radii, 0.0, &PLANE, &cfg(), &PhiOptions::default()).unwrap();
    let bars: f64 = p.errors.iter().sum();
    assert!(p.spread() <= 3.0 * bars, "spread {} vs 3×{bars}", p.spread());
    assert!(p.is_monotone());
}

#[test]
fn profile_is_scale_invariant() {
    let sector = Region::sector(0.2, 2.3);
    let trace = Trace::from_region(&sector, square(1.0), 64).unwrap();
    let (r, rho) = (0.5, 1.0);
    let here = phi_profile(&trace, &[r], 0.1, &PLANE, &cfg(), &PhiOptions::default()).unwrap();
    let blown = trace.rescaled(r / rho).unwrap();
    let there = phi_profile(&blown, &[rho], 0.1, &PLANE, &cfg(), &PhiOptions::default()).unwrap();
    let bars = here.errors[0] + there.errors[0];
    assert!((here.phi[0] - there.phi[0]).abs() <= bars, "{} vs {} (bars {bars})", here.phi[0], there.phi[0]);
}

#[test]
fn radial_derivative_vanishes_only_for_cones() {
    let at = |region: Region| {
        let trace = Trace::from_region(&region, square(1.0), 64).unwrap();
        let u = extend(&trace, 1.0, levels_for(&trace.grid, 1.0), &PLANE, &cfg()).unwrap();
        normal_gradient_boundary_integral(&u, 0.5).unwrap().value
    };
    let cone = at(Region::sector(0.0, FRAC_PI_2));
    let shifted = at(Region::Sector { apex: [0.3, 0.0], alpha: 0.0, beta: FRAC_PI_2 });
    assert!(shifted > 10.0 * cone, "{shifted} vs cone {cone}");

    let nodes: Vec<f64> = (0..=40).map(|i| -1.0 + i as f64 / 20.0).collect();
    let c = ExtensionField::from_fn(nodes.clone(), nodes, ladder(0.05, 1.0, 12).unwrap(), 0.5, |_, _, _| 0.4).unwrap();
    assert_eq!(normal_gradient_boundary_integral(&c, 0.5).unwrap().value, 0.0);
    assert!(matches!(normal_gradient_boundary_integral(&c, 0.99), Err(Error::InvalidArgument(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn extension_obeys_the_maximum_principle(x in -0.6..0.6f64, y in 0.0..0.6f64, r in 0.05..0.5f64, a in -3.0..3.0f64) {
        let region = Region::ball(vec![x, y], r).or(Region::Sector { apex: [x, -y], alpha: a, beta: a + 1.0 });
        let g = GridSet::rasterize(&region, square(1.0), 32).unwrap();
        let u = extend(&Trace::new(g.clone()), 1.0, levels_for(&g, 1.0), &PLANE, &cfg()).unwrap();
        for &v in u.values() {
            prop_assert!((0.0..=1.0).contains(&v), "{}", v);
        }
    }
}
