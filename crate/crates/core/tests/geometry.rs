use std::f64::consts::PI;

use fraccap_core::{Error, GridSet, Region, Window};
use proptest::prelude::*;

fn square(half: f64) -> Window {
    Window::centered(2, half).unwrap()
}

#[test]
fn halfspace_at_resolution_two_fills_the_upper_row() {
    let g = GridSet::rasterize(&Region::HalfSpace, square(1.0), 2).unwrap();
    assert_eq!(g.count(), 2);
    assert!(g.get(g.linear_index(&[0, 1])) && g.get(g.linear_index(&[1, 1])));
}

#[test]
fn unit_disk_area_within_two_percent() {
    let g = GridSet::rasterize(&Region::ball(vec![0.0, 0.0], 1.0), square(1.0), 256).unwrap();
    assert!((g.measure() - PI).abs() < 0.02 * PI, "{}", g.measure());
}

#[test]
fn empty_sector_has_no_cells() {
    let g = GridSet::rasterize(&Region::sector(0.7, 0.7), square(1.0), 64).unwrap();
    assert_eq!(g.count(), 0);
}

#[test]
fn degenerate_window_is_rejected() {
    assert!(matches!(Window::new(vec![0.0, 0.0], 0.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(Window::new(vec![0.0, 0.0], f64::NAN), Err(Error::InvalidArgument(_))));
}

#[test]
fn rescale_by_one_is_the_identity() {
    let g = GridSet::rasterize(&Region::ball(vec![0.2, 0.1], 0.5), square(1.0), 64).unwrap();
    let r = g.rescaled(1.0).unwrap();
    assert_eq!(r.cells(), g.cells());
    assert_eq!(r.window(), g.window());
}

#[test]
fn rescale_rejects_nonpositive_factors() {
    let g = GridSet::rasterize(&Region::HalfSpace, square(1.0), 8).unwrap();
    assert!(g.rescaled(0.0).is_err());
    assert!(g.rescaled(-2.0).is_err());
}

#[test]
fn rescaled_sector_matches_direct_rasterization() {
    let sector = Region::sector(0.3, 2.2);
    let g = GridSet::rasterize(&sector, square(1.0), 128).unwrap();
    for r in [0.5, 2.0, 3.0] {
        let scaled = g.rescaled(r).unwrap();
        let direct = GridSet::rasterize(&sector, scaled.window().clone(), 128).unwrap();
        // a cone is invariant under dilation: the bitmaps agree exactly
        assert_eq!(scaled.symmetric_difference(&direct).unwrap().count(), 0, "r = {r}");
    }
}

#[test]
fn rescaled_ball_has_a_quarter_of_the_area() {
    let g = GridSet::rasterize(&Region::ball(vec![0.0, 0.0], 2.0), square(2.5), 256).unwrap();
    let r = g.rescaled(2.0).unwrap();
    assert_eq!(r.count(), g.count());
    let ratio = r.measure() / g.measure();
    assert!((ratio - 0.25).abs() < 1e-12);
    assert!((r.measure() - PI).abs() < 0.02 * PI);
}

#[test]
fn half_disk_by_intersection() {
    let w = square(1.0);
    let h = GridSet::rasterize(&Region::HalfSpace, w.clone(), 256).unwrap();
    let b = GridSet::rasterize(&Region::ball(vec![0.0, 0.0], 1.0), w, 256).unwrap();
    let m = h.intersection(&b).unwrap().measure();
    assert!((m - PI / 2.0).abs() < 0.02 * PI / 2.0, "{m}");
}

#[test]
fn mismatched_grids_are_rejected() {
    let a = GridSet::rasterize(&Region::HalfSpace, square(1.0), 16).unwrap();
    let b = GridSet::rasterize(&Region::HalfSpace, square(1.0), 32).unwrap();
    let c = GridSet::rasterize(&Region::HalfSpace, square(2.0), 16).unwrap();
    assert!(matches!(a.union(&b), Err(Error::InvalidArgument(_))));
    assert!(matches!(a.intersection(&c), Err(Error::InvalidArgument(_))));
}

#[test]
fn upper_halfspace_tag_follows_the_centres() {
    let g = GridSet::rasterize(&Region::ball(vec![0.0, 0.5], 0.4), square(1.0), 32).unwrap();
    assert!(g.in_upper_halfspace());
    let low = GridSet::rasterize(&Region::ball(vec![0.0, -0.5], 0.4), square(1.0), 32).unwrap();
    assert!(!low.in_upper_halfspace());
}

#[test]
fn three_dimensional_ball_volume() {
    let g = GridSet::rasterize(&Region::ball(vec![0.0; 3], 1.0), Window::centered(3, 1.0).unwrap(), 64).unwrap();
    let exact = 4.0 * PI / 3.0;
    assert_eq!(g.len(), 64 * 64 * 64);
    assert!((g.measure() - exact).abs() < 0.02 * exact);
}

#[test]
fn file_round_trip_preserves_the_set() {
    let g = GridSet::rasterize(&Region::sector(0.1, 1.9), Window::new(vec![-0.5, 0.0], 1.5).unwrap(), 37).unwrap();
    let bytes = g.to_bytes();
    let back = GridSet::read_from(&mut &bytes[..]).unwrap();
    assert_eq!(back, g);
}

#[test]
fn truncated_file_is_a_format_error() {
    let g = GridSet::rasterize(&Region::HalfSpace, square(1.0), 16).unwrap();
    let bytes = g.to_bytes();
    let cut = &bytes[..bytes.len() - 1];
    assert!(matches!(GridSet::read_from(&mut &cut[..]), Err(Error::Format(_))));
}

#[test]
fn region_documents_parse() {
    let sector: Region = serde_json::from_str(r#"{"shape":"sector","alpha":0.0,"beta":1.57}"#).unwrap();
    assert_eq!(sector, Region::sector(0.0, 1.57));
    let ball: Region = serde_json::from_str(r#"{"shape":"ball","r":1.0,"c":[0,0]}"#).unwrap();
    assert_eq!(ball, Region::ball(vec![0.0, 0.0], 1.0));
    let h: Region = serde_json::from_str(r#"{"shape":"halfspace"}"#).unwrap();
    assert_eq!(h, Region::HalfSpace);
    let combo: Region = serde_json::from_str(
        r#"{"op":"intersect","args":[{"shape":"ball","r":1.0,"c":[0,0]},{"op":"complement","arg":{"shape":"halfspace"}}]}"#,
    )
    .unwrap();
    assert!(combo.contains(&[0.0, -0.5]));
    assert!(!combo.contains(&[0.0, 0.5]));
    assert!(serde_json::from_str::<Region>(r#"{"shape":"ball","r":-1.0,"c":[0,0]}"#).is_err());
}

fn blob(seed: [f64; 4], res: usize) -> GridSet {
    let [x, y, r, a] = seed;
    let region = Region::ball(vec![x, y], r).or(Region::sector(a, a + 1.0));
    GridSet::rasterize(&region, square(1.0), res).unwrap()
}

fn blob_params() -> impl Strategy<Value = [f64; 4]> {
    (-0.8..0.8f64, -0.8..0.8f64, 0.05..0.7f64, -3.0..3.0f64).prop_map(|(x, y, r, a)| [x, y, r, a])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn boolean_algebra_is_cellwise(p in blob_params(), q in blob_params()) {
        let a = blob(p, 48);
        let b = blob(q, 48);
        prop_assert_eq!(a.intersection(&a).unwrap(), a.clone());
        prop_assert_eq!(a.symmetric_difference(&a).unwrap().count(), 0);
        let union = a.union(&b).unwrap();
        let inter = a.intersection(&b).unwrap();
        prop_assert_eq!(a.count() + b.count(), union.count() + inter.count());
        let gap = a.measure() + b.measure() - union.measure() - inter.measure();
        prop_assert!(gap.abs() <= 1e-14 * (a.measure() + b.measure()).max(1.0));
        let sym = a.symmetric_difference(&b).unwrap();
        let l1: f64 = (0..a.len()).filter(|&i| a.get(i) != b.get(i)).count() as f64 * a.cell_volume();
        prop_assert_eq!(sym.measure(), l1);
    }

    #[test]
    fn measure_counts_cells(p in blob_params(), res in 4usize..80) {
        let a = blob(p, res);
        prop_assert_eq!(a.measure(), a.count() as f64 * a.cell_volume());
        prop_assert_eq!(a.len(), res * res);
    }

    #[test]
    fn composed_rescaling_agrees_up_to_boundary_cells(p in blob_params(), r in 0.3..3.0f64, rho in 0.3..3.0f64) {
        let a = blob(p, 64);
        let twice = a.rescaled(r).unwrap().rescaled(rho / r).unwrap();
        let once = a.rescaled(rho).unwrap();
        let twice = twice.resample(once.window().clone(), 64).unwrap();
        let differ = twice.symmetric_difference(&once).unwrap().count();
        prop_assert!(differ <= 4 * 64, "{} cells differ", differ);
    }

    #[test]
    fn sectors_are_nearly_dilation_invariant(alpha in -3.0..3.0f64, width in 0.0..3.0f64, r in 0.25..4.0f64) {
        let sector = Region::sector(alpha, alpha + width);
        let res = 64;
        let g = GridSet::rasterize(&sector, square(1.0), res).unwrap();
        let scaled = g.rescaled(r).unwrap();
        // compare on the smaller of the two windows, both centred on the apex
        let target = if r > 1.0 { scaled.window().clone() } else { g.window().clone() };
        let a = scaled.resample(target.clone(), res).unwrap();
        let b = g.resample(target.clone(), res).unwrap();
        let frac = a.symmetric_difference(&b).unwrap().measure() / target.side.powi(2);
        prop_assert!(frac <= 4.0 / res as f64, "{}", frac);
    }
}
