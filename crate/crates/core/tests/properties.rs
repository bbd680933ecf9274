use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use simdim_core::cloud::PointCloud;
use simdim_core::decomp::{
    build_decomposition, taylor_suite, validate_decomposition, BlockPlan, FloorOptions, RECONSTRUCTION_TOL,
};
use simdim_core::entropy::{grid_entropy_with_phases, grid_phases, kozachenko_leonenko};
use simdim_core::measure::FiniteMeasure;
use simdim_core::prob::{empirical_w1, w1_assignment, w1_sorted};
use simdim_core::sim_group::{exp_map, log_map, metric_dist, rotation_2d, rotation_3d_xyz, LieVector, SimElement};
use simdim_core::walk::{sample_walk, stream_rng};

fn element(d: usize, rho: f64, angles: [f64; 3], b: [f64; 3]) -> SimElement {
    let rot = match d {
        1 => nalgebra::DMatrix::from_element(1, 1, 1.0),
        2 => rotation_2d(angles[0]),
        _ => rotation_3d_xyz(angles[0], angles[1], angles[2]),
    };
    SimElement::new(rho, rot, DVector::from_column_slice(&b[..d])).unwrap()
}

fn arb_element() -> impl Strategy<Value = SimElement> {
    (
        1usize..=3,
        0.1f64..3.0,
        prop::array::uniform3(-1.5f64..1.5),
        prop::array::uniform3(-2.0f64..2.0),
    )
        .prop_map(|(d, rho, a, b)| element(d, rho, a, b))
}

fn arb_points(d: usize, n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exp_inverts_log(g in arb_element()) {
        let u = log_map(&g).unwrap();
        prop_assert!(metric_dist(&exp_map(&u), &g) < 1e-9);
    }

    #[test]
    fn log_inverts_exp_near_zero(coords in prop::collection::vec(-0.5f64..0.5, 7)) {
        let u = LieVector::from_coords(3, &coords[..7]).unwrap();
        let back = log_map(&exp_map(&u)).unwrap();
        prop_assert!((back.coords() - u.coords()).norm() < 1e-9);
    }

    #[test]
    fn inverse_and_associativity(
        g in (0.2f64..2.0, -1.0f64..1.0, -1.0f64..1.0),
        h in (0.2f64..2.0, -1.0f64..1.0, -1.0f64..1.0),
        k in (0.2f64..2.0, -1.0f64..1.0, -1.0f64..1.0),
    ) {
        let e = |(r, a, b): (f64, f64, f64)| element(2, r, [a, 0.0, 0.0], [b, a - b, 0.0]);
        let (g, h, k) = (e(g), e(h), e(k));
        prop_assert!(metric_dist(&g.compose(&g.inverse()), &SimElement::identity(2)) < 1e-12);
        prop_assert!(metric_dist(&g.compose(&h).compose(&k), &g.compose(&h.compose(&k))) < 1e-12);
        // The metric is left-invariant under rotations and translations.
        let t = element(2, 1.0, [0.4, 0.0, 0.0], [0.3, -0.2, 0.0]);
        prop_assert!((metric_dist(&t.compose(&g), &t.compose(&h)) - metric_dist(&g, &h)).abs() < 1e-9);
    }

    #[test]
    fn w1_is_symmetric(a in arb_points(2, 12), b in arb_points(2, 12)) {
        let (x, y) = (PointCloud::from_points(&a), PointCloud::from_points(&b));
        let ab = empirical_w1(&x, &y).unwrap().value;
        let ba = empirical_w1(&y, &x).unwrap().value;
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn w1_triangle_inequality(a in arb_points(2, 10), b in arb_points(2, 10), c in arb_points(2, 10)) {
        let (x, y, z) = (PointCloud::from_points(&a), PointCloud::from_points(&b), PointCloud::from_points(&c));
        let xy = w1_assignment(&x, &y).unwrap();
        let yz = w1_assignment(&y, &z).unwrap();
        let xz = w1_assignment(&x, &z).unwrap();
        prop_assert!(xz <= xy + yz + 1e-9);
    }

    #[test]
    fn w1_1d_triangle_unequal_sizes(
        a in prop::collection::vec(-3.0f64..3.0, 1..20),
        b in prop::collection::vec(-3.0f64..3.0, 1..20),
        c in prop::collection::vec(-3.0f64..3.0, 1..20),
    ) {
        let xy = w1_sorted(a.clone(), b.clone());
        let yz = w1_sorted(b.clone(), c.clone());
        let xz = w1_sorted(a.clone(), c.clone());
        prop_assert!(xz <= xy + yz + 1e-9);
        prop_assert!((w1_sorted(b, a) - xy).abs() < 1e-12);
    }

    #[test]
    fn w1_translation_is_exact_in_1d(a in prop::collection::vec(-3.0f64..3.0, 1..30), t in -2.0f64..2.0) {
        let b: Vec<f64> = a.iter().map(|x| x + t).collect();
        prop_assert!((w1_sorted(a, b) - t.abs()).abs() < 1e-9);
    }

    #[test]
    fn knn_entropy_shifts_by_log_scale(a in arb_points(2, 50), c in 0.5f64..4.0, t in prop::collection::vec(-5.0f64..5.0, 2)) {
        let x = PointCloud::from_points(&a);
        let h = kozachenko_leonenko(&x);
        let moved = x.scaled(c).translated(&t);
        prop_assert!((kozachenko_leonenko(&moved) - h - 2.0 * c.ln()).abs() < 1e-8);
    }

    #[test]
    fn grid_entropy_invariant_under_lattice_shifts(k in prop::collection::vec(-4i32..4, 2), seed in 0u64..100) {
        let mut rng = stream_rng(seed, 9);
        let x = PointCloud::new(2, (0..2000).map(|_| rng.random_range(-3.0..3.0)).collect());
        let r = 0.25;
        let phases = grid_phases(2, 2, seed);
        let shift: Vec<f64> = k.iter().map(|&k| k as f64 * r).collect();
        let h0 = grid_entropy_with_phases(&x, r, &phases).unwrap().entropy;
        let h1 = grid_entropy_with_phases(&x.translated(&shift), r, &phases).unwrap().entropy;
        // Points on cell walls can move across under floating point shifts.
        prop_assert!((h0 - h1).abs() < 0.05);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn decomposition_reconstructs_the_walk(seed in 0u64..10_000, step in 0.0f64..2.0) {
        let mu = FiniteMeasure::uniform(vec![
            element(2, 0.5, [0.7, 0.0, 0.0], [1.0, 0.0, 0.0]),
            element(2, 0.45, [-1.1, 0.0, 0.0], [-0.5, 0.8, 0.0]),
        ]).unwrap();
        let path = sample_walk(&mu, 40, seed);
        let opts = FloorOptions { f_reps: 16, h_reps: 2, bootstrap: 10, quantile: 0.05 };
        let pd = build_decomposition(&mu, &path, 3.0, 0.05, &BlockPlan::equal(3, 3), step, &opts).unwrap();
        let rep = validate_decomposition(&pd, &path);
        prop_assert!(rep.reconstruction_error < 10.0 * RECONSTRUCTION_TOL);
        for ax in ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8"] {
            prop_assert!(rep.passes(ax), "{ax}: {:?}", rep.status(ax));
        }
    }
}

#[test]
fn taylor_constant_is_stable_across_scales() {
    let cs: Vec<f64> = [1e-2, 1e-3, 1e-4]
        .iter()
        .map(|&r| taylor_suite(400, r, 2.0, 5).unwrap())
        .inspect(|s| assert_eq!(s.violations, 0, "{s:?}"))
        .map(|s| s.fitted_c)
        .collect();
    let (lo, hi) = cs
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), &c| (l.min(c), h.max(c)));
    assert!(hi / lo < 1.5, "{cs:?}");
}
