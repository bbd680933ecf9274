//! Built-in invariant suites run by `simdim verify`.

use nalgebra::DVector;
use num_rational::BigRational;
use serde::Serialize;
use simdim_core::cloud::PointCloud;
use simdim_core::decomp::{
    build_decomposition, concatenate, taylor_suite, validate_decomposition, variance_sum_achieved, BlockPlan,
    FloorOptions,
};
use simdim_core::entropy::{grid_entropy_at_scale, kozachenko_leonenko};
use simdim_core::measure::{common_fixed_point, is_irreducible, lyapunov_exponent, FiniteMeasure};
use simdim_core::prob::{
    berry_esseen_check, child_seed, cramer_check, empirical_w1, w1_assignment, RotatingNoise, ScalarBernoulli,
    SummandSpec,
};
use simdim_core::semigroup::exact::{ExactEnumerator, ExactField, ExactMeasure, ExactSim, QSqrt5};
use simdim_core::semigroup::{run_generations, EnumerationConfig, Enumerator};
use simdim_core::sim_group::{
    exp_map, log_map, metric_dist, orthogonality_defect, rotation_2d, rotation_3d_xyz, SimElement, ORTHO_TOL,
};
use simdim_core::walk::{sample_walk, stopped_walk, stream_rng, tau_statistics};

use rand::Rng;

pub const SUITES: [&str; 7] = [
    "sim_group",
    "measure_core",
    "semigroup_enum",
    "walk_sampler",
    "entropy_est",
    "prob_tools",
    "decomp_engine",
];

/// Overrides the orthogonality tolerance of the `sim_group` suite.
pub const ORTHO_TOL_ENV: &str = "SIMDIM_ORTHO_TOL";

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub filter: Option<String>,
    pub passed: bool,
    pub suites: Vec<SuiteResult>,
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn line(rho: f64, b: f64) -> SimElement {
    SimElement::line(rho, b).expect("valid atom")
}

fn cantor() -> FiniteMeasure {
    FiniteMeasure::uniform(vec![line(1.0 / 3.0, 1.0), line(1.0 / 3.0, -1.0)]).expect("valid measure")
}

fn random_element<R: Rng>(rng: &mut R) -> SimElement {
    let d = rng.random_range(1..=3usize);
    let tau = std::f64::consts::TAU;
    let rot = match d {
        1 => nalgebra::DMatrix::identity(1, 1),
        // Stay off the angle-pi branch cut of the logarithm.
        2 => rotation_2d(rng.random_range(-3.0..3.0)),
        _ => rotation_3d_xyz(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(0.0..tau / 8.0),
        ),
    };
    let b = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
    SimElement::new(rng.random_range(0.1..3.0), rot, b).expect("valid element")
}

fn ortho_tol() -> f64 {
    std::env::var(ORTHO_TOL_ENV)
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(ORTHO_TOL)
}

fn sim_group(seed: u64) -> Vec<Check> {
    let mut rng = stream_rng(seed, 0);
    let elems: Vec<SimElement> = (0..300).map(|_| random_element(&mut rng)).collect();
    let round_trip = elems
        .iter()
        .map(|g| {
            log_map(g)
                .map(|u| metric_dist(&exp_map(&u), g))
                .unwrap_or(f64::INFINITY)
        })
        .fold(0.0, f64::max);
    let mut product = SimElement::identity(3);
    let mut defect: f64 = 0.0;
    for g in elems.iter().filter(|g| g.dim() == 3).cycle().take(2000) {
        product = product.compose(g);
        defect = defect.max(orthogonality_defect(product.rot()));
    }
    let tol = ortho_tol();
    let mut assoc: f64 = 0.0;
    let mut inv: f64 = 0.0;
    for w in elems
        .windows(3)
        .filter(|w| w[0].dim() == w[1].dim() && w[1].dim() == w[2].dim())
    {
        let (g, h, k) = (&w[0], &w[1], &w[2]);
        assoc = assoc.max(metric_dist(&g.compose(h).compose(k), &g.compose(&h.compose(k))));
        inv = inv.max(metric_dist(&g.compose(&g.inverse()), &SimElement::identity(g.dim())));
    }
    vec![
        check(
            "exp_log_round_trip",
            round_trip <= 1e-9,
            format!("max distance {round_trip:.3e}"),
        ),
        check(
            "orthogonality_of_products",
            defect <= tol,
            format!("max defect {defect:.3e} over 2000 products, tolerance {tol:.1e}"),
        ),
        check(
            "group_axioms",
            assoc <= 1e-9 && inv <= 1e-9,
            format!("associativity {assoc:.3e}, inverse {inv:.3e}"),
        ),
    ]
}

fn measure_core(seed: u64) -> Vec<Check> {
    let chi = lyapunov_exponent(&cantor());
    let err = (chi + 3f64.ln()).abs();
    let rot = FiniteMeasure::uniform(vec![
        SimElement::new(0.5, rotation_2d(1.0), DVector::from_vec(vec![1.0, 0.0])).unwrap(),
        SimElement::new(0.5, rotation_2d(-0.3), DVector::from_vec(vec![0.0, 1.0])).unwrap(),
    ])
    .unwrap();
    let diag = FiniteMeasure::uniform(vec![
        SimElement::homothety(0.5, &[1.0, 0.0]).unwrap(),
        SimElement::homothety(0.5, &[-1.0, 0.0]).unwrap(),
    ])
    .unwrap();
    let irr = is_irreducible(&rot, 1e-8, 64, seed).is_irreducible();
    let red = !is_irreducible(&diag, 1e-8, 64, seed).is_irreducible();
    let single = FiniteMeasure::uniform(vec![SimElement::homothety(0.5, &[1.0, 2.0]).unwrap()]).unwrap();
    let fp = common_fixed_point(&single, 1e-9).ok().flatten();
    let fp_ok = fp
        .as_ref()
        .is_some_and(|x| (x[0] - 2.0).abs() < 1e-12 && (x[1] - 4.0).abs() < 1e-12);
    vec![
        check("lyapunov_cantor", err <= 1e-12, format!("chi = {chi}, error {err:.2e}")),
        check(
            "irreducibility",
            irr && red,
            format!("rotating system irreducible: {irr}; axis-aligned homotheties reducible: {red}"),
        ),
        check(
            "common_fixed_point",
            fp_ok,
            match &fp {
                Some(x) => format!("fixed point {:?}", x.as_slice()),
                None => "no fixed point found".into(),
            },
        ),
    ]
}

fn semigroup_enum(_seed: u64) -> Vec<Check> {
    let q = |s: &str| BigRational::parse(s).unwrap();
    let cantor = ExactMeasure::new(
        vec![
            ExactSim::new(q("1/3"), 1, q("1")).unwrap(),
            ExactSim::new(q("1/3"), 1, q("-1")).unwrap(),
        ],
        vec![0.5, 0.5],
    )
    .unwrap();
    let mut en = ExactEnumerator::new(&cantor, EnumerationConfig::default());
    let (rows, err) = run_generations(&mut en, 8);
    let rate_err = rows
        .iter()
        .map(|r| (r.entropy_rate() - 2f64.ln()).abs())
        .fold(0.0, f64::max);
    let d3 = rows.get(2).and_then(|r| r.delta_exact.clone());
    let lambda = QSqrt5::inverse_golden();
    let golden = ExactMeasure::new(
        vec![
            ExactSim::new(lambda.clone(), 1, QSqrt5::one()).unwrap(),
            ExactSim::new(lambda, 1, QSqrt5::one().neg()).unwrap(),
        ],
        vec![0.5, 0.5],
    )
    .unwrap();
    let mut en = ExactEnumerator::new(&golden, EnumerationConfig::default());
    let (grows, gerr) = run_generations(&mut en, 8);
    let sizes: Vec<usize> = grows.iter().map(|r| r.support_size).collect();
    let float = golden.to_float();
    let mut fen = Enumerator::new(&float, EnumerationConfig::default());
    let (frows, ferr) = run_generations(&mut fen, 8);
    let fsizes: Vec<usize> = frows.iter().map(|r| r.support_size).collect();
    let h3 = grows.get(2).map_or(f64::NAN, |r| r.entropy);
    vec![
        check(
            "cantor_entropy_rate",
            err.is_none() && rows.len() == 8 && rate_err <= 1e-12,
            format!("max |H/n - log 2| = {rate_err:.2e}"),
        ),
        check(
            "cantor_delta_3",
            d3.as_deref() == Some("2/9"),
            format!("Delta_3 = {d3:?}"),
        ),
        check(
            "golden_collisions",
            gerr.is_none() && sizes.get(2) == Some(&7) && (h3 - 2.75 * 2f64.ln()).abs() <= 1e-12,
            format!("support sizes {sizes:?}, H_3 = {h3}"),
        ),
        check(
            "float_matches_exact",
            ferr.is_none() && fsizes == sizes,
            format!("float support sizes {fsizes:?}"),
        ),
    ]
}

fn walk_sampler(seed: u64) -> Vec<Check> {
    let mu = FiniteMeasure::uniform(vec![line(0.5, 1.0), line(0.25, -1.0)]).unwrap();
    let kappa = 1e-6;
    let mut worst_over: f64 = 0.0;
    let mut first_passage = true;
    for t in 0..200u64 {
        match stopped_walk(&mu, kappa, child_seed(seed, t)) {
            Ok((q, _)) => {
                worst_over = worst_over.max(q.rho() / kappa - 1.0);
                // One step earlier the ratio was above kappa, and steps shrink by at most 1/4.
                first_passage &= q.rho() > 0.25 * kappa * (1.0 - 1e-12);
            }
            Err(_) => first_passage = false,
        }
    }
    let stats = tau_statistics(&mu, 1e-12, 4000, seed);
    let renewal = stats.as_ref().map_or(f64::NAN, |s| s.renewal_ratio);
    let path = sample_walk(&mu, 50, seed);
    let seg = metric_dist(&path.segment(0, 20).compose(&path.segment(20, 50)), path.product());
    vec![
        check(
            "stopping_rule",
            worst_over <= 1e-12 && first_passage,
            format!("max rho/kappa - 1 = {worst_over:.2e}, first passage {first_passage}"),
        ),
        check(
            "renewal_ratio",
            (renewal - 1.0).abs() <= 0.1,
            format!("E[tau] |chi| / log(1/kappa) = {renewal:.4}"),
        ),
        check("segment_products", seg <= 1e-12, format!("distance {seg:.2e}")),
    ]
}

fn entropy_est(seed: u64) -> Vec<Check> {
    let point = PointCloud::new(1, vec![0.25; 2000]);
    let h0 = grid_entropy_at_scale(&point, 0.01, seed).unwrap_or(f64::NAN);
    let mut rng = stream_rng(seed, 1);
    let uniform = PointCloud::new(1, (0..20_000).map(|_| rng.random::<f64>()).collect());
    let r = 2f64.powi(-6);
    let hu = grid_entropy_at_scale(&uniform, r, seed).unwrap_or(f64::NAN);
    let square = PointCloud::new(2, (0..4000).map(|_| rng.random::<f64>()).collect());
    let shift = kozachenko_leonenko(&square.scaled(3.0)) - kozachenko_leonenko(&square);
    vec![
        check("point_mass", h0.abs() <= 1e-12, format!("H = {h0}")),
        check(
            "uniform_interval",
            (hu - (1.0 / r).ln()).abs() <= 0.05,
            format!("H = {hu:.4} vs log(1/r) = {:.4}", (1.0 / r).ln()),
        ),
        check(
            "knn_scaling",
            (shift - 2.0 * 3f64.ln()).abs() <= 1e-9,
            format!("H(3X) - H(X) = {shift:.6} vs 2 log 3"),
        ),
    ]
}

fn prob_tools(seed: u64) -> Vec<Check> {
    let mut rng = stream_rng(seed, 2);
    let mut gap: f64 = 0.0;
    for _ in 0..20 {
        let a = PointCloud::new(1, (0..40).map(|_| rng.random_range(-1.0..1.0)).collect());
        let b = PointCloud::new(1, (0..40).map(|_| rng.random_range(-1.0..2.0)).collect());
        let exact = empirical_w1(&a, &b).map(|r| r.value).unwrap_or(f64::NAN);
        let lp = w1_assignment(&a, &b).unwrap_or(f64::NAN);
        gap = gap.max((exact - lp).abs());
    }
    let bern = ScalarBernoulli { p: 0.5 };
    let c = cramer_check(&bern, &[0.5; 50], 1.0, 50, 20_000, seed);
    let binom = c.as_ref().ok().and_then(|c| c.matches_exact(3.0)) == Some(true);
    let noise = RotatingNoise { m: 0.5, s: 0.5 };
    let c2 = cramer_check(&noise, &[0.5; 8], 1.0, 8, 20_000, seed);
    let holds = c2.as_ref().is_ok_and(|c| c.holds);
    let be = berry_esseen_check(&SummandSpec::rademacher(1.0), 100, 10_000, seed);
    let ratio = be.as_ref().map_or(f64::NAN, |r| r.ratio);
    vec![
        check("w1_exact_vs_assignment", gap <= 1e-9, format!("max gap {gap:.2e}")),
        check(
            "cramer_binomial_exact",
            binom,
            match &c {
                Ok(c) => format!(
                    "empirical {:.4e}, exact {:.4e}",
                    c.empirical_prob,
                    c.exact_log_prob.map_or(f64::NAN, f64::exp)
                ),
                Err(e) => e.to_string(),
            },
        ),
        check(
            "cramer_rotating_noise",
            holds,
            match &c2 {
                Ok(c) => format!("log tail {:.4} vs bound {:.4}", c.empirical_log_prob, c.bound_log_prob),
                Err(e) => e.to_string(),
            },
        ),
        check(
            "berry_esseen_bounded",
            ratio <= 1.0,
            format!("W1/delta = {ratio:.4} at n = 100"),
        ),
    ]
}

fn decomp_engine(seed: u64) -> Vec<Check> {
    let mu = cantor();
    let opts = FloorOptions {
        f_reps: 64,
        h_reps: 4,
        bootstrap: 40,
        quantile: 0.05,
    };
    let plan = BlockPlan::equal(3, 4);
    let mut failures = 0;
    let mut total = 0.0;
    for p in 0..20u64 {
        let path = sample_walk(&mu, 40, child_seed(seed, p));
        match build_decomposition(&mu, &path, 2.0, 0.1, &plan, 1.0, &opts) {
            Ok(pd) => {
                failures += usize::from(!validate_decomposition(&pd, &path).all_pass());
                total += variance_sum_achieved(&pd).total;
            }
            Err(_) => failures += 1,
        }
    }
    let taylor = taylor_suite(500, 0.01, 2.0, seed);
    let (viol, halving) = taylor
        .as_ref()
        .map_or((usize::MAX, f64::NAN), |t| (t.violations, t.halving_ratio));
    let concat = (|| -> Result<(f64, f64, bool), Box<dyn std::error::Error>> {
        let plan = BlockPlan::equal(1, 2);
        let p1 = sample_walk(&mu, 20, child_seed(seed, 100));
        let d1 = build_decomposition(&mu, &p1, 2.0, 3.0, &plan, 1.0, &opts)?;
        let p2 = sample_walk(&mu, 20, child_seed(seed, 101));
        let d2 = build_decomposition(&mu, &p2, 2.0, 9.0 / d1.kappa(), &plan, 1.0, &opts)?;
        let c = concatenate(&d1, &p1, &d2, &p2, 3.0, 3.0)?;
        let (v1, v2) = (variance_sum_achieved(&d1).total, variance_sum_achieved(&d2).total);
        let parts = v1 > 0.0 && v2 > 0.0;
        Ok((
            variance_sum_achieved(&c.pd).total,
            v1 + c.floor_scale * v2,
            parts && validate_decomposition(&c.pd, &c.path).all_pass(),
        ))
    })();
    let concat_ok = concat
        .as_ref()
        .is_ok_and(|(got, want, ok)| *ok && (got - want).abs() <= 1e-12 * want);
    vec![
        check(
            "cantor_round_trip",
            failures == 0 && total > 0.0,
            format!(
                "{failures} of 20 paths failed validation; mean variance sum {:.4}",
                total / 20.0
            ),
        ),
        check(
            "taylor_bound",
            viol == 0 && (halving - 4.0).abs() <= 0.6,
            format!("{viol} violations, halving ratio {halving:.3}"),
        ),
        check(
            "concatenation",
            concat_ok,
            match &concat {
                Ok((got, want, ok)) => format!("sum {got:.6e} vs parts {want:.6e}, parts nonzero and valid: {ok}"),
                Err(e) => e.to_string(),
            },
        ),
    ]
}

pub fn run_suite(name: &str, seed: u64) -> Option<SuiteResult> {
    let s = child_seed(seed, SUITES.iter().position(|&x| x == name)? as u64);
    let checks = match name {
        "sim_group" => sim_group(s),
        "measure_core" => measure_core(s),
        "semigroup_enum" => semigroup_enum(s),
        "walk_sampler" => walk_sampler(s),
        "entropy_est" => entropy_est(s),
        "prob_tools" => prob_tools(s),
        "decomp_engine" => decomp_engine(s),
        _ => return None,
    };
    Some(SuiteResult {
        suite: name.to_string(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

/// Runs every suite, or only `filter`. `None` when the filter names no suite.
pub fn verify(seed: u64, filter: Option<&str>) -> Option<VerifyReport> {
    let names: Vec<&str> = match filter {
        Some(f) => vec![*SUITES.iter().find(|&&s| s == f)?],
        None => SUITES.to_vec(),
    };
    let suites: Vec<SuiteResult> = names.iter().filter_map(|n| run_suite(n, seed)).collect();
    Some(VerifyReport {
        seed,
        filter: filter.map(str::to_string),
        passed: suites.iter().all(|s| s.passed),
        suites,
    })
}
