//! `analyze`, `dimension` and `decompose`.

use num_rational::BigRational;
use serde::Serialize;
use simdim_core::decomp::{
    build_decomposition, decomposition_suite, taylor_suite, BlockPlan, DecompositionSuite, TaylorSuite,
};
use simdim_core::entropy::{
    estimate_dimension, gnuplot_dat, local_dimension_phased, predicted_dimension, scales_csv, DimensionOptions,
    DimensionReport, LocalDimensionReport, Prediction,
};
use simdim_core::measure::{attractor_radius_bound, measure_profile, FiniteMeasure, MeasureProfile};
use simdim_core::prob::{child_seed, gaussian_dimension_check, grid_disintegration, GaussianDimensionVerdict};
use simdim_core::semigroup::exact::{ExactEnumerator, QSqrt5};
use simdim_core::semigroup::{
    generations_csv, run_generations, separation_report, Enumerator, GenerationSource, GenerationSummary,
    SemigroupError, SeparationReport,
};
use simdim_core::walk::{choose_kappa, sample_attractor, sample_walk, StopRule};

use crate::config::{ExactMode, SystemConfig};
use crate::error::{CliError, StageExt, EXIT_BUDGET, EXIT_OK, EXIT_SUITE};

/// A finished command: its files, warnings and exit code.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub files: Vec<(String, String)>,
    pub warnings: Vec<String>,
    pub exit_code: i32,
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// analyze

#[derive(Debug, Clone, Serialize)]
pub struct GenerationRow {
    #[serde(flatten)]
    pub summary: GenerationSummary,
    pub entropy_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeReport {
    pub name: Option<String>,
    pub d: usize,
    pub exact: ExactMode,
    pub seed: u64,
    pub profile: MeasureProfile,
    pub generations: Vec<GenerationRow>,
    /// `H(mu^{*n}) / n` at the last completed `n`, an upper bound on `h_mu`.
    pub entropy_rate: Option<f64>,
    pub separation: SeparationReport,
    pub predicted_dimension: Option<Prediction>,
    pub completed: usize,
    pub budget_exceeded: Option<String>,
    pub warnings: Vec<String>,
}

fn enumerate(
    cfg: &SystemConfig,
    mu: &FiniteMeasure,
    n_max: usize,
) -> Result<(Vec<GenerationSummary>, Option<SemigroupError>), CliError> {
    let en = cfg.enumeration();
    Ok(match cfg.exact {
        ExactMode::None => {
            let mut src = Enumerator::new(mu, en);
            run_generations(&mut src as &mut dyn GenerationSource, n_max)
        }
        ExactMode::Rational => {
            let exact = cfg.exact_measure::<BigRational>()?;
            let mut src = ExactEnumerator::new(&exact, en);
            run_generations(&mut src, n_max)
        }
        ExactMode::Sqrt5 => {
            let exact = cfg.exact_measure::<QSqrt5>()?;
            let mut src = ExactEnumerator::new(&exact, en);
            run_generations(&mut src, n_max)
        }
    })
}

pub fn analyze(cfg: &SystemConfig, seed: u64) -> Result<AnalyzeReport, CliError> {
    let mu = cfg.measure()?;
    let (rows, err) = enumerate(cfg, &mu, cfg.analyze.n_max)?;
    let mut warnings = Vec::new();
    let budget_exceeded = match err {
        None => None,
        Some(e @ SemigroupError::BudgetExceeded { .. }) => Some(e.to_string()),
        Some(e) => return Err(e).stage("analyze.enumerate"),
    };
    let rates: Vec<f64> = rows.iter().map(GenerationSummary::entropy_rate).collect();
    let profile = measure_profile(&mu, rates.clone(), seed);
    let predicted = match predicted_dimension(&profile, cfg.d) {
        Ok(p) => Some(p),
        Err(e) => {
            warnings.push(format!("no predicted dimension: {e}"));
            None
        }
    };
    if let Some(b) = &budget_exceeded {
        warnings.push(b.clone());
    }
    let separation = separation_report(&rows, cfg.analyze.eps);
    Ok(AnalyzeReport {
        name: cfg.name.clone(),
        d: cfg.d,
        exact: cfg.exact,
        seed,
        entropy_rate: rates.last().copied(),
        completed: rows.len(),
        generations: rows
            .into_iter()
            .zip(rates)
            .map(|(summary, entropy_rate)| GenerationRow { summary, entropy_rate })
            .collect(),
        profile,
        separation,
        predicted_dimension: predicted,
        budget_exceeded,
        warnings,
    })
}

pub fn analyze_output(cfg: &SystemConfig, seed: u64) -> Result<CommandOutput, CliError> {
    let rep = analyze(cfg, seed)?;
    let rows: Vec<GenerationSummary> = rep.generations.iter().map(|r| r.summary.clone()).collect();
    Ok(CommandOutput {
        files: vec![
            ("analyze.json".into(), json(&rep)),
            ("generations.csv".into(), generations_csv(&rows)),
        ],
        exit_code: if rep.budget_exceeded.is_some() {
            EXIT_BUDGET
        } else {
            EXIT_OK
        },
        warnings: rep.warnings,
    })
}

// ---------------------------------------------------------------------------
// dimension

#[derive(Debug, Clone, Serialize)]
pub struct LocalSummary {
    pub radii: Vec<f64>,
    pub window: f64,
    pub anchor: Option<f64>,
    pub mean: Vec<f64>,
    pub spread: Vec<f64>,
    /// Spread strictly decreases at every halving.
    pub shrinking: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionRun {
    pub name: Option<String>,
    pub seed: u64,
    pub samples: usize,
    pub kappa: f64,
    pub entropy_rate: Option<f64>,
    pub predicted: Option<Prediction>,
    pub estimate: DimensionReport,
    pub local: LocalSummary,
    pub warnings: Vec<String>,
}

fn local_summary(rep: &LocalDimensionReport, window: f64, anchor: Option<f64>) -> LocalSummary {
    LocalSummary {
        radii: rep.radii.clone(),
        window,
        anchor,
        mean: rep.mean.clone(),
        shrinking: rep.spread.windows(2).all(|w| w[1] < w[0]),
        spread: rep.spread.clone(),
    }
}

pub fn dimension(cfg: &SystemConfig, seed: u64) -> Result<DimensionRun, CliError> {
    let mu = cfg.measure()?;
    let dc = &cfg.dimension;
    let mut warnings = Vec::new();
    if mu.lyapunov_exponent() >= 0.0 {
        return Err(CliError::Config(format!(
            "dimension: chi_mu = {} is not negative; the measure is not contracting on average",
            mu.lyapunov_exponent()
        )));
    }
    let (rows, err) = enumerate(cfg, &mu, dc.n_predict)?;
    if let Some(e) = err {
        warnings.push(format!("prediction uses {} generations: {e}", rows.len()));
    }
    let rates: Vec<f64> = rows.iter().map(GenerationSummary::entropy_rate).collect();
    let profile = measure_profile(&mu, rates, seed);
    let predicted = predicted_dimension(&profile, cfg.d).stage("dimension.predict")?;
    let kappa = match dc.kappa {
        Some(k) => k,
        None => choose_kappa(&mu, 0.01 * dc.r_min, 1000, child_seed(seed, 1)).stage("dimension.kappa")?,
    };
    let cloud = sample_attractor(&mu, dc.samples, seed, StopRule::Kappa(kappa)).stage("dimension.sample")?;
    let opts = DimensionOptions {
        seed,
        sampling_kappa: Some(kappa),
        attractor_scale: Some(attractor_radius_bound(&mu)).filter(|a| a.is_finite()),
        predicted: Some(predicted.value),
    };
    let estimate = estimate_dimension(&cloud, dc.r_min, dc.r_max, dc.scales, &opts).stage("dimension.estimate")?;
    warnings.extend(estimate.warnings.iter().cloned());
    let centers = sample_attractor(&mu, dc.local_centers, child_seed(seed, 2), StopRule::Kappa(kappa))
        .stage("dimension.local")?;
    let radii: Vec<f64> = (0..=dc.local_halvings)
        .map(|k| dc.local_r0 * 0.5f64.powi(k as i32))
        .collect();
    let anchor = dc.local_anchor.then(|| estimate.slope.clamp(0.0, cfg.d as f64));
    let window = dc.local_window.unwrap_or_else(|| mu.lyapunov_exponent().abs().exp());
    let local = local_dimension_phased(&cloud, &centers, &radii, window, anchor, child_seed(seed, 3))
        .stage("dimension.local")?;
    Ok(DimensionRun {
        name: cfg.name.clone(),
        seed,
        samples: dc.samples,
        kappa,
        entropy_rate: profile.entropy_estimate(),
        predicted: Some(predicted),
        estimate,
        local: local_summary(&local, window, anchor),
        warnings,
    })
}

pub fn dimension_output(cfg: &SystemConfig, seed: u64) -> Result<CommandOutput, CliError> {
    let run = dimension(cfg, seed)?;
    let mut local_csv = String::from("r,mean,spread\n");
    for ((r, m), s) in run.local.radii.iter().zip(&run.local.mean).zip(&run.local.spread) {
        local_csv.push_str(&format!("{r:.10e},{m:.10e},{s:.10e}\n"));
    }
    Ok(CommandOutput {
        files: vec![
            ("dimension.json".into(), json(&run)),
            ("scales.csv".into(), scales_csv(&run.estimate)),
            ("dimension.dat".into(), gnuplot_dat(&run.estimate)),
            ("local.csv".into(), local_csv),
        ],
        warnings: run.warnings,
        exit_code: EXIT_OK,
    })
}

// ---------------------------------------------------------------------------
// decompose

#[derive(Debug, Clone, Serialize)]
pub struct DecomposeRun {
    pub name: Option<String>,
    pub seed: u64,
    pub plan: BlockPlan,
    pub a: f64,
    pub r: f64,
    pub grid_step: f64,
    pub suite: DecompositionSuite,
    pub all_pass: bool,
    pub taylor: TaylorSuite,
    pub gaussian: GaussianDimensionVerdict,
    pub warnings: Vec<String>,
}

pub fn decompose(cfg: &SystemConfig, seed: u64) -> Result<(DecomposeRun, String), CliError> {
    let mu = cfg.measure()?;
    let dc = &cfg.decompose;
    let plan = dc.plan();
    let opts = dc.floor_options();
    let mut warnings = Vec::new();
    let suite = decomposition_suite(&mu, dc.paths, dc.path_len, &plan, dc.a, dc.r, dc.grid_step, &opts, seed)
        .stage("decompose.build")?;
    if suite.degenerate {
        warnings.push("degenerate system: every variance floor is zero".into());
    }
    let sample_path = sample_walk(&mu, dc.path_len, child_seed(seed, 0));
    let dump = build_decomposition(&mu, &sample_path, dc.a, dc.r, &plan, dc.grid_step, &opts)
        .stage("decompose.build")?
        .dump();
    let taylor = taylor_suite(dc.taylor_trials, dc.taylor_r, dc.a, child_seed(seed, 3)).stage("decompose.taylor")?;
    let kappa = choose_kappa(&mu, 0.01 * dc.gaussian_r, 1000, child_seed(seed, 4)).stage("decompose.gaussian")?;
    let cloud = sample_attractor(&mu, dc.gaussian_samples, child_seed(seed, 5), StopRule::Kappa(kappa))
        .stage("decompose.gaussian")?;
    let cells = grid_disintegration(&cloud, dc.cell_side);
    let gaussian = gaussian_dimension_check(&cells, dc.gaussian_c, dc.gaussian_r, child_seed(seed, 6))
        .stage("decompose.gaussian")?;
    let all_pass = suite.a1_a6_violations == 0 && suite.a7_a8_violations == 0 && suite.a9_violations == 0;
    if !all_pass {
        warnings.push(format!(
            "validation failures: A1-A6 on {} paths, A7-A8 on {}, A9 on {}",
            suite.a1_a6_violations, suite.a7_a8_violations, suite.a9_violations
        ));
    }
    if taylor.violations > 0 {
        warnings.push(format!("Taylor bound exceeded on {} instances", taylor.violations));
    }
    Ok((
        DecomposeRun {
            name: cfg.name.clone(),
            seed,
            plan,
            a: dc.a,
            r: dc.r,
            grid_step: dc.grid_step,
            suite,
            all_pass,
            taylor,
            gaussian,
            warnings,
        },
        dump,
    ))
}

pub fn decompose_output(cfg: &SystemConfig, seed: u64) -> Result<CommandOutput, CliError> {
    let (run, dump) = decompose(cfg, seed)?;
    let mut cells = String::from("cell,size,mass,sigma_floor,w1_over_r,entropy_gain\n");
    for (i, c) in run.gaussian.cells.iter().enumerate() {
        cells.push_str(&format!(
            "{i},{},{:.10e},{:.10e},{:.10e},{:.10e}\n",
            c.size, c.mass, c.sigma_floor, c.w1_over_r, c.entropy_gain
        ));
    }
    let mut floors = String::from("block,certified_m\n");
    for (i, m) in run.suite.certified_m.iter().enumerate() {
        floors.push_str(&format!("{},{m:.10e}\n", i + 1));
    }
    Ok(CommandOutput {
        files: vec![
            ("decompose.json".into(), json(&run)),
            ("floors.csv".into(), floors),
            ("gaussian_cells.csv".into(), cells),
            ("decomposition.txt".into(), dump),
        ],
        exit_code: if run.all_pass && run.taylor.violations == 0 {
            EXIT_OK
        } else {
            EXIT_SUITE
        },
        warnings: run.warnings,
    })
}
