//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::{Config, TestRunner};
use simdim::commands::{analyze, dimension};
use simdim::config::{load_config, SystemConfig};
use simdim_core::decomp::{
    build_decomposition, concatenate, decomposition_suite, taylor_suite, validate_decomposition, variance_sum_achieved,
    BlockPlan, FloorOptions,
};
use simdim_core::prob::{berry_esseen_trend, cramer_check, RotatingNoise, ScalarBernoulli, SummandSpec};
use simdim_core::walk::sample_walk;

const SEED: u64 = 20240607;

fn config(name: &str) -> SystemConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    load_config(&path).expect("shipped config parses").system
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let t = Instant::now();
    let v = f();
    (v, t.elapsed())
}

fn exact_invariants() -> Outcome {
    let cfg = config("cantor.toml");
    let (rep, took) = timed(|| analyze(&cfg, SEED));
    let rep = match rep {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let chi_err = (rep.profile.lyapunov + 3f64.ln()).abs();
    let rate_err = rep
        .generations
        .iter()
        .filter(|g| g.summary.n <= 10)
        .map(|g| (g.entropy_rate - 2f64.ln()).abs())
        .fold(0.0, f64::max);
    let g3 = rep.generations.iter().find(|g| g.summary.n == 3);
    let delta = g3.and_then(|g| g.summary.delta_exact.clone());
    let m = g3.and_then(|g| g.summary.m_exact.clone());
    let pass = chi_err <= 1e-12
        && rep.completed >= 10
        && rate_err <= 1e-12
        && delta.as_deref() == Some("2/9")
        && m.as_deref() == Some("2/9")
        && took < Duration::from_secs(1);
    outcome(
        pass,
        format!(
            "|chi + log 3| = {chi_err:.1e}, max |H/n - log 2| = {rate_err:.1e} over n <= {}, Delta_3 = {}, M_3 = {}, {took:.2?}",
            rep.completed,
            delta.unwrap_or_default(),
            m.unwrap_or_default()
        ),
    )
}

fn pisot_drop() -> Outcome {
    let cfg = config("golden.toml");
    let (rep, took) = timed(|| analyze(&cfg, SEED));
    let rep = match rep {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let g3 = rep.generations.iter().find(|g| g.summary.n == 3);
    let size = g3.map_or(0, |g| g.summary.support_size);
    let h3_err = g3.map_or(f64::INFINITY, |g| (g.summary.entropy - 22.0 / 8.0 * 2f64.ln()).abs());
    let below = rep
        .generations
        .iter()
        .filter(|g| g.summary.n >= 3)
        .all(|g| g.entropy_rate < 2f64.ln());
    let pass = rep.completed >= 12 && size == 7 && h3_err <= 1e-12 && below && took < Duration::from_secs(5);
    outcome(
        pass,
        format!(
            "|supp mu*3| = {size}, |H_3 - (22/8) log 2| = {h3_err:.1e}, rates below log 2 for n = 3..{}: {below}, {took:.2?}",
            rep.completed
        ),
    )
}

fn dimension_formula() -> (Outcome, Option<simdim::commands::DimensionRun>) {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut cantor_run = None;
    for (name, lo, hi) in [("cantor.toml", 0.58, 0.68), ("half.toml", 0.95, 1.0)] {
        let cfg = config(name);
        let (run, took) = timed(|| dimension(&cfg, SEED));
        match run {
            Ok(run) => {
                let s = run.estimate.slope;
                pass &= run.samples >= 1_000_000
                    && run.estimate.scales.len() == 6
                    && (lo..=hi).contains(&s)
                    && took < Duration::from_secs(120);
                lines.push(format!("{name}: {s:.4} in [{lo}, {hi}] ({took:.1?})"));
                if name == "cantor.toml" {
                    cantor_run = Some(run);
                }
            }
            Err(e) => {
                pass = false;
                lines.push(format!("{name}: {e}"));
            }
        }
    }
    (outcome(pass, lines.join("; ")), cantor_run)
}

fn exact_dimensionality(run: Option<&simdim::commands::DimensionRun>) -> Outcome {
    let Some(run) = run else {
        return outcome(false, "no dimension run for lambda = 1/3".into());
    };
    let l = &run.local;
    let spreads: Vec<String> = l.spread.iter().map(|s| format!("{s:.4}")).collect();
    outcome(
        l.shrinking && l.radii.len() >= 4,
        format!(
            "spread over r = 2^-4..2^-{}: [{}], window {:.3}",
            3 + l.radii.len(),
            spreads.join(", "),
            l.window
        ),
    )
}

fn taylor() -> Outcome {
    let (t, took) = timed(|| taylor_suite(10_000, 0.01, 4.0, SEED));
    match t {
        Ok(t) => outcome(
            t.violations == 0 && (3.4..=4.6).contains(&t.halving_ratio) && took < Duration::from_secs(30),
            format!(
                "{} violations over {} instances, fitted C = {:.3}, halving ratio {:.3}, {took:.1?}",
                t.violations, t.trials, t.fitted_c, t.halving_ratio
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn decomposition_round_trip() -> Outcome {
    let cfg = config("cantor.toml");
    let mu = cfg.measure().expect("cantor measure");
    let dc = &cfg.decompose;
    let (s, took) = timed(|| {
        decomposition_suite(
            &mu,
            1000,
            dc.path_len,
            &dc.plan(),
            dc.a,
            dc.r,
            dc.grid_step,
            &dc.floor_options(),
            SEED,
        )
    });
    match s {
        Ok(s) => outcome(
            s.paths == 1000
                && s.a1_a6_violations == 0
                && s.a9_violations == 0
                && !s.degenerate
                && took < Duration::from_secs(60),
            format!(
                "{} paths: A1-A6 violations {}, A9 violations {}, mean variance sum {:.4}, {took:.1?}",
                s.paths, s.a1_a6_violations, s.a9_violations, s.mean_variance_sum
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn concatenation() -> Outcome {
    let mu = config("cantor.toml").measure().expect("cantor measure");
    let opts = FloorOptions {
        f_reps: 64,
        h_reps: 4,
        bootstrap: 40,
        quantile: 0.05,
    };
    let plan = BlockPlan::equal(1, 2);
    let mut runner = TestRunner::new(Config {
        cases: 48,
        ..Config::default()
    });
    let strategy = (0u64..1_000_000, 3.0f64..30.0);
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for _ in 0..48 {
        let (seed, r) = strategy.new_tree(&mut runner).expect("strategy").current();
        let res = (|| -> Result<(f64, bool, bool), String> {
            let p1 = sample_walk(&mu, 24, seed);
            let d1 = build_decomposition(&mu, &p1, 2.0, r, &plan, 1.0, &opts).map_err(|e| e.to_string())?;
            let p2 = sample_walk(&mu, 24, seed ^ 0xabcdef);
            let d2 = build_decomposition(&mu, &p2, 2.0, 3.0 * r / d1.kappa(), &plan, 1.0, &opts)
                .map_err(|e| e.to_string())?;
            let c = concatenate(&d1, &p1, &d2, &p2, 3.0, 3.0).map_err(|e| e.to_string())?;
            let (v1, v2) = (variance_sum_achieved(&d1).total, variance_sum_achieved(&d2).total);
            let want = v1 + c.floor_scale * v2;
            let got = variance_sum_achieved(&c.pd).total;
            let rel = (got - want).abs() / want.abs().max(f64::MIN_POSITIVE);
            Ok((
                rel,
                v1 > 0.0 && v2 > 0.0,
                validate_decomposition(&c.pd, &c.path).all_pass(),
            ))
        })();
        match res {
            Ok((rel, nonzero, valid)) => {
                worst = worst.max(rel);
                if rel > 1e-12 || !nonzero || !valid {
                    failures.push(format!(
                        "seed {seed}, r {r:.3}: rel {rel:.1e}, nonzero {nonzero}, valid {valid}"
                    ));
                }
            }
            Err(e) => failures.push(format!("seed {seed}, r {r:.3}: {e}")),
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("48 random cases: sum of m matches V1 + scale*V2 to {worst:.1e}, validator passes")
        } else {
            failures.join("; ")
        },
    )
}

fn matrix_cramer() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for n in [50, 200] {
        match cramer_check(&ScalarBernoulli { p: 0.5 }, &vec![0.5; n], 1.0, n, 20_000, SEED) {
            Ok(c) => {
                let ok = c.matches_exact(3.0) == Some(true);
                pass &= ok;
                lines.push(format!(
                    "Bernoulli n={n}: {:.3e} vs exact {:.3e}",
                    c.empirical_prob,
                    c.exact_log_prob.map_or(f64::NAN, f64::exp)
                ));
            }
            Err(e) => {
                pass = false;
                lines.push(format!("Bernoulli n={n}: {e}"));
            }
        }
    }
    let noise = RotatingNoise { m: 0.5, s: 0.5 };
    let mut held = 0;
    let ns = [4, 8, 16, 32, 64, 128];
    for n in ns {
        match cramer_check(&noise, &vec![0.5; n], 1.0, n, 20_000, SEED) {
            Ok(c) if c.holds => held += 1,
            Ok(c) => lines.push(format!(
                "rotating n={n}: tail {:.3} above bound {:.3}",
                c.empirical_log_prob, c.bound_log_prob
            )),
            Err(e) => lines.push(format!("rotating n={n}: {e}")),
        }
    }
    pass &= held == ns.len();
    let took = start.elapsed();
    pass &= took < Duration::from_secs(60);
    lines.push(format!(
        "rotating d=2 within bound at {held}/{} n, {took:.1?}",
        ns.len()
    ));
    outcome(pass, lines.join("; "))
}

fn berry_esseen() -> Outcome {
    let (t, took) = timed(|| berry_esseen_trend(&SummandSpec::rademacher(1.0), &[100, 1000, 10_000], 100, 4, SEED));
    match t {
        Ok(t) => outcome(
            t.bound <= 1.0 && t.non_increasing && took < Duration::from_secs(60),
            format!(
                "W1/delta = {:?}, slope {:.4} +- {:.4}, {took:.1?}",
                t.ratios.iter().map(|r| (r * 1e4).round() / 1e4).collect::<Vec<_>>(),
                t.slope,
                t.slope_stderr
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn run_cli(args: &[&str], threads: &str, out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_simdim"))
        .args(args)
        .args(["--seed", "11", "--threads", threads, "--out"])
        .arg(out)
        .env_remove("SIMDIM_THREADS")
        .env_remove("SIMDIM_ORTHO_TOL")
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let e = e.expect("entry");
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).expect("file"),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let single: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/single.toml");
    let single = single.to_string_lossy().into_owned();
    let mut lines = Vec::new();
    let mut pass = true;
    for (label, args) in [
        ("verify", vec!["verify"]),
        ("decompose", vec!["decompose", "--config", &single]),
    ] {
        let runs: Vec<(i32, Vec<(String, Vec<u8>)>)> = [("1", "a"), ("8", "b"), ("1", "c")]
            .iter()
            .map(|(threads, tag)| {
                let out = tmp.path().join(format!("{label}-{tag}"));
                let code = run_cli(&args, threads, &out);
                (code, dir_bytes(&out))
            })
            .collect();
        let same = runs.windows(2).all(|w| w[0] == w[1]);
        let ok = runs[0].0 == 0 && !runs[0].1.is_empty() && same;
        pass &= ok;
        lines.push(format!(
            "{label}: {} files identical across threads 1/8/1: {same}, exit {}",
            runs[0].1.len(),
            runs[0].0
        ));
    }
    outcome(pass, lines.join("; "))
}

fn main() {
    let (dim, cantor_run) = dimension_formula();
    let results = [
        ("1 exact invariants", exact_invariants()),
        ("2 Pisot entropy drop", pisot_drop()),
        ("3 dimension formula", dim),
        (
            "4 exact-dimensionality diagnostic",
            exact_dimensionality(cantor_run.as_ref()),
        ),
        ("5 Taylor bound", taylor()),
        ("6 proper-decomposition round trip", decomposition_round_trip()),
        ("7 concatenation bookkeeping", concatenation()),
        ("8 matrix Cramer", matrix_cramer()),
        ("9 Berry-Esseen", berry_esseen()),
        ("10 determinism", determinism()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
