pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod verify;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::CommandOutput;
use crate::config::{load_config, LoadedConfig};
use crate::error::{CliError, EXIT_CONFIG, EXIT_OK, EXIT_SUITE};
use crate::output::{sha256_hex, Manifest, OutputDir};

pub const THREADS_ENV: &str = "SIMDIM_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "simdim",
    version,
    about = "Dimension diagnostics for self-similar measures on Sim(R^d)"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// System config (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (SIMDIM_THREADS takes precedence).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Product budget for support enumeration.
    #[arg(long, global = true)]
    pub budget: Option<u64>,
    /// Run only the named suite (verify).
    #[arg(long, global = true)]
    pub filter: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Exact invariants, entropy table, separation and predicted dimension.
    Analyze,
    /// Monte-Carlo dimension estimate against the prediction.
    Dimension,
    /// Proper decompositions, Taylor bounds and the Gaussian check.
    Decompose,
    /// Built-in invariant suites.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::Dimension => "dimension",
            Command::Decompose => "decompose",
            Command::Verify => "verify",
        }
    }
}

/// Thread count from `SIMDIM_THREADS`, else `--threads`.
pub fn thread_count(flag: Option<usize>) -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .or(flag)
        .filter(|&n| n > 0)
}

fn execute(cli: &Cli, loaded: Option<&LoadedConfig>, seed: u64) -> Result<CommandOutput, CliError> {
    let need = || {
        loaded
            .map(|l| &l.system)
            .ok_or_else(|| CliError::Config("--config is required".into()))
    };
    match cli.command {
        Command::Analyze => {
            let mut cfg = need()?.clone();
            if let Some(b) = cli.budget {
                cfg.analyze.budget = b;
            }
            commands::analyze_output(&cfg, seed)
        }
        Command::Dimension => {
            let mut cfg = need()?.clone();
            if let Some(b) = cli.budget {
                cfg.analyze.budget = b;
            }
            commands::dimension_output(&cfg, seed)
        }
        Command::Decompose => commands::decompose_output(need()?, seed),
        Command::Verify => {
            let rep = verify::verify(seed, cli.filter.as_deref()).ok_or_else(|| {
                CliError::Config(format!(
                    "--filter {:?} names no suite; suites are {}",
                    cli.filter.as_deref().unwrap_or(""),
                    verify::SUITES.join(", ")
                ))
            })?;
            let mut text = serde_json::to_string_pretty(&rep).expect("report serializes");
            text.push('\n');
            let failed: Vec<String> = rep
                .suites
                .iter()
                .flat_map(|s| {
                    s.checks
                        .iter()
                        .filter(|c| !c.passed)
                        .map(move |c| format!("{}.{}", s.suite, c.name))
                })
                .collect();
            Ok(CommandOutput {
                files: vec![("verify.json".into(), text)],
                warnings: failed.iter().map(|f| format!("failed: {f}")).collect(),
                exit_code: if rep.passed { EXIT_OK } else { EXIT_SUITE },
            })
        }
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    if let Some(n) = thread_count(cli.threads) {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let loaded = match cli.config.as_deref().map(load_config).transpose() {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let seed = cli.seed.or(loaded.as_ref().map(|l| l.system.seed)).unwrap_or(0);
    let out_dir = cli
        .out
        .clone()
        .or_else(|| loaded.as_ref().and_then(|l| l.system.output.clone()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("simdim-out"));
    let (result, code) = match execute(&cli, loaded.as_ref(), seed) {
        Ok(out) => {
            let code = out.exit_code;
            (Ok(out), code)
        }
        Err(e) => {
            let code = e.exit_code();
            (Err(e), code)
        }
    };
    let (files, warnings) = match &result {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            (out.files.clone(), out.warnings.clone())
        }
        Err(e) => (Vec::new(), vec![e.to_string()]),
    };
    let written = OutputDir::create(&out_dir).and_then(|mut dir| {
        for (name, text) in &files {
            dir.write(name, text)?;
        }
        dir.finish(Manifest {
            command: cli.command.name().to_string(),
            config: loaded.as_ref().map(|l| l.path.clone()),
            config_sha256: loaded.as_ref().map(|l| sha256_hex(l.text.as_bytes())),
            seed,
            simdim_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: simdim_core::VERSION.to_string(),
            outputs: Vec::new(),
            warnings: warnings.clone(),
            exit_code: code,
        })
    });
    if let Err(e) = written {
        eprintln!("error: {e}");
        return e.exit_code();
    }
    match result {
        Ok(_) => {
            println!(
                "{}: wrote {} files to {}",
                cli.command.name(),
                files.len() + 1,
                out_dir.display()
            );
            code
        }
        Err(e) => {
            eprintln!("error: {e}");
            if code == EXIT_OK {
                EXIT_CONFIG
            } else {
                code
            }
        }
    }
}
