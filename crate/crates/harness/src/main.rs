use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use parint_core::problem::Exponent;
use parint_core::rates::regime_report;
use parint_core::ProblemSpec;
use parint_harness::config::ExperimentConfig;
use parint_harness::{checks, experiment, output, HarnessError};

#[derive(Parser)]
#[command(name = "parint", version, about = "Multilevel parametric integration experiments")]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Regime flags, rate exponents and the speedup exponent as JSON.
    Rates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        r: Option<u32>,
        /// Integrability exponent, an integer, a fraction like 7/2, or inf.
        #[arg(long)]
        p: Option<Exponent>,
        #[arg(long)]
        q: Option<Exponent>,
        #[arg(long)]
        d1: Option<u32>,
        #[arg(long)]
        d2: Option<u32>,
    },
    /// Error against budget for one algorithm, as CSV.
    Convergence {
        #[command(flatten)]
        common: Common,
    },
    /// Error ratio of the non-adaptive and adaptive algorithms at matched
    /// evaluation counts, as CSV.
    Gap {
        #[command(flatten)]
        common: Common,
    },
    /// Runs the invariant suite.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| HarnessError::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn warn_resolution(count: usize) {
    if count > 0 {
        eprintln!("warning: {count} error measurements changed by more than 5% under grid refinement");
    }
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Rates {
            common,
            r,
            p,
            q,
            d1,
            d2,
        } => {
            let spec = match (r, p, q, d1, d2) {
                (Some(r), Some(p), Some(q), Some(d1), Some(d2)) => {
                    ProblemSpec::new(r, p, q, d1, d2).map_err(|e| HarnessError::Config(e.to_string()))?
                }
                (None, None, None, None, None) => {
                    let s = load(&common)?.spec;
                    ProblemSpec::new(s.r, s.p, s.q, s.d1, s.d2).map_err(|e| HarnessError::Config(e.to_string()))?
                }
                _ => return Err(HarnessError::Config("give all of --r --p --q --d1 --d2 or --config".into())),
            };
            let report = regime_report(&spec).map_err(|e| HarnessError::Config(e.to_string()))?;
            let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
            text.push('\n');
            output::emit(&text, common.out.as_deref())
        }
        Command::Convergence { common } => {
            let cfg = load(&common)?;
            let sweep = experiment::run_convergence(&cfg)?;
            warn_resolution(sweep.under_resolved);
            output::emit(&output::convergence_csv(&sweep)?, cfg.out.as_deref())
        }
        Command::Gap { common } => {
            let cfg = load(&common)?;
            let sweep = experiment::run_gap(&cfg)?;
            warn_resolution(sweep.under_resolved);
            output::emit(&output::gap_csv(&sweep)?, cfg.out.as_deref())
        }
        Command::Selftest { common } => {
            let results = checks::selftest(common.seed.unwrap_or(0));
            let mut text = String::new();
            for c in &results {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                text.push_str(&format!("{tag} {}: {}\n", c.name, c.detail));
            }
            output::emit(&text, common.out.as_deref())?;
            let failed: Vec<&str> = results.iter().filter(|c| !c.passed).map(|c| c.name).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(HarnessError::Invariant(failed.join(", ")))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
