//! Command-line front end.
//!
//! Exit codes:
//!
//! | code | meaning                                    |
//! |------|--------------------------------------------|
//! | 0    | success                                    |
//! | 2    | bad command line                           |
//! | 3    | scenario unreadable or not parseable       |
//! | 4    | scenario failed validation                 |
//! | 5    | cannot write an output file                |
//! | 6    | trace unreadable or lacks a header         |
//! | 7    | batch finished but some rows failed        |

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adsim::run::{self, RunError};
use adsim::scenario::{load_scenario, ScenarioConfig, ScenarioError};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "adsim", version, about = "Information-market simulator for mobile ad-hoc networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trace.
    Run {
        config: PathBuf,
        /// Overrides the seed in the file.
        #[arg(long)]
        seed: Option<u64>,
        /// Trace output; defaults to `<config stem>-s<seed>.trace`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Also write the full metrics report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run every config with every seed and print a summary table.
    Batch {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        /// Write each run's trace and report into this directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Check a scenario file and list every problem found.
    Validate { config: PathBuf },
    /// Recompute the metrics report from a saved trace.
    ReplayMetrics {
        trace: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

const EXIT_PARSE: u8 = 3;
const EXIT_INVALID: u8 = 4;
const EXIT_OUTPUT: u8 = 5;
const EXIT_TRACE: u8 = 6;
const EXIT_BATCH: u8 = 7;

fn scenario_exit(err: &ScenarioError) -> u8 {
    match err {
        ScenarioError::Invalid(_) => EXIT_INVALID,
        _ => EXIT_PARSE,
    }
}

fn report_scenario_error(path: &Path, err: &ScenarioError) -> ExitCode {
    match err {
        ScenarioError::Invalid(errs) => {
            for e in errs {
                eprintln!("{}: {e}", path.display());
            }
        }
        other => eprintln!("{}: {other}", path.display()),
    }
    ExitCode::from(scenario_exit(err))
}

fn load(path: &Path) -> Result<ScenarioConfig, ExitCode> {
    load_scenario(path).map_err(|e| report_scenario_error(path, &e))
}

fn cmd_run(config: &Path, seed: Option<u64>, trace: Option<PathBuf>, report: Option<PathBuf>) -> ExitCode {
    let cfg = match load(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let cfg = match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    let trace = trace.unwrap_or_else(|| {
        let stem = config.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
        PathBuf::from(format!("{stem}-s{}.trace", cfg.seed))
    });
    match run::run_scenario(&cfg, &trace, report.as_deref()) {
        Ok((path, metrics)) => {
            println!("trace\t{}", path.display());
            for (k, v) in metrics.summary() {
                println!("{k}\t{}", v.map_or("-".to_string(), |x| format!("{x:.6}")));
            }
            ExitCode::SUCCESS
        }
        Err(RunError::Scenario(e)) => report_scenario_error(config, &e),
        Err(e @ RunError::Io { .. }) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_OUTPUT)
        }
        Err(e @ RunError::Metrics(_)) => {
            eprintln!("{e}");
            ExitCode::from(EXIT_TRACE)
        }
    }
}

fn cmd_batch(configs: &[PathBuf], seeds: &[u64], out_dir: Option<&Path>) -> ExitCode {
    if let Some(dir) = out_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("cannot create {}: {e}", dir.display());
            return ExitCode::from(EXIT_OUTPUT);
        }
    }
    let rows = run::batch(configs, seeds, out_dir);
    print!("{}", run::render_batch(&rows));
    let failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        eprintln!("{failed} of {} runs failed", rows.len());
        ExitCode::from(EXIT_BATCH)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_validate(config: &Path) -> ExitCode {
    let cfg = match load(config) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let res = cfg.resolve().expect("loaded configs resolve");
    let count = |n: usize, what: &str| format!("{n} {what}{}", if n == 1 { "" } else { "s" });
    println!(
        "{}: ok ({}, {}, {})",
        config.display(),
        count(res.nodes.len(), "node"),
        count(res.markets.len(), "market"),
        count(res.script.len(), "directive")
    );
    ExitCode::SUCCESS
}

fn cmd_replay(trace: &Path, report: Option<&Path>) -> ExitCode {
    let metrics = match run::replay_metrics(trace) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{}: {e}", trace.display());
            return ExitCode::from(EXIT_TRACE);
        }
    };
    let text = metrics.render();
    match report {
        Some(p) => {
            if let Err(e) = std::fs::write(p, text) {
                eprintln!("cannot write {}: {e}", p.display());
                return ExitCode::from(EXIT_OUTPUT);
            }
        }
        None => print!("{text}"),
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seed, trace, report } => cmd_run(&config, seed, trace, report),
        Command::Batch { configs, seeds, out_dir } => cmd_batch(&configs, &seeds, out_dir.as_deref()),
        Command::Validate { config } => cmd_validate(&config),
        Command::ReplayMetrics { trace, report } => cmd_replay(&trace, report.as_deref()),
    }
}
