//! `bvrsim` — experiment runner for the BVR-L-PSGD simulator.
//!
//! Subcommands: `run` (execute the configured grid), `sweep` (run + tuning
//! selection), `compare` (sweep + per-criterion plot CSVs), `certify`
//! (second-order-stationarity scan over saved traces).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bvrsim::harness::{self, ExperimentConfig, Mode};

#[derive(Parser)]
#[command(name = "bvrsim", version, about = "BVR-L-PSGD cluster simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute all configured (algorithm x grid x trial) runs.
    Run(RunArgs),
    /// Run, then select the best grid point per algorithm.
    Sweep(RunArgs),
    /// Sweep, then emit per-criterion plot CSVs at the selected points.
    Compare(RunArgs),
    /// Scan saved traces for certified second-order stationary points.
    Certify(CertifyArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration file (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Dotted-path overrides, e.g. --set run.eta=0.1
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (defaults to the configured output.dir).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker-pool size for grid x trial parallelism.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Independent repetitions of the whole algorithm (multiplies trials).
    #[arg(long, default_value_t = 1)]
    restarts: usize,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Certification target: eps rho.
    #[arg(long = "certify", num_args = 2, value_names = ["EPS", "RHO"], required = true)]
    certify: Vec<f64>,
    /// Eigensolver residual tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

fn load_config(common: &CommonArgs, restarts: usize) -> Result<ExperimentConfig, String> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| format!("{}: {e}", common.config.display()))?;
    let mut cfg = ExperimentConfig::from_toml(&text, &common.set).map_err(|e| e.to_string())?;
    if restarts > 1 {
        cfg.run.n_trials *= restarts;
    }
    Ok(cfg)
}

fn out_dir(common: &CommonArgs, cfg: &ExperimentConfig) -> PathBuf {
    common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
}

fn run_mode(args: &RunArgs, mode: Mode) -> ExitCode {
    let cfg = match load_config(&args.common, args.restarts) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = out_dir(&args.common, &cfg);
    match harness::execute(&cfg, &dir, args.common.threads, mode) {
        Ok(summary) => {
            println!(
                "{}: {} runs -> {}",
                mode.name(),
                summary.jobs,
                dir.display()
            );
            for sel in &summary.selections {
                println!(
                    "selected {}: eta = {}, r = {} ({})",
                    sel.algorithm, sel.eta, sel.r, sel.rule_used
                );
                if let Some(note) = &sel.fallback_notice {
                    eprintln!("notice: {note}");
                }
            }
            if summary.aborted.is_empty() {
                ExitCode::SUCCESS
            } else {
                for (stem, msg) in &summary.aborted {
                    eprintln!("aborted: {stem}: {msg}");
                }
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn certify_mode(args: &CertifyArgs) -> ExitCode {
    let cfg = match load_config(&args.common, 1) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = out_dir(&args.common, &cfg);
    let (eps, rho) = (args.certify[0], args.certify[1]);
    match harness::certify(&cfg, &dir, eps, rho, args.tol) {
        Ok(entries) => {
            let found = entries.iter().filter(|e| e.found).count();
            println!(
                "certified {found}/{} traces at eps = {eps}, rho = {rho}",
                entries.len()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run(a) => run_mode(&a, Mode::Run),
        Cmd::Sweep(a) => run_mode(&a, Mode::Sweep),
        Cmd::Compare(a) => run_mode(&a, Mode::Compare),
        Cmd::Certify(a) => certify_mode(&a),
    }
}
