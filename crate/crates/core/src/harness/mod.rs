//! Experiment harness: declarative TOML configuration, grid x trial
//! orchestration on a work-stealing pool, tuning selection, and persistence
//! (raw/aggregate/plot CSVs, manifest, trace files, certification reports).
//!
//! Determinism contract: job expansion order is fixed, every run draws only
//! from counter-based streams keyed by its derived trial seed, and all file
//! content is written in job order — so outputs are byte-identical across
//! thread counts.

mod output;
mod tune;

pub use output::{
    certify, fmt_float, AggRow, CertifyEntry, Manifest, RunSummary, AGG_HEADER, CRITERIA,
    PLOT_HEADER, RAW_HEADER,
};
use output::write_outputs;
pub use tune::{tune_select, Selection, SelectionRule};

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizers::{Algorithm, InitKind, RunConfig, Trace};
use crate::problems::{
    build_classification, build_quartic_saddle, ClassificationSpec, ClassifierKind, Problem,
};
use crate::rng::derive_seed;

/// Top-level declarative experiment description.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tuning: Option<TuningSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// "quartic-saddle" | "softmax-regression" | "mlp-softplus"
    pub kind: String,
    pub workers: usize,
    pub n_total: usize,
    #[serde(default)]
    pub seed: u64,
    // quartic-saddle family
    #[serde(default = "d_dim")]
    pub dim: usize,
    #[serde(default = "d_one")]
    pub lambda_neg: f64,
    #[serde(default = "d_one")]
    pub gamma: f64,
    #[serde(default)]
    pub zeta: f64,
    #[serde(default)]
    pub sample_noise: f64,
    // synthetic classification family
    #[serde(default = "d_features")]
    pub n_features: usize,
    #[serde(default = "d_classes")]
    pub n_classes: usize,
    #[serde(default = "d_sep")]
    pub cluster_sep: f64,
    #[serde(default = "d_one")]
    pub spread: f64,
    #[serde(default = "d_train_fraction")]
    pub train_fraction: f64,
    /// Label-skew dial: dominant-class share per worker.
    #[serde(default = "d_q")]
    pub q: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub algorithms: Vec<String>,
    pub eta: f64,
    /// Base batch b.
    pub b: usize,
    /// Local steps K.
    pub k: usize,
    /// Inner rounds T per epoch.
    pub t: usize,
    /// Total communication rounds; epochs = ceil(rounds_budget / t).
    pub rounds_budget: u64,
    #[serde(default)]
    pub r: f64,
    pub master_seed: u64,
    #[serde(default = "d_trials")]
    pub n_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    /// Checkpoint thinning; 0 means once per round (every K local steps).
    #[serde(default)]
    pub record_every: usize,
    #[serde(default)]
    pub full_batch: bool,
    /// Componentwise Unif[-s, s] start; 0 starts at the origin.
    #[serde(default)]
    pub init_scale: f64,
    #[serde(default)]
    pub track_lambda_min: bool,
    #[serde(default)]
    pub deviation_probe: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningSection {
    pub eta_grid: Vec<f64>,
    #[serde(default)]
    pub r_grid: Vec<f64>,
    #[serde(default = "d_rule")]
    pub selection_rule: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "d_out_dir")]
    pub dir: String,
    /// Save per-run trace JSON (required by the certify subcommand).
    #[serde(default)]
    pub save_traces: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: d_out_dir(),
            save_traces: false,
        }
    }
}

fn d_dim() -> usize {
    20
}
fn d_one() -> f64 {
    1.0
}
fn d_features() -> usize {
    10
}
fn d_classes() -> usize {
    10
}
fn d_sep() -> f64 {
    3.0
}
fn d_train_fraction() -> f64 {
    0.8
}
fn d_q() -> f64 {
    0.35
}
fn d_trials() -> usize {
    1
}
fn d_rule() -> String {
    "max-min-train-accuracy".into()
}
fn d_out_dir() -> String {
    "out".into()
}

impl ExperimentConfig {
    /// Parses TOML text and applies `--set key.path=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Value =
            toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
        for ov in overrides {
            apply_override(&mut doc, ov)?;
        }
        let cfg: ExperimentConfig = doc
            .try_into()
            .map_err(|e| Error::Parse(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical serialized form, used for hashing and the manifest.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.algorithms.is_empty() {
            return Err(Error::config("run.algorithms must not be empty"));
        }
        for a in &self.run.algorithms {
            Algorithm::parse(a)?;
        }
        if self.run.n_trials < 1 {
            return Err(Error::config("run.n_trials must be at least 1"));
        }
        if self.run.t < 1 || self.run.rounds_budget < 1 {
            return Err(Error::config("run.t and run.rounds_budget must be at least 1"));
        }
        if let Some(tuning) = &self.tuning {
            if tuning.eta_grid.is_empty() {
                return Err(Error::config("tuning.eta_grid must not be empty"));
            }
            SelectionRule::parse(&tuning.selection_rule)?;
        }
        // every grid point must yield a valid run configuration
        for &eta in self.eta_grid() {
            for &r in self.r_grid() {
                self.run_config(eta, r, 0)?.validate()?;
            }
        }
        Ok(())
    }

    pub fn eta_grid(&self) -> &[f64] {
        match &self.tuning {
            Some(t) => &t.eta_grid,
            None => std::slice::from_ref(&self.run.eta),
        }
    }

    pub fn r_grid(&self) -> &[f64] {
        match &self.tuning {
            Some(t) if !t.r_grid.is_empty() => &t.r_grid,
            _ => std::slice::from_ref(&self.run.r),
        }
    }

    pub fn selection_rule(&self) -> SelectionRule {
        self.tuning
            .as_ref()
            .and_then(|t| SelectionRule::parse(&t.selection_rule).ok())
            .unwrap_or(SelectionRule::MaxMinTrainAccuracy)
    }

    /// Outer epochs implied by the total-rounds budget.
    pub fn epochs(&self) -> usize {
        (self.run.rounds_budget as usize).div_ceil(self.run.t)
    }

    /// Instantiates the driver configuration of one grid point and trial.
    pub fn run_config(&self, eta: f64, r: f64, trial: usize) -> Result<RunConfig> {
        let record_every = if self.run.record_every == 0 {
            self.run.k
        } else {
            self.run.record_every
        };
        Ok(RunConfig {
            eta,
            batch: self.run.b,
            local_steps: self.run.k,
            inner_rounds: self.run.t,
            epochs: self.epochs(),
            radius: r,
            master_seed: derive_seed(self.run.master_seed, trial as u64),
            budget: self.run.budget,
            record_every,
            full_batch: self.run.full_batch,
            init: if self.run.init_scale > 0.0 {
                InitKind::UniformSmall(self.run.init_scale)
            } else {
                InitKind::Origin
            },
            track_lambda_min: self.run.track_lambda_min,
            deviation_probe: self.run.deviation_probe,
        })
    }
}

/// Applies one `key.path=value` override onto a parsed TOML document.
fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override '{spec}' is not KEY=VALUE")))?;
    let parsed: toml::Value = toml::from_str(&format!("v = {raw}"))
        .map_err(|e| Error::Parse(format!("override '{spec}': {e}")))?;
    let value = parsed["v"].clone();
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        node = node
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("override '{spec}': not a table at '{key}'")))?
            .entry(key.to_string())
            .or_insert(toml::Value::Table(Default::default()));
    }
    node.as_table_mut()
        .ok_or_else(|| Error::config(format!("override '{spec}': terminal node is not a table")))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

/// Builds the configured problem (always at f64 precision in the harness).
pub fn build_problem(pc: &ProblemConfig) -> Result<Problem<f64>> {
    match pc.kind.as_str() {
        "quartic-saddle" => build_quartic_saddle(
            pc.dim,
            pc.workers,
            pc.n_total,
            pc.lambda_neg,
            pc.gamma,
            pc.zeta,
            pc.sample_noise,
            pc.seed,
        ),
        "softmax-regression" | "mlp-softplus" => {
            let classifier = if pc.kind == "softmax-regression" {
                ClassifierKind::Softmax
            } else {
                ClassifierKind::Mlp
            };
            build_classification(
                &ClassificationSpec {
                    classifier,
                    n_total: pc.n_total,
                    n_features: pc.n_features,
                    n_classes: pc.n_classes,
                    cluster_sep: pc.cluster_sep,
                    spread: pc.spread,
                    train_fraction: pc.train_fraction,
                    workers: pc.workers,
                    q: pc.q,
                },
                pc.seed,
            )
        }
        other => Err(Error::config(format!("unknown problem kind '{other}'"))),
    }
}

/// One executable unit of the experiment grid.
#[derive(Clone, Debug)]
pub struct Job {
    pub algorithm: Algorithm,
    pub eta: f64,
    pub r: f64,
    pub trial: usize,
}

impl Job {
    /// Stable file stem for trace persistence.
    pub fn stem(&self, eta_idx: usize, r_idx: usize) -> String {
        format!(
            "{}_e{eta_idx}_r{r_idx}_t{trial}",
            self.algorithm.name(),
            trial = self.trial
        )
    }
}

/// Fixed job expansion order: algorithm, then eta, then r, then trial.
pub fn expand_jobs(cfg: &ExperimentConfig) -> Result<Vec<(Job, String)>> {
    let mut jobs = Vec::new();
    for name in &cfg.run.algorithms {
        let algorithm = Algorithm::parse(name)?;
        for (ei, &eta) in cfg.eta_grid().iter().enumerate() {
            for (ri, &r) in cfg.r_grid().iter().enumerate() {
                for trial in 0..cfg.run.n_trials {
                    let job = Job {
                        algorithm,
                        eta,
                        r,
                        trial,
                    };
                    let stem = job.stem(ei, ri);
                    jobs.push((job, stem));
                }
            }
        }
    }
    Ok(jobs)
}

/// Output mode of the top-level subcommands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// raw + aggregate CSV + manifest (+ traces when configured).
    Run,
    /// Run outputs plus tuning selection.
    Sweep,
    /// Sweep outputs plus per-criterion plot CSVs at the selected points.
    Compare,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Run => "run",
            Mode::Sweep => "sweep",
            Mode::Compare => "compare",
        }
    }
}

/// Executes the full experiment and writes all output files under `out_dir`.
/// Results are collected in job order regardless of scheduling, so the
/// written bytes are independent of `threads`.
pub fn execute(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    threads: usize,
    mode: Mode,
) -> Result<RunSummary> {
    cfg.validate()?;
    let problem = build_problem(&cfg.problem)?;
    let jobs = expand_jobs(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    let traces: Vec<Trace> = pool.install(|| {
        jobs.par_iter()
            .map(|(job, _)| run_job(&problem, cfg, job))
            .collect::<Result<Vec<_>>>()
    })?;
    write_outputs(cfg, out_dir, threads, mode, &jobs, &traces)
}

fn run_job(problem: &Problem<f64>, cfg: &ExperimentConfig, job: &Job) -> Result<Trace> {
    let rc = cfg.run_config(job.eta, job.r, job.trial)?;
    job.algorithm.run(problem, &rc)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const TINY_QUARTIC: &str = r#"
[problem]
kind = "quartic-saddle"
workers = 2
n_total = 8
dim = 4
sample_noise = 0.3
seed = 5

[run]
algorithms = ["bvr-l-psgd", "minibatch-sgd"]
eta = 0.05
b = 2
k = 4
t = 2
rounds_budget = 4
master_seed = 11
n_trials = 2
init_scale = 0.2
"#;

    #[test]
    fn parse_and_validate_roundtrip() {
        let cfg = ExperimentConfig::from_toml(TINY_QUARTIC, &[]).unwrap();
        assert_eq!(cfg.run.algorithms.len(), 2);
        assert_eq!(cfg.epochs(), 2);
        let text = cfg.canonical_toml().unwrap();
        let again = ExperimentConfig::from_toml(&text, &[]).unwrap();
        assert_eq!(cfg.canonical_toml().unwrap(), again.canonical_toml().unwrap());
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = ExperimentConfig::from_toml(
            TINY_QUARTIC,
            &[
                "run.eta=0.5".into(),
                "problem.dim=6".into(),
                "output.dir=\"elsewhere\"".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.run.eta, 0.5);
        assert_eq!(cfg.problem.dim, 6);
        assert_eq!(cfg.output.dir, "elsewhere");
    }

    #[test]
    fn bad_override_and_empty_algorithms_rejected() {
        assert!(ExperimentConfig::from_toml(TINY_QUARTIC, &["run.eta".into()]).is_err());
        assert!(ExperimentConfig::from_toml(TINY_QUARTIC, &["run.algorithms=[]".into()]).is_err());
        assert!(
            ExperimentConfig::from_toml(TINY_QUARTIC, &["run.algorithms=[\"sgd9\"]".into()])
                .is_err()
        );
    }

    #[test]
    fn unknown_field_is_a_parse_error_with_field_name() {
        let bad = TINY_QUARTIC.replace("init_scale", "initt_scale");
        let err = ExperimentConfig::from_toml(&bad, &[]).unwrap_err();
        assert!(err.to_string().contains("initt_scale"), "{err}");
    }

    #[test]
    fn job_expansion_order_is_stable() {
        let cfg = ExperimentConfig::from_toml(
            TINY_QUARTIC,
            &["tuning.eta_grid=[0.1, 0.2]".into(), "tuning.r_grid=[0.0]".into()],
        )
        .unwrap();
        let jobs = expand_jobs(&cfg).unwrap();
        // 2 algorithms x 2 eta x 1 r x 2 trials
        assert_eq!(jobs.len(), 8);
        assert_eq!(jobs[0].1, "bvr-l-psgd_e0_r0_t0");
        assert_eq!(jobs[1].1, "bvr-l-psgd_e0_r0_t1");
        assert_eq!(jobs[2].1, "bvr-l-psgd_e1_r0_t0");
        assert_eq!(jobs[7].1, "minibatch-sgd_e1_r0_t1");
    }

    #[test]
    fn grid_point_validation_catches_bad_eta() {
        let err =
            ExperimentConfig::from_toml(TINY_QUARTIC, &["tuning.eta_grid=[0.1, -1.0]".into()])
                .unwrap_err();
        assert!(err.to_string().contains("eta"), "{err}");
    }
}
