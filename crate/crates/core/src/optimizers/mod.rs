//! Optimizer drivers: BVR-L-PSGD and its baseline family, plus the
//! theory-guided hyperparameter recommender.

mod baselines;
mod bvr;
mod recommend;

pub use baselines::{run_local_sgd, run_minibatch_sgd, run_noisy_minibatch_sgd};
pub use bvr::{run_bvr_l_psgd, run_bvr_l_sgd, run_minibatch_sarah};
pub use recommend::{recommend_hyperparameters, Recommendation};

use crate::error::{Error, Result};
use crate::problems::Problem;
use crate::scalar::Float;
use serde::{Deserialize, Serialize};

/// Initial point selection.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub enum InitKind {
    Origin,
    Point(Vec<f64>),
    /// Componentwise Unif[-scale, scale], drawn from the init-weights stream.
    UniformSmall(f64),
}

/// All Algorithm-1 hyperparameters plus accounting options.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunConfig {
    /// Step size eta.
    pub eta: f64,
    /// Base batch size b.
    pub batch: usize,
    /// Local steps K.
    pub local_steps: usize,
    /// Inner communication rounds T per epoch.
    pub inner_rounds: usize,
    /// Outer epochs S.
    pub epochs: usize,
    /// Perturbation radius r.
    pub radius: f64,
    pub master_seed: u64,
    /// Declared local computation budget, for accounting assertions.
    pub budget: Option<u64>,
    /// Checkpoint every this many local steps (x-tilde iterates).
    pub record_every: usize,
    /// Use whole local datasets instead of sampled minibatches.
    pub full_batch: bool,
    pub init: InitKind,
    /// Track the smallest Hessian eigenvalue per round (expensive).
    pub track_lambda_min: bool,
    /// Emit the estimator-deviation probe series (expensive).
    pub deviation_probe: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            eta: 0.1,
            batch: 1,
            local_steps: 1,
            inner_rounds: 1,
            epochs: 1,
            radius: 0.0,
            master_seed: 0,
            budget: None,
            record_every: 1,
            full_batch: false,
            init: InitKind::Origin,
            track_lambda_min: false,
            deviation_probe: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("eta must be positive and finite"));
        }
        if self.batch < 1 || self.local_steps < 1 || self.inner_rounds < 1 || self.epochs < 1 {
            return Err(Error::config("b, K, T, S must all be at least 1"));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::config("r must be nonnegative and finite"));
        }
        if self.record_every < 1 {
            return Err(Error::config("record_every must be at least 1"));
        }
        if let Some(b) = self.budget {
            let kb = (self.local_steps * self.batch) as u64;
            if kb > b {
                return Err(Error::config(format!(
                    "Kb = {kb} exceeds the declared budget {b}"
                )));
            }
        }
        Ok(())
    }

    /// Declared per-round budget, defaulting to Kb.
    pub fn effective_budget(&self) -> u64 {
        self.budget
            .unwrap_or((self.local_steps * self.batch) as u64)
    }

    /// Headline communication rounds of a full run.
    pub fn total_rounds(&self) -> u64 {
        (self.inner_rounds * self.epochs) as u64
    }
}

/// Per-round metrics and counters. Counters are cumulative run totals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub round: u64,
    #[serde(with = "crate::serde_util::nan_null")]
    pub train_loss: f64,
    #[serde(with = "crate::serde_util::nan_null")]
    pub train_grad_norm: f64,
    /// NaN for problems without classification semantics.
    #[serde(with = "crate::serde_util::nan_null")]
    pub train_acc: f64,
    #[serde(with = "crate::serde_util::nan_null")]
    pub test_loss: f64,
    #[serde(with = "crate::serde_util::nan_null")]
    pub test_grad_norm: f64,
    #[serde(with = "crate::serde_util::nan_null")]
    pub test_acc: f64,
    /// NaN unless lambda-min tracking is enabled.
    #[serde(with = "crate::serde_util::nan_null")]
    pub lambda_min: f64,
    pub budget_units: u64,
    pub raw_grad_evals: u64,
    pub comm_events: u64,
    pub comm_rounds: u64,
}

/// One retained second-order-stationarity candidate (an x-tilde iterate).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Global local-step index I(k, t, s); 0 is the start point.
    pub iter: u64,
    pub x_tilde: Vec<f64>,
}

/// Estimator-deviation probe sample (optional instrumentation).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeviationPoint {
    pub iter: u64,
    /// |v - grad f(x)| at the step.
    pub deviation: f64,
    /// zeta |x - anchor| + L |x - anchor| / sqrt(b) reference envelope.
    pub envelope: f64,
    /// True at anchor steps (k = 0 of t = 0), where the deviation is 0.
    pub is_anchor: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trace {
    pub algorithm: String,
    pub records: Vec<TraceRecord>,
    pub checkpoints: Vec<Checkpoint>,
    pub deviation: Vec<DeviationPoint>,
    /// Set when the run stopped early (non-finite iterate, radius violation).
    pub aborted: Option<String>,
}

impl Trace {
    pub fn new(algorithm: impl Into<String>) -> Self {
        Trace {
            algorithm: algorithm.into(),
            records: Vec::new(),
            checkpoints: Vec::new(),
            deviation: Vec::new(),
            aborted: None,
        }
    }

    pub fn final_record(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

/// The algorithm family of Table 1 that this artifact implements.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    BvrLPsgd,
    BvrLSgd,
    MinibatchSarah,
    MinibatchSgd,
    NoisyMinibatchSgd,
    LocalSgd,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::BvrLPsgd => "bvr-l-psgd",
            Algorithm::BvrLSgd => "bvr-l-sgd",
            Algorithm::MinibatchSarah => "minibatch-sarah",
            Algorithm::MinibatchSgd => "minibatch-sgd",
            Algorithm::NoisyMinibatchSgd => "noisy-minibatch-sgd",
            Algorithm::LocalSgd => "local-sgd",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "bvr-l-psgd" => Algorithm::BvrLPsgd,
            "bvr-l-sgd" => Algorithm::BvrLSgd,
            "minibatch-sarah" => Algorithm::MinibatchSarah,
            "minibatch-sgd" => Algorithm::MinibatchSgd,
            "noisy-minibatch-sgd" => Algorithm::NoisyMinibatchSgd,
            "local-sgd" => Algorithm::LocalSgd,
            other => return Err(Error::config(format!("unknown algorithm '{other}'"))),
        })
    }

    /// Whether the perturbation radius r is meaningful for this algorithm.
    pub fn uses_radius(&self) -> bool {
        matches!(self, Algorithm::BvrLPsgd | Algorithm::NoisyMinibatchSgd)
    }

    pub fn run<F: Float>(&self, problem: &Problem<F>, cfg: &RunConfig) -> Result<Trace> {
        match self {
            Algorithm::BvrLPsgd => run_bvr_l_psgd(problem, cfg),
            Algorithm::BvrLSgd => run_bvr_l_sgd(problem, cfg),
            Algorithm::MinibatchSarah => run_minibatch_sarah(problem, cfg),
            Algorithm::MinibatchSgd => run_minibatch_sgd(problem, cfg),
            Algorithm::NoisyMinibatchSgd => run_noisy_minibatch_sgd(problem, cfg),
            Algorithm::LocalSgd => run_local_sgd(problem, cfg),
        }
    }
}

/// Shared per-round metric collection. Diagnostics never touch the budget
/// ledger (observer channel).
pub(crate) fn collect_record<F: Float>(
    problem: &Problem<F>,
    x: &[F],
    round: u64,
    budget_units: u64,
    raw_grad_evals: u64,
    comm_events: u64,
    comm_rounds: u64,
    track_lambda_min: bool,
) -> TraceRecord {
    let train_loss = problem.global_loss(x).map(|v| v.to_f64()).unwrap_or(f64::NAN);
    let grad = problem.global_gradient(x);
    let train_grad_norm = grad
        .map(|g| crate::linalg::norm(&g).to_f64())
        .unwrap_or(f64::NAN);
    let train_acc = problem.train_accuracy(x).unwrap_or(f64::NAN);
    let (test_loss, test_grad_norm, test_acc) = problem
        .test_metrics(x)
        .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    let lambda_min = if track_lambda_min {
        crate::diagnostics::min_eigenvalue(problem, x, 1e-6)
            .map(|r| r.lambda_min)
            .unwrap_or(f64::NAN)
    } else {
        f64::NAN
    };
    TraceRecord {
        round,
        train_loss,
        train_grad_norm,
        train_acc,
        test_loss,
        test_grad_norm,
        test_acc,
        lambda_min,
        budget_units,
        raw_grad_evals,
        comm_events,
        comm_rounds,
    }
}

/// Resolves the configured start point x-tilde-0.
pub(crate) fn initial_point<F: Float>(
    problem: &Problem<F>,
    cfg: &RunConfig,
) -> Result<Vec<F>> {
    use crate::rng::{RngStream, StreamId, StreamPurpose};
    Ok(match &cfg.init {
        InitKind::Origin => vec![F::zero(); problem.dim],
        InitKind::Point(p) => {
            if p.len() != problem.dim {
                return Err(Error::DimensionMismatch {
                    expected: problem.dim,
                    got: p.len(),
                });
            }
            p.iter().map(|&v| F::from_f64(v)).collect()
        }
        InitKind::UniformSmall(scale) => {
            let mut s = RngStream::new(cfg.master_seed, StreamId::new(StreamPurpose::InitWeights));
            (0..problem.dim)
                .map(|_| F::from_f64(s.uniform_in(-scale, *scale)))
                .collect()
        }
    })
}
