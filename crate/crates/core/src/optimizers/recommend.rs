//! Theory-guided hyperparameter recommendation from problem constants, the
//! target accuracy eps and the per-round local computation budget B.

use crate::error::{Error, Result};
use crate::estimators::ceil_sqrt;
use serde::{Deserialize, Serialize};

use super::RunConfig;

/// Recommended Algorithm-1 hyperparameters with the sufficiency flag for the
/// base-batch condition `b = Omega(K v 1/(sqrt(K) rho eps) v T/(P K))`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Recommendation {
    pub eta: f64,
    pub b: usize,
    pub k: usize,
    pub t: usize,
    pub s: usize,
    pub r: f64,
    /// False when the base batch violates the sufficiency condition; the run
    /// is still performed, the flag is a warning.
    pub batch_condition_ok: bool,
}

impl Recommendation {
    /// Instantiates a run configuration, leaving accounting options default.
    pub fn to_run_config(&self, master_seed: u64, budget: u64) -> RunConfig {
        RunConfig {
            eta: self.eta,
            batch: self.b,
            local_steps: self.k,
            inner_rounds: self.t,
            epochs: self.s,
            radius: self.r,
            master_seed,
            budget: Some(budget),
            ..RunConfig::default()
        }
    }
}

/// Computes the recommended hyperparameters:
/// `b = ceil(sqrt(B))`, `K = floor(B/b)`, `T = 1 + ceil(n/(B P))`,
/// `eta = c_eta * min(1/L, 1/(K zeta), sqrt(b/K)/L, sqrt(P b)/(sqrt(K T) L))`,
/// `r = c_r * eps`, `S = ceil(1 + f_gap/(eta K T eps^2))`.
#[allow(clippy::too_many_arguments)]
pub fn recommend_hyperparameters(
    l_smooth: f64,
    zeta: f64,
    rho: f64,
    eps: f64,
    budget: u64,
    workers: usize,
    n_total: usize,
    f_gap: f64,
    c_eta: f64,
    c_r: f64,
) -> Result<Recommendation> {
    if budget == 0 {
        return Err(Error::config("budget must be at least 1"));
    }
    if !(l_smooth > 0.0 && eps > 0.0 && f_gap >= 0.0 && c_eta > 0.0 && c_r >= 0.0) {
        return Err(Error::config(
            "need L > 0, eps > 0, f_gap >= 0, c_eta > 0, c_r >= 0",
        ));
    }
    if zeta < 0.0 || rho < 0.0 || workers == 0 || n_total == 0 {
        return Err(Error::config("zeta, rho >= 0 and P, n >= 1 required"));
    }
    let b = ceil_sqrt(budget as usize);
    let k = ((budget as usize) / b).max(1);
    let t = 1 + n_total.div_ceil(budget as usize * workers);

    let mut eta = (1.0 / l_smooth)
        .min((b as f64 / k as f64).sqrt() / l_smooth)
        .min((workers as f64 * b as f64).sqrt() / ((k as f64 * t as f64).sqrt() * l_smooth));
    if zeta > 0.0 {
        eta = eta.min(1.0 / (k as f64 * zeta));
    }
    eta *= c_eta;

    let r = c_r * eps;
    let s = (1.0 + f_gap / (eta * (k * t) as f64 * eps * eps)).ceil() as usize;

    let mut lower = k as f64;
    if rho * eps > 0.0 {
        lower = lower.max(1.0 / ((k as f64).sqrt() * rho * eps));
    }
    lower = lower.max(t as f64 / (workers * k) as f64);
    let batch_condition_ok = b as f64 >= lower;

    Ok(Recommendation {
        eta,
        b,
        k,
        t,
        s,
        r,
        batch_condition_ok,
    })
}
