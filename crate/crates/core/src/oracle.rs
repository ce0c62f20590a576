//! Minibatch sampling and gradient-pair evaluation with exact accounting.
//!
//! `budget_units` counts fresh samples processed — the accounting unit for
//! the per-round computation budget. `raw_grad_evals` counts individual
//! gradient evaluations, which is twice the sample count for a SARAH pair.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problems::{Problem, Sample, WorkerDataset};
use crate::rng::RngStream;
use crate::scalar::Float;

/// Run-wide computation cost counters. Concurrent increments are allowed;
/// totals are read at round boundaries.
#[derive(Debug, Default)]
pub struct CostLedger {
    budget_units: AtomicU64,
    raw_grad_evals: AtomicU64,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn charge(&self, budget_units: u64, raw_grad_evals: u64) {
        self.budget_units.fetch_add(budget_units, Ordering::Relaxed);
        self.raw_grad_evals.fetch_add(raw_grad_evals, Ordering::Relaxed);
    }

    pub fn budget_units(&self) -> u64 {
        self.budget_units.load(Ordering::Relaxed)
    }

    pub fn raw_grad_evals(&self) -> u64 {
        self.raw_grad_evals.load(Ordering::Relaxed)
    }
}

/// Draws `m` samples i.i.d. with replacement from one worker's dataset.
/// No cost is charged here; accounting happens at evaluation.
pub fn sample_minibatch(
    stream: &mut RngStream,
    dataset: &WorkerDataset,
    m: usize,
) -> Result<Vec<Sample>> {
    if dataset.samples.is_empty() {
        return Err(Error::protocol("cannot sample from an empty dataset"));
    }
    if m == 0 {
        return Err(Error::protocol("batch size must be at least 1"));
    }
    let n = dataset.samples.len();
    Ok((0..m).map(|_| dataset.samples[stream.index(n)]).collect())
}

/// Minibatch means over the SAME samples at `x_cur` and `x_ref`.
/// Charges |batch| budget units and 2|batch| raw gradient evaluations.
pub fn grad_pair<F: Float>(
    problem: &Problem<F>,
    batch: &[Sample],
    x_cur: &[F],
    x_ref: &[F],
    ledger: &CostLedger,
) -> Result<(Vec<F>, Vec<F>)> {
    linalg::check_dim(x_cur, problem.dim)?;
    linalg::check_dim(x_ref, problem.dim)?;
    let w = F::one() / F::from_usize(batch.len());
    let mut g = vec![F::zero(); problem.dim];
    let mut g_ref = vec![F::zero(); problem.dim];
    for &z in batch {
        problem.add_grad(x_cur, z, w, &mut g);
        problem.add_grad(x_ref, z, w, &mut g_ref);
    }
    ledger.charge(batch.len() as u64, 2 * batch.len() as u64);
    Ok((g, g_ref))
}

/// Minibatch mean gradient at a single point. Charges |batch| of each counter.
pub fn minibatch_gradient<F: Float>(
    problem: &Problem<F>,
    batch: &[Sample],
    x: &[F],
    ledger: &CostLedger,
) -> Result<Vec<F>> {
    linalg::check_dim(x, problem.dim)?;
    let w = F::one() / F::from_usize(batch.len());
    let mut g = vec![F::zero(); problem.dim];
    for &z in batch {
        problem.add_grad(x, z, w, &mut g);
    }
    ledger.charge(batch.len() as u64, batch.len() as u64);
    Ok(g)
}

/// Exact finite-sum gradient over worker `p`'s dataset.
/// Charges n/P budget units and n/P raw gradient evaluations.
pub fn full_local_gradient<F: Float>(
    problem: &Problem<F>,
    p: usize,
    x: &[F],
    ledger: &CostLedger,
) -> Result<Vec<F>> {
    let g = problem.worker_gradient(p, x)?;
    let n = problem.datasets[p].samples.len() as u64;
    ledger.charge(n, n);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::build_quartic_saddle;
    use crate::rng::{RngStream, StreamId, StreamPurpose};

    fn problem() -> Problem<f64> {
        build_quartic_saddle(4, 2, 40, 1.0, 1.0, 0.0, 0.5, 77).unwrap()
    }

    fn stream(seed: u64) -> RngStream {
        RngStream::new(seed, StreamId::new(StreamPurpose::LocalBatch))
    }

    #[test]
    fn singleton_dataset_always_returns_it() {
        let ds = WorkerDataset {
            worker_id: 0,
            samples: vec![Sample { index: 3 }],
        };
        let batch = sample_minibatch(&mut stream(1), &ds, 10).unwrap();
        assert!(batch.iter().all(|z| z.index == 3));
    }

    #[test]
    fn sampling_is_deterministic_per_stream() {
        let p = problem();
        let a = sample_minibatch(&mut stream(5), &p.datasets[0], 32).unwrap();
        let b = sample_minibatch(&mut stream(5), &p.datasets[0], 32).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn draw_frequencies_uniform_chi_square() {
        let p = problem();
        let n = p.datasets[0].samples.len();
        let draws = 100_000usize;
        let batch = sample_minibatch(&mut stream(9), &p.datasets[0], draws).unwrap();
        let mut counts = vec![0usize; n];
        let base = p.datasets[0].samples[0].index;
        for z in batch {
            counts[z.index - base] += 1;
        }
        let expect = draws as f64 / n as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect).powi(2) / expect)
            .sum();
        // chi-square with n-1 = 19 dof: mean 19, sd sqrt(38); 3-sigma bound
        let dof = (n - 1) as f64;
        assert!(chi2 < dof + 3.0 * (2.0 * dof).sqrt(), "chi2 = {chi2}");
    }

    #[test]
    fn pair_at_equal_points_is_identical() {
        let p = problem();
        let ledger = CostLedger::new();
        let x = vec![0.3, -0.2, 0.1, 0.5];
        let batch = sample_minibatch(&mut stream(2), &p.datasets[1], 8).unwrap();
        let (g, g_ref) = grad_pair(&p, &batch, &x, &x, &ledger).unwrap();
        assert_eq!(g, g_ref);
        assert_eq!(ledger.budget_units(), 8);
        assert_eq!(ledger.raw_grad_evals(), 16);
    }

    #[test]
    fn full_batch_pair_equals_worker_gradient() {
        let p = problem();
        let ledger = CostLedger::new();
        let x = vec![0.1, 0.2, -0.4, 0.3];
        let batch = p.datasets[0].samples.clone();
        let (g, _) = grad_pair(&p, &batch, &x, &x, &ledger).unwrap();
        let exact = p.worker_gradient(0, &x).unwrap();
        for i in 0..4 {
            assert!((g[i] - exact[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn minibatch_mean_is_unbiased_monte_carlo() {
        let p = problem();
        let ledger = CostLedger::new();
        let x = vec![0.5, -0.1, 0.2, 0.3];
        let exact = p.worker_gradient(0, &x).unwrap();
        let reps = 10_000usize;
        let b = 4usize;
        let mut mean = vec![0.0; 4];
        let mut stream = stream(33);
        // per-sample gradient variance for the 3-sigma band
        let mut var = vec![0.0; 4];
        for &z in &p.datasets[0].samples {
            let g = p.eval_grad(&x, z).unwrap();
            for i in 0..4 {
                var[i] += (g[i] - exact[i]).powi(2);
            }
        }
        for v in var.iter_mut() {
            *v /= p.datasets[0].samples.len() as f64;
        }
        for _ in 0..reps {
            let batch = sample_minibatch(&mut stream, &p.datasets[0], b).unwrap();
            let g = minibatch_gradient(&p, &batch, &x, &ledger).unwrap();
            for i in 0..4 {
                mean[i] += g[i] / reps as f64;
            }
        }
        for i in 0..4 {
            let sigma = (var[i] / (b * reps) as f64).sqrt();
            assert!(
                (mean[i] - exact[i]).abs() <= 3.0 * sigma + 1e-12,
                "coord {i}: |{} - {}| > 3*{sigma}",
                mean[i],
                exact[i]
            );
        }
    }

    #[test]
    fn full_local_gradient_charges_n_over_p() {
        let p = problem();
        let ledger = CostLedger::new();
        let x = vec![0.0; 4];
        let g = full_local_gradient(&p, 0, &x, &ledger).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
        assert_eq!(ledger.budget_units(), 20);
        assert_eq!(ledger.raw_grad_evals(), 20);
    }

    #[test]
    fn empty_dataset_rejected() {
        let ds = WorkerDataset {
            worker_id: 0,
            samples: vec![],
        };
        assert!(sample_minibatch(&mut stream(0), &ds, 1).is_err());
    }
}
