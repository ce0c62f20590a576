//! Bias-variance reduced estimator state machines and the ball perturbation.
//!
//! The server-level recursion advances once per communication round; the
//! local-level SARAH recursion advances once per local step of the single
//! sampled worker. Both collapse to exact gradients under full batches, which
//! the tests pin via telescoping identities.

use crate::error::{Error, Result};
use crate::linalg;
use crate::oracle::{self, CostLedger};
use crate::problems::{Problem, Sample};
use crate::rng::RngStream;
use crate::scalar::Float;

/// Server-level estimator `v` with its round index.
#[derive(Clone, Debug)]
pub struct ServerEstimator<F: Float> {
    pub v: Vec<F>,
    pub t_index: usize,
}

impl<F: Float> ServerEstimator<F> {
    /// Round 0: `v` is the average of exact local full gradients.
    pub fn from_full_gradients(per_worker: &[Vec<F>]) -> Result<Self> {
        if per_worker.is_empty() {
            return Err(Error::protocol("no worker gradients supplied"));
        }
        let d = per_worker[0].len();
        let mut v = vec![F::zero(); d];
        let w = F::one() / F::from_usize(per_worker.len());
        for g in per_worker {
            linalg::check_dim(g, d)?;
            linalg::axpy(w, g, &mut v);
        }
        Ok(ServerEstimator { v, t_index: 0 })
    }

    /// Rounds t >= 1: `v <- v + (1/P) sum_p (g_p - g_p_ref)`.
    pub fn round_update(&mut self, pairs: &[(Vec<F>, Vec<F>)], workers: usize) -> Result<()> {
        if pairs.len() != workers {
            return Err(Error::protocol(format!(
                "expected {workers} worker pairs, got {}",
                pairs.len()
            )));
        }
        let w = F::one() / F::from_usize(workers);
        for (g, g_ref) in pairs {
            linalg::check_dim(g, self.v.len())?;
            linalg::check_dim(g_ref, self.v.len())?;
            for i in 0..self.v.len() {
                self.v[i] += w * (g[i] - g_ref[i]);
            }
        }
        self.t_index += 1;
        Ok(())
    }

    /// Applies an already-averaged pair difference (a gather output):
    /// `v <- v + mean_diff`. Arithmetically equal to [`Self::round_update`]
    /// when `mean_diff` is the average of the per-worker differences.
    pub fn advance(&mut self, mean_diff: &[F]) -> Result<()> {
        linalg::check_dim(mean_diff, self.v.len())?;
        for i in 0..self.v.len() {
            self.v[i] += mean_diff[i];
        }
        self.t_index += 1;
        Ok(())
    }
}

/// Local-level SARAH estimator with its previous iterate anchor.
#[derive(Clone, Debug)]
pub struct LocalEstimator<F: Float> {
    pub v: Vec<F>,
    pub prev_x: Vec<F>,
    pub k_index: usize,
}

impl<F: Float> LocalEstimator<F> {
    /// k = 0: local estimator starts at the server estimator.
    pub fn from_server(server_v: &[F], x: &[F]) -> Self {
        LocalEstimator {
            v: server_v.to_vec(),
            prev_x: x.to_vec(),
            k_index: 0,
        }
    }
}

/// Batch source for one local step.
pub enum BatchMode {
    /// Draw `b_k` samples i.i.d. with replacement.
    Sampled,
    /// Use the whole local dataset (deterministic mean).
    Full,
}

/// Per-local-step batch size: the large batch `ceil(sqrt(K)) * b` at steps
/// `k = 0 mod ceil(sqrt(K))`, the base batch `b` otherwise.
pub fn batch_schedule(k: usize, local_steps: usize, b: usize) -> usize {
    let cs = ceil_sqrt(local_steps);
    if k % cs == 0 {
        cs * b
    } else {
        b
    }
}

/// Closed form of `sum_k b_k` over `k = 0..K-1`:
/// `b * (K + (ceil(sqrt(K)) - 1) * ceil(K / ceil(sqrt(K))))`.
pub fn batch_schedule_total(local_steps: usize, b: usize) -> usize {
    let cs = ceil_sqrt(local_steps);
    b * (local_steps + (cs - 1) * local_steps.div_ceil(cs))
}

pub fn ceil_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r < n {
        r += 1;
    }
    while r > 1 && (r - 1) * (r - 1) >= n {
        r -= 1;
    }
    r.max(1)
}

/// One local SARAH step: draws the scheduled batch from worker `p`'s dataset,
/// forms the gradient pair at `(x_cur, prev_x)` and applies the recursion.
/// At k = 0 the pair is still drawn and charged (the loop body runs for every
/// k) but the estimator keeps the server value. Returns the batch size used.
#[allow(clippy::too_many_arguments)]
pub fn local_step<F: Float>(
    est: &mut LocalEstimator<F>,
    problem: &Problem<F>,
    p: usize,
    k: usize,
    x_cur: &[F],
    b: usize,
    local_steps: usize,
    mode: BatchMode,
    ledger: &CostLedger,
    stream: &mut RngStream,
) -> Result<usize> {
    let dataset = &problem.datasets[p];
    let batch: Vec<Sample> = match mode {
        BatchMode::Sampled => {
            let b_k = batch_schedule(k, local_steps, b);
            oracle::sample_minibatch(stream, dataset, b_k)?
        }
        BatchMode::Full => dataset.samples.clone(),
    };
    let used = batch.len();
    let (g, g_ref) = oracle::grad_pair(problem, &batch, x_cur, &est.prev_x, ledger)?;
    if k >= 1 {
        for i in 0..est.v.len() {
            est.v[i] += g[i] - g_ref[i];
        }
    }
    est.prev_x.copy_from_slice(x_cur);
    est.k_index = k;
    Ok(used)
}

/// Uniform draw from the Euclidean ball of radius `r`: Gaussian direction,
/// normalized, scaled by `r * U^(1/d)`.
pub fn sample_ball<F: Float>(stream: &mut RngStream, d: usize, r: f64) -> Vec<F> {
    if r == 0.0 {
        return vec![F::zero(); d];
    }
    loop {
        let g: Vec<f64> = (0..d).map(|_| stream.standard_normal()).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-300 {
            let scale = r * stream.uniform_f64().powf(1.0 / d as f64) / norm;
            return g.iter().map(|&v| F::from_f64(v * scale)).collect();
        }
    }
}

/// The perturbed update of one local step: `x_tilde = x - eta v`, then
/// `x_next = x_tilde + eta xi` with `xi ~ Unif(B_r)`. Returns both; `x_tilde`
/// is the second-order-stationarity candidate.
pub fn perturbed_update<F: Float>(
    x: &[F],
    v: &[F],
    eta: F,
    r: f64,
    stream: &mut RngStream,
) -> Result<(Vec<F>, Vec<F>)> {
    if !linalg::is_finite(v) {
        return Err(Error::NonFinite {
            context: "estimator v in perturbed_update".into(),
        });
    }
    let mut x_tilde = x.to_vec();
    linalg::axpy(-eta, v, &mut x_tilde);
    let xi = sample_ball::<F>(stream, x.len(), r);
    let mut x_next = x_tilde.clone();
    linalg::axpy(eta, &xi, &mut x_next);
    Ok((x_tilde, x_next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::build_quartic_saddle;
    use crate::rng::{StreamId, StreamPurpose};

    fn stream(seed: u64) -> RngStream {
        RngStream::new(seed, StreamId::new(StreamPurpose::LocalPerturbation))
    }

    #[test]
    fn schedule_hand_example_k5_b2() {
        // ceil(sqrt(5)) = 3 -> (6, 2, 2, 6, 2)
        let got: Vec<usize> = (0..5).map(|k| batch_schedule(k, 5, 2)).collect();
        assert_eq!(got, vec![6, 2, 2, 6, 2]);
        assert_eq!(batch_schedule_total(5, 2), 18);
    }

    #[test]
    fn schedule_k1_is_base_batch() {
        assert_eq!(batch_schedule(0, 1, 7), 7);
        assert_eq!(batch_schedule_total(1, 7), 7);
    }

    #[test]
    fn schedule_closed_form_matches_direct_sum() {
        for &k in &[1usize, 4, 5, 16, 64] {
            for &b in &[1usize, 2, 16] {
                let direct: usize = (0..k).map(|i| batch_schedule(i, k, b)).sum();
                assert_eq!(direct, batch_schedule_total(k, b), "K={k} b={b}");
            }
        }
    }

    #[test]
    fn ball_radius_zero_is_zero_vector() {
        let xi = sample_ball::<f64>(&mut stream(1), 5, 0.0);
        assert_eq!(xi, vec![0.0; 5]);
    }

    #[test]
    fn ball_draws_inside_radius() {
        let mut s = stream(2);
        for _ in 0..1000 {
            let xi = sample_ball::<f64>(&mut s, 4, 2.5);
            assert!(linalg::norm(&xi) <= 2.5 + 1e-12);
        }
    }

    #[test]
    fn ball_moments_match_closed_form() {
        // E |xi|^2 = d/(d+2) r^2 for Unif(B_r^d); d = 3, r = 1 -> 0.6
        let d = 3;
        let n = 100_000;
        let mut s = stream(3);
        let mut mean = vec![0.0; d];
        let mut m2 = 0.0;
        for _ in 0..n {
            let xi = sample_ball::<f64>(&mut s, d, 1.0);
            for i in 0..d {
                mean[i] += xi[i] / n as f64;
            }
            m2 += linalg::dot(&xi, &xi) / n as f64;
        }
        // per-coordinate variance of a uniform ball draw is r^2/(d+2) = 0.2
        let coord_sigma = (0.2_f64 / n as f64).sqrt();
        for (i, m) in mean.iter().enumerate() {
            assert!(m.abs() < 3.0 * coord_sigma, "coord {i} mean {m}");
        }
        // Var(|xi|^2) = E|xi|^4 - (E|xi|^2)^2 = d/(d+4) - (d/(d+2))^2
        let var_m2 = d as f64 / (d as f64 + 4.0) - (0.6_f64).powi(2);
        assert!((m2 - 0.6).abs() < 3.0 * (var_m2 / n as f64).sqrt(), "m2 = {m2}");
    }

    #[test]
    fn server_t0_is_mean_of_full_gradients() {
        let per = vec![vec![1.0, 3.0], vec![3.0, 5.0]];
        let est = ServerEstimator::from_full_gradients(&per).unwrap();
        assert_eq!(est.v, vec![2.0, 4.0]);
    }

    #[test]
    fn server_update_with_equal_pairs_is_identity() {
        let mut est = ServerEstimator {
            v: vec![1.0, -2.0],
            t_index: 0,
        };
        let pairs = vec![
            (vec![0.5, 0.5], vec![0.5, 0.5]),
            (vec![-1.0, 2.0], vec![-1.0, 2.0]),
        ];
        est.round_update(&pairs, 2).unwrap();
        assert_eq!(est.v, vec![1.0, -2.0]);
        assert_eq!(est.t_index, 1);
    }

    #[test]
    fn server_update_rejects_missing_contribution() {
        let mut est = ServerEstimator {
            v: vec![0.0],
            t_index: 0,
        };
        assert!(est.round_update(&[(vec![1.0], vec![0.0])], 2).is_err());
    }

    #[test]
    fn full_batch_local_telescoping_is_exact() {
        // P = 1, full batches: after every step v equals grad f at the point
        // where the last pair was formed.
        let p = build_quartic_saddle::<f64>(3, 1, 4, 1.0, 1.0, 0.0, 0.4, 5).unwrap();
        let ledger = CostLedger::new();
        let mut x = vec![0.4, -0.2, 0.3];
        let v0 = p.worker_gradient(0, &x).unwrap();
        let mut est = LocalEstimator::from_server(&v0, &x);
        let mut s = stream(7);
        for k in 0..6 {
            local_step(
                &mut est, &p, 0, k, &x, 2, 6, BatchMode::Full, &ledger, &mut s,
            )
            .unwrap();
            let exact = p.worker_gradient(0, &x).unwrap();
            let err = linalg::max_abs_diff(&est.v, &exact);
            assert!(err < 1e-10, "step {k}: {err}");
            // plain gradient step to move somewhere new
            linalg::axpy(-0.05, &est.v.clone(), &mut x);
        }
    }

    #[test]
    fn conditional_unbiasedness_monte_carlo() {
        // E[v_k - v_{k-1} | history] = grad f_p(x_k) - grad f_p(x_{k-1})
        let p = build_quartic_saddle::<f64>(3, 2, 24, 1.0, 1.0, 0.0, 0.6, 9).unwrap();
        let ledger = CostLedger::new();
        let x_prev = vec![0.3, 0.1, -0.2];
        let x_cur = vec![0.25, 0.15, -0.1];
        let expect = {
            let a = p.worker_gradient(0, &x_cur).unwrap();
            let b = p.worker_gradient(0, &x_prev).unwrap();
            linalg::sub(&a, &b)
        };
        let reps = 10_000;
        let b = 3usize;
        let mut mean = vec![0.0; 3];
        let mut var = vec![0.0; 3];
        // per-sample variance of the pair difference for the sigma band
        for &z in &p.datasets[0].samples {
            let a = p.eval_grad(&x_cur, z).unwrap();
            let bb = p.eval_grad(&x_prev, z).unwrap();
            for i in 0..3 {
                var[i] += (a[i] - bb[i] - expect[i]).powi(2);
            }
        }
        for v in var.iter_mut() {
            *v /= p.datasets[0].samples.len() as f64;
        }
        let mut s = stream(11);
        for _ in 0..reps {
            let mut est = LocalEstimator {
                v: vec![0.0; 3],
                prev_x: x_prev.clone(),
                k_index: 0,
            };
            local_step(
                &mut est, &p, 0, 1, &x_cur, b, 4, BatchMode::Sampled, &ledger, &mut s,
            )
            .unwrap();
            for i in 0..3 {
                mean[i] += est.v[i] / reps as f64;
            }
        }
        for i in 0..3 {
            let sigma = (var[i] / (b * reps) as f64).sqrt();
            assert!(
                (mean[i] - expect[i]).abs() <= 3.0 * sigma + 1e-12,
                "coord {i}"
            );
        }
    }

    #[test]
    fn perturbed_update_r0_is_plain_step() {
        let x = vec![1.0, 2.0];
        let v = vec![0.5, -0.5];
        let (xt, xn) = perturbed_update(&x, &v, 0.1, 0.0, &mut stream(4)).unwrap();
        assert_eq!(xt, vec![0.95, 2.05]);
        assert_eq!(xn, xt);
    }

    #[test]
    fn perturbation_bounded_by_eta_r() {
        let x = vec![0.0; 6];
        let v = vec![0.0; 6];
        let mut s = stream(8);
        for _ in 0..200 {
            let (xt, xn) = perturbed_update(&x, &v, 0.2, 1.5, &mut s).unwrap();
            let diff = linalg::sub(&xn, &xt);
            assert!(linalg::norm(&diff) <= 0.2 * 1.5 + 1e-12);
        }
    }

    #[test]
    fn non_finite_estimator_rejected() {
        let x = vec![0.0, 0.0];
        let v = vec![f64::NAN, 0.0];
        assert!(perturbed_update(&x, &v, 0.1, 0.0, &mut stream(6)).is_err());
    }
}
