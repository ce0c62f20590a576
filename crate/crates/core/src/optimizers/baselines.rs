//! Baseline drivers: (noisy) minibatch SGD and local SGD, sharing the round
//! protocol and accounting conventions of the main driver.
//!
//! All baselines consume the same per-round local computation budget
//! `B = K * b` (or the declared override) so that round-for-round comparisons
//! are budget-fair: minibatch variants spend it on one size-B batch per
//! worker, local SGD on B/b local steps of batch b per worker.

use crate::error::{Error, Result};
use crate::estimators::perturbed_update;
use crate::linalg;
use crate::oracle::{self, CostLedger};
use crate::problems::Problem;
use crate::rng::{RngStream, StreamId, StreamPurpose};
use crate::scalar::Float;
use crate::simnet::{broadcast, gather_average, CommLedger, MessageKind, RoundTag};

use super::bvr::to_f64;
use super::{collect_record, initial_point, Checkpoint, RunConfig, Trace};

/// Noisy minibatch SGD: every round each worker evaluates one size-B
/// minibatch gradient, the server averages, takes the step and adds the ball
/// perturbation, then broadcasts.
pub fn run_noisy_minibatch_sgd<F: Float>(problem: &Problem<F>, cfg: &RunConfig) -> Result<Trace> {
    run_minibatch_family(problem, cfg, "noisy-minibatch-sgd", cfg.radius)
}

/// Plain minibatch SGD is the r = 0 special case.
pub fn run_minibatch_sgd<F: Float>(problem: &Problem<F>, cfg: &RunConfig) -> Result<Trace> {
    run_minibatch_family(problem, cfg, "minibatch-sgd", 0.0)
}

fn run_minibatch_family<F: Float>(
    problem: &Problem<F>,
    cfg: &RunConfig,
    name: &str,
    radius: f64,
) -> Result<Trace> {
    cfg.validate()?;
    let workers = problem.workers;
    let budget = cfg.effective_budget() as usize;
    let eta = F::from_f64(cfg.eta);
    let mut x = initial_point(problem, cfg)?;
    let ledger = CostLedger::new();
    let mut comm = CommLedger::new();
    let mut trace = Trace::new(name);
    trace.checkpoints.push(Checkpoint {
        iter: 0,
        x_tilde: to_f64(&x),
    });
    trace.records.push(collect_record(
        problem,
        &x,
        0,
        0,
        0,
        0,
        0,
        cfg.track_lambda_min,
    ));

    for round in 0..cfg.total_rounds() {
        let (s, t) = split_round(round, cfg.inner_rounds);
        let mut grads = Vec::with_capacity(workers);
        for p in 0..workers {
            let mut stream = RngStream::new(
                cfg.master_seed,
                StreamId::new(StreamPurpose::BaselineBatch).worker(p).round(s, t),
            );
            let batch = if cfg.full_batch {
                problem.datasets[p].samples.clone()
            } else {
                oracle::sample_minibatch(&mut stream, &problem.datasets[p], budget)?
            };
            grads.push(oracle::minibatch_gradient(problem, &batch, &x, &ledger)?);
        }
        let g = gather_average(&mut comm, &grads, workers, RoundTag { s, t, line: 1 })?;

        let mut perturb_stream = RngStream::new(
            cfg.master_seed,
            StreamId::new(StreamPurpose::BaselinePerturbation).round(s, t),
        );
        let (x_tilde, x_next) = match perturbed_update(&x, &g, eta, radius, &mut perturb_stream) {
            Ok(pair) => pair,
            Err(e) => {
                trace.aborted = Some(e.to_string());
                break;
            }
        };
        if (round + 1) % cfg.record_every as u64 == 0 {
            trace.checkpoints.push(Checkpoint {
                iter: round + 1,
                x_tilde: to_f64(&x_tilde),
            });
        }
        x = x_next;
        broadcast(&mut comm, &x, workers, MessageKind::BroadcastModel);
        comm.end_round();
        if let Some(msg) = iterate_problem(problem, &x, s, t) {
            trace.aborted = Some(msg);
            break;
        }
        trace.records.push(collect_record(
            problem,
            &x,
            comm.rounds,
            ledger.budget_units(),
            ledger.raw_grad_evals(),
            comm.events(),
            comm.rounds,
            cfg.track_lambda_min,
        ));
    }
    Ok(trace)
}

/// Local SGD: every worker runs B/b local gradient steps of batch b from the
/// shared model, then the models are averaged and broadcast.
pub fn run_local_sgd<F: Float>(problem: &Problem<F>, cfg: &RunConfig) -> Result<Trace> {
    cfg.validate()?;
    let workers = problem.workers;
    let budget = cfg.effective_budget() as usize;
    if budget % cfg.batch != 0 {
        return Err(Error::config(format!(
            "local SGD needs b | budget; got b = {}, budget = {budget}",
            cfg.batch
        )));
    }
    let steps = budget / cfg.batch;
    let eta = F::from_f64(cfg.eta);
    let mut x = initial_point(problem, cfg)?;
    let ledger = CostLedger::new();
    let mut comm = CommLedger::new();
    let mut trace = Trace::new("local-sgd");
    trace.checkpoints.push(Checkpoint {
        iter: 0,
        x_tilde: to_f64(&x),
    });
    trace.records.push(collect_record(
        problem,
        &x,
        0,
        0,
        0,
        0,
        0,
        cfg.track_lambda_min,
    ));

    'rounds: for round in 0..cfg.total_rounds() {
        let (s, t) = split_round(round, cfg.inner_rounds);
        let mut models = Vec::with_capacity(workers);
        for p in 0..workers {
            let mut x_p = x.clone();
            for k in 0..steps {
                let mut stream = RngStream::new(
                    cfg.master_seed,
                    StreamId::new(StreamPurpose::BaselineBatch)
                        .worker(p)
                        .round(s, t)
                        .step(k),
                );
                let batch = if cfg.full_batch {
                    problem.datasets[p].samples.clone()
                } else {
                    oracle::sample_minibatch(&mut stream, &problem.datasets[p], cfg.batch)?
                };
                let g = oracle::minibatch_gradient(problem, &batch, &x_p, &ledger)?;
                linalg::axpy(-eta, &g, &mut x_p);
                if !linalg::is_finite(&x_p) {
                    trace.aborted = Some(format!(
                        "non-finite iterate on worker {p} at round {round}, step {k}"
                    ));
                    break 'rounds;
                }
            }
            models.push(x_p);
        }
        x = gather_average(&mut comm, &models, workers, RoundTag { s, t, line: 1 })?;
        broadcast(&mut comm, &x, workers, MessageKind::BroadcastModel);
        comm.end_round();
        if let Some(msg) = iterate_problem(problem, &x, s, t) {
            trace.aborted = Some(msg);
            break;
        }
        if (round + 1) % cfg.record_every as u64 == 0 {
            trace.checkpoints.push(Checkpoint {
                iter: (round + 1) * steps as u64,
                x_tilde: to_f64(&x),
            });
        }
        trace.records.push(collect_record(
            problem,
            &x,
            comm.rounds,
            ledger.budget_units(),
            ledger.raw_grad_evals(),
            comm.events(),
            comm.rounds,
            cfg.track_lambda_min,
        ));
    }
    Ok(trace)
}

fn split_round(round: u64, inner_rounds: usize) -> (usize, usize) {
    (
        (round / inner_rounds as u64) as usize,
        (round % inner_rounds as u64) as usize,
    )
}

fn iterate_problem<F: Float>(problem: &Problem<F>, x: &[F], s: usize, t: usize) -> Option<String> {
    if !linalg::is_finite(x) {
        return Some(format!("non-finite global model at epoch {s}, round {t}"));
    }
    problem.check_operating_radius(x).err().map(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::InitKind;
    use crate::problems::build_quartic_saddle;

    fn cfg() -> RunConfig {
        RunConfig {
            eta: 0.05,
            batch: 2,
            local_steps: 4,
            inner_rounds: 3,
            epochs: 2,
            radius: 0.0,
            master_seed: 9,
            init: InitKind::Point(vec![0.25; 4]),
            ..RunConfig::default()
        }
    }

    fn problem() -> Problem<f64> {
        build_quartic_saddle(4, 2, 8, 0.5, 1.0, 0.0, 0.2, 3).unwrap()
    }

    #[test]
    fn minibatch_budget_is_rounds_times_pb() {
        let p = problem();
        let c = cfg();
        let trace = run_minibatch_sgd(&p, &c).unwrap();
        let last = trace.final_record().unwrap();
        let rounds = c.total_rounds();
        let per_round = (p.workers * c.local_steps * c.batch) as u64;
        assert_eq!(last.budget_units, rounds * per_round);
        assert_eq!(last.raw_grad_evals, rounds * per_round);
        assert_eq!(last.comm_events, 2 * rounds);
        assert_eq!(last.comm_rounds, rounds);
    }

    #[test]
    fn full_batch_minibatch_sgd_is_exact_gd() {
        let p = problem();
        let mut c = cfg();
        c.full_batch = true;
        let trace = run_minibatch_sgd(&p, &c).unwrap();
        let mut x = vec![0.25; 4];
        for _ in 0..c.total_rounds() {
            let g = p.global_gradient(&x).unwrap();
            linalg::axpy(-c.eta, &g, &mut x);
        }
        let exact = p.global_loss(&x).unwrap();
        assert!((trace.final_record().unwrap().train_loss - exact).abs() < 1e-14);
    }

    #[test]
    fn noisy_variant_differs_only_when_radius_positive() {
        let p = problem();
        let mut c = cfg();
        let a = run_minibatch_sgd(&p, &c).unwrap();
        let b = run_noisy_minibatch_sgd(&p, &c).unwrap();
        assert_eq!(
            a.final_record().unwrap().train_loss.to_bits(),
            b.final_record().unwrap().train_loss.to_bits()
        );
        c.radius = 0.3;
        let noisy = run_noisy_minibatch_sgd(&p, &c).unwrap();
        assert_ne!(
            a.final_record().unwrap().train_loss.to_bits(),
            noisy.final_record().unwrap().train_loss.to_bits()
        );
    }

    #[test]
    fn local_sgd_budget_and_divisibility() {
        let p = problem();
        let mut c = cfg();
        let trace = run_local_sgd(&p, &c).unwrap();
        let last = trace.final_record().unwrap();
        let per_round = (p.workers * c.local_steps * c.batch) as u64;
        assert_eq!(last.budget_units, c.total_rounds() * per_round);
        assert_eq!(last.comm_events, 2 * c.total_rounds());
        c.budget = Some(9);
        c.local_steps = 4;
        c.batch = 2;
        assert!(run_local_sgd(&p, &c).is_err());
    }

    #[test]
    fn full_batch_local_sgd_single_step_matches_gd() {
        // one local step per round with full batches: averaging P copies of
        // the same exact step is exact GD
        let p = problem();
        let mut c = cfg();
        c.full_batch = true;
        c.local_steps = 1;
        c.batch = 8;
        c.budget = Some(8); // steps = 1
        let trace = run_local_sgd(&p, &c).unwrap();
        let mut x = vec![0.25; 4];
        for _ in 0..c.total_rounds() {
            let g = p.global_gradient(&x).unwrap();
            linalg::axpy(-c.eta, &g, &mut x);
        }
        let exact = p.global_loss(&x).unwrap();
        assert!((trace.final_record().unwrap().train_loss - exact).abs() < 1e-13);
    }
}
