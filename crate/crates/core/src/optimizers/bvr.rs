//! The BVR-L-PSGD driver (Algorithm 1) and its exact-delegation variants.
//!
//! Epoch structure: one full-gradient gather, then T rounds; each round is one
//! pair gather, a K-step local loop on a uniformly sampled worker, and one
//! model broadcast — 1 + 2T communication events per epoch, T*S headline
//! rounds. The per-round pair batches are drawn and charged for every t,
//! including t = 0 where the two points coincide and the update is exactly
//! zero; likewise the k = 0 local pair. This keeps the literal loop-body cost
//! `S * (n + T*P*K*b + T*sum_k b_k)` that the accounting tests pin.

use crate::error::Result;
use crate::estimators::{
    local_step, perturbed_update, BatchMode, LocalEstimator, ServerEstimator,
};
use crate::linalg;
use crate::oracle::{self, CostLedger};
use crate::problems::Problem;
use crate::rng::{RngStream, StreamId, StreamPurpose};
use crate::scalar::Float;
use crate::simnet::{broadcast, gather_average, CommLedger, MessageKind, RoundTag};

use super::{collect_record, initial_point, Checkpoint, DeviationPoint, RunConfig, Trace};

/// Runs Algorithm 1 end to end and returns the full trace. Invalid
/// configurations are errors; numerical failures mid-run (non-finite iterate,
/// operating-radius violation) produce a partial trace with `aborted` set.
pub fn run_bvr_l_psgd<F: Float>(problem: &Problem<F>, cfg: &RunConfig) -> Result<Trace> {
    run_named(problem, cfg, "bvr-l-psgd")
}

/// BVR-L-SGD is BVR-L-PSGD with the perturbation radius forced to zero.
pub fn run_bvr_l_sgd<F: Float>(problem: &Problem<F>, cfg: &RunConfig) -> Result<Trace> {
    let mut c = cfg.clone();
    c.radius = 0.0;
    let mut trace = run_named(problem, &c, "bvr-l-sgd")?;
    trace.algorithm = "bvr-l-sgd".into();
    Ok(trace)
}

/// Minibatch SARAH is the K = 1, r = 0 degeneration: the local loop collapses
/// to a single server-estimator step per round.
pub fn run_minibatch_sarah<F: Float>(problem: &Problem<F>, cfg: &RunConfig) -> Result<Trace> {
    let mut c = cfg.clone();
    c.local_steps = 1;
    c.radius = 0.0;
    let mut trace = run_named(problem, &c, "minibatch-sarah")?;
    trace.algorithm = "minibatch-sarah".into();
    Ok(trace)
}

fn run_named<F: Float>(problem: &Problem<F>, cfg: &RunConfig, name: &str) -> Result<Trace> {
    cfg.validate()?;
    let workers = problem.workers;
    let (b, k_steps, t_rounds, s_epochs) =
        (cfg.batch, cfg.local_steps, cfg.inner_rounds, cfg.epochs);
    let kb = k_steps * b;
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

    let mut iter: u64 = 0;
    'epochs: for s in 0..s_epochs {
        // line 6: exact local full gradients, gathered and averaged.
        let mut full_grads = Vec::with_capacity(workers);
        for p in 0..workers {
            full_grads.push(oracle::full_local_gradient(problem, p, &x, &ledger)?);
        }
        let v0 = gather_average(&mut comm, &full_grads, workers, RoundTag { s, t: 0, line: 6 })?;
        let mut server = ServerEstimator { v: v0, t_index: 0 };
        let x_anchor = x.clone();
        let mut x_prev = x.clone();

        for t in 0..t_rounds {
            // line 12: per-worker Kb-sample pairs at (x_t, x_{t-1}).
            let mut diffs = Vec::with_capacity(workers);
            for p in 0..workers {
                let mut stream = RngStream::new(
                    cfg.master_seed,
                    StreamId::new(StreamPurpose::ServerBatch).worker(p).round(s, t),
                );
                let batch = if cfg.full_batch {
                    problem.datasets[p].samples.clone()
                } else {
                    oracle::sample_minibatch(&mut stream, &problem.datasets[p], kb)?
                };
                let (g, g_ref) = oracle::grad_pair(problem, &batch, &x, &x_prev, &ledger)?;
                diffs.push(linalg::sub(&g, &g_ref));
            }
            let mean_diff =
                gather_average(&mut comm, &diffs, workers, RoundTag { s, t, line: 12 })?;
            server.advance(&mean_diff)?;

            // line 13: one uniformly sampled worker runs the local loop.
            let mut sel = RngStream::new(
                cfg.master_seed,
                StreamId::new(StreamPurpose::WorkerSelect).round(s, t),
            );
            let p_sel = sel.index(workers);

            let mut local = LocalEstimator::from_server(&server.v, &x);
            let mut x_loc = x.clone();
            for k in 0..k_steps {
                let mut batch_stream = RngStream::new(
                    cfg.master_seed,
                    StreamId::new(StreamPurpose::LocalBatch).round(s, t).step(k),
                );
                let mode = if cfg.full_batch {
                    BatchMode::Full
                } else {
                    BatchMode::Sampled
                };
                local_step(
                    &mut local,
                    problem,
                    p_sel,
                    k,
                    &x_loc,
                    b,
                    k_steps,
                    mode,
                    &ledger,
                    &mut batch_stream,
                )?;

                if cfg.deviation_probe {
                    trace.deviation.push(deviation_point(
                        problem, &local.v, &x_loc, &x_anchor, b, iter, t == 0 && k == 0,
                    ));
                }

                let mut perturb_stream = RngStream::new(
                    cfg.master_seed,
                    StreamId::new(StreamPurpose::LocalPerturbation).round(s, t).step(k),
                );
                let (x_tilde, x_next) =
                    match perturbed_update(&x_loc, &local.v, eta, cfg.radius, &mut perturb_stream)
                    {
                        Ok(pair) => pair,
                        Err(e) => {
                            trace.aborted = Some(e.to_string());
                            break 'epochs;
                        }
                    };
                iter += 1;
                if iter % cfg.record_every as u64 == 0 {
                    trace.checkpoints.push(Checkpoint {
                        iter,
                        x_tilde: to_f64(&x_tilde),
                    });
                }
                x_loc = x_next;
                if !linalg::is_finite(&x_loc) {
                    trace.aborted = Some(format!(
                        "non-finite iterate at epoch {s}, round {t}, local step {k}"
                    ));
                    break 'epochs;
                }
                if let Err(e) = problem.check_operating_radius(&x_loc) {
                    trace.aborted = Some(e.to_string());
                    break 'epochs;
                }
            }

            // line 22: the local result becomes the next global model.
            broadcast(&mut comm, &x_loc, workers, MessageKind::BroadcastModel);
            x_prev = x;
            x = x_loc;
            comm.end_round();
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
    }
    Ok(trace)
}

/// Exact estimator deviation |v - grad f(x)| against the drift envelope
/// `zeta |x - anchor| + L |x - anchor| / sqrt(b)` (observer channel: uses the
/// exact global gradient, never charged).
fn deviation_point<F: Float>(
    problem: &Problem<F>,
    v: &[F],
    x: &[F],
    anchor: &[F],
    b: usize,
    iter: u64,
    is_anchor: bool,
) -> DeviationPoint {
    let exact = problem.global_gradient(x).unwrap_or_else(|_| v.to_vec());
    let deviation = linalg::norm(&linalg::sub(v, &exact)).to_f64();
    let dist = linalg::norm(&linalg::sub(x, anchor)).to_f64();
    let zeta = problem.constants.zeta.to_f64();
    let l = problem.constants.l_smooth.to_f64();
    DeviationPoint {
        iter,
        deviation,
        envelope: zeta * dist + l * dist / (b as f64).sqrt(),
        is_anchor,
    }
}

pub(super) fn to_f64<F: Float>(x: &[F]) -> Vec<f64> {
    x.iter().map(|&v| v.to_f64()).collect()
}
