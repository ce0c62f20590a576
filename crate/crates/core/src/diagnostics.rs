//! Second-order-stationarity diagnostics: restarted Lanczos on the
//! Hessian-vector-product operator, checkpoint certification, and a
//! power-iteration estimate of the Hessian heterogeneity constant.
//!
//! Everything here is an observer channel: diagnostics never touch the
//! computation-budget ledger or the communication ledger.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::optimizers::{Checkpoint, Trace};
use crate::problems::{Problem, Scope};
use crate::rng::{RngStream, StreamId, StreamPurpose};
use crate::scalar::Float;

/// Fixed seed of the diagnostics start-vector stream; diagnostics results are
/// reproducible independently of the run's master seed.
const DIAG_SEED: u64 = 0xD1A6_0001;

/// Krylov dimension cap and default restart count of the Lanczos solver.
const KRYLOV_CAP: usize = 60;
pub const DEFAULT_RESTARTS: usize = 8;

/// Iteration cap of the zeta power iteration.
const POWER_ITER_CAP: usize = 500;

/// Smallest-eigenvalue estimate with its residual `|H v - lambda v|`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EigResult {
    pub lambda_min: f64,
    pub residual: f64,
    pub converged: bool,
}

/// Smallest eigenvalue of the global Hessian at `x` via restarted Lanczos
/// with full reorthogonalization on the HVP operator.
pub fn min_eigenvalue<F: Float>(problem: &Problem<F>, x: &[F], tol: f64) -> Result<EigResult> {
    min_eigenvalue_restarts(problem, x, tol, DEFAULT_RESTARTS)
}

pub fn min_eigenvalue_restarts<F: Float>(
    problem: &Problem<F>,
    x: &[F],
    tol: f64,
    restarts: usize,
) -> Result<EigResult> {
    let mut err = None;
    let mut op = |v: &[f64]| -> Vec<f64> {
        let vf: Vec<F> = v.iter().map(|&c| F::from_f64(c)).collect();
        match problem.hessian_vector_product(x, &vf, Scope::Global) {
            Ok(hv) => hv.iter().map(|&c| c.to_f64()).collect(),
            Err(e) => {
                err = Some(e);
                vec![0.0; v.len()]
            }
        }
    };
    let res = min_eigenvalue_op(&mut op, problem.dim, tol, restarts);
    match err {
        Some(e) => Err(e),
        None => Ok(res),
    }
}

/// Operator form of the solver, usable with any symmetric linear map.
/// Non-convergence after the restart budget returns the best estimate with
/// `converged = false`; the achieved residual is always reported.
pub fn min_eigenvalue_op(
    op: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    d: usize,
    tol: f64,
    restarts: usize,
) -> EigResult {
    let m = d.min(KRYLOV_CAP);
    let mut stream = RngStream::new(DIAG_SEED, StreamId::new(StreamPurpose::Diagnostics));
    let mut start: Vec<f64> = (0..d).map(|_| stream.standard_normal()).collect();
    let mut best = EigResult {
        lambda_min: f64::NAN,
        residual: f64::INFINITY,
        converged: false,
    };
    for _ in 0..restarts.max(1) {
        let (theta, ritz, residual) = lanczos_min(op, d, m, &start);
        if residual < best.residual || best.lambda_min.is_nan() {
            best = EigResult {
                lambda_min: theta,
                residual,
                converged: residual <= tol * (1.0 + theta.abs()),
            };
        }
        if best.converged {
            break;
        }
        // restart from the best Ritz vector so far
        start = ritz;
    }
    best
}

/// One m-step Lanczos pass with full (twice-applied) reorthogonalization.
/// Returns the smallest Ritz value, its Ritz vector and the residual bound
/// `beta_m |s_m|`, which equals `|H y - theta y|` for the Ritz pair.
fn lanczos_min(
    op: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    d: usize,
    m: usize,
    start: &[f64],
) -> (f64, Vec<f64>, f64) {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);

    let nrm = linalg::norm(start);
    let mut q: Vec<f64> = if nrm > 1e-300 {
        start.iter().map(|&v| v / nrm).collect()
    } else {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        e
    };

    let mut last_beta = 0.0;
    for j in 0..m {
        basis.push(q.clone());
        let mut w = op(&q);
        let a = linalg::dot(&q, &w);
        alpha.push(a);
        // full reorthogonalization, applied twice for numerical safety
        for _ in 0..2 {
            for qi in &basis {
                let c = linalg::dot(qi, &w);
                linalg::axpy(-c, qi, &mut w);
            }
        }
        let b = linalg::norm(&w);
        if j + 1 == m || b < 1e-13 {
            last_beta = if j + 1 == m { b } else { 0.0 };
            break;
        }
        beta.push(b);
        for (wi, qi) in w.iter().zip(q.iter_mut()) {
            *qi = wi / b;
        }
    }

    let k = alpha.len();
    let mut tri = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        tri[(i, i)] = alpha[i];
        if i + 1 < k {
            tri[(i, i + 1)] = beta[i];
            tri[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(tri);
    let mut idx = 0;
    for i in 1..k {
        if eig.eigenvalues[i] < eig.eigenvalues[idx] {
            idx = i;
        }
    }
    let theta = eig.eigenvalues[idx];
    let s = eig.eigenvectors.column(idx);
    let mut ritz = vec![0.0; d];
    for (j, qj) in basis.iter().enumerate() {
        linalg::axpy(s[j], qj, &mut ritz);
    }
    let residual = last_beta * s[k - 1].abs();
    (theta, ritz, residual)
}

/// Certification verdict for one retained iterate.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SospReport {
    /// Global local-step index of the candidate.
    pub iter: u64,
    #[serde(with = "crate::serde_util::nan_null")]
    pub grad_norm: f64,
    #[serde(with = "crate::serde_util::nan_null")]
    pub lambda_min: f64,
    /// Eigensolver residual, used as explicit slack in the curvature test.
    #[serde(with = "crate::serde_util::nan_null")]
    pub certificate_tol: f64,
    pub eps: f64,
    pub rho: f64,
    /// Curvature threshold `-sqrt(rho * eps)`.
    pub threshold: f64,
    pub verdict: bool,
}

/// Certifies one point: `|grad f(x)| <= eps` and
/// `lambda_min >= -sqrt(rho eps) - certificate_tol`.
pub fn certify_point<F: Float>(
    problem: &Problem<F>,
    x: &[F],
    iter: u64,
    eps: f64,
    rho: f64,
    tol: f64,
) -> Result<SospReport> {
    if eps <= 0.0 || rho <= 0.0 {
        return Err(Error::config("eps and rho must be positive"));
    }
    let grad_norm = full_gradient_norm(problem, x)?;
    let threshold = -(rho * eps).sqrt();
    // skip the eigensolve when the gradient test already fails
    let (lambda_min, certificate_tol) = if grad_norm <= eps {
        let e = min_eigenvalue(problem, x, tol)?;
        (e.lambda_min, e.residual)
    } else {
        (f64::NAN, f64::NAN)
    };
    let verdict = grad_norm <= eps && lambda_min >= threshold - certificate_tol;
    Ok(SospReport {
        iter,
        grad_norm,
        lambda_min,
        certificate_tol,
        eps,
        rho,
        threshold,
        verdict,
    })
}

/// Certifies every retained checkpoint. The caller thins the checkpoint
/// list; this scan is linear in eigensolves.
pub fn scan_checkpoints<F: Float>(
    problem: &Problem<F>,
    checkpoints: &[Checkpoint],
    eps: f64,
    rho: f64,
    tol: f64,
) -> Result<Vec<SospReport>> {
    let mut out = Vec::with_capacity(checkpoints.len());
    for cp in checkpoints {
        let x: Vec<F> = cp.x_tilde.iter().map(|&v| F::from_f64(v)).collect();
        out.push(certify_point(problem, &x, cp.iter, eps, rho, tol)?);
    }
    Ok(out)
}

/// Scans a trace's x-tilde history in order and returns the first certified
/// candidate, or `None` when no retained iterate certifies.
pub fn scan_history_for_sosp<F: Float>(
    problem: &Problem<F>,
    trace: &Trace,
    eps: f64,
    rho: f64,
    tol: f64,
) -> Result<Option<SospReport>> {
    for cp in &trace.checkpoints {
        let x: Vec<F> = cp.x_tilde.iter().map(|&v| F::from_f64(v)).collect();
        let report = certify_point(problem, &x, cp.iter, eps, rho, tol)?;
        if report.verdict {
            return Ok(Some(report));
        }
    }
    Ok(None)
}

/// Exact global gradient norm at `x` (observer channel, never charged).
pub fn full_gradient_norm<F: Float>(problem: &Problem<F>, x: &[F]) -> Result<f64> {
    Ok(linalg::norm(&problem.global_gradient(x)?).to_f64())
}

/// Estimates the Hessian heterogeneity `max_{p,q} |H_p(x) - H_q(x)|` at `x`
/// by power iteration on each difference operator, run until the spectral
/// norm estimate is stable to relative `tol`.
pub fn estimate_zeta<F: Float>(problem: &Problem<F>, x: &[F], tol: f64) -> Result<f64> {
    if tol <= 0.0 {
        return Err(Error::config("tol must be positive"));
    }
    let d = problem.dim;
    let mut zeta = 0.0_f64;
    for p in 0..problem.workers {
        for q in (p + 1)..problem.workers {
            let mut stream = RngStream::new(
                DIAG_SEED,
                StreamId::new(StreamPurpose::Diagnostics).worker(p).step(q),
            );
            let mut v: Vec<f64> = (0..d).map(|_| stream.standard_normal()).collect();
            let n = linalg::norm(&v);
            for c in v.iter_mut() {
                *c /= n;
            }
            let mut prev = f64::INFINITY;
            let mut norm_est = 0.0;
            for _ in 0..POWER_ITER_CAP {
                let vf: Vec<F> = v.iter().map(|&c| F::from_f64(c)).collect();
                let hp = problem.hessian_vector_product(x, &vf, Scope::Worker(p))?;
                let hq = problem.hessian_vector_product(x, &vf, Scope::Worker(q))?;
                let w: Vec<f64> = hp
                    .iter()
                    .zip(&hq)
                    .map(|(&a, &b)| (a - b).to_f64())
                    .collect();
                norm_est = linalg::norm(&w);
                if norm_est < 1e-300 {
                    break;
                }
                for (vi, wi) in v.iter_mut().zip(&w) {
                    *vi = wi / norm_est;
                }
                if (norm_est - prev).abs() <= tol * norm_est.max(1e-12) {
                    break;
                }
                prev = norm_est;
            }
            zeta = zeta.max(norm_est);
        }
    }
    Ok(zeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::build_quartic_saddle;

    #[test]
    fn lanczos_matches_dense_eigensolver_on_random_symmetric() {
        // independent route: assemble a dense symmetric matrix and compare
        let d = 12;
        let mut stream = RngStream::new(99, StreamId::new(StreamPurpose::Diagnostics).step(7));
        let mut a = DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                let v = stream.standard_normal();
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let dense_min = SymmetricEigen::new(a.clone())
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v));
        let mut op = |v: &[f64]| -> Vec<f64> {
            let x = nalgebra::DVector::from_column_slice(v);
            (&a * x).iter().copied().collect()
        };
        let got = min_eigenvalue_op(&mut op, d, 1e-10, 8);
        assert!(got.converged);
        assert!(
            (got.lambda_min - dense_min).abs() < 1e-8,
            "{} vs {dense_min}",
            got.lambda_min
        );
    }

    #[test]
    fn quartic_origin_curvature_is_minus_lambda() {
        let p = build_quartic_saddle::<f64>(10, 2, 8, 0.7, 1.0, 0.0, 0.0, 3).unwrap();
        let x = vec![0.0; 10];
        let e = min_eigenvalue(&p, &x, 1e-9).unwrap();
        assert!(e.converged);
        assert!((e.lambda_min + 0.7).abs() < 1e-9, "{}", e.lambda_min);
    }

    #[test]
    fn gradient_norm_matches_worker_mean_definition() {
        let p = build_quartic_saddle::<f64>(5, 2, 8, 1.0, 1.0, 0.4, 0.0, 8).unwrap();
        let x = vec![0.2, -0.1, 0.3, 0.05, -0.25];
        let direct = {
            let a = p.worker_gradient(0, &x).unwrap();
            let b = p.worker_gradient(1, &x).unwrap();
            let mean: Vec<f64> = a.iter().zip(&b).map(|(u, v)| 0.5 * (u + v)).collect();
            linalg::norm(&mean)
        };
        let got = full_gradient_norm(&p, &x).unwrap();
        assert!((got - direct).abs() < 1e-12);
    }

    #[test]
    fn certify_saddle_and_minimum() {
        let p = build_quartic_saddle::<f64>(6, 2, 8, 1.0, 1.0, 0.0, 0.0, 5).unwrap();
        // origin: zero gradient but lambda_min = -1 -> not second-order stationary
        let saddle = certify_point(&p, &vec![0.0; 6], 0, 1e-3, 1.0, 1e-8).unwrap();
        assert!(!saddle.verdict);
        assert!(saddle.grad_norm <= 1e-3);
        // global minimum along e_0 at |x| = 1: gradient 0, Hessian PSD
        let mut x = vec![0.0; 6];
        x[0] = 1.0;
        let min_pt = certify_point(&p, &x, 1, 1e-6, 1.0, 1e-8).unwrap();
        assert!(min_pt.verdict, "{min_pt:?}");
    }

    #[test]
    fn verdict_consistency_with_one_line_checker() {
        let p = build_quartic_saddle::<f64>(6, 2, 8, 1.0, 1.0, 0.0, 0.0, 5).unwrap();
        let pts = vec![vec![0.0; 6], {
            let mut x = vec![0.0; 6];
            x[0] = 1.0;
            x
        }];
        for (i, x) in pts.iter().enumerate() {
            let r = certify_point(&p, x, i as u64, 1e-4, 1.0, 1e-8).unwrap();
            let independent = r.grad_norm <= r.eps
                && r.lambda_min >= -(r.rho * r.eps).sqrt() - r.certificate_tol;
            assert_eq!(r.verdict, independent);
        }
    }

    #[test]
    fn zeta_estimate_matches_construction() {
        let p = build_quartic_saddle::<f64>(8, 4, 16, 1.0, 1.0, 0.65, 0.0, 9).unwrap();
        for i in 0..3 {
            let x: Vec<f64> = (0..8).map(|j| 0.05 * ((i * 8 + j) as f64).sin()).collect();
            let z = estimate_zeta(&p, &x, 1e-10).unwrap();
            assert!((z - 0.65).abs() < 1e-6, "zeta estimate {z}");
        }
    }

    #[test]
    fn zeta_zero_for_homogeneous_problem() {
        let p = build_quartic_saddle::<f64>(5, 2, 8, 1.0, 1.0, 0.0, 0.0, 2).unwrap();
        let z = estimate_zeta(&p, &[0.1; 5], 1e-8).unwrap();
        assert!(z < 1e-12);
    }

    #[test]
    fn scan_returns_first_certified_checkpoint() {
        let p = build_quartic_saddle::<f64>(4, 2, 8, 1.0, 1.0, 0.0, 0.0, 6).unwrap();
        let mut x_min = vec![0.0; 4];
        x_min[0] = 1.0;
        let mut trace = Trace::new("test");
        trace.checkpoints.push(Checkpoint {
            iter: 0,
            x_tilde: vec![0.0; 4],
        });
        trace.checkpoints.push(Checkpoint {
            iter: 5,
            x_tilde: x_min,
        });
        let hit = scan_history_for_sosp(&p, &trace, 1e-6, 1.0, 1e-8)
            .unwrap()
            .expect("minimum should certify");
        assert_eq!(hit.iter, 5);
        // pinned at the saddle only -> never certifies
        trace.checkpoints.truncate(1);
        assert!(scan_history_for_sosp(&p, &trace, 1e-6, 1.0, 1e-8)
            .unwrap()
            .is_none());
        // empty history -> not found
        trace.checkpoints.clear();
        assert!(scan_history_for_sosp(&p, &trace, 1e-6, 1.0, 1e-8)
            .unwrap()
            .is_none());
    }
}
