//! Quartic saddle family with an exactly constructed heterogeneity knob.
//!
//! Worker objective: `f_p(x) = 1/2 x' H_p x + (gamma/4) |x|^4` with
//! `H_p = Hbar + s_p (zeta/2) w w'`, `Hbar = diag(-lambda_neg, 1, ..., 1)`,
//! `|w| = 1` and `s_p = +1` on the first half of the workers, `-1` on the
//! second. Cross-group Hessian differences then have spectral norm exactly
//! `zeta`, independent of x, and the global objective keeps an exact strict
//! saddle at the origin with `lambda_min = -lambda_neg`.
//!
//! Each worker's dataset consists of index samples: sample slot `j` carries a
//! signed rank-one Hessian perturbation `+/- sigma u_p u_p'` (equal counts of
//! each sign), so minibatch gradients are genuinely stochastic while the
//! worker mean stays exactly `grad f_p`.

use super::{contiguous_datasets, Constants, Problem, ProblemKind, Sample, Scope};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{RngStream, StreamId, StreamPurpose};
use crate::scalar::Float;

#[derive(Clone, Debug)]
pub struct QuarticSaddle<F: Float> {
    /// Diagonal of the shared Hessian part.
    pub h_bar_diag: Vec<F>,
    /// Unit vector w of the heterogeneity direction E = w w'.
    pub hetero_dir: Vec<F>,
    pub zeta: F,
    pub gamma: F,
    /// Per-sample rank-one noise amplitude sigma.
    pub sample_noise: F,
    /// Per-worker unit noise directions u_p.
    pub noise_dirs: Vec<Vec<F>>,
    pub per_worker: usize,
    pub workers: usize,
}

impl<F: Float> QuarticSaddle<F> {
    #[inline]
    fn locate(&self, z: Sample) -> (usize, usize) {
        (z.index / self.per_worker, z.index % self.per_worker)
    }

    /// +1 on the first half of the workers, -1 on the second.
    #[inline]
    fn group_sign(&self, p: usize) -> F {
        if self.zeta == F::zero() {
            return F::zero();
        }
        if p < self.workers / 2 {
            F::one()
        } else {
            -F::one()
        }
    }

    /// +1 on the first half of a worker's slots, -1 on the second.
    #[inline]
    fn slot_sign(&self, slot: usize) -> F {
        if slot < self.per_worker / 2 {
            F::one()
        } else {
            -F::one()
        }
    }

    pub fn loss(&self, x: &[F], z: Sample) -> F {
        let (p, slot) = self.locate(z);
        let half = F::from_f64(0.5);
        let quarter = F::from_f64(0.25);
        let mut quad = F::zero();
        for i in 0..x.len() {
            quad += self.h_bar_diag[i] * x[i] * x[i];
        }
        quad *= half;
        let wx = linalg::dot(&self.hetero_dir, x);
        quad += self.group_sign(p) * quarter * self.zeta * wx * wx;
        if self.sample_noise != F::zero() {
            let ux = linalg::dot(&self.noise_dirs[p], x);
            quad += self.slot_sign(slot) * half * self.sample_noise * ux * ux;
        }
        let n2 = linalg::dot(x, x);
        quad + quarter * self.gamma * n2 * n2
    }

    pub fn add_grad(&self, x: &[F], z: Sample, weight: F, acc: &mut [F]) {
        let (p, slot) = self.locate(z);
        let half = F::from_f64(0.5);
        let n2 = linalg::dot(x, x);
        let quartic = weight * self.gamma * n2;
        for i in 0..x.len() {
            acc[i] += weight * self.h_bar_diag[i] * x[i] + quartic * x[i];
        }
        if self.zeta != F::zero() {
            let wx = linalg::dot(&self.hetero_dir, x);
            let c = weight * self.group_sign(p) * half * self.zeta * wx;
            linalg::axpy(c, &self.hetero_dir, acc);
        }
        if self.sample_noise != F::zero() {
            let ux = linalg::dot(&self.noise_dirs[p], x);
            let c = weight * self.slot_sign(slot) * self.sample_noise * ux;
            linalg::axpy(c, &self.noise_dirs[p], acc);
        }
    }

    /// Analytic HVP. Per-sample noise cancels in every scope mean; the
    /// heterogeneity term cancels globally (equal group sizes).
    pub fn hvp(&self, x: &[F], v: &[F], scope: Scope, _parent: &Problem<F>) -> Vec<F> {
        let mut out = vec![F::zero(); x.len()];
        for i in 0..x.len() {
            out[i] = self.h_bar_diag[i] * v[i];
        }
        if let Scope::Worker(p) = scope {
            if self.zeta != F::zero() {
                let wv = linalg::dot(&self.hetero_dir, v);
                let c = self.group_sign(p) * F::from_f64(0.5) * self.zeta * wv;
                linalg::axpy(c, &self.hetero_dir, &mut out);
            }
        }
        // quartic part: gamma * (|x|^2 v + 2 (x.v) x)
        let n2 = self.gamma * linalg::dot(x, x);
        let xv = F::from_f64(2.0) * self.gamma * linalg::dot(x, v);
        for i in 0..x.len() {
            out[i] += n2 * v[i] + xv * x[i];
        }
        out
    }
}

/// Draws a unit vector uniformly on the sphere.
fn unit_vector<F: Float>(stream: &mut RngStream, d: usize) -> Vec<F> {
    loop {
        let g: Vec<f64> = (0..d).map(|_| stream.standard_normal()).collect();
        let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            return g.iter().map(|&v| F::from_f64(v / n)).collect();
        }
    }
}

/// Builds the quartic-saddle problem.
///
/// `n` index samples are split evenly over `P` workers; `n/P` must be even so
/// the signed per-sample noise cancels exactly in every worker mean. When
/// `zeta > 0`, `P` must be even so the heterogeneity cancels globally.
#[allow(clippy::too_many_arguments)]
pub fn build_quartic_saddle<F: Float>(
    d: usize,
    workers: usize,
    n: usize,
    lambda_neg: f64,
    gamma: f64,
    zeta: f64,
    sample_noise: f64,
    seed: u64,
) -> Result<Problem<F>> {
    if d < 2 {
        return Err(Error::problem("quartic-saddle requires d >= 2"));
    }
    if lambda_neg <= 0.0 || gamma <= 0.0 || zeta < 0.0 || sample_noise < 0.0 {
        return Err(Error::problem(
            "require lambda_neg > 0, gamma > 0, zeta >= 0, sample_noise >= 0",
        ));
    }
    if zeta > 0.0 && workers % 2 != 0 {
        return Err(Error::problem("zeta > 0 requires an even worker count"));
    }
    let datasets = contiguous_datasets(n, workers)?;
    let per_worker = n / workers;
    if per_worker % 2 != 0 {
        return Err(Error::problem("n/P must be even for exact noise cancellation"));
    }

    let mut stream = RngStream::new(seed, StreamId::new(StreamPurpose::ProblemBuild));
    let mut h_bar_diag = vec![F::one(); d];
    h_bar_diag[0] = F::from_f64(-lambda_neg);
    let hetero_dir = unit_vector::<F>(&mut stream, d);
    let noise_dirs: Vec<Vec<F>> = (0..workers).map(|_| unit_vector::<F>(&mut stream, d)).collect();

    // Declared constants on the operating ball |x| <= R_op.
    let r_op = 3.0 * f64::max(1.0, (lambda_neg / gamma).sqrt());
    let h_norm = f64::max(lambda_neg, 1.0) + zeta / 2.0;
    let l_smooth = h_norm + sample_noise + 3.0 * gamma * r_op * r_op;
    let grad_bound = (h_norm + sample_noise) * r_op + gamma * r_op.powi(3);
    let rho = 6.0 * gamma * r_op;
    let f_star = -lambda_neg * lambda_neg / (4.0 * gamma);

    let constants = Constants {
        l_smooth: F::from_f64(l_smooth),
        rho: F::from_f64(rho),
        grad_bound: F::from_f64(grad_bound),
        zeta: F::from_f64(zeta),
        f_star: F::from_f64(f_star),
        op_radius: F::from_f64(r_op),
    };
    let kind = ProblemKind::QuarticSaddle(QuarticSaddle {
        h_bar_diag,
        hetero_dir,
        zeta: F::from_f64(zeta),
        gamma: F::from_f64(gamma),
        sample_noise: F::from_f64(sample_noise),
        noise_dirs,
        per_worker,
        workers,
    });
    Problem::assemble(d, datasets, constants, kind)
}
