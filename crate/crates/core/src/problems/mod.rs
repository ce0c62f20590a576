//! Objective suite: finite-sum problems `f = (1/P) sum_p f_p` with per-worker
//! datasets, analytic losses/gradients and Hessian-vector products.
//!
//! Three families are provided:
//! * `quartic-saddle` — `f_p(x) = 1/2 x' H_p x + (gamma/4) |x|^4` with an exact
//!   strict saddle at the origin and an exactly constructed Hessian
//!   heterogeneity knob;
//! * `softmax-regression` — multinomial logistic regression on synthetic data;
//! * `mlp-softplus` — a two-hidden-layer softplus MLP with hand-coded backprop.

mod data;
mod mlp;
mod partition;
mod quartic;
mod softmax;

pub use data::{make_gaussian_blobs, split_train_test, ClassData};
pub use mlp::{mlp_dim, MlpSoftplus, HIDDEN};
pub use partition::partition_label_skew;
pub use quartic::{build_quartic_saddle, QuarticSaddle};
pub use softmax::SoftmaxRegression;

use crate::error::{Error, Result};
use crate::linalg;
use crate::scalar::Float;

/// One datum. For classification kinds the index points into the problem's
/// feature/label arrays; for the quartic family it selects a worker-local
/// rank-one component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Sample {
    pub index: usize,
}

/// Ordered local dataset of one worker. Immutable after partitioning.
#[derive(Clone, Debug)]
pub struct WorkerDataset {
    pub worker_id: usize,
    pub samples: Vec<Sample>,
}

/// Declared problem constants (Lipschitz bounds, heterogeneity, lower bound).
#[derive(Clone, Copy, Debug)]
pub struct Constants<F: Float> {
    /// Gradient-Lipschitz bound of the per-sample loss on the operating ball.
    pub l_smooth: F,
    /// Hessian-Lipschitz bound on the operating ball.
    pub rho: F,
    /// Gradient-norm bound on the operating ball.
    pub grad_bound: F,
    /// Declared Hessian heterogeneity (supremum over x and worker pairs).
    pub zeta: F,
    /// Exact or lower bound on min f.
    pub f_star: F,
    /// Operating radius; runs assert |x| <= R_op.
    pub op_radius: F,
}

/// Hessian scope for HVP and heterogeneity queries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Global,
    Worker(usize),
}

#[derive(Clone, Debug)]
pub enum ProblemKind<F: Float> {
    QuarticSaddle(QuarticSaddle<F>),
    SoftmaxRegression(SoftmaxRegression<F>),
    MlpSoftplus(MlpSoftplus<F>),
}

/// A finite-sum objective with P equally sized worker datasets.
#[derive(Clone, Debug)]
pub struct Problem<F: Float> {
    pub dim: usize,
    pub workers: usize,
    pub datasets: Vec<WorkerDataset>,
    pub constants: Constants<F>,
    pub kind: ProblemKind<F>,
}

impl<F: Float> Problem<F> {
    pub(crate) fn assemble(
        dim: usize,
        datasets: Vec<WorkerDataset>,
        constants: Constants<F>,
        kind: ProblemKind<F>,
    ) -> Result<Self> {
        let workers = datasets.len();
        if workers == 0 {
            return Err(Error::problem("no worker datasets"));
        }
        let per = datasets[0].samples.len();
        if datasets.iter().any(|d| d.samples.len() != per) {
            return Err(Error::problem("worker datasets must have equal sizes"));
        }
        let two = F::from_f64(2.0);
        if constants.zeta > two * constants.l_smooth {
            return Err(Error::problem("declared zeta exceeds 2L"));
        }
        Ok(Problem {
            dim,
            workers,
            datasets,
            constants,
            kind,
        })
    }

    pub fn total_samples(&self) -> usize {
        self.workers * self.datasets[0].samples.len()
    }

    pub fn samples_per_worker(&self) -> usize {
        self.datasets[0].samples.len()
    }

    /// Per-sample loss `l(x, z)`. Deterministic in (x, z).
    pub fn eval_loss(&self, x: &[F], z: Sample) -> Result<F> {
        linalg::check_dim(x, self.dim)?;
        Ok(match &self.kind {
            ProblemKind::QuarticSaddle(q) => q.loss(x, z),
            ProblemKind::SoftmaxRegression(s) => s.loss(x, z),
            ProblemKind::MlpSoftplus(m) => m.loss(x, z),
        })
    }

    /// Analytic per-sample gradient of `l(., z)` at x.
    pub fn eval_grad(&self, x: &[F], z: Sample) -> Result<Vec<F>> {
        linalg::check_dim(x, self.dim)?;
        let mut g = vec![F::zero(); self.dim];
        self.add_grad(x, z, F::one(), &mut g);
        Ok(g)
    }

    /// Accumulates `weight * grad l(x, z)` into `acc`. Hot path: no allocation
    /// for the quartic and MLP kinds.
    #[inline]
    pub fn add_grad(&self, x: &[F], z: Sample, weight: F, acc: &mut [F]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(acc.len(), self.dim);
        match &self.kind {
            ProblemKind::QuarticSaddle(q) => q.add_grad(x, z, weight, acc),
            ProblemKind::SoftmaxRegression(s) => s.add_grad(x, z, weight, acc),
            ProblemKind::MlpSoftplus(m) => m.add_grad(x, z, weight, acc),
        }
    }

    /// Exact mean gradient over one worker's dataset (analytic finite sum).
    pub fn worker_gradient(&self, p: usize, x: &[F]) -> Result<Vec<F>> {
        linalg::check_dim(x, self.dim)?;
        if p >= self.workers {
            return Err(Error::problem(format!("worker {p} out of range")));
        }
        let ds = &self.datasets[p];
        let w = F::one() / F::from_usize(ds.samples.len());
        let mut g = vec![F::zero(); self.dim];
        for &z in &ds.samples {
            self.add_grad(x, z, w, &mut g);
        }
        Ok(g)
    }

    /// Exact global gradient `grad f(x) = (1/P) sum_p grad f_p(x)`.
    pub fn global_gradient(&self, x: &[F]) -> Result<Vec<F>> {
        linalg::check_dim(x, self.dim)?;
        let mut g = vec![F::zero(); self.dim];
        let wp = F::one() / F::from_usize(self.workers);
        for ds in &self.datasets {
            let w = wp / F::from_usize(ds.samples.len());
            for &z in &ds.samples {
                self.add_grad(x, z, w, &mut g);
            }
        }
        Ok(g)
    }

    /// Exact global mean loss.
    pub fn global_loss(&self, x: &[F]) -> Result<F> {
        let mut total = F::zero();
        let wp = F::one() / F::from_usize(self.workers);
        for ds in &self.datasets {
            let w = wp / F::from_usize(ds.samples.len());
            for &z in &ds.samples {
                total += w * self.eval_loss(x, z)?;
            }
        }
        Ok(total)
    }

    /// Hessian-vector product for the global objective or one worker's.
    /// Analytic for the quartic and softmax kinds, central finite differences
    /// of the exact scope gradient for the MLP.
    pub fn hessian_vector_product(&self, x: &[F], v: &[F], scope: Scope) -> Result<Vec<F>> {
        linalg::check_dim(x, self.dim)?;
        linalg::check_dim(v, self.dim)?;
        if linalg::norm(v) == F::zero() {
            return Ok(vec![F::zero(); self.dim]);
        }
        match &self.kind {
            ProblemKind::QuarticSaddle(q) => Ok(q.hvp(x, v, scope, self)),
            ProblemKind::SoftmaxRegression(s) => Ok(s.hvp(x, v, scope, self)),
            ProblemKind::MlpSoftplus(_) => self.hvp_finite_difference(x, v, scope),
        }
    }

    fn hvp_finite_difference(&self, x: &[F], v: &[F], scope: Scope) -> Result<Vec<F>> {
        let vnorm = linalg::norm(v).to_f64().max(1e-12);
        let delta = F::from_f64(1e-4 * (1.0 + linalg::norm(x).to_f64()) / vnorm);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        linalg::axpy(delta, v, &mut xp);
        linalg::axpy(-delta, v, &mut xm);
        let (gp, gm) = match scope {
            Scope::Global => (self.global_gradient(&xp)?, self.global_gradient(&xm)?),
            Scope::Worker(p) => (self.worker_gradient(p, &xp)?, self.worker_gradient(p, &xm)?),
        };
        let inv = F::one() / (F::from_f64(2.0) * delta);
        Ok(gp.iter().zip(&gm).map(|(&a, &b)| (a - b) * inv).collect())
    }

    /// Classification evaluation data (test split), when the kind has one.
    pub fn eval_split(&self) -> Option<(&[F], &[usize], usize)> {
        match &self.kind {
            ProblemKind::QuarticSaddle(_) => None,
            ProblemKind::SoftmaxRegression(s) => s.eval_split(),
            ProblemKind::MlpSoftplus(m) => m.eval_split(),
        }
    }

    /// Train-set classification accuracy, if the problem has labels.
    pub fn train_accuracy(&self, x: &[F]) -> Option<f64> {
        match &self.kind {
            ProblemKind::QuarticSaddle(_) => None,
            ProblemKind::SoftmaxRegression(s) => Some(s.train_accuracy(x)),
            ProblemKind::MlpSoftplus(m) => Some(m.train_accuracy(x)),
        }
    }

    /// (loss, gradient norm, accuracy) on the held-out split, if present.
    pub fn test_metrics(&self, x: &[F]) -> Option<(f64, f64, f64)> {
        match &self.kind {
            ProblemKind::QuarticSaddle(_) => None,
            ProblemKind::SoftmaxRegression(s) => Some(s.test_metrics(x)),
            ProblemKind::MlpSoftplus(m) => Some(m.test_metrics(x)),
        }
    }

    /// Asserts the operating-radius contract from the declared constants.
    pub fn check_operating_radius(&self, x: &[F]) -> Result<()> {
        let n = linalg::norm(x).to_f64();
        let r = self.constants.op_radius.to_f64();
        if n > r {
            return Err(Error::OperatingRadius { norm: n, radius: r });
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            ProblemKind::QuarticSaddle(_) => "quartic-saddle",
            ProblemKind::SoftmaxRegression(_) => "softmax-regression",
            ProblemKind::MlpSoftplus(_) => "mlp-softplus",
        }
    }
}

/// Classification model family selector for [`build_classification`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassifierKind {
    Softmax,
    Mlp,
}

/// Generation parameters for a synthetic classification problem.
#[derive(Clone, Debug)]
pub struct ClassificationSpec {
    pub classifier: ClassifierKind,
    /// Total sample count before the train/test split.
    pub n_total: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub cluster_sep: f64,
    pub spread: f64,
    /// Train share of the seed-stable shuffled split.
    pub train_fraction: f64,
    pub workers: usize,
    /// Label-skew homogeneity dial.
    pub q: f64,
}

/// Generates Gaussian-cluster data, splits train/test, partitions the train
/// set by label skew and assembles the requested classifier problem.
pub fn build_classification<F: Float>(spec: &ClassificationSpec, seed: u64) -> Result<Problem<F>> {
    let (features, labels) = make_gaussian_blobs::<F>(
        spec.n_total,
        spec.n_features,
        spec.n_classes,
        spec.cluster_sep,
        spec.spread,
        seed,
    );
    let (train_idx, test_idx) = split_train_test(spec.n_total, spec.train_fraction, seed);
    let gather = |idx: &[usize]| -> (Vec<F>, Vec<usize>) {
        let mut f = Vec::with_capacity(idx.len() * spec.n_features);
        let mut l = Vec::with_capacity(idx.len());
        for &i in idx {
            f.extend_from_slice(&features[i * spec.n_features..(i + 1) * spec.n_features]);
            l.push(labels[i]);
        }
        (f, l)
    };
    let (train_f, train_l) = gather(&train_idx);
    let (test_f, test_l) = gather(&test_idx);
    let datasets = partition_label_skew(&train_l, spec.workers, spec.q, seed)?;
    let data = ClassData {
        features: train_f,
        labels: train_l,
        n_features: spec.n_features,
        n_classes: spec.n_classes,
        test_features: test_f,
        test_labels: test_l,
    };
    match spec.classifier {
        ClassifierKind::Softmax => softmax::assemble_softmax(data, datasets),
        ClassifierKind::Mlp => mlp::assemble_mlp(data, datasets),
    }
}

/// Splits `n` global sample indices into `P` equal contiguous blocks.
/// Used by the quartic family, where sample index encodes (worker, slot).
pub(crate) fn contiguous_datasets(n: usize, workers: usize) -> Result<Vec<WorkerDataset>> {
    if n % workers != 0 {
        return Err(Error::problem(format!(
            "n = {n} not divisible by P = {workers}"
        )));
    }
    let per = n / workers;
    Ok((0..workers)
        .map(|p| WorkerDataset {
            worker_id: p,
            samples: (p * per..(p + 1) * per).map(|index| Sample { index }).collect(),
        })
        .collect())
}
