//! Multinomial logistic regression on synthetic Gaussian clusters.
//!
//! Parameter vector is the row-major weight matrix W (C x m); the per-sample
//! loss is the cross entropy of softmax(W a). Gradients and Hessian-vector
//! products are analytic.

use super::data::ClassData;
use super::{Constants, Problem, ProblemKind, Sample, Scope, WorkerDataset};
use crate::error::Result;
use crate::linalg;
use crate::scalar::Float;

const MAX_CLASSES: usize = 32;

#[derive(Clone, Debug)]
pub struct SoftmaxRegression<F: Float> {
    pub data: ClassData<F>,
}

impl<F: Float> SoftmaxRegression<F> {
    fn logits(&self, x: &[F], a: &[F], out: &mut [F]) {
        let m = self.data.n_features;
        for (c, o) in out.iter_mut().enumerate() {
            *o = linalg::dot(&x[c * m..(c + 1) * m], a);
        }
    }

    /// Softmax probabilities, numerically stable.
    fn probs(logits: &mut [F]) {
        let mut mx = logits[0];
        for &v in logits.iter() {
            if v > mx {
                mx = v;
            }
        }
        let mut z = F::zero();
        for v in logits.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in logits.iter_mut() {
            *v /= z;
        }
    }

    pub fn loss(&self, x: &[F], z: Sample) -> F {
        let c = self.data.n_classes;
        let a = self.data.feature_row(z.index);
        let mut p = [F::zero(); MAX_CLASSES];
        self.logits(x, a, &mut p[..c]);
        Self::probs(&mut p[..c]);
        -p[self.data.labels[z.index]].max(F::from_f64(1e-300)).ln()
    }

    pub fn add_grad(&self, x: &[F], z: Sample, weight: F, acc: &mut [F]) {
        let c = self.data.n_classes;
        let m = self.data.n_features;
        let a = self.data.feature_row(z.index);
        let mut p = [F::zero(); MAX_CLASSES];
        self.logits(x, a, &mut p[..c]);
        Self::probs(&mut p[..c]);
        let y = self.data.labels[z.index];
        for cls in 0..c {
            let coef = weight * if cls == y { p[cls] - F::one() } else { p[cls] };
            linalg::axpy(coef, a, &mut acc[cls * m..(cls + 1) * m]);
        }
    }

    /// Analytic HVP of the scope-mean objective: for each sample,
    /// `(diag(p) - p p') (V a)` outer `a`.
    pub fn hvp(&self, x: &[F], v: &[F], scope: Scope, parent: &Problem<F>) -> Vec<F> {
        let c = self.data.n_classes;
        let m = self.data.n_features;
        let mut out = vec![F::zero(); x.len()];
        let mut accumulate = |z: Sample, weight: F| {
            let a = self.data.feature_row(z.index);
            let mut p = [F::zero(); MAX_CLASSES];
            self.logits(x, a, &mut p[..c]);
            Self::probs(&mut p[..c]);
            let mut t = [F::zero(); MAX_CLASSES];
            self.logits(v, a, &mut t[..c]);
            let mut pt = F::zero();
            for cls in 0..c {
                pt += p[cls] * t[cls];
            }
            for cls in 0..c {
                let q = weight * p[cls] * (t[cls] - pt);
                linalg::axpy(q, a, &mut out[cls * m..(cls + 1) * m]);
            }
        };
        match scope {
            Scope::Worker(p) => {
                let ds = &parent.datasets[p];
                let w = F::one() / F::from_usize(ds.samples.len());
                for &z in &ds.samples {
                    accumulate(z, w);
                }
            }
            Scope::Global => {
                let wp = F::one() / F::from_usize(parent.workers);
                for ds in &parent.datasets {
                    let w = wp / F::from_usize(ds.samples.len());
                    for &z in &ds.samples {
                        accumulate(z, w);
                    }
                }
            }
        }
        out
    }

    pub fn eval_split(&self) -> Option<(&[F], &[usize], usize)> {
        Some((
            &self.data.test_features,
            &self.data.test_labels,
            self.data.n_features,
        ))
    }

    fn predict(&self, x: &[F], a: &[F]) -> usize {
        let c = self.data.n_classes;
        let mut lg = [F::zero(); MAX_CLASSES];
        self.logits(x, a, &mut lg[..c]);
        let mut best = 0;
        for cls in 1..c {
            if lg[cls] > lg[best] {
                best = cls;
            }
        }
        best
    }

    pub fn train_accuracy(&self, x: &[F]) -> f64 {
        let n = self.data.n_train();
        let hits = (0..n)
            .filter(|&i| self.predict(x, self.data.feature_row(i)) == self.data.labels[i])
            .count();
        hits as f64 / n as f64
    }

    /// (loss, gradient norm, accuracy) on the test split.
    pub fn test_metrics(&self, x: &[F]) -> (f64, f64, f64) {
        let c = self.data.n_classes;
        let m = self.data.n_features;
        let n = self.data.n_test();
        let w = F::one() / F::from_usize(n);
        let mut loss = F::zero();
        let mut grad = vec![F::zero(); x.len()];
        let mut hits = 0usize;
        for i in 0..n {
            let a = self.data.test_row(i);
            let y = self.data.test_labels[i];
            let mut p = [F::zero(); MAX_CLASSES];
            self.logits(x, a, &mut p[..c]);
            let mut best = 0;
            for cls in 1..c {
                if p[cls] > p[best] {
                    best = cls;
                }
            }
            if best == y {
                hits += 1;
            }
            Self::probs(&mut p[..c]);
            loss -= w * p[y].max(F::from_f64(1e-300)).ln();
            for cls in 0..c {
                let coef = w * if cls == y { p[cls] - F::one() } else { p[cls] };
                linalg::axpy(coef, a, &mut grad[cls * m..(cls + 1) * m]);
            }
        }
        (
            loss.to_f64(),
            linalg::norm(&grad).to_f64(),
            hits as f64 / n as f64,
        )
    }
}

/// Builds a softmax-regression problem from prepared class data and a
/// worker partition of the train indices.
pub(crate) fn assemble_softmax<F: Float>(
    data: ClassData<F>,
    datasets: Vec<WorkerDataset>,
) -> Result<Problem<F>> {
    assert!(data.n_classes <= MAX_CLASSES);
    let dim = data.n_classes * data.n_features;
    let amax = (0..data.n_train())
        .map(|i| linalg::norm(data.feature_row(i)).to_f64())
        .fold(0.0, f64::max);
    let l_smooth = 0.5 * amax * amax;
    let constants = Constants {
        l_smooth: F::from_f64(l_smooth),
        rho: F::from_f64(amax.powi(3)),
        grad_bound: F::from_f64(std::f64::consts::SQRT_2 * amax),
        zeta: F::from_f64(2.0 * l_smooth),
        f_star: F::zero(),
        op_radius: F::from_f64(f64::INFINITY),
    };
    let kind = ProblemKind::SoftmaxRegression(SoftmaxRegression { data });
    Problem::assemble(dim, datasets, constants, kind)
}

#[cfg(test)]
mod tests {
    use super::super::data::make_gaussian_blobs;
    use super::*;
    use crate::problems::contiguous_datasets;

    fn toy(n: usize, m: usize, c: usize, workers: usize) -> Problem<f64> {
        let (features, labels) = make_gaussian_blobs::<f64>(n, m, c, 2.0, 0.5, 13);
        let data = ClassData {
            features,
            labels,
            n_features: m,
            n_classes: c,
            test_features: vec![],
            test_labels: vec![],
        };
        let datasets = contiguous_datasets(n, workers).unwrap();
        assemble_softmax(data, datasets).unwrap()
    }

    #[test]
    fn zero_weights_give_log_c() {
        let p = toy(20, 3, 4, 2);
        let x = vec![0.0; p.dim];
        let z = Sample { index: 5 };
        assert!((p.eval_loss(&x, z).unwrap() - (4.0_f64).ln()).abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = toy(12, 3, 3, 2);
        let z = Sample { index: 7 };
        let x: Vec<f64> = (0..p.dim).map(|i| 0.05 * ((i % 7) as f64 - 3.0)).collect();
        let g = p.eval_grad(&x, z).unwrap();
        let h = 1e-5 * (1.0 + linalg::norm(&x));
        for i in 0..p.dim {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (p.eval_loss(&xp, z).unwrap() - p.eval_loss(&xm, z).unwrap()) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() / (1.0 + g[i].abs()) < 1e-6,
                "coord {i}: fd {fd} vs {g:?}"
            );
        }
    }

    #[test]
    fn hvp_matches_finite_difference_of_gradient() {
        let p = toy(12, 3, 3, 2);
        let x: Vec<f64> = (0..p.dim).map(|i| 0.03 * (i as f64 - 4.0)).collect();
        let v: Vec<f64> = (0..p.dim).map(|i| ((i * 3 + 1) % 5) as f64 - 2.0).collect();
        let hv = p.hessian_vector_product(&x, &v, Scope::Global).unwrap();
        let d = 1e-6;
        let mut xp = x.clone();
        let mut xm = x.clone();
        linalg::axpy(d, &v, &mut xp);
        linalg::axpy(-d, &v, &mut xm);
        let gp = p.global_gradient(&xp).unwrap();
        let gm = p.global_gradient(&xm).unwrap();
        for i in 0..p.dim {
            let fd = (gp[i] - gm[i]) / (2.0 * d);
            assert!((fd - hv[i]).abs() < 1e-5, "coord {i}");
        }
    }
}
