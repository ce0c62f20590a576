//! Two-hidden-layer softplus MLP with cross-entropy loss and hand-coded
//! backprop. Hidden width is fixed at 16; the parameter vector is the flat
//! concatenation (W1, b1, W2, b2, W3, b3).

use super::data::ClassData;
use super::{Constants, Problem, ProblemKind, Sample, WorkerDataset};
use crate::error::Result;
use crate::linalg;
use crate::scalar::Float;

pub const HIDDEN: usize = 16;
const MAX_CLASSES: usize = 32;

#[derive(Clone, Debug)]
pub struct MlpSoftplus<F: Float> {
    pub data: ClassData<F>,
}

#[inline]
fn softplus<F: Float>(t: F) -> F {
    if t > F::zero() {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<F: Float>(t: F) -> F {
    F::one() / (F::one() + (-t).exp())
}

/// Parameter layout offsets for input width m and class count c.
#[derive(Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    dim: usize,
}

fn layout(m: usize, c: usize) -> Layout {
    let w1 = 0;
    let b1 = w1 + HIDDEN * m;
    let w2 = b1 + HIDDEN;
    let b2 = w2 + HIDDEN * HIDDEN;
    let w3 = b2 + HIDDEN;
    let b3 = w3 + c * HIDDEN;
    Layout {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        dim: b3 + c,
    }
}

pub fn mlp_dim(n_features: usize, n_classes: usize) -> usize {
    layout(n_features, n_classes).dim
}

struct Forward<F> {
    z1: [F; HIDDEN],
    a1: [F; HIDDEN],
    z2: [F; HIDDEN],
    a2: [F; HIDDEN],
    probs: [F; MAX_CLASSES],
}

impl<F: Float> MlpSoftplus<F> {
    fn forward(&self, x: &[F], a: &[F]) -> Forward<F> {
        let m = self.data.n_features;
        let c = self.data.n_classes;
        let lt = layout(m, c);
        let mut z1 = [F::zero(); HIDDEN];
        let mut a1 = [F::zero(); HIDDEN];
        for h in 0..HIDDEN {
            let row = &x[lt.w1 + h * m..lt.w1 + (h + 1) * m];
            z1[h] = linalg::dot(row, a) + x[lt.b1 + h];
            a1[h] = softplus(z1[h]);
        }
        let mut z2 = [F::zero(); HIDDEN];
        let mut a2 = [F::zero(); HIDDEN];
        for h in 0..HIDDEN {
            let row = &x[lt.w2 + h * HIDDEN..lt.w2 + (h + 1) * HIDDEN];
            z2[h] = linalg::dot(row, &a1) + x[lt.b2 + h];
            a2[h] = softplus(z2[h]);
        }
        let mut probs = [F::zero(); MAX_CLASSES];
        let mut mx = F::neg_infinity();
        for cls in 0..c {
            let row = &x[lt.w3 + cls * HIDDEN..lt.w3 + (cls + 1) * HIDDEN];
            probs[cls] = linalg::dot(row, &a2) + x[lt.b3 + cls];
            if probs[cls] > mx {
                mx = probs[cls];
            }
        }
        let mut zsum = F::zero();
        for p in probs.iter_mut().take(c) {
            *p = (*p - mx).exp();
            zsum += *p;
        }
        for p in probs.iter_mut().take(c) {
            *p /= zsum;
        }
        Forward { z1, a1, z2, a2, probs }
    }

    pub fn loss(&self, x: &[F], z: Sample) -> F {
        let fwd = self.forward(x, self.data.feature_row(z.index));
        -fwd.probs[self.data.labels[z.index]]
            .max(F::from_f64(1e-300))
            .ln()
    }

    pub fn add_grad(&self, x: &[F], z: Sample, weight: F, acc: &mut [F]) {
        self.backprop_row(
            x,
            self.data.feature_row(z.index),
            self.data.labels[z.index],
            weight,
            acc,
        );
    }

    pub fn eval_split(&self) -> Option<(&[F], &[usize], usize)> {
        Some((
            &self.data.test_features,
            &self.data.test_labels,
            self.data.n_features,
        ))
    }

    fn predict(&self, x: &[F], a: &[F]) -> usize {
        let fwd = self.forward(x, a);
        let c = self.data.n_classes;
        let mut best = 0;
        for cls in 1..c {
            if fwd.probs[cls] > fwd.probs[best] {
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

    pub fn test_metrics(&self, x: &[F]) -> (f64, f64, f64) {
        let n = self.data.n_test();
        let w = F::one() / F::from_usize(n);
        let mut loss = F::zero();
        let mut grad = vec![F::zero(); x.len()];
        let mut hits = 0usize;
        for i in 0..n {
            let a = self.data.test_row(i);
            let y = self.data.test_labels[i];
            let fwd = self.forward(x, a);
            let mut best = 0;
            for cls in 1..self.data.n_classes {
                if fwd.probs[cls] > fwd.probs[best] {
                    best = cls;
                }
            }
            if best == y {
                hits += 1;
            }
            loss -= w * fwd.probs[y].max(F::from_f64(1e-300)).ln();
            self.add_grad_test(x, i, w, &mut grad);
        }
        (
            loss.to_f64(),
            linalg::norm(&grad).to_f64(),
            hits as f64 / n as f64,
        )
    }

    /// Gradient accumulation against a test-split row.
    fn add_grad_test(&self, x: &[F], test_idx: usize, weight: F, acc: &mut [F]) {
        self.backprop_row(
            x,
            self.data.test_row(test_idx),
            self.data.test_labels[test_idx],
            weight,
            acc,
        );
    }

    fn backprop_row(&self, x: &[F], a: &[F], y: usize, weight: F, acc: &mut [F]) {
        let m = self.data.n_features;
        let c = self.data.n_classes;
        let lt = layout(m, c);
        let fwd = self.forward(x, a);
        let mut d3 = [F::zero(); MAX_CLASSES];
        for cls in 0..c {
            d3[cls] = weight * fwd.probs[cls];
        }
        d3[y] -= weight;
        let mut d2 = [F::zero(); HIDDEN];
        for cls in 0..c {
            let g3 = &mut acc[lt.w3 + cls * HIDDEN..lt.w3 + (cls + 1) * HIDDEN];
            for h in 0..HIDDEN {
                g3[h] += d3[cls] * fwd.a2[h];
            }
            acc[lt.b3 + cls] += d3[cls];
            let row = &x[lt.w3 + cls * HIDDEN..lt.w3 + (cls + 1) * HIDDEN];
            for h in 0..HIDDEN {
                d2[h] += d3[cls] * row[h];
            }
        }
        for h in 0..HIDDEN {
            d2[h] *= sigmoid(fwd.z2[h]);
        }
        let mut d1 = [F::zero(); HIDDEN];
        for h in 0..HIDDEN {
            let g2 = &mut acc[lt.w2 + h * HIDDEN..lt.w2 + (h + 1) * HIDDEN];
            for j in 0..HIDDEN {
                g2[j] += d2[h] * fwd.a1[j];
            }
            acc[lt.b2 + h] += d2[h];
            let row = &x[lt.w2 + h * HIDDEN..lt.w2 + (h + 1) * HIDDEN];
            for j in 0..HIDDEN {
                d1[j] += d2[h] * row[j];
            }
        }
        for h in 0..HIDDEN {
            d1[h] *= sigmoid(fwd.z1[h]);
        }
        for h in 0..HIDDEN {
            let g1 = &mut acc[lt.w1 + h * m..lt.w1 + (h + 1) * m];
            for j in 0..m {
                g1[j] += d1[h] * a[j];
            }
            acc[lt.b1 + h] += d1[h];
        }
    }
}

pub(crate) fn assemble_mlp<F: Float>(
    data: ClassData<F>,
    datasets: Vec<WorkerDataset>,
) -> Result<Problem<F>> {
    assert!(data.n_classes <= MAX_CLASSES);
    let dim = mlp_dim(data.n_features, data.n_classes);
    let amax = (0..data.n_train())
        .map(|i| linalg::norm(data.feature_row(i)).to_f64())
        .fold(0.0, f64::max);
    // crude declared bounds; only the recommender and the SOSP threshold use
    // these, and both treat them as scale hints
    let scale = 1.0 + amax;
    let l_smooth = scale * scale;
    let constants = Constants {
        l_smooth: F::from_f64(l_smooth),
        rho: F::from_f64(scale * scale * scale),
        grad_bound: F::from_f64(std::f64::consts::SQRT_2 * scale),
        zeta: F::from_f64(2.0 * l_smooth),
        f_star: F::zero(),
        op_radius: F::from_f64(f64::INFINITY),
    };
    let kind = ProblemKind::MlpSoftplus(MlpSoftplus { data });
    Problem::assemble(dim, datasets, constants, kind)
}

#[cfg(test)]
mod tests {
    use super::super::data::make_gaussian_blobs;
    use super::*;
    use crate::problems::contiguous_datasets;
    use crate::rng::{RngStream, StreamId, StreamPurpose};

    fn toy() -> Problem<f64> {
        let (features, labels) = make_gaussian_blobs::<f64>(12, 4, 3, 2.0, 0.5, 21);
        let data = ClassData {
            features,
            labels,
            n_features: 4,
            n_classes: 3,
            test_features: vec![],
            test_labels: vec![],
        };
        let datasets = contiguous_datasets(12, 2).unwrap();
        assemble_mlp(data, datasets).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = toy();
        let mut stream = RngStream::new(5, StreamId::new(StreamPurpose::Diagnostics));
        let x: Vec<f64> = (0..p.dim).map(|_| stream.uniform_in(-0.5, 0.5)).collect();
        let z = Sample { index: 3 };
        let g = p.eval_grad(&x, z).unwrap();
        let h = 1e-5 * (1.0 + linalg::norm(&x));
        let mut max_rel: f64 = 0.0;
        for i in (0..p.dim).step_by(7) {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (p.eval_loss(&xp, z).unwrap() - p.eval_loss(&xm, z).unwrap()) / (2.0 * h);
            max_rel = max_rel.max((fd - g[i]).abs() / (1.0 + g[i].abs()));
        }
        assert!(max_rel < 1e-5, "max relative error {max_rel}");
    }

    #[test]
    fn test_split_backprop_matches_train_backprop() {
        // same row placed in both splits must yield the same gradient
        let (features, labels) = make_gaussian_blobs::<f64>(6, 4, 3, 2.0, 0.5, 22);
        let data = ClassData {
            features: features.clone(),
            labels: labels.clone(),
            n_features: 4,
            n_classes: 3,
            test_features: features,
            test_labels: labels,
        };
        let datasets = contiguous_datasets(6, 1).unwrap();
        let p = assemble_mlp(data, datasets).unwrap();
        let x: Vec<f64> = (0..p.dim).map(|i| 0.01 * ((i % 11) as f64 - 5.0)).collect();
        if let ProblemKind::MlpSoftplus(m) = &p.kind {
            let mut ga = vec![0.0; p.dim];
            let mut gb = vec![0.0; p.dim];
            m.add_grad(&x, Sample { index: 2 }, 1.0, &mut ga);
            m.add_grad_test(&x, 2, 1.0, &mut gb);
            assert_eq!(ga, gb);
        }
    }
}
