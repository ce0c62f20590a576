//! Synthetic classification data: Gaussian class clusters in feature space.

use crate::rng::{RngStream, StreamId, StreamPurpose};
use crate::scalar::Float;

/// Class-labelled feature storage shared by the classification problem kinds.
/// `features` is row-major `n x n_features`; the test split is evaluation-only
/// and never partitioned to workers.
#[derive(Clone, Debug)]
pub struct ClassData<F: Float> {
    pub features: Vec<F>,
    pub labels: Vec<usize>,
    pub n_features: usize,
    pub n_classes: usize,
    pub test_features: Vec<F>,
    pub test_labels: Vec<usize>,
}

impl<F: Float> ClassData<F> {
    #[inline]
    pub fn feature_row(&self, i: usize) -> &[F] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    #[inline]
    pub fn test_row(&self, i: usize) -> &[F] {
        &self.test_features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn n_train(&self) -> usize {
        self.labels.len()
    }

    pub fn n_test(&self) -> usize {
        self.test_labels.len()
    }
}

/// Draws `n` points from `n_classes` Gaussian clusters. Labels are balanced
/// (`n` must be divisible by `n_classes`) and emitted in round-robin order;
/// any train/test split is the caller's job.
pub fn make_gaussian_blobs<F: Float>(
    n: usize,
    n_features: usize,
    n_classes: usize,
    cluster_sep: f64,
    spread: f64,
    seed: u64,
) -> (Vec<F>, Vec<usize>) {
    assert!(n_classes >= 2 && n % n_classes == 0, "n must be divisible by n_classes");
    let mut stream = RngStream::new(seed, StreamId::new(StreamPurpose::DataGen));
    // class means: random directions scaled to cluster_sep
    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            let g: Vec<f64> = (0..n_features).map(|_| stream.standard_normal()).collect();
            let nrm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            g.iter().map(|v| v / nrm * cluster_sep).collect()
        })
        .collect();
    let mut features = Vec::with_capacity(n * n_features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % n_classes;
        for j in 0..n_features {
            features.push(F::from_f64(means[c][j] + spread * stream.standard_normal()));
        }
        labels.push(c);
    }
    (features, labels)
}

/// Seed-stable shuffled train/test split. Returns (train, test) index lists.
pub fn split_train_test(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    // lane 0xFFFF_FFFF keeps the split stream apart from the partitioner's
    let mut stream = RngStream::new(seed, StreamId::new(StreamPurpose::Partition).step(0xFFFF_FFFF));
    stream.shuffle(&mut idx);
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let test = idx.split_off(n_train);
    (idx, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_balanced_and_deterministic() {
        let (xa, la) = make_gaussian_blobs::<f64>(100, 4, 5, 3.0, 1.0, 9);
        let (xb, lb) = make_gaussian_blobs::<f64>(100, 4, 5, 3.0, 1.0, 9);
        assert_eq!(xa, xb);
        assert_eq!(la, lb);
        for c in 0..5 {
            assert_eq!(la.iter().filter(|&&l| l == c).count(), 20);
        }
    }

    #[test]
    fn split_is_disjoint_and_complete() {
        let (tr, te) = split_train_test(50, 0.8, 3);
        assert_eq!(tr.len(), 40);
        assert_eq!(te.len(), 10);
        let mut all: Vec<usize> = tr.iter().chain(te.iter()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..50).collect::<Vec<_>>());
    }
}
