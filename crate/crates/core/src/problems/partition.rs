//! Heterogeneity-controlled label-skew partitioner.
//!
//! The homogeneity dial `q` in [0, 1] sets the fraction of each worker's
//! samples taken from its dominant class (assigned round-robin over workers);
//! the remainder is filled uniformly from the leftover pool. At or below
//! `q = 1/C` the split degenerates to a stratified, exchangeable one, so each
//! worker's class histogram is uniform within rounding.

use super::{Sample, WorkerDataset};
use crate::error::{Error, Result};
use crate::rng::{RngStream, StreamId, StreamPurpose};

pub fn partition_label_skew(
    labels: &[usize],
    workers: usize,
    q: f64,
    seed: u64,
) -> Result<Vec<WorkerDataset>> {
    let n = labels.len();
    if workers == 0 || n == 0 {
        return Err(Error::problem("empty dataset or zero workers"));
    }
    if n % workers != 0 {
        return Err(Error::problem(format!(
            "n = {n} not divisible by P = {workers}"
        )));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::problem("q must lie in [0, 1]"));
    }
    let per = n / workers;
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;

    // per-class index pools, shuffled once
    let mut stream = RngStream::new(seed, StreamId::new(StreamPurpose::Partition));
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &l) in labels.iter().enumerate() {
        pools[l].push(i);
    }
    for pool in pools.iter_mut() {
        stream.shuffle(pool);
    }

    let mut assigned: Vec<Vec<usize>> = vec![Vec::with_capacity(per); workers];

    if q * classes as f64 <= 1.0 + 1e-12 {
        // IID regime: deal each class round-robin over workers
        let mut turn = 0usize;
        for pool in pools.iter() {
            for &i in pool {
                loop {
                    let w = turn % workers;
                    turn += 1;
                    if assigned[w].len() < per {
                        assigned[w].push(i);
                        break;
                    }
                }
            }
        }
    } else {
        // dominant-class quota first, in worker order
        for (w, items) in assigned.iter_mut().enumerate() {
            let dominant = w % classes;
            let quota = ((q * per as f64).round() as usize).min(per);
            let pool = &mut pools[dominant];
            let take = quota.min(pool.len());
            items.extend(pool.drain(pool.len() - take..));
        }
        // uniform fill from the shuffled leftover pool; a worker's own
        // dominant class is avoided so the dominant share stays at its quota
        let mut leftover: Vec<usize> = pools.into_iter().flatten().collect();
        stream.shuffle(&mut leftover);
        for i in leftover {
            let cls = labels[i];
            let pick = |avoid_dominant: bool| {
                (0..workers)
                    .filter(|&w| assigned[w].len() < per)
                    .filter(|&w| !avoid_dominant || w % classes != cls)
                    .max_by_key(|&w| per - assigned[w].len())
            };
            let w = pick(true).or_else(|| pick(false)).ok_or_else(|| {
                Error::problem("partition fill overflow (internal invariant)")
            })?;
            assigned[w].push(i);
        }
    }

    Ok(assigned
        .into_iter()
        .enumerate()
        .map(|(worker_id, idx)| WorkerDataset {
            worker_id,
            samples: idx.into_iter().map(|index| Sample { index }).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn histogram(ds: &WorkerDataset, labels: &[usize], classes: usize) -> Vec<usize> {
        let mut h = vec![0usize; classes];
        for s in &ds.samples {
            h[labels[s.index]] += 1;
        }
        h
    }

    fn balanced_labels(n: usize, classes: usize) -> Vec<usize> {
        (0..n).map(|i| i % classes).collect()
    }

    #[test]
    fn sizes_are_exact_and_disjoint() {
        let labels = balanced_labels(120, 4);
        let parts = partition_label_skew(&labels, 6, 0.5, 3).unwrap();
        let mut seen = vec![false; 120];
        for ds in &parts {
            assert_eq!(ds.samples.len(), 20);
            for s in &ds.samples {
                assert!(!seen[s.index], "duplicate sample");
                seen[s.index] = true;
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn q_at_one_over_c_is_uniform_within_one() {
        let labels = balanced_labels(400, 4);
        let parts = partition_label_skew(&labels, 8, 0.25, 7).unwrap();
        for ds in &parts {
            let h = histogram(ds, &labels, 4);
            for &cnt in &h {
                assert!((cnt as i64 - 50 / 4).unsigned_abs() <= 1, "{h:?}");
            }
        }
    }

    #[test]
    fn full_skew_with_p_equals_c() {
        let labels = balanced_labels(100, 5);
        let parts = partition_label_skew(&labels, 5, 1.0, 1).unwrap();
        for (w, ds) in parts.iter().enumerate() {
            let h = histogram(ds, &labels, 5);
            assert_eq!(h[w], 20, "worker {w} histogram {h:?}");
        }
    }

    #[test]
    fn skewed_setting_dominant_share() {
        // q = 0.35, P = 8, C = 10, n = 8000: 1000 samples each,
        // dominant-class share = 350 +- rounding
        let labels = balanced_labels(8000, 10);
        let parts = partition_label_skew(&labels, 8, 0.35, 42).unwrap();
        for (w, ds) in parts.iter().enumerate() {
            assert_eq!(ds.samples.len(), 1000);
            let h = histogram(ds, &labels, 10);
            assert!(h[w % 10] >= 350, "worker {w}: {h:?}");
            assert!(h[w % 10] <= 352, "worker {w}: {h:?}");
        }
    }

    #[test]
    fn indivisible_n_rejected() {
        let labels = balanced_labels(10, 2);
        assert!(partition_label_skew(&labels, 3, 0.5, 0).is_err());
    }

    #[test]
    fn deterministic_in_seed() {
        let labels = balanced_labels(60, 3);
        let a = partition_label_skew(&labels, 4, 0.6, 9).unwrap();
        let b = partition_label_skew(&labels, 4, 0.6, 9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.samples, y.samples);
        }
    }
}
