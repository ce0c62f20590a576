//! Counter-based reproducible random streams.
//!
//! Every source of randomness in a run is a dedicated stream keyed by
//! `(master_seed, purpose, worker, s, t, k)`. The key becomes the ChaCha8 key
//! directly, so distinct ids give statistically independent streams and the
//! draw sequence within a stream never depends on scheduling.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// What a stream is consumed for. Part of the stream key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum StreamPurpose {
    InitPerturbation = 1,
    ServerBatch = 2,
    LocalBatch = 3,
    LocalPerturbation = 4,
    WorkerSelect = 5,
    Partition = 6,
    DataGen = 7,
    InitWeights = 8,
    Diagnostics = 9,
    BaselineBatch = 10,
    BaselinePerturbation = 11,
    ProblemBuild = 12,
}

/// Stream identity: purpose tag plus worker and round indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamId {
    pub purpose: StreamPurpose,
    pub worker: u32,
    pub s: u32,
    pub t: u32,
    pub k: u32,
}

impl StreamId {
    pub fn new(purpose: StreamPurpose) -> Self {
        StreamId {
            purpose,
            worker: 0,
            s: 0,
            t: 0,
            k: 0,
        }
    }

    pub fn worker(mut self, p: usize) -> Self {
        self.worker = p as u32;
        self
    }

    pub fn round(mut self, s: usize, t: usize) -> Self {
        self.s = s as u32;
        self.t = t as u32;
        self
    }

    pub fn step(mut self, k: usize) -> Self {
        self.k = k as u32;
        self
    }
}

/// A single reproducible stream. Single consumer; clone-free.
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, id: StreamId) -> Self {
        let words: [u64; 4] = [
            master_seed,
            ((id.purpose as u64) << 32) | id.worker as u64,
            ((id.s as u64) << 32) | id.t as u64,
            id.k as u64,
        ];
        let mut seed = [0u8; 32];
        for (i, w) in words.iter().enumerate() {
            seed[i * 8..(i + 1) * 8].copy_from_slice(&w.to_le_bytes());
        }
        RngStream {
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn uniform_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in [0, n). Modulo bias is below 2^-50 for desk-scale n.
    #[inline]
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard normal via Box-Muller. Draws two uniforms per call.
    pub fn standard_normal(&mut self) -> f64 {
        loop {
            let u1 = self.uniform_f64();
            if u1 > 0.0 {
                let u2 = self.uniform_f64();
                let r = (-2.0 * u1.ln()).sqrt();
                return r * (std::f64::consts::TAU * u2).cos();
            }
        }
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform_f64()
    }

    /// Fisher-Yates shuffle, deterministic in stream order.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

/// Derives a per-trial master seed from the experiment master seed.
/// SplitMix64 finalizer; enough to decorrelate trial indices.
pub fn derive_seed(master_seed: u64, lane: u64) -> u64 {
    let mut z = master_seed ^ lane.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}
