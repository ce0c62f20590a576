//! Simulated round-synchronous cluster: broadcast / gather / average message
//! exchange with an exact communication-event ledger.
//!
//! Communication is in-process; the cost model of interest is round counts,
//! which this module measures exactly. Aggregation order is fixed to
//! ascending worker id so results do not depend on physical parallelism.

use crate::error::{Error, Result};
use crate::scalar::Float;

/// Message kinds of the round protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MessageKind {
    /// Model vector pushed from server to all workers.
    BroadcastModel,
    /// P vectors pulled from the workers, ordered by worker id.
    GatherVectors,
    /// Non-model vector pushed from server to all workers.
    BroadcastVector,
}

/// Round tag identifying where in the algorithm a message was exchanged.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundTag {
    pub s: usize,
    pub t: usize,
    pub line: u8,
}

/// Communication-event counters plus the headline round counter.
#[derive(Clone, Copy, Debug, Default)]
pub struct CommLedger {
    pub broadcast_model: u64,
    pub gather_vectors: u64,
    pub broadcast_vector: u64,
    pub rounds: u64,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn log(&mut self, kind: MessageKind) {
        match kind {
            MessageKind::BroadcastModel => self.broadcast_model += 1,
            MessageKind::GatherVectors => self.gather_vectors += 1,
            MessageKind::BroadcastVector => self.broadcast_vector += 1,
        }
    }

    /// Marks the end of one headline communication round.
    #[inline]
    pub fn end_round(&mut self) {
        self.rounds += 1;
    }

    pub fn events(&self) -> u64 {
        self.broadcast_model + self.gather_vectors + self.broadcast_vector
    }
}

/// Gathers exactly `expected` worker vectors and averages them in worker-id
/// order (deterministic floating-point reduction). Logs one gather event.
pub fn gather_average<F: Float>(
    ledger: &mut CommLedger,
    contributions: &[Vec<F>],
    expected: usize,
    tag: RoundTag,
) -> Result<Vec<F>> {
    if contributions.len() != expected {
        return Err(Error::protocol(format!(
            "gather at (s={}, t={}, line {}): expected {} contributions, got {}",
            tag.s,
            tag.t,
            tag.line,
            expected,
            contributions.len()
        )));
    }
    let d = contributions[0].len();
    for (p, c) in contributions.iter().enumerate() {
        if c.len() != d {
            return Err(Error::protocol(format!(
                "gather: worker {p} contributed dimension {} != {d}",
                c.len()
            )));
        }
    }
    ledger.log(MessageKind::GatherVectors);
    let w = F::one() / F::from_usize(expected);
    let mut out = vec![F::zero(); d];
    for c in contributions {
        for i in 0..d {
            out[i] += w * c[i];
        }
    }
    Ok(out)
}

/// Delivers the identical vector to all workers. Logs one broadcast event and
/// returns the delivered copies.
pub fn broadcast<F: Float>(
    ledger: &mut CommLedger,
    x: &[F],
    workers: usize,
    kind: MessageKind,
) -> Vec<Vec<F>> {
    debug_assert!(matches!(
        kind,
        MessageKind::BroadcastModel | MessageKind::BroadcastVector
    ));
    ledger.log(kind);
    (0..workers).map(|_| x.to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TAG: RoundTag = RoundTag { s: 0, t: 0, line: 6 };

    #[test]
    fn single_worker_gather_is_identity() {
        let mut ledger = CommLedger::new();
        let v = vec![vec![1.0_f64, -2.0]];
        let out = gather_average(&mut ledger, &v, 1, TAG).unwrap();
        assert_eq!(out, vec![1.0, -2.0]);
        assert_eq!(ledger.gather_vectors, 1);
    }

    #[test]
    fn equal_contributions_average_bit_exactly() {
        let mut ledger = CommLedger::new();
        let v = vec![vec![0.1_f64, 0.3]; 7];
        let out = gather_average(&mut ledger, &v, 7, TAG).unwrap();
        assert_eq!(out, vec![0.1, 0.3]);
    }

    #[test]
    fn gather_order_is_by_id_not_completion() {
        // the reduction order is the slice order, which callers fix to
        // worker-id order; identical inputs must give identical bits
        let mut l1 = CommLedger::new();
        let mut l2 = CommLedger::new();
        let v = vec![vec![0.1_f64], vec![0.7], vec![-0.3]];
        let a = gather_average(&mut l1, &v, 3, TAG).unwrap();
        let b = gather_average(&mut l2, &v, 3, TAG).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_contribution_is_protocol_error() {
        let mut ledger = CommLedger::new();
        let v = vec![vec![1.0_f64]];
        assert!(gather_average(&mut ledger, &v, 2, TAG).is_err());
    }

    #[test]
    fn broadcast_delivers_identical_copies_and_counts_once() {
        let mut ledger = CommLedger::new();
        let x = vec![0.5_f64, -1.5];
        let copies = broadcast(&mut ledger, &x, 4, MessageKind::BroadcastModel);
        assert_eq!(copies.len(), 4);
        for c in &copies {
            assert_eq!(c, &x);
        }
        assert_eq!(ledger.broadcast_model, 1);
        broadcast(&mut ledger, &x, 4, MessageKind::BroadcastModel);
        assert_eq!(ledger.broadcast_model, 2);
    }
}
