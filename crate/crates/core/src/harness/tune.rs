//! Grid-point selection rules over aggregated results.

use serde::{Deserialize, Serialize};

use super::output::AggRow;
use crate::error::{Error, Result};

/// Tuning rule applied per algorithm over its (eta, r) grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionRule {
    /// Maximize the minimum-over-rounds mean train accuracy; ties go to the
    /// smaller eta, then the smaller r.
    MaxMinTrainAccuracy,
    /// Minimize the final-round mean train loss (also the fallback when a
    /// problem has no accuracy semantics).
    MinFinalTrainLoss,
}

impl SelectionRule {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "max-min-train-accuracy" => SelectionRule::MaxMinTrainAccuracy,
            "min-final-train-loss" => SelectionRule::MinFinalTrainLoss,
            other => return Err(Error::config(format!("unknown selection rule '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SelectionRule::MaxMinTrainAccuracy => "max-min-train-accuracy",
            SelectionRule::MinFinalTrainLoss => "min-final-train-loss",
        }
    }
}

/// The chosen grid point of one algorithm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Selection {
    pub algorithm: String,
    pub eta: f64,
    pub r: f64,
    pub rule_used: String,
    /// Larger is better under the rule actually used.
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_notice: Option<String>,
}

/// Selects one grid point per algorithm from the aggregate rows. Algorithms
/// without accuracy data fall back to min-final-train-loss with a notice.
pub fn tune_select(
    agg: &[AggRow],
    algorithms: &[String],
    rule: SelectionRule,
) -> Result<Vec<Selection>> {
    let mut out = Vec::with_capacity(algorithms.len());
    for alg in algorithms {
        let mut points: Vec<(f64, f64)> = agg
            .iter()
            .filter(|row| &row.algorithm == alg)
            .map(|row| (row.eta, row.r))
            .collect();
        points.dedup();
        points.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
        points.dedup();
        if points.is_empty() {
            return Err(Error::config(format!("no results for algorithm '{alg}'")));
        }

        let mut effective = rule;
        let mut notice = None;
        if rule == SelectionRule::MaxMinTrainAccuracy && !has_accuracy(agg, alg) {
            effective = SelectionRule::MinFinalTrainLoss;
            notice = Some(format!(
                "no train-accuracy data for '{alg}'; fell back to min-final-train-loss"
            ));
        }

        let mut best: Option<(f64, f64, f64)> = None; // (score, eta, r)
        for &(eta, r) in &points {
            let score = score_point(agg, alg, eta, r, effective)?;
            // strict improvement only: ascending point order bakes in the
            // smaller-eta-then-smaller-r tie-break
            if best.map_or(true, |(s, _, _)| score > s) {
                best = Some((score, eta, r));
            }
        }
        let (score, eta, r) = best.expect("non-empty grid");
        out.push(Selection {
            algorithm: alg.clone(),
            eta,
            r,
            rule_used: effective.name().into(),
            score,
            fallback_notice: notice,
        });
    }
    Ok(out)
}

fn has_accuracy(agg: &[AggRow], alg: &str) -> bool {
    agg.iter()
        .filter(|row| row.algorithm == alg)
        .all(|row| row.mean[2].is_finite())
}

fn score_point(agg: &[AggRow], alg: &str, eta: f64, r: f64, rule: SelectionRule) -> Result<f64> {
    let rows: Vec<&AggRow> = agg
        .iter()
        .filter(|row| row.algorithm == alg && row.eta == eta && row.r == r)
        .collect();
    if rows.is_empty() {
        return Err(Error::config(format!(
            "no rows for ('{alg}', eta={eta}, r={r})"
        )));
    }
    Ok(match rule {
        // The round-0 row is the shared pre-update evaluation, identical for
        // every grid point, so it is excluded from the min: otherwise every
        // monotone run ties at the initial accuracy and the rule degenerates
        // to "smallest eta". It only counts when no later round exists.
        SelectionRule::MaxMinTrainAccuracy => {
            let post: f64 = rows
                .iter()
                .filter(|row| row.round > 0)
                .map(|row| row.mean[2])
                .fold(f64::INFINITY, f64::min);
            if post.is_finite() {
                post
            } else {
                rows.iter().map(|row| row.mean[2]).fold(f64::INFINITY, f64::min)
            }
        }
        // maximize negative final loss; aborted (shorter) runs naturally
        // score by their last available round
        SelectionRule::MinFinalTrainLoss => {
            let last = rows
                .iter()
                .max_by_key(|row| row.round)
                .expect("non-empty rows");
            let loss = last.mean[1];
            if loss.is_nan() {
                f64::NEG_INFINITY
            } else {
                -loss
            }
        }
    })
}
