//! Scoring estimated sources against ground truth: greedy matching inside a
//! tolerance radius followed by precision, recall and F-score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{distance, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub truth: usize,
    pub estimate: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub pairs: Vec<MatchedPair>,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

/// Greedy bipartite matching: every pair closer than `radius` (strictly) is
/// an edge; edges are taken in ascending `(distance, truth index, estimate
/// index)` order, skipping any that touch an already matched vertex.
pub fn greedy_match<const D: usize>(
    truth: &[Point<D>],
    estimate: &[Point<D>],
    radius: f64,
) -> Result<MatchResult> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tolerance radius must be > 0, got {radius}"
        )));
    }
    let mut edges = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        for (j, e) in estimate.iter().enumerate() {
            let d = distance(t, e);
            if d < radius {
                edges.push(MatchedPair {
                    truth: i,
                    estimate: j,
                    distance: d,
                });
            }
        }
    }
    edges.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.truth.cmp(&b.truth))
            .then(a.estimate.cmp(&b.estimate))
    });

    let mut used_truth = vec![false; truth.len()];
    let mut used_est = vec![false; estimate.len()];
    let mut pairs = Vec::new();
    for e in edges {
        if used_truth[e.truth] || used_est[e.estimate] {
            continue;
        }
        used_truth[e.truth] = true;
        used_est[e.estimate] = true;
        pairs.push(e);
    }

    let tp = pairs.len();
    let mut result = MatchResult {
        pairs,
        true_positives: tp,
        false_positives: estimate.len() - tp,
        false_negatives: truth.len() - tp,
        precision: 0.0,
        recall: 0.0,
        fscore: 0.0,
    };
    // Empty-vs-empty keeps zero scores here; f_score reports it as undefined.
    if let Ok((p, r, f)) = f_score(&result) {
        result.precision = p;
        result.recall = r;
        result.fscore = f;
    }
    Ok(result)
}

/// `(precision, recall, F)` with precision = TP/(TP+FP) and recall = TP/(TP+FN).
pub fn f_score(m: &MatchResult) -> Result<(f64, f64, f64)> {
    let n_truth = m.true_positives + m.false_negatives;
    let n_est = m.true_positives + m.false_positives;
    if n_truth == 0 && n_est == 0 {
        return Err(Error::UndefinedScore);
    }
    let tp = m.true_positives as f64;
    let precision = if n_est == 0 { 0.0 } else { tp / n_est as f64 };
    let recall = if n_truth == 0 { 0.0 } else { tp / n_truth as f64 };
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f))
}

/// Matching followed by scoring. An empty truth with an empty estimate
/// counts as a perfect score.
pub fn score<const D: usize>(truth: &[Point<D>], estimate: &[Point<D>], radius: f64) -> Result<f64> {
    if truth.is_empty() && estimate.is_empty() {
        return Ok(1.0);
    }
    Ok(greedy_match(truth, estimate, radius)?.fscore)
}
