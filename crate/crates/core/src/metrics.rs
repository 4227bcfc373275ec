//! Evaluation measures: confusion-matrix statistics, ROC/AUROC,
//! equal-error threshold selection, clustering sum-of-squares, and surrogate
//! fidelity R². All functions are pure and safe for concurrent use.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Counts of a binary decision at a fixed threshold. An instance is predicted
/// positive when its score is >= the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.true_positives + self.false_positives + self.false_negatives + self.true_negatives
    }

    pub fn false_negative_rate(&self) -> f64 {
        ratio_or_zero(self.false_negatives, self.false_negatives + self.true_positives)
    }

    pub fn false_positive_rate(&self) -> f64 {
        ratio_or_zero(self.false_positives, self.false_positives + self.true_negatives)
    }
}

fn ratio_or_zero(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Tallies predictions against ground truth at threshold `tau`.
pub fn confusion_at_threshold(scores: &[f64], labels: &[u8], tau: f64) -> Result<ConfusionMatrix> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "scores/labels must be equal-length and non-empty (got {} / {})",
            scores.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix {
        true_positives: 0,
        false_positives: 0,
        false_negatives: 0,
        true_negatives: 0,
    };
    for (&score, &label) in scores.iter().zip(labels) {
        let predicted_positive = score >= tau;
        match (predicted_positive, label == 1) {
            (true, true) => cm.true_positives += 1,
            (true, false) => cm.false_positives += 1,
            (false, true) => cm.false_negatives += 1,
            (false, false) => cm.true_negatives += 1,
        }
    }
    Ok(cm)
}

/// The single-threshold measures. Any 0/0 denominator yields 0 and the
/// measure's name is recorded in `flags`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMeasures {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub mcc: f64,
    pub f1: f64,
    pub false_negative_rate: f64,
    pub false_positive_rate: f64,
    pub flags: Vec<String>,
}

pub fn classification_measures(cm: &ConfusionMatrix) -> ClassificationMeasures {
    let tp = cm.true_positives as f64;
    let fp = cm.false_positives as f64;
    let fn_ = cm.false_negatives as f64;
    let tn = cm.true_negatives as f64;
    let mut flags = Vec::new();

    let mut guarded = |name: &str, numerator: f64, denominator: f64| {
        if denominator == 0.0 {
            flags.push(name.to_string());
            0.0
        } else {
            numerator / denominator
        }
    };

    let accuracy = guarded("accuracy", tp + tn, tp + tn + fp + fn_);
    let precision = guarded("precision", tp, tp + fp);
    let recall = guarded("recall", tp, tp + fn_);
    let specificity = guarded("specificity", tn, tn + fp);
    let f1 = guarded("f1", 2.0 * tp, 2.0 * tp + fp + fn_);
    let false_negative_rate = guarded("false_negative_rate", fn_, fn_ + tp);
    let false_positive_rate = guarded("false_positive_rate", fp, tn + fp);
    let mcc_denominator = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    let mcc = guarded("mcc", tp * tn - fp * fn_, mcc_denominator);

    ClassificationMeasures {
        accuracy,
        precision,
        recall,
        specificity,
        mcc,
        f1,
        false_negative_rate,
        false_positive_rate,
        flags,
    }
}

/// One operating point of the ROC curve. `threshold` is the smallest score
/// still predicted positive at this point; the all-negative corner carries a
/// finite sentinel above every score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub false_positive_rate: f64,
    pub true_positive_rate: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

/// Builds the ROC curve by sweeping thresholds over the sorted unique scores
/// and integrates it with the trapezoidal rule, which credits ties with 1/2
/// (equivalently the Mann-Whitney rank statistic).
pub fn roc_and_auroc(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::InvalidInput(
            "scores/labels must be equal-length and non-empty".to_string(),
        ));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels(
            "ROC requires both classes present".to_string(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let above_all = scores[order[0]] + 1.0;
    let mut points = vec![RocPoint {
        false_positive_rate: 0.0,
        true_positive_rate: 0.0,
        threshold: above_all,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < order.len() {
        let score = scores[order[i]];
        // Consume the whole tie group at this score.
        while i < order.len() && scores[order[i]] == score {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            false_positive_rate: fp as f64 / negatives as f64,
            true_positive_rate: tp as f64 / positives as f64,
            threshold: score,
        });
    }

    let mut auroc = 0.0;
    for pair in points.windows(2) {
        let dx = pair[1].false_positive_rate - pair[0].false_positive_rate;
        auroc += dx * (pair[1].true_positive_rate + pair[0].true_positive_rate) / 2.0;
    }

    Ok(RocCurve { points, auroc })
}

/// Picks the threshold that equalizes the two error rates: over candidate
/// thresholds (midpoints between consecutive sorted unique scores plus
/// below-min/above-max sentinels) it minimizes |FNR - FPR|, breaking ties by
/// smaller max(FNR, FPR) and then by smaller tau.
pub fn select_equal_error_threshold(
    scores: &[f64],
    labels: &[u8],
) -> Result<(f64, ConfusionMatrix)> {
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::InvalidInput(
            "scores/labels must be equal-length and non-empty".to_string(),
        ));
    }
    if positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateLabels(
            "threshold selection requires both classes present".to_string(),
        ));
    }

    let mut best: Option<(f64, f64, f64, ConfusionMatrix)> = None;
    for tau in candidate_thresholds(scores) {
        let cm = confusion_at_threshold(scores, labels, tau)?;
        let fnr = cm.false_negative_rate();
        let fpr = cm.false_positive_rate();
        let gap = (fnr - fpr).abs();
        let worst = fnr.max(fpr);
        let better = match &best {
            None => true,
            Some((best_gap, best_worst, best_tau, _)) => {
                gap < *best_gap
                    || (gap == *best_gap && worst < *best_worst)
                    || (gap == *best_gap && worst == *best_worst && tau < *best_tau)
            }
        };
        if better {
            best = Some((gap, worst, tau, cm));
        }
    }
    let (_, _, tau, cm) = best.expect("candidate list is never empty");
    Ok((tau, cm))
}

/// Candidate cut points: below the minimum, midpoints between consecutive
/// distinct scores, above the maximum.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    sorted.dedup();
    let mut candidates = Vec::with_capacity(sorted.len() + 1);
    candidates.push(sorted[0] - 1.0);
    for pair in sorted.windows(2) {
        candidates.push((pair[0] + pair[1]) / 2.0);
    }
    candidates.push(sorted[sorted.len() - 1] + 1.0);
    candidates
}

/// Sum-of-squares decomposition of a clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSS {
    /// Within-cluster sum of squares: sum over points of the squared distance
    /// to their assigned centroid.
    pub sswc: f64,
    /// Between-cluster sum of squares: sum over clusters of size times the
    /// squared distance from the centroid to the grand mean.
    pub ssbc: f64,
    /// ssbc / (ssbc + sswc), the fraction of total variance explained.
    pub explained_variance: f64,
    /// The literal SSBC/SSWC ratio, unavailable when sswc is 0.
    pub paper_ratio: Option<f64>,
    /// Ids of clusters that no point is assigned to.
    pub empty_clusters: Vec<usize>,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Computes the decomposition for arbitrary assignments. When centroids are
/// the exact means of their assigned points, sswc + ssbc equals the total sum
/// of squares around the grand mean.
pub fn clustering_ss(
    points: &[Vec<f64>],
    assignments: &[usize],
    centroids: &[Vec<f64>],
) -> Result<ClusterSS> {
    if points.is_empty() || points.len() != assignments.len() {
        return Err(Error::InvalidInput(
            "points/assignments must be equal-length and non-empty".to_string(),
        ));
    }
    if let Some(&bad) = assignments.iter().find(|&&a| a >= centroids.len()) {
        return Err(Error::InvalidInput(format!(
            "assignment to non-existent centroid {bad}"
        )));
    }

    let dim = points[0].len();
    let n = points.len() as f64;
    let mut grand_mean = vec![0.0; dim];
    for point in points {
        for (g, v) in grand_mean.iter_mut().zip(point) {
            *g += v;
        }
    }
    for g in &mut grand_mean {
        *g /= n;
    }

    let mut sswc = 0.0;
    let mut sizes = vec![0usize; centroids.len()];
    for (point, &assignment) in points.iter().zip(assignments) {
        sswc += squared_distance(point, &centroids[assignment]);
        sizes[assignment] += 1;
    }

    let mut ssbc = 0.0;
    for (centroid, &size) in centroids.iter().zip(&sizes) {
        ssbc += size as f64 * squared_distance(centroid, &grand_mean);
    }

    let total = ssbc + sswc;
    let explained_variance = if total == 0.0 { 0.0 } else { ssbc / total };
    let paper_ratio = if sswc == 0.0 { None } else { Some(ssbc / sswc) };
    let empty_clusters = sizes
        .iter()
        .enumerate()
        .filter(|(_, &s)| s == 0)
        .map(|(i, _)| i)
        .collect();

    Ok(ClusterSS {
        sswc,
        ssbc,
        explained_variance,
        paper_ratio,
        empty_clusters,
    })
}

/// Surrogate fidelity: R² = 1 - Σ(yᵢ - ŷᵢ)² / Σ(ŷᵢ - ȳ)², with `surrogate`
/// the local model's scores (yᵢ), `blackbox` the black-box scores (ŷᵢ), and
/// ȳ the mean of the black-box scores.
pub fn fidelity_r2(surrogate: &[f64], blackbox: &[f64]) -> Result<f64> {
    if surrogate.len() != blackbox.len() || surrogate.len() < 2 {
        return Err(Error::InvalidInput(
            "fidelity needs equal-length inputs of at least 2".to_string(),
        ));
    }
    let mean = blackbox.iter().sum::<f64>() / blackbox.len() as f64;
    let denominator: f64 = blackbox.iter().map(|y| (y - mean) * (y - mean)).sum();
    if denominator == 0.0 {
        return Err(Error::DegenerateScores);
    }
    let numerator: f64 = surrogate
        .iter()
        .zip(blackbox)
        .map(|(y, yhat)| (y - yhat) * (y - yhat))
        .sum();
    Ok(1.0 - numerator / denominator)
}

/// Literal-formula variant for comparison: the denominator deviates the
/// surrogate scores around the black-box mean instead.
pub fn fidelity_r2_literal(surrogate: &[f64], blackbox: &[f64]) -> Result<f64> {
    if surrogate.len() != blackbox.len() || surrogate.len() < 2 {
        return Err(Error::InvalidInput(
            "fidelity needs equal-length inputs of at least 2".to_string(),
        ));
    }
    let mean = blackbox.iter().sum::<f64>() / blackbox.len() as f64;
    let denominator: f64 = surrogate.iter().map(|y| (y - mean) * (y - mean)).sum();
    if denominator == 0.0 {
        return Err(Error::DegenerateScores);
    }
    let numerator: f64 = surrogate
        .iter()
        .zip(blackbox)
        .map(|(y, yhat)| (y - yhat) * (y - yhat))
        .sum();
    Ok(1.0 - numerator / denominator)
}
