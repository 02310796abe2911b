//! Detection metrics: average precision over pooled frames and the
//! attacker-detection precision/recall bookkeeping.

use serde::{Deserialize, Serialize};

use crate::geom::{iou, DetectionBox};

/// Pools per-frame matching outcomes into one precision-recall curve.
/// Matching within a frame is greedy in descending confidence; each
/// prediction takes the highest-IoU unmatched ground-truth box at or above
/// the threshold.
#[derive(Debug, Clone, Default)]
pub struct ApAccumulator {
    /// (confidence, true-positive) per prediction, across frames.
    entries: Vec<(f64, bool)>,
    n_gt: usize,
}

impl ApAccumulator {
    pub fn add_frame(&mut self, predictions: &[DetectionBox], ground_truth: &[DetectionBox], iou_thresh: f64) {
        self.n_gt += ground_truth.len();
        let mut order: Vec<usize> = (0..predictions.len()).collect();
        order.sort_by(|&a, &b| {
            predictions[b]
                .confidence
                .partial_cmp(&predictions[a].confidence)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut taken = vec![false; ground_truth.len()];
        for idx in order {
            let p = &predictions[idx];
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in ground_truth.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = iou(p, gt);
                if v >= iou_thresh && best.map_or(true, |(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    self.entries.push((p.confidence, true));
                }
                None => self.entries.push((p.confidence, false)),
            }
        }
    }

    /// Area under the interpolated precision-recall curve.
    pub fn ap(&self) -> f64 {
        if self.n_gt == 0 {
            return 0.0;
        }
        let mut entries = self.entries.clone();
        entries.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(entries.len());
        for (_, hit) in entries {
            if hit {
                tp += 1;
            } else {
                fp += 1;
            }
            let recall = tp as f64 / self.n_gt as f64;
            let precision = tp as f64 / (tp + fp) as f64;
            points.push((recall, precision));
        }
        // Monotone precision envelope, integrated over recall steps.
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for i in 0..points.len() {
            let (r, _) = points[i];
            if r > prev_recall {
                let max_p = points[i..].iter().map(|&(_, p)| p).fold(0.0, f64::max);
                ap += (r - prev_recall) * max_p;
                prev_recall = r;
            }
        }
        ap
    }
}

/// Average precision of one prediction set against one ground-truth set.
pub fn ap_at_iou(predictions: &[DetectionBox], ground_truth: &[DetectionBox], iou_thresh: f64) -> f64 {
    let mut acc = ApAccumulator::default();
    acc.add_frame(predictions, ground_truth, iou_thresh);
    acc.ap()
}

/// Binary classification counts for attacker detection.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionCounts {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
}

impl DetectionCounts {
    pub fn record(&mut self, rejected: bool, malicious: bool) {
        match (rejected, malicious) {
            (true, true) => self.true_positives += 1,
            (true, false) => self.false_positives += 1,
            (false, true) => self.false_negatives += 1,
            (false, false) => {}
        }
    }

    pub fn precision(&self) -> f64 {
        let denom = self.true_positives + self.false_positives;
        if denom == 0 {
            0.0
        } else {
            self.true_positives as f64 / denom as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let denom = self.true_positives + self.false_negatives;
        if denom == 0 {
            0.0
        } else {
            self.true_positives as f64 / denom as f64
        }
    }

    pub fn f1(&self) -> f64 {
        let p = self.precision();
        let r = self.recall();
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }

    /// Pooled empirical false discovery rate.
    pub fn fdr(&self) -> f64 {
        let denom = self.true_positives + self.false_positives;
        if denom == 0 {
            0.0
        } else {
            self.false_positives as f64 / denom as f64
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

/// One-sided paired t statistic for the hypothesis mean(a - b) > 0.
/// Returns (t, degrees of freedom); a degenerate all-equal sample gives an
/// infinite t when the mean difference is positive.
pub fn paired_t(a: &[f64], b: &[f64]) -> (f64, usize) {
    assert_eq!(a.len(), b.len());
    let diffs: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    let (mean, std) = mean_std(&diffs);
    let n = diffs.len();
    if std == 0.0 {
        let t = if mean > 0.0 {
            f64::INFINITY
        } else if mean < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        };
        return (t, n.saturating_sub(1));
    }
    (mean / (std / (n as f64).sqrt()), n - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sq(x: f64, y: f64, conf: f64) -> DetectionBox {
        DetectionBox::new([x, y, x + 2.0, y, x + 2.0, y + 2.0, x, y + 2.0], 0.9, conf, 0)
    }

    #[test]
    fn perfect_predictions_give_ap_one() {
        let gt = vec![sq(0.0, 0.0, 1.0), sq(5.0, 0.0, 1.0), sq(10.0, 0.0, 1.0)];
        assert_relative_eq!(ap_at_iou(&gt, &gt, 0.5), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_predictions_give_ap_zero() {
        let gt = vec![sq(0.0, 0.0, 1.0)];
        assert_eq!(ap_at_iou(&[], &gt, 0.5), 0.0);
    }

    /// Hand-computed PR integral: three predictions (one duplicate on a
    /// matched gt, one miss), two ground-truth boxes.
    #[test]
    fn hand_case_matches_manual_pr_curve() {
        let gt = vec![sq(0.0, 0.0, 1.0), sq(10.0, 0.0, 1.0)];
        let preds = vec![
            sq(0.0, 0.0, 0.9),  // TP
            sq(0.1, 0.0, 0.8),  // duplicate of gt0 -> FP (gt taken)
            sq(20.0, 0.0, 0.7), // miss -> FP
        ];
        // Curve: (r=0.5, p=1.0), (0.5, 0.5), (0.5, 1/3); gt1 never found.
        // AP = 0.5 * 1.0 = 0.5.
        assert_relative_eq!(ap_at_iou(&preds, &gt, 0.5), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn lower_confidence_duplicate_ranks_after_match() {
        // The true box has lower confidence than a far false positive: the
        // envelope interpolation still credits the recall step.
        let gt = vec![sq(0.0, 0.0, 1.0)];
        let preds = vec![sq(30.0, 0.0, 0.95), sq(0.0, 0.0, 0.5)];
        // Entries: FP@0.95, TP@0.5 -> points (0,0.0)... curve:
        // after FP: r=0, p=0; after TP: r=1, p=0.5 -> AP = 0.5.
        assert_relative_eq!(ap_at_iou(&preds, &gt, 0.5), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn detection_counts_and_rates() {
        let mut c = DetectionCounts::default();
        c.record(true, true);
        c.record(true, false);
        c.record(false, true);
        c.record(false, false);
        assert_relative_eq!(c.precision(), 0.5);
        assert_relative_eq!(c.recall(), 0.5);
        assert_relative_eq!(c.f1(), 0.5);
        assert_relative_eq!(c.fdr(), 0.5);
    }

    #[test]
    fn paired_t_on_constant_positive_shift() {
        // Exactly representable shift so the difference variance is zero.
        let a = vec![2.0, 3.0, 4.0, 3.5];
        let b = vec![1.0, 2.0, 3.0, 2.5];
        let (t, dof) = paired_t(&a, &b);
        assert_eq!(dof, 3);
        assert!(t.is_infinite() && t > 0.0);
        let (t2, _) = paired_t(&b, &a);
        assert!(t2.is_infinite() && t2 < 0.0);

        // A noisy positive shift gives a finite positive statistic.
        let c = vec![1.12, 1.19, 1.33, 1.27];
        let d = vec![1.0, 1.1, 1.2, 1.15];
        let (t3, _) = paired_t(&c, &d);
        assert!(t3.is_finite() && t3 > 0.0);
    }
}
