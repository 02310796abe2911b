//! Score fusion and the multiple-testing layer: combined spatial-temporal
//! scores are converted to conformal p-values against an attack-free
//! calibration set, the Benjamini-Hochberg step-up rule picks the rejected
//! agents at a controlled false discovery rate, and a per-frame trust state
//! quarantines them until the next frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatError {
    #[error("calibration set is empty")]
    EmptyCalibration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub omega_s: f64,
    pub omega_t: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self { omega_s: 1.0, omega_t: 1.0 }
    }
}

/// Weighted combination of the (normalized) spatial and temporal scores.
pub fn combined_score(l_csc: f64, l_ta: f64, w: &ScoreWeights) -> f64 {
    w.omega_s * l_csc + w.omega_t * l_ta
}

/// Min/max statistics used to normalize raw component scores before
/// weighting, fitted on the calibration runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRange {
    pub min: f64,
    pub max: f64,
}

impl ScoreRange {
    pub fn fit(values: &[f64]) -> Self {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !min.is_finite() || !max.is_finite() {
            return Self { min: 0.0, max: 1.0 };
        }
        Self { min, max }
    }

    /// Affine map of the calibration range onto [0, 1]; test-time values
    /// may exceed it.
    pub fn normalize(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        if span <= 0.0 {
            0.0
        } else {
            (v - self.min) / span
        }
    }
}

/// Sorted attack-free combined scores plus the component normalization
/// ranges and the seeds that produced them.
///
/// Two regimes are kept: full spatial-temporal scores, and spatial-only
/// scores for frames where the flow cache is not yet filled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSet {
    pub schema: String,
    /// Ascending.
    pub scores: Vec<f64>,
    /// Ascending; the startup regime where only the spatial score exists.
    pub spatial_only_scores: Vec<f64>,
    pub spatial_range: ScoreRange,
    pub temporal_range: ScoreRange,
    pub weights: ScoreWeights,
    pub provenance_seeds: Vec<u64>,
}

pub const CALIBRATION_SCHEMA: &str = "cpsim.calibration/1";

impl CalibrationSet {
    pub fn new(
        mut scores: Vec<f64>,
        mut spatial_only_scores: Vec<f64>,
        spatial_range: ScoreRange,
        temporal_range: ScoreRange,
        weights: ScoreWeights,
        provenance_seeds: Vec<u64>,
    ) -> Result<Self, StatError> {
        if scores.is_empty() {
            return Err(StatError::EmptyCalibration);
        }
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        spatial_only_scores.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        Ok(Self {
            schema: CALIBRATION_SCHEMA.to_string(),
            scores,
            spatial_only_scores,
            spatial_range,
            temporal_range,
            weights,
            provenance_seeds,
        })
    }

    /// Upper percentile of the calibration scores (for threshold-style
    /// baselines).
    pub fn percentile(&self, q: f64) -> f64 {
        let n = self.scores.len();
        let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
        self.scores[idx]
    }
}

/// Conformal p-value of a score against a sorted calibration set:
/// `(1 + #{s in S : s >= score}) / (1 + |S|)`.
pub fn conformal_p(score: f64, sorted_scores: &[f64]) -> Result<f64, StatError> {
    if sorted_scores.is_empty() {
        return Err(StatError::EmptyCalibration);
    }
    let idx = sorted_scores.partition_point(|&s| s < score);
    let count_geq = sorted_scores.len() - idx;
    Ok((1 + count_geq) as f64 / (1 + sorted_scores.len()) as f64)
}

/// Benjamini-Hochberg step-up selection. Returns the rejected hypothesis
/// indices (into the input order) and the largest qualifying rank, if any.
pub fn bh_select(p_values: &[f64], alpha_bh: f64) -> (Vec<usize>, Option<usize>) {
    let m = p_values.len();
    if m == 0 {
        return (Vec::new(), None);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].partial_cmp(&p_values[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut cutoff_rank = None;
    for (rank, &idx) in order.iter().enumerate() {
        let threshold = (rank + 1) as f64 / m as f64 * alpha_bh;
        if p_values[idx] <= threshold {
            cutoff_rank = Some(rank + 1);
        }
    }
    match cutoff_rank {
        None => (Vec::new(), None),
        Some(j) => {
            let p_cut = p_values[order[j - 1]];
            let rejected: Vec<usize> = (0..m).filter(|&i| p_values[i] <= p_cut).collect();
            (rejected, Some(j))
        }
    }
}

/// Per-agent verdict for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyVerdict {
    pub agent_id: u32,
    pub l_csc: f64,
    pub l_ta: f64,
    pub l_st: f64,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub frame: u64,
    pub agent_id: u32,
}

/// Per-agent quarantine ledger. A rejection quarantines the agent for the
/// remainder of the current frame only; re-admission is automatic at the
/// next frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrustState {
    /// (agent, quarantined-until-exclusive-frame) pairs, kept sorted by agent.
    quarantined_until: Vec<(u32, u64)>,
    pub log: Vec<DetectionEvent>,
}

impl TrustState {
    pub fn is_quarantined(&self, agent_id: u32, frame: u64) -> bool {
        self.quarantined_until
            .iter()
            .any(|&(a, until)| a == agent_id && frame < until)
    }

    /// Apply one frame's verdicts: rejected agents are quarantined through
    /// the end of this frame. Idempotent within a frame.
    pub fn update(&mut self, verdicts: &[AnomalyVerdict], frame: u64) {
        for v in verdicts {
            if !v.rejected {
                continue;
            }
            let until = frame + 1;
            match self.quarantined_until.iter_mut().find(|(a, _)| *a == v.agent_id) {
                Some(entry) => {
                    if entry.1 < until {
                        entry.1 = until;
                        self.log.push(DetectionEvent { frame, agent_id: v.agent_id });
                    }
                }
                None => {
                    self.quarantined_until.push((v.agent_id, until));
                    self.quarantined_until.sort_by_key(|&(a, _)| a);
                    self.log.push(DetectionEvent { frame, agent_id: v.agent_id });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn combined_score_degenerations() {
        let s = combined_score(0.4, 0.7, &ScoreWeights { omega_s: 1.0, omega_t: 0.0 });
        assert_relative_eq!(s, 0.4);
        let t = combined_score(0.4, 0.7, &ScoreWeights { omega_s: 0.0, omega_t: 1.0 });
        assert_relative_eq!(t, 0.7);
        let both = combined_score(0.2, 0.3, &ScoreWeights::default());
        assert_relative_eq!(both, 0.5);
    }

    #[test]
    fn conformal_extremes() {
        let cal = vec![1.0, 2.0, 3.0, 4.0];
        // Above the maximum: strictest attainable p.
        assert_relative_eq!(conformal_p(10.0, &cal).unwrap(), 1.0 / 5.0);
        // At or below the minimum: p = 1.
        assert_relative_eq!(conformal_p(0.5, &cal).unwrap(), 1.0);
        assert_relative_eq!(conformal_p(1.0, &cal).unwrap(), 1.0);
    }

    #[test]
    fn conformal_direct_count() {
        let cal = vec![1.0, 2.0, 3.0, 4.0];
        // score 2.5: two calibration scores >= it -> (1+2)/5.
        assert_relative_eq!(conformal_p(2.5, &cal).unwrap(), 0.6);
    }

    #[test]
    fn conformal_empty_is_error() {
        assert_eq!(conformal_p(1.0, &[]).unwrap_err(), StatError::EmptyCalibration);
    }

    #[test]
    fn bh_hand_worked_example() {
        // p = {0.01, 0.04, 0.2}, alpha = 0.1: thresholds 0.0333/0.0667/0.1,
        // largest qualifying rank is 2, reject the two smallest.
        let (rejected, cutoff) = bh_select(&[0.2, 0.01, 0.04], 0.1);
        assert_eq!(cutoff, Some(2));
        assert_eq!(rejected, vec![1, 2]);
    }

    #[test]
    fn bh_all_ones_rejects_none() {
        let (rejected, cutoff) = bh_select(&[1.0, 1.0, 1.0], 0.1);
        assert!(rejected.is_empty());
        assert_eq!(cutoff, None);
    }

    #[test]
    fn bh_single_test_boundary_inclusive() {
        let (rejected, _) = bh_select(&[0.1], 0.1);
        assert_eq!(rejected, vec![0]);
        let (rejected, _) = bh_select(&[0.10001], 0.1);
        assert!(rejected.is_empty());
    }

    /// Direct step-up reference on random p-vectors.
    #[test]
    fn bh_matches_reference_on_random_vectors() {
        use rand::Rng;
        for seed in 0..200u64 {
            let mut rng = crate::rng::derive(seed, "bh", &[]);
            let m = rng.gen_range(1..=12);
            let ps: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            let alpha = rng.gen_range(0.01..0.3);
            let (rejected, _) = bh_select(&ps, alpha);

            // Reference: sort, scan from the largest rank down.
            let mut sorted: Vec<f64> = ps.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut cut: Option<f64> = None;
            for j in (1..=m).rev() {
                if sorted[j - 1] <= j as f64 / m as f64 * alpha {
                    cut = Some(sorted[j - 1]);
                    break;
                }
            }
            let expect: Vec<usize> = match cut {
                None => vec![],
                Some(c) => (0..m).filter(|&i| ps[i] <= c).collect(),
            };
            assert_eq!(rejected, expect, "seed {seed}");
        }
    }

    proptest! {
        /// Rejections are downward-closed in p.
        #[test]
        fn bh_rejections_downward_closed(ps in proptest::collection::vec(0.0..1.0f64, 1..10)) {
            let (rejected, _) = bh_select(&ps, 0.1);
            if let Some(&max_rej) = rejected.iter().max_by(|&&a, &&b| ps[a].partial_cmp(&ps[b]).unwrap()) {
                for i in 0..ps.len() {
                    if ps[i] < ps[max_rej] {
                        prop_assert!(rejected.contains(&i));
                    }
                }
            }
        }

        /// Conformal p is monotone non-increasing in the score.
        #[test]
        fn conformal_monotone(mut cal in proptest::collection::vec(0.0..10.0f64, 1..50), a in 0.0..10.0f64, b in 0.0..10.0f64) {
            cal.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p_lo = conformal_p(lo, &cal).unwrap();
            let p_hi = conformal_p(hi, &cal).unwrap();
            prop_assert!(p_hi <= p_lo);
        }

        /// Ranks decide: a strictly increasing transform applied to scores
        /// and calibration together leaves the rejected set unchanged.
        #[test]
        fn rejections_invariant_under_monotone_transform(
            mut cal in proptest::collection::vec(0.0..10.0f64, 4..40),
            scores in proptest::collection::vec(0.0..10.0f64, 1..8),
        ) {
            cal.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let f = |v: f64| (v * 0.7).exp(); // strictly increasing
            let ps: Vec<f64> = scores.iter().map(|&s| conformal_p(s, &cal).unwrap()).collect();
            let cal_t: Vec<f64> = cal.iter().map(|&v| f(v)).collect();
            let ps_t: Vec<f64> = scores.iter().map(|&s| conformal_p(f(s), &cal_t).unwrap()).collect();
            let (r1, _) = bh_select(&ps, 0.1);
            let (r2, _) = bh_select(&ps_t, 0.1);
            prop_assert_eq!(r1, r2);
        }
    }

    #[test]
    fn trust_quarantine_lifts_next_frame() {
        let mut state = TrustState::default();
        let verdict = AnomalyVerdict {
            agent_id: 3,
            l_csc: 1.0,
            l_ta: 1.0,
            l_st: 2.0,
            p_value: 0.001,
            rejected: true,
        };
        state.update(&[verdict.clone()], 10);
        assert!(state.is_quarantined(3, 10));
        assert!(!state.is_quarantined(3, 11));
        assert_eq!(state.log.len(), 1);

        // Double rejection in the same frame is idempotent.
        state.update(&[verdict], 10);
        assert_eq!(state.log.len(), 1);
    }

    #[test]
    fn trust_unchanged_without_rejections() {
        let mut state = TrustState::default();
        let verdict = AnomalyVerdict {
            agent_id: 1,
            l_csc: 0.0,
            l_ta: 0.0,
            l_st: 0.0,
            p_value: 0.9,
            rejected: false,
        };
        let before = state.clone();
        state.update(&[verdict], 5);
        assert_eq!(state, before);
    }

    #[test]
    fn score_range_normalization() {
        let r = ScoreRange::fit(&[2.0, 4.0, 6.0]);
        assert_relative_eq!(r.normalize(2.0), 0.0);
        assert_relative_eq!(r.normalize(6.0), 1.0);
        assert_relative_eq!(r.normalize(8.0), 1.5);
        let degenerate = ScoreRange::fit(&[3.0, 3.0]);
        assert_eq!(degenerate.normalize(5.0), 0.0);
    }

    #[test]
    fn calibration_percentile() {
        let cal = CalibrationSet::new(
            (1..=100).map(f64::from).collect(),
            vec![0.0],
            ScoreRange { min: 0.0, max: 1.0 },
            ScoreRange { min: 0.0, max: 1.0 },
            ScoreWeights::default(),
            vec![1],
        )
        .unwrap();
        assert_relative_eq!(cal.percentile(0.95), 95.0);
        assert_relative_eq!(cal.percentile(1.0), 100.0);
    }
}
