//! Temporal consistency: low-confidence flow selection, chain-based BEV
//! flow matching over a per-collaborator cache with Kalman gap filling, and
//! LSTM-autoencoder reconstruction scoring.

pub mod flow;
pub mod kalman;
pub mod lstm;

pub use flow::{bfm_chain_match, select_low_confidence, BevFlow, FlowCache, FlowSets, InterpolateOutcome, StepProvenance};
pub use kalman::{kf_predict, kf_update, KalmanError, KalmanState};
pub use lstm::{l_tr, lstm_cell, normalize_steps, train_ae, LstmAeModel, TrainConfig};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalConfig {
    /// Cache length K: flows span K+1 steps.
    pub k_hist: usize,
    /// Maximum consecutive Kalman interpolations before a cache flush.
    pub l_interp: usize,
    /// Chain-match cost threshold.
    pub tau: f64,
    /// Ego-cell confidence below which a box is a low-confidence head.
    pub conf_low: f64,
    /// Penalty per unmatched flow.
    pub kappa_p: f64,
    /// IoU-term weight shared with the spatial matching cost.
    pub phi: f64,
    /// Kalman process/observation noise scales (grid units squared).
    pub q_scale: f64,
    pub r_scale: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            k_hist: 5,
            l_interp: 3,
            tau: 1.0,
            conf_low: 0.3,
            kappa_p: 0.15,
            phi: 1.0,
            q_scale: 0.01,
            r_scale: 0.05,
        }
    }
}

/// Temporal anomaly score: candidate reconstruction losses plus the
/// unmatched-flow penalty.
pub fn l_ta(sets: &FlowSets, model: &LstmAeModel, cfg: &TemporalConfig) -> f64 {
    let mut total = 0.0;
    for flow in &sets.candidates {
        let input = normalize_steps(&flow.steps, model.grid);
        let recon = model.reconstruct(&input);
        total += l_tr(&input, &recon);
    }
    total + cfg.kappa_p * sets.unmatched.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive;
    use approx::assert_relative_eq;

    #[test]
    fn l_ta_empty_sets_is_zero() {
        let model = LstmAeModel::init(4, 3, (16, 16), &mut derive(0, "m", &[]));
        let sets = FlowSets { candidates: vec![], unmatched: vec![] };
        assert_eq!(l_ta(&sets, &model, &TemporalConfig::default()), 0.0);
    }

    #[test]
    fn l_ta_counts_unmatched_penalty() {
        let model = LstmAeModel::init(4, 3, (16, 16), &mut derive(0, "m", &[]));
        let mk = || BevFlow {
            steps: vec![[1.0; 8]],
            provenance: vec![StepProvenance::Observed],
            head_tainted: false,
        };
        let sets = FlowSets { candidates: vec![], unmatched: vec![mk(), mk(), mk()] };
        let cfg = TemporalConfig::default();
        assert_relative_eq!(l_ta(&sets, &model, &cfg), 0.3, epsilon = 1e-12);

        let sets4 = FlowSets { candidates: vec![], unmatched: vec![mk(), mk(), mk(), mk()] };
        let delta = l_ta(&sets4, &model, &cfg) - l_ta(&sets, &model, &cfg);
        assert_relative_eq!(delta, cfg.kappa_p, epsilon = 1e-12);
    }
}
