//! Calibration-set construction from attack-free runs. The raw score
//! components are stored variant-independent; each defense variant derives
//! its conformal reference lists from them at load time.

use serde::{Deserialize, Serialize};

use super::config::{AttackKind, ScenarioConfig, Variant};
use super::trace::TraceMode;
use super::{HarnessError, RuntimeAssets};

pub const CALIBRATION_DATA_SCHEMA: &str = "cpsim.calibration/1";

/// Raw per-(frame, collaborator) score components from a clean run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreComponents {
    /// Confidence-scaled spatial concordance loss.
    pub l_csc: f64,
    /// The same loss under a uniform confidence map.
    pub l_csc_uniform: f64,
    /// Temporal anomaly score, absent while the flow cache fills.
    pub l_ta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationData {
    pub schema: String,
    pub seeds: Vec<u64>,
    /// Rows where the temporal score exists.
    pub full: Vec<ScoreComponents>,
    /// Startup rows (flow cache not yet filled).
    pub startup: Vec<ScoreComponents>,
}

impl CalibrationData {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("calibration serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let data: CalibrationData =
            serde_json::from_str(text).map_err(|e| HarnessError::Other(e.to_string()))?;
        if data.schema != CALIBRATION_DATA_SCHEMA {
            return Err(HarnessError::Other(format!(
                "calibration schema mismatch: {}",
                data.schema
            )));
        }
        Ok(data)
    }
}

/// Run attack-free scenarios over the given seeds and pool every per-agent
/// score component. The runs use the same scene and defense thresholds as
/// the target config but no attack and no decision layer.
pub fn build_calibration(
    base: &ScenarioConfig,
    seeds: &[u64],
    assets: &RuntimeAssets,
) -> Result<CalibrationData, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Other("calibration requires at least one run".into()));
    }
    let cfgs: Vec<ScenarioConfig> = seeds
        .iter()
        .map(|&seed| {
            let mut cfg = base.clone();
            cfg.seed = seed;
            cfg.attack.kind = AttackKind::None;
            cfg.defense.variant = Variant::None;
            cfg
        })
        .collect();
    let results = super::run_batch(&cfgs, assets, TraceMode::Off);
    let mut full = Vec::new();
    let mut startup = Vec::new();
    for out in results {
        let out = out?;
        full.extend(out.result.components_full);
        startup.extend(out.result.components_startup);
    }
    Ok(CalibrationData {
        schema: CALIBRATION_DATA_SCHEMA.to_string(),
        seeds: seeds.to_vec(),
        full,
        startup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibration_requires_runs() {
        let cfg = ScenarioConfig::default();
        assert!(build_calibration(&cfg, &[], &RuntimeAssets::default()).is_err());
    }

    #[test]
    fn calibration_is_deterministic_given_seeds() {
        let mut cfg = ScenarioConfig::default();
        cfg.frames = 15;
        let assets = RuntimeAssets::default();
        let a = build_calibration(&cfg, &[1, 2], &assets).unwrap();
        let b = build_calibration(&cfg, &[1, 2], &assets).unwrap();
        assert_eq!(a, b);
        assert!(!a.startup.is_empty());
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = ScenarioConfig::default();
        cfg.frames = 10;
        let data = build_calibration(&cfg, &[3], &RuntimeAssets::default()).unwrap();
        let back = CalibrationData::from_json(&data.to_json()).unwrap();
        assert_eq!(data, back);
    }
}
