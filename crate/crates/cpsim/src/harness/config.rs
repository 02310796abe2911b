//! Declarative scenario configuration: scene, attack, and defense blocks,
//! JSON serialization with a schema tag, validation with field paths, and
//! dotted-path overrides for CLI flags.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::schedule::AttackMode;
use crate::attack::SegmentationParams;
use crate::scene::SensorModel;
use crate::stattest::ScoreWeights;
use crate::temporal::TemporalConfig;

pub const CONFIG_SCHEMA: &str = "cpsim.config/1";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("override '{0}' does not address an existing key")]
    BadOverridePath(String),
    #[error("override '{key}': {message}")]
    BadOverrideValue { key: String, message: String },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.to_string(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub position: (f64, f64),
    pub sensing_radius: f64,
    pub occluders_respected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// World extent in meters (width, height).
    pub bounds_m: (f64, f64),
    /// BEV grid cells (width, height).
    pub grid: (usize, usize),
    /// Meters per cell.
    pub cell_m: f64,
    pub n_objects: usize,
    /// Object speed range, meters per frame.
    pub speed_range: (f64, f64),
    pub process_noise: f64,
    /// Agent 0 is the ego.
    pub agents: Vec<AgentConfig>,
    pub sensor: SensorModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    None,
    /// Blind-area-guided perturbation.
    Bac,
    /// Untargeted random-placement baseline.
    Untargeted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub mode: AttackMode,
    /// Malicious share of all messages over the horizon.
    pub lambda: f64,
    pub n_malicious: usize,
    pub alloc_std: f64,
    pub propagation_rate: f64,
    pub delta_i: f64,
    pub delta_o: f64,
    pub w_delta: f64,
    /// Hill-climb proposals per plan.
    pub iters: usize,
    pub mask_update_fps: f64,
    pub sim_fps: f64,
    pub segmentation: SegmentationParams,
    /// Budget charge per injected/dropped box and per unit of corner shift.
    pub inject_cost: f64,
    pub drop_cost: f64,
    pub shift_cost_per_unit: f64,
    /// Shift proposal std-dev in grid units.
    pub shift_std: f64,
    pub drop_conf_max: f64,
    /// Proposal mix (inject, shift, drop).
    pub kind_weights: (f64, f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Full spatial-temporal defense.
    Gcp,
    /// Spatial-only ablation.
    GcpS,
    /// Temporal-only ablation.
    GcpT,
    /// Single-shot spatial outlier baseline with an unscaled (uniform)
    /// confidence map and a percentile threshold.
    SpatialBaseline,
    /// Fusion without any defense.
    None,
    /// Ego-only perception, no messages consumed.
    LowerBound,
}

impl Variant {
    pub fn uses_temporal(&self) -> bool {
        matches!(self, Variant::Gcp | Variant::GcpT)
    }

    pub fn uses_defense(&self) -> bool {
        !matches!(self, Variant::None | Variant::LowerBound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseConfig {
    pub variant: Variant,
    pub temporal: TemporalConfig,
    pub alpha_bh: f64,
    pub omega: ScoreWeights,
    pub nms_iou: f64,
    /// IoU threshold for differential detection and greedy matching.
    pub match_iou: f64,
    /// Percentile of calibration scores used as the baseline threshold.
    pub baseline_percentile: f64,
    pub model_path: Option<PathBuf>,
    pub calibration_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema: String,
    pub scene: SceneConfig,
    pub attack: AttackConfig,
    pub defense: DefenseConfig,
    pub frames: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    /// The default desk-scale scenario: 5 agents, 20 objects, 100 frames,
    /// moderate attack (2 malicious, ratio 0.25, unit budgets halved).
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA.to_string(),
            scene: SceneConfig {
                bounds_m: (64.0, 64.0),
                grid: (64, 64),
                cell_m: 1.0,
                n_objects: 20,
                speed_range: (0.1, 0.35),
                process_noise: 0.03,
                agents: vec![
                    AgentConfig { position: (32.0, 32.0), sensing_radius: 26.0, occluders_respected: true },
                    AgentConfig { position: (22.0, 22.0), sensing_radius: 48.0, occluders_respected: true },
                    AgentConfig { position: (42.0, 22.0), sensing_radius: 48.0, occluders_respected: true },
                    AgentConfig { position: (22.0, 42.0), sensing_radius: 48.0, occluders_respected: true },
                    AgentConfig { position: (42.0, 42.0), sensing_radius: 48.0, occluders_respected: true },
                ],
                sensor: SensorModel::default(),
            },
            attack: AttackConfig {
                kind: AttackKind::Bac,
                mode: AttackMode::R,
                lambda: 0.25,
                n_malicious: 2,
                alloc_std: 2.0,
                propagation_rate: 0.3,
                delta_i: 0.5,
                delta_o: 0.5,
                w_delta: 2.0,
                iters: 80,
                mask_update_fps: 0.5,
                sim_fps: 10.0,
                segmentation: SegmentationParams::default(),
                inject_cost: 0.08,
                drop_cost: 0.1,
                shift_cost_per_unit: 0.1,
                shift_std: 1.6,
                drop_conf_max: 0.5,
                kind_weights: (0.5, 0.4, 0.1),
            },
            defense: DefenseConfig {
                variant: Variant::Gcp,
                temporal: TemporalConfig::default(),
                alpha_bh: 0.1,
                omega: ScoreWeights::default(),
                nms_iou: 0.5,
                match_iou: 0.5,
                baseline_percentile: 0.95,
                model_path: None,
                calibration_path: None,
            },
            frames: 100,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn resolution(&self) -> f64 {
        self.scene.cell_m
    }

    pub fn grid_dims(&self) -> crate::geom::GridDims {
        crate::geom::GridDims::new(self.scene.grid.0, self.scene.grid.1)
    }

    /// Frames between attacker mask/plan recomputations.
    pub fn mask_interval(&self) -> u64 {
        (self.attack.sim_fps / self.attack.mask_update_fps).round().max(1.0) as u64
    }

    pub fn n_collaborators(&self) -> usize {
        self.scene.agents.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema != CONFIG_SCHEMA {
            return Err(invalid("schema", format!("expected {CONFIG_SCHEMA}")));
        }
        let s = &self.scene;
        if s.agents.is_empty() {
            return Err(invalid("scene.agents", "at least the ego agent is required"));
        }
        if s.bounds_m.0 <= 0.0 || s.bounds_m.1 <= 0.0 {
            return Err(invalid("scene.bounds_m", "bounds must be positive"));
        }
        if s.grid.0 == 0 || s.grid.1 == 0 {
            return Err(invalid("scene.grid", "grid must be non-empty"));
        }
        if s.cell_m <= 0.0 {
            return Err(invalid("scene.cell_m", "resolution must be positive"));
        }
        if s.speed_range.0 > s.speed_range.1 || s.speed_range.0 < 0.0 {
            return Err(invalid("scene.speed_range", "range must be ordered and non-negative"));
        }
        if s.process_noise < 0.0 {
            return Err(invalid("scene.process_noise", "must be non-negative"));
        }
        for (i, a) in s.agents.iter().enumerate() {
            if a.sensing_radius <= 0.0 {
                return Err(invalid(&format!("scene.agents[{i}].sensing_radius"), "must be positive"));
            }
        }
        let a = &self.attack;
        if a.kind != AttackKind::None {
            if !(0.0..=1.0).contains(&a.lambda) {
                return Err(invalid("attack.lambda", "must be in [0, 1]"));
            }
            if a.n_malicious > self.n_collaborators() {
                return Err(invalid("attack.n_malicious", "exceeds collaborator count"));
            }
            let total = a.lambda * self.n_collaborators() as f64 * self.frames as f64;
            if total.round() > 0.0 && (total.round() as usize) < a.n_malicious {
                return Err(invalid("attack.lambda", "budget below one message per attacker"));
            }
            if a.delta_i < 0.0 || a.delta_o < 0.0 {
                return Err(invalid("attack.delta_i", "budgets must be non-negative"));
            }
            if a.mask_update_fps <= 0.0 || a.sim_fps <= 0.0 {
                return Err(invalid("attack.mask_update_fps", "rates must be positive"));
            }
            if a.inject_cost <= 0.0 || a.drop_cost <= 0.0 || a.shift_cost_per_unit <= 0.0 {
                return Err(invalid("attack.inject_cost", "edit costs must be positive"));
            }
        }
        let d = &self.defense;
        if !(0.0..1.0).contains(&d.alpha_bh) || d.alpha_bh <= 0.0 {
            return Err(invalid("defense.alpha_bh", "must be in (0, 1)"));
        }
        if d.omega.omega_s < 0.0 || d.omega.omega_t < 0.0 || d.omega.omega_s + d.omega.omega_t <= 0.0 {
            return Err(invalid("defense.omega", "weights must be non-negative with positive sum"));
        }
        if !(0.0..=1.0).contains(&d.nms_iou) || !(0.0..=1.0).contains(&d.match_iou) {
            return Err(invalid("defense.nms_iou", "IoU thresholds must be in [0, 1]"));
        }
        if d.temporal.k_hist == 0 {
            return Err(invalid("defense.temporal.k_hist", "cache length must be at least 1"));
        }
        if !(0.0..=1.0).contains(&d.baseline_percentile) {
            return Err(invalid("defense.baseline_percentile", "must be in [0, 1]"));
        }
        if self.frames == 0 {
            return Err(invalid("frames", "must be positive"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Apply `key.path=value` overrides onto the JSON representation. The
    /// addressed key must already exist; values parse as JSON first and fall
    /// back to strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        for entry in overrides {
            let (path, raw) = entry
                .split_once('=')
                .ok_or_else(|| ConfigError::BadOverridePath(entry.clone()))?;
            let parsed: serde_json::Value = match serde_json::from_str(raw) {
                Ok(v) => v,
                Err(_) => serde_json::Value::String(raw.to_string()),
            };
            let segments: Vec<&str> = path.split('.').collect();
            *navigate(&mut value, &segments, path)? = parsed;
        }
        let cfg: ScenarioConfig =
            serde_json::from_value(value).map_err(|e| ConfigError::BadOverrideValue {
                key: overrides.join(","),
                message: e.to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn navigate<'a>(
    root: &'a mut serde_json::Value,
    segments: &[&str],
    path: &str,
) -> Result<&'a mut serde_json::Value, ConfigError> {
    let mut cursor = root;
    for seg in segments {
        cursor = match cursor {
            serde_json::Value::Object(map) => map
                .get_mut(*seg)
                .ok_or_else(|| ConfigError::BadOverridePath(path.to_string()))?,
            serde_json::Value::Array(arr) => {
                let idx: usize =
                    seg.parse().map_err(|_| ConfigError::BadOverridePath(path.to_string()))?;
                arr.get_mut(idx).ok_or_else(|| ConfigError::BadOverridePath(path.to_string()))?
            }
            _ => return Err(ConfigError::BadOverridePath(path.to_string())),
        };
    }
    Ok(cursor)
}
