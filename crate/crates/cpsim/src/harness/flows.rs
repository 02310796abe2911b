//! Flow-dataset construction: clean simulations are replayed through the
//! chain matcher over every fused box (not only low-confidence heads, since
//! training needs coverage), and the resulting full-depth flows are split
//! 8:1:1 into train/validation/test by scenario.

use serde::{Deserialize, Serialize};

use super::config::{AttackKind, ScenarioConfig, Variant};
use super::HarnessError;
use crate::geom::ConfidenceMap;
use crate::rng::derive;
use crate::scene::{fuse_late, sense, step_world, AgentPose};
use crate::temporal::flow::StepProvenance;
use crate::temporal::{bfm_chain_match, FlowCache};

pub const FLOW_SCHEMA: &str = "cpsim.flow/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub schema: String,
    /// Chronological corner steps, K+1 entries.
    pub steps: Vec<[f64; 8]>,
    pub provenance: Vec<StepProvenance>,
    pub scenario_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Deterministic 8:1:1 split by scenario index.
pub fn split_of(scenario_index: usize) -> Split {
    match scenario_index % 10 {
        8 => Split::Val,
        9 => Split::Test,
        _ => Split::Train,
    }
}

#[derive(Debug, Default)]
pub struct FlowDataset {
    pub train: Vec<FlowRecord>,
    pub val: Vec<FlowRecord>,
    pub test: Vec<FlowRecord>,
}

impl FlowDataset {
    pub fn split_mut(&mut self, split: Split) -> &mut Vec<FlowRecord> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Generate candidate flows from clean scenario replays.
pub fn build_flow_dataset(
    base: &ScenarioConfig,
    n_scenarios: usize,
    seed: u64,
) -> Result<FlowDataset, HarnessError> {
    if n_scenarios == 0 {
        return Err(HarnessError::Other("flow dataset requires at least one scenario".into()));
    }
    let mut dataset = FlowDataset::default();
    for idx in 0..n_scenarios {
        let mut cfg = base.clone();
        cfg.seed = seed.wrapping_add(idx as u64);
        cfg.attack.kind = AttackKind::None;
        cfg.defense.variant = Variant::None;
        cfg.validate()?;
        let flows = collect_scenario_flows(&cfg)?;
        dataset.split_mut(split_of(idx)).extend(flows);
    }
    if dataset.train.is_empty() {
        return Err(HarnessError::Other("no training flows were produced".into()));
    }
    Ok(dataset)
}

/// Replay one clean scenario and harvest every full-depth chain from the
/// pairwise-fused detection streams.
fn collect_scenario_flows(cfg: &ScenarioConfig) -> Result<Vec<FlowRecord>, HarnessError> {
    let dims = cfg.grid_dims();
    let resolution = cfg.resolution();
    let tcfg = &cfg.defense.temporal;
    let n_collab = cfg.n_collaborators();
    let poses: Vec<AgentPose> = cfg
        .scene
        .agents
        .iter()
        .enumerate()
        .map(|(i, a)| AgentPose {
            agent_id: i as u32,
            position: a.position,
            sensing_radius: a.sensing_radius,
            occluders_respected: a.occluders_respected,
        })
        .collect();
    let mut world = super::initial_world(cfg);
    let mut caches: Vec<FlowCache> = (0..n_collab).map(|_| FlowCache::new(tcfg)).collect();
    let mut out = Vec::new();
    for frame in 0..cfg.frames as u64 {
        if frame > 0 {
            let mut rng = derive(cfg.seed, "world-step", &[frame]);
            world = step_world(&world, cfg.scene.process_noise, &mut rng);
        }
        let sensed: Vec<(crate::geom::DetectionSet, ConfidenceMap)> = poses
            .iter()
            .map(|pose| {
                let mut rng = derive(cfg.seed, "sense", &[frame, u64::from(pose.agent_id)]);
                sense(&world, pose, &cfg.scene.sensor, dims, resolution, &mut rng)
            })
            .collect();
        let y_e = &sensed[0].0;
        for ci in 0..n_collab {
            let y_ei = fuse_late(y_e, &[&sensed[ci + 1].0], cfg.defense.nms_iou)?;
            if caches[ci].is_ready() {
                let sets = bfm_chain_match(&y_ei, &mut caches[ci], tcfg);
                for flow in sets.candidates {
                    out.push(FlowRecord {
                        schema: FLOW_SCHEMA.to_string(),
                        steps: flow.steps,
                        provenance: flow.provenance,
                        scenario_seed: cfg.seed,
                    });
                }
            }
            caches[ci].push_observed(y_ei);
        }
    }
    Ok(out)
}

pub fn write_jsonl(records: &[FlowRecord], path: &std::path::Path) -> Result<(), HarnessError> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).expect("flow record serializes"));
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_jsonl(path: &std::path::Path) -> Result<Vec<FlowRecord>, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: FlowRecord = serde_json::from_str(line)
            .map_err(|e| HarnessError::Other(format!("line {}: {e}", i + 1)))?;
        if record.schema != FLOW_SCHEMA {
            return Err(HarnessError::Other(format!("line {}: schema {}", i + 1, record.schema)));
        }
        out.push(record);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.frames = 20;
        cfg.scene.n_objects = 10;
        cfg
    }

    #[test]
    fn zero_scenarios_is_an_error() {
        assert!(build_flow_dataset(&small_cfg(), 0, 1).is_err());
    }

    #[test]
    fn flows_have_full_depth_and_split_sizes_hold() {
        let cfg = small_cfg();
        let ds = build_flow_dataset(&cfg, 10, 5).unwrap();
        let k = cfg.defense.temporal.k_hist;
        for r in ds.train.iter().chain(ds.val.iter()).chain(ds.test.iter()) {
            assert_eq!(r.steps.len(), k + 1);
            assert_eq!(r.provenance.len(), k + 1);
        }
        // 8:1:1 by scenario: 10 scenarios -> 8/1/1.
        let train_seeds: std::collections::BTreeSet<u64> =
            ds.train.iter().map(|r| r.scenario_seed).collect();
        let val_seeds: std::collections::BTreeSet<u64> =
            ds.val.iter().map(|r| r.scenario_seed).collect();
        let test_seeds: std::collections::BTreeSet<u64> =
            ds.test.iter().map(|r| r.scenario_seed).collect();
        assert_eq!(train_seeds.len(), 8);
        assert!(val_seeds.len() <= 1 && test_seeds.len() <= 1);
        assert!(train_seeds.is_disjoint(&val_seeds));
        assert!(train_seeds.is_disjoint(&test_seeds));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flows.jsonl");
        let ds = build_flow_dataset(&small_cfg(), 2, 9).unwrap();
        write_jsonl(&ds.train, &path).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(ds.train, back);
    }
}
