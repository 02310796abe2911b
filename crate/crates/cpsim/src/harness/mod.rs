//! Scenario orchestration: world stepping, per-agent sensing, scheduled
//! message perturbation, late fusion, defense scoring, the per-frame
//! verdict, and metric accumulation.

pub mod calibrate;
pub mod config;
pub mod evaluate;
pub mod flows;
pub mod metrics;
pub mod plots;
pub mod sweep;
pub mod trace;

pub use calibrate::{build_calibration, CalibrationData, ScoreComponents};
pub use evaluate::{evaluate, EvalReport, EvalRow};
pub use config::{AttackConfig, AttackKind, ConfigError, ScenarioConfig, Variant};
pub use metrics::{ap_at_iou, DetectionCounts};
pub use trace::{TraceMode, TraceRecord};

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    apply_plan, baseline_attack, differential_detect, optimize_bac, schedule_p, schedule_r,
    schedule_s, segment_blind_regions, AttackBudgets, AttackError, AttackSchedule, BoxEdit,
    PerturbParams, PerturbationPlan,
};
use crate::attack::schedule::{AttackMode, AttackProcessParams};
use crate::geom::{footprint_corners, ConfidenceMap, DetectionBox, DetectionSet};
use crate::rng::derive;
use crate::scene::{fuse_late, sense, step_world, AgentPose, ObjectTrack, SceneError, WorldState};
use crate::spatial::{csc_loss, MatchCostParams, SpatialError};
use crate::stattest::{
    bh_select, combined_score, conformal_p, AnomalyVerdict, ScoreRange, StatError, TrustState,
};
use crate::temporal::{
    bfm_chain_match, l_tr, normalize_steps, select_low_confidence, FlowCache, LstmAeModel,
};
use metrics::ApAccumulator;
use trace::TraceBuffer;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("variant {0:?} requires a calibration set")]
    MissingCalibration(Variant),
    #[error("variant {0:?} requires a trained flow model")]
    MissingModel(Variant),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Stat(#[from] StatError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

/// Loaded model and calibration artifacts shared across runs.
#[derive(Debug, Clone, Default)]
pub struct RuntimeAssets {
    pub model: Option<LstmAeModel>,
    pub calibration: Option<CalibrationData>,
}

/// Per-seed flow reconstruction statistics split by attack taint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TaintStats {
    pub tainted_ltr_sum: f64,
    pub tainted_ltr_count: u64,
    pub clean_ltr_sum: f64,
    pub clean_ltr_count: u64,
    /// Unmatched flow counts pooled over (frame, collaborator) rows.
    pub attacker_unmatched: u64,
    pub attacker_rows: u64,
    pub benign_unmatched: u64,
    pub benign_rows: u64,
}

impl TaintStats {
    pub fn tainted_mean(&self) -> Option<f64> {
        (self.tainted_ltr_count > 0).then(|| self.tainted_ltr_sum / self.tainted_ltr_count as f64)
    }

    pub fn clean_mean(&self) -> Option<f64> {
        (self.clean_ltr_count > 0).then(|| self.clean_ltr_sum / self.clean_ltr_count as f64)
    }

    pub fn attacker_unmatched_rate(&self) -> Option<f64> {
        (self.attacker_rows > 0).then(|| self.attacker_unmatched as f64 / self.attacker_rows as f64)
    }

    pub fn benign_unmatched_rate(&self) -> Option<f64> {
        (self.benign_rows > 0).then(|| self.benign_unmatched as f64 / self.benign_rows as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub seed: u64,
    pub variant: Variant,
    pub ap50: f64,
    pub ap70: f64,
    /// Frame-level labels: a rejection counts as true only on frames where
    /// the agent actually sent a malicious message.
    pub detection: DetectionCounts,
    /// Agent-level labels: a rejection of any designated attacker counts as
    /// a true discovery regardless of that frame's activity.
    pub agent_detection: DetectionCounts,
    pub frames: usize,
    pub taint: TaintStats,
    /// Raw per-(frame, collaborator) score components, full regime.
    pub components_full: Vec<ScoreComponents>,
    /// Startup regime (flow cache not yet filled).
    pub components_startup: Vec<ScoreComponents>,
    /// Mask/plan recomputations per attacker agent.
    pub mask_recomputes: Vec<(u32, u64)>,
    /// Wall-clock frames per second; excluded from traces and CSV.
    pub throughput_fps: f64,
}

#[derive(Debug)]
pub struct ScenarioOutput {
    pub result: ScenarioResult,
    pub trace: Vec<String>,
}

/// Decision layer resolved from the variant and calibration data.
enum DecisionLayer {
    Inert,
    Conformal {
        full_scores: Vec<f64>,
        startup_scores: Vec<f64>,
        spatial_range: ScoreRange,
        temporal_range: ScoreRange,
        omega_s: f64,
        omega_t: f64,
        alpha_bh: f64,
        temporal: bool,
    },
    Threshold {
        alpha: f64,
        scores: Vec<f64>,
    },
}

impl DecisionLayer {
    fn build(cfg: &ScenarioConfig, assets: &RuntimeAssets) -> Result<Self, HarnessError> {
        let variant = cfg.defense.variant;
        if !variant.uses_defense() {
            return Ok(DecisionLayer::Inert);
        }
        let cal = assets
            .calibration
            .as_ref()
            .ok_or(HarnessError::MissingCalibration(variant))?;
        if variant.uses_temporal() && assets.model.is_none() {
            return Err(HarnessError::MissingModel(variant));
        }
        match variant {
            Variant::SpatialBaseline => {
                let mut scores: Vec<f64> = cal
                    .full
                    .iter()
                    .chain(cal.startup.iter())
                    .map(|c| c.l_csc_uniform)
                    .collect();
                if scores.is_empty() {
                    return Err(HarnessError::Other("calibration data is empty".into()));
                }
                scores.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                let idx = ((cfg.defense.baseline_percentile * scores.len() as f64).ceil() as usize)
                    .clamp(1, scores.len())
                    - 1;
                Ok(DecisionLayer::Threshold { alpha: scores[idx], scores })
            }
            Variant::Gcp | Variant::GcpS | Variant::GcpT => {
                let spatial_all: Vec<f64> = cal
                    .full
                    .iter()
                    .chain(cal.startup.iter())
                    .map(|c| c.l_csc)
                    .collect();
                let temporal_all: Vec<f64> =
                    cal.full.iter().filter_map(|c| c.l_ta).collect();
                if spatial_all.is_empty() {
                    return Err(HarnessError::Other("calibration data is empty".into()));
                }
                let spatial_range = ScoreRange::fit(&spatial_all);
                let temporal_range = if temporal_all.is_empty() {
                    ScoreRange { min: 0.0, max: 1.0 }
                } else {
                    ScoreRange::fit(&temporal_all)
                };
                let (omega_s, omega_t) = match variant {
                    Variant::Gcp => (cfg.defense.omega.omega_s, cfg.defense.omega.omega_t),
                    Variant::GcpS => (cfg.defense.omega.omega_s, 0.0),
                    Variant::GcpT => (0.0, cfg.defense.omega.omega_t),
                    _ => unreachable!(),
                };
                let weights = crate::stattest::ScoreWeights { omega_s, omega_t };
                let score_of = |c: &ScoreComponents| -> Option<f64> {
                    match (variant, c.l_ta) {
                        (Variant::GcpS, _) => {
                            Some(combined_score(spatial_range.normalize(c.l_csc), 0.0, &weights))
                        }
                        (_, Some(lta)) => Some(combined_score(
                            spatial_range.normalize(c.l_csc),
                            temporal_range.normalize(lta),
                            &weights,
                        )),
                        (_, None) => None,
                    }
                };
                let mut full_scores: Vec<f64> = match variant {
                    Variant::GcpS => cal
                        .full
                        .iter()
                        .chain(cal.startup.iter())
                        .filter_map(|c| score_of(c))
                        .collect(),
                    _ => cal.full.iter().filter_map(|c| score_of(c)).collect(),
                };
                if full_scores.is_empty() {
                    return Err(HarnessError::Other(
                        "calibration holds no scores for this variant".into(),
                    ));
                }
                full_scores.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                // Startup regime: only the spatial component exists.
                let mut startup_scores: Vec<f64> = cal
                    .startup
                    .iter()
                    .map(|c| omega_s * spatial_range.normalize(c.l_csc))
                    .collect();
                startup_scores.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                Ok(DecisionLayer::Conformal {
                    full_scores,
                    startup_scores,
                    spatial_range,
                    temporal_range,
                    omega_s,
                    omega_t,
                    alpha_bh: cfg.defense.alpha_bh,
                    temporal: variant.uses_temporal(),
                })
            }
            Variant::None | Variant::LowerBound => unreachable!("inert variants handled above"),
        }
    }

    /// Per-collaborator verdicts for one frame.
    fn decide(&self, rows: &[CollabRow]) -> Result<Vec<AnomalyVerdict>, HarnessError> {
        match self {
            DecisionLayer::Inert => Ok(rows
                .iter()
                .map(|r| AnomalyVerdict {
                    agent_id: r.agent,
                    l_csc: r.l_csc,
                    l_ta: r.l_ta.unwrap_or(0.0),
                    l_st: 0.0,
                    p_value: 1.0,
                    rejected: false,
                })
                .collect()),
            DecisionLayer::Threshold { alpha, scores } => Ok(rows
                .iter()
                .map(|r| {
                    let score = r.l_csc_uniform;
                    AnomalyVerdict {
                        agent_id: r.agent,
                        l_csc: r.l_csc_uniform,
                        l_ta: 0.0,
                        l_st: score,
                        p_value: conformal_p(score, scores).unwrap_or(1.0),
                        rejected: score > *alpha,
                    }
                })
                .collect()),
            DecisionLayer::Conformal {
                full_scores,
                startup_scores,
                spatial_range,
                temporal_range,
                omega_s,
                omega_t,
                alpha_bh,
                temporal,
            } => {
                let mut p_values = Vec::with_capacity(rows.len());
                let mut scored = Vec::with_capacity(rows.len());
                for r in rows {
                    let (score, reference): (f64, &[f64]) = match (temporal, r.l_ta) {
                        (true, Some(lta)) => (
                            omega_s * spatial_range.normalize(r.l_csc)
                                + omega_t * temporal_range.normalize(lta),
                            full_scores,
                        ),
                        (true, None) => {
                            // Startup: spatial-only score against its own
                            // calibration regime when available.
                            let s = omega_s * spatial_range.normalize(r.l_csc);
                            if startup_scores.is_empty() {
                                (s, full_scores)
                            } else {
                                (s, startup_scores)
                            }
                        }
                        (false, _) => {
                            (omega_s * spatial_range.normalize(r.l_csc), full_scores)
                        }
                    };
                    let p = conformal_p(score, reference)?;
                    p_values.push(p);
                    scored.push(score);
                }
                let (rejected, _) = bh_select(&p_values, *alpha_bh);
                Ok(rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| AnomalyVerdict {
                        agent_id: r.agent,
                        l_csc: r.l_csc,
                        l_ta: r.l_ta.unwrap_or(0.0),
                        l_st: scored[i],
                        p_value: p_values[i],
                        rejected: rejected.contains(&i),
                    })
                    .collect())
            }
        }
    }
}

struct CollabRow {
    agent: u32,
    l_csc: f64,
    l_csc_uniform: f64,
    l_ta: Option<f64>,
    fused: DetectionSet,
    attacker_active: bool,
}

struct AttackerState {
    mask: Option<crate::attack::BlindMask>,
    plan: Option<PerturbationPlan>,
    recomputes: u64,
}

pub(crate) fn initial_world(cfg: &ScenarioConfig) -> WorldState {
    let mut rng = derive(cfg.seed, "world-init", &[]);
    let (bw, bh) = cfg.scene.bounds_m;
    let margin = 3.0;
    let mut objects = Vec::with_capacity(cfg.scene.n_objects);
    for id in 0..cfg.scene.n_objects {
        let x = rng.gen_range(margin..bw - margin);
        let y = rng.gen_range(margin..bh - margin);
        let speed = rng.gen_range(cfg.scene.speed_range.0..=cfg.scene.speed_range.1);
        let heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let length = rng.gen_range(4.2..4.8);
        let width = rng.gen_range(1.8..2.2);
        objects.push(ObjectTrack {
            id: id as u32,
            center: (x, y),
            heading,
            extent: (length, width),
            velocity: (speed * heading.cos(), speed * heading.sin()),
        });
    }
    WorldState { time_index: 0, objects, bounds: cfg.scene.bounds_m }
}

fn ground_truth_boxes(world: &WorldState, resolution: f64) -> Vec<DetectionBox> {
    world
        .objects
        .iter()
        .map(|o| {
            DetectionBox::new(
                footprint_corners(o.center, o.heading, o.extent, resolution),
                1.0,
                1.0,
                u32::MAX,
            )
        })
        .collect()
}

fn build_schedule(cfg: &ScenarioConfig) -> Result<Option<AttackSchedule>, HarnessError> {
    if cfg.attack.kind == AttackKind::None || cfg.attack.lambda == 0.0 || cfg.attack.n_malicious == 0
    {
        return Ok(None);
    }
    let params = AttackProcessParams {
        mode: cfg.attack.mode,
        n_agents: cfg.n_collaborators(),
        horizon: cfg.frames,
        n_malicious: cfg.attack.n_malicious,
        attack_ratio: cfg.attack.lambda,
        alloc_std: cfg.attack.alloc_std,
        propagation_rate: cfg.attack.propagation_rate,
        seed: cfg.seed,
    };
    let mut rng = derive(cfg.seed, "schedule", &[]);
    let schedule = match cfg.attack.mode {
        AttackMode::R => schedule_r(&params, &mut rng)?,
        AttackMode::P => schedule_p(&params, &mut rng)?,
        AttackMode::S => schedule_s(&params, &mut rng)?,
    };
    Ok(Some(schedule))
}

fn perturb_params(cfg: &ScenarioConfig) -> PerturbParams {
    PerturbParams {
        budgets: AttackBudgets {
            delta_i: cfg.attack.delta_i,
            delta_o: cfg.attack.delta_o,
            w_delta: cfg.attack.w_delta,
            inject_cost: cfg.attack.inject_cost,
            drop_cost: cfg.attack.drop_cost,
            shift_cost_per_unit: cfg.attack.shift_cost_per_unit,
        },
        inject_extent: (4.5, 2.0),
        resolution: cfg.resolution(),
        inject_center_jitter: 0.3,
        shift_std: cfg.attack.shift_std,
        drop_conf_max: cfg.attack.drop_conf_max,
        posterior_base: cfg.scene.sensor.posterior_base,
        posterior_slope: cfg.scene.sensor.posterior_slope,
        kind_weights: cfg.attack.kind_weights,
    }
}

/// Drop plan edits whose box ids fall outside the current message; a plan
/// computed at the last mask refresh is reused against newer messages.
fn sanitize_plan(plan: &PerturbationPlan, msg_len: usize) -> PerturbationPlan {
    let mut out = plan.clone();
    let mut dropped: Vec<usize> = Vec::new();
    out.edits.retain(|e| match e {
        BoxEdit::Inject { .. } => true,
        BoxEdit::Shift { box_id, .. } => *box_id < msg_len && !dropped.contains(box_id),
        BoxEdit::Drop { box_id } => {
            let keep = *box_id < msg_len && !dropped.contains(box_id);
            if keep {
                dropped.push(*box_id);
            }
            keep
        }
    });
    out
}

pub fn run_scenario(
    cfg: &ScenarioConfig,
    assets: &RuntimeAssets,
    trace_mode: TraceMode,
) -> Result<ScenarioOutput, HarnessError> {
    cfg.validate()?;
    let started = std::time::Instant::now();
    let dims = cfg.grid_dims();
    let resolution = cfg.resolution();
    let variant = cfg.defense.variant;
    let decision = DecisionLayer::build(cfg, assets)?;
    let schedule = build_schedule(cfg)?;
    let tcfg = &cfg.defense.temporal;
    let match_params = MatchCostParams { phi: tcfg.phi, classes: vec!["vehicle".to_string()] };
    let uniform_map = ConfidenceMap::uniform(dims, resolution, 1.0);
    let temporal_active = assets.model.is_some() && variant != Variant::LowerBound;
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

    let mut world = initial_world(cfg);
    let mut caches: Vec<FlowCache> = (0..n_collab).map(|_| FlowCache::new(tcfg)).collect();
    let mut trust = TrustState::default();
    let mut attacker_states: BTreeMap<u32, AttackerState> = BTreeMap::new();
    let mask_interval = cfg.mask_interval();
    let pparams = perturb_params(cfg);

    let mut trace = TraceBuffer::new(trace_mode);
    trace.push(&TraceRecord::Header {
        schema: trace::TRACE_SCHEMA.to_string(),
        seed: cfg.seed,
        frames: cfg.frames,
        variant: serde_json::to_string(&variant).unwrap().trim_matches('"').to_string(),
    });

    let mut ap50 = ApAccumulator::default();
    let mut ap70 = ApAccumulator::default();
    let mut detection = DetectionCounts::default();
    let mut agent_detection = DetectionCounts::default();
    let attacker_agents: std::collections::BTreeSet<u32> = schedule
        .as_ref()
        .map(|s| s.attackers.iter().map(|&c| (c + 1) as u32).collect())
        .unwrap_or_default();
    let mut taint = TaintStats::default();
    let mut components_full = Vec::new();
    let mut components_startup = Vec::new();

    for frame in 0..cfg.frames as u64 {
        if frame > 0 {
            let mut rng = derive(cfg.seed, "world-step", &[frame]);
            world = step_world(&world, cfg.scene.process_noise, &mut rng);
        }
        let gt_boxes = ground_truth_boxes(&world, resolution);
        let sensed: Vec<(DetectionSet, ConfidenceMap)> = poses
            .iter()
            .map(|pose| {
                let mut rng = derive(cfg.seed, "sense", &[frame, u64::from(pose.agent_id)]);
                sense(&world, pose, &cfg.scene.sensor, dims, resolution, &mut rng)
            })
            .collect();

        // Collaborator messages, with attack edits where scheduled.
        let mut messages: Vec<DetectionSet> =
            (0..n_collab).map(|ci| sensed[ci + 1].0.clone()).collect();
        let mut active_flags = vec![false; n_collab];
        if let Some(schedule) = &schedule {
            let mut gt_set = DetectionSet::new(frame, u32::MAX);
            gt_set.boxes = gt_boxes.clone();
            for &col in &schedule.attackers {
                let agent = (col + 1) as u32;
                let state = attacker_states
                    .entry(agent)
                    .or_insert(AttackerState { mask: None, plan: None, recomputes: 0 });
                let own = &sensed[col + 1].0;
                let own_map = &sensed[col + 1].1;
                // The blind mask follows the slow update cadence; the
                // perturbation itself is re-optimized per attack cycle.
                if cfg.attack.kind == AttackKind::Bac && frame % mask_interval == 0 {
                    let victim_msg = &sensed[0].0;
                    let y_collab = fuse_late(own, &[victim_msg], cfg.defense.nms_iou)?;
                    let (y_vic, y_nvic) =
                        differential_detect(victim_msg, &y_collab, cfg.defense.match_iou);
                    match segment_blind_regions(&y_vic, &y_nvic, dims, &cfg.attack.segmentation) {
                        Ok(mask) => state.mask = Some(mask),
                        Err(AttackError::NoVictimAnchor) => state.mask = None,
                        Err(e) => return Err(e.into()),
                    }
                    state.recomputes += 1;
                }
                if schedule.is_active(frame as usize, col) {
                    active_flags[col] = true;
                    let mut rng = derive(cfg.seed, "attack-plan", &[frame, u64::from(agent)]);
                    state.plan = match cfg.attack.kind {
                        AttackKind::Bac => state.mask.as_ref().map(|mask| {
                            optimize_bac(own, &gt_set, mask, own_map, &pparams, cfg.attack.iters, &mut rng)
                        }),
                        AttackKind::Untargeted => Some(baseline_attack(
                            own,
                            dims,
                            own_map,
                            &pparams,
                            cfg.attack.iters,
                            &mut rng,
                        )),
                        AttackKind::None => None,
                    };
                    if let Some(plan) = &state.plan {
                        let msg = &messages[col];
                        let usable = sanitize_plan(plan, msg.len());
                        messages[col] = apply_plan(msg, &usable)?;
                        if trace_mode == TraceMode::Full {
                            trace.push(&TraceRecord::Plan { frame, agent, plan: plan.clone() });
                        }
                    }
                }
            }
        }

        let (y_e, c_map) = &sensed[0];
        for (agent_idx, (det, _)) in sensed.iter().enumerate() {
            let attacker_active = agent_idx >= 1 && active_flags[agent_idx - 1];
            let payload = if agent_idx == 0 { det } else { &messages[agent_idx - 1] };
            trace.push(&TraceRecord::Message {
                frame,
                agent: agent_idx as u32,
                detections: payload.clone(),
                attacker_active,
            });
        }
        trace.push(&TraceRecord::World { frame, objects: world.objects.clone() });

        // Score each collaborator against the ego.
        let mut rows: Vec<CollabRow> = Vec::with_capacity(n_collab);
        if variant != Variant::LowerBound {
            for ci in 0..n_collab {
                let agent = (ci + 1) as u32;
                let y_ei = fuse_late(y_e, &[&messages[ci]], cfg.defense.nms_iou)?;
                let l_csc = csc_loss(y_e, &y_ei, c_map, &match_params)?.l_csc;
                let l_csc_uniform = csc_loss(y_e, &y_ei, &uniform_map, &match_params)?.l_csc;
                let mut l_ta = None;
                if temporal_active && caches[ci].is_ready() {
                    let model = assets.model.as_ref().expect("temporal_active implies model");
                    let heads = select_low_confidence(&y_ei, c_map, y_e, tcfg);
                    let sets = bfm_chain_match(&heads, &mut caches[ci], tcfg);
                    let mut total = 0.0;
                    for flow in &sets.candidates {
                        let input = normalize_steps(&flow.steps, model.grid);
                        let recon = model.reconstruct(&input);
                        let loss = l_tr(&input, &recon);
                        total += loss;
                        if flow.head_tainted {
                            taint.tainted_ltr_sum += loss;
                            taint.tainted_ltr_count += 1;
                        } else {
                            taint.clean_ltr_sum += loss;
                            taint.clean_ltr_count += 1;
                        }
                    }
                    total += tcfg.kappa_p * sets.unmatched.len() as f64;
                    l_ta = Some(total);
                    if active_flags[ci] {
                        taint.attacker_unmatched += sets.unmatched.len() as u64;
                        taint.attacker_rows += 1;
                    } else {
                        taint.benign_unmatched += sets.unmatched.len() as u64;
                        taint.benign_rows += 1;
                    }
                }
                let components = ScoreComponents { l_csc, l_csc_uniform, l_ta };
                if l_ta.is_some() {
                    components_full.push(components);
                } else {
                    components_startup.push(components);
                }
                rows.push(CollabRow {
                    agent,
                    l_csc,
                    l_csc_uniform,
                    l_ta,
                    fused: y_ei,
                    attacker_active: active_flags[ci],
                });
            }
        }

        let verdicts = decision.decide(&rows)?;
        trust.update(&verdicts, frame);
        for (row, v) in rows.iter().zip(verdicts.iter()) {
            if variant.uses_defense() {
                detection.record(v.rejected, row.attacker_active);
                agent_detection.record(v.rejected, attacker_agents.contains(&row.agent));
            }
            trace.push(&TraceRecord::Score {
                frame,
                agent: row.agent,
                l_csc: row.l_csc,
                l_csc_uniform: row.l_csc_uniform,
                l_ta: row.l_ta,
                l_st: variant.uses_defense().then_some(v.l_st),
                p_value: variant.uses_defense().then_some(v.p_value),
                rejected: v.rejected,
                attacker_active: row.attacker_active,
            });
        }

        // Final fusion excludes agents quarantined this frame.
        let fused_final = if variant == Variant::LowerBound {
            y_e.clone()
        } else {
            let admitted: Vec<&DetectionSet> = (0..n_collab)
                .filter(|&ci| !trust.is_quarantined((ci + 1) as u32, frame))
                .map(|ci| &messages[ci])
                .collect();
            fuse_late(y_e, &admitted, cfg.defense.nms_iou)?
        };
        ap50.add_frame(&fused_final.boxes, &gt_boxes, 0.5);
        ap70.add_frame(&fused_final.boxes, &gt_boxes, 0.7);

        // Cache maintenance: quarantined collaborators get an interpolated
        // frame (or a flush at the consecutive limit).
        if temporal_active {
            for (ci, row) in rows.iter().enumerate() {
                if trust.is_quarantined(row.agent, frame) {
                    caches[ci].interpolate_missing(frame, tcfg);
                } else {
                    caches[ci].push_observed(row.fused.clone());
                }
            }
        }
    }

    let elapsed = started.elapsed().as_secs_f64();
    let result = ScenarioResult {
        seed: cfg.seed,
        variant,
        ap50: ap50.ap(),
        ap70: ap70.ap(),
        detection,
        agent_detection,
        frames: cfg.frames,
        taint,
        components_full,
        components_startup,
        mask_recomputes: attacker_states.iter().map(|(&a, s)| (a, s.recomputes)).collect(),
        throughput_fps: if elapsed > 0.0 { cfg.frames as f64 / elapsed } else { 0.0 },
    };
    Ok(ScenarioOutput { result, trace: trace.into_lines() })
}

/// Run many scenarios, in parallel under the default feature, preserving
/// input order.
pub fn run_batch(
    cfgs: &[ScenarioConfig],
    assets: &RuntimeAssets,
    trace_mode: TraceMode,
) -> Vec<Result<ScenarioOutput, HarnessError>> {
    crate::exec::map_batch(cfgs, |cfg| run_scenario(cfg, assets, trace_mode))
}

/// Like `run_batch` but forced sequential; the benchmark baseline.
pub fn run_batch_sequential(
    cfgs: &[ScenarioConfig],
    assets: &RuntimeAssets,
    trace_mode: TraceMode,
) -> Vec<Result<ScenarioOutput, HarnessError>> {
    crate::exec::map_batch_sequential(cfgs, |cfg| run_scenario(cfg, assets, trace_mode))
}
