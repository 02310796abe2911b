//! Synthetic world, per-agent noisy sensing with occlusion-dependent
//! confidence, and late fusion of exchanged detection messages.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{footprint_corners, iou, ConfidenceMap, DetectionBox, DetectionSet, GridDims};

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("detection sets disagree on frame tag: ego {ego}, received {received}")]
    FrameMismatch { ego: u64, received: u64 },
}

/// One moving object in the world. Constant-velocity kinematics plus
/// process noise; heading follows the velocity direction at spawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTrack {
    pub id: u32,
    /// Meters.
    pub center: (f64, f64),
    /// Radians.
    pub heading: f64,
    /// (length, width) in meters, strictly positive.
    pub extent: (f64, f64),
    /// Meters per frame.
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub time_index: u64,
    pub objects: Vec<ObjectTrack>,
    /// BEV extent in meters (width, height).
    pub bounds: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub agent_id: u32,
    /// Meters.
    pub position: (f64, f64),
    /// Meters, > 0.
    pub sensing_radius: f64,
    pub occluders_respected: bool,
}

/// Detection-probability and confidence curves of the synthetic sensor.
///
/// Both curves are piecewise linear in range: full value inside `r_hi`,
/// decaying linearly to zero at the sensing radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    /// Range up to which detection probability and confidence stay at their
    /// peak, in meters.
    pub r_hi: f64,
    /// Peak detection probability inside `r_hi`.
    pub detect_prob_hi: f64,
    /// Detection probability multiplier when the line of sight is occluded.
    pub occlusion_factor: f64,
    /// Corner jitter std-dev in meters.
    pub corner_noise: f64,
    /// Expected false positives per frame (Poisson).
    pub false_positive_rate: f64,
    /// Class posterior = base + slope * confidence + noise, clamped to [0,1].
    pub posterior_base: f64,
    pub posterior_slope: f64,
    pub posterior_noise: f64,
    /// Half-width in meters of the corridor within which an intervening
    /// object blocks the line of sight.
    pub occluder_halfwidth: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            r_hi: 14.0,
            detect_prob_hi: 0.97,
            occlusion_factor: 0.7,
            corner_noise: 0.15,
            false_positive_rate: 0.05,
            posterior_base: 0.55,
            posterior_slope: 0.4,
            posterior_noise: 0.02,
            occluder_halfwidth: 1.0,
        }
    }
}

impl SensorModel {
    /// Piecewise-linear confidence: 1 inside `r_hi`, 0 at `radius` and beyond.
    pub fn confidence_at(&self, range: f64, radius: f64) -> f64 {
        if range >= radius {
            0.0
        } else if range <= self.r_hi {
            1.0
        } else {
            1.0 - (range - self.r_hi) / (radius - self.r_hi)
        }
    }

    /// Detection probability is flat inside the sensing radius; range
    /// degrades the reported confidence, not the detection event itself.
    pub fn detect_prob_at(&self, range: f64, radius: f64) -> f64 {
        if range <= radius {
            self.detect_prob_hi
        } else {
            0.0
        }
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Advance the world by one frame: constant velocity plus per-axis Gaussian
/// process noise. Objects leaving the bounds are retired and respawned at a
/// random edge so the object count stays constant.
///
/// Draw order per object: noise dx, noise dy; then, only if the object left
/// the bounds: edge index, position along the edge, inward heading jitter.
pub fn step_world(state: &WorldState, process_noise: f64, rng: &mut ChaCha8Rng) -> WorldState {
    assert!(process_noise >= 0.0, "process_noise must be non-negative");
    let noise = Normal::new(0.0, process_noise).expect("valid std-dev");
    let (bw, bh) = state.bounds;
    let mut next_id = state.objects.iter().map(|o| o.id).max().map_or(0, |m| m + 1);
    let mut objects = Vec::with_capacity(state.objects.len());
    for obj in &state.objects {
        let dx = noise.sample(rng);
        let dy = noise.sample(rng);
        let cx = obj.center.0 + obj.velocity.0 + dx;
        let cy = obj.center.1 + obj.velocity.1 + dy;
        if cx < 0.0 || cx > bw || cy < 0.0 || cy > bh {
            objects.push(respawn_at_edge(obj, next_id, state.bounds, rng));
            next_id += 1;
        } else {
            objects.push(ObjectTrack { center: (cx, cy), ..obj.clone() });
        }
    }
    WorldState { time_index: state.time_index + 1, objects, bounds: state.bounds }
}

/// Fresh track on a random edge, moving inward with the same speed.
/// Draw order: edge in 0..4, position fraction, heading jitter in
/// [-pi/4, pi/4] around the inward normal.
fn respawn_at_edge(
    obj: &ObjectTrack,
    id: u32,
    bounds: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> ObjectTrack {
    let (bw, bh) = bounds;
    let margin = obj.extent.0.max(obj.extent.1);
    let edge: u32 = rng.gen_range(0..4);
    let t: f64 = rng.gen();
    let jitter: f64 = rng.gen_range(-std::f64::consts::FRAC_PI_4..std::f64::consts::FRAC_PI_4);
    let (center, inward) = match edge {
        0 => ((margin, t * bh), 0.0),                             // left edge, +x
        1 => ((bw - margin, t * bh), std::f64::consts::PI),       // right edge, -x
        2 => ((t * bw, margin), std::f64::consts::FRAC_PI_2),     // bottom edge, +y
        _ => ((t * bw, bh - margin), -std::f64::consts::FRAC_PI_2), // top edge, -y
    };
    let speed = (obj.velocity.0.powi(2) + obj.velocity.1.powi(2)).sqrt();
    let heading = inward + jitter;
    ObjectTrack {
        id,
        center,
        heading,
        extent: obj.extent,
        velocity: (speed * heading.cos(), speed * heading.sin()),
    }
}

/// True when some other object blocks the segment from `from` to `to`:
/// its center projects onto the segment interior within the corridor
/// half-width and lies closer than the target.
fn segment_occluded(
    from: (f64, f64),
    to: (f64, f64),
    objects: &[ObjectTrack],
    skip_id: Option<u32>,
    halfwidth: f64,
) -> bool {
    let dx = to.0 - from.0;
    let dy = to.1 - from.1;
    let len2 = dx * dx + dy * dy;
    if len2 <= 1e-12 {
        return false;
    }
    for obj in objects {
        if Some(obj.id) == skip_id {
            continue;
        }
        let px = obj.center.0 - from.0;
        let py = obj.center.1 - from.1;
        let t = (px * dx + py * dy) / len2;
        if t <= 0.05 || t >= 0.95 {
            continue;
        }
        let ox = px - t * dx;
        let oy = py - t * dy;
        if ox * ox + oy * oy < halfwidth * halfwidth {
            return true;
        }
    }
    false
}

/// Simulate one agent's sensor sweep: detections with corner jitter and
/// range-dependent confidence, plus the agent's per-cell confidence map
/// (zeroed behind occluders when the pose respects them).
///
/// Deterministic given (state, pose, sensor, rng state). Draw order: per
/// object in world order one detection Bernoulli; per detected object 8
/// corner jitters then 1 posterior jitter; then 1 Poisson false-positive
/// count; per false positive: angle, range fraction, heading, 1 posterior
/// jitter.
pub fn sense(
    state: &WorldState,
    pose: &AgentPose,
    sensor: &SensorModel,
    dims: GridDims,
    resolution: f64,
    rng: &mut ChaCha8Rng,
) -> (DetectionSet, ConfidenceMap) {
    let mut out = DetectionSet::new(state.time_index, pose.agent_id);
    let corner_noise = Normal::new(0.0, sensor.corner_noise / resolution).expect("valid std-dev");
    let posterior_noise = Normal::new(0.0, sensor.posterior_noise).expect("valid std-dev");

    for obj in &state.objects {
        let range = dist(pose.position, obj.center);
        if range > pose.sensing_radius {
            continue;
        }
        let occluded = pose.occluders_respected
            && segment_occluded(
                pose.position,
                obj.center,
                &state.objects,
                Some(obj.id),
                sensor.occluder_halfwidth,
            );
        let mut p_det = sensor.detect_prob_at(range, pose.sensing_radius);
        if occluded {
            p_det *= sensor.occlusion_factor;
        }
        if !rng.gen_bool(p_det.clamp(0.0, 1.0)) {
            continue;
        }
        let clean = footprint_corners(obj.center, obj.heading, obj.extent, resolution);
        let mut corners = clean;
        for c in corners.iter_mut() {
            *c += corner_noise.sample(rng);
        }
        let confidence = sensor.confidence_at(range, pose.sensing_radius);
        let posterior = (sensor.posterior_base
            + sensor.posterior_slope * confidence
            + posterior_noise.sample(rng))
        .clamp(0.0, 1.0);
        let mut b = DetectionBox::new(corners, posterior, confidence, pose.agent_id);
        if !b.is_valid() {
            // Jitter broke convexity: fall back to translating the clean
            // footprint by the mean offset.
            let mut mx = 0.0;
            let mut my = 0.0;
            for i in 0..4 {
                mx += corners[2 * i] - clean[2 * i];
                my += corners[2 * i + 1] - clean[2 * i + 1];
            }
            let mut fixed = clean;
            for i in 0..4 {
                fixed[2 * i] += mx / 4.0;
                fixed[2 * i + 1] += my / 4.0;
            }
            b = DetectionBox::new(fixed, posterior, confidence, pose.agent_id);
        }
        out.boxes.push(b);
    }

    // Clutter: false positives uniform over the sensing disk.
    if sensor.false_positive_rate > 0.0 {
        let n_fp = Poisson::new(sensor.false_positive_rate)
            .expect("valid rate")
            .sample(rng) as u64;
        for _ in 0..n_fp {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r: f64 = rng.gen::<f64>().sqrt() * pose.sensing_radius;
            let heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let center = (
                pose.position.0 + r * angle.cos(),
                pose.position.1 + r * angle.sin(),
            );
            let confidence = sensor.confidence_at(r, pose.sensing_radius);
            let posterior = (sensor.posterior_base + posterior_noise.sample(rng)).clamp(0.0, 1.0);
            let corners = footprint_corners(center, heading, (4.5, 2.0), resolution);
            out.boxes.push(DetectionBox::new(corners, posterior, confidence, pose.agent_id));
        }
    }

    let map = confidence_map(state, pose, sensor, dims, resolution);
    (out, map)
}

/// Per-cell confidence: the sensor curve at the cell range, zeroed behind
/// occluders when the pose respects them.
pub fn confidence_map(
    state: &WorldState,
    pose: &AgentPose,
    sensor: &SensorModel,
    dims: GridDims,
    resolution: f64,
) -> ConfidenceMap {
    let mut map = ConfidenceMap::zeros(dims, resolution);
    for cy in 0..dims.h {
        for cx in 0..dims.w {
            let (gx, gy) = dims.cell_center(cx, cy);
            let cell_m = (gx * resolution, gy * resolution);
            let range = dist(pose.position, cell_m);
            let mut v = sensor.confidence_at(range, pose.sensing_radius);
            if v > 0.0
                && pose.occluders_respected
                && segment_occluded(pose.position, cell_m, &state.objects, None, sensor.occluder_halfwidth)
            {
                v = 0.0;
            }
            map.set(cx, cy, v);
        }
    }
    map
}

/// Late fusion: union of all boxes with greedy confidence-ordered duplicate
/// suppression. Among boxes with pairwise IoU above `nms_iou` the highest
/// confidence wins; ego boxes win exact ties.
pub fn fuse_late(
    ego: &DetectionSet,
    received: &[&DetectionSet],
    nms_iou: f64,
) -> Result<DetectionSet, SceneError> {
    for set in received {
        if set.frame != ego.frame {
            return Err(SceneError::FrameMismatch { ego: ego.frame, received: set.frame });
        }
    }
    let mut pool: Vec<(&DetectionBox, bool)> = Vec::new();
    for b in &ego.boxes {
        pool.push((b, true));
    }
    for set in received {
        for b in &set.boxes {
            pool.push((b, false));
        }
    }
    // Confidence descending; ego first on equal confidence; stable otherwise.
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| {
        pool[b].0.confidence
            .partial_cmp(&pool[a].0.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(pool[b].1.cmp(&pool[a].1))
            .then(a.cmp(&b))
    });
    let mut fused = DetectionSet::new(ego.frame, ego.owner);
    for idx in order {
        let cand = pool[idx].0;
        if fused.boxes.iter().all(|kept| iou(kept, cand) <= nms_iou) {
            fused.boxes.push(cand.clone());
        }
    }
    Ok(fused)
}
