//! Per-collaborator flow cache and chain-based BEV flow matching.
//!
//! Each low-confidence head box is walked backward one cached frame at a
//! time: the IoU-best box of the previous frame extends the chain when the
//! combined posterior/IoU cost stays under tau. Chains that reach the full
//! cache depth become candidates for reconstruction; broken chains are
//! counted as unmatched. Completed walks are cached by head so the next
//! frame extends them instead of re-walking, and frames discarded by the
//! trust layer are filled by Kalman prediction up to a consecutive limit.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::kalman::{kf_predict, kf_update, KalmanState};
use super::TemporalConfig;
use crate::geom::{iou, ConfidenceMap, DetectionBox, DetectionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepProvenance {
    Observed,
    Interpolated,
}

/// One box tracked backward in time: chronological corner steps, oldest
/// first. Candidate flows have exactly `k_hist + 1` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BevFlow {
    pub steps: Vec<[f64; 8]>,
    pub provenance: Vec<StepProvenance>,
    /// The head box carried an attack edit (evaluation bookkeeping only).
    pub head_tainted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowSets {
    pub candidates: Vec<BevFlow>,
    pub unmatched: Vec<BevFlow>,
}

#[derive(Debug, Clone)]
struct CachedFrame {
    set: DetectionSet,
    interpolated: bool,
}

/// Newest-first walk result cached under its head box.
#[derive(Debug, Clone)]
struct CachedChain {
    steps_rev: Vec<[f64; 8]>,
    prov_rev: Vec<StepProvenance>,
    complete: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpolateOutcome {
    /// A synthetic frame was inserted.
    Interpolated,
    /// The consecutive-interpolation limit was hit; the cache was flushed.
    Flushed,
}

fn corner_key(corners: &[f64; 8]) -> [u64; 8] {
    std::array::from_fn(|i| corners[i].to_bits())
}

#[derive(Debug, Clone)]
pub struct FlowCache {
    k_hist: usize,
    l_interp: usize,
    q_scale: f64,
    r_scale: f64,
    frames: VecDeque<CachedFrame>,
    consec_interp: usize,
    chains_prev: HashMap<[u64; 8], CachedChain>,
}

impl FlowCache {
    pub fn new(cfg: &TemporalConfig) -> Self {
        Self {
            k_hist: cfg.k_hist,
            l_interp: cfg.l_interp,
            q_scale: cfg.q_scale,
            r_scale: cfg.r_scale,
            frames: VecDeque::new(),
            consec_interp: 0,
            chains_prev: HashMap::new(),
        }
    }

    /// The cache holds the full K frames of history.
    pub fn is_ready(&self) -> bool {
        self.frames.len() >= self.k_hist
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn consecutive_interpolations(&self) -> usize {
        self.consec_interp
    }

    pub fn push_observed(&mut self, set: DetectionSet) {
        self.frames.push_back(CachedFrame { set, interpolated: false });
        while self.frames.len() > self.k_hist {
            self.frames.pop_front();
        }
        self.consec_interp = 0;
    }

    pub fn flush(&mut self) {
        self.frames.clear();
        self.chains_prev.clear();
        self.consec_interp = 0;
    }

    /// Fill a discarded frame by predicting every box of the newest cached
    /// frame one step ahead along its own chain. Exceeding the consecutive
    /// limit flushes instead.
    pub fn interpolate_missing(&mut self, missing_frame: u64, cfg: &TemporalConfig) -> InterpolateOutcome {
        if self.consec_interp >= self.l_interp || self.frames.is_empty() {
            self.flush();
            return InterpolateOutcome::Flushed;
        }
        let newest = self.frames.back().expect("non-empty cache");
        let owner = newest.set.owner;
        let mut synthetic = DetectionSet::new(missing_frame, owner);
        let older: Vec<&CachedFrame> = self.frames.iter().rev().skip(1).collect();
        for b in &newest.set.boxes {
            // Chronological history of this box through the older frames.
            let mut rev_steps: Vec<[f64; 8]> = vec![b.corners];
            let mut curr = b.clone();
            for frame in &older {
                match best_match(&curr, &frame.set, cfg) {
                    Some((idx, cost)) if cost < cfg.tau => {
                        curr = frame.set.boxes[idx].clone();
                        rev_steps.push(curr.corners);
                    }
                    _ => break,
                }
            }
            let steps: Vec<[f64; 8]> = rev_steps.into_iter().rev().collect();
            let mut ks = if steps.len() >= 2 {
                KalmanState::from_pair(&steps[0], &steps[1], self.q_scale, self.r_scale)
            } else {
                KalmanState::from_corners(&steps[0], self.q_scale, self.r_scale)
            };
            for z in steps.iter().skip(2) {
                ks = kf_predict(&ks, 1.0);
                ks = match kf_update(&ks, z) {
                    Ok(next) => next,
                    Err(_) => break,
                };
            }
            let predicted = kf_predict(&ks, 1.0);
            let mut synth = b.clone();
            synth.corners = predicted.corners();
            synth.interpolated = true;
            synthetic.boxes.push(synth);
        }
        self.frames.push_back(CachedFrame { set: synthetic, interpolated: true });
        while self.frames.len() > self.k_hist {
            self.frames.pop_front();
        }
        self.consec_interp += 1;
        InterpolateOutcome::Interpolated
    }
}

/// The two low-confidence flow head classes: boxes the ego's own map barely
/// covers, and fused boxes with no ego counterpart.
pub fn select_low_confidence(
    y_fused: &DetectionSet,
    c_map: &ConfidenceMap,
    y_ego: &DetectionSet,
    cfg: &TemporalConfig,
) -> DetectionSet {
    let mut out = DetectionSet::new(y_fused.frame, y_fused.owner);
    for b in &y_fused.boxes {
        let center = b.center();
        let low_conf = c_map.at_point(center.0, center.1) < cfg.conf_low;
        let ego_unmatched = y_ego.boxes.iter().all(|e| iou(e, b) < 0.5);
        if low_conf || ego_unmatched {
            out.boxes.push(b.clone());
        }
    }
    out
}

/// IoU-best box of one frame against the current chain tip, with the
/// combined matching cost. Ties resolve to the lowest index.
fn best_match(curr: &DetectionBox, set: &DetectionSet, cfg: &TemporalConfig) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, b) in set.boxes.iter().enumerate() {
        let v = iou(b, curr);
        if best.map_or(true, |(_, bv)| v > bv) {
            best = Some((i, v));
        }
    }
    best.map(|(i, v)| {
        let b = &set.boxes[i];
        let cost = (curr.class_posterior - b.class_posterior).max(0.0) + cfg.phi * (1.0 - v);
        (i, cost)
    })
}

fn fresh_walk(head: &DetectionBox, cache: &FlowCache, cfg: &TemporalConfig) -> CachedChain {
    let mut steps_rev = vec![head.corners];
    let mut prov_rev = vec![StepProvenance::Observed];
    let mut curr = head.clone();
    let mut complete = true;
    let mut depth = 0usize;
    for frame in cache.frames.iter().rev() {
        if depth == cache.k_hist {
            break;
        }
        match best_match(&curr, &frame.set, cfg) {
            Some((idx, cost)) if cost < cfg.tau => {
                curr = frame.set.boxes[idx].clone();
                steps_rev.push(curr.corners);
                prov_rev.push(if frame.interpolated {
                    StepProvenance::Interpolated
                } else {
                    StepProvenance::Observed
                });
                depth += 1;
            }
            _ => {
                complete = false;
                break;
            }
        }
    }
    if depth < cache.k_hist {
        complete = false;
    }
    CachedChain { steps_rev, prov_rev, complete }
}

/// Extend a head through the cache, reusing last round's walk when the
/// first hop lands on a previously walked head.
fn walk_head(head: &DetectionBox, cache: &FlowCache, cfg: &TemporalConfig) -> CachedChain {
    let Some(newest) = cache.frames.back() else {
        return CachedChain { steps_rev: vec![head.corners], prov_rev: vec![StepProvenance::Observed], complete: cache.k_hist == 0 };
    };
    if let Some((idx, cost)) = best_match(head, &newest.set, cfg) {
        if cost < cfg.tau {
            let hop = &newest.set.boxes[idx];
            if let Some(cached) = cache.chains_prev.get(&corner_key(&hop.corners)) {
                let take = cache.k_hist.min(cached.steps_rev.len());
                let mut steps_rev = Vec::with_capacity(take + 1);
                let mut prov_rev = Vec::with_capacity(take + 1);
                steps_rev.push(head.corners);
                prov_rev.push(StepProvenance::Observed);
                steps_rev.extend_from_slice(&cached.steps_rev[..take]);
                prov_rev.extend_from_slice(&cached.prov_rev[..take]);
                // Completeness is judged against the current window: a break
                // beyond the truncation depth has scrolled out of scope.
                let complete = steps_rev.len() == cache.k_hist + 1;
                return CachedChain { steps_rev, prov_rev, complete };
            }
        }
    }
    fresh_walk(head, cache, cfg)
}

/// Chain-based flow matching: walk every head backward through the cache,
/// split into full-depth candidates and broken unmatched flows, and refresh
/// the per-head chain cache for the next round.
pub fn bfm_chain_match(o_set: &DetectionSet, cache: &mut FlowCache, cfg: &TemporalConfig) -> FlowSets {
    let mut sets = FlowSets::default();
    let mut new_chains: HashMap<[u64; 8], CachedChain> = HashMap::new();
    if o_set.is_empty() {
        cache.chains_prev = new_chains;
        return sets;
    }
    for head in &o_set.boxes {
        let chain = walk_head(head, cache, cfg);
        new_chains.insert(corner_key(&head.corners), chain.clone());
        let steps: Vec<[f64; 8]> = chain.steps_rev.iter().rev().copied().collect();
        let provenance: Vec<StepProvenance> = chain.prov_rev.iter().rev().copied().collect();
        let flow = BevFlow { steps, provenance, head_tainted: head.tainted };
        if chain.complete {
            sets.candidates.push(flow);
        } else {
            sets.unmatched.push(flow);
        }
    }
    cache.chains_prev = new_chains;
    sets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::GridDims;
    use approx::assert_relative_eq;

    fn cfg() -> TemporalConfig {
        TemporalConfig { k_hist: 3, l_interp: 2, ..Default::default() }
    }

    fn boxat(x: f64, y: f64, p: f64) -> DetectionBox {
        DetectionBox::new([x, y, x + 2.0, y, x + 2.0, y + 2.0, x, y + 2.0], p, 0.8, 1)
    }

    fn frame(frame: u64, boxes: Vec<DetectionBox>) -> DetectionSet {
        let mut s = DetectionSet::new(frame, 1);
        s.boxes = boxes;
        s
    }

    #[test]
    fn select_keeps_nothing_when_all_high_conf_and_seen() {
        let dims = GridDims::new(16, 16);
        let map = ConfidenceMap::uniform(dims, 1.0, 0.9);
        let ego = frame(0, vec![boxat(1.0, 1.0, 0.8)]);
        let fused = frame(0, vec![boxat(1.0, 1.0, 0.8)]);
        let o = select_low_confidence(&fused, &map, &ego, &cfg());
        assert!(o.is_empty());
    }

    #[test]
    fn select_takes_everything_when_ego_empty() {
        let dims = GridDims::new(16, 16);
        let map = ConfidenceMap::uniform(dims, 1.0, 0.9);
        let ego = frame(0, vec![]);
        let fused = frame(0, vec![boxat(1.0, 1.0, 0.8), boxat(8.0, 8.0, 0.7)]);
        let o = select_low_confidence(&fused, &map, &ego, &cfg());
        assert_eq!(o.len(), 2);
    }

    /// Rule-by-rule oracle on a mixed case: low ego-cell confidence or no
    /// ego box with IoU >= 0.5.
    #[test]
    fn select_matches_exhaustive_rule_application() {
        let dims = GridDims::new(16, 16);
        let mut map = ConfidenceMap::uniform(dims, 1.0, 0.9);
        map.set(9, 9, 0.1); // low-confidence cell around (9.x, 9.x)
        let ego = frame(0, vec![boxat(1.0, 1.0, 0.8)]);
        let fused = frame(
            0,
            vec![
                boxat(1.0, 1.0, 0.8), // seen, high conf -> out
                boxat(8.2, 8.2, 0.7), // unseen -> in (center cell (9,9) also low)
                boxat(12.0, 2.0, 0.6), // unseen -> in
            ],
        );
        let o = select_low_confidence(&fused, &map, &ego, &cfg());
        let expect: Vec<DetectionBox> = fused
            .boxes
            .iter()
            .filter(|b| {
                let c = b.center();
                let low = map.at_point(c.0, c.1) < 0.3;
                let unseen = ego.boxes.iter().all(|e| iou(e, b) < 0.5);
                low || unseen
            })
            .cloned()
            .collect();
        assert_eq!(o.boxes, expect);
        assert_eq!(o.len(), 2);
    }

    fn filled_cache(cfg: &TemporalConfig) -> FlowCache {
        // Stationary box plus a mover, three frames deep.
        let mut cache = FlowCache::new(cfg);
        for f in 0..3 {
            cache.push_observed(frame(
                f,
                vec![boxat(5.0, 5.0, 0.8), boxat(1.0 + f as f64 * 0.4, 1.0, 0.7)],
            ));
        }
        cache
    }

    #[test]
    fn empty_head_set_returns_empty_sets() {
        let cfg = cfg();
        let mut cache = filled_cache(&cfg);
        let sets = bfm_chain_match(&frame(3, vec![]), &mut cache, &cfg);
        assert!(sets.candidates.is_empty());
        assert!(sets.unmatched.is_empty());
    }

    #[test]
    fn stationary_box_yields_full_chain() {
        let cfg = cfg();
        let mut cache = filled_cache(&cfg);
        let sets = bfm_chain_match(&frame(3, vec![boxat(5.0, 5.0, 0.8)]), &mut cache, &cfg);
        assert_eq!(sets.candidates.len(), 1);
        assert_eq!(sets.candidates[0].steps.len(), cfg.k_hist + 1);
        assert!(sets.unmatched.is_empty());
    }

    /// Reference recursive matcher for a hand-constructed cache: the head's
    /// chain must break where the box is absent.
    #[test]
    fn missing_frame_breaks_the_chain() {
        let cfg = cfg();
        let mut cache = FlowCache::new(&cfg);
        cache.push_observed(frame(0, vec![boxat(5.0, 5.0, 0.8)]));
        cache.push_observed(frame(1, vec![boxat(40.0, 40.0, 0.8)])); // far away
        cache.push_observed(frame(2, vec![boxat(5.0, 5.0, 0.8)]));
        let head = boxat(5.0, 5.0, 0.8);
        let sets = bfm_chain_match(&frame(3, vec![head.clone()]), &mut cache, &cfg);
        assert!(sets.candidates.is_empty());
        assert_eq!(sets.unmatched.len(), 1);
        // Reference: recursive walk over an explicit frame list.
        fn walk(curr: &DetectionBox, frames: &[DetectionSet], cfg: &TemporalConfig) -> usize {
            if frames.is_empty() {
                return 0;
            }
            let last = frames.last().unwrap();
            let (mut bi, mut bv) = (usize::MAX, -1.0);
            for (i, b) in last.boxes.iter().enumerate() {
                let v = iou(b, curr);
                if v > bv {
                    bv = v;
                    bi = i;
                }
            }
            if bi == usize::MAX {
                return 0;
            }
            let b = &last.boxes[bi];
            let cost = (curr.class_posterior - b.class_posterior).max(0.0) + cfg.phi * (1.0 - bv);
            if cost < cfg.tau {
                1 + walk(b, &frames[..frames.len() - 1], cfg)
            } else {
                0
            }
        }
        let frames = vec![
            frame(0, vec![boxat(5.0, 5.0, 0.8)]),
            frame(1, vec![boxat(40.0, 40.0, 0.8)]),
            frame(2, vec![boxat(5.0, 5.0, 0.8)]),
        ];
        let depth = walk(&head, &frames, &cfg);
        assert_eq!(depth, 1);
        assert_eq!(sets.unmatched[0].steps.len(), depth + 1);
    }

    /// The chain cache must not change results: a warm cache walked frame by
    /// frame equals fresh walks at every round.
    #[test]
    fn chain_cache_reuse_matches_fresh_walks() {
        use rand::Rng;
        let cfg = TemporalConfig { k_hist: 4, ..cfg() };
        let mut rng = crate::rng::derive(77, "cache-eq", &[]);
        // Random mover population over 12 frames.
        let mut frames_all: Vec<DetectionSet> = Vec::new();
        let mut xs: Vec<(f64, f64)> = (0..5).map(|i| (2.0 + i as f64 * 3.0, 2.0)).collect();
        for f in 0..12u64 {
            let mut set = frame(f, vec![]);
            for (i, pos) in xs.iter_mut().enumerate() {
                pos.0 += rng.gen_range(0.1..0.4);
                pos.1 += rng.gen_range(-0.1..0.1);
                if rng.gen_bool(0.85) {
                    set.boxes.push(boxat(pos.0, pos.1, 0.6 + 0.05 * i as f64));
                }
            }
            frames_all.push(set);
        }
        let mut warm = FlowCache::new(&cfg);
        for f in 0..cfg.k_hist {
            warm.push_observed(frames_all[f].clone());
        }
        for f in cfg.k_hist..12 {
            let heads = frames_all[f].clone();
            let warm_sets = bfm_chain_match(&heads, &mut warm, &cfg);
            // Cold cache: same frames, no chain memory.
            let mut cold = FlowCache::new(&cfg);
            for s in &frames_all[f - cfg.k_hist..f] {
                cold.push_observed(s.clone());
            }
            let cold_sets = bfm_chain_match(&heads, &mut cold, &cfg);
            assert_eq!(warm_sets, cold_sets, "frame {f}");
            warm.push_observed(frames_all[f].clone());
        }
    }

    #[test]
    fn candidates_and_unmatched_partition_heads() {
        let cfg = cfg();
        let mut cache = filled_cache(&cfg);
        let heads = frame(3, vec![boxat(5.0, 5.0, 0.8), boxat(30.0, 30.0, 0.5), boxat(1.8, 1.0, 0.7)]);
        let sets = bfm_chain_match(&heads, &mut cache, &cfg);
        assert_eq!(sets.candidates.len() + sets.unmatched.len(), heads.len());
    }

    #[test]
    fn zero_interpolation_limit_flushes_immediately() {
        let cfg = TemporalConfig { l_interp: 0, ..cfg() };
        let mut cache = FlowCache::new(&cfg);
        cache.push_observed(frame(0, vec![boxat(5.0, 5.0, 0.8)]));
        assert_eq!(cache.interpolate_missing(1, &cfg), InterpolateOutcome::Flushed);
        assert!(cache.is_empty());
    }

    #[test]
    fn interpolated_gap_is_linear_midpoint_for_constant_velocity() {
        let cfg = TemporalConfig { k_hist: 5, l_interp: 3, q_scale: 0.0, r_scale: 1e-9, ..cfg() };
        let mut cache = FlowCache::new(&cfg);
        // Box moving +0.5 in x per frame.
        for f in 0..4u64 {
            cache.push_observed(frame(f, vec![boxat(2.0 + 0.5 * f as f64, 3.0, 0.8)]));
        }
        assert_eq!(cache.interpolate_missing(4, &cfg), InterpolateOutcome::Interpolated);
        let synth = &cache.frames.back().unwrap().set.boxes[0];
        assert!(synth.interpolated);
        // Position at the gap equals prev + v, i.e. the midpoint of the
        // would-be neighbors at frames 3 and 5.
        let expect = boxat(2.0 + 0.5 * 4.0, 3.0, 0.8);
        for (a, b) in synth.corners.iter().zip(expect.corners.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn limit_plus_one_gap_flushes_and_counter_resets_on_observation() {
        let cfg = TemporalConfig { k_hist: 5, l_interp: 2, ..cfg() };
        let mut cache = FlowCache::new(&cfg);
        for f in 0..3u64 {
            cache.push_observed(frame(f, vec![boxat(2.0, 3.0, 0.8)]));
        }
        assert_eq!(cache.interpolate_missing(3, &cfg), InterpolateOutcome::Interpolated);
        assert_eq!(cache.consecutive_interpolations(), 1);
        cache.push_observed(frame(4, vec![boxat(2.0, 3.0, 0.8)]));
        assert_eq!(cache.consecutive_interpolations(), 0);
        assert_eq!(cache.interpolate_missing(5, &cfg), InterpolateOutcome::Interpolated);
        assert_eq!(cache.interpolate_missing(6, &cfg), InterpolateOutcome::Interpolated);
        // Third consecutive gap exceeds the limit.
        assert_eq!(cache.interpolate_missing(7, &cfg), InterpolateOutcome::Flushed);
        assert!(cache.is_empty());
        assert_eq!(cache.consecutive_interpolations(), 0);
    }
}
