//! Budget-constrained perturbation search over discrete box edits.
//!
//! The objective is the blind-weighted detection loss between the perturbed
//! message occupancy and the ground-truth occupancy: each cell's absolute
//! occupancy deviation is weighted by `w_delta` inside the victim's blind
//! area plus a sigmoid suppression term that fades the weight once the
//! deviation exceeds the output budget. A greedy hill-climb proposes one
//! edit per iteration and keeps it only if the weighted loss increases and
//! the input budget still holds.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AttackBudgets, BlindMask, BoxEdit, PerturbationPlan};
use crate::geom::{footprint_corners, occupancy_grid, ConfidenceMap, DetectionBox, DetectionSet, GridDims};

/// Shape, placement, and plausibility parameters of the edit proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbParams {
    pub budgets: AttackBudgets,
    /// Injected-box footprint in meters.
    pub inject_extent: (f64, f64),
    /// Meters per grid cell.
    pub resolution: f64,
    /// Center jitter of injected boxes inside their cell, grid units.
    pub inject_center_jitter: f64,
    /// Std-dev of shift deltas, grid units.
    pub shift_std: f64,
    /// Only boxes at or below this confidence are drop candidates.
    pub drop_conf_max: f64,
    /// Posterior model for injected boxes.
    pub posterior_base: f64,
    pub posterior_slope: f64,
    /// Proposal mix (inject, shift, drop); normalized internally.
    pub kind_weights: (f64, f64, f64),
}

impl Default for PerturbParams {
    fn default() -> Self {
        Self {
            budgets: AttackBudgets::default(),
            inject_extent: (4.5, 2.0),
            resolution: 1.0,
            inject_center_jitter: 0.3,
            shift_std: 1.6,
            drop_conf_max: 0.5,
            posterior_base: 0.55,
            posterior_slope: 0.4,
            kind_weights: (0.5, 0.4, 0.1),
        }
    }
}

/// Elementwise suppression weight `1 - sigmoid(dev - delta_o)`.
pub fn suppression_weight(dev: &[f64], delta_o: f64) -> Vec<f64> {
    dev.iter().map(|&d| 1.0 - sigmoid(d - delta_o)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-cell absolute occupancy deviation between two box sets.
pub fn occupancy_deviation(pred: &[DetectionBox], gt: &[DetectionBox], dims: GridDims) -> Vec<f64> {
    let p = occupancy_grid(pred, dims);
    let g = occupancy_grid(gt, dims);
    p.iter().zip(g.iter()).map(|(a, b)| (a - b).abs()).collect()
}

/// Blind-weighted detection loss of a perturbed box set against the ground
/// truth. `mask` of `None` drops both the blind guidance and the
/// suppression, leaving the plain summed deviation.
fn weighted_loss(
    pred: &[DetectionBox],
    gt_occ: &[f64],
    dims: GridDims,
    mask: Option<&BlindMask>,
    budgets: &AttackBudgets,
) -> f64 {
    let occ = occupancy_grid(pred, dims);
    let mut total = 0.0;
    for i in 0..occ.len() {
        let dev = (occ[i] - gt_occ[i]).abs();
        let w = match mask {
            Some(m) => {
                let blind = f64::from(m.cells[i] == 0);
                budgets.w_delta * blind + (1.0 - sigmoid(dev - budgets.delta_o))
            }
            None => 1.0,
        };
        total += w * dev;
    }
    total
}

struct SearchState<'a> {
    base: &'a DetectionSet,
    gt_occ: Vec<f64>,
    dims: GridDims,
    mask: Option<&'a BlindMask>,
    params: &'a PerturbParams,
    alive: Vec<bool>,
    edits: Vec<BoxEdit>,
    cost: f64,
    loss: f64,
    suppression: Vec<f64>,
}

impl<'a> SearchState<'a> {
    fn current_boxes(&self, extra: Option<&BoxEdit>) -> Vec<DetectionBox> {
        let plan = PerturbationPlan {
            edits: self.edits.iter().cloned().chain(extra.cloned()).collect(),
            input_cost: 0.0,
            input_budget: 0.0,
            output_budget: 0.0,
            blind_weight: 0.0,
            suppression: Vec::new(),
        };
        super::apply_plan(self.base, &plan).expect("search only proposes valid ids").boxes
    }

    fn consider(&mut self, edit: BoxEdit) {
        let edit_cost = self.params.budgets.edit_cost(&edit);
        if self.cost + edit_cost > self.params.budgets.delta_i + 1e-12 {
            return;
        }
        let candidate = self.current_boxes(Some(&edit));
        let loss = weighted_loss(&candidate, &self.gt_occ, self.dims, self.mask, &self.params.budgets);
        if loss > self.loss + 1e-12 {
            if let BoxEdit::Drop { box_id } = edit {
                self.alive[box_id] = false;
            }
            let anchor = edit_anchor(&edit, self.base);
            let occ = occupancy_grid(&candidate, self.dims);
            let (cx, cy) = self.dims.cell_of(anchor.0, anchor.1);
            let dev = (occ[self.dims.index(cx, cy)] - self.gt_occ[self.dims.index(cx, cy)]).abs();
            self.suppression.push(1.0 - sigmoid(dev - self.params.budgets.delta_o));
            self.edits.push(edit);
            self.cost += edit_cost;
            self.loss = loss;
        }
    }
}

fn edit_anchor(edit: &BoxEdit, base: &DetectionSet) -> (f64, f64) {
    match edit {
        BoxEdit::Inject { new_box } => new_box.center(),
        BoxEdit::Shift { box_id, .. } | BoxEdit::Drop { box_id } => base.boxes[*box_id].center(),
    }
}

fn make_inject(
    cell: (usize, usize),
    dims: GridDims,
    conf_source: &ConfidenceMap,
    params: &PerturbParams,
    rng: &mut ChaCha8Rng,
) -> DetectionBox {
    let (cx, cy) = dims.cell_center(cell.0, cell.1);
    let j = params.inject_center_jitter;
    let center_grid = if j > 0.0 {
        (cx + rng.gen_range(-j..j), cy + rng.gen_range(-j..j))
    } else {
        (cx, cy)
    };
    let heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let corners = footprint_corners(
        (center_grid.0 * params.resolution, center_grid.1 * params.resolution),
        heading,
        params.inject_extent,
        params.resolution,
    );
    // Claimed confidence: near the sensor ceiling, nudged by the attacker's
    // own curve at that cell so values stay in the plausible band.
    let base_conf = conf_source.at_point(center_grid.0, center_grid.1);
    let confidence = (0.9 + 0.1 * base_conf).clamp(0.0, 1.0);
    let posterior = (params.posterior_base + params.posterior_slope * confidence).clamp(0.0, 1.0);
    let mut b = DetectionBox::new(corners, posterior, confidence, 0);
    b.tainted = true;
    b
}

fn propose(
    state: &SearchState<'_>,
    cells: &[(usize, usize)],
    conf_source: &ConfidenceMap,
    rng: &mut ChaCha8Rng,
) -> Option<BoxEdit> {
    let params = state.params;
    let (wi, ws, wd) = params.kind_weights;
    let total = wi + ws + wd;
    if total <= 0.0 {
        return None;
    }
    let roll: f64 = rng.gen_range(0.0..total);
    let live_ids: Vec<usize> = (0..state.base.len()).filter(|&i| state.alive[i]).collect();
    if roll < wi {
        if cells.is_empty() {
            return None;
        }
        let cell = cells[rng.gen_range(0..cells.len())];
        Some(BoxEdit::Inject { new_box: make_inject(cell, state.dims, conf_source, params, rng) })
    } else if roll < wi + ws {
        if live_ids.is_empty() {
            return None;
        }
        let box_id = live_ids[rng.gen_range(0..live_ids.len())];
        let noise = Normal::new(0.0, params.shift_std).expect("valid std");
        let deltas: [f64; 8] = if rng.gen_bool(0.7) {
            let dx = noise.sample(rng);
            let dy = noise.sample(rng);
            [dx, dy, dx, dy, dx, dy, dx, dy]
        } else {
            std::array::from_fn(|_| noise.sample(rng) * 0.4)
        };
        // Reject proposals that break box convexity.
        let mut probe = state.base.boxes[box_id].clone();
        for (c, d) in probe.corners.iter_mut().zip(deltas.iter()) {
            *c += d;
        }
        probe.is_valid().then_some(BoxEdit::Shift { box_id, deltas })
    } else {
        let eligible: Vec<usize> = live_ids
            .into_iter()
            .filter(|&i| state.base.boxes[i].confidence <= params.drop_conf_max)
            .collect();
        if eligible.is_empty() {
            return None;
        }
        Some(BoxEdit::Drop { box_id: eligible[rng.gen_range(0..eligible.len())] })
    }
}

fn hill_climb(
    y_clean: &DetectionSet,
    y_gt: &DetectionSet,
    dims: GridDims,
    mask: Option<&BlindMask>,
    inject_cells: Vec<(usize, usize)>,
    conf_source: &ConfidenceMap,
    params: &PerturbParams,
    iters: usize,
    rng: &mut ChaCha8Rng,
) -> PerturbationPlan {
    let gt_occ = occupancy_grid(&y_gt.boxes, dims);
    let base_loss = weighted_loss(&y_clean.boxes, &gt_occ, dims, mask, &params.budgets);
    let mut state = SearchState {
        base: y_clean,
        gt_occ,
        dims,
        mask,
        params,
        alive: vec![true; y_clean.len()],
        edits: Vec::new(),
        cost: 0.0,
        loss: base_loss,
        suppression: Vec::new(),
    };
    for _ in 0..iters {
        if let Some(edit) = propose(&state, &inject_cells, conf_source, rng) {
            state.consider(edit);
        }
    }
    PerturbationPlan {
        edits: state.edits,
        input_cost: state.cost,
        input_budget: params.budgets.delta_i,
        output_budget: params.budgets.delta_o,
        blind_weight: params.budgets.w_delta,
        suppression: state.suppression,
    }
}

/// Blind-area-guided attack: injections are restricted to blind cells and
/// the loss is blind-weighted with sigmoid suppression of oversized output
/// deviations. An all-confident mask yields an empty plan.
pub fn optimize_bac(
    y_clean: &DetectionSet,
    y_gt: &DetectionSet,
    mask: &BlindMask,
    conf_source: &ConfidenceMap,
    params: &PerturbParams,
    iters: usize,
    rng: &mut ChaCha8Rng,
) -> PerturbationPlan {
    let blind = mask.blind_cells();
    if blind.is_empty() {
        return PerturbationPlan::empty(&params.budgets);
    }
    hill_climb(y_clean, y_gt, mask.dims, Some(mask), blind, conf_source, params, iters, rng)
}

/// Untargeted baseline: uniform placement over the whole grid, no blind
/// guidance, no suppression; deviations are measured against the clean
/// message itself as the ground-truth proxy.
pub fn baseline_attack(
    y_clean: &DetectionSet,
    dims: GridDims,
    conf_source: &ConfidenceMap,
    params: &PerturbParams,
    iters: usize,
    rng: &mut ChaCha8Rng,
) -> PerturbationPlan {
    let mut all_cells = Vec::with_capacity(dims.n_cells());
    for y in 0..dims.h {
        for x in 0..dims.w {
            all_cells.push((x, y));
        }
    }
    hill_climb(y_clean, y_clean, dims, None, all_cells, conf_source, params, iters, rng)
}
