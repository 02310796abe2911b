//! Adversarial message crafting: temporal scheduling of malicious messages,
//! victim blind-region inference, and budget-constrained perturbation of
//! detection messages.

pub mod blind;
pub mod optimize;
pub mod schedule;

pub use blind::{adaptive_neighbors, differential_detect, segment_blind_regions, BlindMask, SegmentationParams};
pub use optimize::{baseline_attack, optimize_bac, suppression_weight, PerturbParams};
pub use schedule::{schedule_p, schedule_r, schedule_s, AttackMode, AttackProcessParams, AttackSchedule};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{DetectionBox, DetectionSet};

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("invalid attack parameters: {0}")]
    InvalidParams(String),
    #[error("infeasible schedule: {total} messages exceed {capacity} attacker-frame slots")]
    InfeasibleSchedule { total: u64, capacity: u64 },
    #[error("no victim anchor: the victim view is empty, attack aborted for this frame")]
    NoVictimAnchor,
    #[error("plan references box id {id} not present in the message")]
    DanglingBoxId { id: usize },
}

/// One edit to a detection message. `box_id` indexes the original message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BoxEdit {
    Inject { new_box: DetectionBox },
    Shift { box_id: usize, deltas: [f64; 8] },
    Drop { box_id: usize },
}

/// Cost model mapping discrete box edits onto the input perturbation budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackBudgets {
    /// Input perturbation budget.
    pub delta_i: f64,
    /// Output deviation midpoint of the suppression weight.
    pub delta_o: f64,
    /// Blind-region guidance weight.
    pub w_delta: f64,
    /// Budget charge per injected box.
    pub inject_cost: f64,
    /// Budget charge per dropped box.
    pub drop_cost: f64,
    /// Budget charge per grid unit of corner displacement.
    pub shift_cost_per_unit: f64,
}

impl Default for AttackBudgets {
    fn default() -> Self {
        Self {
            delta_i: 0.5,
            delta_o: 0.5,
            w_delta: 2.0,
            inject_cost: 0.08,
            drop_cost: 0.1,
            shift_cost_per_unit: 0.1,
        }
    }
}

impl AttackBudgets {
    pub fn edit_cost(&self, edit: &BoxEdit) -> f64 {
        match edit {
            BoxEdit::Inject { .. } => self.inject_cost,
            BoxEdit::Drop { .. } => self.drop_cost,
            BoxEdit::Shift { deltas, .. } => {
                let norm: f64 = deltas.iter().map(|d| d * d).sum::<f64>().sqrt();
                self.shift_cost_per_unit * norm
            }
        }
    }
}

/// An ordered batch of box edits with its budget accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub edits: Vec<BoxEdit>,
    /// Total input magnitude of the applied edits.
    pub input_cost: f64,
    pub input_budget: f64,
    pub output_budget: f64,
    pub blind_weight: f64,
    /// Suppression weight at each accepted edit's cell, in edit order.
    pub suppression: Vec<f64>,
}

impl PerturbationPlan {
    pub fn empty(budgets: &AttackBudgets) -> Self {
        Self {
            edits: Vec::new(),
            input_cost: 0.0,
            input_budget: budgets.delta_i,
            output_budget: budgets.delta_o,
            blind_weight: budgets.w_delta,
            suppression: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }
}

/// Apply a plan to a message. Edits run in order; `box_id` always refers to
/// the original message indices. Shifted and injected boxes are marked
/// tainted for evaluation bookkeeping.
pub fn apply_plan(msg: &DetectionSet, plan: &PerturbationPlan) -> Result<DetectionSet, AttackError> {
    let mut originals: Vec<Option<DetectionBox>> = msg.boxes.iter().cloned().map(Some).collect();
    let mut injected: Vec<DetectionBox> = Vec::new();
    for edit in &plan.edits {
        match edit {
            BoxEdit::Inject { new_box } => {
                let mut b = new_box.clone();
                b.tainted = true;
                b.source_agent = msg.owner;
                injected.push(b);
            }
            BoxEdit::Shift { box_id, deltas } => {
                let slot = originals
                    .get_mut(*box_id)
                    .ok_or(AttackError::DanglingBoxId { id: *box_id })?;
                let b = slot.as_mut().ok_or(AttackError::DanglingBoxId { id: *box_id })?;
                for (c, d) in b.corners.iter_mut().zip(deltas.iter()) {
                    *c += d;
                }
                b.tainted = true;
            }
            BoxEdit::Drop { box_id } => {
                let slot = originals
                    .get_mut(*box_id)
                    .ok_or(AttackError::DanglingBoxId { id: *box_id })?;
                if slot.take().is_none() {
                    return Err(AttackError::DanglingBoxId { id: *box_id });
                }
            }
        }
    }
    let mut out = DetectionSet::new(msg.frame, msg.owner);
    out.boxes = originals.into_iter().flatten().chain(injected).collect();
    Ok(out)
}
