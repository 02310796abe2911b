//! Single-frame spatial consistency: bipartite matching between ego and
//! collaborative detections and the confidence-scaled concordance loss.
//!
//! The matching cost between two boxes combines the one-sided posterior gap
//! with the IoU complement: `ReLU(p1 - p2) + phi * (1 - IoU)`. Sets of
//! different size are padded with empty slots; matching a real box against a
//! pad slot costs its posterior plus `phi`, the maximum penalty on both
//! terms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{iou, ConfidenceMap, DetectionBox, DetectionSet};

#[derive(Debug, Error, PartialEq)]
pub enum SpatialError {
    #[error("confidence map sums to zero; cannot normalize the concordance loss")]
    DegenerateConfidenceMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchCostParams {
    /// IoU-term weight.
    pub phi: f64,
    /// Prediction classes; the simulator is single-class but the loss sums
    /// over this list as written.
    pub classes: Vec<String>,
}

impl Default for MatchCostParams {
    fn default() -> Self {
        Self { phi: 1.0, classes: vec!["vehicle".to_string()] }
    }
}

/// One side of a matched pair: a concrete box index or a pad slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Real(usize),
    Pad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// (ego slot, collaborator slot), one-to-one over the padded sets.
    pub pairs: Vec<(Slot, Slot)>,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialScore {
    pub l_csc: f64,
    pub per_pair_terms: Vec<f64>,
}

/// Pairwise matching cost for one class.
pub fn match_cost(y1: &DetectionBox, y2: &DetectionBox, params: &MatchCostParams) -> f64 {
    (y1.class_posterior - y2.class_posterior).max(0.0) + params.phi * (1.0 - iou(y1, y2))
}

/// Cost of a real box matched against a pad slot.
pub fn pad_cost(real: &DetectionBox, params: &MatchCostParams) -> f64 {
    real.class_posterior + params.phi
}

/// Minimum-cost one-to-one assignment over an n x n cost matrix, O(n^3)
/// shortest-augmenting-path form with row/column potentials.
/// Returns, for each row, the assigned column.
pub fn assign_min_cost(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|row| row.len() == n));
    // 1-based internal arrays; column 0 is the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned_row = vec![0usize; n + 1]; // row occupying each column
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        assigned_row[0] = row;
        let mut j0 = 0usize;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < min_to[j] {
                        min_to[j] = cur;
                        way[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0usize; n];
    for j in 1..=n {
        if assigned_row[j] > 0 {
            result[assigned_row[j] - 1] = j - 1;
        }
    }
    result
}

/// Minimum-total-cost one-to-one matching between the two sets, the smaller
/// side padded with empty slots.
pub fn optimal_match(
    y_e: &DetectionSet,
    y_ei: &DetectionSet,
    params: &MatchCostParams,
) -> Matching {
    let n = y_e.len().max(y_ei.len());
    if n == 0 {
        return Matching { pairs: Vec::new(), total_cost: 0.0 };
    }
    let mut cost = vec![vec![0.0f64; n]; n];
    for (i, row) in cost.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = match (y_e.boxes.get(i), y_ei.boxes.get(j)) {
                (Some(a), Some(b)) => match_cost(a, b, params),
                (Some(a), None) => pad_cost(a, params),
                (None, Some(b)) => pad_cost(b, params),
                (None, None) => 0.0,
            };
        }
    }
    let assignment = assign_min_cost(&cost);
    let mut pairs = Vec::with_capacity(n);
    let mut total = 0.0;
    for (i, &j) in assignment.iter().enumerate() {
        let ego = if i < y_e.len() { Slot::Real(i) } else { Slot::Pad };
        let collab = if j < y_ei.len() { Slot::Real(j) } else { Slot::Pad };
        pairs.push((ego, collab));
        total += cost[i][j];
    }
    Matching { pairs, total_cost: total }
}

/// Confidence-scaled spatial concordance loss between the ego detections and
/// one collaborator's fused detections.
///
/// Each matched pair's cost is scaled by the ego confidence of the cell
/// holding the ego box (the collaborator box's cell for pad-ego pairs) and
/// normalized by the confidence-map mass, so complements that appear where
/// the ego cannot see contribute nothing.
pub fn csc_loss(
    y_e: &DetectionSet,
    y_ei: &DetectionSet,
    c_map: &ConfidenceMap,
    params: &MatchCostParams,
) -> Result<SpatialScore, SpatialError> {
    let norm = c_map.total();
    if norm <= 0.0 {
        return Err(SpatialError::DegenerateConfidenceMap);
    }
    let matching = optimal_match(y_e, y_ei, params);
    let mut per_pair_terms = Vec::with_capacity(matching.pairs.len());
    let mut l_csc = 0.0;
    for _class in &params.classes {
        for &(ego, collab) in &matching.pairs {
            let (cost, anchor) = match (ego, collab) {
                (Slot::Real(i), Slot::Real(j)) => {
                    let a = &y_e.boxes[i];
                    (match_cost(a, &y_ei.boxes[j], params), a.center())
                }
                (Slot::Real(i), Slot::Pad) => {
                    let a = &y_e.boxes[i];
                    (pad_cost(a, params), a.center())
                }
                (Slot::Pad, Slot::Real(j)) => {
                    let b = &y_ei.boxes[j];
                    (pad_cost(b, params), b.center())
                }
                (Slot::Pad, Slot::Pad) => continue,
            };
            let conf = c_map.at_point(anchor.0, anchor.1);
            let term = cost * conf / norm;
            per_pair_terms.push(term);
            l_csc += term;
        }
    }
    Ok(SpatialScore { l_csc, per_pair_terms })
}
