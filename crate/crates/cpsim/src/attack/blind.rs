//! Victim blind-region inference: differential detection splits the boxes
//! the victim sees from those only collaboration reveals, and a dual-queue
//! region growth turns the two seed sets into a binary confident/blind mask
//! over the BEV grid.

use serde::{Deserialize, Serialize};

use super::AttackError;
use crate::geom::{convex_clip, iou, polygon_area, DetectionBox, DetectionSet, GridDims};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    /// Base neighbor count at the victim grid.
    pub k_base: usize,
    /// Distance decay of the neighbor count.
    pub gamma_d: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self { k_base: 6, gamma_d: 0.3 }
    }
}

/// Binary confident/blind mask: 1 marks the victim's confident area, 0 the
/// blind area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindMask {
    pub cells: Vec<u8>,
    pub dims: GridDims,
    /// The victim grid cell the growth is anchored on.
    pub victim_cell: (usize, usize),
}

impl BlindMask {
    pub fn is_blind(&self, x: usize, y: usize) -> bool {
        self.cells[self.dims.index(x, y)] == 0
    }

    pub fn blind_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.dims.h {
            for x in 0..self.dims.w {
                if self.is_blind(x, y) {
                    out.push((x, y));
                }
            }
        }
        out
    }
}

/// Split collaborative detections into the victim's own view and the boxes
/// only collaboration contributes. Matching is one-to-one greedy by
/// descending IoU at the given threshold.
pub fn differential_detect(
    y_single: &DetectionSet,
    y_collab: &DetectionSet,
    match_iou: f64,
) -> (DetectionSet, DetectionSet) {
    let y_vic = y_single.clone();
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (i, a) in y_single.boxes.iter().enumerate() {
        for (j, b) in y_collab.boxes.iter().enumerate() {
            let v = iou(a, b);
            if v >= match_iou {
                pairs.push((i, j, v));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
    });
    let mut used_single = vec![false; y_single.len()];
    let mut used_collab = vec![false; y_collab.len()];
    for (i, j, _) in pairs {
        if !used_single[i] && !used_collab[j] {
            used_single[i] = true;
            used_collab[j] = true;
        }
    }
    let mut y_nvic = DetectionSet::new(y_collab.frame, y_collab.owner);
    for (j, b) in y_collab.boxes.iter().enumerate() {
        if !used_collab[j] {
            y_nvic.boxes.push(b.clone());
        }
    }
    (y_vic, y_nvic)
}

const NEIGHBOR_OFFSETS: [(i64, i64); 8] = [
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
];

fn cell_dist(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = a.0 as f64 - b.0 as f64;
    let dy = a.1 as f64 - b.1 as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Distance-adaptive neighbor count and selection: the count shrinks
/// exponentially with the distance from the victim grid, and the in-grid
/// 8-neighbors are ranked by how well their direction aligns with the ray
/// toward the victim grid.
pub fn adaptive_neighbors(
    s: (usize, usize),
    e: (usize, usize),
    dims: GridDims,
    params: &SegmentationParams,
) -> (usize, Vec<(usize, usize)>) {
    let d = cell_dist(s, e);
    let k_s = (params.k_base as f64 * (-params.gamma_d * d / dims.diag()).exp()).ceil() as usize;
    let to_e = (e.0 as f64 - s.0 as f64, e.1 as f64 - s.1 as f64);
    let mut candidates: Vec<((usize, usize), f64)> = Vec::with_capacity(8);
    for &(dx, dy) in NEIGHBOR_OFFSETS.iter() {
        let nx = s.0 as i64 + dx;
        let ny = s.1 as i64 + dy;
        if nx < 0 || ny < 0 || nx >= dims.w as i64 || ny >= dims.h as i64 {
            continue;
        }
        let angle = if d == 0.0 {
            0.0
        } else {
            let dot = to_e.0 * dx as f64 + to_e.1 * dy as f64;
            let cross = to_e.0 * dy as f64 - to_e.1 * dx as f64;
            cross.atan2(dot).abs()
        };
        candidates.push(((nx as usize, ny as usize), angle));
    }
    candidates.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let selected = candidates.iter().take(k_s).map(|&(c, _)| c).collect();
    (k_s, selected)
}

/// Cells whose square overlaps any of the boxes.
fn covered_cells(boxes: &[DetectionBox], dims: GridDims) -> Vec<(usize, usize)> {
    let mut seen = vec![false; dims.n_cells()];
    let mut out = Vec::new();
    for b in boxes {
        let (min_x, min_y, max_x, max_y) = b.aabb();
        let x0 = min_x.floor().max(0.0) as usize;
        let y0 = min_y.floor().max(0.0) as usize;
        let x1 = (max_x.ceil().min(dims.w as f64)) as usize;
        let y1 = (max_y.ceil().min(dims.h as f64)) as usize;
        let verts: Vec<(f64, f64)> = (0..4).map(|i| b.corner(i)).collect();
        let verts = if crate::geom::is_convex_ccw(&verts) {
            verts
        } else {
            let mut v = verts;
            v.reverse();
            v
        };
        for cy in y0..y1.min(dims.h) {
            for cx in x0..x1.min(dims.w) {
                if seen[dims.index(cx, cy)] {
                    continue;
                }
                let cell = [
                    (cx as f64, cy as f64),
                    (cx as f64 + 1.0, cy as f64),
                    (cx as f64 + 1.0, cy as f64 + 1.0),
                    (cx as f64, cy as f64 + 1.0),
                ];
                let clipped = convex_clip(&verts, &cell);
                if clipped.len() >= 3 && polygon_area(&clipped) > 1e-9 {
                    seen[dims.index(cx, cy)] = true;
                    out.push((cx, cy));
                }
            }
        }
    }
    out.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    out
}

/// The grid cell minimizing the total distance to the victim-box centers.
fn victim_grid(y_vic: &DetectionSet, dims: GridDims) -> (usize, usize) {
    let centers: Vec<(f64, f64)> = y_vic.boxes.iter().map(|b| b.center()).collect();
    let mut best = (0usize, 0usize);
    let mut best_cost = f64::INFINITY;
    for cy in 0..dims.h {
        for cx in 0..dims.w {
            let (gx, gy) = dims.cell_center(cx, cy);
            let cost: f64 = centers
                .iter()
                .map(|&(x, y)| ((gx - x).powi(2) + (gy - y).powi(2)).sqrt())
                .sum();
            if cost < best_cost {
                best_cost = cost;
                best = (cx, cy);
            }
        }
    }
    best
}

/// Dual-queue region growth from the victim-view and complement seeds.
///
/// Phase one grows both regions in lockstep with the distance-adaptive
/// restricted neighborhoods, the confident queue expanding first in each
/// round. Because restricted neighborhoods can leave pockets unreачable, a
/// second pass reruns the same lockstep growth with the full 8-neighborhood
/// from the already-labeled cells until every cell is assigned.
pub fn segment_blind_regions(
    y_vic: &DetectionSet,
    y_nvic: &DetectionSet,
    dims: GridDims,
    params: &SegmentationParams,
) -> Result<BlindMask, AttackError> {
    if y_vic.is_empty() {
        return Err(AttackError::NoVictimAnchor);
    }
    let e = victim_grid(y_vic, dims);
    let mut label = vec![0i8; dims.n_cells()];
    let mut q_ca: std::collections::VecDeque<(usize, usize)> = std::collections::VecDeque::new();
    let mut q_ba: std::collections::VecDeque<(usize, usize)> = std::collections::VecDeque::new();

    for (cx, cy) in covered_cells(&y_vic.boxes, dims) {
        if label[dims.index(cx, cy)] == 0 {
            label[dims.index(cx, cy)] = 1;
            q_ca.push_back((cx, cy));
        }
    }
    if y_nvic.is_empty() {
        // Farthest cell from the victim grid seeds the blind area.
        let mut far = (0usize, 0usize);
        let mut far_d = -1.0;
        for cy in 0..dims.h {
            for cx in 0..dims.w {
                let d = cell_dist((cx, cy), e);
                if d > far_d {
                    far_d = d;
                    far = (cx, cy);
                }
            }
        }
        if label[dims.index(far.0, far.1)] == 0 {
            label[dims.index(far.0, far.1)] = -1;
            q_ba.push_back(far);
        }
    } else {
        for (cx, cy) in covered_cells(&y_nvic.boxes, dims) {
            if label[dims.index(cx, cy)] == 0 {
                label[dims.index(cx, cy)] = -1;
                q_ba.push_back((cx, cy));
            }
        }
    }

    grow(&mut label, &mut q_ca, &mut q_ba, e, dims, params, false);

    if label.iter().any(|&l| l == 0) {
        // Completion pass: full neighborhoods from the labeled frontier.
        let mut q_ca = std::collections::VecDeque::new();
        let mut q_ba = std::collections::VecDeque::new();
        for cy in 0..dims.h {
            for cx in 0..dims.w {
                match label[dims.index(cx, cy)] {
                    1 => q_ca.push_back((cx, cy)),
                    -1 => q_ba.push_back((cx, cy)),
                    _ => {}
                }
            }
        }
        grow(&mut label, &mut q_ca, &mut q_ba, e, dims, params, true);
    }

    let cells: Vec<u8> = label.iter().map(|&l| u8::from(l == 1)).collect();
    Ok(BlindMask { cells, dims, victim_cell: e })
}

fn grow(
    label: &mut [i8],
    q_ca: &mut std::collections::VecDeque<(usize, usize)>,
    q_ba: &mut std::collections::VecDeque<(usize, usize)>,
    e: (usize, usize),
    dims: GridDims,
    params: &SegmentationParams,
    full_neighborhood: bool,
) {
    while !q_ca.is_empty() || !q_ba.is_empty() {
        for which in 0..2 {
            let (queue, value) = if which == 0 { (&mut *q_ca, 1i8) } else { (&mut *q_ba, -1i8) };
            let Some(s) = queue.pop_front() else { continue };
            let neighbors: Vec<(usize, usize)> = if full_neighborhood {
                NEIGHBOR_OFFSETS
                    .iter()
                    .filter_map(|&(dx, dy)| {
                        let nx = s.0 as i64 + dx;
                        let ny = s.1 as i64 + dy;
                        (nx >= 0 && ny >= 0 && nx < dims.w as i64 && ny < dims.h as i64)
                            .then_some((nx as usize, ny as usize))
                    })
                    .collect()
            } else {
                adaptive_neighbors(s, e, dims, params).1
            };
            for (nx, ny) in neighbors {
                let idx = dims.index(nx, ny);
                if label[idx] == 0 {
                    label[idx] = value;
                    queue.push_back((nx, ny));
                }
            }
        }
    }
}
