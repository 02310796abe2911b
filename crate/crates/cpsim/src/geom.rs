//! BEV geometry: quadrilateral detection boxes, polygon overlap, and the
//! grid types shared by the sensing, attack, and defense layers.
//!
//! All detection-space coordinates are in grid units (cells); world-space
//! quantities in meters are converted on entry via the grid resolution.

use serde::{Deserialize, Serialize};

/// One detected object: 4 BEV corner points stored flat as
/// `[x1, y1, x2, y2, x3, y3, x4, y4]`, counter-clockwise starting from the
/// front-left corner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub corners: [f64; 8],
    /// Class posterior probability in [0, 1].
    pub class_posterior: f64,
    /// Detection confidence in [0, 1].
    pub confidence: f64,
    pub source_agent: u32,
    /// Evaluation bookkeeping: set on boxes created or moved by an attack
    /// plan. Defense code never reads this.
    #[serde(default, skip_serializing_if = "is_false")]
    pub tainted: bool,
    /// Set on boxes synthesized by gap interpolation rather than observed.
    #[serde(default, skip_serializing_if = "is_false")]
    pub interpolated: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl DetectionBox {
    pub fn new(corners: [f64; 8], class_posterior: f64, confidence: f64, source_agent: u32) -> Self {
        Self {
            corners,
            class_posterior,
            confidence,
            source_agent,
            tainted: false,
            interpolated: false,
        }
    }

    pub fn corner(&self, i: usize) -> (f64, f64) {
        (self.corners[2 * i], self.corners[2 * i + 1])
    }

    /// Centroid of the 4 corners.
    pub fn center(&self) -> (f64, f64) {
        let mut cx = 0.0;
        let mut cy = 0.0;
        for i in 0..4 {
            cx += self.corners[2 * i];
            cy += self.corners[2 * i + 1];
        }
        (cx / 4.0, cy / 4.0)
    }

    pub fn area(&self) -> f64 {
        let pts: Vec<(f64, f64)> = (0..4).map(|i| self.corner(i)).collect();
        polygon_area(&pts)
    }

    /// A valid box is a convex counter-clockwise quadrilateral with positive
    /// area, and posterior/confidence inside [0, 1].
    pub fn is_valid(&self) -> bool {
        if !self.corners.iter().all(|c| c.is_finite()) {
            return false;
        }
        if !(0.0..=1.0).contains(&self.class_posterior) || !(0.0..=1.0).contains(&self.confidence) {
            return false;
        }
        let pts: Vec<(f64, f64)> = (0..4).map(|i| self.corner(i)).collect();
        is_convex_ccw(&pts) && polygon_area(&pts) > 0.0
    }

    /// Axis-aligned bounds (min_x, min_y, max_x, max_y).
    pub fn aabb(&self) -> (f64, f64, f64, f64) {
        let mut min_x = f64::INFINITY;
        let mut min_y = f64::INFINITY;
        let mut max_x = f64::NEG_INFINITY;
        let mut max_y = f64::NEG_INFINITY;
        for i in 0..4 {
            let (x, y) = self.corner(i);
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
        }
        (min_x, min_y, max_x, max_y)
    }
}

/// Detections of one agent at one frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub boxes: Vec<DetectionBox>,
    pub frame: u64,
    pub owner: u32,
}

impl DetectionSet {
    pub fn new(frame: u64, owner: u32) -> Self {
        Self { boxes: Vec::new(), frame, owner }
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// BEV grid dimensions (width and height in cells).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridDims {
    pub w: usize,
    pub h: usize,
}

impl GridDims {
    pub fn new(w: usize, h: usize) -> Self {
        Self { w, h }
    }

    pub fn n_cells(&self) -> usize {
        self.w * self.h
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.w + x
    }

    /// Grid cell containing a point in grid coordinates, clamped to bounds.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let cx = (x.floor() as i64).clamp(0, self.w as i64 - 1) as usize;
        let cy = (y.floor() as i64).clamp(0, self.h as i64 - 1) as usize;
        (cx, cy)
    }

    pub fn cell_center(&self, x: usize, y: usize) -> (f64, f64) {
        (x as f64 + 0.5, y as f64 + 0.5)
    }

    /// Diagonal length in cells, the distance normalizer for region growth.
    pub fn diag(&self) -> f64 {
        ((self.w * self.w + self.h * self.h) as f64).sqrt()
    }
}

/// Per-cell ego confidence over the BEV plane, row-major, each value in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceMap {
    pub cells: Vec<f64>,
    pub dims: GridDims,
    /// Meters per cell.
    pub resolution: f64,
}

impl ConfidenceMap {
    pub fn zeros(dims: GridDims, resolution: f64) -> Self {
        Self { cells: vec![0.0; dims.n_cells()], dims, resolution }
    }

    pub fn uniform(dims: GridDims, resolution: f64, value: f64) -> Self {
        Self { cells: vec![value; dims.n_cells()], dims, resolution }
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.cells[self.dims.index(x, y)]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let i = self.dims.index(x, y);
        self.cells[i] = v;
    }

    /// Confidence of the cell containing a point in grid coordinates.
    pub fn at_point(&self, x: f64, y: f64) -> f64 {
        let (cx, cy) = self.dims.cell_of(x, y);
        self.get(cx, cy)
    }

    /// Sum of all cell values (the normalizer `|C_e|`).
    pub fn total(&self) -> f64 {
        self.cells.iter().sum()
    }
}

/// Signed shoelace area; positive for counter-clockwise vertex order.
fn signed_area(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (x0, y0) = pts[i];
        let (x1, y1) = pts[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc / 2.0
}

pub fn polygon_area(pts: &[(f64, f64)]) -> f64 {
    signed_area(pts).abs()
}

/// Strict convexity check for counter-clockwise vertex order: every turn is
/// a left turn and no three consecutive vertices are collinear.
pub fn is_convex_ccw(pts: &[(f64, f64)]) -> bool {
    let n = pts.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (ax, ay) = pts[i];
        let (bx, by) = pts[(i + 1) % n];
        let (cx, cy) = pts[(i + 2) % n];
        let cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
        if cross <= 0.0 {
            return false;
        }
    }
    true
}

/// Sutherland-Hodgman clip of a convex `subject` polygon against a convex
/// counter-clockwise `clip` polygon. Returns the intersection vertices.
pub fn convex_clip(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut output: Vec<(f64, f64)> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            return output;
        }
        let (ex, ey) = clip[i];
        let (fx, fy) = clip[(i + 1) % n];
        let input = std::mem::take(&mut output);
        let inside = |p: (f64, f64)| (fx - ex) * (p.1 - ey) - (fy - ey) * (p.0 - ex) >= 0.0;
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let cur_in = inside(cur);
            let prev_in = inside(prev);
            if cur_in {
                if !prev_in {
                    if let Some(p) = segment_line_intersection(prev, cur, (ex, ey), (fx, fy)) {
                        output.push(p);
                    }
                }
                output.push(cur);
            } else if prev_in {
                if let Some(p) = segment_line_intersection(prev, cur, (ex, ey), (fx, fy)) {
                    output.push(p);
                }
            }
        }
    }
    output
}

fn segment_line_intersection(
    a: (f64, f64),
    b: (f64, f64),
    e: (f64, f64),
    f: (f64, f64),
) -> Option<(f64, f64)> {
    let dx = b.0 - a.0;
    let dy = b.1 - a.1;
    let ex = f.0 - e.0;
    let ey = f.1 - e.1;
    let denom = dx * ey - dy * ex;
    if denom.abs() < 1e-300 {
        return None;
    }
    let t = ((e.0 - a.0) * ey - (e.1 - a.1) * ex) / denom;
    Some((a.0 + t * dx, a.1 + t * dy))
}

fn box_vertices(b: &DetectionBox) -> Vec<(f64, f64)> {
    (0..4).map(|i| b.corner(i)).collect()
}

/// Ensure counter-clockwise order for the clipper regardless of stored order.
fn ccw_vertices(b: &DetectionBox) -> Vec<(f64, f64)> {
    let mut v = box_vertices(b);
    if signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

/// Overlap area of two convex quadrilaterals.
pub fn intersection_area(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let (a0, a1, a2, a3) = a.aabb();
    let (b0, b1, b2, b3) = b.aabb();
    if a2 <= b0 || b2 <= a0 || a3 <= b1 || b3 <= a1 {
        return 0.0;
    }
    let clipped = convex_clip(&ccw_vertices(a), &ccw_vertices(b));
    if clipped.len() < 3 {
        0.0
    } else {
        polygon_area(&clipped)
    }
}

/// Intersection-over-union of two BEV boxes. Symmetric, 1 for identical
/// regions, 0 for disjoint ones.
pub fn iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Fraction of each grid cell covered by the boxes, clamped to [0, 1].
/// Overlapping boxes accumulate before clamping.
pub fn occupancy_grid(boxes: &[DetectionBox], dims: GridDims) -> Vec<f64> {
    let mut grid = vec![0.0; dims.n_cells()];
    for b in boxes {
        let (min_x, min_y, max_x, max_y) = b.aabb();
        let x0 = (min_x.floor().max(0.0)) as usize;
        let y0 = (min_y.floor().max(0.0)) as usize;
        let x1 = (max_x.ceil().min(dims.w as f64)) as usize;
        let y1 = (max_y.ceil().min(dims.h as f64)) as usize;
        let verts = ccw_vertices(b);
        for cy in y0..y1.min(dims.h) {
            for cx in x0..x1.min(dims.w) {
                let cell = [
                    (cx as f64, cy as f64),
                    (cx as f64 + 1.0, cy as f64),
                    (cx as f64 + 1.0, cy as f64 + 1.0),
                    (cx as f64, cy as f64 + 1.0),
                ];
                let clipped = convex_clip(&verts, &cell);
                if clipped.len() >= 3 {
                    grid[dims.index(cx, cy)] += polygon_area(&clipped);
                }
            }
        }
    }
    for v in grid.iter_mut() {
        *v = v.min(1.0);
    }
    grid
}

/// Corner array for an oriented rectangular footprint, counter-clockwise
/// starting from the front-left corner. Inputs in meters, output in grid
/// units.
pub fn footprint_corners(
    center_m: (f64, f64),
    heading: f64,
    extent_m: (f64, f64),
    resolution: f64,
) -> [f64; 8] {
    let (hl, hw) = (extent_m.0 / 2.0, extent_m.1 / 2.0);
    // Local frame: +x forward, +y left.
    let local = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)];
    let (s, c) = heading.sin_cos();
    let mut out = [0.0; 8];
    for (i, (lx, ly)) in local.iter().enumerate() {
        let wx = center_m.0 + c * lx - s * ly;
        let wy = center_m.1 + s * lx + c * ly;
        out[2 * i] = wx / resolution;
        out[2 * i + 1] = wy / resolution;
    }
    out
}
