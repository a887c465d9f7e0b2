//! Axis-aligned box arithmetic: IoU and greedy non-maximum suppression.

use crate::error::{Error, Result};

/// Axis-aligned box in continuous scene coordinates.
///
/// Always has strictly positive width and height and finite corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x2 <= x1 || y2 <= y1 {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from possibly degenerate corners by clipping to
    /// `[0, width] x [0, height]` and enforcing a minimum side of `min_side`.
    pub fn clipped(x1: f64, y1: f64, x2: f64, y2: f64, width: f64, height: f64, min_side: f64) -> Self {
        let (ax1, ax2) = clip_interval(x1, x2, width, min_side);
        let (ay1, ay2) = clip_interval(y1, y2, height, min_side);
        Self {
            x1: ax1,
            y1: ay1,
            x2: ax2,
            y2: ay2,
        }
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Same box moved by `(dx, dy)`. The result is not clipped.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= width && self.y2 <= height
    }

    /// Corner-wise linear interpolation `(1 - t) * self + t * other`.
    pub fn lerp(&self, other: &BBox, t: f64) -> Self {
        let mix = |a: f64, b: f64| (1.0 - t) * a + t * b;
        Self {
            x1: mix(self.x1, other.x1),
            y1: mix(self.y1, other.y1),
            x2: mix(self.x2, other.x2),
            y2: mix(self.y2, other.y2),
        }
    }
}

fn clip_interval(lo: f64, hi: f64, extent: f64, min_side: f64) -> (f64, f64) {
    let (mut lo, mut hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    lo = lo.clamp(0.0, extent);
    hi = hi.clamp(0.0, extent);
    if hi - lo < min_side {
        let mid = 0.5 * (lo + hi);
        lo = (mid - 0.5 * min_side).clamp(0.0, extent - min_side);
        hi = lo + min_side;
    }
    (lo, hi)
}

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy non-maximum suppression.
///
/// Visits detections by descending score (ties: lower index first) and drops any
/// box whose IoU with an already kept box is strictly above `iou_threshold`.
/// Returns the kept indices in visiting order.
pub fn nms(dets: &[(BBox, f64)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| dets[j].1.total_cmp(&dets[i].1).then(i.cmp(&j)));

    let mut kept: Vec<usize> = Vec::with_capacity(dets.len());
    for idx in order {
        let suppressed = kept
            .iter()
            .any(|&k| iou(&dets[k].0, &dets[idx].0) > iou_threshold);
        if !suppressed {
            kept.push(idx);
        }
    }
    kept
}
