//! Teacher-side pseudo-labels: dual-threshold partitioning, IoU-based hard
//! label assignment, and matching of proposals to low-confidence boxes.

use crate::geometry::{iou, BBox};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub category: usize,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    /// `confidence >= sigma_high`
    pub high: Vec<Detection>,
    /// `sigma_low <= confidence < sigma_high`
    pub low: Vec<Detection>,
    pub dropped: usize,
    pub sigma_high: f64,
    pub sigma_low: f64,
}

/// Splits detections into the high band, the low band and the discarded rest.
/// Input order is preserved inside each band.
pub fn partition_detections(dets: &[Detection], sigma_high: f64, sigma_low: f64) -> PseudoLabelSet {
    debug_assert!(sigma_low <= sigma_high);
    let mut high = Vec::new();
    let mut low = Vec::new();
    let mut dropped = 0;
    for d in dets {
        if d.confidence >= sigma_high {
            high.push(*d);
        } else if d.confidence >= sigma_low {
            low.push(*d);
        } else {
            dropped += 1;
        }
    }
    PseudoLabelSet {
        high,
        low,
        dropped,
        sigma_high,
        sigma_low,
    }
}

/// Outcome of assigning one proposal against a set of boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    /// Category in `[0, C)` or `C` for background.
    pub label: usize,
    /// Index of the best-overlapping box, if there is any box.
    pub best: Option<usize>,
    pub best_iou: f64,
}

/// Best-IoU box for `bbox`; ties go to the lower index.
fn best_match<'a>(bbox: &BBox, boxes: impl Iterator<Item = &'a BBox>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, b) in boxes.enumerate() {
        let v = iou(bbox, b);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((j, v));
        }
    }
    best
}

pub fn assign_one(bbox: &BBox, pseudo: &[Detection], fg_iou_threshold: f64, background: usize) -> Assignment {
    match best_match(bbox, pseudo.iter().map(|d| &d.bbox)) {
        Some((j, v)) => Assignment {
            label: if v >= fg_iou_threshold { pseudo[j].category } else { background },
            best: Some(j),
            best_iou: v,
        },
        None => Assignment {
            label: background,
            best: None,
            best_iou: 0.0,
        },
    }
}

/// Hard label per proposal: the category of the highest-IoU box when that IoU
/// reaches `fg_iou_threshold`, otherwise `background`.
pub fn assign_labels(proposals: &[BBox], pseudo: &[Detection], fg_iou_threshold: f64, background: usize) -> Vec<usize> {
    proposals
        .iter()
        .map(|p| assign_one(p, pseudo, fg_iou_threshold, background).label)
        .collect()
}

/// Indices (ascending) of proposals whose best IoU against a low-band box is at
/// least `match_iou_threshold`.
pub fn match_low_confidence(proposals: &[BBox], low: &[Detection], match_iou_threshold: f64) -> Vec<usize> {
    proposals
        .iter()
        .enumerate()
        .filter(|(_, p)| {
            best_match(p, low.iter().map(|d| &d.bbox)).is_some_and(|(_, v)| v >= match_iou_threshold)
        })
        .map(|(i, _)| i)
        .collect()
}
