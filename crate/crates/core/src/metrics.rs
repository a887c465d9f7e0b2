//! Detection metrics and diagnostics: per-category AP / mAP at an IoU
//! threshold, confidence-binned label-assignment accuracy, and the box-slide
//! probe.

use rayon::prelude::*;

use crate::detector::{detections_from_outputs, forward, ModelParams};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::pseudo::{assign_one, Detection};
use crate::rng::{self, tag};
use crate::synthworld::{DomainConfig, Scene, SceneObject, View};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// `None` for categories without ground truth.
    pub ap: Vec<Option<f64>>,
    pub map: f64,
    pub num_gt: Vec<usize>,
    pub num_det: Vec<usize>,
}

/// Greedy matching of score-sorted detections: each detection takes the
/// unmatched ground-truth box of its category with the highest IoU (lowest
/// index on ties) if that IoU reaches `iou_threshold`.
fn match_sorted(order: &[(usize, usize)], dets: &[Vec<Detection>], gt: &[Vec<SceneObject>], category: usize, iou_threshold: f64) -> Vec<bool> {
    let mut used: Vec<Vec<bool>> = gt.iter().map(|g| vec![false; g.len()]).collect();
    order
        .iter()
        .map(|&(s, d)| {
            let bbox = &dets[s][d].bbox;
            let mut best: Option<(usize, f64)> = None;
            for (g, obj) in gt[s].iter().enumerate() {
                if obj.category != category || used[s][g] {
                    continue;
                }
                let v = iou(bbox, &obj.bbox);
                if v >= iou_threshold && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            match best {
                Some((g, _)) => {
                    used[s][g] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// Detections of `category` as `(scene, index)`, by descending confidence,
/// ties in scene-then-index order.
fn ranked(dets: &[Vec<Detection>], category: usize) -> Vec<(usize, usize)> {
    let mut order: Vec<(usize, usize)> = dets
        .iter()
        .enumerate()
        .flat_map(|(s, ds)| {
            ds.iter()
                .enumerate()
                .filter(move |(_, d)| d.category == category)
                .map(move |(i, _)| (s, i))
        })
        .collect();
    order.sort_by(|a, b| dets[b.0][b.1].confidence.total_cmp(&dets[a.0][a.1].confidence).then(a.cmp(b)));
    order
}

/// All-point interpolated AP from per-rank precision/recall.
pub fn envelope_area(precision: &[f64], recall: &[f64]) -> f64 {
    let mut env = precision.to_vec();
    for k in (0..env.len().saturating_sub(1)).rev() {
        env[k] = env[k].max(env[k + 1]);
    }
    let mut prev = 0.0;
    let mut area = 0.0;
    for (r, e) in recall.iter().zip(&env) {
        area += (r - prev) * e;
        prev = *r;
    }
    area
}

pub fn category_ap(dets: &[Vec<Detection>], gt: &[Vec<SceneObject>], category: usize, iou_threshold: f64) -> Option<f64> {
    let n_gt: usize = gt.iter().map(|g| g.iter().filter(|o| o.category == category).count()).sum();
    if n_gt == 0 {
        return None;
    }
    let order = ranked(dets, category);
    let hits = match_sorted(&order, dets, gt, category, iou_threshold);
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(hits.len());
    let mut recall = Vec::with_capacity(hits.len());
    for (k, hit) in hits.iter().enumerate() {
        if *hit {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        recall.push(tp as f64 / n_gt as f64);
    }
    Some(envelope_area(&precision, &recall))
}

/// Per-category AP and their mean over categories that have ground truth.
/// `dets[s]` and `gt[s]` belong to the same scene.
pub fn average_precision(dets: &[Vec<Detection>], gt: &[Vec<SceneObject>], num_categories: usize, iou_threshold: f64) -> Result<EvalResult> {
    let ap: Vec<Option<f64>> = (0..num_categories)
        .map(|c| category_ap(dets, gt, c, iou_threshold))
        .collect();
    let present: Vec<f64> = ap.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::NoGroundTruth);
    }
    let map = present.iter().sum::<f64>() / present.len() as f64;
    let num_gt = (0..num_categories)
        .map(|c| gt.iter().flatten().filter(|o| o.category == c).count())
        .collect();
    let num_det = (0..num_categories)
        .map(|c| dets.iter().flatten().filter(|d| d.category == c).count())
        .collect();
    Ok(EvalResult {
        ap,
        map,
        num_gt,
        num_det,
    })
}

/// Settings of the fixed proposal generator and detection post-processing used
/// at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    pub n_jitter: usize,
    pub n_random: usize,
    pub jitter_sigma: f64,
    pub nms_threshold: f64,
    pub iou_threshold: f64,
    pub fg_iou_threshold: f64,
    pub seed: u64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            n_jitter: 8,
            n_random: 16,
            jitter_sigma: 0.15,
            nms_threshold: 0.5,
            iou_threshold: 0.5,
            fg_iou_threshold: 0.5,
            seed: 7,
        }
    }
}

/// Detections of `params` on every scene, weak view. Scenes are processed in
/// parallel; each owns its random stream so the result is thread-count
/// independent.
pub fn detect_scenes(params: &ModelParams, cfg: &DomainConfig, scenes: &[Scene], s: &EvalSettings) -> Result<Vec<Vec<Detection>>> {
    scenes
        .par_iter()
        .map(|scene| {
            let mut r = rng::stream(s.seed, &[tag::EVALUATE, scene.seed()]);
            let props = scene.generate_proposals(cfg, s.n_jitter, s.n_random, s.jitter_sigma, &mut r);
            let boxes: Vec<BBox> = props.iter().map(|p| p.bbox).collect();
            let outs = boxes
                .iter()
                .map(|b| forward(params, &scene.extract_feature(cfg, b, View::Weak, &mut r)))
                .collect::<Result<Vec<_>>>()?;
            Ok(detections_from_outputs(&boxes, &outs, s.nms_threshold))
        })
        .collect()
}

pub fn evaluate_model(params: &ModelParams, cfg: &DomainConfig, scenes: &[Scene], s: &EvalSettings) -> Result<EvalResult> {
    let dets = detect_scenes(params, cfg, scenes, s)?;
    let gt: Vec<Vec<SceneObject>> = scenes.iter().map(|sc| sc.objects().to_vec()).collect();
    average_precision(&dets, &gt, cfg.num_categories, s.iou_threshold)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinAccuracy {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    pub correct: usize,
    /// `None` for an empty bin.
    pub accuracy: Option<f64>,
}

/// Ten equal-width bins over (0, 1].
pub fn default_bin_edges() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn bin_of(edges: &[f64], conf: f64) -> Option<usize> {
    (0..edges.len() - 1).find(|&b| conf > edges[b] && conf <= edges[b + 1])
}

/// Foreground-assignment accuracy per pseudo-label confidence bin.
///
/// Every proposal that the pseudo-labels assign to a foreground category is
/// one sample, binned by the confidence of the pseudo-box it was assigned
/// from; it counts as correct when assigning against the ground truth gives
/// the same category.
pub fn assignment_accuracy_bins(params: &ModelParams, cfg: &DomainConfig, scenes: &[Scene], edges: &[f64], s: &EvalSettings) -> Result<Vec<BinAccuracy>> {
    if edges.len() < 2 || edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("bin_edges", "need at least two strictly increasing edges"));
    }
    let bg = cfg.background();
    let per_scene: Vec<Vec<(usize, bool)>> = scenes
        .par_iter()
        .map(|scene| {
            let mut r = rng::stream(s.seed, &[tag::EVALUATE, scene.seed()]);
            let props = scene.generate_proposals(cfg, s.n_jitter, s.n_random, s.jitter_sigma, &mut r);
            let boxes: Vec<BBox> = props.iter().map(|p| p.bbox).collect();
            let outs = boxes
                .iter()
                .map(|b| forward(params, &scene.extract_feature(cfg, b, View::Weak, &mut r)))
                .collect::<Result<Vec<_>>>()?;
            let pseudo = detections_from_outputs(&boxes, &outs, s.nms_threshold);
            let truth: Vec<Detection> = scene
                .objects()
                .iter()
                .map(|o| Detection {
                    bbox: o.bbox,
                    category: o.category,
                    confidence: 1.0,
                })
                .collect();
            let mut samples = Vec::new();
            for b in &boxes {
                let a = assign_one(b, &pseudo, s.fg_iou_threshold, bg);
                if a.label == bg {
                    continue;
                }
                let Some(src) = a.best else { continue };
                let Some(bin) = bin_of(edges, pseudo[src].confidence) else {
                    continue;
                };
                let want = assign_one(b, &truth, s.fg_iou_threshold, bg).label;
                samples.push((bin, want == a.label));
            }
            Ok(samples)
        })
        .collect::<Result<_>>()?;

    let mut bins: Vec<BinAccuracy> = edges
        .windows(2)
        .map(|w| BinAccuracy {
            lo: w[0],
            hi: w[1],
            n: 0,
            correct: 0,
            accuracy: None,
        })
        .collect();
    for (bin, ok) in per_scene.into_iter().flatten() {
        bins[bin].n += 1;
        bins[bin].correct += usize::from(ok);
    }
    for b in bins.iter_mut() {
        if b.n > 0 {
            b.accuracy = Some(b.correct as f64 / b.n as f64);
        }
    }
    Ok(bins)
}

/// Spearman rank correlation (average ranks for ties). `None` with fewer
/// than two points or zero variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Spearman correlation between bin index and accuracy over non-empty bins.
pub fn bin_trend(bins: &[BinAccuracy]) -> Option<f64> {
    let (idx, acc): (Vec<f64>, Vec<f64>) = bins
        .iter()
        .enumerate()
        .filter_map(|(i, b)| b.accuracy.map(|a| (i as f64, a)))
        .unzip();
    spearman(&idx, &acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlidePoint {
    pub step: usize,
    /// Horizontal displacement of the probe box from the start box.
    pub offset: f64,
    pub max_prob: f64,
}

/// Moves a box linearly from `gt_box` to `end_box` in `steps` increments and
/// records the highest foreground probability at each position.
pub fn slide_diagnostic(params: &ModelParams, cfg: &DomainConfig, scene: &Scene, gt_box: &BBox, end_box: &BBox, steps: usize, seed: u64) -> Result<Vec<SlidePoint>> {
    let steps = steps.max(1);
    let bg = cfg.background();
    (0..=steps)
        .map(|k| {
            let t = k as f64 / steps as f64;
            let b = gt_box.lerp(end_box, t);
            let mut r = rng::stream(seed, &[tag::EVALUATE, scene.seed(), k as u64]);
            let out = forward(params, &scene.extract_feature(cfg, &b, View::Weak, &mut r))?;
            let max_prob = out.probs[..bg].iter().copied().fold(0.0, f64::max);
            Ok(SlidePoint {
                step: k,
                offset: b.x1() - gt_box.x1(),
                max_prob,
            })
        })
        .collect()
}

/// Probability-weighted mean displacement of a slide curve; smaller means
/// the model's confidence is concentrated nearer the start box.
pub fn weighted_offset(curve: &[SlidePoint]) -> f64 {
    let mass: f64 = curve.iter().map(|p| p.max_prob).sum();
    if mass == 0.0 {
        return 0.0;
    }
    curve.iter().map(|p| p.offset * p.max_prob).sum::<f64>() / mass
}

/// End box for the slide probe: `gt` shifted right until IoU with it is 0.5.
pub fn half_iou_shift(gt: &BBox) -> BBox {
    // inter = h * (w - dx), union = 2wh - inter; inter / union = 1/2 -> dx = w/3
    gt.translated(gt.width() / 3.0, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{Domain, WorldParams};

    fn bx(x: f64) -> BBox {
        BBox::new(x, 0.0, x + 10.0, 10.0).unwrap()
    }

    fn obj(x: f64, c: usize) -> SceneObject {
        SceneObject { category: c, bbox: bx(x) }
    }

    fn det(x: f64, c: usize, conf: f64) -> Detection {
        Detection {
            bbox: bx(x),
            category: c,
            confidence: conf,
        }
    }

    #[test]
    fn perfect_detections() {
        let gt = vec![vec![obj(0.0, 0), obj(50.0, 1)], vec![obj(20.0, 1)]];
        let dets = vec![vec![det(0.0, 0, 0.9), det(50.0, 1, 0.8)], vec![det(20.0, 1, 0.95)]];
        let r = average_precision(&dets, &gt, 3, 0.5).unwrap();
        assert_eq!(r.ap, vec![Some(1.0), Some(1.0), None]);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn no_detections() {
        let gt = vec![vec![obj(0.0, 0)]];
        let r = average_precision(&[vec![]], &gt, 1, 0.5).unwrap();
        assert_eq!(r.ap, vec![Some(0.0)]);
    }

    #[test]
    fn false_positive_first() {
        let gt = vec![vec![obj(0.0, 0)]];
        let dets = vec![vec![det(60.0, 0, 0.9), det(0.0, 0, 0.8)]];
        let r = average_precision(&dets, &gt, 1, 0.5).unwrap();
        assert!((r.map - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_ground_truth_is_an_error() {
        let r = average_precision(&[vec![det(0.0, 0, 0.5)]], &[vec![]], 2, 0.5);
        assert!(matches!(r, Err(Error::NoGroundTruth)));
    }

    #[test]
    fn duplicate_hits_are_false_positives() {
        let gt = vec![vec![obj(0.0, 0)]];
        let dets = vec![vec![det(0.0, 0, 0.9), det(0.0, 0, 0.8)]];
        let r = average_precision(&dets, &gt, 1, 0.5).unwrap();
        assert_eq!(r.map, 1.0);
        let ranked = ranked(&dets, 0);
        assert_eq!(match_sorted(&ranked, &dets, &gt, 0, 0.5), vec![true, false]);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0], &[1.0]), None);
        assert_eq!(spearman(&[1.0, 2.0], &[5.0, 5.0]), None);
    }

    fn oracle_model_cfg() -> (DomainConfig, Vec<Scene>) {
        let p = WorldParams {
            feature_noise_sigma: 0.0,
            weak_aug_sigma: 0.0,
            strong_aug_sigma: 0.0,
            ..WorldParams::default()
        };
        let cfg = DomainConfig::from_params(&p).unwrap();
        let scenes: Vec<Scene> = (0..10).map(|i| Scene::generate(&cfg, Domain::Source, i)).collect();
        (cfg, scenes)
    }

    #[test]
    fn bins_cover_unit_interval() {
        let e = default_bin_edges();
        assert_eq!(e.len(), 11);
        assert_eq!(bin_of(&e, 1.0), Some(9));
        assert_eq!(bin_of(&e, 0.05), Some(0));
        assert_eq!(bin_of(&e, 0.0), None);
        assert_eq!(bin_of(&e, 0.1), Some(0));
    }

    #[test]
    fn bins_reject_bad_edges() {
        let (cfg, scenes) = oracle_model_cfg();
        let p = ModelParams::zeros(crate::detector::Dims::for_world(&cfg, 4));
        assert!(assignment_accuracy_bins(&p, &cfg, &scenes, &[0.5], &EvalSettings::default()).is_err());
        assert!(assignment_accuracy_bins(&p, &cfg, &scenes, &[0.5, 0.5], &EvalSettings::default()).is_err());
    }

    #[test]
    fn slide_endpoints() {
        let (cfg, scenes) = oracle_model_cfg();
        let p = ModelParams::init(crate::detector::Dims::for_world(&cfg, 8), &mut rng::stream(1, &[]));
        let scene = &scenes[0];
        let gt = scene.objects()[0].bbox;
        let end = half_iou_shift(&gt);
        assert!((iou(&gt, &end) - 0.5).abs() < 1e-12);
        let curve = slide_diagnostic(&p, &cfg, scene, &gt, &end, 10, 3).unwrap();
        assert_eq!(curve.len(), 11);
        assert_eq!(curve[0].offset, 0.0);
        assert!((curve[10].offset - (end.x1() - gt.x1())).abs() < 1e-12);
        let start = forward(&p, &scene.extract_feature(&cfg, &gt, View::Weak, &mut rng::stream(0, &[]))).unwrap();
        let want = start.probs[..cfg.background()].iter().copied().fold(0.0, f64::max);
        assert!((curve[0].max_prob - want).abs() < 1e-12);
    }
}
