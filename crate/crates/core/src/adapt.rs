//! Source pretraining and source-free mean-teacher adaptation with the
//! dual-threshold pseudo-label split.
//!
//! `adapt_target` never sees labeled source data: it takes the pretrained
//! weights and [`UnlabeledScene`]s only. Held-out target scenes may be passed
//! in for per-epoch metrics; they never feed the loss.

use rand::seq::SliceRandom;

use crate::detector::{backward, detections_from_outputs, ema_update, forward, Dims, ModelParams, RoiOutput, Sgd, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::losses::{choose_partners, evaluate, LossReport, LossSettings, MixupStrategy, SceneBatch};
use crate::metrics::{evaluate_model, EvalResult, EvalSettings};
use crate::pseudo::{assign_labels, match_low_confidence, partition_detections, Detection};
use crate::rng::{self, tag};
use crate::synthworld::{DomainConfig, Scene, UnlabeledScene, View};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalSettings {
    /// Perturbed copies per object box.
    pub n_jitter: usize,
    pub n_random: usize,
    /// Corner noise as a fraction of the box side.
    pub jitter_sigma: f64,
}

impl Default for ProposalSettings {
    fn default() -> Self {
        Self {
            n_jitter: 8,
            n_random: 16,
            jitter_sigma: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub hidden: usize,
    pub fg_iou_threshold: f64,
    pub proposals: ProposalSettings,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 0.01,
            momentum: 0.9,
            hidden: DEFAULT_HIDDEN,
            fg_iou_threshold: 0.5,
            proposals: ProposalSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptConfig {
    pub sigma_high: f64,
    pub sigma_low: f64,
    pub lambda_pst: f64,
    pub lambda_lscl: f64,
    pub tau: f64,
    pub alpha: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Scenes per optimisation step.
    pub batch_size: usize,
    pub enable_pst: bool,
    pub enable_lscl: bool,
    pub mixup: MixupStrategy,
    pub normalize_contrastive: bool,
    /// Drop proposals that already carry a high-band foreground label from
    /// the soft and contrastive terms.
    pub exclude_high_overlap: bool,
    /// Leave low-band matched proposals that the high band would call
    /// background out of the hard loss; the soft terms supervise them instead.
    pub soft_replaces_background: bool,
    pub fg_iou_threshold: f64,
    pub match_iou_threshold: f64,
    pub nms_threshold: f64,
    pub proposals: ProposalSettings,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            sigma_high: 0.8,
            sigma_low: 0.1,
            lambda_pst: 0.3,
            lambda_lscl: 0.1,
            tau: 0.07,
            alpha: 0.996,
            lr: 0.001,
            momentum: 0.9,
            epochs: 30,
            batch_size: 1,
            enable_pst: true,
            enable_lscl: true,
            mixup: MixupStrategy::Iou,
            normalize_contrastive: true,
            exclude_high_overlap: false,
            soft_replaces_background: true,
            fg_iou_threshold: 0.5,
            match_iou_threshold: 0.5,
            nms_threshold: 0.5,
            proposals: ProposalSettings::default(),
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |key: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(key, format!("{v} is outside [0, 1]")))
            }
        };
        unit("sigma_h", self.sigma_high)?;
        unit("sigma_l", self.sigma_low)?;
        if self.sigma_low > self.sigma_high {
            return Err(Error::config(
                "sigma_l",
                format!("sigma_l = {} exceeds sigma_h = {}", self.sigma_low, self.sigma_high),
            ));
        }
        if !(self.lambda_pst >= 0.0 && self.lambda_pst.is_finite()) {
            return Err(Error::config("lambda1", "must be finite and >= 0"));
        }
        if !(self.lambda_lscl >= 0.0 && self.lambda_lscl.is_finite()) {
            return Err(Error::config("lambda2", "must be finite and >= 0"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("tau", "must be positive"));
        }
        unit("alpha", self.alpha)?;
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        for (k, v) in [
            ("fg_iou_threshold", self.fg_iou_threshold),
            ("match_iou_threshold", self.match_iou_threshold),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::config(k, "must lie in (0, 1)"));
            }
        }
        unit("nms_threshold", self.nms_threshold)?;
        Ok(())
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            lambda_pst: self.lambda_pst,
            lambda_lscl: self.lambda_lscl,
            tau: self.tau,
            enable_pst: self.enable_pst,
            enable_lscl: self.enable_lscl,
            normalize_contrastive: self.normalize_contrastive,
        }
    }
}

fn features(scene: &impl crate::detector::FeatureSource, cfg: &DomainConfig, boxes: &[BBox], view: View, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    boxes.iter().map(|b| scene.feature(cfg, b, view, rng)).collect()
}

fn forward_all(params: &ModelParams, feats: &[Vec<f64>]) -> Result<Vec<RoiOutput>> {
    feats.iter().map(|f| forward(params, f)).collect()
}

fn shuffled(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[tag::SHUFFLE, epoch as u64]));
    order
}

/// Supervised training of the ROI head on labeled source scenes. Proposal
/// labels come from IoU assignment against ground truth.
pub fn pretrain_source(cfg: &DomainConfig, source: &[Scene], pc: &PretrainConfig, seed: u64) -> Result<ModelParams> {
    let dims = Dims::for_world(cfg, pc.hidden);
    let mut params = ModelParams::init(dims, &mut rng::stream(seed, &[tag::INIT]));
    if pc.epochs == 0 {
        return Ok(params);
    }
    if source.is_empty() {
        return Err(Error::config("n_source", "pretraining needs labeled source scenes"));
    }
    let mut opt = Sgd::new(dims, pc.lr, pc.momentum)?;
    let settings = LossSettings {
        lambda_pst: 0.0,
        lambda_lscl: 0.0,
        tau: 1.0,
        enable_pst: false,
        enable_lscl: false,
        normalize_contrastive: false,
    };
    let bg = cfg.background();
    let ps = pc.proposals;
    for epoch in 0..pc.epochs {
        for (step, &i) in shuffled(source.len(), seed ^ tag::PRETRAIN, epoch).iter().enumerate() {
            let scene = &source[i];
            let tags = [tag::PRETRAIN, epoch as u64, scene.seed()];
            let mut r = rng::stream(seed, &tags);
            let props = scene.generate_proposals(cfg, ps.n_jitter, ps.n_random, ps.jitter_sigma, &mut r);
            let boxes: Vec<BBox> = props.iter().map(|p| p.bbox).collect();
            let feats = features(scene, cfg, &boxes, View::Weak, &mut r);
            let truth: Vec<Detection> = scene
                .objects()
                .iter()
                .map(|o| Detection {
                    bbox: o.bbox,
                    category: o.category,
                    confidence: 1.0,
                })
                .collect();
            let batch = SceneBatch {
                hard_labels: Some(assign_labels(&boxes, &truth, pc.fg_iou_threshold, bg).into_iter().map(Some).collect()),
                boxes,
                features: feats,
                matched: vec![],
                teacher_probs: vec![],
                teacher_embeddings: vec![],
                partners: None,
            };
            let (_, grads) = evaluate(&params, &batch, &settings, true).map_err(|e| Error::Diverged {
                epoch,
                step,
                detail: e.to_string(),
            })?;
            opt.step(&mut params, &grads.expect("gradient requested"))
                .map_err(|e| Error::Diverged {
                    epoch,
                    step,
                    detail: e.to_string(),
                })?;
        }
    }
    Ok(params)
}

/// Per-scene statistics of one adaptation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: LossReport,
    pub matched: usize,
    pub high: usize,
    pub low: usize,
}

/// Builds the loss inputs for one unlabeled scene: teacher pseudo-labels on
/// the weak view, the dual-threshold split, hard labels from the high band,
/// and the low-band matched proposals with teacher soft labels/embeddings.
pub fn build_scene_batch(
    teacher: &ModelParams,
    student: &ModelParams,
    cfg: &DomainConfig,
    scene: &UnlabeledScene,
    ac: &AdaptConfig,
    seed: u64,
    epoch: usize,
) -> Result<(SceneBatch, usize, usize)> {
    let settings = ac.loss_settings();
    let ps = ac.proposals;
    let bg = cfg.background();
    let key = scene.seed();
    let mut rp = rng::stream(seed, &[tag::PROPOSALS, epoch as u64, key]);
    let props = scene.generate_proposals(cfg, ps.n_jitter, ps.n_random, ps.jitter_sigma, &mut rp);
    let boxes: Vec<BBox> = props.iter().map(|p| p.bbox).collect();
    let weak = features(scene, cfg, &boxes, View::Weak, &mut rng::stream(seed, &[tag::WEAK, epoch as u64, key]));
    let strong = features(scene, cfg, &boxes, View::Strong, &mut rng::stream(seed, &[tag::STRONG, epoch as u64, key]));

    let teacher_out = forward_all(teacher, &weak)?;
    let dets = detections_from_outputs(&boxes, &teacher_out, ac.nms_threshold);
    let bands = partition_detections(&dets, ac.sigma_high, ac.sigma_low);

    let hard_labels = if bands.high.is_empty() {
        None
    } else {
        Some(assign_labels(&boxes, &bands.high, ac.fg_iou_threshold, bg))
    };

    let mut matched = if settings.pst_active() || settings.lscl_active() {
        match_low_confidence(&boxes, &bands.low, ac.match_iou_threshold)
    } else {
        Vec::new()
    };
    if ac.exclude_high_overlap {
        if let Some(labels) = &hard_labels {
            matched.retain(|&i| labels[i] == bg);
        }
    }
    let mut hard_labels: Option<Vec<Option<usize>>> = hard_labels.map(|l| l.into_iter().map(Some).collect());
    if ac.soft_replaces_background {
        if let Some(labels) = hard_labels.as_mut() {
            for &i in &matched {
                if labels[i] == Some(bg) {
                    labels[i] = None;
                }
            }
        }
    }
    let teacher_probs = matched.iter().map(|&i| teacher_out[i].probs.clone()).collect();
    let teacher_embeddings = matched.iter().map(|&i| teacher_out[i].embedding.clone()).collect();

    let partners = if settings.lscl_active() && matched.len() >= 2 {
        let mboxes: Vec<BBox> = matched.iter().map(|&i| boxes[i]).collect();
        let student_probs = match ac.mixup {
            MixupStrategy::Cls | MixupStrategy::ClsStudent => matched
                .iter()
                .map(|&i| forward(student, &strong[i]).map(|o| o.probs))
                .collect::<Result<Vec<_>>>()?,
            _ => Vec::new(),
        };
        let mut rm = rng::stream(seed, &[tag::MIXUP, epoch as u64, key]);
        Some((choose_partners(ac.mixup, &mboxes, &student_probs, &mut rm), ac.mixup.student_keys()))
    } else {
        None
    };

    Ok((
        SceneBatch {
            boxes,
            features: strong,
            hard_labels,
            matched,
            teacher_probs,
            teacher_embeddings,
            partners,
        },
        bands.high.len(),
        bands.low.len(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 0 is the unadapted source model.
    pub epoch: usize,
    pub eval: Option<EvalResult>,
    pub loss_high: f64,
    pub loss_pst: f64,
    pub loss_lscl: f64,
    pub matched_mean: f64,
    pub high_mean: f64,
    pub low_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptOutcome {
    pub student: ModelParams,
    pub teacher: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Held-out labeled target scenes used only for per-epoch metrics.
pub struct Evaluator<'a> {
    pub scenes: &'a [Scene],
    pub settings: EvalSettings,
}

impl Evaluator<'_> {
    fn run(&self, params: &ModelParams, cfg: &DomainConfig) -> Result<EvalResult> {
        evaluate_model(params, cfg, self.scenes, &self.settings)
    }
}

pub fn adapt_target(
    source_model: &ModelParams,
    cfg: &DomainConfig,
    target: &[UnlabeledScene],
    ac: &AdaptConfig,
    seed: u64,
    evaluator: Option<&Evaluator>,
) -> Result<AdaptOutcome> {
    adapt_target_observed(source_model, cfg, target, ac, seed, evaluator, &mut |_, _| {})
}

/// [`adapt_target`] with a callback receiving `(student, teacher)` after
/// every optimisation step.
pub fn adapt_target_observed(
    source_model: &ModelParams,
    cfg: &DomainConfig,
    target: &[UnlabeledScene],
    ac: &AdaptConfig,
    seed: u64,
    evaluator: Option<&Evaluator>,
    on_step: &mut dyn FnMut(&ModelParams, &ModelParams),
) -> Result<AdaptOutcome> {
    ac.validate()?;
    if !source_model.is_finite() {
        return Err(Error::NonFinite("source model".into()));
    }
    if target.is_empty() {
        return Err(Error::config("n_target", "adaptation needs at least one target scene"));
    }
    let settings = ac.loss_settings();
    let mut student = source_model.clone();
    let mut teacher = source_model.clone();
    let mut opt = Sgd::new(student.dims(), ac.lr, ac.momentum)?;
    let mut log = Vec::with_capacity(ac.epochs + 1);
    log.push(EpochLog {
        epoch: 0,
        eval: evaluator.map(|e| e.run(&teacher, cfg)).transpose()?,
        loss_high: 0.0,
        loss_pst: 0.0,
        loss_lscl: 0.0,
        matched_mean: 0.0,
        high_mean: 0.0,
        low_mean: 0.0,
    });

    for epoch in 1..=ac.epochs {
        let order = shuffled(target.len(), seed ^ tag::ADAPT, epoch);
        let mut sums = [0.0f64; 6];
        for (step, chunk) in order.chunks(ac.batch_size).enumerate() {
            let mut grads = ModelParams::zeros(student.dims());
            for &i in chunk {
                let (batch, n_high, n_low) = build_scene_batch(&teacher, &student, cfg, &target[i], ac, seed, epoch)?;
                let (report, g) = evaluate(&student, &batch, &settings, true).map_err(|e| Error::Diverged {
                    epoch,
                    step,
                    detail: e.to_string(),
                })?;
                let g = g.expect("gradient requested");
                if chunk.len() == 1 {
                    grads = g;
                } else {
                    grads.add_scaled(&g, 1.0 / chunk.len() as f64);
                }
                sums[0] += report.high;
                sums[1] += report.pst;
                sums[2] += report.lscl;
                sums[3] += batch.matched.len() as f64;
                sums[4] += n_high as f64;
                sums[5] += n_low as f64;
            }
            opt.step(&mut student, &grads).map_err(|e| Error::Diverged {
                epoch,
                step,
                detail: e.to_string(),
            })?;
            ema_update(&mut teacher, &student, ac.alpha)?;
            on_step(&student, &teacher);
        }
        let n = target.len() as f64;
        log.push(EpochLog {
            epoch,
            eval: evaluator.map(|e| e.run(&teacher, cfg)).transpose()?,
            loss_high: sums[0] / n,
            loss_pst: sums[1] / n,
            loss_lscl: sums[2] / n,
            matched_mean: sums[3] / n,
            high_mean: sums[4] / n,
            low_mean: sums[5] / n,
        });
    }
    Ok(AdaptOutcome { student, teacher, log })
}

/// Reference mean-teacher loop with a single confidence threshold and no
/// low-confidence terms, written without the shared loss machinery. Used to
/// check that disabling the extra terms reproduces plain self-training.
pub fn plain_mean_teacher(
    source_model: &ModelParams,
    cfg: &DomainConfig,
    target: &[UnlabeledScene],
    ac: &AdaptConfig,
    seed: u64,
    on_step: &mut dyn FnMut(&ModelParams, &ModelParams),
) -> Result<(ModelParams, ModelParams)> {
    let mut student = source_model.clone();
    let mut teacher = source_model.clone();
    let mut opt = Sgd::new(student.dims(), ac.lr, ac.momentum)?;
    let ps = ac.proposals;
    let bg = cfg.background();
    let classes = student.dims().classes;
    for epoch in 1..=ac.epochs {
        let order = shuffled(target.len(), seed ^ tag::ADAPT, epoch);
        for chunk in order.chunks(ac.batch_size) {
            let mut grads = ModelParams::zeros(student.dims());
            for &i in chunk {
                let scene = &target[i];
                let key = scene.seed();
                let mut rp = rng::stream(seed, &[tag::PROPOSALS, epoch as u64, key]);
                let props = scene.generate_proposals(cfg, ps.n_jitter, ps.n_random, ps.jitter_sigma, &mut rp);
                let boxes: Vec<BBox> = props.iter().map(|p| p.bbox).collect();
                let mut rw = rng::stream(seed, &[tag::WEAK, epoch as u64, key]);
                let mut rs = rng::stream(seed, &[tag::STRONG, epoch as u64, key]);
                let weak: Vec<Vec<f64>> = boxes.iter().map(|b| scene.extract_feature(cfg, b, View::Weak, &mut rw)).collect();
                let strong: Vec<Vec<f64>> = boxes.iter().map(|b| scene.extract_feature(cfg, b, View::Strong, &mut rs)).collect();

                let t_out: Vec<RoiOutput> = weak.iter().map(|f| forward(&teacher, f)).collect::<Result<_>>()?;
                let pseudo: Vec<Detection> = detections_from_outputs(&boxes, &t_out, ac.nms_threshold)
                    .into_iter()
                    .filter(|d| d.confidence >= ac.sigma_high)
                    .collect();
                let mut g = ModelParams::zeros(student.dims());
                if !pseudo.is_empty() {
                    let labels = assign_labels(&boxes, &pseudo, ac.fg_iou_threshold, bg);
                    let n = boxes.len() as f64;
                    for (f, &l) in strong.iter().zip(&labels) {
                        let out = forward(&student, f)?;
                        let d: Vec<f64> = (0..classes)
                            .map(|c| (out.probs[c] - if c == l { 1.0 } else { 0.0 }) / n)
                            .collect();
                        backward(&student, f, &out, &d, None, &mut g);
                    }
                }
                if chunk.len() == 1 {
                    grads = g;
                } else {
                    grads.add_scaled(&g, 1.0 / chunk.len() as f64);
                }
            }
            opt.step(&mut student, &grads)?;
            ema_update(&mut teacher, &student, ac.alpha)?;
            on_step(&student, &teacher);
        }
    }
    Ok((student, teacher))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthworld::{generate_dataset, WorldParams};

    fn world() -> DomainConfig {
        DomainConfig::from_params(&WorldParams::default()).unwrap()
    }

    fn quick() -> PretrainConfig {
        PretrainConfig { epochs: 3, ..PretrainConfig::default() }
    }

    fn short(ac: AdaptConfig) -> AdaptConfig {
        AdaptConfig { epochs: 2, ..ac }
    }

    #[test]
    fn pretraining_beats_initialisation_on_source() {
        let cfg = world();
        let ds = generate_dataset(&cfg, 40, 1, 40, 3).unwrap();
        let es = EvalSettings::default();
        let init = pretrain_source(&cfg, &ds.source, &PretrainConfig { epochs: 0, ..quick() }, 3).unwrap();
        let trained = pretrain_source(&cfg, &ds.source, &quick(), 3).unwrap();
        let before = evaluate_model(&init, &cfg, &ds.source, &es).unwrap().map;
        let after = evaluate_model(&trained, &cfg, &ds.source, &es).unwrap().map;
        assert!(after > before + 0.3, "{before} -> {after}");
    }

    #[test]
    fn zero_lambdas_follow_the_plain_loop_step_for_step() {
        let cfg = world();
        let ds = generate_dataset(&cfg, 30, 12, 1, 1).unwrap();
        let src = pretrain_source(&cfg, &ds.source, &quick(), 1).unwrap();
        let ac = short(AdaptConfig {
            lambda_pst: 0.0,
            lambda_lscl: 0.0,
            batch_size: 3,
            ..AdaptConfig::default()
        });
        let mut a = Vec::new();
        let out = adapt_target_observed(&src, &cfg, &ds.target, &ac, 1, None, &mut |s, t| a.push((s.clone(), t.clone()))).unwrap();
        let mut b = Vec::new();
        let (s, t) = plain_mean_teacher(&src, &cfg, &ds.target, &ac, 1, &mut |s, t| b.push((s.clone(), t.clone()))).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a, b);
        assert_eq!((out.student, out.teacher), (s, t));
    }

    #[test]
    fn alpha_one_freezes_the_teacher() {
        let cfg = world();
        let ds = generate_dataset(&cfg, 30, 6, 1, 2).unwrap();
        let src = pretrain_source(&cfg, &ds.source, &quick(), 2).unwrap();
        let ac = short(AdaptConfig { alpha: 1.0, ..AdaptConfig::default() });
        let out = adapt_target(&src, &cfg, &ds.target, &ac, 2, None).unwrap();
        assert_eq!(out.teacher.as_slice(), src.as_slice());
        assert_ne!(out.student.as_slice(), src.as_slice());
    }

    #[test]
    fn soft_terms_take_over_background_labels_only_on_matched_proposals() {
        let cfg = world();
        let ds = generate_dataset(&cfg, 30, 20, 1, 4).unwrap();
        let src = pretrain_source(&cfg, &ds.source, &quick(), 4).unwrap();
        let on = AdaptConfig::default();
        let off = AdaptConfig {
            soft_replaces_background: false,
            ..on
        };
        let mut dropped = 0;
        for scene in &ds.target {
            let (a, ..) = build_scene_batch(&src, &src, &cfg, scene, &on, 4, 1).unwrap();
            let (b, ..) = build_scene_batch(&src, &src, &cfg, scene, &off, 4, 1).unwrap();
            assert_eq!(a.matched, b.matched);
            let (Some(la), Some(lb)) = (&a.hard_labels, &b.hard_labels) else {
                assert_eq!(a.hard_labels.is_some(), b.hard_labels.is_some());
                continue;
            };
            assert!(lb.iter().all(Option::is_some));
            for (i, (x, y)) in la.iter().zip(lb).enumerate() {
                if x != y {
                    assert!(x.is_none() && *y == Some(cfg.background()) && a.matched.contains(&i));
                    dropped += 1;
                }
            }
        }
        assert!(dropped > 0);
    }

    #[test]
    fn nothing_is_matched_when_both_soft_terms_are_off() {
        let cfg = world();
        let ds = generate_dataset(&cfg, 30, 10, 1, 5).unwrap();
        let src = pretrain_source(&cfg, &ds.source, &quick(), 5).unwrap();
        let ac = AdaptConfig {
            enable_pst: false,
            enable_lscl: false,
            ..AdaptConfig::default()
        };
        for scene in &ds.target {
            let (batch, ..) = build_scene_batch(&src, &src, &cfg, scene, &ac, 5, 1).unwrap();
            assert!(batch.matched.is_empty() && batch.partners.is_none());
            assert!(batch.hard_labels.iter().flatten().all(Option::is_some));
        }
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let base = AdaptConfig::default();
        for (ac, key) in [
            (AdaptConfig { sigma_low: 0.9, ..base }, "sigma_l"),
            (AdaptConfig { lambda_pst: -1.0, ..base }, "lambda1"),
            (AdaptConfig { tau: 0.0, ..base }, "tau"),
            (AdaptConfig { alpha: 1.5, ..base }, "alpha"),
            (AdaptConfig { batch_size: 0, ..base }, "batch_size"),
            (AdaptConfig { match_iou_threshold: 1.0, ..base }, "match_iou_threshold"),
        ] {
            match ac.validate() {
                Err(Error::Config { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{key}: {other:?}"),
            }
        }
    }

    #[test]
    fn adaptation_needs_target_scenes() {
        let cfg = world();
        let model = ModelParams::init(Dims::for_world(&cfg, 8), &mut rng::stream(0, &[0]));
        let err = adapt_target(&model, &cfg, &[], &AdaptConfig::default(), 0, None).unwrap_err();
        assert!(matches!(err, Error::Config { key, .. } if key == "n_target"));
    }

    #[test]
    fn log_has_one_row_per_epoch_plus_the_start() {
        let cfg = world();
        let ds = generate_dataset(&cfg, 30, 5, 10, 6).unwrap();
        let src = pretrain_source(&cfg, &ds.source, &quick(), 6).unwrap();
        let ev = Evaluator {
            scenes: &ds.eval,
            settings: EvalSettings::default(),
        };
        let out = adapt_target(&src, &cfg, &ds.target, &short(AdaptConfig::default()), 6, Some(&ev)).unwrap();
        let epochs: Vec<usize> = out.log.iter().map(|l| l.epoch).collect();
        assert_eq!(epochs, vec![0, 1, 2]);
        assert!(out.log.iter().all(|l| l.eval.is_some()));
        assert_eq!(out.log[0].eval.as_ref().unwrap().map, evaluate_model(&src, &cfg, &ds.eval, &ev.settings).unwrap().map);
    }
}
