//! One-hidden-layer ROI classification head, momentum SGD, EMA teacher update,
//! detection inference and checkpoints.
//!
//! Parameters live in a single flat buffer laid out as `W1 (h x d, row-major)`,
//! `b1 (h)`, `W2 (k x h, row-major)`, `b2 (k)` with `k = C + 1`.

use std::io::{BufRead, Write};
use std::ops::Range;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::geometry::{nms, BBox};
use crate::pseudo::Detection;
use crate::rng::Rng;
use crate::synthworld::{DomainConfig, Proposal, View};

pub const DEFAULT_HIDDEN: usize = 32;
pub const INIT_SCALE: f64 = 0.1;
const CHECKPOINT_MAGIC: &str = "SFOD-CKPT";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    /// Categories plus background.
    pub classes: usize,
}

impl Dims {
    pub fn for_world(cfg: &DomainConfig, hidden: usize) -> Self {
        Self {
            input: cfg.feature_dim,
            hidden,
            classes: cfg.num_categories + 1,
        }
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.classes * self.hidden + self.classes
    }

    fn w1(&self) -> Range<usize> {
        0..self.hidden * self.input
    }
    fn b1(&self) -> Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden
    }
    fn w2(&self) -> Range<usize> {
        let s = self.b1().end;
        s..s + self.classes * self.hidden
    }
    fn b2(&self) -> Range<usize> {
        let s = self.w2().end;
        s..s + self.classes
    }
}

/// Weights of the ROI head. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: Dims,
    data: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.param_count()],
        }
    }

    /// Uniform init in `[-INIT_SCALE, INIT_SCALE]`.
    pub fn init(dims: Dims, rng: &mut Rng) -> Self {
        let data = (0..dims.param_count())
            .map(|_| rng.random_range(-INIT_SCALE..=INIT_SCALE))
            .collect();
        Self { dims, data }
    }

    pub fn from_flat(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.param_count() {
            return Err(Error::Dimension {
                what: "parameter buffer",
                expected: dims.param_count(),
                got: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn w1(&self) -> &[f64] {
        &self.data[self.dims.w1()]
    }
    pub fn b1(&self) -> &[f64] {
        &self.data[self.dims.b1()]
    }
    pub fn w2(&self) -> &[f64] {
        &self.data[self.dims.w2()]
    }
    pub fn b2(&self) -> &[f64] {
        &self.data[self.dims.b2()]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    fn check_same_shape(&self, other: &ModelParams, what: &'static str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Dimension {
                what,
                expected: self.dims.param_count(),
                got: other.dims.param_count(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiOutput {
    /// `tanh(W1 x + b1)`
    pub embedding: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

/// `log(softmax(logits))` via log-sum-exp.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

pub fn forward(params: &ModelParams, feature: &[f64]) -> Result<RoiOutput> {
    let Dims { input, hidden, classes } = params.dims;
    if feature.len() != input {
        return Err(Error::Dimension {
            what: "ROI feature",
            expected: input,
            got: feature.len(),
        });
    }
    let (w1, b1, w2, b2) = (params.w1(), params.b1(), params.w2(), params.b2());
    let embedding: Vec<f64> = (0..hidden)
        .map(|r| {
            let row = &w1[r * input..(r + 1) * input];
            let z = b1[r] + row.iter().zip(feature).map(|(w, x)| w * x).sum::<f64>();
            z.tanh()
        })
        .collect();
    let logits: Vec<f64> = (0..classes)
        .map(|r| {
            let row = &w2[r * hidden..(r + 1) * hidden];
            b2[r] + row.iter().zip(&embedding).map(|(w, e)| w * e).sum::<f64>()
        })
        .collect();
    let probs = softmax(&logits);
    Ok(RoiOutput {
        embedding,
        logits,
        probs,
    })
}

/// Accumulates into `grads` the parameter gradient of a scalar whose partial
/// derivatives with respect to this sample's logits and embedding are
/// `d_logits` and `d_embedding` (the latter excluding the path through the
/// logits, which is added here).
pub fn backward(
    params: &ModelParams,
    feature: &[f64],
    out: &RoiOutput,
    d_logits: &[f64],
    d_embedding: Option<&[f64]>,
    grads: &mut ModelParams,
) {
    let Dims { input, hidden, classes } = params.dims;
    let w2 = params.w2();
    let mut d_emb: Vec<f64> = match d_embedding {
        Some(d) => d.to_vec(),
        None => vec![0.0; hidden],
    };
    {
        let (w2_range, b2_range) = (params.dims.w2(), params.dims.b2());
        let g = &mut grads.data;
        for r in 0..classes {
            let dl = d_logits[r];
            if dl == 0.0 {
                continue;
            }
            g[b2_range.start + r] += dl;
            let grow = w2_range.start + r * hidden;
            for c in 0..hidden {
                g[grow + c] += dl * out.embedding[c];
                d_emb[c] += dl * w2[r * hidden + c];
            }
        }
    }
    let (w1_range, b1_range) = (params.dims.w1(), params.dims.b1());
    let g = &mut grads.data;
    for r in 0..hidden {
        let e = out.embedding[r];
        let dpre = d_emb[r] * (1.0 - e * e);
        if dpre == 0.0 {
            continue;
        }
        g[b1_range.start + r] += dpre;
        let grow = w1_range.start + r * input;
        for c in 0..input {
            g[grow + c] += dpre * feature[c];
        }
    }
}

/// Momentum SGD: `v <- momentum * v + g`, `theta <- theta - lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(dims: Dims, lr: f64, momentum: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config("lr", "learning rate must be positive and finite"));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::config("momentum", "momentum must lie in [0, 1)"));
        }
        Ok(Self {
            lr,
            momentum,
            velocity: vec![0.0; dims.param_count()],
        })
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    /// Leaves both params and velocity untouched when `grads` has a
    /// non-finite entry.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
        params.check_same_shape(grads, "gradient")?;
        if let Some(i) = grads.data.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient coordinate {i} = {}", grads.data[i])));
        }
        for ((p, v), g) in params.data.iter_mut().zip(self.velocity.iter_mut()).zip(&grads.data) {
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
        Ok(())
    }
}

/// `teacher <- alpha * teacher + (1 - alpha) * student`, entrywise.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, alpha: f64) -> Result<()> {
    teacher.check_same_shape(student, "EMA student")?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("alpha", "EMA rate must lie in [0, 1]"));
    }
    if alpha == 1.0 {
        return Ok(());
    }
    for (t, &s) in teacher.data.iter_mut().zip(&student.data) {
        // clamp absorbs rounding so the result stays inside [min, max]
        let v = alpha * *t + (1.0 - alpha) * s;
        *t = v.clamp(t.min(s), t.max(s));
    }
    Ok(())
}

/// Turns per-proposal head outputs into detections: argmax over all classes
/// must be foreground, the score is the top foreground probability, and NMS is
/// applied per category. Sorted by confidence, descending.
pub fn detections_from_outputs(proposals: &[BBox], outputs: &[RoiOutput], nms_threshold: f64) -> Vec<Detection> {
    let mut per_class: Vec<Vec<(BBox, f64)>> = Vec::new();
    for (bbox, out) in proposals.iter().zip(outputs) {
        let k = out.probs.len();
        let bg = k - 1;
        let (arg, _) = argmax(&out.probs);
        if arg == bg {
            continue;
        }
        if per_class.len() < bg {
            per_class.resize(bg, Vec::new());
        }
        per_class[arg].push((*bbox, out.probs[arg]));
    }
    let mut dets = Vec::new();
    for (category, cands) in per_class.iter().enumerate() {
        for i in nms(cands, nms_threshold) {
            dets.push(Detection {
                bbox: cands[i].0,
                category,
                confidence: cands[i].1,
            });
        }
    }
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    dets
}

/// First index of the maximum.
pub fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &x) in v.iter().enumerate() {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

/// Anything that can produce features for a box: a labeled scene or an
/// unlabeled target scene.
pub trait FeatureSource {
    fn feature(&self, cfg: &DomainConfig, bbox: &BBox, view: View, rng: &mut Rng) -> Vec<f64>;
}

impl FeatureSource for crate::synthworld::Scene {
    fn feature(&self, cfg: &DomainConfig, bbox: &BBox, view: View, rng: &mut Rng) -> Vec<f64> {
        self.extract_feature(cfg, bbox, view, rng)
    }
}

impl FeatureSource for crate::synthworld::UnlabeledScene {
    fn feature(&self, cfg: &DomainConfig, bbox: &BBox, view: View, rng: &mut Rng) -> Vec<f64> {
        self.extract_feature(cfg, bbox, view, rng)
    }
}

pub fn predict_detections(
    params: &ModelParams,
    cfg: &DomainConfig,
    scene: &impl FeatureSource,
    proposals: &[Proposal],
    view: View,
    nms_threshold: f64,
    rng: &mut Rng,
) -> Result<Vec<Detection>> {
    let boxes: Vec<BBox> = proposals.iter().map(|p| p.bbox).collect();
    let outputs = boxes
        .iter()
        .map(|b| forward(params, &scene.feature(cfg, b, view, rng)))
        .collect::<Result<Vec<_>>>()?;
    Ok(detections_from_outputs(&boxes, &outputs, nms_threshold))
}

/// Text checkpoint:
///
/// ```text
/// SFOD-CKPT 1
/// dims <input> <hidden> <classes>
/// w1 <h*d values, row-major>
/// b1 <h values>
/// w2 <k*h values, row-major>
/// b2 <k values>
/// ```
///
/// Values use the shortest representation that parses back to the same `f64`.
pub fn write_checkpoint<W: Write>(out: &mut W, params: &ModelParams) -> Result<()> {
    let d = params.dims;
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    writeln!(out, "dims {} {} {}", d.input, d.hidden, d.classes)?;
    for (name, vals) in [("w1", params.w1()), ("b1", params.b1()), ("w2", params.w2()), ("b2", params.b2())] {
        write!(out, "{name}")?;
        for v in vals {
            write!(out, " {v:?}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<ModelParams> {
    let mut lines = input.lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::parse("checkpoint", format!("missing {what} line")))?
            .map_err(Error::from)
    };
    let header = next("header")?;
    let mut h = header.split_whitespace();
    if h.next() != Some(CHECKPOINT_MAGIC) {
        return Err(Error::parse("checkpoint", "bad magic header"));
    }
    let version: u32 = h
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::parse("checkpoint", "missing version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::parse("checkpoint", format!("unsupported version {version}")));
    }
    let dims_line = next("dims")?;
    let nums: Vec<usize> = dims_line
        .split_whitespace()
        .skip(1)
        .map(|s| s.parse().map_err(|e| Error::parse("checkpoint dims", format!("{e}"))))
        .collect::<Result<_>>()?;
    if !dims_line.starts_with("dims ") || nums.len() != 3 {
        return Err(Error::parse("checkpoint", "bad dims line"));
    }
    let dims = Dims {
        input: nums[0],
        hidden: nums[1],
        classes: nums[2],
    };
    let mut data = Vec::with_capacity(dims.param_count());
    for (name, len) in [
        ("w1", dims.hidden * dims.input),
        ("b1", dims.hidden),
        ("w2", dims.classes * dims.hidden),
        ("b2", dims.classes),
    ] {
        let line = next(name)?;
        let mut fields = line.split_whitespace();
        if fields.next() != Some(name) {
            return Err(Error::parse("checkpoint", format!("expected `{name}` block")));
        }
        let vals: Vec<f64> = fields
            .map(|s| s.parse().map_err(|e| Error::parse(format!("checkpoint {name}"), format!("{e}"))))
            .collect::<Result<_>>()?;
        if vals.len() != len {
            return Err(Error::Dimension {
                what: "checkpoint block",
                expected: len,
                got: vals.len(),
            });
        }
        data.extend(vals);
    }
    let params = ModelParams::from_flat(dims, data)?;
    if !params.is_finite() {
        return Err(Error::NonFinite("checkpoint weights".into()));
    }
    Ok(params)
}
