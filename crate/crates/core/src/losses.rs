//! Training objectives and their analytic gradients.
//!
//! * high-confidence hard loss: mean cross-entropy against IoU-assigned labels
//! * proposal soft training: cross-entropy against teacher probabilities
//! * local spatial contrastive loss over IoU-mixed proposal embeddings
//!
//! Teacher quantities are constants everywhere. [`evaluate`] composes all
//! three through the ROI head and returns parameter gradients; the
//! [`gradcheck`] submodule verifies them against central differences.

pub mod gradcheck;

use rand::Rng as _;

use crate::detector::{backward, forward, log_softmax, ModelParams, RoiOutput};
use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::rng::Rng;

/// Lower clamp on student probabilities before taking logs in the soft loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean of `-log p[label]` over rows; 0 for an empty batch.
pub fn loss_high(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    if probs.is_empty() {
        return 0.0;
    }
    let s: f64 = probs
        .iter()
        .zip(labels)
        .map(|(p, &l)| -p[l].max(PROB_FLOOR).ln())
        .sum();
    s / probs.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PstValue {
    pub value: f64,
    /// Number of student probabilities that hit [`PROB_FLOOR`].
    pub clamped: usize,
}

/// `(1/N) sum_i sum_c -pt[i][c] * log ps[i][c]`, background included.
pub fn loss_pst(ps: &[Vec<f64>], pt: &[Vec<f64>]) -> PstValue {
    if ps.is_empty() {
        return PstValue {
            value: 0.0,
            clamped: 0,
        };
    }
    let mut clamped = 0;
    let mut total = 0.0;
    for (s_row, t_row) in ps.iter().zip(pt) {
        for (&s, &t) in s_row.iter().zip(t_row) {
            if s < PROB_FLOOR {
                clamped += 1;
            }
            if t != 0.0 {
                total -= t * s.max(PROB_FLOOR).ln();
            }
        }
    }
    PstValue {
        value: total / ps.len() as f64,
        clamped,
    }
}

/// Index of the spatially closest other proposal (highest IoU, lowest index on
/// ties, lowest other index when nothing overlaps).
pub fn nearest_neighbor(boxes: &[BBox]) -> Vec<usize> {
    (0..boxes.len())
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for (j, b) in boxes.iter().enumerate() {
                if j == i {
                    continue;
                }
                let v = iou(&boxes[i], b);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((j, v));
                }
            }
            best.map_or(i, |(j, _)| j)
        })
        .collect()
}

/// How the mixup partner `A_i` is chosen and which model supplies its feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MixupStrategy {
    /// Highest-IoU neighbor, teacher feature.
    Iou,
    /// Uniform partner among the others, teacher feature.
    Random,
    /// Most similar student class distribution (cosine), teacher feature.
    Cls,
    IouStudent,
    RandomStudent,
    ClsStudent,
}

impl MixupStrategy {
    pub const ALL: [MixupStrategy; 6] = [
        MixupStrategy::Iou,
        MixupStrategy::Random,
        MixupStrategy::Cls,
        MixupStrategy::IouStudent,
        MixupStrategy::RandomStudent,
        MixupStrategy::ClsStudent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MixupStrategy::Iou => "iou",
            MixupStrategy::Random => "random",
            MixupStrategy::Cls => "cls",
            MixupStrategy::IouStudent => "iou-",
            MixupStrategy::RandomStudent => "random-",
            MixupStrategy::ClsStudent => "cls-",
        }
    }

    /// Partner feature taken from the student instead of the teacher.
    pub fn student_keys(self) -> bool {
        matches!(
            self,
            MixupStrategy::IouStudent | MixupStrategy::RandomStudent | MixupStrategy::ClsStudent
        )
    }
}

impl std::str::FromStr for MixupStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        MixupStrategy::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("mixup_strategy", format!("unknown strategy `{s}`")))
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Partner indices for `strategy`. Requires at least two boxes.
pub fn choose_partners(strategy: MixupStrategy, boxes: &[BBox], student_probs: &[Vec<f64>], rng: &mut Rng) -> Vec<usize> {
    let n = boxes.len();
    match strategy {
        MixupStrategy::Iou | MixupStrategy::IouStudent => nearest_neighbor(boxes),
        MixupStrategy::Random | MixupStrategy::RandomStudent => (0..n)
            .map(|i| {
                let j = rng.random_range(0..n - 1);
                if j >= i {
                    j + 1
                } else {
                    j
                }
            })
            .collect(),
        MixupStrategy::Cls | MixupStrategy::ClsStudent => (0..n)
            .map(|i| {
                let mut best: Option<(usize, f64)> = None;
                for j in (0..n).filter(|&j| j != i) {
                    let v = cosine(&student_probs[i], &student_probs[j]);
                    if best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((j, v));
                    }
                }
                best.map_or(i, |(j, _)| j)
            })
            .collect(),
    }
}

/// Proposals matched to low-confidence pseudo-labels together with the
/// student/teacher embeddings used by the contrastive loss.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalBatch {
    pub boxes: Vec<BBox>,
    pub student: Vec<Vec<f64>>,
    pub teacher: Vec<Vec<f64>>,
    pub neighbors: Vec<usize>,
    pub weights: Vec<f64>,
    pub mixed: Vec<Vec<f64>>,
    /// Partner feature comes from the student (the `-` mixup variants).
    pub student_keys: bool,
}

impl ProposalBatch {
    /// Batch with the given partners; weights and mixed features are filled
    /// by [`iou_mixup`].
    pub fn new(boxes: Vec<BBox>, student: Vec<Vec<f64>>, teacher: Vec<Vec<f64>>, neighbors: Vec<usize>, student_keys: bool) -> Self {
        let mut b = Self {
            boxes,
            student,
            teacher,
            neighbors,
            weights: Vec::new(),
            mixed: Vec::new(),
            student_keys,
        };
        iou_mixup(&mut b);
        b
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    fn partner_feature(&self, i: usize) -> &[f64] {
        let a = self.neighbors[i];
        if self.student_keys {
            &self.student[a]
        } else {
            &self.teacher[a]
        }
    }
}

/// `w_i = IoU(T_i, T_{A_i})`, `f'_i = (1 - w_i) f^s_i + w_i f_{A_i}`.
pub fn iou_mixup(batch: &mut ProposalBatch) {
    batch.weights = (0..batch.len())
        .map(|i| iou(&batch.boxes[i], &batch.boxes[batch.neighbors[i]]))
        .collect();
    batch.mixed = (0..batch.len())
        .map(|i| {
            let w = batch.weights[i];
            batch.student[i]
                .iter()
                .zip(batch.partner_feature(i))
                .map(|(s, t)| (1.0 - w) * s + w * t)
                .collect()
        })
        .collect();
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LsclValue {
    pub value: f64,
    /// Fewer than two proposals; the loss is defined as 0.
    pub skipped: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-query softmax over student keys: `(P_ij, logsumexp_i)`.
fn key_softmax(batch: &ProposalBatch, tau: f64) -> Vec<(Vec<f64>, f64)> {
    batch
        .mixed
        .iter()
        .map(|q| {
            let z: Vec<f64> = batch.student.iter().map(|k| dot(q, k) / tau).collect();
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let lse = m + s.ln();
            (z.iter().map(|v| (v - lse).exp()).collect(), lse)
        })
        .collect()
}

/// Adjacent-proposal contrastive consistency: each mixed feature is a query,
/// its own student feature and its partner feature are positives weighted by
/// `1 - w_i` and `w_i`, and the denominator runs over all student features.
pub fn loss_lscl(batch: &ProposalBatch, tau: f64) -> LsclValue {
    let n = batch.len();
    if n < 2 {
        return LsclValue {
            value: 0.0,
            skipped: true,
        };
    }
    let soft = key_softmax(batch, tau);
    let mut total = 0.0;
    for i in 0..n {
        let q = &batch.mixed[i];
        let w = batch.weights[i];
        let lse = soft[i].1;
        let pos_self = dot(q, &batch.student[i]) / tau;
        let pos_partner = dot(q, batch.partner_feature(i)) / tau;
        total += (1.0 - w) * (pos_self - lse) + w * (pos_partner - lse);
    }
    LsclValue {
        value: -total / n as f64,
        skipped: false,
    }
}

/// Gradient of [`loss_lscl`] with respect to every student feature, through
/// the mixed queries, the keys and (for student partners) the positives.
pub fn lscl_student_grad(batch: &ProposalBatch, tau: f64) -> Vec<Vec<f64>> {
    let n = batch.len();
    let h = batch.student.first().map_or(0, Vec::len);
    let mut grad = vec![vec![0.0; h]; n];
    if n < 2 {
        return grad;
    }
    let soft = key_softmax(batch, tau);
    let scale = 1.0 / (n as f64 * tau);
    for i in 0..n {
        let q = &batch.mixed[i];
        let w = batch.weights[i];
        let probs = &soft[i].0;
        let partner = batch.partner_feature(i).to_vec();
        let a = batch.neighbors[i];

        // d/dq_i
        let mut gq: Vec<f64> = (0..h)
            .map(|k| (1.0 - w) * batch.student[i][k] + w * partner[k])
            .collect();
        for (j, p) in probs.iter().enumerate() {
            for k in 0..h {
                gq[k] -= p * batch.student[j][k];
            }
        }
        for v in gq.iter_mut() {
            *v *= -scale;
        }

        // keys in the denominator and the self positive
        for (j, p) in probs.iter().enumerate() {
            for k in 0..h {
                grad[j][k] += scale * p * q[k];
            }
        }
        for k in 0..h {
            grad[i][k] -= scale * (1.0 - w) * q[k];
            grad[i][k] += (1.0 - w) * gq[k];
        }
        if batch.student_keys {
            for k in 0..h {
                grad[a][k] -= scale * w * q[k];
                grad[a][k] += w * gq[k];
            }
        }
    }
    grad
}

pub fn total_loss(high: f64, pst: f64, lscl: f64, lambda_pst: f64, lambda_lscl: f64) -> f64 {
    high + lambda_pst * pst + lambda_lscl * lscl
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub high: f64,
    pub pst: f64,
    pub lscl: f64,
    pub total: f64,
    pub lambda_pst: f64,
    pub lambda_lscl: f64,
    pub tau: f64,
    pub lscl_skipped: bool,
    pub clamped: usize,
}

/// Loss switches and weights shared by [`evaluate`] and the adaptation loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub lambda_pst: f64,
    pub lambda_lscl: f64,
    pub tau: f64,
    pub enable_pst: bool,
    pub enable_lscl: bool,
    pub normalize_contrastive: bool,
}

impl LossSettings {
    pub fn pst_active(&self) -> bool {
        self.enable_pst && self.lambda_pst != 0.0
    }
    pub fn lscl_active(&self) -> bool {
        self.enable_lscl && self.lambda_lscl != 0.0
    }
}

/// Everything one optimisation step needs besides the student parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneBatch {
    pub boxes: Vec<BBox>,
    /// Student-view ROI input features, one per proposal.
    pub features: Vec<Vec<f64>>,
    /// Hard labels per proposal; `None` when there is no high-band
    /// supervision, `Some(None)` entries are left out of the hard loss.
    pub hard_labels: Option<Vec<Option<usize>>>,
    /// Proposals matched to low-band pseudo-labels (indices into `boxes`).
    pub matched: Vec<usize>,
    /// Teacher probabilities for each matched proposal.
    pub teacher_probs: Vec<Vec<f64>>,
    /// Teacher embeddings for each matched proposal.
    pub teacher_embeddings: Vec<Vec<f64>>,
    /// Mixup partners (positions within `matched`) and partner source.
    pub partners: Option<(Vec<usize>, bool)>,
}

fn l2_normalized(v: &[f64]) -> (Vec<f64>, f64) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    (v.iter().map(|x| x / n).collect(), n)
}

/// Back through `f = e / |e|`.
fn normalize_backward(unit: &[f64], norm: f64, g: &[f64]) -> Vec<f64> {
    let proj = dot(unit, g);
    unit.iter().zip(g).map(|(u, gi)| (gi - u * proj) / norm).collect()
}

/// Builds the contrastive batch for the matched proposals, optionally
/// unit-normalizing embeddings first. Returns the norms used.
fn contrastive_batch(batch: &SceneBatch, outputs: &[RoiOutput], settings: &LossSettings) -> Option<(ProposalBatch, Vec<f64>)> {
    let (neighbors, student_keys) = batch.partners.clone()?;
    if batch.matched.len() < 2 {
        return None;
    }
    let boxes: Vec<BBox> = batch.matched.iter().map(|&i| batch.boxes[i]).collect();
    let mut student = Vec::with_capacity(boxes.len());
    let mut norms = Vec::with_capacity(boxes.len());
    for &i in &batch.matched {
        let e = &outputs[i].embedding;
        if settings.normalize_contrastive {
            let (u, n) = l2_normalized(e);
            student.push(u);
            norms.push(n);
        } else {
            student.push(e.clone());
            norms.push(1.0);
        }
    }
    let teacher = if settings.normalize_contrastive {
        batch.teacher_embeddings.iter().map(|e| l2_normalized(e).0).collect()
    } else {
        batch.teacher_embeddings.clone()
    };
    Some((ProposalBatch::new(boxes, student, teacher, neighbors, student_keys), norms))
}

fn check_batch(batch: &SceneBatch) -> Result<()> {
    let n = batch.boxes.len();
    if batch.features.len() != n {
        return Err(Error::Dimension {
            what: "scene batch features",
            expected: n,
            got: batch.features.len(),
        });
    }
    if let Some(l) = &batch.hard_labels {
        if l.len() != n {
            return Err(Error::Dimension {
                what: "hard labels",
                expected: n,
                got: l.len(),
            });
        }
    }
    let m = batch.matched.len();
    if batch.teacher_probs.len() != m || batch.teacher_embeddings.len() != m {
        return Err(Error::Dimension {
            what: "teacher outputs for matched proposals",
            expected: m,
            got: batch.teacher_probs.len().min(batch.teacher_embeddings.len()),
        });
    }
    Ok(())
}

/// Total objective of one scene and, when `with_grad`, its gradient with
/// respect to the student parameters.
pub fn evaluate(params: &ModelParams, batch: &SceneBatch, settings: &LossSettings, with_grad: bool) -> Result<(LossReport, Option<ModelParams>)> {
    check_batch(batch)?;
    let outputs = batch
        .features
        .iter()
        .map(|f| forward(params, f))
        .collect::<Result<Vec<_>>>()?;
    let classes = params.dims().classes;
    let hidden = params.dims().hidden;
    let n = outputs.len();
    let mut d_logits = vec![vec![0.0; classes]; n];
    let mut d_emb = vec![vec![0.0; hidden]; n];
    let mut clamped = 0;

    let high = match &batch.hard_labels {
        Some(labels) if labels.iter().any(Option::is_some) => {
            let counted = labels.iter().flatten().count() as f64;
            let mut s = 0.0;
            for (i, (out, l)) in outputs.iter().zip(labels).enumerate() {
                let Some(l) = *l else { continue };
                let lp = log_softmax(&out.logits);
                s -= lp[l];
                for c in 0..classes {
                    let y = if c == l { 1.0 } else { 0.0 };
                    d_logits[i][c] += (out.probs[c] - y) / counted;
                }
            }
            s / counted
        }
        _ => 0.0,
    };

    let mut pst = 0.0;
    if settings.pst_active() && !batch.matched.is_empty() {
        let np = batch.matched.len() as f64;
        for (&i, pt) in batch.matched.iter().zip(&batch.teacher_probs) {
            let lp = log_softmax(&outputs[i].logits);
            let floor = PROB_FLOOR.ln();
            let tsum: f64 = pt.iter().sum();
            for c in 0..classes {
                if lp[c] < floor {
                    clamped += 1;
                }
                if pt[c] != 0.0 {
                    pst -= pt[c] * lp[c].max(floor);
                }
                d_logits[i][c] += settings.lambda_pst * (tsum * outputs[i].probs[c] - pt[c]) / np;
            }
        }
        pst /= np;
    }

    let mut lscl = 0.0;
    let mut lscl_skipped = true;
    if settings.lscl_active() {
        if let Some((pb, norms)) = contrastive_batch(batch, &outputs, settings) {
            let v = loss_lscl(&pb, settings.tau);
            lscl = v.value;
            lscl_skipped = v.skipped;
            if with_grad {
                let g = lscl_student_grad(&pb, settings.tau);
                for (pos, &i) in batch.matched.iter().enumerate() {
                    let gi = if settings.normalize_contrastive {
                        normalize_backward(&pb.student[pos], norms[pos], &g[pos])
                    } else {
                        g[pos].clone()
                    };
                    for k in 0..hidden {
                        d_emb[i][k] += settings.lambda_lscl * gi[k];
                    }
                }
            }
        }
    }

    let report = LossReport {
        high,
        pst,
        lscl,
        total: total_loss(high, pst, lscl, settings.lambda_pst, settings.lambda_lscl),
        lambda_pst: settings.lambda_pst,
        lambda_lscl: settings.lambda_lscl,
        tau: settings.tau,
        lscl_skipped,
        clamped,
    };
    if !report.total.is_finite() {
        return Err(Error::NonFinite(format!("scene loss {report:?}")));
    }

    if !with_grad {
        return Ok((report, None));
    }
    let mut grads = ModelParams::zeros(params.dims());
    for i in 0..n {
        let has_emb = d_emb[i].iter().any(|&v| v != 0.0);
        let has_logit = d_logits[i].iter().any(|&v| v != 0.0);
        if !has_emb && !has_logit {
            continue;
        }
        backward(
            params,
            &batch.features[i],
            &outputs[i],
            &d_logits[i],
            has_emb.then_some(d_emb[i].as_slice()),
            &mut grads,
        );
    }
    Ok((report, Some(grads)))
}
