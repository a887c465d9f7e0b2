//! Synthetic detection world with a controllable source -> target shift.
//!
//! A scene is a handful of labeled boxes. The "image backbone" is replaced by a
//! feature oracle: the feature of a box is the IoU-weighted mix of the category
//! prototypes of the objects it covers, the background prototype for whatever
//! it misses, a constant domain offset on target scenes, and view noise.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::rng::{self, tag, Rng};

/// Minimum side length of a clipped box.
pub const MIN_SIDE: f64 = 1e-3;

/// Knobs that generate a [`DomainConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct WorldParams {
    pub num_categories: usize,
    pub feature_dim: usize,
    pub extent: (f64, f64),
    pub max_objects: usize,
    pub min_object_size: f64,
    pub max_object_size: f64,
    pub prototype_norm: f64,
    /// Length of the target offset vector.
    pub shift_magnitude: f64,
    /// Weights of the components summed into the offset direction before it is
    /// rescaled to `shift_magnitude`: a random direction of length
    /// `prototype_norm`, and the raw prototype differences background minus
    /// mean foreground, background minus `fade_category`, and `mimic_category`
    /// minus background.
    pub shift_random: f64,
    pub shift_background: f64,
    pub shift_fade: f64,
    pub shift_mimic: f64,
    pub fade_category: usize,
    pub mimic_category: usize,
    pub feature_noise_sigma: f64,
    pub weak_aug_sigma: f64,
    pub strong_aug_sigma: f64,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            num_categories: 4,
            feature_dim: 16,
            extent: (100.0, 100.0),
            max_objects: 4,
            min_object_size: 12.0,
            max_object_size: 32.0,
            prototype_norm: 3.0,
            shift_magnitude: 2.5,
            shift_random: 0.0,
            shift_background: 0.0,
            shift_fade: 1.0,
            shift_mimic: 0.5,
            fade_category: 0,
            mimic_category: 1,
            feature_noise_sigma: 0.3,
            weak_aug_sigma: 0.1,
            strong_aug_sigma: 0.4,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainConfig {
    pub num_categories: usize,
    pub feature_dim: usize,
    /// `num_categories + 1` vectors; the last one is background.
    pub prototypes: Vec<Vec<f64>>,
    pub domain_offset: Vec<f64>,
    /// Per-object appearance perturbation, fixed for the lifetime of a scene.
    pub feature_noise_sigma: f64,
    pub weak_aug_sigma: f64,
    pub strong_aug_sigma: f64,
    pub extent: (f64, f64),
    pub max_objects: usize,
    pub min_object_size: f64,
    pub max_object_size: f64,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / n).collect()
}

fn gaussian_vec(rng: &mut Rng, d: usize, sigma: f64) -> Vec<f64> {
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        })
        .collect()
}

impl DomainConfig {
    pub fn from_params(p: &WorldParams) -> Result<Self> {
        if p.num_categories == 0 {
            return Err(Error::config("num_categories", "must be at least 1"));
        }
        if p.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be at least 1"));
        }
        let mut rng = rng::stream(p.seed, &[tag::WORLD]);
        let prototypes: Vec<Vec<f64>> = (0..=p.num_categories)
            .map(|_| {
                let g = gaussian_vec(&mut rng, p.feature_dim, 1.0);
                normalized(&g).into_iter().map(|x| x * p.prototype_norm).collect()
            })
            .collect();

        let random_dir = normalized(&gaussian_vec(&mut rng, p.feature_dim, 1.0));
        let c = p.num_categories;
        for (key, k) in [("fade_category", p.fade_category), ("mimic_category", p.mimic_category)] {
            if k >= c {
                return Err(Error::config(key, format!("{k} is not a foreground category")));
            }
        }
        let bg = &prototypes[c];
        let d = p.feature_dim;
        let mean_fg: Vec<f64> = (0..d).map(|k| prototypes[..c].iter().map(|v| v[k]).sum::<f64>() / c as f64).collect();
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        let parts = [
            (p.shift_random, random_dir.iter().map(|x| x * p.prototype_norm).collect()),
            (p.shift_background, diff(bg, &mean_fg)),
            (p.shift_fade, diff(bg, &prototypes[p.fade_category])),
            (p.shift_mimic, diff(&prototypes[p.mimic_category], bg)),
        ];
        let mut dir = vec![0.0; d];
        for (w, v) in &parts {
            for (x, y) in dir.iter_mut().zip(v) {
                *x += w * y;
            }
        }
        let domain_offset: Vec<f64> = if p.shift_magnitude == 0.0 {
            vec![0.0; d]
        } else {
            let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > 1e-12) {
                return Err(Error::config("shift_fade", "offset direction weights cancel to zero"));
            }
            dir.iter().map(|x| x / n * p.shift_magnitude).collect()
        };

        let cfg = Self {
            num_categories: p.num_categories,
            feature_dim: p.feature_dim,
            prototypes,
            domain_offset,
            feature_noise_sigma: p.feature_noise_sigma,
            weak_aug_sigma: p.weak_aug_sigma,
            strong_aug_sigma: p.strong_aug_sigma,
            extent: p.extent,
            max_objects: p.max_objects,
            min_object_size: p.min_object_size,
            max_object_size: p.max_object_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.prototypes.len() != self.num_categories + 1 {
            return Err(Error::config("prototypes", "need num_categories + 1 prototypes"));
        }
        for (i, a) in self.prototypes.iter().enumerate() {
            if a.len() != self.feature_dim {
                return Err(Error::config("prototypes", "prototype length differs from feature_dim"));
            }
            for b in &self.prototypes[..i] {
                let dist: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                if dist <= 0.0 {
                    return Err(Error::config("prototypes", "prototypes must be pairwise distinct"));
                }
            }
        }
        if self.domain_offset.len() != self.feature_dim {
            return Err(Error::config("domain_offset", "length differs from feature_dim"));
        }
        if !(self.weak_aug_sigma >= 0.0 && self.strong_aug_sigma >= self.weak_aug_sigma) {
            return Err(Error::config(
                "strong_aug_sigma",
                "need strong_aug_sigma >= weak_aug_sigma >= 0",
            ));
        }
        if self.feature_noise_sigma < 0.0 {
            return Err(Error::config("feature_noise_sigma", "must be >= 0"));
        }
        if self.max_objects == 0 {
            return Err(Error::config("max_objects", "must be at least 1"));
        }
        let (w, h) = self.extent;
        if !(self.min_object_size > 0.0
            && self.max_object_size >= self.min_object_size
            && self.max_object_size < w.min(h))
        {
            return Err(Error::config(
                "max_object_size",
                "need 0 < min_object_size <= max_object_size < scene extent",
            ));
        }
        Ok(())
    }

    pub fn background(&self) -> usize {
        self.num_categories
    }

    pub fn aug_sigma(&self, view: View) -> f64 {
        match view {
            View::Weak => self.weak_aug_sigma,
            View::Strong => self.strong_aug_sigma,
        }
    }

    fn random_box(&self, rng: &mut Rng) -> BBox {
        let (w, h) = self.extent;
        let bw = rng.random_range(self.min_object_size..=self.max_object_size);
        let bh = rng.random_range(self.min_object_size..=self.max_object_size);
        let x = rng.random_range(0.0..=(w - bw));
        let y = rng.random_range(0.0..=(h - bh));
        BBox::clipped(x, y, x + bw, y + bh, w, h, MIN_SIDE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Source => "source",
            Domain::Target => "target",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::parse("domain tag", format!("unknown domain `{other}`"))),
        }
    }
}

/// Which augmentation strength a feature is extracted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum View {
    Weak,
    Strong,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneObject {
    pub category: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    objects: Vec<SceneObject>,
    domain: Domain,
    seed: u64,
    appearance: Vec<Vec<f64>>,
}

impl Scene {
    /// Assembles a scene from explicit objects. Per-object appearance is
    /// regenerated from `seed`, so a dumped scene reloads identically.
    pub fn new(cfg: &DomainConfig, domain: Domain, seed: u64, objects: Vec<SceneObject>) -> Result<Self> {
        let (w, h) = cfg.extent;
        if objects.is_empty() || objects.len() > cfg.max_objects {
            return Err(Error::config(
                "max_objects",
                format!("scene has {} objects, allowed 1..={}", objects.len(), cfg.max_objects),
            ));
        }
        for o in &objects {
            if o.category >= cfg.num_categories {
                return Err(Error::parse("scene object", format!("category {} out of range", o.category)));
            }
            if !o.bbox.within(w, h) {
                return Err(Error::parse("scene object", "box outside scene extent"));
            }
        }
        let appearance = (0..objects.len())
            .map(|i| {
                let mut r = rng::stream(seed, &[tag::APPEARANCE, i as u64]);
                gaussian_vec(&mut r, cfg.feature_dim, cfg.feature_noise_sigma)
            })
            .collect();
        Ok(Self {
            objects,
            domain,
            seed,
            appearance,
        })
    }

    pub fn generate(cfg: &DomainConfig, domain: Domain, seed: u64) -> Self {
        let mut rng = rng::stream(seed, &[]);
        let n = rng.random_range(1..=cfg.max_objects);
        let objects = (0..n)
            .map(|_| SceneObject {
                category: rng.random_range(0..cfg.num_categories),
                bbox: cfg.random_box(&mut rng),
            })
            .collect();
        Self::new(cfg, domain, seed, objects).expect("generated scene satisfies its own config")
    }

    pub fn objects(&self) -> &[SceneObject] {
        &self.objects
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Feature of the region `bbox` under `view`.
    pub fn extract_feature(&self, cfg: &DomainConfig, bbox: &BBox, view: View, rng: &mut Rng) -> Vec<f64> {
        let mut f = vec![0.0; cfg.feature_dim];
        let mut max_iou = 0.0f64;
        for (obj, app) in self.objects.iter().zip(&self.appearance) {
            let v = iou(bbox, &obj.bbox);
            if v > 0.0 {
                let proto = &cfg.prototypes[obj.category];
                for k in 0..cfg.feature_dim {
                    f[k] += v * (proto[k] + app[k]);
                }
            }
            max_iou = max_iou.max(v);
        }
        let bg = &cfg.prototypes[cfg.background()];
        for k in 0..cfg.feature_dim {
            f[k] += (1.0 - max_iou) * bg[k];
        }
        if self.domain == Domain::Target {
            for (x, o) in f.iter_mut().zip(&cfg.domain_offset) {
                *x += o;
            }
        }
        let sigma = cfg.aug_sigma(view);
        if sigma > 0.0 {
            for x in f.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *x += sigma * z;
            }
        }
        f
    }

    /// Fixed proposal generator standing in for a region proposal network.
    ///
    /// Emits `n_jitter` perturbed copies of every object box (each corner moved
    /// by Gaussian noise with standard deviation `jitter_sigma` times the box
    /// side) followed by `n_random` uniform boxes. All boxes are clipped.
    pub fn generate_proposals(
        &self,
        cfg: &DomainConfig,
        n_jitter: usize,
        n_random: usize,
        jitter_sigma: f64,
        rng: &mut Rng,
    ) -> Vec<Proposal> {
        let (w, h) = cfg.extent;
        let mut out = Vec::with_capacity(self.objects.len() * n_jitter + n_random);
        for obj in &self.objects {
            let b = obj.bbox;
            let (sx, sy) = (jitter_sigma * b.width(), jitter_sigma * b.height());
            for _ in 0..n_jitter {
                let mut d = [0.0f64; 4];
                if jitter_sigma > 0.0 {
                    for v in d.iter_mut() {
                        *v = StandardNormal.sample(rng);
                    }
                }
                let bbox = BBox::clipped(
                    b.x1() + sx * d[0],
                    b.y1() + sy * d[1],
                    b.x2() + sx * d[2],
                    b.y2() + sy * d[3],
                    w,
                    h,
                    MIN_SIDE,
                );
                out.push(Proposal {
                    bbox,
                    origin: ProposalOrigin::Jittered,
                });
            }
        }
        for _ in 0..n_random {
            out.push(Proposal {
                bbox: cfg.random_box(rng),
                origin: ProposalOrigin::Random,
            });
        }
        out
    }
}

/// A target scene as the adaptation loop sees it: features and proposals are
/// available, ground truth is not.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledScene(Scene);

impl UnlabeledScene {
    pub fn seed(&self) -> u64 {
        self.0.seed
    }

    pub fn domain(&self) -> Domain {
        self.0.domain
    }

    pub fn extract_feature(&self, cfg: &DomainConfig, bbox: &BBox, view: View, rng: &mut Rng) -> Vec<f64> {
        self.0.extract_feature(cfg, bbox, view, rng)
    }

    pub fn generate_proposals(
        &self,
        cfg: &DomainConfig,
        n_jitter: usize,
        n_random: usize,
        jitter_sigma: f64,
        rng: &mut Rng,
    ) -> Vec<Proposal> {
        self.0.generate_proposals(cfg, n_jitter, n_random, jitter_sigma, rng)
    }

    /// Escape hatch for dumping a dataset to disk.
    pub(crate) fn inner(&self) -> &Scene {
        &self.0
    }
}

impl From<Scene> for UnlabeledScene {
    fn from(s: Scene) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalOrigin {
    Jittered,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub origin: ProposalOrigin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub source: Vec<Scene>,
    pub target: Vec<UnlabeledScene>,
    /// Held-out target scenes; labels are read only by metrics.
    pub eval: Vec<Scene>,
}

fn generate_split(cfg: &DomainConfig, domain: Domain, seed: u64, split: u64, n: usize) -> Vec<Scene> {
    (0..n)
        .into_par_iter()
        .map(|i| Scene::generate(cfg, domain, rng::derive(seed, &[split, i as u64])))
        .collect()
}

/// Generates the three splits. Each scene is seeded independently, so the
/// result does not depend on the rayon thread count.
pub fn generate_dataset(cfg: &DomainConfig, n_source: usize, n_target: usize, n_eval: usize, seed: u64) -> Result<Dataset> {
    if n_source == 0 || n_target == 0 || n_eval == 0 {
        return Err(Error::config("n_source/n_target/n_eval", "every split needs at least one scene"));
    }
    Ok(Dataset {
        source: generate_split(cfg, Domain::Source, seed, tag::SOURCE, n_source),
        target: generate_split(cfg, Domain::Target, seed, tag::TARGET, n_target)
            .into_iter()
            .map(UnlabeledScene)
            .collect(),
        eval: generate_split(cfg, Domain::Target, seed, tag::EVAL, n_eval),
    })
}

/// One scene per line: `<domain> <seed> <cat>,<x1>,<y1>,<x2>,<y2> ...`.
pub fn format_scene(scene: &Scene) -> String {
    let mut line = format!("{} {}", scene.domain.as_str(), scene.seed);
    for o in &scene.objects {
        let b = o.bbox;
        let _ = write!(line, " {},{},{},{},{}", o.category, b.x1(), b.y1(), b.x2(), b.y2());
    }
    line
}

pub fn parse_scene(cfg: &DomainConfig, line: &str, location: &str) -> Result<Scene> {
    let mut fields = line.split_whitespace();
    let domain: Domain = fields
        .next()
        .ok_or_else(|| Error::parse(location, "missing domain tag"))?
        .parse()?;
    let seed: u64 = fields
        .next()
        .ok_or_else(|| Error::parse(location, "missing seed"))?
        .parse()
        .map_err(|e| Error::parse(location, format!("bad seed: {e}")))?;
    let mut objects = Vec::new();
    for tuple in fields {
        let parts: Vec<&str> = tuple.split(',').collect();
        if parts.len() != 5 {
            return Err(Error::parse(location, format!("object `{tuple}` needs 5 fields")));
        }
        let category: usize = parts[0]
            .parse()
            .map_err(|e| Error::parse(location, format!("bad category: {e}")))?;
        let mut c = [0.0f64; 4];
        for (slot, s) in c.iter_mut().zip(&parts[1..]) {
            *slot = s
                .parse()
                .map_err(|e| Error::parse(location, format!("bad coordinate `{s}`: {e}")))?;
        }
        objects.push(SceneObject {
            category,
            bbox: BBox::new(c[0], c[1], c[2], c[3])?,
        });
    }
    Scene::new(cfg, domain, seed, objects)
}

pub fn write_scenes<'a, W: Write>(out: &mut W, scenes: impl IntoIterator<Item = &'a Scene>) -> Result<()> {
    for s in scenes {
        writeln!(out, "{}", format_scene(s))?;
    }
    Ok(())
}

pub fn read_scenes<R: BufRead>(cfg: &DomainConfig, input: R, name: &str) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        scenes.push(parse_scene(cfg, &line, &format!("{name}:{}", i + 1))?);
    }
    Ok(scenes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_cfg(offset: f64) -> DomainConfig {
        let p = WorldParams {
            feature_noise_sigma: 0.0,
            weak_aug_sigma: 0.0,
            strong_aug_sigma: 0.0,
            shift_magnitude: offset,
            ..WorldParams::default()
        };
        DomainConfig::from_params(&p).unwrap()
    }

    fn lone(cfg: &DomainConfig, domain: Domain, cat: usize) -> Scene {
        let bbox = BBox::new(10.0, 10.0, 30.0, 30.0).unwrap();
        Scene::new(cfg, domain, 5, vec![SceneObject { category: cat, bbox }]).unwrap()
    }

    #[test]
    fn feature_on_object_is_its_prototype() {
        let cfg = quiet_cfg(0.0);
        let s = lone(&cfg, Domain::Source, 2);
        let mut r = rng::stream(0, &[]);
        let f = s.extract_feature(&cfg, &s.objects()[0].bbox, View::Strong, &mut r);
        for (a, b) in f.iter().zip(&cfg.prototypes[2]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn feature_off_object_is_background() {
        let cfg = quiet_cfg(0.0);
        let s = lone(&cfg, Domain::Source, 1);
        let mut r = rng::stream(0, &[]);
        let f = s.extract_feature(&cfg, &BBox::new(60.0, 60.0, 80.0, 80.0).unwrap(), View::Weak, &mut r);
        assert_eq!(f, cfg.prototypes[cfg.background()]);
    }

    #[test]
    fn half_overlap_mixes_prototypes() {
        let cfg = quiet_cfg(0.0);
        let s = lone(&cfg, Domain::Source, 3);
        // 20x20 object; a 20x(20/3*... ) box: shift by w so that inter/union = 0.5
        // inter = 20*(20-dx), union = 800 - inter -> dx = 20/3
        let probe = s.objects()[0].bbox.translated(20.0 / 3.0, 0.0);
        assert!((iou(&probe, &s.objects()[0].bbox) - 0.5).abs() < 1e-12);
        let mut r = rng::stream(0, &[]);
        let f = s.extract_feature(&cfg, &probe, View::Weak, &mut r);
        for k in 0..cfg.feature_dim {
            let want = 0.5 * cfg.prototypes[3][k] + 0.5 * cfg.prototypes[cfg.background()][k];
            assert!((f[k] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn target_feature_is_source_plus_offset() {
        let cfg = quiet_cfg(2.0);
        let src = lone(&cfg, Domain::Source, 0);
        let tgt = lone(&cfg, Domain::Target, 0);
        let probe = BBox::new(15.0, 12.0, 40.0, 33.0).unwrap();
        let mut r = rng::stream(0, &[]);
        let fs = src.extract_feature(&cfg, &probe, View::Weak, &mut r);
        let ft = tgt.extract_feature(&cfg, &probe, View::Weak, &mut r);
        for k in 0..cfg.feature_dim {
            assert!((ft[k] - fs[k] - cfg.domain_offset[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_shift_gives_zero_offset() {
        let cfg = quiet_cfg(0.0);
        assert!(cfg.domain_offset.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn proposals_without_jitter_equal_ground_truth() {
        let cfg = quiet_cfg(0.0);
        let s = Scene::generate(&cfg, Domain::Source, 99);
        let mut r = rng::stream(1, &[]);
        let props = s.generate_proposals(&cfg, 2, 0, 0.0, &mut r);
        assert_eq!(props.len(), 2 * s.objects().len());
        for (i, p) in props.iter().enumerate() {
            assert_eq!(p.bbox, s.objects()[i / 2].bbox);
        }
        assert!(s.generate_proposals(&cfg, 0, 0, 0.1, &mut r).is_empty());
    }

    #[test]
    fn proposals_are_deterministic_and_valid() {
        let cfg = DomainConfig::from_params(&WorldParams::default()).unwrap();
        let s = Scene::generate(&cfg, Domain::Target, 3);
        let a = s.generate_proposals(&cfg, 8, 16, 0.5, &mut rng::stream(4, &[]));
        let b = s.generate_proposals(&cfg, 8, 16, 0.5, &mut rng::stream(4, &[]));
        assert_eq!(a, b);
        let (w, h) = cfg.extent;
        for p in &a {
            assert!(p.bbox.within(w, h));
            assert!(p.bbox.width() > 0.0 && p.bbox.height() > 0.0);
        }
    }

    #[test]
    fn dataset_is_deterministic() {
        let cfg = DomainConfig::from_params(&WorldParams::default()).unwrap();
        let a = generate_dataset(&cfg, 5, 1, 3, 42).unwrap();
        let b = generate_dataset(&cfg, 5, 1, 3, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.target.len(), 1);
        assert!(a.eval.iter().all(|s| s.domain() == Domain::Target));
        assert!(generate_dataset(&cfg, 0, 1, 1, 0).is_err());
    }

    #[test]
    fn scene_text_round_trip() {
        let cfg = DomainConfig::from_params(&WorldParams::default()).unwrap();
        let scenes: Vec<Scene> = (0..20).map(|i| Scene::generate(&cfg, Domain::Source, i)).collect();
        let mut buf = Vec::new();
        write_scenes(&mut buf, &scenes).unwrap();
        let back = read_scenes(&cfg, buf.as_slice(), "mem").unwrap();
        assert_eq!(back, scenes);
    }

    #[test]
    fn rejects_bad_scene_lines() {
        let cfg = DomainConfig::from_params(&WorldParams::default()).unwrap();
        assert!(parse_scene(&cfg, "moon 1 0,1,1,2,2", "t").is_err());
        assert!(parse_scene(&cfg, "source 1 9,1,1,2,2", "t").is_err());
        assert!(parse_scene(&cfg, "source 1 0,1,1,2", "t").is_err());
        assert!(parse_scene(&cfg, "source 1", "t").is_err());
    }

    #[test]
    fn rejects_inverted_augmentation() {
        let p = WorldParams {
            weak_aug_sigma: 0.5,
            strong_aug_sigma: 0.1,
            ..WorldParams::default()
        };
        assert!(DomainConfig::from_params(&p).is_err());
    }
}
