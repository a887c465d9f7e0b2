//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so an
//! empty file is a valid config. [`Config::to_text`] writes every key in a
//! fixed order and parses back to an identical value.

use std::path::Path;

use crate::adapt::{AdaptConfig, PretrainConfig};
use crate::error::{Error, Result};
use crate::losses::MixupStrategy;
use crate::metrics::EvalSettings;
use crate::synthworld::{DomainConfig, WorldParams};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub world: WorldParams,
    pub n_source: usize,
    pub n_target: usize,
    pub n_eval: usize,
    pub pretrain: PretrainConfig,
    pub adapt: AdaptConfig,
    pub eval: EvalSettings,
    pub seeds: Vec<u64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            world: WorldParams::default(),
            n_source: 200,
            n_target: 200,
            n_eval: 200,
            pretrain: PretrainConfig::default(),
            adapt: AdaptConfig::default(),
            eval: EvalSettings::default(),
            seeds: vec![0],
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(key, format!("expected true or false, got `{value}`"))),
    }
}

/// Comma-separated seed list, e.g. `0,1,2`.
pub fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    let seeds = value
        .split(',')
        .map(|s| num::<u64>("seeds", s.trim()))
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        return Err(Error::config("seeds", "need at least one seed"));
    }
    Ok(seeds)
}

impl Config {
    /// Every key accepted by [`Config::set`], in snapshot order.
    pub const KEYS: [&'static str; 55] = [
        "num_categories",
        "feature_dim",
        "extent_width",
        "extent_height",
        "max_objects",
        "min_object_size",
        "max_object_size",
        "prototype_norm",
        "shift_magnitude",
        "shift_random",
        "shift_background",
        "shift_fade",
        "shift_mimic",
        "fade_category",
        "mimic_category",
        "feature_noise_sigma",
        "weak_aug_sigma",
        "strong_aug_sigma",
        "world_seed",
        "n_source",
        "n_target",
        "n_eval",
        "hidden",
        "pretrain_epochs",
        "pretrain_lr",
        "pretrain_momentum",
        "pretrain_n_jitter",
        "pretrain_n_random",
        "pretrain_jitter_sigma",
        "sigma_h",
        "sigma_l",
        "lambda1",
        "lambda2",
        "tau",
        "alpha",
        "lr",
        "momentum",
        "epochs",
        "batch_size",
        "enable_pst",
        "enable_lscl",
        "mixup_strategy",
        "normalize_contrastive",
        "exclude_high_overlap",
        "soft_replaces_background",
        "fg_iou_threshold",
        "match_iou_threshold",
        "nms_threshold",
        "n_jitter",
        "n_random",
        "jitter_sigma",
        "eval_n_jitter",
        "eval_n_random",
        "eval_seed",
        "seeds",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let w = &mut self.world;
        let p = &mut self.pretrain;
        let a = &mut self.adapt;
        match key {
            "num_categories" => w.num_categories = num(key, v)?,
            "feature_dim" => w.feature_dim = num(key, v)?,
            "extent_width" => w.extent.0 = num(key, v)?,
            "extent_height" => w.extent.1 = num(key, v)?,
            "max_objects" => w.max_objects = num(key, v)?,
            "min_object_size" => w.min_object_size = num(key, v)?,
            "max_object_size" => w.max_object_size = num(key, v)?,
            "prototype_norm" => w.prototype_norm = num(key, v)?,
            "shift_magnitude" => w.shift_magnitude = num(key, v)?,
            "shift_random" => w.shift_random = num(key, v)?,
            "shift_background" => w.shift_background = num(key, v)?,
            "shift_fade" => w.shift_fade = num(key, v)?,
            "shift_mimic" => w.shift_mimic = num(key, v)?,
            "fade_category" => w.fade_category = num(key, v)?,
            "mimic_category" => w.mimic_category = num(key, v)?,
            "feature_noise_sigma" => w.feature_noise_sigma = num(key, v)?,
            "weak_aug_sigma" => w.weak_aug_sigma = num(key, v)?,
            "strong_aug_sigma" => w.strong_aug_sigma = num(key, v)?,
            "world_seed" => w.seed = num(key, v)?,
            "n_source" => self.n_source = num(key, v)?,
            "n_target" => self.n_target = num(key, v)?,
            "n_eval" => self.n_eval = num(key, v)?,
            "hidden" => p.hidden = num(key, v)?,
            "pretrain_epochs" => p.epochs = num(key, v)?,
            "pretrain_lr" => p.lr = num(key, v)?,
            "pretrain_momentum" => p.momentum = num(key, v)?,
            "pretrain_n_jitter" => p.proposals.n_jitter = num(key, v)?,
            "pretrain_n_random" => p.proposals.n_random = num(key, v)?,
            "pretrain_jitter_sigma" => p.proposals.jitter_sigma = num(key, v)?,
            "sigma_h" => a.sigma_high = num(key, v)?,
            "sigma_l" => a.sigma_low = num(key, v)?,
            "lambda1" => a.lambda_pst = num(key, v)?,
            "lambda2" => a.lambda_lscl = num(key, v)?,
            "tau" => a.tau = num(key, v)?,
            "alpha" => a.alpha = num(key, v)?,
            "lr" => a.lr = num(key, v)?,
            "momentum" => a.momentum = num(key, v)?,
            "epochs" => a.epochs = num(key, v)?,
            "batch_size" => a.batch_size = num(key, v)?,
            "enable_pst" => a.enable_pst = flag(key, v)?,
            "enable_lscl" => a.enable_lscl = flag(key, v)?,
            "mixup_strategy" => a.mixup = v.parse::<MixupStrategy>()?,
            "normalize_contrastive" => a.normalize_contrastive = flag(key, v)?,
            "exclude_high_overlap" => a.exclude_high_overlap = flag(key, v)?,
            "soft_replaces_background" => a.soft_replaces_background = flag(key, v)?,
            "fg_iou_threshold" => {
                a.fg_iou_threshold = num(key, v)?;
                p.fg_iou_threshold = a.fg_iou_threshold;
                self.eval.fg_iou_threshold = a.fg_iou_threshold;
            }
            "match_iou_threshold" => a.match_iou_threshold = num(key, v)?,
            "nms_threshold" => {
                a.nms_threshold = num(key, v)?;
                self.eval.nms_threshold = a.nms_threshold;
            }
            "n_jitter" => a.proposals.n_jitter = num(key, v)?,
            "n_random" => a.proposals.n_random = num(key, v)?,
            "jitter_sigma" => {
                a.proposals.jitter_sigma = num(key, v)?;
                self.eval.jitter_sigma = a.proposals.jitter_sigma;
            }
            "eval_n_jitter" => self.eval.n_jitter = num(key, v)?,
            "eval_n_random" => self.eval.n_random = num(key, v)?,
            "eval_seed" => self.eval.seed = num(key, v)?,
            "seeds" => self.seeds = parse_seeds(v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let w = &self.world;
        let p = &self.pretrain;
        let a = &self.adapt;
        match key {
            "num_categories" => w.num_categories.to_string(),
            "feature_dim" => w.feature_dim.to_string(),
            "extent_width" => w.extent.0.to_string(),
            "extent_height" => w.extent.1.to_string(),
            "max_objects" => w.max_objects.to_string(),
            "min_object_size" => w.min_object_size.to_string(),
            "max_object_size" => w.max_object_size.to_string(),
            "prototype_norm" => w.prototype_norm.to_string(),
            "shift_magnitude" => w.shift_magnitude.to_string(),
            "shift_random" => w.shift_random.to_string(),
            "shift_background" => w.shift_background.to_string(),
            "shift_fade" => w.shift_fade.to_string(),
            "shift_mimic" => w.shift_mimic.to_string(),
            "fade_category" => w.fade_category.to_string(),
            "mimic_category" => w.mimic_category.to_string(),
            "feature_noise_sigma" => w.feature_noise_sigma.to_string(),
            "weak_aug_sigma" => w.weak_aug_sigma.to_string(),
            "strong_aug_sigma" => w.strong_aug_sigma.to_string(),
            "world_seed" => w.seed.to_string(),
            "n_source" => self.n_source.to_string(),
            "n_target" => self.n_target.to_string(),
            "n_eval" => self.n_eval.to_string(),
            "hidden" => p.hidden.to_string(),
            "pretrain_epochs" => p.epochs.to_string(),
            "pretrain_lr" => p.lr.to_string(),
            "pretrain_momentum" => p.momentum.to_string(),
            "pretrain_n_jitter" => p.proposals.n_jitter.to_string(),
            "pretrain_n_random" => p.proposals.n_random.to_string(),
            "pretrain_jitter_sigma" => p.proposals.jitter_sigma.to_string(),
            "sigma_h" => a.sigma_high.to_string(),
            "sigma_l" => a.sigma_low.to_string(),
            "lambda1" => a.lambda_pst.to_string(),
            "lambda2" => a.lambda_lscl.to_string(),
            "tau" => a.tau.to_string(),
            "alpha" => a.alpha.to_string(),
            "lr" => a.lr.to_string(),
            "momentum" => a.momentum.to_string(),
            "epochs" => a.epochs.to_string(),
            "batch_size" => a.batch_size.to_string(),
            "enable_pst" => a.enable_pst.to_string(),
            "enable_lscl" => a.enable_lscl.to_string(),
            "mixup_strategy" => a.mixup.name().to_string(),
            "normalize_contrastive" => a.normalize_contrastive.to_string(),
            "exclude_high_overlap" => a.exclude_high_overlap.to_string(),
            "soft_replaces_background" => a.soft_replaces_background.to_string(),
            "fg_iou_threshold" => a.fg_iou_threshold.to_string(),
            "match_iou_threshold" => a.match_iou_threshold.to_string(),
            "nms_threshold" => a.nms_threshold.to_string(),
            "n_jitter" => a.proposals.n_jitter.to_string(),
            "n_random" => a.proposals.n_random.to_string(),
            "jitter_sigma" => a.proposals.jitter_sigma.to_string(),
            "eval_n_jitter" => self.eval.n_jitter.to_string(),
            "eval_n_random" => self.eval.n_random.to_string(),
            "eval_seed" => self.eval.seed.to_string(),
            "seeds" => self
                .seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
            _ => unreachable!("unlisted key {key}"),
        }
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::parse("--set", format!("expected key=value, got `{assignment}`")))?;
        self.set(k.trim(), v)
    }

    /// Defaults overlaid with the assignments in `text`. Keys may appear once.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("line {}", n + 1), "expected `key = value`"))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::config(k, format!("repeated on line {}", n + 1)));
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.adapt.validate()?;
        self.domain()?;
        for (k, v) in [
            ("n_source", self.n_source),
            ("n_target", self.n_target),
            ("n_eval", self.n_eval),
            ("hidden", self.pretrain.hidden),
        ] {
            if v == 0 {
                return Err(Error::config(k, "must be at least 1"));
            }
        }
        if !(self.pretrain.lr > 0.0 && (0.0..1.0).contains(&self.pretrain.momentum)) {
            return Err(Error::config("pretrain_lr", "need pretrain_lr > 0 and 0 <= pretrain_momentum < 1"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<DomainConfig> {
        DomainConfig::from_params(&self.world)
    }

    /// Canonical snapshot: every key, one `key = value` line each.
    pub fn to_text(&self) -> String {
        Self::KEYS.iter().map(|k| format!("{k} = {}\n", self.get(k))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(Config::parse("").unwrap(), Config::default());
        assert_eq!(Config::parse("# only a comment\n\n").unwrap(), Config::default());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut c = Config::default();
        c.set("sigma_h", "0.9").unwrap();
        c.set("tau", "0.123456789012345").unwrap();
        c.set("mixup_strategy", "cls-").unwrap();
        c.set("seeds", "4, 5,6").unwrap();
        c.set("enable_lscl", "false").unwrap();
        let back = Config::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn every_key_is_settable() {
        let c = Config::default();
        for k in Config::KEYS {
            let mut d = c.clone();
            d.set(k, &c.get(k)).unwrap();
            assert_eq!(d, c, "{k}");
        }
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::parse("sigma_hh = 0.5").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "sigma_hh"), "{err}");
    }

    #[test]
    fn inverted_thresholds_are_rejected() {
        let err = Config::parse("sigma_h = 0.3\nsigma_l = 0.5").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "sigma_l"), "{err}");
    }

    #[test]
    fn malformed_lines() {
        assert!(matches!(Config::parse("sigma_h 0.5"), Err(Error::Parse { .. })));
        assert!(matches!(Config::parse("tau = x"), Err(Error::Config { .. })));
        assert!(matches!(Config::parse("tau = 1\ntau = 2"), Err(Error::Config { .. })));
        assert!(matches!(Config::parse("enable_pst = yes"), Err(Error::Config { .. })));
    }

    #[test]
    fn overrides_and_comments() {
        let mut c = Config::parse("lr = 0.01  # faster\n").unwrap();
        assert_eq!(c.adapt.lr, 0.01);
        c.apply_override("epochs=3").unwrap();
        assert_eq!(c.adapt.epochs, 3);
        assert!(c.apply_override("epochs").is_err());
    }
}
