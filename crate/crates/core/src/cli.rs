//! Command-line front end.
//!
//! Every subcommand loads a [`Config`] (file plus `--set` overrides), writes a
//! `manifest.txt` and one or more CSVs under the output directory. Each CSV
//! starts with `# manifest <hash>`, where the hash covers the subcommand, its
//! arguments, the config snapshot, the seed list and any input files, but no
//! timestamps.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::adapt::{adapt_target, adapt_target_observed, build_scene_batch, pretrain_source, AdaptConfig, EpochLog, Evaluator};
use crate::config::{parse_seeds, Config};
use crate::detector::{read_checkpoint, write_checkpoint, ModelParams};
use crate::error::{Error, Result};
use crate::losses::gradcheck::{grad_check, sample_coords, GradCheckReport};
use crate::losses::evaluate;
use crate::metrics::{assignment_accuracy_bins, default_bin_edges, evaluate_model, slide_diagnostic, EvalResult};
use crate::rng::{self, tag};
use crate::synthworld::{generate_dataset, write_scenes, Dataset, DomainConfig};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "SFOD_OUT";

#[derive(Debug, Parser)]
#[command(name = "sfod", version, about = "Source-free detector adaptation on a synthetic shift world")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set sigma_h=0.9`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Comma-separated seeds, or a count `N` meaning `0..N`.
    #[arg(long)]
    pub seeds: Option<String>,
    /// Seeds processed concurrently.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Output directory.
    #[arg(long, env = OUT_ENV, default_value = "sfod-out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dump the source, target and eval splits of every seed.
    GenData(Common),
    /// Train source models and write their checkpoints.
    Pretrain(Common),
    /// Pretrain then adapt with the configured method; per-epoch log.
    Adapt(Common),
    /// Evaluate a checkpoint on the target eval split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// MT / +PST / +LSCL / both over all seeds.
    Ablate(Common),
    /// Final mAP for each value of one config key.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long)]
        values: String,
    },
    /// Foreground-assignment accuracy per teacher-confidence bin.
    DiagnoseBins {
        #[command(flatten)]
        common: Common,
        /// Use this model instead of training one per seed.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Bin the adapted teacher rather than the source-trained one.
        #[arg(long)]
        adapted: bool,
    },
    /// Confidence along a box sliding off an object.
    DiagnoseSlide {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        steps: usize,
    },
    /// Finite-difference check of the training-loss gradients.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 10)]
        batches: usize,
        #[arg(long, default_value_t = 200)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::Pretrain(_) => "pretrain",
            Command::Adapt(_) => "adapt",
            Command::Eval { .. } => "eval",
            Command::Ablate(_) => "ablate",
            Command::Sweep { .. } => "sweep",
            Command::DiagnoseBins { .. } => "diagnose-bins",
            Command::DiagnoseSlide { .. } => "diagnose-slide",
            Command::Gradcheck { .. } => "gradcheck",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenData(c) | Command::Pretrain(c) | Command::Adapt(c) | Command::Ablate(c) => c,
            Command::Eval { common, .. }
            | Command::Sweep { common, .. }
            | Command::DiagnoseBins { common, .. }
            | Command::DiagnoseSlide { common, .. }
            | Command::Gradcheck { common, .. } => common,
        }
    }

    /// Subcommand-specific arguments that change the outputs.
    fn extra_inputs(&self) -> Vec<String> {
        match self {
            Command::Sweep { param, values, .. } => vec![format!("param={param}"), format!("values={values}")],
            Command::DiagnoseBins { adapted, .. } => vec![format!("adapted={adapted}")],
            Command::DiagnoseSlide { steps, .. } => vec![format!("steps={steps}")],
            Command::Gradcheck {
                batches,
                coords,
                step,
                tolerance,
                ..
            } => vec![
                format!("batches={batches}"),
                format!("coords={coords}"),
                format!("step={step}"),
                format!("tolerance={tolerance}"),
            ],
            _ => vec![],
        }
    }

    fn checkpoint(&self) -> Option<&Path> {
        match self {
            Command::Eval { checkpoint, .. } => Some(checkpoint),
            Command::DiagnoseBins { checkpoint, .. } | Command::DiagnoseSlide { checkpoint, .. } => checkpoint.as_deref(),
            _ => None,
        }
    }
}

/// `git hash-object`-style digest: SHA-256 over `blob <len>\0<content>`.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    hex::encode(h.finalize())
}

/// Everything a run depends on, and where its outputs go.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config: Config,
    pub seeds: Vec<u64>,
    pub inputs: Vec<String>,
    pub out_dir: PathBuf,
    pub hash: String,
    pub started_unix: u64,
}

impl RunManifest {
    fn new(command: &str, config: Config, inputs: Vec<String>, out_dir: PathBuf) -> Self {
        let seeds = config.seeds.clone();
        let mut body = format!("command = {command}\n");
        for i in &inputs {
            let _ = writeln!(body, "input = {i}");
        }
        body.push_str(&config.to_text());
        let hash = content_hash(body.as_bytes());
        Self {
            command: command.to_string(),
            config,
            seeds,
            inputs,
            out_dir,
            hash,
            started_unix: unix_now(),
        }
    }

    fn write(&self, finished: u64) -> Result<()> {
        let mut s = format!("hash = {}\ncommand = {}\n", self.hash, self.command);
        for i in &self.inputs {
            let _ = writeln!(s, "input = {i}");
        }
        let _ = writeln!(s, "output_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "started_unix = {}\nfinished_unix = {finished}", self.started_unix);
        s.push_str("\n# config\n");
        s.push_str(&self.config.to_text());
        fs::write(self.out_dir.join("manifest.txt"), s)?;
        Ok(())
    }

    /// Writes `header` and `rows` to `name`, preceded by the manifest line.
    fn write_csv(&self, name: &str, header: &str, rows: &[String]) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "# manifest {}", self.hash)?;
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
        Ok(path)
    }
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn load_config(c: &Common) -> Result<Config> {
    let mut cfg = match &c.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    for o in &c.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = &c.seeds {
        cfg.seeds = match s.trim().parse::<u64>() {
            Ok(n) if !s.contains(',') => (0..n).collect(),
            _ => parse_seeds(s)?,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_model(path: &Path) -> Result<ModelParams> {
    let f = File::open(path).map_err(|e| Error::config("checkpoint", format!("{}: {e}", path.display())))?;
    read_checkpoint(BufReader::new(f))
}

fn save_model(path: &Path, params: &ModelParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params)?;
    w.flush()?;
    Ok(())
}

/// Runs `job` for every seed on `workers` threads; results come back in seed
/// order.
fn per_seed<T: Send>(seeds: &[u64], workers: usize, job: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    pool.install(|| seeds.par_iter().map(|&s| job(s)).collect())
}

struct SeedData {
    domain: DomainConfig,
    data: Dataset,
}

fn seed_data(cfg: &Config, seed: u64) -> Result<SeedData> {
    let domain = cfg.domain()?;
    let data = generate_dataset(&domain, cfg.n_source, cfg.n_target, cfg.n_eval, seed)?;
    Ok(SeedData { domain, data })
}

/// Source model, then the adapted teacher and its log.
fn pretrain_and_adapt(cfg: &Config, ac: &AdaptConfig, seed: u64, with_log: bool) -> Result<(SeedData, ModelParams, ModelParams, Vec<EpochLog>)> {
    let sd = seed_data(cfg, seed)?;
    let source = pretrain_source(&sd.domain, &sd.data.source, &cfg.pretrain, seed)?;
    let ev = Evaluator {
        scenes: &sd.data.eval,
        settings: cfg.eval,
    };
    let out = adapt_target(&source, &sd.domain, &sd.data.target, ac, seed, with_log.then_some(&ev))?;
    Ok((sd, source, out.teacher, out.log))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "na".to_string(), |x| format!("{x:.6}"))
}

fn ap_columns(num_categories: usize) -> String {
    (0..num_categories).map(|c| format!("AP_{c}")).collect::<Vec<_>>().join(",")
}

fn ap_values(r: &EvalResult) -> String {
    r.ap.iter().map(|a| fmt_opt(*a)).collect::<Vec<_>>().join(",")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Ablation variants in output order.
pub fn ablation_variants(base: &AdaptConfig) -> [(&'static str, AdaptConfig); 4] {
    let with = |pst, lscl| AdaptConfig {
        enable_pst: pst,
        enable_lscl: lscl,
        ..*base
    };
    [
        ("mt", with(false, false)),
        ("mt+pst", with(true, false)),
        ("mt+lscl", with(false, true)),
        ("mt+pst+lscl", with(true, true)),
    ]
}

fn final_map(cfg: &Config, ac: &AdaptConfig, seed: u64) -> Result<f64> {
    let (sd, _, teacher, _) = pretrain_and_adapt(cfg, ac, seed, false)?;
    Ok(evaluate_model(&teacher, &sd.domain, &sd.data.eval, &cfg.eval)?.map)
}

fn run_command(cmd: &Command, m: &RunManifest) -> Result<Vec<PathBuf>> {
    let cfg = &m.config;
    let workers = cmd.common().workers;
    let c = cfg.world.num_categories;
    let mut written = Vec::new();
    match cmd {
        Command::GenData(_) => {
            let rows = per_seed(&m.seeds, workers, |seed| {
                let sd = seed_data(cfg, seed)?;
                let dir = m.out_dir.join(format!("data-seed{seed}"));
                fs::create_dir_all(&dir)?;
                for (name, scenes) in [
                    ("source.txt", sd.data.source.iter().collect::<Vec<_>>()),
                    ("target.txt", sd.data.target.iter().map(|u| u.inner()).collect()),
                    ("eval.txt", sd.data.eval.iter().collect()),
                ] {
                    let mut w = BufWriter::new(File::create(dir.join(name))?);
                    write_scenes(&mut w, scenes)?;
                    w.flush()?;
                }
                let objects = |v: &[&crate::synthworld::Scene]| v.iter().map(|s| s.objects().len()).sum::<usize>();
                let src: Vec<_> = sd.data.source.iter().collect();
                let ev: Vec<_> = sd.data.eval.iter().collect();
                Ok(format!(
                    "{seed},{},{},{},{},{}",
                    sd.data.source.len(),
                    sd.data.target.len(),
                    sd.data.eval.len(),
                    objects(&src),
                    objects(&ev)
                ))
            })?;
            written.push(m.write_csv("datasets.csv", "seed,n_source,n_target,n_eval,source_objects,eval_objects", &rows)?);
        }
        Command::Pretrain(_) => {
            let rows = per_seed(&m.seeds, workers, |seed| {
                let sd = seed_data(cfg, seed)?;
                let model = pretrain_source(&sd.domain, &sd.data.source, &cfg.pretrain, seed)?;
                save_model(&m.out_dir.join(format!("source-seed{seed}.ckpt")), &model)?;
                let r = evaluate_model(&model, &sd.domain, &sd.data.eval, &cfg.eval)?;
                Ok(format!("{seed},{:.6},{}", r.map, ap_values(&r)))
            })?;
            written.push(m.write_csv("pretrain.csv", &format!("seed,target_mAP,{}", ap_columns(c)), &rows)?);
        }
        Command::Adapt(_) => {
            let per = per_seed(&m.seeds, workers, |seed| {
                let sd = seed_data(cfg, seed)?;
                let source = pretrain_source(&sd.domain, &sd.data.source, &cfg.pretrain, seed)?;
                let ev = Evaluator {
                    scenes: &sd.data.eval,
                    settings: cfg.eval,
                };
                let mut last_good = source.clone();
                let out = adapt_target_observed(&source, &sd.domain, &sd.data.target, &cfg.adapt, seed, Some(&ev), &mut |_, t| {
                    last_good.clone_from(t)
                });
                let (teacher, log) = match out {
                    Ok(o) => (o.teacher, o.log),
                    Err(e @ Error::Diverged { .. }) => {
                        save_model(&m.out_dir.join(format!("teacher-seed{seed}.last-good.ckpt")), &last_good)?;
                        return Err(e);
                    }
                    Err(e) => return Err(e),
                };
                save_model(&m.out_dir.join(format!("teacher-seed{seed}.ckpt")), &teacher)?;
                Ok(log
                    .iter()
                    .map(|l| {
                        let e = l.eval.as_ref().expect("evaluator supplied");
                        format!(
                            "{},{seed},adapt,{:.6},{},{:.6},{:.6},{:.6},{:.4},{:.4},{:.4}",
                            l.epoch,
                            e.map,
                            ap_values(e),
                            l.loss_high,
                            l.loss_pst,
                            l.loss_lscl,
                            l.matched_mean,
                            l.high_mean,
                            l.low_mean
                        )
                    })
                    .collect::<Vec<_>>())
            })?;
            let header = format!(
                "epoch,seed,config_id,mAP,{},L_h,L_pst,L_lscl,N_p_mean,high_count_mean,low_count_mean",
                ap_columns(c)
            );
            written.push(m.write_csv("adapt_epochs.csv", &header, &per.concat())?);
        }
        Command::Eval { checkpoint, .. } => {
            let model = read_model(checkpoint)?;
            let rows = per_seed(&m.seeds, workers, |seed| {
                let sd = seed_data(cfg, seed)?;
                let r = evaluate_model(&model, &sd.domain, &sd.data.eval, &cfg.eval)?;
                let mut rows: Vec<String> = (0..c)
                    .map(|k| format!("{seed},{k},{},{},{}", fmt_opt(r.ap[k]), r.num_gt[k], r.num_det[k]))
                    .collect();
                rows.push(format!(
                    "{seed},mAP,{:.6},{},{}",
                    r.map,
                    r.num_gt.iter().sum::<usize>(),
                    r.num_det.iter().sum::<usize>()
                ));
                Ok(rows)
            })?;
            written.push(m.write_csv("eval.csv", "seed,category,AP,n_gt,n_det", &rows.concat())?);
        }
        Command::Ablate(_) => {
            let variants = ablation_variants(&cfg.adapt);
            let per = per_seed(&m.seeds, workers, |seed| {
                variants.iter().map(|(_, ac)| final_map(cfg, ac, seed)).collect::<Result<Vec<_>>>()
            })?;
            let mut runs = Vec::new();
            for (seed, maps) in m.seeds.iter().zip(&per) {
                for ((name, _), v) in variants.iter().zip(maps) {
                    runs.push(format!("{seed},{name},{v:.6}"));
                }
            }
            written.push(m.write_csv("ablate_runs.csv", "seed,variant,mAP", &runs)?);
            let summary: Vec<String> = variants
                .iter()
                .enumerate()
                .map(|(k, (name, ac))| {
                    let v: Vec<f64> = per.iter().map(|maps| maps[k]).collect();
                    format!(
                        "{name},{},{},{},{:.6},{:.6}",
                        ac.enable_pst,
                        ac.enable_lscl,
                        v.len(),
                        mean(&v),
                        std_dev(&v)
                    )
                })
                .collect();
            written.push(m.write_csv("ablate.csv", "variant,pst,lscl,n_seeds,mean_mAP,std_mAP", &summary)?);
        }
        Command::Sweep { param, values, .. } => {
            let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
            if values.is_empty() {
                return Err(Error::config("values", "need at least one value"));
            }
            let mut configs = Vec::with_capacity(values.len());
            for v in &values {
                let mut c2 = cfg.clone();
                c2.set(param, v)?;
                c2.validate()?;
                configs.push(c2);
            }
            let per = per_seed(&m.seeds, workers, |seed| {
                configs.iter().map(|c2| final_map(c2, &c2.adapt, seed)).collect::<Result<Vec<_>>>()
            })?;
            let mut runs = Vec::new();
            for (seed, maps) in m.seeds.iter().zip(&per) {
                for (v, x) in values.iter().zip(maps) {
                    runs.push(format!("{seed},{param},{v},{x:.6}"));
                }
            }
            written.push(m.write_csv("sweep_runs.csv", "seed,param,value,mAP", &runs)?);
            let summary: Vec<String> = values
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let xs: Vec<f64> = per.iter().map(|maps| maps[k]).collect();
                    format!("{param},{v},{},{:.6},{:.6}", xs.len(), mean(&xs), std_dev(&xs))
                })
                .collect();
            written.push(m.write_csv("sweep.csv", "param,value,n_seeds,mean_mAP,std_mAP", &summary)?);
        }
        Command::DiagnoseBins { checkpoint, adapted, .. } => {
            let fixed = checkpoint.as_deref().map(read_model).transpose()?;
            let edges = default_bin_edges();
            let per = per_seed(&m.seeds, workers, |seed| {
                let (sd, model) = match &fixed {
                    Some(p) => (seed_data(cfg, seed)?, p.clone()),
                    None if *adapted => {
                        let (sd, _, teacher, _) = pretrain_and_adapt(cfg, &cfg.adapt, seed, false)?;
                        (sd, teacher)
                    }
                    None => {
                        let sd = seed_data(cfg, seed)?;
                        let source = pretrain_source(&sd.domain, &sd.data.source, &cfg.pretrain, seed)?;
                        (sd, source)
                    }
                };
                assignment_accuracy_bins(&model, &sd.domain, &sd.data.eval, &edges, &cfg.eval)
            })?;
            let rows: Vec<String> = (0..edges.len() - 1)
                .map(|b| {
                    let n: usize = per.iter().map(|bins| bins[b].n).sum();
                    let correct: usize = per.iter().map(|bins| bins[b].correct).sum();
                    let acc = (n > 0).then(|| correct as f64 / n as f64);
                    format!("{},{},{n},{}", edges[b], edges[b + 1], fmt_opt(acc))
                })
                .collect();
            written.push(m.write_csv("bins.csv", "bin_lo,bin_hi,n,accuracy", &rows)?);
        }
        Command::DiagnoseSlide { checkpoint, steps, .. } => {
            let seed = m.seeds[0];
            let (sd, model) = match checkpoint {
                Some(p) => (seed_data(cfg, seed)?, read_model(p)?),
                None => {
                    let (sd, _, teacher, _) = pretrain_and_adapt(cfg, &cfg.adapt, seed, false)?;
                    (sd, teacher)
                }
            };
            let scene = &sd.data.eval[0];
            let gt = scene.objects()[0].bbox;
            let end = gt.translated(gt.width(), 0.0);
            let curve = slide_diagnostic(&model, &sd.domain, scene, &gt, &end, *steps, seed)?;
            let rows: Vec<String> = curve
                .iter()
                .map(|p| format!("{},{:.6},{:.6}", p.step, p.offset, p.max_prob))
                .collect();
            written.push(m.write_csv("slide.csv", "step,offset,max_prob", &rows)?);
        }
        Command::Gradcheck {
            batches,
            coords,
            step,
            tolerance,
            ..
        } => {
            let reports = run_gradcheck(cfg, m.seeds[0], *batches, *coords, *step)?;
            let mut text = String::new();
            for r in &reports {
                text.push_str(&r.to_text(5));
            }
            let path = m.out_dir.join("gradcheck.txt");
            fs::write(&path, format!("# manifest {}\n{text}", m.hash))?;
            written.push(path);
            let worst = reports.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
            let rows = reports
                .iter()
                .map(|r| format!("{},{},{:e}", r.label, r.coords.len(), r.max_rel_err))
                .collect::<Vec<_>>();
            written.push(m.write_csv("gradcheck.csv", "batch,coords,max_rel_err", &rows)?);
            if worst >= *tolerance {
                return Err(Error::GradCheck {
                    max_rel_err: worst,
                    tolerance: *tolerance,
                });
            }
        }
    }
    Ok(written)
}

/// Finite-difference checks of the full adaptation objective on `batches`
/// target scenes with at least one low-band match. Pseudo-labels come from a
/// pretrained teacher; the checked student is a fresh initialisation.
pub fn run_gradcheck(cfg: &Config, seed: u64, batches: usize, coords: usize, step: f64) -> Result<Vec<GradCheckReport>> {
    let sd = seed_data(cfg, seed)?;
    let teacher = pretrain_source(&sd.domain, &sd.data.source, &cfg.pretrain, seed)?;
    let mut ac = cfg.adapt;
    ac.enable_pst = true;
    ac.enable_lscl = true;
    let settings = ac.loss_settings();
    let mut out = Vec::with_capacity(batches);
    for (k, scene) in sd.data.target.iter().enumerate() {
        if out.len() == batches {
            break;
        }
        let student = ModelParams::init(teacher.dims(), &mut rng::stream(seed, &[tag::GRADCHECK, k as u64]));
        let (batch, _, _) = build_scene_batch(&teacher, &student, &sd.domain, scene, &ac, seed, 1)?;
        if batch.matched.len() < 2 || batch.hard_labels.is_none() {
            continue;
        }
        let (_, g) = evaluate(&student, &batch, &settings, true)?;
        let g = g.expect("gradient requested");
        let idx = sample_coords(student.len(), coords, &mut rng::stream(seed, &[tag::GRADCHECK, k as u64, 1]));
        let loss = |p: &ModelParams| evaluate(p, &batch, &settings, false).map_or(f64::NAN, |(r, _)| r.total);
        out.push(grad_check(&format!("scene{k}"), loss, &student, &g, &idx, step));
    }
    if out.is_empty() {
        return Err(Error::config("n_target", "no target scene produced both high- and low-band pseudo-labels"));
    }
    Ok(out)
}

/// Parses `args`, runs the subcommand, and returns the files it wrote.
pub fn run<I, T>(args: I) -> Result<Vec<PathBuf>>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
        Error::parse("command line", first)
    })?;
    execute(&cli.command)
}

pub fn execute(cmd: &Command) -> Result<Vec<PathBuf>> {
    let common = cmd.common();
    let cfg = load_config(common)?;
    let mut inputs = cmd.extra_inputs();
    if let Some(p) = cmd.checkpoint() {
        let bytes = fs::read(p).map_err(|e| Error::config("checkpoint", format!("{}: {e}", p.display())))?;
        inputs.push(format!("checkpoint={}", content_hash(&bytes)));
    }
    fs::create_dir_all(&common.out)?;
    let m = RunManifest::new(cmd.name(), cfg, inputs, common.out.clone());
    let written = run_command(cmd, &m)?;
    m.write(unix_now())?;
    Ok(written)
}

/// One-line `error kind=<kind>: <message>` report.
pub fn error_line(e: &Error) -> String {
    let kind = match e {
        Error::InvalidBox { .. } => "invalid-box",
        Error::Dimension { .. } => "dimension",
        Error::NonFinite(_) => "non-finite",
        Error::Diverged { .. } => "diverged",
        Error::Config { .. } => "config",
        Error::NoGroundTruth => "no-ground-truth",
        Error::Parse { .. } => "parse",
        Error::GradCheck { .. } => "gradcheck",
        Error::Io(_) => "io",
    };
    let msg = e.to_string().replace('\n', " ");
    match e {
        Error::Config { key, reason } => format!("error kind={kind} key={key}: {}", reason.replace('\n', " ")),
        _ => format!("error kind={kind}: {msg}"),
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Parse { .. } => 2,
        _ => 1,
    }
}

pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("").trim_start_matches("error: ").to_string();
            eprintln!("{}", error_line(&Error::parse("command line", first)));
            return ExitCode::from(2);
        }
    };
    match execute(&cli.command) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_hash_matches_git_sha256_objects() {
        assert_eq!(content_hash(b"hello\n"), "2cf8d83d9ee29543b34a87727421fdecb7e3f3a183d337639025de576db9ebb4");
        assert_eq!(content_hash(b""), "473a0f4c3be8a93681a267e3b1e9a7dcda1185436fe141f7749120a303721813");
    }

    fn common(seeds: Option<&str>, overrides: &[&str]) -> Common {
        Common {
            config: None,
            overrides: overrides.iter().map(|s| s.to_string()).collect(),
            seeds: seeds.map(str::to_string),
            workers: 1,
            out: PathBuf::from("unused"),
        }
    }

    #[test]
    fn seed_count_and_seed_list() {
        assert_eq!(load_config(&common(Some("3"), &[])).unwrap().seeds, vec![0, 1, 2]);
        assert_eq!(load_config(&common(Some("4,9"), &[])).unwrap().seeds, vec![4, 9]);
        assert_eq!(load_config(&common(None, &["seeds=7"])).unwrap().seeds, vec![7]);
        assert!(load_config(&common(Some("x"), &[])).is_err());
    }

    #[test]
    fn manifest_hash_tracks_config_and_inputs_but_not_time() {
        let cfg = Config::default();
        let a = RunManifest::new("adapt", cfg.clone(), vec![], PathBuf::from("a"));
        let b = RunManifest::new("adapt", cfg.clone(), vec![], PathBuf::from("b"));
        assert_eq!(a.hash, b.hash);
        let mut other = cfg.clone();
        other.set("lambda1", "0.5").unwrap();
        assert_ne!(a.hash, RunManifest::new("adapt", other, vec![], PathBuf::from("a")).hash);
        assert_ne!(a.hash, RunManifest::new("adapt", cfg.clone(), vec!["x=1".into()], PathBuf::from("a")).hash);
        assert_ne!(a.hash, RunManifest::new("ablate", cfg, vec![], PathBuf::from("a")).hash);
    }

    #[test]
    fn error_lines_name_kind_and_key() {
        let e = Error::config("sigma_l", "too big");
        assert!(error_line(&e).starts_with("error kind=config key=sigma_l: "));
        assert_eq!(exit_code(&e), 2);
        let e = Error::NoGroundTruth;
        assert!(error_line(&e).starts_with("error kind=no-ground-truth: "));
        assert_eq!(exit_code(&e), 1);
    }

    #[test]
    fn ablation_variants_cover_the_four_switch_settings() {
        let v = ablation_variants(&AdaptConfig::default());
        let flags: Vec<(bool, bool)> = v.iter().map(|(_, a)| (a.enable_pst, a.enable_lscl)).collect();
        assert_eq!(flags, vec![(false, false), (true, false), (false, true), (true, true)]);
    }

    #[test]
    fn unknown_subcommand_is_a_parse_error() {
        let err = run(["sfod", "frobnicate"]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }
}
