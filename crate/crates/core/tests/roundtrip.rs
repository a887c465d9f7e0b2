mod common;

use std::fs::{self, File};
use std::io::BufReader;

use common::args;
use sfod::adapt::{pretrain_source, PretrainConfig};
use sfod::cli::run;
use sfod::config::Config;
use sfod::detector::read_checkpoint;
use sfod::metrics::{evaluate_model, EvalSettings};
use sfod::synthworld::{generate_dataset, read_scenes};

#[test]
fn dumped_datasets_load_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    run(args("gen-data", dir.path(), &["--seeds", "2,5"])).unwrap();
    let mut cfg = Config::default();
    for kv in ["n_source=30", "n_target=8", "n_eval=8"] {
        cfg.apply_override(kv).unwrap();
    }
    let domain = cfg.domain().unwrap();
    for seed in [2u64, 5] {
        let ds = generate_dataset(&domain, 30, 8, 8, seed).unwrap();
        let sub = dir.path().join(format!("data-seed{seed}"));
        let load = |name: &str| read_scenes(&domain, BufReader::new(File::open(sub.join(name)).unwrap()), name).unwrap();
        assert_eq!(load("source.txt"), ds.source);
        assert_eq!(load("eval.txt"), ds.eval);
        let target = load("target.txt");
        assert_eq!(target.len(), ds.target.len());
        for (a, b) in target.iter().zip(&ds.target) {
            assert_eq!((a.seed(), a.domain()), (b.seed(), b.domain()));
        }
    }
    let summary = fs::read_to_string(dir.path().join("datasets.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("5,30,8,8,")));
}

#[test]
fn saved_checkpoints_reload_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    run(args("pretrain", dir.path(), &["--set", "seeds=3"])).unwrap();
    let mut cfg = Config::default();
    for kv in ["n_source=30", "n_target=8", "n_eval=8", "pretrain_epochs=2"] {
        cfg.apply_override(kv).unwrap();
    }
    let domain = cfg.domain().unwrap();
    let ds = generate_dataset(&domain, 30, 8, 8, 3).unwrap();
    let model = pretrain_source(&domain, &ds.source, &PretrainConfig { epochs: 2, ..cfg.pretrain }, 3).unwrap();
    let loaded = read_checkpoint(BufReader::new(File::open(dir.path().join("source-seed3.ckpt")).unwrap())).unwrap();
    assert_eq!(loaded, model);
    let es = EvalSettings::default();
    assert_eq!(
        evaluate_model(&loaded, &domain, &ds.eval, &es).unwrap(),
        evaluate_model(&model, &domain, &ds.eval, &es).unwrap()
    );
}
