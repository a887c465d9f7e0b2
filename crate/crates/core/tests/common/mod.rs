use std::path::Path;

/// Overrides that keep every subcommand to a few seconds.
pub const SMALL: [&str; 10] = [
    "--set",
    "n_source=30",
    "--set",
    "n_target=8",
    "--set",
    "n_eval=8",
    "--set",
    "epochs=2",
    "--set",
    "pretrain_epochs=2",
];

pub fn args<'a>(cmd: &'a str, out: &'a Path, extra: &[&'a str]) -> Vec<String> {
    let mut v = vec!["sfod".to_string(), cmd.to_string(), "--out".to_string(), out.display().to_string()];
    v.extend(SMALL.iter().map(|s| s.to_string()));
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}
