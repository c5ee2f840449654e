#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const SMOKE_CONFIG: &str = "\
[model]
hidden = 32
depth = 1
seq_embed_dim = 8
time_embed_dim = 8
pos_embed_dim = 8

[train]
lr = 1e-3
budget = 1024

[sample]
n_steps = 20

[filter]
min_length = 12
";

pub fn se3fm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_se3fm"))
        .args(args)
        .env("SE3FM_LOG", "warn")
        .output()
        .expect("spawn se3fm")
}

pub fn ok(args: &[&str]) -> Output {
    let out = se3fm(args);
    assert!(
        out.status.success(),
        "se3fm {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// toy corpus, filter, 200 training steps, 8 samples, eval. Returns the eval directory.
pub fn smoke_pipeline(dir: &Path, seed: u64, threads: usize) -> PathBuf {
    let config = dir.join("run.toml");
    std::fs::write(&config, SMOKE_CONFIG).unwrap();
    let seed = seed.to_string();
    let threads = threads.to_string();
    let global = ["--config", p(&config), "--seed", &seed, "--threads", &threads];
    let with = |rest: &[&str]| {
        let mut v: Vec<&str> = global.to_vec();
        v.extend_from_slice(rest);
        ok(&v);
    };
    let corpus = dir.join("corpus");
    let filtered = dir.join("filtered");
    let trained = dir.join("train");
    let samples = dir.join("samples");
    let eval = dir.join("eval");
    with(&[
        "toy-corpus",
        "--out",
        p(&corpus),
        "--kinds",
        "helix:8,hairpin:8",
        "--synthetic-fraction",
        "0.5",
        "--propensity",
    ]);
    with(&[
        "filter",
        "--manifest",
        p(&corpus.join("manifest.tsv")),
        "--out",
        p(&filtered),
    ]);
    let manifest = filtered.join("manifest.tsv");
    with(&[
        "train",
        "--manifest",
        p(&manifest),
        "--out",
        p(&trained),
        "--steps",
        "200",
    ]);
    with(&[
        "sample",
        "--checkpoint",
        p(&trained.join("checkpoint.bin")),
        "--out",
        p(&samples),
        "--length",
        "16",
        "--n-samples",
        "8",
    ]);
    with(&[
        "eval",
        "--samples",
        p(&samples),
        "--out",
        p(&eval),
        "--reference",
        p(&manifest),
    ]);
    eval
}
