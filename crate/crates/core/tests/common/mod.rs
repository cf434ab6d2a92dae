#![allow(dead_code)]

pub mod gradcheck;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const TINY_CONFIG: &str = r#"
version = 1
seed = 5

[data]
dataset = "data"
dev_split = "dev"

[sim]
feature_dim = 4
vocab_size = 6
tokens_min = 1
tokens_max = 3
speakers = 4
extra_distractors = 2
min_signature_distance = 0.3

[[splits]]
name = "train"
mixtures = [4, 4]
mode = "train"
profile_utterances = 2
inventory_min = 2
inventory_max = 3

[[splits]]
name = "dev"
mixtures = [2, 2]
mode = "eval"
profile_utterances = 2
inventory_min = 2
inventory_max = 2

[[splits]]
name = "test"
mixtures = [3, 3]
mode = "eval"
profile_utterances = 2
inventory_min = 3
inventory_max = 3

[model]
feature_dim = 4
encoder_layers = 1
encoder_hidden = 3
decoder_hidden = 6
speaker_encoder_hidden = 2
speaker_embed_dim = 4
query_rnn_dim = 4
embed_dim = 3
attention_dim = 3
attention_conv_channels = 2
attention_conv_width = 3
vocab_size = 6

[train]
steps = 6
batch_size = 2
learning_rate = 0.01
checkpoint_every = 3

[beam]
width = 2
"#;

/// Writes the tiny config into `dir` with `edit` applied to its text.
pub fn write_config(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, edit(TINY_CONFIG.to_owned())).unwrap();
    path
}

pub fn sasr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sasr")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

pub fn sasr_ok(args: &[&str]) -> Output {
    let out = sasr(args);
    assert!(out.status.success(), "sasr {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Relative path to file bytes for everything under `root`.
pub fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Runs simulate into `dir/data` with the config at `cfg`.
pub fn simulate(cfg: &Path, dir: &Path) -> PathBuf {
    let data = dir.join("data");
    sasr_ok(&["simulate", "--config", path_str(cfg), "--out", path_str(&data)]);
    data
}

pub fn checkpoints(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".ckpt"))
        .collect();
    v.sort();
    v
}
