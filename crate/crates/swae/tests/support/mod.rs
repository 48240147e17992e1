#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Small ring run that trains in well under a second.
pub fn ring_config(out: &Path, extra: &str) -> String {
    format!(
        r#"data.kind = "ring"
data.seed = 3
data.n_train = 64
data.n_val = 16
data.n_test = 32
model.latent_dim = 3
model.z_dim = 1
model.stage1_hidden = [8]
model.stage2_hidden = [6]
train.batch_size = 16
train.max_epochs = 2
train.eval_every = 1
train.lr = 0.001
train.seed = 5
eval.n_samples = 200
output.dir = "{}"
output.grid_samples = 16
{extra}"#,
        out.display()
    )
}

pub fn glyph_config(out: &Path, extra: &str) -> String {
    format!(
        r#"data.kind = "glyphs"
data.seed = 4
data.n_train = 64
data.n_val = 16
data.n_test = 32
model.latent_dim = 4
model.z_dim = 2
model.stage1_hidden = [16]
model.stage2_hidden = [6]
train.batch_size = 16
train.max_epochs = 1
train.eval_every = 1
train.lr = 0.001
eval.n_samples = 100
output.dir = "{}"
output.grid_samples = 4
{extra}"#,
        out.display()
    )
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

pub fn swae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swae"))
        .args(args)
        .env("SWAE_THREADS", "2")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = swae(args);
    assert!(
        out.status.success(),
        "swae {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
