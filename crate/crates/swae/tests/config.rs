mod support;

use std::path::Path;

use swae::config::{DataKind, RunConfig};
use swae::Error;

fn line_of(text: &str) -> usize {
    match RunConfig::parse(text, "run.toml") {
        Err(Error::Config { line, .. }) => line,
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn minimal_config_uses_defaults() {
    let cfg = RunConfig::parse("data.kind = \"ring\"\ndata.n_train = 10\ndata.n_val = 5\ndata.n_test = 5\ntrain.batch_size = 4\n", "x").unwrap();
    assert_eq!(cfg.data.kind, DataKind::Ring);
    let t = cfg.train_config();
    assert_eq!((t.lambda, t.k, t.lr, t.beta1, t.beta2), (0.001, 2, 1e-4, 0.5, 0.999));
    assert_eq!(cfg.priors().len(), 2);
}

#[test]
fn tables_and_dotted_keys_agree() {
    let dotted = support::ring_config(Path::new("o"), "");
    let mut sections: Vec<(String, String)> = Vec::new();
    for l in dotted.lines() {
        let (k, v) = l.split_once(" = ").unwrap();
        let (section, key) = k.split_once('.').unwrap();
        match sections.iter_mut().find(|(s, _)| s == section) {
            Some((_, body)) => body.push_str(&format!("{key} = {v}\n")),
            None => sections.push((section.into(), format!("{key} = {v}\n"))),
        }
    }
    let tables: String = sections.iter().map(|(s, b)| format!("[{s}]\n{b}")).collect();
    assert_eq!(RunConfig::parse(&dotted, "a").unwrap(), RunConfig::parse(&tables, "b").unwrap());
}

#[test]
fn errors_point_at_the_offending_line() {
    let base = support::ring_config(Path::new("o"), "");
    let n = base.lines().count();
    assert_eq!(line_of(&format!("{base}train.lamda = 0.1\n")), n + 1);
    assert_eq!(line_of(&format!("{base}train.k = \"two\"\n")), n + 1);
    assert_eq!(line_of(&base.replace("train.lr = 0.001", "train.lr = -1.0")), 13);
    assert_eq!(line_of(&base.replace("data.n_val = 16", "data.n_val = 0")), 4);
    assert_eq!(line_of(&format!("{base}model.heads = [\"gaussian\", \"laplace\"]\n")), n + 1);
    assert_eq!(line_of(&format!("{base}train.stage2_recon_source = \"nowhere\"\n")), n + 1);
    assert_eq!(line_of(&base.replace("eval.n_samples = 200", "eval.n_samples = 200\neval.icp = \"weird\"")), 16);
    assert_eq!(line_of("[data]\nkind = \"ring\"\nn_train = 8\nn_val = 0\nn_test = 2\n"), 4);
    let msg = RunConfig::parse(&format!("{base}bogus = 1\n"), "run.toml").unwrap_err().to_string();
    assert!(msg.starts_with(&format!("run.toml:{}:", n + 1)), "{msg}");
}

#[test]
fn metadata_round_trips() {
    let cfg = RunConfig::parse(&support::glyph_config(Path::new("dir"), "train.freeze_stage1_after = 3\n"), "x").unwrap();
    assert_eq!(RunConfig::from_meta(&cfg.to_meta()).unwrap(), cfg);
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            RunConfig::load(&path).unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 2);
}
