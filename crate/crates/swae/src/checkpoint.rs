//! Checkpoint and classifier files.

use std::path::Path;

use swae_core::metrics::{ToyClassifier, CLASSIFIER_VERSION};
use swae_core::nn::{Activation, AdamState, MlpSpec, Net, ParamSet};
use swae_core::rng::RngState;
use swae_core::swae::{Head, NetId, PriorFamily, PriorKind, ReconSource, SwaeModel};
use swae_core::train::TrainState;
use swae_core::{Checkpoint, TrainConfig};

use crate::container::{join, read_file, write_atomic, Container, Reader};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SWAE";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CLASSIFIER_MAGIC: &[u8; 4] = b"SWCL";

const WHAT: &str = "checkpoint";

/// A training checkpoint plus free-form `run.*` metadata (the run
/// configuration that produced it).
#[derive(Debug, Clone, PartialEq)]
pub struct SavedRun {
    pub checkpoint: Checkpoint,
    pub meta: Vec<(String, String)>,
}

fn activation_name(a: Activation) -> String {
    match a {
        Activation::Identity => "identity".into(),
        Activation::Tanh => "tanh".into(),
        Activation::Sigmoid => "sigmoid".into(),
        Activation::LeakyRelu(s) => format!("leaky_relu:{s:?}"),
    }
}

fn parse_activation(s: &str) -> Result<Activation> {
    Ok(match s {
        "identity" => Activation::Identity,
        "tanh" => Activation::Tanh,
        "sigmoid" => Activation::Sigmoid,
        _ => match s.strip_prefix("leaky_relu:").and_then(|v| v.parse().ok()) {
            Some(slope) => Activation::LeakyRelu(slope),
            None => return Err(Error::malformed(WHAT, format!("unknown activation {s:?}"))),
        },
    })
}

pub(crate) fn put_net(c: &mut Container, name: &str, net: &Net) {
    c.put(format!("net.{name}.widths"), join(&net.spec.widths));
    c.put(format!("net.{name}.hidden"), activation_name(net.spec.hidden));
    c.put(format!("net.{name}.output"), activation_name(net.spec.output));
    let a = &net.adam;
    c.put(format!("adam.{name}.t"), a.t);
    c.put(format!("adam.{name}.lr"), format!("{:?}", a.lr));
    c.put(format!("adam.{name}.beta1"), format!("{:?}", a.beta1));
    c.put(format!("adam.{name}.beta2"), format!("{:?}", a.beta2));
    c.put(format!("adam.{name}.eps"), format!("{:?}", a.eps));
    for (i, layer) in net.params.layers.iter().enumerate() {
        c.put_array(format!("{name}.layer{i}.weight"), layer.weight.shape(), layer.weight.data());
        c.put_array(format!("{name}.layer{i}.bias"), layer.bias.shape(), layer.bias.data());
    }
    c.put_array(format!("{name}.adam.m"), &[a.m.len()], &a.m);
    c.put_array(format!("{name}.adam.v"), &[a.v.len()], &a.v);
}

pub(crate) fn get_net(r: &Reader<'_>, name: &str) -> Result<Net> {
    let spec = MlpSpec::new(
        r.list(&format!("net.{name}.widths"))?,
        parse_activation(r.raw(&format!("net.{name}.hidden"))?)?,
        parse_activation(r.raw(&format!("net.{name}.output"))?)?,
    )?;
    let mut params = ParamSet::zeros(&spec);
    for (i, layer) in params.layers.iter_mut().enumerate() {
        let shape = layer.weight.shape().to_vec();
        let w = r.array(&format!("{name}.layer{i}.weight"), &shape)?;
        layer.weight.data_mut().copy_from_slice(w);
        let shape = layer.bias.shape().to_vec();
        let b = r.array(&format!("{name}.layer{i}.bias"), &shape)?;
        layer.bias.data_mut().copy_from_slice(b);
    }
    let n = params.len();
    let adam = AdamState {
        lr: r.get(&format!("adam.{name}.lr"))?,
        beta1: r.get(&format!("adam.{name}.beta1"))?,
        beta2: r.get(&format!("adam.{name}.beta2"))?,
        eps: r.get(&format!("adam.{name}.eps"))?,
        t: r.get(&format!("adam.{name}.t"))?,
        m: r.array(&format!("{name}.adam.m"), &[n])?.to_vec(),
        v: r.array(&format!("{name}.adam.v"), &[n])?.to_vec(),
    };
    Ok(Net { spec, params, adam })
}

fn rng_text(s: &RngState) -> String {
    let seed: String = s.seed.iter().map(|b| format!("{b:02x}")).collect();
    format!("{seed}:{}:{}", s.stream, s.word_pos)
}

fn parse_rng(s: &str) -> Result<RngState> {
    let bad = || Error::malformed(WHAT, format!("rng state {s:?}"));
    let mut parts = s.split(':');
    let (seed_hex, stream, pos) = (
        parts.next().ok_or_else(bad)?,
        parts.next().ok_or_else(bad)?,
        parts.next().ok_or_else(bad)?,
    );
    if seed_hex.len() != 64 || parts.next().is_some() {
        return Err(bad());
    }
    let mut seed = [0u8; 32];
    for (i, b) in seed.iter_mut().enumerate() {
        *b = u8::from_str_radix(&seed_hex[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
    }
    Ok(RngState {
        seed,
        stream: stream.parse().map_err(|_| bad())?,
        word_pos: pos.parse().map_err(|_| bad())?,
    })
}

fn opt_text<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".into(), |x| x.to_string())
}

fn parse_opt<T: std::str::FromStr>(r: &Reader<'_>, key: &str) -> Result<Option<T>> {
    match r.raw(key)? {
        "none" => Ok(None),
        _ => r.get(key).map(Some),
    }
}

pub fn recon_source_name(s: ReconSource) -> &'static str {
    match s {
        ReconSource::Encoder => "encoder",
        ReconSource::Prior => "prior",
    }
}

pub fn parse_recon_source(s: &str) -> Option<ReconSource> {
    match s {
        "encoder" => Some(ReconSource::Encoder),
        "prior" => Some(ReconSource::Prior),
        _ => None,
    }
}

pub fn encode_checkpoint(run: &SavedRun) -> Vec<u8> {
    let ck = &run.checkpoint;
    let mut c = Container::default();
    let cfg = &ck.config;
    c.put("config.lambda", format!("{:?}", cfg.lambda));
    c.put("config.k", cfg.k);
    c.put("config.batch_size", cfg.batch_size);
    c.put("config.lr", format!("{:?}", cfg.lr));
    c.put("config.beta1", format!("{:?}", cfg.beta1));
    c.put("config.beta2", format!("{:?}", cfg.beta2));
    c.put("config.max_epochs", cfg.max_epochs);
    c.put("config.max_steps", opt_text(cfg.max_steps));
    c.put("config.early_stop_patience", cfg.early_stop_patience);
    c.put("config.seed", cfg.seed);
    c.put("config.stage2_recon_source", recon_source_name(cfg.stage2_recon_source));
    c.put("config.freeze_stage1_after", opt_text(cfg.freeze_stage1_after));
    c.put("config.eval_every", cfg.eval_every);
    c.put("config.scale_recon_by_lambda", cfg.scale_recon_by_lambda);
    let st = &ck.state;
    c.put("state.epoch", st.epoch);
    c.put("state.batch_in_epoch", st.batch_in_epoch);
    c.put("state.step", st.step);
    c.put("state.best_val_mse", format!("{:?}", st.best_val_mse));
    c.put("state.epochs_since_best", st.epochs_since_best);
    c.put("state.stopped", st.stopped);
    c.put("state.epoch_recon_sum", format!("{:?}", st.epoch_recon_sum));
    c.put("state.epoch_recon_count", st.epoch_recon_count);
    c.put("model.heads", ck.model.heads.len());
    for (h, head) in ck.model.heads.iter().enumerate() {
        c.put(format!("head{h}.prior"), head.prior.family.name());
        c.put(format!("head{h}.z_dim"), head.prior.dim);
    }
    for (h, (prior, inner)) in ck.rngs.iter().enumerate() {
        c.put(format!("rng.head{h}.prior"), rng_text(prior));
        c.put(format!("rng.head{h}.inner"), rng_text(inner));
    }
    for (k, v) in &run.meta {
        c.put(format!("run.{k}"), v);
    }
    for id in ck.model.net_ids() {
        put_net(&mut c, &id.name(), ck.model.net(id));
    }
    c.encode(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<SavedRun> {
    let c = Container::decode(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, WHAT)?;
    let r = c.reader(WHAT);
    let config = TrainConfig {
        lambda: r.get("config.lambda")?,
        k: r.get("config.k")?,
        batch_size: r.get("config.batch_size")?,
        lr: r.get("config.lr")?,
        beta1: r.get("config.beta1")?,
        beta2: r.get("config.beta2")?,
        max_epochs: r.get("config.max_epochs")?,
        max_steps: parse_opt(&r, "config.max_steps")?,
        early_stop_patience: r.get("config.early_stop_patience")?,
        seed: r.get("config.seed")?,
        stage2_recon_source: parse_recon_source(r.raw("config.stage2_recon_source")?)
            .ok_or_else(|| Error::malformed(WHAT, "config.stage2_recon_source"))?,
        freeze_stage1_after: parse_opt(&r, "config.freeze_stage1_after")?,
        eval_every: r.get("config.eval_every")?,
        scale_recon_by_lambda: r.get("config.scale_recon_by_lambda")?,
    };
    let state = TrainState {
        epoch: r.get("state.epoch")?,
        batch_in_epoch: r.get("state.batch_in_epoch")?,
        step: r.get("state.step")?,
        best_val_mse: r.get("state.best_val_mse")?,
        epochs_since_best: r.get("state.epochs_since_best")?,
        stopped: r.get("state.stopped")?,
        epoch_recon_sum: r.get("state.epoch_recon_sum")?,
        epoch_recon_count: r.get("state.epoch_recon_count")?,
    };
    let n_heads: usize = r.get("model.heads")?;
    let mut heads = Vec::with_capacity(n_heads);
    let mut rngs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let family = PriorFamily::parse(r.raw(&format!("head{h}.prior"))?)
            .ok_or_else(|| Error::malformed(WHAT, format!("head{h}.prior")))?;
        heads.push(Head {
            e2: get_net(&r, &NetId::E2(h).name())?,
            g2: get_net(&r, &NetId::G2(h).name())?,
            d2: get_net(&r, &NetId::D2(h).name())?,
            prior: PriorKind::new(family, r.get(&format!("head{h}.z_dim"))?)?,
        });
        rngs.push((
            parse_rng(r.raw(&format!("rng.head{h}.prior"))?)?,
            parse_rng(r.raw(&format!("rng.head{h}.inner"))?)?,
        ));
    }
    let model = SwaeModel {
        e1: get_net(&r, "e1")?,
        g1: get_net(&r, "g1")?,
        d1: get_net(&r, "d1")?,
        heads,
    };
    model.validate()?;
    let meta = c
        .entries
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("run.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok(SavedRun {
        checkpoint: Checkpoint {
            config,
            model,
            state,
            rngs,
        },
        meta,
    })
}

pub fn save_checkpoint(run: &SavedRun, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(run))
}

pub fn load_checkpoint(path: &Path) -> Result<SavedRun> {
    decode_checkpoint(&read_file(path)?)
}

pub fn encode_classifier(clf: &ToyClassifier) -> Vec<u8> {
    let mut c = Container::default();
    put_net(&mut c, "classifier", &clf.net);
    c.encode(CLASSIFIER_MAGIC, CLASSIFIER_VERSION)
}

pub fn decode_classifier(bytes: &[u8]) -> Result<ToyClassifier> {
    let c = Container::decode(bytes, CLASSIFIER_MAGIC, CLASSIFIER_VERSION, "classifier")?;
    Ok(ToyClassifier {
        net: get_net(&c.reader("classifier"), "classifier")?,
    })
}

pub fn save_classifier(clf: &ToyClassifier, path: &Path) -> Result<()> {
    write_atomic(path, &encode_classifier(clf))
}

pub fn load_classifier(path: &Path) -> Result<ToyClassifier> {
    decode_classifier(&read_file(path)?)
}
