//! The stacked model: a stage-I encoder/generator/discriminator triple that
//! maps data to a flexible code `h0`, and any number of stage-II heads, each
//! an encoder/generator/discriminator triple that models `h0` with a latent
//! `z` pushed towards an explicit prior.
//!
//! Every loss is a minimization target. Discriminators emit logits and are
//! trained with stable binary cross-entropy; generators use the
//! non-saturating form `bce(D(fake), 1)`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{mlp_forward, Activation, AdamConfig, MlpSpec, Net, DEFAULT_LEAKY_SLOPE};
use crate::rng::{derive_seed, purpose, Rng};
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PriorFamily {
    /// Standard normal `N(0, I)`.
    Gaussian,
    /// Independent `U(-1, 1)` coordinates.
    Uniform,
}

impl PriorFamily {
    pub fn name(self) -> &'static str {
        match self {
            PriorFamily::Gaussian => "gaussian",
            PriorFamily::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gaussian" | "normal" => Some(PriorFamily::Gaussian),
            "uniform" => Some(PriorFamily::Uniform),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PriorKind {
    pub family: PriorFamily,
    pub dim: usize,
}

impl PriorKind {
    pub fn new(family: PriorFamily, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("prior dimension must be >= 1".into()));
        }
        Ok(PriorKind { family, dim })
    }

    pub fn sample_with(&self, rng: &mut Rng, n: usize) -> Tensor {
        let mut data = vec![0.0; n * self.dim];
        match self.family {
            PriorFamily::Gaussian => rng.fill_normal(&mut data),
            PriorFamily::Uniform => {
                for v in &mut data {
                    *v = rng.uniform_in(-1.0, 1.0);
                }
            }
        }
        Tensor::new(vec![n, self.dim], data).expect("shape matches")
    }
}

/// `n` i.i.d. draws from `prior`, determined by `seed`.
pub fn prior_sample(prior: &PriorKind, n: usize, seed: u64) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::InvalidArgument("prior_sample needs n >= 1".into()));
    }
    Ok(prior.sample_with(&mut Rng::seeded(seed), n))
}

/// Where the stage-II reconstruction draws its code from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ReconSource {
    /// `z = E2(h0)`: reconstruct each code through its own posterior.
    #[default]
    Encoder,
    /// `z ~ P_Z`, paired with `h0` by position.
    Prior,
}

/// Layer widths of the six networks. Hidden lists exclude the input and
/// output widths, which follow from `data_dim`, `latent_dim` and `z_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub data_dim: usize,
    /// Width of the stage-I code `h0`.
    pub latent_dim: usize,
    /// Width of the stage-II code `z`.
    pub z_dim: usize,
    pub stage1_hidden: Vec<usize>,
    pub stage2_hidden: Vec<usize>,
    pub leaky_slope: f64,
}

impl Architecture {
    /// Defaults for 2-D point clouds.
    pub fn points() -> Self {
        Architecture {
            data_dim: 2,
            latent_dim: 8,
            z_dim: 4,
            stage1_hidden: vec![128, 128],
            stage2_hidden: vec![64, 64],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Defaults for 8x8 glyphs.
    pub fn glyphs() -> Self {
        Architecture {
            data_dim: 64,
            stage1_hidden: vec![256, 256],
            ..Architecture::points()
        }
    }

    fn spec(&self, input: usize, hidden: &[usize], output: usize, out_act: Activation) -> Result<MlpSpec> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        MlpSpec::new(widths, Activation::LeakyRelu(self.leaky_slope), out_act)
    }

    pub fn e1(&self) -> Result<MlpSpec> {
        self.spec(self.data_dim, &self.stage1_hidden, self.latent_dim, Activation::Identity)
    }

    pub fn g1(&self) -> Result<MlpSpec> {
        self.spec(self.latent_dim, &self.stage1_hidden, self.data_dim, Activation::Tanh)
    }

    pub fn d1(&self) -> Result<MlpSpec> {
        self.spec(self.data_dim, &self.stage1_hidden, 1, Activation::Identity)
    }

    pub fn e2(&self) -> Result<MlpSpec> {
        self.spec(self.latent_dim, &self.stage2_hidden, self.z_dim, Activation::Identity)
    }

    pub fn g2(&self) -> Result<MlpSpec> {
        self.spec(self.z_dim, &self.stage2_hidden, self.latent_dim, Activation::Identity)
    }

    pub fn d2(&self) -> Result<MlpSpec> {
        self.spec(self.z_dim, &self.stage2_hidden, 1, Activation::Identity)
    }
}

/// Identifies one of the networks of a [`SwaeModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NetId {
    E1,
    G1,
    D1,
    E2(usize),
    G2(usize),
    D2(usize),
}

impl NetId {
    pub fn name(self) -> String {
        match self {
            NetId::E1 => "e1".into(),
            NetId::G1 => "g1".into(),
            NetId::D1 => "d1".into(),
            NetId::E2(h) => format!("head{h}.e2"),
            NetId::G2(h) => format!("head{h}.g2"),
            NetId::D2(h) => format!("head{h}.d2"),
        }
    }

    fn init_tag(self) -> u64 {
        match self {
            NetId::E1 => 1,
            NetId::G1 => 2,
            NetId::D1 => 3,
            NetId::E2(h) => 100 + 10 * h as u64,
            NetId::G2(h) => 101 + 10 * h as u64,
            NetId::D2(h) => 102 + 10 * h as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub e2: Net,
    pub g2: Net,
    pub d2: Net,
    pub prior: PriorKind,
}

/// A loss value and, when requested, the gradient of every network the
/// loss is allowed to update.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    /// The two summands of the loss: (real, fake) for discriminators,
    /// (reconstruction, adversarial) for encoder/generator pairs.
    pub terms: [f64; 2],
    pub grads: Vec<(NetId, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwaeModel {
    pub e1: Net,
    pub g1: Net,
    pub d1: Net,
    pub heads: Vec<Head>,
}

impl SwaeModel {
    /// Fresh networks, one stage-II head per prior family. Each network's
    /// initialization depends only on `seed` and its own identity.
    pub fn new(
        arch: &Architecture,
        priors: &[PriorFamily],
        adam: &AdamConfig,
        seed: u64,
    ) -> Result<Self> {
        let net = |id: NetId, spec: MlpSpec| {
            Net::new(spec, derive_seed(seed, &[purpose::INIT, id.init_tag()]), adam)
        };
        let heads = priors
            .iter()
            .enumerate()
            .map(|(h, &family)| {
                Ok(Head {
                    e2: net(NetId::E2(h), arch.e2()?),
                    g2: net(NetId::G2(h), arch.g2()?),
                    d2: net(NetId::D2(h), arch.d2()?),
                    prior: PriorKind::new(family, arch.z_dim)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = SwaeModel {
            e1: net(NetId::E1, arch.e1()?),
            g1: net(NetId::G1, arch.g1()?),
            d1: net(NetId::D1, arch.d1()?),
            heads,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks that all networks agree on the data, `h0` and `z` widths.
    pub fn validate(&self) -> Result<()> {
        let data = self.e1.input_width();
        let latent = self.e1.output_width();
        let mut ok = self.g1.input_width() == latent
            && self.g1.output_width() == data
            && self.d1.input_width() == data
            && self.d1.output_width() == 1;
        for head in &self.heads {
            let z = head.prior.dim;
            ok &= head.e2.input_width() == latent
                && head.g2.output_width() == latent
                && head.e2.output_width() == z
                && head.g2.input_width() == z
                && head.d2.input_width() == z
                && head.d2.output_width() == 1;
        }
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "network widths do not chain (data -> h0 -> z)".into(),
            ))
        }
    }

    pub fn data_dim(&self) -> usize {
        self.e1.input_width()
    }

    pub fn latent_dim(&self) -> usize {
        self.e1.output_width()
    }

    pub fn net_ids(&self) -> Vec<NetId> {
        let mut ids = vec![NetId::E1, NetId::G1, NetId::D1];
        for h in 0..self.heads.len() {
            ids.extend([NetId::E2(h), NetId::G2(h), NetId::D2(h)]);
        }
        ids
    }

    pub fn net(&self, id: NetId) -> &Net {
        match id {
            NetId::E1 => &self.e1,
            NetId::G1 => &self.g1,
            NetId::D1 => &self.d1,
            NetId::E2(h) => &self.heads[h].e2,
            NetId::G2(h) => &self.heads[h].g2,
            NetId::D2(h) => &self.heads[h].d2,
        }
    }

    pub fn net_mut(&mut self, id: NetId) -> &mut Net {
        match id {
            NetId::E1 => &mut self.e1,
            NetId::G1 => &mut self.g1,
            NetId::D1 => &mut self.d1,
            NetId::E2(h) => &mut self.heads[h].e2,
            NetId::G2(h) => &mut self.heads[h].g2,
            NetId::D2(h) => &mut self.heads[h].d2,
        }
    }

    pub fn head(&self, index: usize) -> Result<&Head> {
        self.heads.get(index).ok_or(Error::HeadOutOfRange {
            index,
            heads: self.heads.len(),
        })
    }

    /// One Adam step on every network carrying a gradient in `eval`.
    pub fn apply(&mut self, eval: &LossEval) -> Result<()> {
        for (id, grads) in &eval.grads {
            self.net_mut(*id).step(grads)?;
        }
        Ok(())
    }

    fn check_data(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.data_dim() {
            return Err(Error::ShapeMismatch {
                op: "encode1",
                shapes: vec![x.shape().to_vec(), vec![self.data_dim()]],
            });
        }
        Ok(())
    }

    /// `h0 = E1(x)`.
    pub fn encode1(&self, x: &Tensor) -> Result<Tensor> {
        self.check_data(x)?;
        self.e1.forward(x)
    }

    /// `G1(h)`.
    pub fn decode1(&self, h: &Tensor) -> Result<Tensor> {
        self.g1.forward(h)
    }

    /// `G1(E1(x))`.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        self.decode1(&self.encode1(x)?)
    }

    /// `bce(D1(x), 1) + bce(D1(G1(h0)), 0)`; only D1 receives gradients.
    pub fn stage1_d_loss(&self, x: &Tensor, h0: &Tensor, grads: bool) -> Result<LossEval> {
        self.check_data(x)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let hv = tape.constant(h0);
        let (fake, _) = self.g1.record(&mut tape, hv, false)?;
        let d1 = self.d1.params.bind(&mut tape, grads);
        let real_logits = mlp_forward(&mut tape, &self.d1.spec, &d1, xv)?;
        let fake_logits = mlp_forward(&mut tape, &self.d1.spec, &d1, fake)?;
        let real = tape.bce_with_logits(real_logits, 1.0)?;
        let fake = tape.bce_with_logits(fake_logits, 0.0)?;
        let loss = tape.add(real, fake)?;
        finish(&mut tape, loss, [real, fake], grads, vec![(NetId::D1, d1)])
    }

    /// `mse(x, G1(E1(x))) + lambda * bce(D1(G1(E1(x))), 1)`; E1 and G1
    /// receive gradients, D1 is held fixed. With `scale_recon` the
    /// reconstruction term is multiplied by `lambda` as well.
    pub fn stage1_eg_loss(
        &self,
        x: &Tensor,
        lambda: f64,
        scale_recon: bool,
        grads: bool,
    ) -> Result<LossEval> {
        self.check_data(x)?;
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (h0, e1) = self.e1.record(&mut tape, xv, grads)?;
        let (y, g1) = self.g1.record(&mut tape, h0, grads)?;
        let mse = tape.mse_loss(y, xv)?;
        let mut loss = mse;
        if scale_recon {
            loss = tape.scale(loss, lambda)?;
        }
        let mut adv = None;
        if lambda != 0.0 {
            let (logits, _) = self.d1.record(&mut tape, y, false)?;
            let bce = tape.bce_with_logits(logits, 1.0)?;
            let scaled = tape.scale(bce, lambda)?;
            loss = tape.add(loss, scaled)?;
            adv = Some(bce);
        }
        let adv = adv.unwrap_or(mse);
        let mut eval = finish(&mut tape, loss, [mse, adv], grads, vec![(NetId::E1, e1), (NetId::G1, g1)])?;
        if lambda == 0.0 {
            eval.terms[1] = 0.0;
        }
        Ok(eval)
    }

    /// Stage-II reconstruction `mse(h0, G2(z))` with `z = E2(h0)` or, for
    /// [`ReconSource::Prior`], the supplied prior draw.
    pub fn stage2_recon(
        &self,
        head: usize,
        h0: &Tensor,
        source: ReconSource,
        z_prior: Option<&Tensor>,
        grads: bool,
    ) -> Result<LossEval> {
        let hd = self.head(head)?;
        let mut tape = Tape::new();
        let hv = tape.constant(h0);
        let mut bound = Vec::new();
        let z = match source {
            ReconSource::Encoder => {
                let (z, e2) = hd.e2.record(&mut tape, hv, grads)?;
                bound.push((NetId::E2(head), e2));
                z
            }
            ReconSource::Prior => tape.constant(prior_arg(z_prior)?),
        };
        let (rec, g2) = hd.g2.record(&mut tape, z, grads)?;
        bound.push((NetId::G2(head), g2));
        let loss = tape.mse_loss(rec, hv)?;
        let mut eval = finish(&mut tape, loss, [loss, loss], grads, bound)?;
        eval.terms[1] = 0.0;
        Ok(eval)
    }

    /// `bce(D2(z), 1) + bce(D2(E2(h0)), 0)`; only D2 receives gradients.
    pub fn stage2_d_loss(
        &self,
        head: usize,
        h0: &Tensor,
        z_prior: &Tensor,
        grads: bool,
    ) -> Result<LossEval> {
        let hd = self.head(head)?;
        let mut tape = Tape::new();
        let hv = tape.constant(h0);
        let zv = tape.constant(z_prior);
        let (fake, _) = hd.e2.record(&mut tape, hv, false)?;
        let d2 = hd.d2.params.bind(&mut tape, grads);
        let real_logits = mlp_forward(&mut tape, &hd.d2.spec, &d2, zv)?;
        let fake_logits = mlp_forward(&mut tape, &hd.d2.spec, &d2, fake)?;
        let real = tape.bce_with_logits(real_logits, 1.0)?;
        let fake = tape.bce_with_logits(fake_logits, 0.0)?;
        let loss = tape.add(real, fake)?;
        finish(&mut tape, loss, [real, fake], grads, vec![(NetId::D2(head), d2)])
    }

    /// Stage-II reconstruction plus `bce(D2(E2(h0)), 1)`; E2 and G2 receive
    /// gradients, D2 is held fixed.
    pub fn stage2_eg_loss(
        &self,
        head: usize,
        h0: &Tensor,
        source: ReconSource,
        z_prior: Option<&Tensor>,
        grads: bool,
    ) -> Result<LossEval> {
        let hd = self.head(head)?;
        let mut tape = Tape::new();
        let hv = tape.constant(h0);
        let (z_post, e2) = hd.e2.record(&mut tape, hv, grads)?;
        let z_rec = match source {
            ReconSource::Encoder => z_post,
            ReconSource::Prior => tape.constant(prior_arg(z_prior)?),
        };
        let (rec, g2) = hd.g2.record(&mut tape, z_rec, grads)?;
        let recon = tape.mse_loss(rec, hv)?;
        let (logits, _) = hd.d2.record(&mut tape, z_post, false)?;
        let adv = tape.bce_with_logits(logits, 1.0)?;
        let loss = tape.add(recon, adv)?;
        finish(
            &mut tape,
            loss,
            [recon, adv],
            grads,
            vec![(NetId::E2(head), e2), (NetId::G2(head), g2)],
        )
    }

    /// `E2(h0)` for one head.
    pub fn encode2(&self, head: usize, h0: &Tensor) -> Result<Tensor> {
        self.head(head)?.e2.forward(h0)
    }

    /// `G2(z)` for one head.
    pub fn decode2(&self, head: usize, z: &Tensor) -> Result<Tensor> {
        self.head(head)?.g2.forward(z)
    }

    /// `G1(G2(z))` for a given code batch.
    pub fn generate(&self, head: usize, z: &Tensor) -> Result<Tensor> {
        self.decode1(&self.decode2(head, z)?)
    }

    /// `n` samples `G1(G2(z))` with `z` drawn from the head's prior.
    pub fn sample(&self, head: usize, n: usize, seed: u64) -> Result<Tensor> {
        let prior = self.head(head)?.prior;
        let z = prior_sample(&prior, n, derive_seed(seed, &[purpose::SAMPLE, head as u64]))?;
        self.generate(head, &z)
    }
}

fn prior_arg(z: Option<&Tensor>) -> Result<&Tensor> {
    z.ok_or_else(|| Error::InvalidArgument("prior-sourced reconstruction needs z".into()))
}

fn finish(
    tape: &mut Tape,
    loss: crate::tape::Var,
    terms: [crate::tape::Var; 2],
    grads: bool,
    bound: Vec<(NetId, crate::nn::Bound)>,
) -> Result<LossEval> {
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite { context: "loss" });
    }
    let terms = [tape.value(terms[0]).item(), tape.value(terms[1]).item()];
    if !grads {
        return Ok(LossEval {
            value,
            terms,
            grads: Vec::new(),
        });
    }
    tape.backward(loss)?;
    Ok(LossEval {
        value,
        terms,
        grads: bound
            .into_iter()
            .map(|(id, b)| (id, b.grads(tape)))
            .collect(),
    })
}
