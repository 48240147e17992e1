//! The interleaved two-stage training loop.
//!
//! Each outer step takes one minibatch `x` and performs, in order: a D1
//! update, an E1/G1 update, then for every head `k` rounds of (D2 update,
//! E2/G2 update), each round on a freshly drawn minibatch and prior sample.
//! After every epoch the validation reconstruction error drives early
//! stopping.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::metrics::mse_metric;
use crate::nn::AdamConfig;
use crate::rng::{purpose, Rng, RngState};
use crate::swae::{ReconSource, SwaeModel};
use crate::tensor::Tensor;

/// Above this weight the adversarial term is known to produce artifacts.
pub const LAMBDA_WARNING_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Stage-II rounds per outer step.
    pub k: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub max_epochs: u64,
    /// Hard cap on outer steps, if any.
    pub max_steps: Option<u64>,
    pub early_stop_patience: u64,
    pub seed: u64,
    pub stage2_recon_source: ReconSource,
    /// Stage-I networks stop updating from this epoch on.
    pub freeze_stage1_after: Option<u64>,
    /// Log a [`TrainRecord`] every this many outer steps.
    pub eval_every: u64,
    /// Multiply the stage-I reconstruction term by `lambda` too.
    pub scale_recon_by_lambda: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.001,
            k: 2,
            batch_size: 64,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            max_epochs: 50,
            max_steps: None,
            early_stop_patience: 5,
            seed: 0,
            stage2_recon_source: ReconSource::Encoder,
            freeze_stage1_after: None,
            eval_every: 50,
            scale_recon_by_lambda: false,
        }
    }
}

impl TrainConfig {
    /// Rejects invalid settings; returns advisory warnings otherwise.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad(format!("lambda must be a finite value >= 0, got {}", self.lambda));
        }
        if self.k < 1 {
            return bad("k must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if self.early_stop_patience < 1 {
            return bad("early_stop_patience must be >= 1".into());
        }
        if self.eval_every < 1 {
            return bad("eval_every must be >= 1".into());
        }
        let mut warnings = Vec::new();
        if self.lambda >= LAMBDA_WARNING_THRESHOLD {
            warnings.push(format!(
                "lambda = {} >= {LAMBDA_WARNING_THRESHOLD}: strong adversarial weight tends to \
                 produce visible artifacts in generated samples",
                self.lambda
            ));
        }
        Ok(warnings)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpdateEvent {
    D1,
    E1G1,
    D2(usize),
    E2G2(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub epoch: u64,
    pub stage1_recon: f64,
    pub stage1_d: f64,
    pub stage2_recon: Vec<f64>,
    pub stage2_d: Vec<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Outer steps completed when the epoch ended.
    pub step: u64,
    pub val_mse: f64,
    /// Mean stage-I reconstruction MSE over the epoch's training batches.
    pub train_recon: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub epochs: Vec<EpochRecord>,
}

/// Counters and early-stopping state; everything needed, together with the
/// model and RNG positions, to continue a run exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub epoch: u64,
    /// Minibatches of the current epoch already consumed.
    pub batch_in_epoch: u64,
    pub step: u64,
    pub best_val_mse: f64,
    pub epochs_since_best: u64,
    pub stopped: bool,
    pub epoch_recon_sum: f64,
    pub epoch_recon_count: u64,
}

impl Default for TrainState {
    fn default() -> Self {
        TrainState {
            epoch: 0,
            batch_in_epoch: 0,
            step: 0,
            best_val_mse: f64::INFINITY,
            epochs_since_best: 0,
            stopped: false,
            epoch_recon_sum: 0.0,
            epoch_recon_count: 0,
        }
    }
}

/// Serializable snapshot of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: SwaeModel,
    pub state: TrainState,
    /// Per head: prior stream, then inner-minibatch stream.
    pub rngs: Vec<(RngState, RngState)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxEpochs,
    MaxSteps,
    EarlyStopped,
}

/// Observation points of a run. All methods default to no-ops.
pub trait TrainHooks {
    /// Seconds since some fixed origin; used for [`TrainRecord::wall_time`].
    fn now(&mut self) -> f64 {
        0.0
    }

    fn on_update(&mut self, _step: u64, _event: UpdateEvent) {}

    fn on_record(&mut self, _record: &TrainRecord) {}

    fn on_epoch_end(&mut self, _trainer: &Trainer, _record: &EpochRecord) -> Result<()> {
        Ok(())
    }
}

pub struct NoHooks;

impl TrainHooks for NoHooks {}

/// Records every update event in order.
#[derive(Debug, Default, Clone)]
pub struct UpdateRecorder {
    pub events: Vec<(u64, UpdateEvent)>,
}

impl TrainHooks for UpdateRecorder {
    fn on_update(&mut self, step: u64, event: UpdateEvent) {
        self.events.push((step, event));
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UpdateCounts {
    pub d1: u64,
    pub e1g1: u64,
    pub d2: Vec<u64>,
    pub e2g2: Vec<u64>,
}

/// The error of a run that hit a non-finite loss or gradient. The trainer
/// is rolled back to the state before the failing step.
#[derive(Debug, Clone, PartialEq)]
pub struct Diverged {
    pub step: u64,
    pub cause: Error,
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: SwaeModel,
    pub config: TrainConfig,
    pub state: TrainState,
    pub log: TrainLog,
    pub counts: UpdateCounts,
    prior_rngs: Vec<Rng>,
    inner_rngs: Vec<Rng>,
}

impl Trainer {
    /// The optimizer hyperparameters of every network are set from `config`;
    /// moment estimates and step counts are kept.
    pub fn new(mut model: SwaeModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        model.validate()?;
        let adam = config.adam();
        for id in model.net_ids() {
            let a = &mut model.net_mut(id).adam;
            (a.lr, a.beta1, a.beta2, a.eps) = (adam.lr, adam.beta1, adam.beta2, adam.eps);
        }
        let heads = model.heads.len();
        let prior_rngs = (0..heads)
            .map(|h| Rng::derived(config.seed, &[purpose::PRIOR, h as u64]))
            .collect();
        let inner_rngs = (0..heads)
            .map(|h| Rng::derived(config.seed, &[purpose::INNER_BATCH, h as u64]))
            .collect();
        Ok(Trainer {
            counts: UpdateCounts {
                d2: vec![0; heads],
                e2g2: vec![0; heads],
                ..UpdateCounts::default()
            },
            model,
            config,
            state: TrainState::default(),
            log: TrainLog::default(),
            prior_rngs,
            inner_rngs,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.rngs.len() != ckpt.model.heads.len() {
            return Err(Error::InvalidArgument(
                "checkpoint RNG count differs from head count".into(),
            ));
        }
        let mut trainer = Trainer::new(ckpt.model, ckpt.config)?;
        trainer.state = ckpt.state;
        trainer.prior_rngs = ckpt.rngs.iter().map(|(p, _)| Rng::from_state(p)).collect();
        trainer.inner_rngs = ckpt.rngs.iter().map(|(_, i)| Rng::from_state(i)).collect();
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            state: self.state.clone(),
            rngs: self
                .prior_rngs
                .iter()
                .zip(&self.inner_rngs)
                .map(|(p, i)| (p.state(), i.state()))
                .collect(),
        }
    }

    fn stage1_active(&self) -> bool {
        self.config
            .freeze_stage1_after
            .map_or(true, |e| self.state.epoch < e)
    }

    /// One outer step on minibatch `x`.
    pub fn outer_step(
        &mut self,
        x: &Tensor,
        train: &Dataset,
        hooks: &mut dyn TrainHooks,
    ) -> Result<()> {
        let cfg = &self.config;
        let step = self.state.step + 1;
        let record_due = step % cfg.eval_every == 0;
        let h0 = self.model.encode1(x)?;
        let stage1_recon;
        let mut stage1_d = f64::NAN;
        if self.stage1_active() {
            let d = self.model.stage1_d_loss(x, &h0, true)?;
            self.model.apply(&d)?;
            self.counts.d1 += 1;
            hooks.on_update(step, UpdateEvent::D1);
            let eg = self
                .model
                .stage1_eg_loss(x, cfg.lambda, cfg.scale_recon_by_lambda, true)?;
            self.model.apply(&eg)?;
            self.counts.e1g1 += 1;
            hooks.on_update(step, UpdateEvent::E1G1);
            stage1_recon = eg.terms[0];
            stage1_d = d.value;
        } else {
            stage1_recon = mse_metric(x, &self.model.decode1(&h0)?)?;
            if record_due {
                stage1_d = self.model.stage1_d_loss(x, &h0, false)?.value;
            }
        }
        let heads = self.model.heads.len();
        let (mut stage2_recon, mut stage2_d) = (vec![f64::NAN; heads], vec![f64::NAN; heads]);
        for head in 0..heads {
            let prior = self.model.heads[head].prior;
            for _ in 0..cfg.k {
                let xj = train.random_batch(&mut self.inner_rngs[head], cfg.batch_size);
                let h0j = self.model.encode1(&xj)?;
                let z = prior.sample_with(&mut self.prior_rngs[head], cfg.batch_size);
                let d = self.model.stage2_d_loss(head, &h0j, &z, true)?;
                self.model.apply(&d)?;
                self.counts.d2[head] += 1;
                hooks.on_update(step, UpdateEvent::D2(head));
                let eg = self.model.stage2_eg_loss(
                    head,
                    &h0j,
                    cfg.stage2_recon_source,
                    Some(&z),
                    true,
                )?;
                self.model.apply(&eg)?;
                self.counts.e2g2[head] += 1;
                hooks.on_update(step, UpdateEvent::E2G2(head));
                stage2_recon[head] = eg.terms[0];
                stage2_d[head] = d.value;
            }
        }
        self.state.step = step;
        self.state.batch_in_epoch += 1;
        self.state.epoch_recon_sum += stage1_recon;
        self.state.epoch_recon_count += 1;
        if record_due {
            let record = TrainRecord {
                step,
                epoch: self.state.epoch,
                stage1_recon,
                stage1_d,
                stage2_recon,
                stage2_d,
                wall_time: hooks.now(),
            };
            hooks.on_record(&record);
            self.log.records.push(record);
        }
        Ok(())
    }

    /// Runs until `max_epochs`, `max_steps` or early stopping. On a
    /// non-finite loss or gradient the trainer is restored to its state
    /// before the failing step and the error is returned.
    pub fn run(
        &mut self,
        train: &Dataset,
        val: &Dataset,
        hooks: &mut dyn TrainHooks,
    ) -> core::result::Result<StopReason, RunError> {
        if train.is_empty() || val.is_empty() {
            return Err(RunError::Invalid(Error::EmptyDataset));
        }
        if train.dim() != self.model.data_dim() || val.dim() != self.model.data_dim() {
            return Err(RunError::Invalid(Error::ShapeMismatch {
                op: "train",
                shapes: vec![vec![train.dim()], vec![self.model.data_dim()]],
            }));
        }
        if self.state.stopped {
            return Ok(StopReason::EarlyStopped);
        }
        while self.state.epoch < self.config.max_epochs {
            let mut epoch_batches = batches(
                train,
                self.config.batch_size,
                self.config.seed,
                self.state.epoch,
            )
            .map_err(RunError::Invalid)?;
            if self.state.batch_in_epoch > 0 {
                epoch_batches.nth(self.state.batch_in_epoch as usize - 1);
            }
            for x in epoch_batches {
                if self.config.max_steps.is_some_and(|m| self.state.step >= m) {
                    return Ok(StopReason::MaxSteps);
                }
                let snapshot = (
                    self.model.clone(),
                    self.state.clone(),
                    self.prior_rngs.clone(),
                    self.inner_rngs.clone(),
                    self.counts.clone(),
                );
                if let Err(cause) = self.outer_step(&x, train, hooks) {
                    let step = self.state.step + 1;
                    (
                        self.model,
                        self.state,
                        self.prior_rngs,
                        self.inner_rngs,
                        self.counts,
                    ) = snapshot;
                    return Err(match cause {
                        Error::NonFinite { .. } => RunError::Diverged(Diverged { step, cause }),
                        other => RunError::Invalid(other),
                    });
                }
            }
            let record = self.finish_epoch(val).map_err(RunError::Invalid)?;
            hooks.on_epoch_end(self, &record).map_err(RunError::Invalid)?;
            if self.state.stopped {
                return Ok(StopReason::EarlyStopped);
            }
        }
        Ok(StopReason::MaxEpochs)
    }

    fn finish_epoch(&mut self, val: &Dataset) -> Result<EpochRecord> {
        let val_mse = validate(&self.model, val)?;
        let st = &mut self.state;
        let record = EpochRecord {
            epoch: st.epoch,
            step: st.step,
            val_mse,
            train_recon: if st.epoch_recon_count > 0 {
                st.epoch_recon_sum / st.epoch_recon_count as f64
            } else {
                f64::NAN
            },
        };
        if val_mse < st.best_val_mse {
            st.best_val_mse = val_mse;
            st.epochs_since_best = 0;
        } else {
            st.epochs_since_best += 1;
        }
        if st.epochs_since_best >= self.config.early_stop_patience {
            st.stopped = true;
        }
        st.epoch += 1;
        st.batch_in_epoch = 0;
        st.epoch_recon_sum = 0.0;
        st.epoch_recon_count = 0;
        self.log.epochs.push(record.clone());
        Ok(record)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunError {
    /// Bad inputs or configuration; nothing was trained.
    Invalid(Error),
    Diverged(Diverged),
}

impl core::fmt::Display for RunError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RunError::Invalid(e) => write!(f, "{e}"),
            RunError::Diverged(d) => write!(f, "training diverged at step {}: {}", d.step, d.cause),
        }
    }
}

impl core::error::Error for RunError {}

/// Trains a fresh run to completion.
pub fn train(
    model: SwaeModel,
    train_set: &Dataset,
    val_set: &Dataset,
    config: TrainConfig,
) -> core::result::Result<(SwaeModel, TrainLog), RunError> {
    let mut trainer = Trainer::new(model, config).map_err(RunError::Invalid)?;
    trainer.run(train_set, val_set, &mut NoHooks)?;
    Ok((trainer.model, trainer.log))
}

/// Mean squared reconstruction error `G1(E1(x))` over a dataset.
pub fn validate(model: &SwaeModel, val: &Dataset) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    mse_metric(&val.samples, &model.reconstruct(&val.samples)?)
}
