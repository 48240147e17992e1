//! The work behind each subcommand, callable without a process boundary.

use std::path::{Path, PathBuf};
use std::time::Instant;

use swae_core::data::{Dataset, Split};
use swae_core::latent::{attribute_direction, interpolate_decoded, interpolate_z, manipulate, AttributeDirection};
use swae_core::metrics::{train_toy_classifier, ToyClassifier};
use swae_core::rng::derive_seed;
use swae_core::train::{EpochRecord, RunError, StopReason, TrainHooks};
use swae_core::{SwaeModel, Tensor, Trainer};

use crate::checkpoint::{load_checkpoint, load_classifier, save_checkpoint, save_classifier, SavedRun};
use crate::config::{DataKind, RunConfig};
use crate::dataset_io::{load_dataset, save_dataset};
use crate::error::Error;
use crate::eval::{evaluate_model, thread_cap, IcpMode, Scorer};
use crate::output::{
    direction_csv, epoch_log_csv, grid_columns, metrics_csv, scatter_csv, timing_csv, train_log_csv,
    write_glyph_grid, write_text, MetricsRow,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.swae";
pub const LAST_GOOD_FILE: &str = "last_good.swae";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TIMING_FILE: &str = "train_timing.csv";
pub const EPOCH_LOG_FILE: &str = "epoch_log.csv";
pub const SAMPLES_DIR: &str = "samples";

/// Default `--lambda-h` sweep.
pub const DEFAULT_LAMBDA_H: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

#[derive(Debug)]
pub enum CommandError {
    /// Bad invocation: unknown head or attribute, missing classifier,
    /// invalid configuration.
    Usage(String),
    Failed(Error),
    /// Training hit a non-finite value; the rolled-back state was saved.
    Diverged { message: String, last_good: PathBuf },
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) | CommandError::Failed(Error::Config { .. }) => 2,
            CommandError::Failed(_) => 1,
            CommandError::Diverged { .. } => 3,
        }
    }
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CommandError::Usage(m) => write!(f, "{m}"),
            CommandError::Failed(e) => write!(f, "{e}"),
            CommandError::Diverged { message, last_good } => {
                write!(f, "{message}; last good checkpoint: {}", last_good.display())
            }
        }
    }
}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        CommandError::Failed(e)
    }
}

impl From<swae_core::Error> for CommandError {
    fn from(e: swae_core::Error) -> Self {
        CommandError::Failed(e.into())
    }
}

pub type CmdResult<T> = std::result::Result<T, CommandError>;

/// A checkpoint together with the run configuration stored in it.
pub struct LoadedRun {
    pub saved: SavedRun,
    pub config: RunConfig,
}

impl LoadedRun {
    pub fn load(path: &Path) -> CmdResult<Self> {
        let saved = load_checkpoint(path)?;
        let config = RunConfig::from_meta(&saved.meta)?;
        Ok(LoadedRun { saved, config })
    }

    pub fn model(&self) -> &SwaeModel {
        &self.saved.checkpoint.model
    }

    fn check_head(&self, head: usize) -> CmdResult<()> {
        let heads = self.model().heads.len();
        if head >= heads {
            return Err(CommandError::Usage(format!(
                "head {head} does not exist (checkpoint has {heads} head{})",
                if heads == 1 { "" } else { "s" }
            )));
        }
        Ok(())
    }

    /// `--data` if given, else the split regenerated from the run config.
    fn dataset(&self, data: Option<&Path>, split: Split) -> CmdResult<Dataset> {
        let ds = match data {
            Some(p) => load_dataset(p, split)?,
            None => self.config.dataset(split)?,
        };
        if ds.dim() != self.model().data_dim() {
            return Err(CommandError::Usage(format!(
                "dataset has {} columns, model expects {}",
                ds.dim(),
                self.model().data_dim()
            )));
        }
        Ok(ds)
    }

    fn is_glyphs(&self) -> bool {
        self.config.data.kind == DataKind::Glyphs
    }
}

/// Glyph grid with `cols` columns, or a scatter CSV of labelled point sets.
fn write_points(run: &LoadedRun, out: &Path, sets: &[(String, Tensor)], cols: usize) -> CmdResult<()> {
    if run.is_glyphs() {
        let parts: Vec<&Tensor> = sets.iter().map(|(_, t)| t).collect();
        write_glyph_grid(out, &Tensor::vstack(&parts)?, cols)?;
    } else {
        let refs: Vec<(&str, &Tensor)> = sets.iter().map(|(s, t)| (s.as_str(), t)).collect();
        write_text(out, &scatter_csv(&refs))?;
    }
    Ok(())
}

fn create_dir(path: &Path) -> CmdResult<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e).into())
}

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub steps: Option<u64>,
    /// Continue from this checkpoint.
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub stop: StopReason,
    pub steps: u64,
    pub epochs: u64,
    pub warnings: Vec<String>,
}

/// Logs written by an earlier process of a resumed run: rows up to the
/// resume point are kept, newer ones are replaced.
#[derive(Default)]
struct PriorLogs {
    train: Vec<String>,
    timing: Vec<String>,
    epochs: Vec<String>,
}

fn read_rows(path: &Path, keep: impl Fn(u64) -> bool) -> Vec<String> {
    let Ok(text) = std::fs::read_to_string(path) else { return Vec::new() };
    text.lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|f| f.parse().ok()).is_some_and(&keep))
        .map(|l| format!("{l}\n"))
        .collect()
}

fn with_prior(prior: &[String], fresh: String) -> String {
    let (header, body) = fresh.split_once('\n').unwrap_or((&fresh, ""));
    let mut out = format!("{header}\n");
    prior.iter().for_each(|l| out.push_str(l));
    out.push_str(body);
    out
}

struct RunHooks<'a> {
    start: Instant,
    run: &'a RunConfig,
    meta: Vec<(String, String)>,
    out_dir: &'a Path,
    prior: PriorLogs,
}

impl RunHooks<'_> {
    fn write_logs(&self, trainer: &Trainer) -> swae_core::Result<()> {
        let heads = trainer.model.heads.len();
        let files = [
            (TRAIN_LOG_FILE, with_prior(&self.prior.train, train_log_csv(&trainer.log.records, heads))),
            (TIMING_FILE, with_prior(&self.prior.timing, timing_csv(&trainer.log.records))),
            (EPOCH_LOG_FILE, with_prior(&self.prior.epochs, epoch_log_csv(&trainer.log.epochs))),
        ];
        for (name, text) in files {
            write_text(&self.out_dir.join(name), &text).map_err(io_to_core)?;
        }
        Ok(())
    }

    fn save(&self, trainer: &Trainer, name: &str) -> Result<PathBuf, Error> {
        let path = self.out_dir.join(name);
        let saved = SavedRun { checkpoint: trainer.checkpoint(), meta: self.meta.clone() };
        save_checkpoint(&saved, &path)?;
        Ok(path)
    }

    fn write_samples(&self, trainer: &Trainer, epoch: u64) -> Result<(), Error> {
        let o = &self.run.output;
        if o.samples_every == 0 || (epoch + 1) % o.samples_every != 0 {
            return Ok(());
        }
        let dir = self.out_dir.join(SAMPLES_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let seed = derive_seed(trainer.config.seed, &[swae_core::rng::purpose::SAMPLE]);
        for h in 0..trainer.model.heads.len() {
            let x = trainer.model.sample(h, o.grid_samples, seed)?;
            let stem = format!("epoch{:04}_head{h}", epoch + 1);
            match self.run.data.kind {
                DataKind::Glyphs => write_glyph_grid(&dir.join(format!("{stem}.pgm")), &x, grid_columns(x.rows()))?,
                DataKind::Ring => write_text(&dir.join(format!("{stem}.csv")), &scatter_csv(&[("sample", &x)]))?,
            }
        }
        Ok(())
    }
}

fn io_to_core(e: Error) -> swae_core::Error {
    match e {
        Error::Core(c) => c,
        other => swae_core::Error::InvalidArgument(other.to_string()),
    }
}

impl TrainHooks for RunHooks<'_> {
    fn now(&mut self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn on_epoch_end(&mut self, trainer: &Trainer, record: &EpochRecord) -> swae_core::Result<()> {
        self.save(trainer, CHECKPOINT_FILE).map_err(io_to_core)?;
        self.write_logs(trainer)?;
        self.write_samples(trainer, record.epoch).map_err(io_to_core)
    }
}

pub fn cmd_train(args: &TrainArgs) -> CmdResult<TrainOutcome> {
    let mut run = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        run.train.seed = seed;
    }
    if let Some(steps) = args.steps {
        run.train.max_steps = Some(steps);
    }
    let out_dir = args.out.clone().unwrap_or_else(|| PathBuf::from(&run.output.dir));
    let train_cfg = run.train_config();
    let warnings = train_cfg.validate().map_err(|e| CommandError::Usage(e.to_string()))?;
    let (mut trainer, prior) = match &args.resume {
        None => {
            let model = SwaeModel::new(&run.architecture(), &run.priors(), &train_cfg.adam(), train_cfg.seed)?;
            (Trainer::new(model, train_cfg)?, PriorLogs::default())
        }
        Some(path) => {
            let loaded = LoadedRun::load(path)?;
            if loaded.config.data != run.data || loaded.config.model != run.model {
                return Err(CommandError::Usage(format!(
                    "{} was trained with different data or model settings than {}",
                    path.display(),
                    args.config.display()
                )));
            }
            let mut trainer = Trainer::from_checkpoint(loaded.saved.checkpoint)?;
            trainer.config.max_epochs = run.train.max_epochs;
            trainer.config.max_steps = run.train.max_steps;
            let (step, epoch) = (trainer.state.step, trainer.state.epoch);
            let prior = PriorLogs {
                train: read_rows(&out_dir.join(TRAIN_LOG_FILE), |s| s <= step),
                timing: read_rows(&out_dir.join(TIMING_FILE), |s| s <= step),
                epochs: read_rows(&out_dir.join(EPOCH_LOG_FILE), |e| e < epoch),
            };
            (trainer, prior)
        }
    };
    create_dir(&out_dir)?;
    let train_set = run.dataset(Split::Train)?;
    let val_set = run.dataset(Split::Val)?;
    let mut hooks = RunHooks {
        start: Instant::now(),
        run: &run,
        meta: run.to_meta(),
        out_dir: &out_dir,
        prior,
    };
    let fresh_no_epochs = args.resume.is_none() && trainer.config.max_epochs == 0;
    let stop = match trainer.run(&train_set, &val_set, &mut hooks) {
        Ok(stop) => stop,
        Err(RunError::Invalid(e)) => return Err(e.into()),
        Err(RunError::Diverged(d)) => {
            let last_good = hooks.save(&trainer, LAST_GOOD_FILE)?;
            hooks.write_logs(&trainer)?;
            return Err(CommandError::Diverged {
                message: format!("training diverged at step {}: {}", d.step, d.cause),
                last_good,
            });
        }
    };
    hooks.save(&trainer, CHECKPOINT_FILE)?;
    if !fresh_no_epochs {
        hooks.write_logs(&trainer)?;
    }
    Ok(TrainOutcome {
        out_dir,
        stop,
        steps: trainer.state.step,
        epochs: trainer.state.epoch,
        warnings,
    })
}

pub fn cmd_sample(checkpoint: &Path, head: usize, n: usize, seed: u64, out: &Path) -> CmdResult<()> {
    let run = LoadedRun::load(checkpoint)?;
    run.check_head(head)?;
    let x = run.model().sample(head, n, seed)?;
    write_points(&run, out, &[(format!("head{head}"), x)], grid_columns(n))
}

/// Originals in the first grid row, reconstructions in the second.
pub fn cmd_reconstruct(checkpoint: &Path, data: Option<&Path>, n: usize, out: &Path) -> CmdResult<()> {
    let run = LoadedRun::load(checkpoint)?;
    let x = run.dataset(data, Split::Val)?.head(n);
    let recon = run.model().reconstruct(&x)?;
    let cols = x.rows();
    write_points(&run, out, &[("data".into(), x), ("reconstruction".into(), recon)], cols)
}

pub struct InterpolateArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: Option<&'a Path>,
    pub idx1: usize,
    pub idx2: usize,
    pub steps: usize,
    /// Interpolate in this head's prior space instead of the stage-I code.
    pub head: Option<usize>,
    pub out: &'a Path,
}

pub fn cmd_interpolate(a: &InterpolateArgs<'_>) -> CmdResult<()> {
    let run = LoadedRun::load(a.checkpoint)?;
    let ds = run.dataset(a.data, Split::Val)?;
    for idx in [a.idx1, a.idx2] {
        if idx >= ds.len() {
            return Err(CommandError::Usage(format!("index {idx} out of range for {} rows", ds.len())));
        }
    }
    if a.steps < 2 {
        return Err(CommandError::Usage("--steps must be at least 2".into()));
    }
    let model = run.model();
    let h = model.encode1(&ds.samples.select_rows(&[a.idx1, a.idx2]))?;
    let path = match a.head {
        None => interpolate_decoded(model, h.row(0), h.row(1), a.steps)?,
        Some(head) => {
            run.check_head(head)?;
            let z = model.encode2(head, &h)?;
            interpolate_z(model, head, z.row(0), z.row(1), a.steps)?
        }
    };
    write_points(&run, a.out, &[("interpolation".into(), path)], a.steps)
}

/// Positive/negative split of a dataset for a named attribute.
pub fn attribute_mask(ds: &Dataset, attr: &str) -> CmdResult<Vec<bool>> {
    let factor = |col: usize, pred: fn(f64) -> bool| -> Option<Vec<bool>> {
        ds.factors.as_ref()?;
        (ds.n_factors > col).then(|| (0..ds.len()).map(|i| pred(ds.factor_row(i).unwrap()[col])).collect())
    };
    let mask = match attr {
        "thickness" => factor(1, |v| v >= 2.0),
        "slant" => factor(2, |v| v > 0.0),
        _ => attr
            .strip_prefix("class")
            .or_else(|| attr.strip_prefix("mode"))
            .and_then(|k| k.parse::<usize>().ok())
            .and_then(|k| Some(ds.labels.as_ref()?.iter().map(|&l| l == k).collect())),
    };
    mask.ok_or_else(|| {
        let mut known = Vec::new();
        if ds.factors.is_some() {
            known.extend(["thickness", "slant"]);
        }
        if ds.labels.is_some() {
            known.extend(["class<k>", "mode<k>"]);
        }
        CommandError::Usage(format!("unknown attribute {attr:?}; available: {}", known.join(", ")))
    })
}

pub struct ManipulateArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: Option<&'a Path>,
    pub attr: &'a str,
    pub lambdas: &'a [f64],
    pub n: usize,
    pub out: &'a Path,
}

/// One grid row per input, one column per `lambda_h`. The direction is
/// estimated on the training split and written next to `out`.
pub fn cmd_manipulate(a: &ManipulateArgs<'_>) -> CmdResult<AttributeDirection> {
    let run = LoadedRun::load(a.checkpoint)?;
    if a.lambdas.is_empty() {
        return Err(CommandError::Usage("--lambda-h needs at least one value".into()));
    }
    let model = run.model();
    let train = run.config.dataset(Split::Train)?;
    let mask = attribute_mask(&train, a.attr)?;
    let dir = attribute_direction(&model.encode1(&train.samples)?, &mask, a.attr)
        .map_err(|e| CommandError::Usage(e.to_string()))?;
    let h = model.encode1(&run.dataset(a.data, Split::Val)?.head(a.n))?;
    let mut sets = Vec::new();
    for i in 0..h.rows() {
        for &l in a.lambdas {
            sets.push((format!("lambda={l:?}"), manipulate(model, h.row(i), &dir, l)?));
        }
    }
    write_points(&run, a.out, &sets, a.lambdas.len())?;
    write_text(&a.out.with_extension("direction.csv"), &direction_csv(std::slice::from_ref(&dir)))?;
    Ok(dir)
}

pub struct EvalArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: Option<&'a Path>,
    pub classifier: Option<&'a Path>,
    pub n: Option<usize>,
    pub seed: u64,
    /// A checkpoint trained with `lambda = 0`, reported alongside.
    pub ablation: Option<&'a Path>,
    pub out: &'a Path,
}

pub fn evaluate_run(run: &LoadedRun, a: &EvalArgs<'_>, classifier: Option<&ToyClassifier>) -> CmdResult<Vec<MetricsRow>> {
    let reference = run.dataset(a.data, Split::Test)?;
    let geometry = run.config.ring_geometry();
    let scorer = match (&geometry, classifier) {
        (Some(g), _) => Scorer::Ring(g),
        (None, Some(c)) => Scorer::Glyphs { classifier: c, confidence: run.config.eval.confidence },
        (None, None) => {
            return Err(CommandError::Usage(
                "glyph metrics need the toy classifier: train one with `swae classifier --out classifier.swcl` \
                 and pass --classifier classifier.swcl"
                    .into(),
            ))
        }
    };
    let icp_mode = if run.config.eval.icp == "paired" { IcpMode::Paired } else { IcpMode::Standard };
    let n = a.n.unwrap_or(run.config.eval.n_samples);
    let step = run.saved.checkpoint.state.step;
    Ok(evaluate_model(run.model(), step, &reference, scorer, icp_mode, n, a.seed, thread_cap())?)
}

/// Writes the per-head report to `out` and, with an ablation checkpoint,
/// its rows to `out` with extension `ablation.csv`.
pub fn cmd_eval(a: &EvalArgs<'_>) -> CmdResult<Vec<MetricsRow>> {
    let run = LoadedRun::load(a.checkpoint)?;
    let clf_path = a.classifier.map(Path::to_path_buf).or_else(|| run.config.eval.classifier.as_ref().map(PathBuf::from));
    let classifier = match (&clf_path, run.is_glyphs()) {
        (Some(p), true) => Some(load_classifier(p)?),
        _ => None,
    };
    let rows = evaluate_run(&run, a, classifier.as_ref())?;
    write_text(a.out, &metrics_csv(&rows))?;
    if let Some(path) = a.ablation {
        let ablated = LoadedRun::load(path)?;
        let rows = evaluate_run(&ablated, a, classifier.as_ref())?;
        write_text(&a.out.with_extension("ablation.csv"), &metrics_csv(&rows))?;
    }
    Ok(rows)
}

/// Trains the glyph classifier used by glyph metrics.
pub fn cmd_classifier(n: usize, seed: u64, out: &Path) -> CmdResult<f64> {
    let data = swae_core::data::gen_glyphs(n, seed)?;
    let clf = train_toy_classifier(&data, seed)?;
    let acc = clf.accuracy(&data)?;
    save_classifier(&clf, out)?;
    Ok(acc)
}

/// Exports one split of a config's corpus.
pub fn cmd_data(config: &Path, split: Split, out: &Path) -> CmdResult<usize> {
    let run = RunConfig::load(config)?;
    let ds = run.dataset(split)?;
    save_dataset(&ds, out)?;
    Ok(ds.len())
}
