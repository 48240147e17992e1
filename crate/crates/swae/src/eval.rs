//! Per-head metric reports.

use swae_core::data::{Dataset, RingGeometry};
use swae_core::metrics::{class_coverage, fid, icp, icp_paired, mode_coverage, FeatureMoments, ToyClassifier};
use swae_core::tape::log_sum_exp;
use swae_core::train::validate;
use swae_core::{SwaeModel, Tensor};

use crate::error::Result;
use crate::output::MetricsRow;

/// How generated samples are scored.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    /// 2-D mixtures: raw coordinates as features and exact mixture
    /// posteriors as class probabilities.
    Ring(&'a RingGeometry),
    /// Glyphs: the classifier's penultimate features and softmax outputs.
    Glyphs { classifier: &'a ToyClassifier, confidence: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IcpMode {
    Standard,
    Paired,
}

/// Posterior over mixture components for equal-weight isotropic modes.
pub fn ring_posteriors(points: &Tensor, g: &RingGeometry) -> Result<Tensor> {
    let k = g.centers.len();
    let mut out = Vec::with_capacity(points.rows() * k);
    let mut logits = vec![0.0; k];
    for i in 0..points.rows() {
        let p = points.row(i);
        for (l, c) in logits.iter_mut().zip(&g.centers) {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            *l = -d2 / (2.0 * g.sigma * g.sigma);
        }
        let lse = log_sum_exp(&logits);
        out.extend(logits.iter().map(|l| (l - lse).exp()));
    }
    Ok(Tensor::new(vec![points.rows(), k], out)?)
}

impl Scorer<'_> {
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Scorer::Ring(_) => Ok(x.clone()),
            Scorer::Glyphs { classifier, .. } => Ok(classifier.features(x)?),
        }
    }

    pub fn probs(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Scorer::Ring(g) => ring_posteriors(x, g),
            Scorer::Glyphs { classifier, .. } => Ok(classifier.probs(x)?),
        }
    }

    pub fn coverage(&self, x: &Tensor, probs: &Tensor) -> Result<(usize, f64)> {
        match self {
            Scorer::Ring(g) => Ok(mode_coverage(x, &g.centers, g.sigma)?),
            Scorer::Glyphs { confidence, .. } => Ok(class_coverage(probs, *confidence)?),
        }
    }
}

/// Scores one head: reconstruction MSE on `reference`, and FID, ICP and
/// coverage of `n` generated samples against `reference`.
pub fn evaluate_head(
    model: &SwaeModel,
    head: usize,
    step: u64,
    reference: &Dataset,
    scorer: Scorer<'_>,
    icp_mode: IcpMode,
    n: usize,
    seed: u64,
) -> Result<MetricsRow> {
    let samples = model.sample(head, n, seed)?;
    let real_moments = FeatureMoments::from_samples(&scorer.features(&reference.samples)?)?;
    let fake_moments = FeatureMoments::from_samples(&scorer.features(&samples)?)?;
    let probs = scorer.probs(&samples)?;
    let icp = match icp_mode {
        IcpMode::Standard => icp(&probs)?,
        IcpMode::Paired => {
            let m = n.min(reference.len());
            let idx: Vec<usize> = (0..m).collect();
            let real = scorer.probs(&reference.samples.select_rows(&idx))?;
            icp_paired(&real, &probs.select_rows(&idx))?
        }
    };
    let (modes_hit, hq_fraction) = scorer.coverage(&samples, &probs)?;
    Ok(MetricsRow {
        step,
        head,
        mse: validate(model, reference)?,
        fid: fid(&real_moments, &fake_moments)?,
        icp,
        modes_hit,
        hq_fraction,
    })
}

/// Worker count from `SWAE_THREADS`, else the available parallelism.
pub fn thread_cap() -> usize {
    std::env::var("SWAE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// All heads, evaluated on up to `threads` workers. Rows come back in
/// head order regardless of scheduling.
pub fn evaluate_model(
    model: &SwaeModel,
    step: u64,
    reference: &Dataset,
    scorer: Scorer<'_>,
    icp_mode: IcpMode,
    n: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<MetricsRow>> {
    let heads = model.heads.len();
    let threads = threads.clamp(1, heads.max(1));
    let run = |h: usize| evaluate_head(model, h, step, reference, scorer, icp_mode, n, seed);
    if threads == 1 {
        return (0..heads).map(run).collect();
    }
    let mut results: Vec<Option<Result<MetricsRow>>> = (0..heads).map(|_| None).collect();
    let per_worker = heads.div_ceil(threads);
    std::thread::scope(|s| {
        let chunks: Vec<_> = results
            .chunks_mut(per_worker)
            .enumerate()
            .map(|(c, slot)| {
                let run = &run;
                s.spawn(move || {
                    let base = c * per_worker;
                    for (i, r) in slot.iter_mut().enumerate() {
                        *r = Some(run(base + i));
                    }
                })
            })
            .collect();
        for c in chunks {
            c.join().expect("evaluation worker panicked");
        }
    });
    results.into_iter().map(|r| r.expect("every head evaluated")).collect()
}
