//! Reconstruction error, Fréchet distance between Gaussian moment summaries,
//! an inception-style score, mode coverage, and the small glyph classifier
//! whose outputs and penultimate features feed the score and the distance.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Dataset, GLYPH_CLASSES};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, Matrix};
use crate::nn::{mlp_forward, Activation, AdamConfig, MlpSpec, Net, ParamSet};
use crate::rng::{derive_seed, purpose};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Eigenvalues above `-PSD_TOLERANCE` count as zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Mean of squared differences over all `N * D` entries.
pub fn mse_metric(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(Error::ShapeMismatch {
            op: "mse_metric",
            shapes: vec![x.shape().to_vec(), x_hat.shape().to_vec()],
        });
    }
    let total: f64 = x
        .data()
        .iter()
        .zip(x_hat.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / x.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMoments {
    pub mean: Vec<f64>,
    pub cov: Matrix,
}

impl FeatureMoments {
    /// Sample mean and unbiased covariance of the rows of `features`.
    pub fn from_samples(features: &Tensor) -> Result<Self> {
        let (n, d) = (features.rows(), features.cols());
        if n < 2 {
            return Err(Error::InvalidArgument(
                "moments need at least two samples".into(),
            ));
        }
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, x) in mean.iter_mut().zip(features.row(i)) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        let mut cov = Matrix::zeros(d);
        let mut centered = vec![0.0; d];
        for i in 0..n {
            for ((c, x), m) in centered.iter_mut().zip(features.row(i)).zip(&mean) {
                *c = x - m;
            }
            for a in 0..d {
                for b in 0..=a {
                    cov.data[a * d + b] += centered[a] * centered[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..=a {
                let v = cov.get(a, b) / (n - 1) as f64;
                cov.set(a, b, v);
                cov.set(b, a, v);
            }
        }
        Ok(FeatureMoments { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// `V diag(sqrt(max(l, 0))) V^T` for a PSD matrix, rejecting eigenvalues
/// below the tolerance.
fn psd_sqrt(m: &Matrix) -> Result<Matrix> {
    let eig = sym_eigen(m);
    check_psd(&eig.values)?;
    Ok(eig.map(|l| libm::sqrt(l.max(0.0))))
}

fn check_psd(values: &[f64]) -> Result<()> {
    let scale = values.iter().fold(1.0f64, |acc, v| acc.max(libm::fabs(*v)));
    match values.iter().copied().find(|&l| l < -PSD_TOLERANCE * scale) {
        Some(eigenvalue) => Err(Error::NotPsd { eigenvalue }),
        None => Ok(()),
    }
}

/// `|m_a - m_b|^2 + Tr(C_a + C_b - 2 (C_a C_b)^{1/2})`.
///
/// The trace of the product's square root is taken from the symmetric
/// product `C_a^{1/2} C_b C_a^{1/2}`, which has the same spectrum.
pub fn fid(a: &FeatureMoments, b: &FeatureMoments) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.n != a.dim() || b.cov.n != b.dim() {
        return Err(Error::ShapeMismatch {
            op: "fid",
            shapes: vec![vec![a.dim()], vec![b.dim()]],
        });
    }
    let ca = a.cov.symmetrized();
    let cb = b.cov.symmetrized();
    check_psd(&sym_eigen(&cb).values)?;
    let root_a = psd_sqrt(&ca)?;
    let product = root_a.matmul(&cb).matmul(&root_a).symmetrized();
    let eig = sym_eigen(&product);
    check_psd(&eig.values)?;
    let trace_root: f64 = eig.values.iter().map(|&l| libm::sqrt(l.max(0.0))).sum();
    let mean_term: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(mean_term + ca.trace() + cb.trace() - 2.0 * trace_root)
}

fn check_probabilities(p: &Tensor) -> Result<()> {
    if p.shape().len() != 2 {
        return Err(Error::InvalidArgument("probabilities must be [N, C]".into()));
    }
    for i in 0..p.rows() {
        let row = p.row(i);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 || row.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::NotProbability { row: i, sum });
        }
    }
    Ok(())
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &qi)| pi * libm::log(pi / qi.max(f64::MIN_POSITIVE)))
        .sum()
}

/// Inception-style score `exp(E_x KL(p(y|x) || p(y)))`, with `p(y)` the
/// mean of the rows.
pub fn icp(cond_probs: &Tensor) -> Result<f64> {
    check_probabilities(cond_probs)?;
    let (n, c) = (cond_probs.rows(), cond_probs.cols());
    let mut marginal = vec![0.0; c];
    for i in 0..n {
        for (m, p) in marginal.iter_mut().zip(cond_probs.row(i)) {
            *m += p;
        }
    }
    for m in &mut marginal {
        *m /= n as f64;
    }
    let mean_kl = (0..n).map(|i| kl(cond_probs.row(i), &marginal)).sum::<f64>() / n as f64;
    Ok(libm::exp(mean_kl))
}

/// `exp(E_i KL(C(x_i) || C(G(z_i))))` with real and generated class
/// posteriors paired by row.
pub fn icp_paired(real: &Tensor, generated: &Tensor) -> Result<f64> {
    check_probabilities(real)?;
    check_probabilities(generated)?;
    if real.shape() != generated.shape() {
        return Err(Error::ShapeMismatch {
            op: "icp_paired",
            shapes: vec![real.shape().to_vec(), generated.shape().to_vec()],
        });
    }
    let n = real.rows();
    let mean_kl = (0..n)
        .map(|i| kl(real.row(i), generated.row(i)))
        .sum::<f64>()
        / n as f64;
    Ok(libm::exp(mean_kl))
}

/// A sample is high quality when it lies within `3 sigma` of its nearest
/// center. Returns the number of centers owning at least one high-quality
/// sample and the high-quality fraction.
pub fn mode_coverage(samples: &Tensor, centers: &[[f64; 2]], sigma: f64) -> Result<(usize, f64)> {
    if samples.shape().len() != 2 || samples.cols() != 2 || centers.is_empty() {
        return Err(Error::InvalidArgument(
            "mode coverage needs [N, 2] samples and at least one center".into(),
        ));
    }
    let mut hit = vec![false; centers.len()];
    let mut good = 0usize;
    let limit = 3.0 * sigma;
    for i in 0..samples.rows() {
        let p = samples.row(i);
        let (nearest, d2) = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, (p[0] - c[0]) * (p[0] - c[0]) + (p[1] - c[1]) * (p[1] - c[1])))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
        if libm::sqrt(d2) <= limit {
            good += 1;
            hit[nearest] = true;
        }
    }
    Ok((
        hit.iter().filter(|&&h| h).count(),
        good as f64 / samples.rows() as f64,
    ))
}

/// Glyph analogue of [`mode_coverage`]: classes predicted for at least one
/// confident sample, and the confident fraction.
pub fn class_coverage(probs: &Tensor, confidence: f64) -> Result<(usize, f64)> {
    check_probabilities(probs)?;
    let mut hit = vec![false; probs.cols()];
    let mut good = 0usize;
    for i in 0..probs.rows() {
        let (k, p) = probs
            .row(i)
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
        if p >= confidence {
            good += 1;
            hit[k] = true;
        }
    }
    Ok((
        hit.iter().filter(|&&h| h).count(),
        good as f64 / probs.rows() as f64,
    ))
}

/// Format version of [`ToyClassifier`] weights.
pub const CLASSIFIER_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierConfig {
    /// Hidden widths; the last one is the feature width.
    pub hidden: Vec<usize>,
    pub epochs: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub required_accuracy: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![128, 32],
            epochs: 40,
            batch_size: 64,
            lr: 1e-3,
            required_accuracy: 0.95,
        }
    }
}

/// Dense softmax classifier over glyph classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyClassifier {
    pub net: Net,
}

impl ToyClassifier {
    pub fn new(input: usize, classes: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(classes);
        let spec = MlpSpec::leaky(widths, Activation::Identity)?;
        Ok(ToyClassifier {
            net: Net::new(spec, seed, &AdamConfig::default()),
        })
    }

    pub fn classes(&self) -> usize {
        self.net.output_width()
    }

    pub fn feature_dim(&self) -> usize {
        let w = &self.net.spec.widths;
        w[w.len() - 2]
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.net.forward(x)
    }

    /// Row-wise softmax of the logits.
    pub fn probs(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (logits, _) = self.net.record(&mut tape, xv, false)?;
        let logp = tape.log_softmax(logits)?;
        let data = tape.value(logp).data().iter().map(|&v| libm::exp(v)).collect();
        Tensor::new(tape.value(logp).shape().to_vec(), data)
    }

    /// Activations of the last hidden layer.
    pub fn features(&self, x: &Tensor) -> Result<Tensor> {
        let widths = &self.net.spec.widths;
        let spec = MlpSpec::new(
            widths[..widths.len() - 1].to_vec(),
            self.net.spec.hidden,
            self.net.spec.hidden,
        )?;
        let params = ParamSet {
            layers: self.net.params.layers[..widths.len() - 2].to_vec(),
        };
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let bound = params.bind(&mut tape, false);
        let y = mlp_forward(&mut tape, &spec, &bound, xv)?;
        Ok(tape.value(y).detached())
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows())
            .map(|i| {
                logits
                    .row(i)
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (k, &v)| if v > b.1 { (k, v) } else { b })
                    .0
            })
            .collect())
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        let labels = data
            .labels
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("accuracy needs labels".into()))?;
        let predicted = self.predict(&data.samples)?;
        let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(correct as f64 / labels.len() as f64)
    }

    /// One Adam step on mean cross-entropy of a labelled batch.
    fn fit_batch(&mut self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let classes = self.classes();
        let mut onehot = vec![0.0; labels.len() * classes];
        for (i, &l) in labels.iter().enumerate() {
            onehot[i * classes + l] = 1.0;
        }
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let target = tape.constant(&Tensor::new(vec![labels.len(), classes], onehot)?);
        let (logits, bound) = self.net.record(&mut tape, xv, true)?;
        let logp = tape.log_softmax(logits)?;
        let picked = tape.mul(logp, target)?;
        let total = tape.sum(picked)?;
        let loss = tape.scale(total, -1.0 / labels.len() as f64)?;
        tape.backward(loss)?;
        let grads = bound.grads(&tape);
        self.net.step(&grads)?;
        Ok(tape.value(loss).item())
    }
}

/// Trains the glyph classifier with the default budget.
pub fn train_toy_classifier(data: &Dataset, seed: u64) -> Result<ToyClassifier> {
    train_toy_classifier_with(data, seed, &ClassifierConfig::default())
}

pub fn train_toy_classifier_with(
    data: &Dataset,
    seed: u64,
    config: &ClassifierConfig,
) -> Result<ToyClassifier> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("classifier training needs labels".into()))?;
    let classes = labels.iter().copied().max().unwrap_or(0).max(GLYPH_CLASSES - 1) + 1;
    let init_seed = derive_seed(seed, &[purpose::CLASSIFIER, 0]);
    let mut clf = ToyClassifier::new(data.dim(), classes, &config.hidden, init_seed)?;
    clf.net.adam.lr = config.lr;
    clf.net.adam.beta1 = 0.9;
    let shuffle_seed = derive_seed(seed, &[purpose::CLASSIFIER, 1]);
    let batch_size = config.batch_size.min(data.len());
    for epoch in 0..config.epochs {
        let order = crate::rng::Rng::derived(shuffle_seed, &[purpose::SHUFFLE, epoch])
            .permutation(data.len());
        for chunk in order.chunks_exact(batch_size) {
            let x = data.samples.select_rows(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            clf.fit_batch(&x, &y)?;
        }
    }
    let accuracy = clf.accuracy(data)?;
    if accuracy < config.required_accuracy {
        return Err(Error::ClassifierUnderfit {
            accuracy,
            required: config.required_accuracy,
        });
    }
    Ok(clf)
}
