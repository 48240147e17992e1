//! Dense networks, Glorot-uniform initialization and Adam.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    Tanh,
    Sigmoid,
    LeakyRelu(f64),
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Identity => Ok(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::LeakyRelu(alpha) => tape.leaky_relu(x, alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        let spec = MlpSpec {
            widths,
            hidden,
            output,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Leaky-ReLU hidden layers with the given output activation.
    pub fn leaky(widths: Vec<usize>, output: Activation) -> Result<Self> {
        MlpSpec::new(widths, Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE), output)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "an MLP needs at least two positive widths, got {:?}",
                self.widths
            )));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `(out, in)`
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<Layer>,
}

/// Glorot-uniform weights in `(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`,
/// and zero biases.
pub fn init_params(spec: &MlpSpec, seed: u64) -> ParamSet {
    let mut rng = Rng::seeded(seed);
    let layers = spec
        .widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            let data = (0..fan_in * fan_out).map(|_| rng.uniform_in(-a, a)).collect();
            Layer {
                weight: Tensor::new(vec![fan_out, fan_in], data)
                    .expect("shape matches")
                    .with_grad(),
                bias: Tensor::zeros(&[fan_out]).with_grad(),
            }
        })
        .collect();
    ParamSet { layers }
}

impl ParamSet {
    pub fn zeros(spec: &MlpSpec) -> ParamSet {
        let layers = spec
            .widths
            .windows(2)
            .map(|w| Layer {
                weight: Tensor::zeros(&[w[1], w[0]]).with_grad(),
                bias: Tensor::zeros(&[w[1]]).with_grad(),
            })
            .collect();
        ParamSet { layers }
    }

    /// Weight and bias tensors in layer order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn len(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn get(&self, mut index: usize) -> f64 {
        for t in self.tensors() {
            if index < t.len() {
                return t.data()[index];
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set(&mut self, mut index: usize, value: f64) {
        for t in self.tensors_mut() {
            if index < t.len() {
                t.data_mut()[index] = value;
                return;
            }
            index -= t.len();
        }
        panic!("parameter index out of range");
    }

    /// Records every tensor on `tape`, as differentiable leaves when
    /// `trainable` and as constants otherwise.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars = self
            .tensors()
            .map(|t| {
                if trainable {
                    tape.variable(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        Bound { vars }
    }

    /// Overwrites parameters from a flat vector in [`ParamSet::flat`] order.
    pub fn load_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "expected {} parameters, got {}",
                self.len(),
                values.len()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// A [`ParamSet`] recorded on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Flat gradient in [`ParamSet::flat`] order; zeros where nothing flowed.
    pub fn grads(&self, tape: &Tape) -> Vec<f64> {
        let mut out = Vec::new();
        for &v in &self.vars {
            match tape.grad(v) {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(core::iter::repeat(0.0).take(tape.value(v).len())),
            }
        }
        out
    }
}

/// Affine map plus activation for every layer; the output activation is
/// applied after the last affine map.
pub fn mlp_forward(tape: &mut Tape, spec: &MlpSpec, params: &Bound, x: Var) -> Result<Var> {
    let x_shape = tape.value(x).shape().to_vec();
    if x_shape.len() != 2 || x_shape[1] != spec.input_width() {
        return Err(Error::ShapeMismatch {
            op: "mlp_forward",
            shapes: vec![x_shape, vec![spec.input_width()]],
        });
    }
    let n_layers = params.vars.len() / 2;
    let mut h = x;
    for layer in 0..n_layers {
        let (w, b) = (params.vars[2 * layer], params.vars[2 * layer + 1]);
        let z = tape.matmul_nt(h, w)?;
        let z = tape.broadcast_add(z, b)?;
        let act = if layer + 1 == n_layers {
            spec.output
        } else {
            spec.hidden
        };
        h = act.apply(tape, z)?;
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: &AdamConfig, n_params: usize) -> Self {
        AdamState {
            lr: config.lr,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }
}

/// One bias-corrected Adam update. Grads must be finite and congruent with
/// `params`; on error nothing is modified.
pub fn adam_step(state: &mut AdamState, params: &mut ParamSet, grads: &[f64]) -> Result<()> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::ShapeMismatch {
            op: "adam_step",
            shapes: vec![vec![n], vec![grads.len()], vec![state.m.len()]],
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "adam_step gradients",
        });
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - libm::pow(b1, state.t as f64);
    let c2 = 1.0 - libm::pow(b2, state.t as f64);
    let mut offset = 0;
    for tensor in params.tensors_mut() {
        let len = tensor.len();
        let (m, v, g) = (
            &mut state.m[offset..offset + len],
            &mut state.v[offset..offset + len],
            &grads[offset..offset + len],
        );
        for (((theta, m), v), &g) in tensor.data_mut().iter_mut().zip(m).zip(v).zip(g) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= state.lr * m_hat / (libm::sqrt(v_hat) + state.eps);
        }
        offset += len;
    }
    Ok(())
}

/// Spec, parameters and optimizer state of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Net {
    pub spec: MlpSpec,
    pub params: ParamSet,
    pub adam: AdamState,
}

impl Net {
    pub fn new(spec: MlpSpec, seed: u64, adam: &AdamConfig) -> Self {
        let params = init_params(&spec, seed);
        let adam = AdamState::new(adam, params.len());
        Net { spec, params, adam }
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width()
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width()
    }

    /// Records this net on `tape` applied to `x`.
    pub fn record(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<(Var, Bound)> {
        let bound = self.params.bind(tape, trainable);
        let y = mlp_forward(tape, &self.spec, &bound, x)?;
        Ok((y, bound))
    }

    /// Evaluation-only forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let (y, _) = self.record(&mut tape, xv, false)?;
        Ok(tape.value(y).detached())
    }

    pub fn step(&mut self, grads: &[f64]) -> Result<()> {
        adam_step(&mut self.adam, &mut self.params, grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(widths: &[usize], out: Activation) -> MlpSpec {
        MlpSpec::leaky(widths.to_vec(), out).unwrap()
    }

    #[test]
    fn spec_validation() {
        assert!(MlpSpec::leaky(vec![3], Activation::Identity).is_err());
        assert!(MlpSpec::leaky(vec![3, 0, 1], Activation::Identity).is_err());
        assert_eq!(spec(&[2, 4, 1], Activation::Identity).param_count(), 12 + 5);
    }

    #[test]
    fn init_biases_are_zero() {
        let p = init_params(&spec(&[2, 4], Activation::Identity), 3);
        assert!(p.layers[0].bias.data().iter().all(|&b| b == 0.0));
        assert_eq!(p.layers[0].weight.shape(), &[4, 2]);
    }

    #[test]
    fn init_statistics() {
        let p = init_params(&spec(&[100, 100], Activation::Identity), 7);
        let w = p.layers[0].weight.data();
        let bound = libm::sqrt(6.0 / 200.0);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!(w.iter().all(|x| x.abs() < bound));
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let s = spec(&[5, 7, 3], Activation::Tanh);
        assert_eq!(init_params(&s, 11), init_params(&s, 11));
        assert_ne!(init_params(&s, 11).flat(), init_params(&s, 12).flat());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let s = spec(&[3, 4, 2], Activation::Identity);
        let net = Net {
            params: ParamSet::zeros(&s),
            adam: AdamState::new(&AdamConfig::default(), s.param_count()),
            spec: s,
        };
        let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 0.2, 0.9, 0.1, -0.3]).unwrap();
        assert!(net.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_layer_tanh_of_zero() {
        let s = spec(&[2, 2], Activation::Tanh);
        let mut params = ParamSet::zeros(&s);
        params.layers[0]
            .weight
            .data_mut()
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let net = Net {
            params,
            adam: AdamState::new(&AdamConfig::default(), s.param_count()),
            spec: s,
        };
        let y = net.forward(&Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = Net::new(spec(&[3, 2], Activation::Identity), 0, &AdamConfig::default());
        assert!(matches!(
            net.forward(&Tensor::zeros(&[1, 4])),
            Err(Error::ShapeMismatch { op: "mlp_forward", .. })
        ));
    }

    #[test]
    fn batch_equals_stacked_single_rows() {
        let net = Net::new(spec(&[3, 16, 16, 2], Activation::Tanh), 5, &AdamConfig::default());
        let mut rng = Rng::seeded(1);
        let rows: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
            .collect();
        let both = net.forward(&Tensor::from_rows(&rows).unwrap()).unwrap();
        let first = net.forward(&Tensor::from_rows(&rows[..1]).unwrap()).unwrap();
        let second = net.forward(&Tensor::from_rows(&rows[1..]).unwrap()).unwrap();
        assert_eq!(both.row(0), first.data());
        assert_eq!(both.row(1), second.data());
    }

    fn scalar_params(theta: f64) -> ParamSet {
        ParamSet {
            layers: vec![Layer {
                weight: Tensor::new(vec![1, 1], vec![theta]).unwrap(),
                bias: Tensor::zeros(&[1]),
            }],
        }
    }

    #[test]
    fn adam_single_step_closed_form() {
        let mut params = scalar_params(1.0);
        let config = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut state = AdamState::new(&config, 2);
        adam_step(&mut state, &mut params, &[2.0, 0.0]).unwrap();
        // m = 0.1 * 2, v = 0.001 * 4; after bias correction m_hat = 2, v_hat = 4.
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((params.get(0) - expected).abs() < 1e-12);
        assert_eq!(params.get(1), 0.0);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let net0 = Net::new(spec(&[3, 4, 2], Activation::Tanh), 2, &AdamConfig::default());
        let mut net = net0.clone();
        net.step(&vec![0.0; net.params.len()]).unwrap();
        assert_eq!(net.params, net0.params);
    }

    #[test]
    fn adam_rejects_nan() {
        let mut net = Net::new(spec(&[2, 1], Activation::Identity), 2, &AdamConfig::default());
        let before = net.params.clone();
        let mut g = vec![0.1; net.params.len()];
        g[1] = f64::NAN;
        assert!(matches!(net.step(&g), Err(Error::NonFinite { .. })));
        assert_eq!(net.params, before);
        assert_eq!(net.adam.t, 0);
    }

    #[test]
    fn adam_steps_bounded_by_lr() {
        let config = AdamConfig {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut params = scalar_params(0.3);
        let mut state = AdamState::new(&config, 2);
        let mut prev = params.get(0);
        for _ in 0..2 {
            adam_step(&mut state, &mut params, &[-5.0, 0.0]).unwrap();
            let now = params.get(0);
            assert!((now - prev).abs() <= config.lr * (1.0 + 1e-6));
            prev = now;
        }
    }
}
