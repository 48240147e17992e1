//! Independent reference computations shared by the test targets.
#![allow(dead_code)]

use swae_core::nn::AdamConfig;
use swae_core::rng::Rng;
use swae_core::swae::{Architecture, NetId, PriorFamily, ReconSource, SwaeModel};
use swae_core::tape::{Tape, Var};
use swae_core::{Result, Tensor};

pub const FD_EPS: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

pub fn random_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_in(lo, hi)).collect()).unwrap()
}

/// Values in `[-hi, -lo] U [lo, hi]`, kept away from the leaky-ReLU kink.
pub fn away_from_zero(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut t = random_tensor(rng, shape, lo, hi);
    for x in t.data_mut() {
        if rng.uniform() < 0.5 {
            *x = -*x;
        }
    }
    t
}

/// Largest relative error between reverse-mode and central-difference
/// gradients of `sum(op(inputs) * w)` with random constant weights `w`.
pub fn check_op(
    rng: &mut Rng,
    inputs: &[Tensor],
    op: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> f64 {
    let eval = |xs: &[Tensor], w: Option<&Tensor>, want_grad: bool| -> (f64, Tensor, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.variable(x)).collect();
        let out = op(&mut tape, &vars).unwrap();
        let shape = tape.value(out).shape().to_vec();
        let w = match w {
            Some(w) => w.clone(),
            None => Tensor::zeros(&shape),
        };
        let wv = tape.constant(&w);
        let prod = tape.mul(out, wv).unwrap();
        let total = tape.sum(prod).unwrap();
        let value = tape.value(total).item();
        let mut grads = Vec::new();
        if want_grad {
            tape.backward(total).unwrap();
            grads = vars.iter().map(|&v| tape.grad(v).unwrap().to_vec()).collect();
        }
        (value, w, grads)
    };
    let (_, probe, _) = eval(inputs, None, false);
    let w = random_tensor(rng, probe.shape(), -1.5, 1.5);
    let (_, _, analytic) = eval(inputs, Some(&w), true);
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_EPS;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_EPS;
            let numeric = (eval(&plus, Some(&w), false).0 - eval(&minus, Some(&w), false).0) / (2.0 * FD_EPS);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

/// Every primitive op on random inputs drawn from `seed`; returns
/// `(op name, max relative error)` pairs.
pub fn op_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = Rng::seeded(seed);
    let r = &mut rng;
    let mut out = Vec::new();
    let a = random_tensor(r, &[3, 4], -2.0, 2.0);
    let b = random_tensor(r, &[4, 2], -2.0, 2.0);
    out.push(("matmul", check_op(r, &[a.clone(), b], |t, v| t.matmul(v[0], v[1]))));
    let bt = random_tensor(r, &[2, 4], -2.0, 2.0);
    out.push(("matmul_nt", check_op(r, &[a.clone(), bt], |t, v| t.matmul_nt(v[0], v[1]))));
    let c = random_tensor(r, &[3, 4], -2.0, 2.0);
    out.push(("add", check_op(r, &[a.clone(), c.clone()], |t, v| t.add(v[0], v[1]))));
    out.push(("sub", check_op(r, &[a.clone(), c.clone()], |t, v| t.sub(v[0], v[1]))));
    out.push(("mul", check_op(r, &[a.clone(), c.clone()], |t, v| t.mul(v[0], v[1]))));
    let row = random_tensor(r, &[4], -2.0, 2.0);
    out.push(("broadcast_add", check_op(r, &[a.clone(), row], |t, v| t.broadcast_add(v[0], v[1]))));
    out.push(("neg", check_op(r, &[a.clone()], |t, v| t.neg(v[0]))));
    out.push(("scale", check_op(r, &[a.clone()], |t, v| t.scale(v[0], -1.7))));
    out.push(("sigmoid", check_op(r, &[a.clone()], |t, v| t.sigmoid(v[0]))));
    out.push(("tanh", check_op(r, &[a.clone()], |t, v| t.tanh(v[0]))));
    let kinked = away_from_zero(r, &[3, 4], 0.01, 2.0);
    out.push(("leaky_relu", check_op(r, &[kinked], |t, v| t.leaky_relu(v[0], 0.2))));
    out.push(("square", check_op(r, &[a.clone()], |t, v| t.square(v[0]))));
    out.push(("sum", check_op(r, &[a.clone()], |t, v| t.sum(v[0]))));
    out.push(("mean", check_op(r, &[a.clone()], |t, v| t.mean(v[0]))));
    let pos = random_tensor(r, &[3, 4], 0.2, 3.0);
    out.push(("log", check_op(r, &[pos], |t, v| t.log(v[0]))));
    let top = random_tensor(r, &[2, 4], -2.0, 2.0);
    out.push(("concat", check_op(r, &[top, a.clone()], |t, v| t.concat(v))));
    let logits = random_tensor(r, &[5, 1], -6.0, 6.0);
    out.push(("bce_with_logits(1)", check_op(r, &[logits.clone()], |t, v| t.bce_with_logits(v[0], 1.0))));
    out.push(("bce_with_logits(0)", check_op(r, &[logits], |t, v| t.bce_with_logits(v[0], 0.0))));
    out.push(("log_softmax", check_op(r, &[a.clone()], |t, v| t.log_softmax(v[0]))));
    out.push(("mse_loss", check_op(r, &[a, c], |t, v| t.mse_loss(v[0], v[1]))));
    out
}

/// A model small enough for exhaustive finite differences.
pub fn tiny_model(seed: u64, heads: usize) -> SwaeModel {
    let arch = Architecture {
        data_dim: 3,
        latent_dim: 3,
        z_dim: 2,
        stage1_hidden: vec![5],
        stage2_hidden: vec![4],
        leaky_slope: 0.2,
    };
    let priors: Vec<PriorFamily> = (0..heads)
        .map(|h| if h % 2 == 0 { PriorFamily::Gaussian } else { PriorFamily::Uniform })
        .collect();
    SwaeModel::new(&arch, &priors, &AdamConfig::default(), seed).unwrap()
}

/// Max relative error of every gradient a loss reports, against central
/// differences of the loss value in each parameter of that network.
pub fn check_loss(
    model: &SwaeModel,
    loss: impl Fn(&SwaeModel, bool) -> Result<swae_core::swae::LossEval>,
) -> f64 {
    let eval = loss(model, true).unwrap();
    let mut worst = 0.0f64;
    for (id, grads) in &eval.grads {
        let mut m = model.clone();
        for (j, &g) in grads.iter().enumerate() {
            let x = model.net(*id).params.get(j);
            m.net_mut(*id).params.set(j, x + FD_EPS);
            let up = loss(&m, false).unwrap().value;
            m.net_mut(*id).params.set(j, x - FD_EPS);
            let down = loss(&m, false).unwrap().value;
            m.net_mut(*id).params.set(j, x);
            worst = worst.max(rel_err(g, (up - down) / (2.0 * FD_EPS)));
        }
    }
    worst
}

pub fn loss_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let model = tiny_model(seed, 1);
    let mut rng = Rng::derived(seed, &[99]);
    let x = random_tensor(&mut rng, &[4, 3], -1.0, 1.0);
    let h0 = model.encode1(&x).unwrap();
    let z = random_tensor(&mut rng, &[4, 2], -1.5, 1.5);
    let lambda = rng.uniform_in(0.1, 1.0);
    vec![
        ("stage1_d_loss", check_loss(&model, |m, g| m.stage1_d_loss(&x, &h0, g))),
        ("stage1_eg_loss", check_loss(&model, |m, g| m.stage1_eg_loss(&x, lambda, false, g))),
        ("stage1_eg_loss(scaled)", check_loss(&model, |m, g| m.stage1_eg_loss(&x, lambda, true, g))),
        ("stage2_d_loss", check_loss(&model, |m, g| m.stage2_d_loss(0, &h0, &z, g))),
        (
            "stage2_eg_loss",
            check_loss(&model, |m, g| m.stage2_eg_loss(0, &h0, ReconSource::Encoder, Some(&z), g)),
        ),
        (
            "stage2_eg_loss(prior)",
            check_loss(&model, |m, g| m.stage2_eg_loss(0, &h0, ReconSource::Prior, Some(&z), g)),
        ),
    ]
}

/// Which networks a loss reports gradients for.
pub fn grad_targets(eval: &swae_core::swae::LossEval) -> Vec<NetId> {
    eval.grads.iter().map(|(id, _)| *id).collect()
}

/// Dense square matrix helpers for the matrix square-root oracle.
pub fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| a[i * n + k] * b[k * n + j]).sum();
        }
    }
    out
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn mat_inv(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    let mut inv: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x * n + col].abs().total_cmp(&m[y * n + col].abs()))
            .unwrap();
        for k in 0..n {
            m.swap(col * n + k, pivot * n + k);
            inv.swap(col * n + k, pivot * n + k);
        }
        let p = m[col * n + col];
        for k in 0..n {
            m[col * n + k] /= p;
            inv[col * n + k] /= p;
        }
        for row in 0..n {
            if row != col {
                let f = m[row * n + col];
                for k in 0..n {
                    m[row * n + k] -= f * m[col * n + k];
                    inv[row * n + k] -= f * inv[col * n + k];
                }
            }
        }
    }
    inv
}

/// Principal square root by Denman-Beavers iteration.
pub fn denman_beavers_sqrt(a: &[f64], n: usize) -> Vec<f64> {
    let mut y = a.to_vec();
    let mut z: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
    for _ in 0..100 {
        let (yi, zi) = (mat_inv(&y, n), mat_inv(&z, n));
        let y_next: Vec<f64> = y.iter().zip(&zi).map(|(a, b)| 0.5 * (a + b)).collect();
        let z_next: Vec<f64> = z.iter().zip(&yi).map(|(a, b)| 0.5 * (a + b)).collect();
        let delta: f64 = y_next.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        y = y_next;
        z = z_next;
        if delta < 1e-15 {
            break;
        }
    }
    y
}

/// Frechet distance with the trace of `sqrt(C_a C_b)` from the
/// iterative oracle.
pub fn fid_oracle(mean_a: &[f64], cov_a: &[f64], mean_b: &[f64], cov_b: &[f64]) -> f64 {
    let n = mean_a.len();
    let dm: f64 = mean_a.iter().zip(mean_b).map(|(a, b)| (a - b) * (a - b)).sum();
    let root = denman_beavers_sqrt(&mat_mul(cov_a, cov_b, n), n);
    let tr = |m: &[f64]| (0..n).map(|i| m[i * n + i]).sum::<f64>();
    dm + tr(cov_a) + tr(cov_b) - 2.0 * tr(&root)
}

/// Random SPD matrix `B B^T + 0.5 I`.
pub fn random_spd(rng: &mut Rng, n: usize) -> Vec<f64> {
    let b: Vec<f64> = (0..n * n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum::<f64>()
                + if i == j { 0.5 } else { 0.0 };
        }
    }
    out
}

/// `exp(mean_i KL(p_i || mean_j p_j))` by explicit loops.
pub fn icp_oracle(rows: &[Vec<f64>]) -> f64 {
    let c = rows[0].len();
    let n = rows.len() as f64;
    let mut marginal = vec![0.0; c];
    for r in rows {
        for k in 0..c {
            marginal[k] += r[k] / n;
        }
    }
    let mut total = 0.0;
    for r in rows {
        for k in 0..c {
            if r[k] > 0.0 {
                total += r[k] * (r[k] / marginal[k]).ln();
            }
        }
    }
    (total / n).exp()
}
