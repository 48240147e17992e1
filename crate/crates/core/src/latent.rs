//! Latent-space tooling: straight-line interpolation between codes and
//! attribute directions built from the difference of class-conditional
//! mean codes.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::swae::SwaeModel;
use crate::tensor::Tensor;

/// `steps` equally spaced points from `h1` to `h2`, both endpoints
/// included exactly.
pub fn interpolate(h1: &[f64], h2: &[f64], steps: usize) -> Result<Vec<Vec<f64>>> {
    if h1.len() != h2.len() {
        return Err(Error::ShapeMismatch {
            op: "interpolate",
            shapes: vec![vec![h1.len()], vec![h2.len()]],
        });
    }
    if steps < 2 {
        return Err(Error::InvalidArgument("interpolation needs steps >= 2".into()));
    }
    Ok((0..steps)
        .map(|i| {
            if i == steps - 1 {
                return h2.to_vec();
            }
            let t = i as f64 / (steps - 1) as f64;
            h1.iter().zip(h2).map(|(&a, &b)| a + t * (b - a)).collect()
        })
        .collect())
}

/// Decodes a stage-I interpolation path through `G1`, one row per step.
pub fn interpolate_decoded(
    model: &SwaeModel,
    h1: &[f64],
    h2: &[f64],
    steps: usize,
) -> Result<Tensor> {
    let path = interpolate(h1, h2, steps)?;
    model.decode1(&Tensor::from_rows(&path)?)
}

/// Interpolates in a head's `z` space and decodes through `G1(G2(.))`.
pub fn interpolate_z(
    model: &SwaeModel,
    head: usize,
    z1: &[f64],
    z2: &[f64],
    steps: usize,
) -> Result<Tensor> {
    let path = interpolate(z1, z2, steps)?;
    model.generate(head, &Tensor::from_rows(&path)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDirection {
    pub name: String,
    /// `mean(codes | attribute) - mean(codes | no attribute)`.
    pub direction: Vec<f64>,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// Column means of the selected rows. Each column is summed in sorted
/// order so the result does not depend on row order.
fn sorted_mean(codes: &Tensor, rows: &[usize]) -> Vec<f64> {
    let mut column = Vec::with_capacity(rows.len());
    (0..codes.cols())
        .map(|j| {
            column.clear();
            column.extend(rows.iter().map(|&i| codes.row(i)[j]));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / rows.len() as f64
        })
        .collect()
}

pub fn attribute_direction(codes: &Tensor, has_attr: &[bool], name: &str) -> Result<AttributeDirection> {
    if codes.shape().len() != 2 || codes.rows() != has_attr.len() {
        return Err(Error::ShapeMismatch {
            op: "attribute_direction",
            shapes: vec![codes.shape().to_vec(), vec![has_attr.len()]],
        });
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..has_attr.len()).partition(|&i| has_attr[i]);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument(alloc::format!(
            "attribute '{name}' needs both positive and negative examples \
             ({} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }
    let mean_pos = sorted_mean(codes, &pos);
    let mean_neg = sorted_mean(codes, &neg);
    Ok(AttributeDirection {
        name: name.into(),
        direction: mean_pos.iter().zip(&mean_neg).map(|(p, n)| p - n).collect(),
        n_pos: pos.len(),
        n_neg: neg.len(),
    })
}

/// `h + lambda_h * direction`.
pub fn shift_code(h: &[f64], dir: &AttributeDirection, lambda_h: f64) -> Result<Vec<f64>> {
    if h.len() != dir.direction.len() {
        return Err(Error::ShapeMismatch {
            op: "manipulate",
            shapes: vec![vec![h.len()], vec![dir.direction.len()]],
        });
    }
    Ok(h.iter()
        .zip(&dir.direction)
        .map(|(&x, &d)| x + lambda_h * d)
        .collect())
}

/// `G1(h + lambda_h * direction)` as a `[1, D]` row.
pub fn manipulate(
    model: &SwaeModel,
    h: &[f64],
    dir: &AttributeDirection,
    lambda_h: f64,
) -> Result<Tensor> {
    let code = shift_code(h, dir, lambda_h)?;
    model.decode1(&Tensor::new(vec![1, code.len()], code)?)
}
