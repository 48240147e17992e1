//! `swae-data v1` files: one ASCII header line
//! `swae-data v1 N D has_labels has_factors [F]` followed by little-endian
//! f64 values: the `N x D` samples, then `N` labels if present, then the
//! `N x F` factors if present. `F` is written only when `has_factors` is 1.

use std::path::Path;

use swae_core::data::{Dataset, Split};
use swae_core::Tensor;

use crate::container::{read_file, write_atomic};
use crate::error::{Error, Result};

const WHAT: &str = "dataset file";

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let (n, d) = (ds.len(), ds.dim());
    let mut header = format!(
        "swae-data v1 {n} {d} {} {}",
        u8::from(ds.labels.is_some()),
        u8::from(ds.factors.is_some())
    );
    if ds.factors.is_some() {
        header.push_str(&format!(" {}", ds.n_factors));
    }
    header.push('\n');
    let mut out = header.into_bytes();
    let mut push = |x: f64| out.extend_from_slice(&x.to_le_bytes());
    ds.samples.data().iter().for_each(|&x| push(x));
    if let Some(labels) = &ds.labels {
        labels.iter().for_each(|&l| push(l as f64));
    }
    if let Some(factors) = &ds.factors {
        factors.iter().for_each(|&f| push(f));
    }
    out
}

pub fn decode_dataset(bytes: &[u8], split: Split) -> Result<Dataset> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::malformed(WHAT, "missing header line"))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::malformed(WHAT, "header is not ASCII"))?;
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    if fields.len() < 6 || fields[0] != "swae-data" {
        return Err(Error::malformed(WHAT, format!("bad header {header:?}")));
    }
    if fields[1] != "v1" {
        let found = fields[1].trim_start_matches('v').parse().unwrap_or(0);
        return Err(Error::Version { found, supported: 1 });
    }
    let num = |i: usize| -> Result<usize> {
        fields
            .get(i)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::malformed(WHAT, format!("bad header {header:?}")))
    };
    let (n, d, has_labels, has_factors) = (num(2)?, num(3)?, num(4)? == 1, num(5)? == 1);
    let f = if has_factors { num(6)? } else { 0 };
    let body = &bytes[newline + 1..];
    let count = n * d + if has_labels { n } else { 0 } + n * f;
    if body.len() < count * 8 {
        return Err(Error::Truncated {
            needed: newline + 1 + count * 8,
            found: bytes.len(),
        });
    }
    if body.len() > count * 8 {
        return Err(Error::malformed(WHAT, "trailing bytes"));
    }
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let (samples, rest) = values.split_at(n * d);
    let (labels, factors) = rest.split_at(if has_labels { n } else { 0 });
    let labels = has_labels.then(|| labels.iter().map(|&l| l as usize).collect());
    let factors = has_factors.then(|| factors.to_vec());
    Ok(Dataset::new(
        Tensor::new(vec![n, d], samples.to_vec())?,
        labels,
        factors,
        f,
        split,
    )?)
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_atomic(path, &encode_dataset(ds))
}

pub fn load_dataset(path: &Path, split: Split) -> Result<Dataset> {
    decode_dataset(&read_file(path)?, split)
}
