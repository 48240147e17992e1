//! Deterministic synthetic datasets and minibatching.
//!
//! Two generators stand in for image corpora: a ring of Gaussian modes in
//! the plane, and 8x8 procedural glyphs whose generative factors (class,
//! stroke thickness, slant) are recorded next to each sample.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, purpose, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    /// Seed used to generate this split from a corpus seed. Splits never
    /// share a stream.
    pub fn seed(self, corpus_seed: u64) -> u64 {
        derive_seed(corpus_seed, &[purpose::DATA, self.tag()])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[N, D]`, every entry in `[-1, 1]`.
    pub samples: Tensor,
    pub labels: Option<Vec<usize>>,
    /// Row-major `[N, F]` generative factors.
    pub factors: Option<Vec<f64>>,
    pub n_factors: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        samples: Tensor,
        labels: Option<Vec<usize>>,
        factors: Option<Vec<f64>>,
        n_factors: usize,
        split: Split,
    ) -> Result<Self> {
        if samples.shape().len() != 2 {
            return Err(Error::InvalidArgument("samples must be a [N, D] matrix".into()));
        }
        let n = samples.rows();
        if samples.data().iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("samples must lie in [-1, 1]".into()));
        }
        if labels.as_ref().is_some_and(|l| l.len() != n) {
            return Err(Error::InvalidArgument("label count differs from N".into()));
        }
        if factors.as_ref().is_some_and(|f| f.len() != n * n_factors || n_factors == 0) {
            return Err(Error::InvalidArgument("factor matrix is not [N, F]".into()));
        }
        Ok(Dataset {
            samples,
            labels,
            factors,
            n_factors,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn factor_row(&self, i: usize) -> Option<&[f64]> {
        self.factors
            .as_ref()
            .map(|f| &f[i * self.n_factors..(i + 1) * self.n_factors])
    }

    /// `size` rows drawn uniformly with replacement.
    pub fn random_batch(&self, rng: &mut Rng, size: usize) -> Tensor {
        let idx: Vec<usize> = (0..size).map(|_| rng.below(self.len())).collect();
        self.samples.select_rows(&idx)
    }

    /// The first `n` rows (or all of them).
    pub fn head(&self, n: usize) -> Tensor {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.samples.select_rows(&idx)
    }
}

/// Mode centers and per-coordinate spread of a ring dataset, in the
/// normalized coordinates the samples are stored in.
#[derive(Debug, Clone, PartialEq)]
pub struct RingGeometry {
    pub centers: Vec<[f64; 2]>,
    pub sigma: f64,
}

/// Scale mapping raw ring coordinates into `[-1, 1]`: the ring plus four
/// standard deviations fits in the unit square.
fn ring_scale(radius: f64, sigma: f64) -> f64 {
    1.0 / (radius + 4.0 * sigma)
}

pub fn ring_geometry(modes: usize, radius: f64, sigma: f64) -> RingGeometry {
    let s = ring_scale(radius, sigma);
    let centers = (0..modes)
        .map(|k| {
            let angle = 2.0 * core::f64::consts::PI * k as f64 / modes as f64;
            [s * radius * libm::cos(angle), s * radius * libm::sin(angle)]
        })
        .collect();
    RingGeometry {
        centers,
        sigma: s * sigma,
    }
}

/// `n` points spread uniformly over `modes` isotropic Gaussians on a circle,
/// rescaled into `[-1, 1]^2` (clamped at the boundary). Labels are mode
/// indices.
pub fn gen_gauss_ring(
    n: usize,
    modes: usize,
    radius: f64,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if modes < 2 || !(sigma > 0.0) || !(radius > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "ring needs modes >= 2, sigma > 0, radius > 0 (got {modes}, {sigma}, {radius})"
        )));
    }
    let geometry = ring_geometry(modes, radius, sigma);
    let mut rng = Rng::seeded(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    // Balanced mode assignment in random order.
    let mut modes_of: Vec<usize> = (0..n).map(|i| i % modes).collect();
    rng.shuffle(&mut modes_of);
    for k in modes_of {
        let (dx, dy) = rng.normal_pair();
        let c = geometry.centers[k];
        data.push((c[0] + geometry.sigma * dx).clamp(-1.0, 1.0));
        data.push((c[1] + geometry.sigma * dy).clamp(-1.0, 1.0));
        labels.push(k);
    }
    Dataset::new(
        Tensor::new(vec![n, 2], data)?,
        Some(labels),
        None,
        0,
        Split::Train,
    )
}

pub const GLYPH_SIDE: usize = 8;
pub const GLYPH_DIM: usize = GLYPH_SIDE * GLYPH_SIDE;
pub const GLYPH_CLASSES: usize = 10;
/// Factor columns of a glyph dataset.
pub const GLYPH_FACTORS: [&str; 3] = ["class", "thickness", "slant"];

type Stroke = &'static [(f64, f64)];

/// Polyline templates for the ten glyph classes on an 8x8 canvas, `y` down.
const TEMPLATES: [&[Stroke]; GLYPH_CLASSES] = [
    &[&[(2.0, 1.0), (6.0, 1.0), (6.0, 7.0), (2.0, 7.0), (2.0, 1.0)]],
    &[&[(3.0, 2.0), (4.0, 1.0), (4.0, 7.0)]],
    &[&[(2.0, 1.0), (6.0, 1.0), (6.0, 4.0), (2.0, 4.0), (2.0, 7.0), (6.0, 7.0)]],
    &[&[(2.0, 1.0), (6.0, 1.0), (6.0, 7.0), (2.0, 7.0)], &[(3.0, 4.0), (6.0, 4.0)]],
    &[&[(2.0, 1.0), (2.0, 4.0), (6.0, 4.0)], &[(5.0, 1.0), (5.0, 7.0)]],
    &[&[(6.0, 1.0), (2.0, 1.0), (2.0, 4.0), (6.0, 4.0), (6.0, 7.0), (2.0, 7.0)]],
    &[&[(6.0, 1.0), (2.0, 1.0), (2.0, 7.0), (6.0, 7.0), (6.0, 4.0), (2.0, 4.0)]],
    &[&[(2.0, 1.0), (6.0, 1.0), (3.0, 7.0)]],
    &[
        &[(2.0, 1.0), (6.0, 1.0), (6.0, 7.0), (2.0, 7.0), (2.0, 1.0)],
        &[(2.0, 4.0), (6.0, 4.0)],
    ],
    &[&[(6.0, 4.0), (2.0, 4.0), (2.0, 1.0), (6.0, 1.0), (6.0, 7.0), (2.0, 7.0)]],
];

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    libm::sqrt(qx * qx + qy * qy)
}

/// Rasterizes one glyph. `thickness` is 1 (thin) or 2 (thick), `slant` is
/// -1, 0 or +1 (shear of the strokes about the vertical center). Pixel
/// values are anti-aliased stroke coverage mapped into `[-1, 1]`.
pub fn render_glyph(class: usize, thickness: u8, slant: i8) -> Vec<f64> {
    let radius = if thickness >= 2 { 0.95 } else { 0.45 };
    let shear = 0.3 * slant as f64;
    let warp = |(x, y): (f64, f64)| (x + shear * (4.0 - y), y);
    let mut out = vec![0.0; GLYPH_DIM];
    for row in 0..GLYPH_SIDE {
        for col in 0..GLYPH_SIDE {
            let p = (col as f64 + 0.5, row as f64 + 0.5);
            let d = TEMPLATES[class]
                .iter()
                .flat_map(|stroke| stroke.windows(2))
                .map(|seg| segment_distance(p, warp(seg[0]), warp(seg[1])))
                .fold(f64::INFINITY, f64::min);
            let coverage = (radius + 0.5 - d).clamp(0.0, 1.0);
            out[row * GLYPH_SIDE + col] = 2.0 * coverage - 1.0;
        }
    }
    out
}

/// `n` glyphs with uniformly drawn (class, thickness, slant). Labels are the
/// classes; factors are `[class, thickness, slant]` per row.
pub fn gen_glyphs(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut cache: Vec<Option<Vec<f64>>> = vec![None; GLYPH_CLASSES * 6];
    let mut rng = Rng::seeded(seed);
    let mut data = Vec::with_capacity(n * GLYPH_DIM);
    let mut labels = Vec::with_capacity(n);
    let mut factors = Vec::with_capacity(n * 3);
    for _ in 0..n {
        let class = rng.below(GLYPH_CLASSES);
        let thickness = rng.below(2) as u8 + 1;
        let slant = rng.below(3) as i8 - 1;
        let key = class * 6 + (thickness as usize - 1) * 3 + (slant + 1) as usize;
        let bitmap =
            cache[key].get_or_insert_with(|| render_glyph(class, thickness, slant));
        data.extend_from_slice(bitmap);
        labels.push(class);
        factors.extend_from_slice(&[class as f64, thickness as f64, slant as f64]);
    }
    Dataset::new(
        Tensor::new(vec![n, GLYPH_DIM], data)?,
        Some(labels),
        Some(factors),
        3,
        Split::Train,
    )
}

/// Epoch-seeded minibatches; the trailing partial batch is dropped.
#[derive(Debug, Clone)]
pub struct Batches<'a> {
    dataset: &'a Dataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Batches<'_> {
    /// Batches per epoch.
    pub fn per_epoch(&self) -> usize {
        self.order.len() / self.batch_size
    }
}

impl ExactSizeIterator for Batches<'_> {}

impl Iterator for Batches<'_> {
    type Item = Tensor;

    fn next(&mut self) -> Option<Tensor> {
        let start = self.next * self.batch_size;
        if start + self.batch_size > self.order.len() {
            return None;
        }
        self.next += 1;
        Some(
            self.dataset
                .samples
                .select_rows(&self.order[start..start + self.batch_size]),
        )
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.per_epoch().saturating_sub(self.next);
        (left, Some(left))
    }

    fn nth(&mut self, n: usize) -> Option<Tensor> {
        self.next += n;
        self.next()
    }
}

pub fn batches(dataset: &Dataset, batch_size: usize, seed: u64, epoch: u64) -> Result<Batches<'_>> {
    if batch_size == 0 || batch_size > dataset.len() {
        return Err(Error::InvalidArgument(alloc::format!(
            "batch size {batch_size} must be in 1..={}",
            dataset.len()
        )));
    }
    let order = Rng::derived(seed, &[purpose::SHUFFLE, epoch]).permutation(dataset.len());
    Ok(Batches {
        dataset,
        order,
        batch_size,
        next: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    #[test]
    fn ring_zero_spread_limit() {
        let d = gen_gauss_ring(500, 8, 2.0, 1e-14, 3).unwrap();
        let g = ring_geometry(8, 2.0, 1e-14);
        let labels = d.labels.as_ref().unwrap();
        for i in 0..d.len() {
            let c = g.centers[labels[i]];
            let r = d.samples.row(i);
            assert!((r[0] - c[0]).abs() < 1e-9 && (r[1] - c[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn ring_labels_are_balanced() {
        let d = gen_gauss_ring(8000, 8, 2.0, 0.05, 11).unwrap();
        let mut hist = [0usize; 8];
        for &l in d.labels.as_ref().unwrap() {
            hist[l] += 1;
        }
        for h in hist {
            assert!((h as f64 - 1000.0).abs() <= 50.0, "{hist:?}");
        }
    }

    #[test]
    fn ring_is_seeded_and_in_range() {
        let a = gen_gauss_ring(300, 8, 2.0, 0.5, 1).unwrap();
        assert_eq!(a, gen_gauss_ring(300, 8, 2.0, 0.5, 1).unwrap());
        assert_ne!(a, gen_gauss_ring(300, 8, 2.0, 0.5, 2).unwrap());
        assert!(a.samples.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn ring_rejects_bad_arguments() {
        assert!(gen_gauss_ring(10, 1, 2.0, 0.1, 0).is_err());
        assert!(gen_gauss_ring(10, 8, 2.0, 0.0, 0).is_err());
        assert!(matches!(gen_gauss_ring(0, 8, 2.0, 0.1, 0), Err(Error::EmptyDataset)));
    }

    #[test]
    fn glyph_pixels_in_range_and_pure() {
        let d = gen_glyphs(400, 5).unwrap();
        assert_eq!(d.dim(), 64);
        assert!(d.samples.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        for i in 0..d.len() {
            let f = d.factor_row(i).unwrap();
            let expected = render_glyph(f[0] as usize, f[1] as u8, f[2] as i8);
            assert_eq!(d.samples.row(i), &expected[..]);
        }
    }

    #[test]
    fn glyph_bitmaps_are_distinct() {
        let mut seen = BTreeSet::new();
        for class in 0..GLYPH_CLASSES {
            for thickness in 1..=2u8 {
                for slant in -1..=1i8 {
                    let bits: Vec<u64> = render_glyph(class, thickness, slant)
                        .iter()
                        .map(|v| v.to_bits())
                        .collect();
                    assert!(seen.insert(bits), "duplicate glyph {class} {thickness} {slant}");
                }
            }
        }
    }

    #[test]
    fn thick_glyphs_are_brighter() {
        let d = gen_glyphs(1000, 8).unwrap();
        let (mut thick, mut thin) = ((0.0, 0usize), (0.0, 0usize));
        for i in 0..d.len() {
            let mean = d.samples.row(i).iter().sum::<f64>() / 64.0;
            if d.factor_row(i).unwrap()[1] == 2.0 {
                thick = (thick.0 + mean, thick.1 + 1);
            } else {
                thin = (thin.0 + mean, thin.1 + 1);
            }
        }
        assert!(thick.0 / thick.1 as f64 > thin.0 / thin.1 as f64);
    }

    #[test]
    fn batches_cover_a_permutation() {
        let d = gen_gauss_ring(103, 8, 2.0, 0.1, 4).unwrap();
        let b = batches(&d, 10, 9, 0).unwrap();
        assert_eq!(b.per_epoch(), 10);
        let mut rows: Vec<[u64; 2]> = Vec::new();
        for batch in b {
            assert_eq!(batch.shape(), &[10, 2]);
            for i in 0..10 {
                let r = batch.row(i);
                rows.push([r[0].to_bits(), r[1].to_bits()]);
            }
        }
        let all: BTreeSet<[u64; 2]> = (0..d.len())
            .map(|i| [d.samples.row(i)[0].to_bits(), d.samples.row(i)[1].to_bits()])
            .collect();
        let got: BTreeSet<[u64; 2]> = rows.iter().copied().collect();
        assert_eq!(got.len(), 100);
        assert!(got.is_subset(&all));
    }

    #[test]
    fn batches_are_epoch_seeded() {
        let d = gen_gauss_ring(1000, 8, 2.0, 0.1, 4).unwrap();
        let collect = |seed, epoch| batches(&d, 100, seed, epoch).unwrap().collect::<Vec<_>>();
        assert_eq!(collect(1, 0), collect(1, 0));
        assert_ne!(collect(1, 0), collect(1, 1));
        assert!(batches(&d, 1001, 1, 0).is_err());
        assert!(batches(&d, 0, 1, 0).is_err());
    }

    #[test]
    fn batches_nth_skips_whole_batches() {
        let d = gen_gauss_ring(100, 8, 2.0, 0.1, 4).unwrap();
        let all: Vec<_> = batches(&d, 10, 3, 2).unwrap().collect();
        let mut it = batches(&d, 10, 3, 2).unwrap();
        assert_eq!(it.nth(4).unwrap(), all[4]);
        assert_eq!(it.next().unwrap(), all[5]);
    }
}
