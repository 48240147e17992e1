//! Image grids (binary PGM) and CSV artifacts.

use std::fmt::Write as _;
use std::path::Path;

use swae_core::data::GLYPH_SIDE;
use swae_core::latent::AttributeDirection;
use swae_core::train::{EpochRecord, TrainRecord};
use swae_core::Tensor;

use crate::container::write_atomic;
use crate::error::Result;

/// Gray level of the separator lines between cells.
pub const MARGIN_GRAY: u8 = 128;

pub fn pixel(v: f64) -> u8 {
    ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Grid side length in pixels for `cells` cells of `GLYPH_SIDE` pixels
/// separated and framed by 1-pixel margins.
pub fn grid_extent(cells: usize) -> usize {
    cells * GLYPH_SIDE + cells + 1
}

/// Square-ish column count for `n` cells.
pub fn grid_columns(n: usize) -> usize {
    let mut c = 1;
    while c * c < n {
        c += 1;
    }
    c
}

/// P5 image of glyph rows laid out row-major in a `rows x cols` grid.
/// Cells without a glyph stay at the margin gray.
pub fn glyph_grid(glyphs: &Tensor, cols: usize) -> Vec<u8> {
    let n = glyphs.rows();
    let rows = n.div_ceil(cols).max(1);
    let (w, h) = (grid_extent(cols), grid_extent(rows));
    let mut img = vec![MARGIN_GRAY; w * h];
    for k in 0..n {
        let (gr, gc) = (k / cols, k % cols);
        let (top, left) = (1 + gr * (GLYPH_SIDE + 1), 1 + gc * (GLYPH_SIDE + 1));
        for y in 0..GLYPH_SIDE {
            for x in 0..GLYPH_SIDE {
                img[(top + y) * w + left + x] = pixel(glyphs.row(k)[y * GLYPH_SIDE + x]);
            }
        }
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&img);
    out
}

pub fn write_glyph_grid(path: &Path, glyphs: &Tensor, cols: usize) -> Result<()> {
    write_atomic(path, &glyph_grid(glyphs, cols))
}

/// `(width, height, pixels)` of a P5 file produced by [`glyph_grid`].
pub fn parse_pgm(bytes: &[u8]) -> Option<(usize, usize, &[u8])> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes.get(pos)?.is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?);
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return None;
    }
    let (w, h): (usize, usize) = (fields[1].parse().ok()?, fields[2].parse().ok()?);
    let pixels = bytes.get(pos + 1..)?;
    (pixels.len() == w * h).then_some((w, h, pixels))
}

fn csv_float(x: f64) -> String {
    format!("{x:?}")
}

/// `x,y,source` rows for 2-D point sets.
pub fn scatter_csv(sets: &[(&str, &Tensor)]) -> String {
    let mut out = String::from("x,y,source\n");
    for (source, points) in sets {
        for i in 0..points.rows() {
            let p = points.row(i);
            let _ = writeln!(out, "{},{},{source}", csv_float(p[0]), csv_float(p[1]));
        }
    }
    out
}

pub fn train_log_csv(records: &[TrainRecord], heads: usize) -> String {
    let mut out = String::from("step,epoch,stage1_recon,stage1_d");
    for h in 0..heads {
        let _ = write!(out, ",stage2_recon_{h}");
    }
    for h in 0..heads {
        let _ = write!(out, ",stage2_d_{h}");
    }
    out.push('\n');
    for r in records {
        let _ = write!(out, "{},{},{},{}", r.step, r.epoch, csv_float(r.stage1_recon), csv_float(r.stage1_d));
        for v in r.stage2_recon.iter().chain(&r.stage2_d) {
            let _ = write!(out, ",{}", csv_float(*v));
        }
        out.push('\n');
    }
    out
}

/// Wall-clock times live apart from the loss log so that the latter is
/// reproducible byte for byte.
pub fn timing_csv(records: &[TrainRecord]) -> String {
    let mut out = String::from("step,wall_time\n");
    for r in records {
        let _ = writeln!(out, "{},{:.3}", r.step, r.wall_time);
    }
    out
}

pub fn epoch_log_csv(epochs: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,step,val_mse,train_recon\n");
    for e in epochs {
        let _ = writeln!(out, "{},{},{},{}", e.epoch, e.step, csv_float(e.val_mse), csv_float(e.train_recon));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub head: usize,
    pub mse: f64,
    pub fid: f64,
    pub icp: f64,
    pub modes_hit: usize,
    pub hq_fraction: f64,
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("step,head,mse,fid,icp,modes_hit,hq_fraction\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.step,
            r.head,
            csv_float(r.mse),
            csv_float(r.fid),
            csv_float(r.icp),
            r.modes_hit,
            csv_float(r.hq_fraction)
        );
    }
    out
}

pub fn direction_csv(dirs: &[AttributeDirection]) -> String {
    let mut out = String::new();
    for d in dirs {
        let _ = write!(out, "{},{}", d.name, d.direction.len());
        for v in &d.direction {
            let _ = write!(out, ",{}", csv_float(*v));
        }
        out.push('\n');
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}
