//! Per-frame depth scale calibration.
//!
//! Each frame carries a low-resolution grid of multiplicative scales that is
//! bilinearly upsampled over the image. The grids are fit so that scaled
//! prior depth agrees with sparse landmarks (unary term) and with the depth
//! of covisible frames after reprojection (binary term).

mod loss;
mod optimize;

pub use loss::{binary_loss, binary_loss_gray, unary_loss, PairLoss};
pub use optimize::{optimize_scales, write_trace_csv, CalibConfig, CalibRecord, Calibration};

use crate::{Error, Result, Vec2, Vec3};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const DEFAULT_ROWS: usize = 24;
pub const DEFAULT_COLS: usize = 32;
pub const MIN_SCALE: f64 = 1e-3;
pub const MAX_SCALE: f64 = 1e3;

/// Control points span the image corners: point `(r, c)` sits at pixel
/// `(c (W-1) / (cols-1), r (H-1) / (rows-1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleField {
    rows: usize,
    cols: usize,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScaleField {
    pub fn new(rows: usize, cols: usize, width: usize, height: usize, value: f64) -> Self {
        assert!(rows >= 2 && cols >= 2, "scale grid needs at least 2x2 control points");
        assert!(width >= 2 && height >= 2);
        ScaleField {
            rows,
            cols,
            width,
            height,
            values: vec![value; rows * cols],
        }
    }

    /// Default 24x32 grid with a constant value.
    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::new(DEFAULT_ROWS, DEFAULT_COLS, width, height, value)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn image_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    fn grid_coord(&self, px: f64, py: f64) -> (usize, usize, f64, f64, f64, f64) {
        let sx = (self.cols - 1) as f64 / (self.width - 1) as f64;
        let sy = (self.rows - 1) as f64 / (self.height - 1) as f64;
        let gx = px * sx;
        let gy = py * sy;
        let (cgx, dsx) = if gx <= 0.0 {
            (0.0, 0.0)
        } else if gx >= (self.cols - 1) as f64 {
            ((self.cols - 1) as f64, 0.0)
        } else {
            (gx, sx)
        };
        let (cgy, dsy) = if gy <= 0.0 {
            (0.0, 0.0)
        } else if gy >= (self.rows - 1) as f64 {
            ((self.rows - 1) as f64, 0.0)
        } else {
            (gy, sy)
        };
        let x0 = (cgx.floor() as usize).min(self.cols - 2);
        let y0 = (cgy.floor() as usize).min(self.rows - 2);
        (x0, y0, cgx - x0 as f64, cgy - y0 as f64, dsx, dsy)
    }

    /// Control-point indices and bilinear weights at a pixel.
    pub fn stencil(&self, px: f64, py: f64) -> [(usize, f64); 4] {
        let (x0, y0, fx, fy, _, _) = self.grid_coord(px, py);
        let i = y0 * self.cols + x0;
        [
            (i, (1.0 - fx) * (1.0 - fy)),
            (i + 1, fx * (1.0 - fy)),
            (i + self.cols, (1.0 - fx) * fy),
            (i + self.cols + 1, fx * fy),
        ]
    }

    /// Stencil plus d(weight)/d(px) and d(weight)/d(py) per tap.
    pub fn stencil_with_grad(&self, px: f64, py: f64) -> ([(usize, f64); 4], [(f64, f64); 4]) {
        let (x0, y0, fx, fy, sx, sy) = self.grid_coord(px, py);
        let i = y0 * self.cols + x0;
        (
            [
                (i, (1.0 - fx) * (1.0 - fy)),
                (i + 1, fx * (1.0 - fy)),
                (i + self.cols, (1.0 - fx) * fy),
                (i + self.cols + 1, fx * fy),
            ],
            [
                (-(1.0 - fy) * sx, -(1.0 - fx) * sy),
                ((1.0 - fy) * sx, -fx * sy),
                (-fy * sx, (1.0 - fx) * sy),
                (fy * sx, fx * sy),
            ],
        )
    }

    pub fn lookup(&self, px: f64, py: f64) -> f64 {
        self.stencil(px, py).iter().map(|&(i, w)| w * self.values[i]).sum()
    }

    /// Scale and its image-space gradient `(φ, ∂φ/∂px, ∂φ/∂py)`.
    pub fn lookup_with_grad(&self, px: f64, py: f64) -> (f64, f64, f64) {
        let (taps, grads) = self.stencil_with_grad(px, py);
        let mut out = (0.0, 0.0, 0.0);
        for (&(i, w), &(dx, dy)) in taps.iter().zip(&grads) {
            let v = self.values[i];
            out.0 += w * v;
            out.1 += dx * v;
            out.2 += dy * v;
        }
        out
    }

    pub fn clamp(&mut self, lo: f64, hi: f64) {
        for v in &mut self.values {
            *v = v.clamp(lo, hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub frame: usize,
    pub pixel: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseLandmark {
    pub id: u64,
    pub position: Vec3,
    pub observations: Vec<Observation>,
}

impl SparseLandmark {
    pub fn observation_in(&self, frame: usize) -> Option<&Observation> {
        self.observations.iter().find(|o| o.frame == frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovisPair {
    pub i: usize,
    pub j: usize,
    pub count: usize,
}

/// Covisible frame pairs, stored once with `i < j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CovisibilityGraph {
    pub pairs: Vec<CovisPair>,
}

impl CovisibilityGraph {
    /// Normalize to `i < j`, drop self pairs and merge duplicates by max count.
    pub fn from_pairs(pairs: Vec<CovisPair>) -> Self {
        let mut map = std::collections::BTreeMap::new();
        for p in pairs {
            if p.i == p.j {
                continue;
            }
            let key = (p.i.min(p.j), p.i.max(p.j));
            let e = map.entry(key).or_insert(0);
            *e = (*e).max(p.count);
        }
        CovisibilityGraph {
            pairs: map.into_iter().map(|((i, j), count)| CovisPair { i, j, count }).collect(),
        }
    }

    pub fn count(&self, i: usize, j: usize) -> usize {
        let key = (i.min(j), i.max(j));
        self.pairs
            .binary_search_by_key(&key, |p| (p.i, p.j))
            .map_or(0, |k| self.pairs[k].count)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Both orientations of every pair with at least `min_count` shared landmarks.
    pub fn directed(&self, min_count: usize) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .filter(|p| p.count >= min_count)
            .flat_map(|p| [(p.i, p.j), (p.j, p.i)])
            .collect()
    }
}

/// Write scale fields: header `frame_count, rows, cols` as `u32`, then each
/// grid row-major as `f32`.
pub fn save_scales(path: &Path, fields: &[ScaleField]) -> Result<()> {
    let (rows, cols) = fields.first().map_or((DEFAULT_ROWS, DEFAULT_COLS), |f| (f.rows, f.cols));
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for v in [fields.len() as u32, rows as u32, cols as u32] {
        w.write_all(&v.to_le_bytes())?;
    }
    for f in fields {
        assert_eq!((f.rows, f.cols), (rows, cols), "all scale fields share one shape");
        for &v in &f.values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read scale fields written by [`save_scales`] for images of `width x height`.
pub fn load_scales(path: &Path, width: usize, height: usize) -> Result<Vec<ScaleField>> {
    let f = std::fs::File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
        _ => e.into(),
    })?;
    let mut r = BufReader::new(f);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(Error::format(path, "truncated header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (n, rows, cols) = (word(0), word(1), word(2));
    if rows < 2 || cols < 2 {
        return Err(Error::format(path, "scale grid smaller than 2x2"));
    }
    let expected = 12 + 4 * n * rows * cols;
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            expected,
            got: bytes.len(),
        });
    }
    Ok((0..n)
        .map(|k| {
            let mut s = ScaleField::new(rows, cols, width, height, 1.0);
            for (i, v) in s.values.iter_mut().enumerate() {
                let o = 12 + 4 * (k * rows * cols + i);
                *v = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
            }
            s
        })
        .collect())
}
