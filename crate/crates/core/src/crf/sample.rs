use super::{softmax_into, CrfConfig, Property};
use crate::grid::{Corners, SparseDenseGrid};
use crate::{Error, Result, Vec3};
use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::UnitSphere;
use rayon::prelude::*;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const DUMP_MAGIC: &[u8; 4] = b"SSMP";
const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct SurfaceSample {
    pub position: Vec3,
    /// Residual SDF at `position`.
    pub sdf: f64,
    pub color: Vec3,
    /// Unit normal `∇f / ‖∇f‖`.
    pub normal: Vec3,
    pub logits: Vec<f64>,
    pub corners: Corners,
}

#[derive(Debug, Clone, Default)]
pub struct SurfaceSampleSet {
    pub samples: Vec<SurfaceSample>,
    pub n_labels: usize,
}

impl SurfaceSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Row-major `n × C` label distributions `softmax(logits / τ)`.
    pub fn label_distributions(&self, tau: f64) -> Vec<f64> {
        let c = self.n_labels;
        let mut out = vec![0.0; self.len() * c];
        for (s, row) in self.samples.iter().zip(out.chunks_exact_mut(c.max(1))) {
            softmax_into(&s.logits, tau, row);
        }
        out
    }

    /// Kernel features with each channel group divided by its σ. The group
    /// belonging to `exclude` is dropped. Returns the flat features and `d`.
    pub fn features(&self, cfg: &CrfConfig, exclude: Option<Property>) -> (Vec<f64>, usize) {
        let c = self.n_labels;
        let keep_color = exclude != Some(Property::Color);
        let keep_normal = exclude != Some(Property::Normal);
        let keep_label = exclude != Some(Property::Label);
        let d = 4 + 3 * keep_color as usize + 3 * keep_normal as usize + c * keep_label as usize;
        let mut out = Vec::with_capacity(d * self.len());
        for s in &self.samples {
            out.extend(s.position.iter().map(|v| v / cfg.sigma_position));
            if keep_color {
                out.extend(s.color.iter().map(|v| v / cfg.sigma_color));
            }
            if keep_normal {
                out.extend(s.normal.iter().map(|v| v / cfg.sigma_normal));
            }
            if keep_label {
                out.extend(s.logits.iter().map(|v| v / cfg.sigma_label));
            }
            out.push(s.sdf / cfg.sigma_sdf);
        }
        (out, d)
    }

    /// Keep at most `max` samples, chosen uniformly, in their original order.
    pub fn subsample(&mut self, max: usize, seed: u64) {
        if self.len() <= max {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut keep = vec![false; self.len()];
        for i in index::sample(&mut rng, self.len(), max) {
            keep[i] = true;
        }
        let old = std::mem::take(&mut self.samples);
        self.samples = old.into_iter().zip(keep).filter_map(|(s, k)| k.then_some(s)).collect();
    }

    /// Binary dump: header `SSMP`, version, count, labels (u32 LE), then per
    /// sample position, color, normal and logits as f32 LE.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(DUMP_MAGIC)?;
        for v in [DUMP_VERSION, self.len() as u32, self.n_labels as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        for s in &self.samples {
            let vals = s.position.iter().chain(s.color.iter()).chain(s.normal.iter()).chain(s.logits.iter());
            for &v in vals {
                w.write_all(&(v as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Read a dump written by [`SurfaceSampleSet::write_dump`] as
/// `(position, color, normal, logits)` rows.
#[allow(clippy::type_complexity)]
pub fn read_sample_dump(path: &Path) -> Result<Vec<(Vec3, Vec3, Vec3, Vec<f64>)>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DUMP_MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let mut word = [0u8; 4];
    let mut header = [0u32; 3];
    for h in &mut header {
        r.read_exact(&mut word)?;
        *h = u32::from_le_bytes(word);
    }
    let [version, n, c] = header;
    if version != DUMP_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let mut read = |k: usize| -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(k);
        for _ in 0..k {
            r.read_exact(&mut word)?;
            v.push(f32::from_le_bytes(word) as f64);
        }
        Ok(v)
    };
    let mut out = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let v = read(9)?;
        out.push((
            Vec3::new(v[0], v[1], v[2]),
            Vec3::new(v[3], v[4], v[5]),
            Vec3::new(v[6], v[7], v[8]),
            read(c as usize)?,
        ));
    }
    Ok(out)
}

/// Query every property at `x`. `None` unless the cell is fully observed
/// and the SDF gradient is non-degenerate.
fn query(grid: &SparseDenseGrid, x: Vec3) -> Option<SurfaceSample> {
    let corners = grid.corners(&x)?;
    let (sdf, g) = grid.interp_sdf_grad(&corners);
    let len = g.norm();
    if !(len > 1e-8) {
        return None;
    }
    let mut logits = vec![0.0; grid.n_labels()];
    grid.interp_logits(&corners, &mut logits);
    Some(SurfaceSample {
        position: x,
        sdf,
        color: grid.interp_color(&corners),
        normal: g / len,
        logits,
        corners,
    })
}

/// Regula falsi on the bracket `[a, b]` of a sign change along the ray.
fn refine_crossing(grid: &SparseDenseGrid, o: &Vec3, d: &Vec3, mut a: (f64, f64), mut b: (f64, f64), tol: f64) -> Option<Vec3> {
    let mut best = None;
    for _ in 0..12 {
        let t = if a.1 == b.1 { 0.5 * (a.0 + b.0) } else { a.0 - a.1 * (b.0 - a.0) / (b.1 - a.1) };
        let x = o + d * t;
        let s = grid.interp_sdf(&grid.corners(&x)?);
        best = Some((x, s));
        if s.abs() < tol {
            break;
        }
        if (s < 0.0) == (a.1 < 0.0) {
            a = (t, s);
        } else {
            b = (t, s);
        }
    }
    best.filter(|(_, s)| s.abs() < tol).map(|(x, _)| x)
}

fn sample_view(grid: &SparseDenseGrid, center: Vec3, radius: f64, lo: Vec3, hi: Vec3, rays: usize, seed: u64, view: u64) -> Vec<SurfaceSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(view);
    let u: [f64; 3] = rng.sample(UnitSphere);
    let eye = center + Vec3::from(u) * radius;
    let vs = grid.voxel_size();
    let step = 0.5 * vs;
    let max_samples = (4.0 * radius / step).ceil() as usize + 8;
    let tol = 0.01 * vs;
    let mut out = Vec::new();
    let mut pts = Vec::new();
    for _ in 0..rays {
        let target = Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), rng.gen_range(lo.z..hi.z));
        let Some(dir) = (target - eye).try_normalize(1e-12) else {
            continue;
        };
        grid.march_into(&eye, &dir, step, rng.gen(), max_samples, &mut pts);
        let vals: Vec<Option<f64>> = pts.iter().map(|p| grid.corners(&p.x).map(|c| grid.interp_sdf(&c))).collect();
        for k in 1..pts.len() {
            let (Some(sa), Some(sb)) = (vals[k - 1], vals[k]) else {
                continue;
            };
            let consecutive = pts[k].t - pts[k - 1].t < 1.5 * step;
            if !consecutive || (sa < 0.0) == (sb < 0.0) {
                continue;
            }
            let x = if sa == 0.0 {
                Some(pts[k - 1].x)
            } else {
                refine_crossing(grid, &eye, &dir, (pts[k - 1].t, sa), (pts[k].t, sb), tol)
            };
            if let Some(s) = x.and_then(|x| query(grid, x)) {
                out.push(s);
            }
        }
    }
    out
}

/// Zero crossings seen from `n_viewpoints` random points on the bounding
/// sphere of the allocated blocks, `rays_per_view` rays each, aimed at
/// uniform points in the bounding box.
pub fn sample_surface(grid: &SparseDenseGrid, n_viewpoints: usize, rays_per_view: usize, seed: u64) -> Result<SurfaceSampleSet> {
    let (lo, hi) = grid.world_bounds().ok_or(Error::EmptySurface)?;
    let center = (lo + hi) * 0.5;
    let radius = 0.5 * (hi - lo).norm() * 1.05;
    let views: Vec<Vec<SurfaceSample>> = (0..n_viewpoints as u64)
        .into_par_iter()
        .map(|v| sample_view(grid, center, radius, lo, hi, rays_per_view, seed, v))
        .collect();
    let samples: Vec<SurfaceSample> = views.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(Error::EmptySurface);
    }
    Ok(SurfaceSampleSet {
        samples,
        n_labels: grid.n_labels(),
    })
}
