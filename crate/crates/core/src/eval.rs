//! Point-set surface metrics: accuracy, completeness, precision, recall and
//! F-score under a distance threshold.

use crate::camera::Camera;
use crate::mesh::Mesh;
use crate::raster::Raster;
use crate::{Error, Result, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

pub const DEFAULT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub comp: f64,
    pub prec: f64,
    pub recall: f64,
    pub fscore: f64,
    #[serde(rename = "T")]
    pub threshold: f64,
    pub n_pred: usize,
    pub n_gt: usize,
}

/// Area-weighted uniform samples on a mesh: `round(area · density)` points.
pub fn sample_mesh_points(mesh: &Mesh, density: f64, seed: u64) -> Vec<Vec3> {
    let areas: Vec<f64> = mesh.triangles.iter().map(|t| mesh.triangle_area(t)).collect();
    let total: f64 = areas.iter().sum();
    let n = (total * density).round() as usize;
    if n == 0 || total <= 0.0 {
        return Vec::new();
    }
    let mut cdf = Vec::with_capacity(areas.len());
    let mut acc = 0.0;
    for a in &areas {
        acc += a;
        cdf.push(acc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r = rng.gen_range(0.0..total);
            let k = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
            let [a, b, c] = mesh.triangles[k].map(|i| mesh.vertices[i as usize]);
            let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            a + (b - a) * u + (c - a) * v
        })
        .collect()
}

/// Uniform hash grid for exact nearest-neighbor queries.
pub struct PointIndex<'a> {
    points: &'a [Vec3],
    cell: f64,
    cells: HashMap<[i64; 3], Vec<u32>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> PointIndex<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        assert!(cell > 0.0);
        let mut cells: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
        let mut lo = [i64::MAX; 3];
        let mut hi = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = Self::key(p, cell);
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
            cells.entry(k).or_default().push(i as u32);
        }
        PointIndex {
            points,
            cell,
            cells,
            lo,
            hi,
        }
    }

    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
    }

    /// Distance to the nearest indexed point, searching shells of cells
    /// until no unvisited cell can hold a closer point.
    pub fn nearest_distance(&self, q: &Vec3) -> f64 {
        if self.points.is_empty() {
            return f64::INFINITY;
        }
        let k = Self::key(q, self.cell);
        let mut best = f64::INFINITY;
        let max_r = (0..3)
            .map(|a| (k[a] - self.lo[a]).abs().max((self.hi[a] - k[a]).abs()))
            .max()
            .unwrap();
        let mut r = 0i64;
        loop {
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(ids) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            for &i in ids {
                                best = best.min((self.points[i as usize] - q).norm_squared());
                            }
                        }
                    }
                }
            }
            // every point in shell r+1 or beyond is at least r * cell away
            if best.is_finite() && best.sqrt() <= r as f64 * self.cell {
                break;
            }
            if r >= max_r {
                break;
            }
            r += 1;
        }
        best.sqrt()
    }
}

fn nn_distances(from: &[Vec3], to: &[Vec3], cell: f64) -> Vec<f64> {
    let index = PointIndex::new(to, cell);
    from.par_iter().map(|p| index.nearest_distance(p)).collect()
}

/// Metrics between predicted points `pred` and ground truth `gt`.
pub fn evaluate(pred: &[Vec3], gt: &[Vec3], threshold: f64) -> Result<Metrics> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptySet);
    }
    let cell = threshold.max(1e-6);
    let d_pred = nn_distances(pred, gt, cell);
    let d_gt = nn_distances(gt, pred, cell);
    Ok(metrics_from_distances(&d_pred, &d_gt, threshold))
}

pub fn metrics_from_distances(d_pred: &[f64], d_gt: &[f64], threshold: f64) -> Metrics {
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let frac = |d: &[f64]| d.iter().filter(|&&x| x < threshold).count() as f64 / d.len() as f64;
    let prec = frac(d_pred);
    let recall = frac(d_gt);
    let fscore = if prec + recall > 0.0 {
        2.0 * prec * recall / (prec + recall)
    } else {
        0.0
    };
    Metrics {
        acc: mean(d_pred),
        comp: mean(d_gt),
        prec,
        recall,
        fscore,
        threshold,
        n_pred: d_pred.len(),
        n_gt: d_gt.len(),
    }
}

/// Keep points that project inside at least one camera. With depth maps,
/// a point must also lie no further than `tol` behind the observed surface.
pub fn cull_to_views(points: &[Vec3], cameras: &[Camera], depths: Option<&[Raster]>, tol: f64) -> Vec<Vec3> {
    points
        .par_iter()
        .filter(|x| {
            cameras.iter().enumerate().any(|(k, cam)| {
                let Ok(p) = cam.project(x) else {
                    return false;
                };
                if !p.in_frame {
                    return false;
                }
                match depths {
                    None => true,
                    Some(d) => d[k]
                        .nearest(p.pixel.x, p.pixel.y)
                        .map(|(u, v)| d[k].get(u, v, 0) as f64)
                        .is_some_and(|z| z > 0.0 && p.depth <= z + tol),
                }
            })
        })
        .copied()
        .collect()
}
