//! Projective fusion of scaled depth, color and semantics into the grid,
//! followed by sparse Gaussian de-noising.
//!
//! A voxel at camera depth `d_v` that projects onto pixel `p` observes the
//! signed distance `d° = D(p) φ(p) − d_v`, positive in front of the surface.
//! Observations with `d° < −μ` lie too far behind the surface and are
//! rejected; the rest contribute `min(d°, μ)`. Each payload is the mean of
//! its observations.

use crate::calib::ScaleField;
use crate::dataio::Frame;
use crate::grid::SparseDenseGrid;
use crate::raster::is_valid_depth;
use crate::Vec3;
use rayon::prelude::*;

/// Fixed-point scale for accumulated sums. Integer sums make the fused
/// result independent of frame order.
const FIXED: f64 = (1u64 << 32) as f64;

#[inline]
fn to_fixed(v: f64) -> i64 {
    (v * FIXED).round() as i64
}

#[inline]
fn from_fixed(sum: i64, count: u32) -> f64 {
    sum as f64 / FIXED / count as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FusionStats {
    /// Voxel observations integrated.
    pub integrated: usize,
    /// Observations behind the truncation band.
    pub rejected: usize,
    /// Voxels landing on pixels without valid depth.
    pub no_depth: usize,
}

impl std::ops::AddAssign for FusionStats {
    fn add_assign(&mut self, o: Self) {
        self.integrated += o.integrated;
        self.rejected += o.rejected;
        self.no_depth += o.no_depth;
    }
}

/// One accepted observation of a voxel.
struct Sample<'a> {
    sdf: f64,
    color: &'a [f32],
    logits: Option<&'a [f32]>,
}

/// Observation of world point `x` in `frame`, if any.
#[inline]
fn observe<'a>(frame: &'a Frame, scale: &ScaleField, x: &Vec3, mu: f64, stats: &mut FusionStats) -> Option<Sample<'a>> {
    let proj = frame.camera.project(x).ok()?;
    let (u, v) = frame.depth.nearest(proj.pixel.x, proj.pixel.y)?;
    let d = frame.depth.get(u, v, 0);
    if !is_valid_depth(d) {
        stats.no_depth += 1;
        return None;
    }
    let sdf = d as f64 * scale.lookup(u as f64, v as f64) - proj.depth;
    if sdf < -mu {
        stats.rejected += 1;
        return None;
    }
    stats.integrated += 1;
    Some(Sample {
        sdf: sdf.min(mu),
        color: frame.image.pixel(u, v),
        logits: frame.semantic.as_ref().map(|s| s.pixel(u, v)),
    })
}

/// Sums and counts for every voxel of the grid.
#[derive(Debug, Clone)]
pub struct FusionAccumulator {
    n_labels: usize,
    sdf: Vec<i64>,
    color: Vec<[i64; 3]>,
    logits: Vec<i64>,
    count: Vec<u32>,
}

impl FusionAccumulator {
    pub fn new(grid: &SparseDenseGrid) -> Self {
        Self::with_len(grid.num_voxels(), grid.n_labels())
    }

    fn with_len(n: usize, n_labels: usize) -> Self {
        FusionAccumulator {
            n_labels,
            sdf: vec![0; n],
            color: vec![[0; 3]; n],
            logits: vec![0; n * n_labels],
            count: vec![0; n],
        }
    }

    fn add(&mut self, i: usize, s: &Sample) {
        self.sdf[i] += to_fixed(s.sdf);
        for k in 0..3 {
            self.color[i][k] += to_fixed(s.color[k] as f64);
        }
        if let Some(l) = s.logits {
            let c = self.n_labels;
            for (acc, &v) in self.logits[i * c..(i + 1) * c].iter_mut().zip(l) {
                *acc += to_fixed(v as f64);
            }
        }
        self.count[i] += 1;
    }

    /// Accumulate one frame's observations of every allocated voxel.
    pub fn fuse_frame(&mut self, grid: &SparseDenseGrid, frame: &Frame, scale: &ScaleField, mu: f64) -> FusionStats {
        assert_eq!(self.count.len(), grid.num_voxels(), "accumulator built for another grid");
        let mut stats = FusionStats::default();
        let n = grid.voxels_per_block();
        for (h, &bc) in grid.coords().iter().enumerate() {
            for local in 0..n {
                let x = grid.voxel_position(grid.voxel_coord(bc, local));
                if let Some(s) = observe(frame, scale, &x, mu, &mut stats) {
                    self.add(h * n + local, &s);
                }
            }
        }
        stats
    }

    /// Write means into the grid. Voxels without observations get weight 0.
    /// Logit vectors are normalized to unit length.
    pub fn finalize(&self, grid: &mut SparseDenseGrid) {
        let n = grid.voxels_per_block();
        let c = self.n_labels;
        for (h, block) in grid.blocks_mut().iter_mut().enumerate() {
            for local in 0..n {
                let i = h * n + local;
                write_voxel(block, local, c, self.count[i], self.sdf[i], &self.color[i], &self.logits[i * c..(i + 1) * c]);
            }
        }
    }
}

fn write_voxel(
    block: &mut crate::grid::VoxelBlock,
    local: usize,
    c: usize,
    count: u32,
    sdf: i64,
    color: &[i64; 3],
    logits: &[i64],
) {
    block.weight[local] = count as f32;
    if count == 0 {
        block.sdf[local] = 0.0;
        block.color[local] = [0.0; 3];
        block.logits[local * c..(local + 1) * c].fill(0.0);
        return;
    }
    block.sdf[local] = from_fixed(sdf, count) as f32;
    block.color[local] = color.map(|s| from_fixed(s, count) as f32);
    let means: Vec<f64> = logits.iter().map(|&s| from_fixed(s, count)).collect();
    let norm = means.iter().map(|v| v * v).sum::<f64>().sqrt();
    for (dst, m) in block.logits[local * c..(local + 1) * c].iter_mut().zip(&means) {
        *dst = if norm > 0.0 { (m / norm) as f32 } else { 0.0 };
    }
}

/// Integrate one frame into the grid as a running mean over its current
/// payload. Logits are left unnormalized; call [`normalize_logits`] after
/// the last frame.
pub fn fuse_frame(grid: &mut SparseDenseGrid, frame: &Frame, scale: &ScaleField, mu: f64) -> FusionStats {
    let n = grid.voxels_per_block();
    let c = grid.n_labels();
    let coords = grid.coords().to_vec();
    let mut stats = FusionStats::default();
    for (h, bc) in coords.into_iter().enumerate() {
        for local in 0..n {
            let x = grid.voxel_position(grid.voxel_coord(bc, local));
            let Some(s) = observe(frame, scale, &x, mu, &mut stats) else {
                continue;
            };
            let b = grid.block_mut(h);
            let w = b.weight[local] as f64;
            let k = 1.0 / (w + 1.0);
            b.sdf[local] = (b.sdf[local] as f64 + (s.sdf - b.sdf[local] as f64) * k) as f32;
            for ch in 0..3 {
                let old = b.color[local][ch] as f64;
                b.color[local][ch] = (old + (s.color[ch] as f64 - old) * k) as f32;
            }
            if let Some(l) = s.logits {
                for (dst, &v) in b.logits[local * c..(local + 1) * c].iter_mut().zip(l) {
                    *dst = (*dst as f64 + (v as f64 - *dst as f64) * k) as f32;
                }
            }
            b.weight[local] = (w + 1.0) as f32;
        }
    }
    stats
}

/// Scale every observed voxel's logit vector to unit length.
pub fn normalize_logits(grid: &mut SparseDenseGrid) {
    let c = grid.n_labels();
    if c == 0 {
        return;
    }
    for b in grid.blocks_mut() {
        for (l, w) in b.logits.chunks_exact_mut(c).zip(&b.weight) {
            if *w <= 0.0 {
                continue;
            }
            let norm = l.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                l.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
            }
        }
    }
}

/// Fuse all frames, block by block. Every payload is overwritten.
pub fn fuse_all(grid: &mut SparseDenseGrid, frames: &[Frame], scales: &[ScaleField], mu: f64) -> FusionStats {
    assert_eq!(frames.len(), scales.len(), "one scale field per frame");
    assert!(mu > 0.0, "truncation must be positive");
    let n = grid.voxels_per_block();
    let c = grid.n_labels();
    let positions: Vec<Vec<Vec3>> = grid
        .coords()
        .iter()
        .map(|&bc| (0..n).map(|l| grid.voxel_position(grid.voxel_coord(bc, l))).collect())
        .collect();
    let stats = grid
        .blocks_mut()
        .par_iter_mut()
        .zip(&positions)
        .map(|(block, xs)| {
            let mut acc = FusionAccumulator::with_len(n, c);
            let mut stats = FusionStats::default();
            for (f, s) in frames.iter().zip(scales) {
                for (local, x) in xs.iter().enumerate() {
                    if let Some(obs) = observe(f, s, x, mu, &mut stats) {
                        acc.add(local, &obs);
                    }
                }
            }
            for local in 0..n {
                write_voxel(
                    block,
                    local,
                    c,
                    acc.count[local],
                    acc.sdf[local],
                    &acc.color[local],
                    &acc.logits[local * c..(local + 1) * c],
                );
            }
            stats
        })
        .collect::<Vec<_>>();
    let mut total = FusionStats::default();
    for s in stats {
        total += s;
    }
    total
}

/// Gaussian blur of SDF, color and logits over the `(2r+1)³` neighborhood
/// of every observed voxel, renormalized over observed neighbors. Fusion
/// weights are unchanged.
pub fn denoise(grid: &mut SparseDenseGrid, sigma_vox: f64, radius: usize) {
    if radius == 0 {
        return;
    }
    assert!(sigma_vox > 0.0);
    let r = radius as i32;
    let mut kernel = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = (dx * dx + dy * dy + dz * dz) as f64;
                kernel.push(([dx, dy, dz], (-d2 / (2.0 * sigma_vox * sigma_vox)).exp()));
            }
        }
    }
    let n = grid.voxels_per_block();
    let c = grid.n_labels();
    let g: &SparseDenseGrid = grid;
    let filtered: Vec<(Vec<f32>, Vec<[f32; 3]>, Vec<f32>)> = (0..g.num_blocks())
        .into_par_iter()
        .map(|h| {
            let bc = g.coords()[h];
            let src = g.block(h);
            let mut sdf = src.sdf.clone();
            let mut color = src.color.clone();
            let mut logits = src.logits.clone();
            let mut acc_l = vec![0.0f64; c];
            for local in 0..n {
                if src.weight[local] <= 0.0 {
                    continue;
                }
                let v = g.voxel_coord(bc, local);
                let (mut ws, mut s, mut col) = (0.0, 0.0, [0.0f64; 3]);
                acc_l.fill(0.0);
                for (o, w) in &kernel {
                    let Some(id) = g.voxel_id([v[0] + o[0], v[1] + o[1], v[2] + o[2]]) else {
                        continue;
                    };
                    if g.weight_by_id(id) <= 0.0 {
                        continue;
                    }
                    ws += w;
                    s += w * g.sdf_by_id(id) as f64;
                    let cc = g.color_by_id(id);
                    for k in 0..3 {
                        col[k] += w * cc[k] as f64;
                    }
                    for (a, &l) in acc_l.iter_mut().zip(g.logits_by_id(id)) {
                        *a += w * l as f64;
                    }
                }
                sdf[local] = (s / ws) as f32;
                color[local] = col.map(|x| (x / ws) as f32);
                for (dst, a) in logits[local * c..(local + 1) * c].iter_mut().zip(&acc_l) {
                    *dst = (a / ws) as f32;
                }
            }
            (sdf, color, logits)
        })
        .collect();
    for (b, (sdf, color, logits)) in grid.blocks_mut().iter_mut().zip(filtered) {
        b.sdf = sdf;
        b.color = color;
        b.logits = logits;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Camera, Intrinsics, Pose};
    use crate::grid::BlockCoord;
    use crate::raster::Raster;

    /// Camera at the origin looking down +z at a wall `z = depth` of one color.
    fn wall_frame(depth: f32, color: [f32; 3]) -> Frame {
        let (w, h) = (80, 60);
        let k = Intrinsics {
            fx: 60.0,
            fy: 60.0,
            cx: 39.5,
            cy: 29.5,
            width: w,
            height: h,
        };
        let mut d = Raster::new(w, h, 1);
        d.data_mut().fill(depth);
        let mut img = Raster::new(w, h, 3);
        for px in img.data_mut().chunks_exact_mut(3) {
            px.copy_from_slice(&color);
        }
        let mut sem = Raster::new(w, h, 2);
        for px in sem.data_mut().chunks_exact_mut(2) {
            px.copy_from_slice(&[0.9, 0.1]);
        }
        Frame {
            id: 0,
            camera: Camera::new(k, Pose::identity()),
            image: img,
            depth: d,
            normal: None,
            semantic: Some(sem),
        }
    }

    fn center_grid() -> (SparseDenseGrid, usize, usize) {
        let mut g = SparseDenseGrid::new(0.015, 8, 2);
        let (h, _) = g.insert_block(BlockCoord::new(0, 0, 8)).unwrap();
        // voxel (0, 0, 64) sits on the optical axis at z = 0.96
        let local = g.local_index(0, 0, 0);
        (g, h, local)
    }

    #[test]
    fn single_observation() {
        let (mut g, h, l) = center_grid();
        let f = wall_frame(0.99, [0.2, 0.4, 0.6]);
        let s = ScaleField::constant(80, 60, 1.0);
        fuse_all(&mut g, &[f], &[s], 0.24);
        let b = g.block(h);
        assert!((b.sdf[l] - 0.03).abs() < 1e-6);
        assert_eq!(b.weight[l], 1.0);
        assert!((b.color[l][1] - 0.4).abs() < 1e-7);
        let norm = (b.logits[2 * l].powi(2) + b.logits[2 * l + 1].powi(2)).sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn mean_of_two_and_truncation() {
        let (mut g, h, l) = center_grid();
        let s = ScaleField::constant(80, 60, 1.0);
        fuse_all(&mut g, &[wall_frame(0.98, [0.0; 3]), wall_frame(1.0, [0.0; 3])], &[s.clone(), s.clone()], 0.24);
        assert!((g.block(h).sdf[l] - 0.03).abs() < 1e-6);

        fuse_all(&mut g, &[wall_frame(1.46, [0.0; 3])], &[s.clone()], 0.24);
        assert!((g.block(h).sdf[l] - 0.24).abs() < 1e-7);

        let stats = fuse_all(&mut g, &[wall_frame(0.46, [0.0; 3])], &[s], 0.24);
        assert_eq!(g.block(h).weight[l], 0.0);
        assert!(stats.rejected > 0);
    }

    #[test]
    fn running_mean_matches_accumulator() {
        let (mut a, _, _) = center_grid();
        let mut b = a.clone();
        let s = ScaleField::constant(80, 60, 1.0);
        let frames = [wall_frame(0.97, [0.1, 0.2, 0.3]), wall_frame(1.02, [0.5, 0.5, 0.5])];
        for f in &frames {
            fuse_frame(&mut a, f, &s, 0.24);
        }
        normalize_logits(&mut a);
        fuse_all(&mut b, &frames, &[s.clone(), s], 0.24);
        for (x, y) in a.blocks()[0].sdf.iter().zip(&b.blocks()[0].sdf) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(a.blocks()[0].weight, b.blocks()[0].weight);
    }

    #[test]
    fn zero_frames_leave_weights_zero() {
        let (mut g, _, _) = center_grid();
        fuse_all(&mut g, &[], &[], 0.24);
        assert!(g.blocks()[0].weight.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn denoise_constant_and_radius_zero() {
        let (mut g, _, _) = center_grid();
        for b in g.blocks_mut() {
            b.weight.fill(1.0);
            b.sdf.fill(0.125);
        }
        let before = g.clone();
        denoise(&mut g, 1.0, 0);
        assert_eq!(g.blocks(), before.blocks());
        denoise(&mut g, 1.0, 1);
        assert!(g.blocks()[0].sdf.iter().all(|&v| (v - 0.125).abs() < 1e-7));
    }

    #[test]
    fn denoise_impulse_matches_dense_convolution() {
        let mut g = SparseDenseGrid::new(0.01, 8, 0);
        g.insert_block(BlockCoord::new(0, 0, 0)).unwrap();
        g.insert_block(BlockCoord::new(1, 0, 0)).unwrap();
        for b in g.blocks_mut() {
            b.weight.fill(1.0);
        }
        // impulse on the block face so the stencil crosses into the neighbor
        let id = g.voxel_id([7, 3, 3]).unwrap();
        *g.sdf_by_id_mut(id) = 1.0;
        let dense = |x: i32, y: i32, z: i32| -> f64 {
            if (x, y, z) == (7, 3, 3) {
                1.0
            } else {
                0.0
            }
        };
        let before = g.clone();
        denoise(&mut g, 1.0, 1);
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..16 {
                    let (mut num, mut den) = (0.0, 0.0);
                    for dz in -1..=1i32 {
                        for dy in -1..=1i32 {
                            for dx in -1..=1i32 {
                                let (a, b, c) = (x + dx, y + dy, z + dz);
                                if !(0..16).contains(&a) || !(0..8).contains(&b) || !(0..8).contains(&c) {
                                    continue;
                                }
                                let w = (-((dx * dx + dy * dy + dz * dz) as f64) / 2.0).exp();
                                num += w * dense(a, b, c);
                                den += w;
                            }
                        }
                    }
                    let got = g.sdf_by_id(g.voxel_id([x, y, z]).unwrap()) as f64;
                    assert!((got - num / den).abs() < 1e-6, "({x},{y},{z})");
                }
            }
        }
        assert_eq!(g.blocks()[0].weight, before.blocks()[0].weight);
    }
}
