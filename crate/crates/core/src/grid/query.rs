//! Trilinear queries over the sparse grid.
//!
//! A query point selects the lattice cell containing it; the eight cell
//! corners may live in up to eight different blocks and are fetched through
//! the hash index. The interpolation weights `r(x, x_i)` and their spatial
//! derivatives are returned together as a [`Corners`] cache, so a value, its
//! gradient, and any later backward pass share one traversal.

use super::SparseDenseGrid;
use crate::Vec3;

/// Interpolation cache for one query point.
#[derive(Debug, Clone, Copy)]
pub struct Corners {
    /// Flat voxel ids, corner `c` at offset `(c & 1, (c >> 1) & 1, c >> 2)`.
    pub ids: [usize; 8],
    /// Trilinear weights; they sum to one.
    pub weights: [f64; 8],
    /// Spatial gradient of each weight (per meter).
    pub grads: [Vec3; 8],
}

/// Which payload channels a [`SparseDenseGrid::query_trilinear`] call reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channels {
    pub sdf: bool,
    pub color: bool,
    pub logits: bool,
}

impl Channels {
    pub const ALL: Channels = Channels {
        sdf: true,
        color: true,
        logits: true,
    };
    pub const SDF: Channels = Channels {
        sdf: true,
        color: false,
        logits: false,
    };
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrilinearQuery {
    pub sdf: f64,
    pub color: Vec3,
    pub logits: Vec<f64>,
    pub valid: bool,
}

impl SparseDenseGrid {
    /// Interpolation cache at `x`, or `None` unless all eight corners are
    /// allocated with positive fusion weight.
    #[inline]
    pub fn corners(&self, x: &Vec3) -> Option<Corners> {
        self.corners_impl(x, true)
    }

    /// Like [`Self::corners`] but only requires the corners to be allocated.
    pub fn corners_allocated(&self, x: &Vec3) -> Option<Corners> {
        self.corners_impl(x, false)
    }

    fn corners_impl(&self, x: &Vec3, require_weight: bool) -> Option<Corners> {
        let inv = 1.0 / self.voxel_size();
        let g = x * inv;
        let base = [g.x.floor(), g.y.floor(), g.z.floor()];
        let f = [g.x - base[0], g.y - base[1], g.z - base[2]];
        let b = self.block_res() as i32;
        let i0 = [base[0] as i32, base[1] as i32, base[2] as i32];
        let bc = super::BlockCoord::new(i0[0].div_euclid(b), i0[1].div_euclid(b), i0[2].div_euclid(b));
        let l = [i0[0].rem_euclid(b), i0[1].rem_euclid(b), i0[2].rem_euclid(b)];
        let cross = [l[0] == b - 1, l[1] == b - 1, l[2] == b - 1];
        let nvox = self.voxels_per_block();

        let mut handles = [usize::MAX; 8];
        let mut out = Corners {
            ids: [0; 8],
            weights: [0.0; 8],
            grads: [Vec3::zeros(); 8],
        };
        for c in 0..8 {
            let d = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let bo = [
                (d[0] == 1 && cross[0]) as i32,
                (d[1] == 1 && cross[1]) as i32,
                (d[2] == 1 && cross[2]) as i32,
            ];
            let k = (bo[0] + 2 * bo[1] + 4 * bo[2]) as usize;
            if handles[k] == usize::MAX {
                handles[k] = self.find(bc.offset(bo[0], bo[1], bo[2]))?;
            }
            let local = self.local_index(
                ((l[0] + d[0] as i32) % b) as usize,
                ((l[1] + d[1] as i32) % b) as usize,
                ((l[2] + d[2] as i32) % b) as usize,
            );
            if require_weight && self.block(handles[k]).weight[local] <= 0.0 {
                return None;
            }
            out.ids[c] = handles[k] * nvox + local;

            let w = |a: usize| if d[a] == 1 { f[a] } else { 1.0 - f[a] };
            let dw = |a: usize| if d[a] == 1 { inv } else { -inv };
            let (wx, wy, wz) = (w(0), w(1), w(2));
            out.weights[c] = wx * wy * wz;
            out.grads[c] = Vec3::new(dw(0) * wy * wz, wx * dw(1) * wz, wx * wy * dw(2));
        }
        Some(out)
    }

    #[inline]
    pub fn interp_sdf(&self, c: &Corners) -> f64 {
        (0..8).map(|i| c.weights[i] * self.sdf_by_id(c.ids[i]) as f64).sum()
    }

    /// Interpolated SDF and its analytic spatial gradient.
    #[inline]
    pub fn interp_sdf_grad(&self, c: &Corners) -> (f64, Vec3) {
        let mut s = 0.0;
        let mut g = Vec3::zeros();
        for i in 0..8 {
            let v = self.sdf_by_id(c.ids[i]) as f64;
            s += c.weights[i] * v;
            g += c.grads[i] * v;
        }
        (s, g)
    }

    #[inline]
    pub fn interp_color(&self, c: &Corners) -> Vec3 {
        let mut out = Vec3::zeros();
        for i in 0..8 {
            let v = self.color_by_id(c.ids[i]);
            out += Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64) * c.weights[i];
        }
        out
    }

    /// Interpolated logits written into `out` (length `n_labels`).
    pub fn interp_logits(&self, c: &Corners, out: &mut [f64]) {
        out.fill(0.0);
        for i in 0..8 {
            for (o, &v) in out.iter_mut().zip(self.logits_by_id(c.ids[i])) {
                *o += c.weights[i] * v as f64;
            }
        }
    }

    /// Interpolate the selected channels at `x`. Invalid queries return
    /// zero-filled values with `valid = false`.
    pub fn query_trilinear(&self, x: &Vec3, channels: Channels) -> TrilinearQuery {
        let mut q = TrilinearQuery {
            sdf: 0.0,
            color: Vec3::zeros(),
            logits: vec![0.0; if channels.logits { self.n_labels() } else { 0 }],
            valid: false,
        };
        if let Some(c) = self.corners(x) {
            q.valid = true;
            if channels.sdf {
                q.sdf = self.interp_sdf(&c);
            }
            if channels.color {
                q.color = self.interp_color(&c);
            }
            if channels.logits {
                self.interp_logits(&c, &mut q.logits);
            }
        }
        q
    }

    /// SDF value and gradient computed in the same corner traversal.
    pub fn query_sdf_with_gradient(&self, x: &Vec3) -> (f64, Vec3, bool) {
        match self.corners(x) {
            Some(c) => {
                let (s, g) = self.interp_sdf_grad(&c);
                (s, g, true)
            }
            None => (0.0, Vec3::zeros(), false),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BlockCoord;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 2x2x2 blocks filled with `f(voxel position)`, weight 1.
    fn filled(f: impl Fn(&Vec3) -> f64) -> SparseDenseGrid {
        let mut g = SparseDenseGrid::new(0.1, 4, 1);
        for z in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    g.insert_block(BlockCoord::new(x, y, z)).unwrap();
                }
            }
        }
        for h in 0..g.num_blocks() {
            let bc = g.coords()[h];
            for l in 0..g.voxels_per_block() {
                let p = g.voxel_position(g.voxel_coord(bc, l));
                let v = f(&p);
                let blk = g.block_mut(h);
                blk.sdf[l] = v as f32;
                blk.weight[l] = 1.0;
                blk.color[l] = [v as f32, 0.5, 0.25];
                blk.logits[l] = -v as f32;
            }
        }
        g
    }

    #[test]
    fn exact_voxel_hit_returns_stored_value() {
        let g = filled(|p| p.x + 2.0 * p.y - p.z);
        let x = Vec3::new(0.3, 0.2, 0.1);
        let c = g.corners(&x).unwrap();
        assert!((c.weights[0] - 1.0).abs() < 1e-12);
        assert!(c.weights[1..].iter().all(|w| w.abs() < 1e-12));
        let q = g.query_trilinear(&x, Channels::ALL);
        assert!(q.valid);
        assert!((q.sdf - (0.3 + 0.4 - 0.1)).abs() < 1e-6);
    }

    #[test]
    fn cell_midpoint_is_corner_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..1000).map(|_| rng.gen()).collect();
        let g = filled(|p| vals[((p.x * 10.0).round() as usize * 7 + (p.y * 10.0).round() as usize * 3 + (p.z * 10.0).round() as usize) % 1000]);
        let x = Vec3::new(0.25, 0.35, 0.45);
        let c = g.corners(&x).unwrap();
        let mean: f64 = c.ids.iter().map(|&i| g.sdf_by_id(i) as f64).sum::<f64>() / 8.0;
        assert!((g.interp_sdf(&c) - mean).abs() < 1e-12);
    }

    #[test]
    fn random_points_match_naive_weighted_sum() {
        let g = filled(|p| (3.0 * p.x).sin() + p.y * p.z);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let x = Vec3::new(rng.gen_range(0.0..0.69), rng.gen_range(0.0..0.69), rng.gen_range(0.0..0.69));
            let c = g.corners(&x).unwrap();
            // independent oracle: explicit lattice corners and tensor-product weights
            let gx = x / 0.1;
            let i0 = [gx.x.floor() as i32, gx.y.floor() as i32, gx.z.floor() as i32];
            let f = [gx.x - gx.x.floor(), gx.y - gx.y.floor(), gx.z - gx.z.floor()];
            let mut expect = 0.0;
            for dz in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = [i0[0] + dx, i0[1] + dy, i0[2] + dz];
                        let id = g.voxel_id(v).unwrap();
                        let w = (if dx == 1 { f[0] } else { 1.0 - f[0] })
                            * (if dy == 1 { f[1] } else { 1.0 - f[1] })
                            * (if dz == 1 { f[2] } else { 1.0 - f[2] });
                        expect += w * g.sdf_by_id(id) as f64;
                    }
                }
            }
            assert!((g.interp_sdf(&c) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_and_constant_fields() {
        let n = Vec3::new(0.3, -0.5, 0.8);
        let g = filled(|p| n.dot(p) + 0.1);
        let (_, grad, ok) = g.query_sdf_with_gradient(&Vec3::new(0.41, 0.33, 0.58));
        assert!(ok);
        assert!((grad - n).norm() < 1e-5);
        let c = filled(|_| 0.7);
        let (s, grad, _) = c.query_sdf_with_gradient(&Vec3::new(0.41, 0.33, 0.58));
        assert!((s - 0.7).abs() < 1e-6);
        assert!(grad.norm() < 1e-9);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f64> = (0..4096).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = filled(|p| {
            let k = ((p.x * 10.0).round() as usize) + 8 * ((p.y * 10.0).round() as usize) + 64 * ((p.z * 10.0).round() as usize);
            vals[k]
        });
        let h = 0.1 / 64.0;
        let mut checked = 0;
        while checked < 200 {
            let x = Vec3::new(rng.gen_range(0.0..0.69), rng.gen_range(0.0..0.69), rng.gen_range(0.0..0.69));
            let frac = (x / 0.1).map(|v| v - v.floor());
            if frac.iter().any(|&f| f < 0.02 || f > 0.98) {
                continue;
            }
            let (_, grad, _) = g.query_sdf_with_gradient(&x);
            for a in 0..3 {
                let mut e = Vec3::zeros();
                e[a] = h;
                let fd = (g.query_sdf_with_gradient(&(x + e)).0 - g.query_sdf_with_gradient(&(x - e)).0) / (2.0 * h);
                assert!((fd - grad[a]).abs() <= 1e-4 * grad[a].abs().max(1e-3), "{fd} vs {}", grad[a]);
            }
            checked += 1;
        }
    }

    #[test]
    fn missing_or_unobserved_corner_invalidates() {
        let mut g = filled(|p| p.x);
        assert!(g.corners(&Vec3::new(0.75, 0.1, 0.1)).is_none());
        let id = g.voxel_id([1, 1, 1]).unwrap();
        let (h, l) = g.split_id(id);
        g.block_mut(h).weight[l] = 0.0;
        let q = g.query_trilinear(&Vec3::new(0.15, 0.15, 0.15), Channels::ALL);
        assert!(!q.valid);
        assert_eq!(q.sdf, 0.0);
        assert!(g.corners_allocated(&Vec3::new(0.15, 0.15, 0.15)).is_some());
    }
}
