//! Ray marching with empty-space skipping.
//!
//! The ray walks the block lattice with a 3D DDA. Unallocated blocks are
//! crossed in one step; inside allocated blocks samples are emitted on the
//! global lattice `t_k = (k + offset) * step`, so sample positions do not
//! depend on which blocks happen to be allocated.

use super::SparseDenseGrid;
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub t: f64,
    pub x: Vec3,
}

/// Slack (in meters along the ray) within which a sample is tested against
/// the hash index instead of trusting the DDA interval.
const BOUNDARY_EPS: f64 = 1e-9;

impl SparseDenseGrid {
    /// Samples at `t = k * step` (`k ≥ 0`) that fall inside allocated blocks.
    pub fn march_ray(&self, origin: &Vec3, direction: &Vec3, step: f64, max_samples: usize) -> Vec<SamplePoint> {
        self.march_ray_with_offset(origin, direction, step, 0.0, max_samples)
    }

    /// Like [`Self::march_ray`] with the sample lattice shifted to
    /// `t = (k + offset) * step`, `offset ∈ [0, 1)`.
    pub fn march_ray_with_offset(
        &self,
        origin: &Vec3,
        direction: &Vec3,
        step: f64,
        offset: f64,
        max_samples: usize,
    ) -> Vec<SamplePoint> {
        let mut out = Vec::new();
        self.march_into(origin, direction, step, offset, max_samples, &mut out);
        out
    }

    pub fn march_into(
        &self,
        origin: &Vec3,
        direction: &Vec3,
        step: f64,
        offset: f64,
        max_samples: usize,
        out: &mut Vec<SamplePoint>,
    ) {
        out.clear();
        debug_assert!((direction.norm() - 1.0).abs() < 1e-9, "direction must be unit length");
        debug_assert!(step > 0.0);
        let Some((lo, hi)) = self.world_bounds() else {
            return;
        };
        let Some((t_enter, t_exit)) = slab(origin, direction, &lo, &hi) else {
            return;
        };
        let t_start = t_enter.max(0.0);
        if t_exit <= t_start || max_samples == 0 {
            return;
        }

        let l = self.block_size();
        let (blo, bhi) = self.block_bounds().expect("non-empty grid");
        let start = origin + direction * t_start;
        let mut cell = [
            ((start.x / l).floor() as i32).clamp(blo.x, bhi.x),
            ((start.y / l).floor() as i32).clamp(blo.y, bhi.y),
            ((start.z / l).floor() as i32).clamp(blo.z, bhi.z),
        ];
        let dir = [direction.x, direction.y, direction.z];
        let org = [origin.x, origin.y, origin.z];
        let mut step_i = [0i32; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            if dir[a] > 0.0 {
                step_i[a] = 1;
                t_max[a] = ((cell[a] + 1) as f64 * l - org[a]) / dir[a];
                t_delta[a] = l / dir[a];
            } else if dir[a] < 0.0 {
                step_i[a] = -1;
                t_max[a] = (cell[a] as f64 * l - org[a]) / dir[a];
                t_delta[a] = -l / dir[a];
            }
        }
        let lo_i = [blo.x, blo.y, blo.z];
        let hi_i = [bhi.x, bhi.y, bhi.z];

        let mut k: i64 = (((t_start - BOUNDARY_EPS) / step - offset).ceil() as i64).max(0);
        let mut t_cur = t_start;
        loop {
            let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            let t_next = t_max[a].min(t_exit);
            let coord = super::BlockCoord::new(cell[0], cell[1], cell[2]);
            let allocated = self.find(coord).is_some();
            if allocated {
                loop {
                    let t = (k as f64 + offset) * step;
                    if t >= t_next + BOUNDARY_EPS || t > t_exit {
                        break;
                    }
                    let x = origin + direction * t;
                    let inside = if t <= t_cur + BOUNDARY_EPS || t >= t_next - BOUNDARY_EPS {
                        self.find(self.block_of_point(&x)).is_some()
                    } else {
                        true
                    };
                    if inside {
                        out.push(SamplePoint { t, x });
                        if out.len() >= max_samples {
                            return;
                        }
                    }
                    k += 1;
                }
            } else {
                // leave samples near the exit face to the next block's exact test
                let k_skip = ((t_next - BOUNDARY_EPS) / step - offset).ceil() as i64;
                k = k.max(k_skip);
            }
            if t_next >= t_exit {
                // trailing boundary samples
                loop {
                    let t = (k as f64 + offset) * step;
                    if t > t_exit {
                        break;
                    }
                    let x = origin + direction * t;
                    if self.find(self.block_of_point(&x)).is_some() {
                        out.push(SamplePoint { t, x });
                        if out.len() >= max_samples {
                            return;
                        }
                    }
                    k += 1;
                }
                return;
            }
            cell[a] += step_i[a];
            if cell[a] < lo_i[a] || cell[a] > hi_i[a] {
                return;
            }
            t_cur = t_next;
            t_max[a] += t_delta[a];
        }
    }
}

/// Ray/AABB intersection interval.
fn slab(o: &Vec3, d: &Vec3, lo: &Vec3, hi: &Vec3) -> Option<(f64, f64)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-300 {
            if o[a] < lo[a] || o[a] > hi[a] {
                return None;
            }
        } else {
            let inv = 1.0 / d[a];
            let (mut ta, mut tb) = ((lo[a] - o[a]) * inv, (hi[a] - o[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
    }
    (t1 >= t0).then_some((t0, t1))
}
