//! Surface-adaptive block allocation.

use super::{BlockCoord, SparseDenseGrid};
use crate::calib::ScaleField;
use crate::dataio::Frame;
use crate::raster::is_valid_depth;
use crate::{Error, Result, Vec2, Vec3};
use std::collections::HashSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AllocationReport {
    /// Blocks created by this call.
    pub blocks_added: usize,
    /// Distinct blocks containing at least one unprojected point.
    pub surface_blocks: usize,
    pub blocks_total: usize,
}

impl SparseDenseGrid {
    /// Allocate every block within L∞ distance `dilation` (in block units) of
    /// each center. Existing blocks and their payloads are left untouched.
    pub fn allocate_around(&mut self, centers: &[BlockCoord], dilation: usize) -> Result<AllocationReport> {
        let r = dilation as i32;
        let mut added = 0;
        let mut refused: HashSet<BlockCoord> = HashSet::new();
        for &c in centers {
            for dz in -r..=r {
                for dy in -r..=r {
                    for dx in -r..=r {
                        let b = c.offset(dx, dy, dz);
                        match self.insert_block(b) {
                            Ok((_, true)) => added += 1,
                            Ok((_, false)) => {}
                            Err(Error::CapacityExceeded { .. }) => {
                                refused.insert(b);
                            }
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
        }
        if !refused.is_empty() {
            return Err(Error::CapacityExceeded {
                unallocated: refused.len(),
            });
        }
        Ok(AllocationReport {
            blocks_added: added,
            surface_blocks: centers.len(),
            blocks_total: self.num_blocks(),
        })
    }

    /// Allocate around the blocks containing `points`.
    pub fn allocate_points<I: IntoIterator<Item = Vec3>>(&mut self, points: I, dilation: usize) -> Result<AllocationReport> {
        let mut seen = HashSet::new();
        let mut centers = Vec::new();
        for p in points {
            let b = self.block_of_point(&p);
            if seen.insert(b) {
                centers.push(b);
            }
        }
        self.allocate_around(&centers, dilation)
    }
}

/// Allocate blocks around the unprojection of every pixel with a valid
/// scaled depth, dilated by `dilation` blocks.
pub fn allocate(
    grid: &mut SparseDenseGrid,
    frames: &[Frame],
    scales: &[ScaleField],
    dilation: usize,
) -> Result<AllocationReport> {
    assert_eq!(frames.len(), scales.len(), "one scale field per frame");
    let l = grid.block_size();
    let mut seen = HashSet::new();
    let mut centers = Vec::new();
    for (frame, scale) in frames.iter().zip(scales) {
        let depth = &frame.depth;
        for v in 0..depth.height() {
            for u in 0..depth.width() {
                let d = depth.get(u, v, 0);
                if !is_valid_depth(d) {
                    continue;
                }
                let px = Vec2::new(u as f64, v as f64);
                let z = d as f64 * scale.lookup(px.x, px.y);
                let Ok(x) = frame.camera.unproject(px, z) else {
                    continue;
                };
                let b = BlockCoord::new((x.x / l).floor() as i32, (x.y / l).floor() as i32, (x.z / l).floor() as i32);
                if seen.insert(b) {
                    centers.push(b);
                }
            }
        }
    }
    grid.allocate_around(&centers, dilation)
}
