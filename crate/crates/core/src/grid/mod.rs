//! Globally sparse, locally dense voxel grid.
//!
//! Space is tiled into blocks of `B³` voxels (`B = block_res`, default 8).
//! Blocks are allocated on demand and addressed through [`BlockIndex`], an
//! exact-key hash table. Voxel `v` (a global integer coordinate) sits at
//! world position `v * voxel_size`; block `b` owns voxels
//! `b*B ..= b*B + B-1` on every axis, so it spans `[b*L, (b+1)*L)` in world
//! units with `L = B * voxel_size`.
//!
//! Payloads are stored as `f32`; every query and gradient is evaluated in
//! `f64`.

pub mod alloc;
pub mod hash;
pub mod march;
pub mod query;
pub mod sample;
pub mod snapshot;

pub use hash::BlockIndex;
pub use march::SamplePoint;
pub use query::{Channels, Corners, TrilinearQuery};

use crate::{Error, Result, Vec3};
use serde::{Deserialize, Serialize};

pub const DEFAULT_BLOCK_RES: usize = 8;
pub const DEFAULT_VOXEL_SIZE: f64 = 0.015;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockCoord {
    pub x: i32,
    pub y: i32,
    pub z: i32,
}

impl BlockCoord {
    pub const fn new(x: i32, y: i32, z: i32) -> Self {
        Self { x, y, z }
    }

    pub fn offset(self, dx: i32, dy: i32, dz: i32) -> Self {
        Self::new(self.x + dx, self.y + dy, self.z + dz)
    }
}

/// Integer voxel coordinate on the global lattice.
pub type VoxelCoord = [i32; 3];

/// Dense payload of one block. Every array is indexed by the local voxel
/// index `x + B*(y + B*z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelBlock {
    pub sdf: Vec<f32>,
    pub weight: Vec<f32>,
    pub color: Vec<[f32; 3]>,
    /// `n_labels` values per voxel, voxel-major.
    pub logits: Vec<f32>,
}

impl VoxelBlock {
    pub fn new(voxels: usize, n_labels: usize) -> Self {
        Self {
            sdf: vec![0.0; voxels],
            weight: vec![0.0; voxels],
            color: vec![[0.0; 3]; voxels],
            logits: vec![0.0; voxels * n_labels],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SparseDenseGrid {
    voxel_size: f64,
    block_res: usize,
    n_labels: usize,
    index: BlockIndex,
    blocks: Vec<VoxelBlock>,
    max_blocks: Option<usize>,
    bounds: Option<(BlockCoord, BlockCoord)>,
}

impl SparseDenseGrid {
    pub fn new(voxel_size: f64, block_res: usize, n_labels: usize) -> Self {
        assert!(voxel_size > 0.0 && block_res >= 2);
        Self {
            voxel_size,
            block_res,
            n_labels,
            index: BlockIndex::default(),
            blocks: Vec::new(),
            max_blocks: None,
            bounds: None,
        }
    }

    /// Limit the number of blocks; allocation past it fails with
    /// [`Error::CapacityExceeded`].
    pub fn with_capacity_limit(mut self, max_blocks: usize) -> Self {
        self.max_blocks = Some(max_blocks);
        self
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn block_res(&self) -> usize {
        self.block_res
    }

    /// Edge length `L` of a block in meters.
    pub fn block_size(&self) -> f64 {
        self.block_res as f64 * self.voxel_size
    }

    pub fn voxels_per_block(&self) -> usize {
        self.block_res * self.block_res * self.block_res
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn capacity_limit(&self) -> Option<usize> {
        self.max_blocks
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_voxels(&self) -> usize {
        self.blocks.len() * self.voxels_per_block()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn coords(&self) -> &[BlockCoord] {
        self.index.keys()
    }

    pub fn blocks(&self) -> &[VoxelBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [VoxelBlock] {
        &mut self.blocks
    }

    pub fn block(&self, handle: usize) -> &VoxelBlock {
        &self.blocks[handle]
    }

    pub fn block_mut(&mut self, handle: usize) -> &mut VoxelBlock {
        &mut self.blocks[handle]
    }

    /// Inclusive min/max block coordinates over all allocated blocks.
    pub fn block_bounds(&self) -> Option<(BlockCoord, BlockCoord)> {
        self.bounds
    }

    /// World-space AABB of all allocated blocks.
    pub fn world_bounds(&self) -> Option<(Vec3, Vec3)> {
        let l = self.block_size();
        self.bounds.map(|(lo, hi)| {
            (
                Vec3::new(lo.x as f64, lo.y as f64, lo.z as f64) * l,
                Vec3::new((hi.x + 1) as f64, (hi.y + 1) as f64, (hi.z + 1) as f64) * l,
            )
        })
    }

    #[inline]
    pub fn find(&self, coord: BlockCoord) -> Option<usize> {
        self.index.get(coord)
    }

    /// Allocate a block if absent. Returns its handle and whether it was new.
    pub fn insert_block(&mut self, coord: BlockCoord) -> Result<(usize, bool)> {
        if let Some(h) = self.index.get(coord) {
            return Ok((h, false));
        }
        if let Some(max) = self.max_blocks {
            if self.blocks.len() >= max {
                return Err(Error::CapacityExceeded { unallocated: 1 });
            }
        }
        let (h, fresh) = self.index.insert(coord);
        debug_assert!(fresh && h == self.blocks.len());
        self.blocks
            .push(VoxelBlock::new(self.voxels_per_block(), self.n_labels));
        self.bounds = Some(match self.bounds {
            None => (coord, coord),
            Some((lo, hi)) => (
                BlockCoord::new(lo.x.min(coord.x), lo.y.min(coord.y), lo.z.min(coord.z)),
                BlockCoord::new(hi.x.max(coord.x), hi.y.max(coord.y), hi.z.max(coord.z)),
            ),
        });
        Ok((h, true))
    }

    /// Block containing a world point.
    #[inline]
    pub fn block_of_point(&self, x: &Vec3) -> BlockCoord {
        let l = self.block_size();
        BlockCoord::new(
            (x.x / l).floor() as i32,
            (x.y / l).floor() as i32,
            (x.z / l).floor() as i32,
        )
    }

    /// Split a global voxel coordinate into its block and local index.
    #[inline]
    pub fn split_voxel(&self, v: VoxelCoord) -> (BlockCoord, usize) {
        let b = self.block_res as i32;
        let bc = BlockCoord::new(v[0].div_euclid(b), v[1].div_euclid(b), v[2].div_euclid(b));
        let l = [v[0].rem_euclid(b), v[1].rem_euclid(b), v[2].rem_euclid(b)];
        (bc, self.local_index(l[0] as usize, l[1] as usize, l[2] as usize))
    }

    #[inline]
    pub fn local_index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.block_res * (y + self.block_res * z)
    }

    #[inline]
    pub fn local_coords(&self, local: usize) -> [usize; 3] {
        let b = self.block_res;
        [local % b, (local / b) % b, local / (b * b)]
    }

    /// Global voxel coordinate of a (block, local) pair.
    #[inline]
    pub fn voxel_coord(&self, block: BlockCoord, local: usize) -> VoxelCoord {
        let b = self.block_res as i32;
        let [lx, ly, lz] = self.local_coords(local);
        [block.x * b + lx as i32, block.y * b + ly as i32, block.z * b + lz as i32]
    }

    #[inline]
    pub fn voxel_position(&self, v: VoxelCoord) -> Vec3 {
        Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64) * self.voxel_size
    }

    /// Nearest lattice voxel to a world point (inverse of [`Self::voxel_position`]).
    #[inline]
    pub fn nearest_voxel(&self, x: &Vec3) -> VoxelCoord {
        let s = 1.0 / self.voxel_size;
        [
            (x.x * s).round() as i32,
            (x.y * s).round() as i32,
            (x.z * s).round() as i32,
        ]
    }

    /// Flat voxel id (`handle * B³ + local`) of an allocated voxel.
    #[inline]
    pub fn voxel_id(&self, v: VoxelCoord) -> Option<usize> {
        let (bc, local) = self.split_voxel(v);
        self.find(bc).map(|h| h * self.voxels_per_block() + local)
    }

    #[inline]
    pub fn split_id(&self, id: usize) -> (usize, usize) {
        let n = self.voxels_per_block();
        (id / n, id % n)
    }

    #[inline]
    pub fn sdf_by_id(&self, id: usize) -> f32 {
        let (h, l) = self.split_id(id);
        self.blocks[h].sdf[l]
    }

    #[inline]
    pub fn weight_by_id(&self, id: usize) -> f32 {
        let (h, l) = self.split_id(id);
        self.blocks[h].weight[l]
    }

    #[inline]
    pub fn color_by_id(&self, id: usize) -> [f32; 3] {
        let (h, l) = self.split_id(id);
        self.blocks[h].color[l]
    }

    #[inline]
    pub fn logits_by_id(&self, id: usize) -> &[f32] {
        let (h, l) = self.split_id(id);
        let c = self.n_labels;
        &self.blocks[h].logits[l * c..(l + 1) * c]
    }

    pub fn sdf_by_id_mut(&mut self, id: usize) -> &mut f32 {
        let (h, l) = self.split_id(id);
        &mut self.blocks[h].sdf[l]
    }

    pub fn color_by_id_mut(&mut self, id: usize) -> &mut [f32; 3] {
        let (h, l) = self.split_id(id);
        &mut self.blocks[h].color[l]
    }

    pub fn logits_by_id_mut(&mut self, id: usize) -> &mut [f32] {
        let (h, l) = self.split_id(id);
        let c = self.n_labels;
        &mut self.blocks[h].logits[l * c..(l + 1) * c]
    }

    /// Iterate over `(flat id, global voxel coord)` of every voxel with
    /// positive fusion weight.
    pub fn valid_voxels(&self) -> impl Iterator<Item = (usize, VoxelCoord)> + '_ {
        let n = self.voxels_per_block();
        self.coords().iter().enumerate().flat_map(move |(h, &bc)| {
            let block = &self.blocks[h];
            (0..n)
                .filter(move |&l| block.weight[l] > 0.0)
                .map(move |l| (h * n + l, self.voxel_coord(bc, l)))
        })
    }

    /// Handles of the 27 blocks around (and including) `coord`, indexed by
    /// `(dx+1) + 3*((dy+1) + 3*(dz+1))`.
    pub fn neighborhood(&self, coord: BlockCoord) -> [Option<usize>; 27] {
        let mut out = [None; 27];
        for dz in -1..=1 {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let i = ((dx + 1) + 3 * ((dy + 1) + 3 * (dz + 1))) as usize;
                    out[i] = self.find(coord.offset(dx, dy, dz));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voxel_split_round_trip() {
        let g = SparseDenseGrid::new(0.015, 8, 2);
        for v in [[0, 0, 0], [-1, 7, 8], [-9, -16, 15], [123, -77, 4]] {
            let (bc, l) = g.split_voxel(v);
            assert_eq!(g.voxel_coord(bc, l), v);
            assert_eq!(g.nearest_voxel(&g.voxel_position(v)), v);
        }
        assert_eq!(g.split_voxel([-1, 0, 0]).0, BlockCoord::new(-1, 0, 0));
    }

    #[test]
    fn capacity_limit() {
        let mut g = SparseDenseGrid::new(0.1, 4, 0).with_capacity_limit(2);
        g.insert_block(BlockCoord::new(0, 0, 0)).unwrap();
        g.insert_block(BlockCoord::new(0, 0, 0)).unwrap();
        g.insert_block(BlockCoord::new(1, 0, 0)).unwrap();
        assert!(matches!(
            g.insert_block(BlockCoord::new(2, 0, 0)),
            Err(Error::CapacityExceeded { .. })
        ));
        assert_eq!(g.block_bounds(), Some((BlockCoord::new(0, 0, 0), BlockCoord::new(1, 0, 0))));
    }
}
