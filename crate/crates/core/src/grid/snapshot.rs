//! Binary grid snapshots.
//!
//! Little-endian layout: magic `SDGV`, version `u32`, voxel size `f64`,
//! block resolution `u32`, block count `u64`, label channels `u32`; then per
//! block its coordinate (`3 x i32`) followed by `sdf`, `weight`, `rgb` and
//! `logits` as `f32` arrays of `B³`, `B³`, `3·B³` and `C·B³` values.

use super::{BlockCoord, SparseDenseGrid};
use crate::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"SDGV";
pub const VERSION: u32 = 1;

impl SparseDenseGrid {
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.voxel_size().to_le_bytes())?;
        w.write_all(&(self.block_res() as u32).to_le_bytes())?;
        w.write_all(&(self.num_blocks() as u64).to_le_bytes())?;
        w.write_all(&(self.n_labels() as u32).to_le_bytes())?;
        let mut buf = Vec::new();
        for (coord, block) in self.coords().iter().zip(self.blocks()) {
            buf.clear();
            for c in [coord.x, coord.y, coord.z] {
                buf.extend_from_slice(&c.to_le_bytes());
            }
            let floats = block
                .sdf
                .iter()
                .chain(&block.weight)
                .chain(block.color.iter().flatten())
                .chain(&block.logits);
            for v in floats {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_snapshot(BufWriter::new(File::create(path)?))
    }

    pub fn read_snapshot<R: Read>(mut r: R, origin: &Path) -> Result<SparseDenseGrid> {
        let bad = |reason: &str| Error::format(origin, reason);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("not an SDGV snapshot"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let voxel_size = f64::from_le_bytes(read_arr(&mut r)?);
        let block_res = read_u32(&mut r)? as usize;
        let n_blocks = u64::from_le_bytes(read_arr(&mut r)?) as usize;
        let n_labels = read_u32(&mut r)? as usize;
        if !(voxel_size > 0.0) || block_res < 2 {
            return Err(bad("invalid header"));
        }
        let mut grid = SparseDenseGrid::new(voxel_size, block_res, n_labels);
        let nv = grid.voxels_per_block();
        let per_block = nv * (5 + n_labels);
        let mut bytes = vec![0u8; 12 + 4 * per_block];
        for _ in 0..n_blocks {
            r.read_exact(&mut bytes)?;
            let int = |i: usize| i32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
            let coord = BlockCoord::new(int(0), int(1), int(2));
            let floats: Vec<f32> = bytes[12..]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let (h, fresh) = grid.insert_block(coord)?;
            if !fresh {
                return Err(bad(&format!("duplicate block {coord:?}")));
            }
            let b = grid.block_mut(h);
            b.sdf.copy_from_slice(&floats[..nv]);
            b.weight.copy_from_slice(&floats[nv..2 * nv]);
            for (i, c) in b.color.iter_mut().enumerate() {
                c.copy_from_slice(&floats[2 * nv + 3 * i..2 * nv + 3 * i + 3]);
            }
            b.logits.copy_from_slice(&floats[5 * nv..]);
        }
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<SparseDenseGrid> {
        let f = File::open(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile { path: path.to_path_buf() },
            _ => Error::Io(e),
        })?;
        Self::read_snapshot(BufReader::new(f), path)
    }
}

fn read_arr<const N: usize, R: Read>(r: &mut R) -> std::io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    Ok(u32::from_le_bytes(read_arr(r)?))
}
