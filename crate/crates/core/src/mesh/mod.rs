//! Zero level-set extraction and mesh files.

mod ply;
pub mod tables;

pub use ply::{export_obj, export_ply, import_ply};

use crate::grid::{SparseDenseGrid, VoxelCoord};
use crate::Vec3;
use rayon::prelude::*;
use std::collections::HashMap;
use tables::{CORNERS, EDGES, EDGE_TABLE, TRI_TABLE};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// RGB in `[0, 1]`.
    pub colors: Vec<[f32; 3]>,
    /// Per-vertex class id, when the source carries semantics.
    pub labels: Option<Vec<i32>>,
    pub triangles: Vec<[u32; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle_area(&self, t: &[u32; 3]) -> f64 {
        let [a, b, c] = t.map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| self.triangle_area(t)).sum()
    }
}

/// Edge key: the lower voxel of the edge and its axis.
type EdgeKey = (VoxelCoord, u8);

struct Vertex {
    key: EdgeKey,
    position: Vec3,
    normal: Vec3,
    color: [f32; 3],
    label: i32,
}

struct BlockPatch {
    vertices: Vec<Vertex>,
    /// Indices into `vertices`.
    triangles: Vec<[u32; 3]>,
}

/// Marching cubes over every cell whose eight corners carry positive fusion
/// weight, including cells that straddle block faces. Triangles are wound
/// counter-clockwise seen from the side where the field exceeds `iso`.
pub fn marching_cubes(grid: &SparseDenseGrid, iso: f64) -> Mesh {
    let patches: Vec<BlockPatch> = (0..grid.num_blocks())
        .into_par_iter()
        .map(|h| block_patch(grid, h, iso))
        .collect();

    let mut mesh = Mesh {
        labels: (grid.n_labels() > 0).then(Vec::new),
        ..Mesh::default()
    };
    let mut index: HashMap<EdgeKey, u32> = HashMap::new();
    for patch in patches {
        let remap: Vec<u32> = patch
            .vertices
            .into_iter()
            .map(|v| {
                *index.entry(v.key).or_insert_with(|| {
                    mesh.vertices.push(v.position);
                    mesh.normals.push(v.normal);
                    mesh.colors.push(v.color);
                    if let Some(l) = mesh.labels.as_mut() {
                        l.push(v.label);
                    }
                    (mesh.vertices.len() - 1) as u32
                })
            })
            .collect();
        for t in patch.triangles {
            let t = t.map(|i| remap[i as usize]);
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] || mesh.triangle_area(&t) < 1e-12 {
                continue;
            }
            mesh.triangles.push(t);
        }
    }
    mesh
}

/// Flat voxel ids of a cell's corners in table order, if all are valid.
fn cell_ids(grid: &SparseDenseGrid, nb: &[Option<usize>; 27], local: [i32; 3]) -> Option<[usize; 8]> {
    let b = grid.block_res() as i32;
    let n = grid.voxels_per_block();
    let mut ids = [0; 8];
    for (c, off) in CORNERS.iter().enumerate() {
        let p = [local[0] + off[0], local[1] + off[1], local[2] + off[2]];
        let d = p.map(|v| v.div_euclid(b));
        let h = nb[((d[0] + 1) + 3 * ((d[1] + 1) + 3 * (d[2] + 1))) as usize]?;
        let l = grid.local_index(p[0].rem_euclid(b) as usize, p[1].rem_euclid(b) as usize, p[2].rem_euclid(b) as usize);
        if grid.block(h).weight[l] <= 0.0 {
            return None;
        }
        ids[c] = h * n + l;
    }
    Some(ids)
}

fn block_patch(grid: &SparseDenseGrid, h: usize, iso: f64) -> BlockPatch {
    let bc = grid.coords()[h];
    let nb = grid.neighborhood(bc);
    let b = grid.block_res() as i32;
    let vs = grid.voxel_size();
    let n_labels = grid.n_labels();
    let mut patch = BlockPatch {
        vertices: Vec::new(),
        triangles: Vec::new(),
    };
    let mut local_index: HashMap<EdgeKey, u32> = HashMap::new();
    let mut logits = vec![0.0f64; n_labels];
    for z in 0..b {
        for y in 0..b {
            for x in 0..b {
                let Some(ids) = cell_ids(grid, &nb, [x, y, z]) else {
                    continue;
                };
                let s: [f64; 8] = ids.map(|i| grid.sdf_by_id(i) as f64);
                let mut case = 0usize;
                for (c, &v) in s.iter().enumerate() {
                    if v < iso {
                        case |= 1 << c;
                    }
                }
                let edges = EDGE_TABLE[case];
                if edges == 0 {
                    continue;
                }
                let origin: VoxelCoord = [bc.x * b + x, bc.y * b + y, bc.z * b + z];
                let mut edge_vertex = [u32::MAX; 12];
                for (e, &(c0, c1)) in EDGES.iter().enumerate() {
                    if edges & (1 << e) == 0 {
                        continue;
                    }
                    let (o0, o1) = (CORNERS[c0], CORNERS[c1]);
                    let axis = (0..3).find(|&a| o0[a] != o1[a]).unwrap();
                    let (lo, hi) = if o0[axis] < o1[axis] { (c0, c1) } else { (c1, c0) };
                    let lo_off = CORNERS[lo];
                    let key = ([origin[0] + lo_off[0], origin[1] + lo_off[1], origin[2] + lo_off[2]], axis as u8);
                    let idx = *local_index.entry(key).or_insert_with(|| {
                        let t = (iso - s[lo]) / (s[hi] - s[lo]);
                        // local cell coordinates of the vertex
                        let mut f = [lo_off[0] as f64, lo_off[1] as f64, lo_off[2] as f64];
                        f[axis] += t;
                        let position = grid.voxel_position(key.0) + {
                            let mut d = Vec3::zeros();
                            d[axis] = t * vs;
                            d
                        };
                        let (mut grad, mut color) = (Vec3::zeros(), [0.0f64; 3]);
                        logits.fill(0.0);
                        for (c, off) in CORNERS.iter().enumerate() {
                            let w = |a: usize| if off[a] == 1 { f[a] } else { 1.0 - f[a] };
                            let dw = |a: usize| if off[a] == 1 { 1.0 } else { -1.0 };
                            let wt = w(0) * w(1) * w(2);
                            grad += Vec3::new(dw(0) * w(1) * w(2), w(0) * dw(1) * w(2), w(0) * w(1) * dw(2)) * s[c];
                            let col = grid.color_by_id(ids[c]);
                            for k in 0..3 {
                                color[k] += wt * col[k] as f64;
                            }
                            for (o, &v) in logits.iter_mut().zip(grid.logits_by_id(ids[c])) {
                                *o += wt * v as f64;
                            }
                        }
                        let label = logits
                            .iter()
                            .enumerate()
                            .max_by(|a, b| a.1.total_cmp(b.1))
                            .map_or(0, |(k, _)| k as i32);
                        let n = grad.norm();
                        patch.vertices.push(Vertex {
                            key,
                            position,
                            normal: if n > 0.0 { grad / n } else { Vec3::zeros() },
                            color: color.map(|c| c as f32),
                            label,
                        });
                        (patch.vertices.len() - 1) as u32
                    });
                    edge_vertex[e] = idx;
                }
                for tri in TRI_TABLE[case].chunks(3).take_while(|t| t[0] >= 0) {
                    // table winding faces the below-iso side; flip it
                    patch.triangles.push([
                        edge_vertex[tri[0] as usize],
                        edge_vertex[tri[2] as usize],
                        edge_vertex[tri[1] as usize],
                    ]);
                }
            }
        }
    }
    patch
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BlockCoord;

    /// Allocate blocks covering `[lo, hi]` and fill voxels with `f`.
    pub(crate) fn field_grid(vs: f64, lo: Vec3, hi: Vec3, f: impl Fn(&Vec3) -> f64) -> SparseDenseGrid {
        let mut g = SparseDenseGrid::new(vs, 8, 0);
        let b0 = g.block_of_point(&lo);
        let b1 = g.block_of_point(&hi);
        for z in b0.z..=b1.z {
            for y in b0.y..=b1.y {
                for x in b0.x..=b1.x {
                    g.insert_block(BlockCoord::new(x, y, z)).unwrap();
                }
            }
        }
        let n = g.voxels_per_block();
        for h in 0..g.num_blocks() {
            let bc = g.coords()[h];
            for local in 0..n {
                let p = g.voxel_position(g.voxel_coord(bc, local));
                let blk = g.block_mut(h);
                blk.sdf[local] = f(&p) as f32;
                blk.weight[local] = 1.0;
            }
        }
        g
    }

    #[test]
    fn tables_are_consistent() {
        for case in 0..256usize {
            let mut expected = 0u16;
            for (e, &(a, b)) in EDGES.iter().enumerate() {
                if ((case >> a) & 1) != ((case >> b) & 1) {
                    expected |= 1 << e;
                }
            }
            assert_eq!(EDGE_TABLE[case], expected, "case {case}");
            let mut used = 0u16;
            for &e in TRI_TABLE[case].iter().take_while(|&&e| e >= 0) {
                used |= 1 << e;
            }
            assert_eq!(used, expected, "case {case}");
        }
    }

    #[test]
    fn all_positive_is_empty() {
        let g = field_grid(0.05, Vec3::zeros(), Vec3::repeat(0.5), |_| 1.0);
        assert!(marching_cubes(&g, 0.0).is_empty());
    }

    #[test]
    fn plane_is_planar_and_oriented() {
        let n = Vec3::new(0.3, -0.5, 0.8).normalize();
        let c = 0.013;
        let g = field_grid(0.02, Vec3::repeat(-0.2), Vec3::repeat(0.2), |p| n.dot(p) + c);
        let m = marching_cubes(&g, 0.0);
        assert!(!m.is_empty());
        for v in &m.vertices {
            assert!((n.dot(v) + c).abs() < 1e-6);
        }
        for t in &m.triangles {
            let [a, b, cc] = t.map(|i| m.vertices[i as usize]);
            assert!((b - a).cross(&(cc - a)).dot(&n) > 0.0);
        }
        for nn in &m.normals {
            assert!((nn - n).norm() < 1e-4);
        }
    }

    #[test]
    fn block_split_does_not_change_vertices() {
        let f = |p: &Vec3| (p - Vec3::new(0.11, 0.13, 0.12)).norm() - 0.07;
        // 0.02 voxels: blocks are 0.16 m, so the sphere straddles block faces
        let g = field_grid(0.02, Vec3::zeros(), Vec3::repeat(0.3), f);
        let mut one = SparseDenseGrid::new(0.02, 32, 0);
        one.insert_block(BlockCoord::new(0, 0, 0)).unwrap();
        for local in 0..one.voxels_per_block() {
            let p = one.voxel_position(one.voxel_coord(BlockCoord::new(0, 0, 0), local));
            let b = one.block_mut(0);
            b.sdf[local] = f(&p) as f32;
            b.weight[local] = 1.0;
        }
        let (a, b) = (marching_cubes(&g, 0.0), marching_cubes(&one, 0.0));
        assert_eq!(a.vertices.len(), b.vertices.len());
        let key = |v: &Vec3| (v * 1e6).map(|x| x.round() as i64);
        let mut ka: Vec<_> = a.vertices.iter().map(key).map(|v| (v.x, v.y, v.z)).collect();
        let mut kb: Vec<_> = b.vertices.iter().map(key).map(|v| (v.x, v.y, v.z)).collect();
        ka.sort();
        kb.sort();
        assert_eq!(ka, kb);
        assert_eq!(a.triangles.len(), b.triangles.len());
    }
}
