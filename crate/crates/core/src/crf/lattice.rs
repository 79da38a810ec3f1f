//! Permutohedral lattice for fast high-dimensional Gaussian filtering.
//!
//! Points are lifted onto the hyperplane `Σ x = 0` in `d + 1` dimensions,
//! splatted onto the vertices of their enclosing simplex with barycentric
//! weights, blurred with `[1/2, 1, 1/2]` along each of the `d + 1` lattice
//! directions, and sliced back. The result is rescaled so it approximates
//! `Σ_j exp(−‖f_i − f_j‖² / 2) v_j` in absolute terms.

use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::hash_map::Entry;
use std::collections::HashMap;

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct PermutohedralLattice {
    d: usize,
    n: usize,
    /// Per point, `d + 1` vertex indices.
    offsets: Vec<u32>,
    /// Per point, `d + 1` barycentric weights summing to one.
    bary: Vec<f64>,
    /// Per blur direction and vertex, the two neighbor indices.
    neighbors: Vec<[u32; 2]>,
    n_vertices: usize,
    scale: f64,
}

/// Enclosing-simplex search on the lattice `(d+1)·A*_d`.
struct Locator {
    d: usize,
    canonical: Vec<i32>,
    rem0: Vec<i32>,
    rank: Vec<usize>,
    bary: Vec<f64>,
}

impl Locator {
    fn new(d: usize) -> Self {
        let d1 = d + 1;
        let mut canonical = vec![0i32; d1 * d1];
        for i in 0..=d {
            for j in 0..=(d - i) {
                canonical[i * d1 + j] = i as i32;
            }
            for j in (d - i + 1)..=d {
                canonical[i * d1 + j] = i as i32 - d1 as i32;
            }
        }
        Locator {
            d,
            canonical,
            rem0: vec![0; d1],
            rank: vec![0; d1],
            bary: vec![0.0; d1 + 1],
        }
    }

    /// Find the simplex containing `elevated` and its barycentric weights.
    fn locate(&mut self, elevated: &[f64]) {
        let d = self.d;
        let d1 = d as i32 + 1;
        let down = 1.0 / d1 as f64;
        let mut sum = 0i32;
        for i in 0..=d {
            let v = down * elevated[i];
            let up = v.ceil() * d1 as f64;
            let dn = v.floor() * d1 as f64;
            self.rem0[i] = if up - elevated[i] < elevated[i] - dn { up as i32 } else { dn as i32 };
            sum += self.rem0[i];
        }
        sum /= d1;
        let mut rank = vec![0i32; d + 1];
        for i in 0..d {
            let di = elevated[i] - self.rem0[i] as f64;
            for j in (i + 1)..=d {
                if di < elevated[j] - self.rem0[j] as f64 {
                    rank[i] += 1;
                } else {
                    rank[j] += 1;
                }
            }
        }
        if sum > 0 {
            for i in 0..=d {
                if rank[i] >= d1 - sum {
                    self.rem0[i] -= d1;
                    rank[i] += sum - d1;
                } else {
                    rank[i] += sum;
                }
            }
        } else if sum < 0 {
            for i in 0..=d {
                if rank[i] < -sum {
                    self.rem0[i] += d1;
                    rank[i] += d1 + sum;
                } else {
                    rank[i] += sum;
                }
            }
        }
        self.bary.fill(0.0);
        for i in 0..=d {
            self.rank[i] = rank[i] as usize;
            let v = (elevated[i] - self.rem0[i] as f64) * down;
            self.bary[d - self.rank[i]] += v;
            self.bary[d + 1 - self.rank[i]] -= v;
        }
        self.bary[0] += 1.0 + self.bary[d + 1];
    }

    /// Coordinate `i` (of `d + 1`) of simplex vertex `r`.
    #[inline]
    fn vertex(&self, r: usize, i: usize) -> i32 {
        self.rem0[i] + self.canonical[r * (self.d + 1) + self.rank[i]]
    }
}

fn elevate(f: &[f64], sf: &[f64], out: &mut [f64]) {
    let d = f.len();
    let mut sm = 0.0;
    for i in (1..=d).rev() {
        let cf = f[i - 1] * sf[i - 1];
        out[i] = sm - i as f64 * cf;
        sm += cf;
    }
    out[0] = sm;
}

/// Per-axis scale factors. The elevation is `inv_std` times an isometry;
/// `inv_std` is chosen so the variance of the splat-blur-slice kernel
/// (blur plus twice the mean spread of the barycentric splat) equals that of
/// a unit Gaussian.
fn scale_factors(d: usize) -> Vec<f64> {
    let unit: Vec<f64> = (0..d).map(|i| 1.0 / (((i + 1) * (i + 2)) as f64).sqrt()).collect();
    let d1 = d + 1;
    let mut loc = Locator::new(d);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut f = vec![0.0; d];
    let mut el = vec![0.0; d1];
    let samples = 4000;
    let mut spread = 0.0;
    for _ in 0..samples {
        for x in f.iter_mut() {
            *x = rng.gen_range(0.0..1000.0);
        }
        elevate(&f, &unit, &mut el);
        loc.locate(&el);
        for r in 0..=d {
            let d2: f64 = (0..=d).map(|i| (loc.vertex(r, i) as f64 - el[i]).powi(2)).sum();
            spread += loc.bary[r] * d2;
        }
    }
    spread /= samples as f64;
    let blur_var = (d1 * d1) as f64 / 2.0;
    let inv_std = (blur_var + 2.0 * spread / d as f64).sqrt();
    unit.iter().map(|u| u * inv_std).collect()
}

/// Feature-space volume per lattice vertex.
fn cell_volume(d: usize, sf: &[f64]) -> f64 {
    let mut e = DMatrix::<f64>::zeros(d + 1, d);
    let mut col = vec![0.0; d + 1];
    for i in 0..d {
        let mut unit = vec![0.0; d];
        unit[i] = 1.0;
        elevate(&unit, sf, &mut col);
        e.set_column(i, &nalgebra::DVector::from_column_slice(&col));
    }
    // basis of the full lattice: (d+1)(e_i − e_d) for i < d−1 and (1,…,1,−d)
    let mut b = DMatrix::<f64>::zeros(d + 1, d);
    for i in 0..d.saturating_sub(1) {
        b[(i, i)] = (d + 1) as f64;
        b[(d, i)] = -((d + 1) as f64);
    }
    for r in 0..d {
        b[(r, d - 1)] = 1.0;
    }
    b[(d, d - 1)] = -(d as f64);
    let ete = e.transpose() * &e;
    let pre = ete.lu().solve(&(e.transpose() * b)).expect("elevation has full rank");
    pre.determinant().abs()
}

impl PermutohedralLattice {
    /// Build the lattice for `n` points with `d`-dimensional features stored
    /// row-major in `features`. Features must already be divided by their
    /// standard deviations.
    pub fn new(features: &[f64], d: usize) -> Result<Self> {
        Self::with_rings(features, d, 0)
    }

    /// Like [`Self::new`], additionally inserting `rings` layers of empty
    /// vertices around the occupied ones so blur paths between occupied
    /// vertices are not cut short. Costs `O(2(d+1))` extra vertices per ring
    /// and occupied vertex.
    pub fn with_rings(features: &[f64], d: usize, rings: usize) -> Result<Self> {
        if d == 0 || features.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d.max(1),
                got: features.len(),
            });
        }
        let n = features.len() / d;
        let d1 = d + 1;
        let sf = scale_factors(d);

        let mut table: HashMap<Vec<i32>, u32> = HashMap::new();
        let mut keys: Vec<i32> = Vec::new();
        let mut offsets = vec![0u32; n * d1];
        let mut bary_all = vec![0.0; n * d1];
        let mut elevated = vec![0.0; d1];
        let mut loc = Locator::new(d);
        let mut key = vec![0i32; d];
        for k in 0..n {
            elevate(&features[k * d..(k + 1) * d], &sf, &mut elevated);
            loc.locate(&elevated);
            for r in 0..=d {
                for (i, x) in key.iter_mut().enumerate() {
                    *x = loc.vertex(r, i);
                }
                let next = table.len() as u32;
                let idx = *table.entry(key.clone()).or_insert_with(|| {
                    keys.extend_from_slice(&key);
                    next
                });
                offsets[k * d1 + r] = idx;
                bary_all[k * d1 + r] = loc.bary[r];
            }
        }

        let mut frontier: Vec<u32> = (0..table.len() as u32).collect();
        for _ in 0..rings {
            let mut added = Vec::new();
            for &v in &frontier {
                for j in 0..=d {
                    for sign in [-1i32, 1] {
                        let kv = &keys[v as usize * d..(v as usize + 1) * d];
                        for i in 0..d {
                            key[i] = kv[i] + sign;
                        }
                        if j < d {
                            key[j] = kv[j] - sign * d as i32;
                        }
                        let next = table.len() as u32;
                        if let Entry::Vacant(e) = table.entry(key.clone()) {
                            e.insert(next);
                            keys.extend_from_slice(&key);
                            added.push(next);
                        }
                    }
                }
            }
            frontier = added;
        }

        let m = table.len();
        let mut neighbors = vec![[NONE; 2]; d1 * m];
        let mut n1 = vec![0i32; d];
        let mut n2 = vec![0i32; d];
        for j in 0..=d {
            for v in 0..m {
                let kv = &keys[v * d..(v + 1) * d];
                for i in 0..d {
                    n1[i] = kv[i] - 1;
                    n2[i] = kv[i] + 1;
                }
                if j < d {
                    n1[j] = kv[j] + d as i32;
                    n2[j] = kv[j] - d as i32;
                }
                neighbors[j * m + v] = [
                    table.get(&n1).copied().unwrap_or(NONE),
                    table.get(&n2).copied().unwrap_or(NONE),
                ];
            }
        }

        let scale = (2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) / (cell_volume(d, &sf) * 2f64.powi(d1 as i32));
        Ok(PermutohedralLattice {
            d,
            n,
            offsets,
            bary: bary_all,
            neighbors,
            n_vertices: m,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    /// Barycentric splat weights of point `i`.
    pub fn splat_weights(&self, i: usize) -> &[f64] {
        &self.bary[i * (self.d + 1)..(i + 1) * (self.d + 1)]
    }

    /// The lattice's own response of point `i` to itself: splat the point
    /// alone, blur, and slice at the same point.
    pub fn self_response(&self, i: usize) -> f64 {
        let d1 = self.d + 1;
        let m = self.n_vertices;
        let mut cur: HashMap<u32, f64> = HashMap::with_capacity(4 * d1);
        for r in 0..d1 {
            *cur.entry(self.offsets[i * d1 + r]).or_default() += self.bary[i * d1 + r];
        }
        let mut next: HashMap<u32, f64> = HashMap::with_capacity(cur.capacity());
        for j in 0..d1 {
            next.clear();
            for (&v, &x) in &cur {
                *next.entry(v).or_default() += x;
                for nb in self.neighbors[j * m + v as usize] {
                    if nb != NONE {
                        *next.entry(nb).or_default() += 0.5 * x;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        (0..d1)
            .map(|r| self.bary[i * d1 + r] * cur.get(&self.offsets[i * d1 + r]).copied().unwrap_or(0.0))
            .sum::<f64>()
            * self.scale
    }

    /// Filter `values` (`vdim` per point, row-major).
    pub fn filter(&self, values: &[f64], vdim: usize) -> Result<Vec<f64>> {
        if values.len() != self.n * vdim {
            return Err(Error::DimensionMismatch {
                expected: self.n * vdim,
                got: values.len(),
            });
        }
        let d1 = self.d + 1;
        let m = self.n_vertices;
        let mut grid = vec![0.0; m * vdim];
        for k in 0..self.n {
            for r in 0..d1 {
                let o = self.offsets[k * d1 + r] as usize;
                let w = self.bary[k * d1 + r];
                for c in 0..vdim {
                    grid[o * vdim + c] += w * values[k * vdim + c];
                }
            }
        }
        let mut next = vec![0.0; m * vdim];
        for j in 0..d1 {
            let nb = &self.neighbors[j * m..(j + 1) * m];
            for v in 0..m {
                let [a, b] = nb[v];
                for c in 0..vdim {
                    let mut x = grid[v * vdim + c];
                    if a != NONE {
                        x += 0.5 * grid[a as usize * vdim + c];
                    }
                    if b != NONE {
                        x += 0.5 * grid[b as usize * vdim + c];
                    }
                    next[v * vdim + c] = x;
                }
            }
            std::mem::swap(&mut grid, &mut next);
        }
        let mut out = vec![0.0; self.n * vdim];
        for k in 0..self.n {
            for r in 0..d1 {
                let o = self.offsets[k * d1 + r] as usize;
                let w = self.bary[k * d1 + r] * self.scale;
                for c in 0..vdim {
                    out[k * vdim + c] += w * grid[o * vdim + c];
                }
            }
        }
        Ok(out)
    }
}

/// Lattice filtering with the lattice's own self response swapped for the
/// exact self weight `exp(0) = 1`.
pub fn filter_exact_self(features: &[f64], d: usize, values: &[f64], vdim: usize, rings: usize) -> Result<Vec<f64>> {
    let lat = PermutohedralLattice::with_rings(features, d, rings)?;
    let mut out = lat.filter(values, vdim)?;
    for i in 0..lat.len() {
        let s = 1.0 - lat.self_response(i);
        for c in 0..vdim {
            out[i * vdim + c] += s * values[i * vdim + c];
        }
    }
    Ok(out)
}

/// Lattice approximation of `ṽ_i = Σ_j exp(−‖f_i − f_j‖²/2) v_j`, self term
/// included. Uses one ring of padding vertices and the exact self weight.
pub fn lattice_filter(features: &[Vec<f64>], values: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let (flat_f, d) = flatten(features)?;
    let (flat_v, vdim) = flatten(values)?;
    if features.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            got: values.len(),
        });
    }
    if features.is_empty() {
        return Ok(Vec::new());
    }
    let out = filter_exact_self(&flat_f, d, &flat_v, vdim, 1)?;
    Ok(out.chunks(vdim.max(1)).map(|c| c.to_vec()).collect())
}

/// Exact `O(n²)` Gaussian sum with the same conventions as the lattice.
pub fn brute_force_filter(features: &[f64], d: usize, values: &[f64], vdim: usize) -> Vec<f64> {
    let n = features.len() / d;
    let mut out = vec![0.0; n * vdim];
    for i in 0..n {
        let fi = &features[i * d..(i + 1) * d];
        for j in 0..n {
            let fj = &features[j * d..(j + 1) * d];
            let d2: f64 = fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum();
            let k = (-0.5 * d2).exp();
            for c in 0..vdim {
                out[i * vdim + c] += k * values[j * vdim + c];
            }
        }
    }
    out
}

fn flatten(rows: &[Vec<f64>]) -> Result<(Vec<f64>, usize)> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut flat = Vec::with_capacity(rows.len() * d);
    for r in rows {
        if r.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: r.len(),
            });
        }
        flat.extend_from_slice(r);
    }
    Ok((flat, d))
}
