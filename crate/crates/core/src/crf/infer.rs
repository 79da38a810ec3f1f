use super::lattice::PermutohedralLattice;
use super::{CrfConfig, FilterKind, Property, SurfaceSampleSet};
use crate::{Error, Result, Vec3};
use rayon::prelude::*;

/// Neighbor mass below which a node receives no message.
const MIN_MASS: f64 = 1e-9;

/// Gaussian message passing over fixed, pre-scaled features. Messages
/// exclude the node itself and are normalized by the total kernel weight.
pub struct MessageFilter {
    features: Vec<f64>,
    d: usize,
    lattice: Option<(PermutohedralLattice, Vec<f64>)>,
}

impl MessageFilter {
    pub fn new(features: Vec<f64>, d: usize, kind: FilterKind, rings: usize) -> Result<Self> {
        if d == 0 || features.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d.max(1) * (features.len() / d.max(1)),
                got: features.len(),
            });
        }
        let lattice = match kind {
            FilterKind::Exact => None,
            FilterKind::Lattice => {
                let lat = PermutohedralLattice::with_rings(&features, d, rings)?;
                let own = (0..lat.len()).into_par_iter().map(|i| lat.self_response(i)).collect();
                Some((lat, own))
            }
        };
        Ok(MessageFilter { features, d, lattice })
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    /// `Σ_{j≠i} k_ij v_j` (row-major, `vdim` per node) and `Σ_{j≠i} k_ij`.
    pub fn neighbor_sums(&self, values: &[f64], vdim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.len();
        if values.len() != n * vdim {
            return Err(Error::DimensionMismatch {
                expected: n * vdim,
                got: values.len(),
            });
        }
        let w = vdim + 1;
        let mut aug = Vec::with_capacity(n * w);
        for row in values.chunks_exact(vdim.max(1)).take(n) {
            aug.extend_from_slice(&row[..vdim]);
            aug.push(1.0);
        }
        if vdim == 0 {
            aug = vec![1.0; n];
        }
        let out = match &self.lattice {
            Some((lat, own)) => {
                let mut out = lat.filter(&aug, w)?;
                for (i, row) in out.chunks_exact_mut(w).enumerate() {
                    for (o, v) in row.iter_mut().zip(&aug[i * w..(i + 1) * w]) {
                        *o -= own[i] * v;
                    }
                }
                out
            }
            None => {
                let d = self.d;
                let f = &self.features;
                (0..n)
                    .into_par_iter()
                    .flat_map_iter(|i| {
                        let fi = &f[i * d..(i + 1) * d];
                        let mut acc = vec![0.0; w];
                        for j in (0..n).filter(|&j| j != i) {
                            let e: f64 = fi.iter().zip(&f[j * d..(j + 1) * d]).map(|(a, b)| (a - b) * (a - b)).sum();
                            let k = (-0.5 * e).exp();
                            for (a, v) in acc.iter_mut().zip(&aug[j * w..(j + 1) * w]) {
                                *a += k * v;
                            }
                        }
                        acc
                    })
                    .collect()
            }
        };
        let mut sums = Vec::with_capacity(n * vdim);
        let mut mass = Vec::with_capacity(n);
        for row in out.chunks_exact(w) {
            sums.extend_from_slice(&row[..vdim]);
            mass.push(row[vdim].max(0.0));
        }
        Ok((sums, mass))
    }

    /// Kernel-weighted mean of the neighbors' values; `None` for nodes
    /// without neighbor mass.
    pub fn neighbor_means(&self, values: &[f64], vdim: usize) -> Result<Vec<Option<Vec<f64>>>> {
        let (sums, mass) = self.neighbor_sums(values, vdim)?;
        Ok(mass
            .iter()
            .enumerate()
            .map(|(i, &m)| (m > MIN_MASS).then(|| sums[i * vdim..(i + 1) * vdim].iter().map(|s| s / m).collect()))
            .collect())
    }
}

/// One Potts mean-field update. `unary` holds `P = exp(−ψ_u)` and `q` the
/// current posterior, both row-major `n × c`:
/// `Q⁺_i(l) ∝ P_i(l) · exp(w · m_i(l))`, with `m_i` the normalized neighbor
/// message. Since `Σ_l' μ(l, l') m_i(l') = 1 − m_i(l)` for Potts `μ`, this
/// is the standard update up to a per-node constant.
pub fn mean_field_step(filter: &MessageFilter, unary: &[f64], q: &[f64], c: usize, weight: f64) -> Result<Vec<f64>> {
    let msgs = filter.neighbor_means(q, c)?;
    let mut out = vec![0.0; q.len()];
    for (i, (row, m)) in out.chunks_exact_mut(c).zip(msgs).enumerate() {
        let p = &unary[i * c..(i + 1) * c];
        let logit = |l: usize| p[l].max(1e-300).ln() + m.as_ref().map_or(0.0, |m| weight * m[l]);
        let top = (0..c).map(logit).fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for (l, o) in row.iter_mut().enumerate() {
            *o = (logit(l) - top).exp();
            s += *o;
        }
        for o in row.iter_mut() {
            *o /= s;
        }
    }
    Ok(out)
}

/// Label posterior after `iterations` updates starting from the unary.
pub fn mean_field_labels(filter: &MessageFilter, unary: &[f64], c: usize, iterations: usize, weight: f64) -> Result<Vec<f64>> {
    let mut q = unary.to_vec();
    for _ in 0..iterations {
        q = mean_field_step(filter, unary, &q, c, weight)?;
    }
    Ok(q)
}

/// Consensus for a continuous property: `x̃⁺ = (x + w · m(x̃)) / (1 + w)`,
/// optionally projected to unit length per row.
pub fn mean_field_continuous(
    filter: &MessageFilter,
    anchor: &[f64],
    vdim: usize,
    iterations: usize,
    weight: f64,
    unit: bool,
) -> Result<Vec<f64>> {
    let mut x = anchor.to_vec();
    for _ in 0..iterations {
        let msgs = filter.neighbor_means(&x, vdim)?;
        for (i, m) in msgs.into_iter().enumerate() {
            let row = &mut x[i * vdim..(i + 1) * vdim];
            let a = &anchor[i * vdim..(i + 1) * vdim];
            match m {
                Some(m) => {
                    for k in 0..vdim {
                        row[k] = (a[k] + weight * m[k]) / (1.0 + weight);
                    }
                }
                None => row.copy_from_slice(a),
            }
            if unit {
                let len = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if len > 1e-12 {
                    row.iter_mut().for_each(|v| *v /= len);
                } else {
                    row.copy_from_slice(a);
                }
            }
        }
    }
    Ok(x)
}

/// Mean-field targets for every property of a sample set.
#[derive(Debug, Clone, Default)]
pub struct Consensus {
    /// Row-major `n × C` posteriors; empty without labels.
    pub labels: Vec<f64>,
    pub colors: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl Consensus {
    /// The samples' own properties: every CRF loss is zero against it.
    pub fn identity(set: &SurfaceSampleSet, cfg: &CrfConfig) -> Self {
        Consensus {
            labels: set.label_distributions(cfg.label_temperature),
            colors: set.samples.iter().map(|s| s.color).collect(),
            normals: set.samples.iter().map(|s| s.normal).collect(),
        }
    }
}

fn flat(v: impl Iterator<Item = Vec3>) -> Vec<f64> {
    v.flat_map(|x| [x.x, x.y, x.z]).collect()
}

fn unflat(v: &[f64]) -> Vec<Vec3> {
    v.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

/// Run mean-field for colors, normals and labels. Each property's kernel
/// uses the features of the other properties plus position and SDF.
pub fn infer(set: &SurfaceSampleSet, cfg: &CrfConfig) -> Result<Consensus> {
    if set.is_empty() {
        return Err(Error::EmptySurface);
    }
    let filter = |p: Property| -> Result<MessageFilter> {
        let (f, d) = set.features(cfg, Some(p));
        MessageFilter::new(f, d, cfg.filter, cfg.lattice_rings)
    };
    let colors = flat(set.samples.iter().map(|s| s.color));
    let colors = mean_field_continuous(&filter(Property::Color)?, &colors, 3, cfg.iterations, cfg.consensus_weight, false)?;
    let normals = flat(set.samples.iter().map(|s| s.normal));
    let normals = mean_field_continuous(&filter(Property::Normal)?, &normals, 3, cfg.iterations, cfg.consensus_weight, true)?;
    let c = set.n_labels;
    let labels = if c > 0 {
        let p = set.label_distributions(cfg.label_temperature);
        mean_field_labels(&filter(Property::Label)?, &p, c, cfg.iterations, cfg.label_weight)?
    } else {
        Vec::new()
    };
    Ok(Consensus {
        labels,
        colors: unflat(&colors),
        normals: unflat(&normals),
    })
}
