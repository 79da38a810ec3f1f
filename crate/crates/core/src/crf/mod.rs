//! Continuous CRF over Monte Carlo samples of the SDF zero level set.
//!
//! Samples carry position, color, normal, label logits and the residual SDF.
//! Mean-field inference produces a consensus estimate per property, with
//! Gaussian edge potentials evaluated on the remaining properties. The
//! consensus is then held fixed as a target for [`crf_losses`], whose
//! gradients flow back through each sample's trilinear cache.

mod infer;
mod lattice;
mod loss;
mod sample;

pub use infer::{infer, mean_field_continuous, mean_field_labels, mean_field_step, Consensus, MessageFilter};
pub use lattice::{brute_force_filter, filter_exact_self, lattice_filter, PermutohedralLattice};
pub use loss::{crf_losses, crf_refine, crf_refine_with, write_crf_csv, CrfLosses, CrfRecord};
pub use sample::{read_sample_dump, sample_surface, SurfaceSample, SurfaceSampleSet};

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    /// Permutohedral lattice approximation.
    Lattice,
    /// Exact O(n²) Gaussian sums.
    Exact,
}

/// A property refined by the CRF. Its own channels are left out of the
/// kernel features when computing its consensus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Property {
    Color,
    Normal,
    Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrfConfig {
    pub lambda_color: f64,
    pub lambda_normal: f64,
    pub lambda_label: f64,
    pub sigma_position: f64,
    pub sigma_color: f64,
    pub sigma_normal: f64,
    pub sigma_label: f64,
    pub sigma_sdf: f64,
    pub iterations: usize,
    /// Softmax temperature turning logits into label distributions.
    pub label_temperature: f64,
    /// Potts strength for label messages.
    pub label_weight: f64,
    /// Weight of the neighbor mean against the anchor for continuous properties.
    pub consensus_weight: f64,
    pub n_viewpoints: usize,
    pub rays_per_view: usize,
    /// Upper bound on the number of surface samples kept.
    pub samples: usize,
    pub filter: FilterKind,
    /// Padding rings of empty lattice vertices.
    pub lattice_rings: usize,
    /// Let the normal loss update SDF values through `∇f`.
    pub normal_to_sdf: bool,
    pub steps: usize,
    pub resample_every: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub seed: u64,
}

impl Default for CrfConfig {
    fn default() -> Self {
        CrfConfig {
            lambda_color: 1e-3,
            lambda_normal: 1.0,
            lambda_label: 0.1,
            sigma_position: 0.05,
            sigma_color: 0.1,
            sigma_normal: 0.2,
            sigma_label: 0.25,
            sigma_sdf: 1.0,
            iterations: 5,
            label_temperature: 0.25,
            label_weight: 1.0,
            consensus_weight: 1.0,
            n_viewpoints: 16,
            rays_per_view: 1024,
            samples: 20_000,
            filter: FilterKind::Lattice,
            lattice_rings: 0,
            normal_to_sdf: true,
            steps: 200,
            resample_every: 50,
            lr: 1e-3,
            lr_decay: 0.1,
            seed: 0,
        }
    }
}

impl CrfConfig {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            ("sigma_position", self.sigma_position),
            ("sigma_color", self.sigma_color),
            ("sigma_normal", self.sigma_normal),
            ("sigma_label", self.sigma_label),
            ("sigma_sdf", self.sigma_sdf),
            ("label_temperature", self.label_temperature),
        ];
        for (name, v) in sigmas {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("crf.{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("lambda_color", self.lambda_color),
            ("lambda_normal", self.lambda_normal),
            ("lambda_label", self.lambda_label),
            ("label_weight", self.label_weight),
            ("consensus_weight", self.consensus_weight),
            ("lr", self.lr),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("crf.{name} must be non-negative, got {v}")));
            }
        }
        if self.resample_every == 0 {
            return Err(Error::Config("crf.resample_every must be at least 1".into()));
        }
        Ok(())
    }

    /// Diagonal precision `1 / (2σ²)` for the full feature layout
    /// `[position 3, color 3, normal 3, logits C, sdf 1]`.
    pub fn precision(&self, n_labels: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(10 + n_labels);
        for (s, k) in [
            (self.sigma_position, 3),
            (self.sigma_color, 3),
            (self.sigma_normal, 3),
            (self.sigma_label, n_labels),
            (self.sigma_sdf, 1),
        ] {
            out.extend(std::iter::repeat(0.5 / (s * s)).take(k));
        }
        out
    }
}

/// `exp(−(f_i − f_j)ᵀ Λ (f_i − f_j))` for diagonal `Λ`.
pub fn edge_potential(fi: &[f64], fj: &[f64], precision: &[f64]) -> f64 {
    assert!(fi.len() == fj.len() && fi.len() == precision.len());
    let e: f64 = fi.iter().zip(fj).zip(precision).map(|((a, b), l)| l * (a - b) * (a - b)).sum();
    (-e).exp()
}

/// `softmax(z / τ)` written into `out`.
pub fn softmax_into(z: &[f64], tau: f64, out: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = ((v - m) / tau).exp();
        s += *o;
    }
    for o in out.iter_mut() {
        *o /= s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_potential_closed_form() {
        let cfg = CrfConfig::default();
        let lam = cfg.precision(0);
        let a = [0.0; 10];
        assert_eq!(edge_potential(&a, &a, &lam), 1.0);
        let mut b = a;
        b[3] = 0.1;
        let v = edge_potential(&a, &b, &lam);
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
        assert!((v - 0.6065).abs() < 1e-4);
        assert_eq!(v, edge_potential(&b, &a, &lam));
    }

    #[test]
    fn defaults() {
        let c = CrfConfig::default();
        assert_eq!((c.lambda_color, c.lambda_normal, c.lambda_label), (1e-3, 1.0, 0.1));
        assert_eq!((c.sigma_color, c.sigma_sdf, c.iterations), (0.1, 1.0, 5));
        c.validate().unwrap();
        let bad = CrfConfig {
            sigma_normal: 0.0,
            ..c
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn softmax_is_a_distribution() {
        let mut p = [0.0; 4];
        softmax_into(&[1.0, -2.0, 0.5, 300.0], 0.25, &mut p);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
