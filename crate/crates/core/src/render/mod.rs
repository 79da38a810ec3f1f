//! Differentiable volume rendering over the sparse grid.
//!
//! Densities come from the SDF through a Laplace transform. Each rendered
//! ray keeps the interpolation caches of its samples so the backward pass
//! can push gradients straight onto voxel payloads.

mod backward;
mod refine;

pub use backward::{backward_into, backward_step, eikonal_loss, sample_eikonal_points, GradBuffer, Gradients, LossBreakdown, RayTarget};
pub use refine::{refine, refine_with, write_loss_csv, LossRecord};
pub(crate) use refine::sample_batch;

use crate::grid::{Corners, SparseDenseGrid};
use crate::{Error, Result, Vec3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderConfig {
    pub rays_per_image: usize,
    pub images_per_batch: usize,
    pub steps: usize,
    pub lambda_depth: f64,
    pub lambda_normal: f64,
    pub lambda_eik: f64,
    /// Laplace scale in meters; `None` means twice the voxel size.
    pub beta: Option<f64>,
    pub lr: f64,
    /// Learning rate reaches `lr * lr_decay` at the final step.
    pub lr_decay: f64,
    /// Ray sample spacing in meters; `None` means half the voxel size.
    pub step_size: Option<f64>,
    pub max_samples: usize,
    /// Stop marching once transmittance falls below this; 0 disables.
    pub min_transmittance: f64,
    pub eikonal_uniform: usize,
    /// Ray samples with `|f|` below this join the Eikonal set; `None` means
    /// one block edge (half the default truncation).
    pub eikonal_band: Option<f64>,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub seed: u64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            rays_per_image: 1024,
            images_per_batch: 64,
            steps: 10_000,
            lambda_depth: 0.1,
            lambda_normal: 0.05,
            lambda_eik: 0.1,
            beta: None,
            lr: 1e-3,
            lr_decay: 0.1,
            step_size: None,
            max_samples: 2048,
            min_transmittance: 1e-4,
            eikonal_uniform: 1024,
            eikonal_band: None,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            seed: 0,
        }
    }
}

impl RenderConfig {
    pub fn beta_for(&self, grid: &SparseDenseGrid) -> f64 {
        self.beta.unwrap_or(2.0 * grid.voxel_size())
    }

    pub fn step_for(&self, grid: &SparseDenseGrid) -> f64 {
        self.step_size.unwrap_or(0.5 * grid.voxel_size())
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [self.lambda_depth, self.lambda_normal, self.lambda_eik, self.lr, self.lr_decay];
        if pos.iter().any(|v| !(*v >= 0.0) || !v.is_finite())
            || self.beta.is_some_and(|b| !(b > 0.0))
            || self.step_size.is_some_and(|s| !(s > 0.0))
            || !(0.0..1.0).contains(&self.rms_decay)
        {
            return Err(Error::Config("render: invalid numeric parameter".into()));
        }
        Ok(())
    }
}

/// Laplace density: `α(s) = (1/β) · CDF_Laplace(−s; 0, β)`.
#[inline]
pub fn sdf_to_density(s: f64, beta: f64) -> f64 {
    let e = 0.5 * (-s.abs() / beta).exp();
    if s > 0.0 {
        e / beta
    } else {
        (1.0 - e) / beta
    }
}

/// `dα/ds`, continuous at zero.
#[inline]
pub fn density_derivative(s: f64, beta: f64) -> f64 {
    -0.5 * (-s.abs() / beta).exp() / (beta * beta)
}

/// Weights `w_k = T_k (1 − e^{−τ_k})` and transmittances `T_k` for optical
/// depths `τ_k = α_k δ_k`.
pub fn render_weights(tau: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut w = Vec::with_capacity(tau.len());
    let mut trans = Vec::with_capacity(tau.len());
    let mut t = 1.0;
    for &x in tau {
        trans.push(t);
        w.push(-t * (-x).exp_m1());
        t *= (-x).exp();
    }
    (w, trans)
}

#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
    /// Sample lattice offset in `[0, 1)`.
    pub offset: f64,
}

#[derive(Debug, Clone)]
pub struct RaySample {
    pub t: f64,
    pub x: Vec3,
    pub sdf: f64,
    pub grad: Vec3,
    pub color: Vec3,
    pub corners: Corners,
}

#[derive(Debug, Clone)]
pub struct RenderedRay {
    pub samples: Vec<RaySample>,
    pub tau: Vec<f64>,
    pub weights: Vec<f64>,
    pub trans: Vec<f64>,
    pub color: Vec3,
    /// Expected distance along the ray.
    pub depth: f64,
    /// World-space `Σ w_k ∇f(x_k)`, not normalized.
    pub normal: Vec3,
}

/// March `ray`, query every sample and composite. Samples whose corners are
/// not all fused are skipped.
pub fn render_ray(grid: &SparseDenseGrid, ray: &Ray, beta: f64, step: f64, max_samples: usize, min_transmittance: f64) -> Result<RenderedRay> {
    let points = grid.march_ray_with_offset(&ray.origin, &ray.direction, step, ray.offset, max_samples);
    let mut out = RenderedRay {
        samples: Vec::new(),
        tau: Vec::new(),
        weights: Vec::new(),
        trans: Vec::new(),
        color: Vec3::zeros(),
        depth: 0.0,
        normal: Vec3::zeros(),
    };
    let mut trans = 1.0;
    for p in points {
        let Some(c) = grid.corners(&p.x) else {
            continue;
        };
        let (sdf, grad) = grid.interp_sdf_grad(&c);
        let color = grid.interp_color(&c);
        let tau = sdf_to_density(sdf, beta) * step;
        let w = -trans * (-tau).exp_m1();
        out.color += color * w;
        out.depth += p.t * w;
        out.normal += grad * w;
        out.trans.push(trans);
        out.weights.push(w);
        out.tau.push(tau);
        out.samples.push(RaySample {
            t: p.t,
            x: p.x,
            sdf,
            grad,
            color,
            corners: c,
        });
        trans *= (-tau).exp();
        if trans < min_transmittance {
            break;
        }
    }
    if out.samples.is_empty() {
        return Err(Error::DegenerateRay);
    }
    Ok(out)
}

/// Least-squares `(a, b)` minimizing `Σ (t_p − (a D_p + b))²`.
pub fn fit_depth_affine(rendered: &[f64], prior: &[f64]) -> Result<(f64, f64)> {
    assert_eq!(rendered.len(), prior.len());
    let n = prior.len() as f64;
    if prior.len() < 2 {
        return Err(Error::SingularSystem);
    }
    let md = prior.iter().sum::<f64>() / n;
    let mt = rendered.iter().sum::<f64>() / n;
    let (mut sdd, mut sdt) = (0.0, 0.0);
    for (t, d) in rendered.iter().zip(prior) {
        sdd += (d - md) * (d - md);
        sdt += (d - md) * (t - mt);
    }
    if sdd <= 1e-12 * prior.iter().map(|d| d * d).sum::<f64>().max(1e-300) {
        return Err(Error::SingularSystem);
    }
    let a = sdt / sdd;
    Ok((a, mt - a * md))
}

/// [`fit_depth_affine`], falling back to `a = 1, b = mean(t − D)`.
pub fn fit_depth_affine_or_shift(rendered: &[f64], prior: &[f64]) -> (f64, f64) {
    fit_depth_affine(rendered, prior).unwrap_or_else(|_| {
        if prior.is_empty() {
            return (1.0, 0.0);
        }
        let b = rendered.iter().zip(prior).map(|(t, d)| t - d).sum::<f64>() / prior.len() as f64;
        (1.0, b)
    })
}
