use super::{density_derivative, fit_depth_affine_or_shift, render_ray, Ray, RenderConfig, RenderedRay};
use crate::grid::{Corners, SparseDenseGrid};
use crate::{Error, Mat3, Result, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Supervision for one ray. Missing priors drop only their own term.
#[derive(Debug, Clone, Copy)]
pub struct RayTarget {
    pub color: Vec3,
    /// Prior distance along the ray.
    pub depth: Option<f64>,
    /// Prior unit normal in the camera frame.
    pub normal: Option<Vec3>,
    /// Camera-to-world rotation of the source view.
    pub rotation: Mat3,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub color: f64,
    pub depth: f64,
    pub normal: f64,
    pub eikonal: f64,
    pub total: f64,
    /// Rays with at least one valid sample.
    pub rays: usize,
}

/// Dense per-voxel gradient buffers with a list of touched voxels.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    pub sdf: Vec<f64>,
    pub color: Vec<[f64; 3]>,
    /// `n_labels` entries per voxel; empty unless requested.
    pub logits: Vec<f64>,
    n_labels: usize,
    touched: Vec<usize>,
    mark: Vec<bool>,
}

impl GradBuffer {
    pub fn new(grid: &SparseDenseGrid, with_logits: bool) -> Self {
        let n = grid.num_voxels();
        let c = if with_logits { grid.n_labels() } else { 0 };
        GradBuffer {
            sdf: vec![0.0; n],
            color: vec![[0.0; 3]; n],
            logits: vec![0.0; n * c],
            n_labels: c,
            touched: Vec::new(),
            mark: vec![false; n],
        }
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    #[inline]
    pub fn touch(&mut self, id: usize) {
        if !self.mark[id] {
            self.mark[id] = true;
            self.touched.push(id);
        }
    }

    #[inline]
    pub fn add_sdf(&mut self, id: usize, g: f64) {
        self.touch(id);
        self.sdf[id] += g;
    }

    #[inline]
    pub fn add_color(&mut self, id: usize, g: Vec3) {
        self.touch(id);
        for k in 0..3 {
            self.color[id][k] += g[k];
        }
    }

    #[inline]
    pub fn add_logit(&mut self, id: usize, k: usize, g: f64) {
        self.touch(id);
        self.logits[id * self.n_labels + k] += g;
    }

    /// Touched voxel ids in first-touch order.
    pub fn touched(&self) -> &[usize] {
        &self.touched
    }

    pub fn clear(&mut self) {
        for &id in &self.touched {
            self.mark[id] = false;
            self.sdf[id] = 0.0;
            self.color[id] = [0.0; 3];
            let c = self.n_labels;
            self.logits[id * c..(id + 1) * c].fill(0.0);
        }
        self.touched.clear();
    }

    pub fn is_finite(&self) -> bool {
        self.touched.iter().all(|&id| {
            self.sdf[id].is_finite()
                && self.color[id].iter().all(|v| v.is_finite())
                && self.logits[id * self.n_labels..(id + 1) * self.n_labels].iter().all(|v| v.is_finite())
        })
    }

    pub fn to_gradients(&self) -> Gradients {
        let mut ids = self.touched.clone();
        ids.sort_unstable();
        Gradients {
            sdf: ids.iter().map(|&i| (i, self.sdf[i])).collect(),
            color: ids.iter().map(|&i| (i, self.color[i])).collect(),
        }
    }
}

/// Sparse gradients sorted by flat voxel id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub sdf: Vec<(usize, f64)>,
    pub color: Vec<(usize, [f64; 3])>,
}

impl Gradients {
    pub fn sdf_of(&self, id: usize) -> f64 {
        self.sdf.binary_search_by_key(&id, |e| e.0).map_or(0.0, |k| self.sdf[k].1)
    }

    pub fn color_of(&self, id: usize) -> [f64; 3] {
        self.color.binary_search_by_key(&id, |e| e.0).map_or([0.0; 3], |k| self.color[k].1)
    }
}

fn eikonal_term(grid: &SparseDenseGrid, c: &Corners) -> (f64, Vec3) {
    let (_, g) = grid.interp_sdf_grad(c);
    let n = g.norm();
    let coef = if n > 0.0 { g * (2.0 * (n - 1.0) / n) } else { Vec3::zeros() };
    ((n - 1.0).powi(2), coef)
}

fn accumulate_eikonal(grid: &SparseDenseGrid, corners: &[Corners], scale: f64, buf: &mut GradBuffer) -> f64 {
    if corners.is_empty() {
        return 0.0;
    }
    let n = corners.len() as f64;
    let terms: Vec<(f64, Vec3)> = corners.par_iter().map(|c| eikonal_term(grid, c)).collect();
    let mut loss = 0.0;
    for (c, (l, coef)) in corners.iter().zip(terms) {
        loss += l;
        let coef = coef * (scale / n);
        for i in 0..8 {
            buf.add_sdf(c.ids[i], coef.dot(&c.grads[i]));
        }
    }
    loss / n
}

/// Mean of `(‖∇f(x)‖ − 1)²` over valid points and its SDF gradient.
pub fn eikonal_loss(grid: &SparseDenseGrid, points: &[Vec3]) -> (f64, Gradients) {
    let corners: Vec<Corners> = points.iter().filter_map(|p| grid.corners(p)).collect();
    let mut buf = GradBuffer::new(grid, false);
    let v = accumulate_eikonal(grid, &corners, 1.0, &mut buf);
    (v, buf.to_gradients())
}

fn eikonal_band(cfg: &RenderConfig, grid: &SparseDenseGrid) -> f64 {
    cfg.eikonal_band.unwrap_or(grid.block_size())
}

/// Ray samples with `|f| < band` plus `n_uniform` uniform draws that are
/// valid to query.
pub fn sample_eikonal_points(grid: &SparseDenseGrid, rays: &[RenderedRay], band: f64, n_uniform: usize, seed: u64) -> Vec<Vec3> {
    let mut out: Vec<Vec3> = rays
        .iter()
        .flat_map(|r| r.samples.iter().filter(|s| s.sdf.abs() < band).map(|s| s.x))
        .collect();
    if n_uniform > 0 && !grid.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(u) = grid.sample_uniform_with(n_uniform, &mut rng) {
            out.extend(u.into_iter().filter(|p| grid.corners(p).is_some()));
        }
    }
    out
}

/// Per-sample backward coefficients: `∂L/∂f`, `∂L/∂∇f`, `∂L/∂c`.
type SampleGrad = (f64, Vec3, Vec3);

fn ray_backward(r: &RenderedRay, beta: f64, step: f64, dc: Vec3, dt: f64, dn: Vec3) -> Vec<SampleGrad> {
    let k = r.samples.len();
    let g: Vec<f64> = r
        .samples
        .iter()
        .map(|s| dc.dot(&s.color) + dt * s.t + dn.dot(&s.grad))
        .collect();
    let mut out = vec![(0.0, Vec3::zeros(), Vec3::zeros()); k];
    // suffix = Σ_{j>m} w_j g_j
    let mut suffix = 0.0;
    for m in (0..k).rev() {
        let t_next = r.trans[m] * (-r.tau[m]).exp();
        let d_tau = t_next * g[m] - suffix;
        let d_s = d_tau * step * density_derivative(r.samples[m].sdf, beta);
        out[m] = (d_s, dn * r.weights[m], dc * r.weights[m]);
        suffix += r.weights[m] * g[m];
    }
    out
}

/// Forward and backward pass over a ray batch, accumulating into `buf`.
/// `step` seeds the uniform Eikonal draws.
pub fn backward_into(
    grid: &SparseDenseGrid,
    rays: &[Ray],
    targets: &[RayTarget],
    cfg: &RenderConfig,
    step: usize,
    buf: &mut GradBuffer,
) -> Result<LossBreakdown> {
    assert_eq!(rays.len(), targets.len());
    let beta = cfg.beta_for(grid);
    let dstep = cfg.step_for(grid);
    let rendered: Vec<Option<RenderedRay>> = rays
        .par_iter()
        .map(|r| render_ray(grid, r, beta, dstep, cfg.max_samples, cfg.min_transmittance).ok())
        .collect();

    let mut out = LossBreakdown::default();
    let (mut n_c, mut n_n) = (0usize, 0usize);
    let (mut td, mut dd) = (Vec::new(), Vec::new());
    for (r, tg) in rendered.iter().zip(targets) {
        let Some(r) = r else { continue };
        n_c += 1;
        if let Some(d) = tg.depth {
            td.push(r.depth);
            dd.push(d);
        }
        if tg.normal.is_some() && r.normal.norm() > 1e-12 {
            n_n += 1;
        }
    }
    out.rays = n_c;
    let (a, b) = fit_depth_affine_or_shift(&td, &dd);
    let n_d = td.len();

    let grads: Vec<Option<([f64; 3], Vec<SampleGrad>)>> = rendered
        .par_iter()
        .zip(targets)
        .map(|(r, tg)| {
            let r = r.as_ref()?;
            let mut loss = [0.0; 3];
            let diff = r.color - tg.color;
            loss[0] = diff.abs().sum();
            let dc = diff.map(f64::signum) / n_c as f64;
            let mut dt = 0.0;
            if let Some(d) = tg.depth {
                let res = r.depth - (a * d + b);
                loss[1] = res * res;
                dt = cfg.lambda_depth * 2.0 * res / n_d as f64;
            }
            let mut dn = Vec3::zeros();
            let nn = r.normal.norm();
            if let (Some(prior), true) = (tg.normal, nn > 1e-12) {
                let u = r.normal / nn;
                let cam = tg.rotation.transpose() * u;
                let diff = cam - prior;
                loss[2] = diff.abs().sum();
                let g_cam = diff.map(f64::signum) * (cfg.lambda_normal / n_n as f64);
                let g_u = tg.rotation * g_cam;
                dn = (g_u - u * g_u.dot(&u)) / nn;
            }
            Some((loss, ray_backward(r, beta, dstep, dc, dt, dn)))
        })
        .collect();

    for (r, g) in rendered.iter().zip(grads) {
        let (Some(r), Some((loss, g))) = (r, g) else { continue };
        out.color += loss[0];
        out.depth += loss[1];
        out.normal += loss[2];
        for (s, (d_s, d_grad, d_col)) in r.samples.iter().zip(g) {
            let c = &s.corners;
            for i in 0..8 {
                buf.add_sdf(c.ids[i], d_s * c.weights[i] + d_grad.dot(&c.grads[i]));
                buf.add_color(c.ids[i], d_col * c.weights[i]);
            }
        }
    }
    out.color /= n_c.max(1) as f64;
    out.depth /= n_d.max(1) as f64;
    out.normal /= n_n.max(1) as f64;

    if cfg.lambda_eik > 0.0 {
        let band = eikonal_band(cfg, grid);
        let mut corners: Vec<Corners> = rendered
            .iter()
            .flatten()
            .flat_map(|r| r.samples.iter().filter(|s| s.sdf.abs() < band).map(|s| s.corners))
            .collect();
        if cfg.eikonal_uniform > 0 && !grid.is_empty() {
            let seed = cfg.seed ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts = grid.sample_uniform_with(cfg.eikonal_uniform, &mut rng)?;
            corners.extend(pts.iter().filter_map(|p| grid.corners(p)));
        }
        out.eikonal = accumulate_eikonal(grid, &corners, cfg.lambda_eik, buf);
    }
    out.total = out.color + cfg.lambda_depth * out.depth + cfg.lambda_normal * out.normal + cfg.lambda_eik * out.eikonal;
    if !out.total.is_finite() || !buf.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    Ok(out)
}

/// `L = L_c + λ_d L_d + λ_n L_n + λ_eik L_eik` and its gradient with respect
/// to every touched SDF and color voxel value.
pub fn backward_step(
    grid: &SparseDenseGrid,
    rays: &[Ray],
    targets: &[RayTarget],
    cfg: &RenderConfig,
    step: usize,
) -> Result<(LossBreakdown, Gradients)> {
    let mut buf = GradBuffer::new(grid, false);
    let l = backward_into(grid, rays, targets, cfg, step, &mut buf)?;
    Ok((l, buf.to_gradients()))
}
