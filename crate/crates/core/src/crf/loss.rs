use super::{infer, sample_surface, softmax_into, Consensus, CrfConfig, SurfaceSampleSet};
use crate::calib::ScaleField;
use crate::dataio::Frame;
use crate::grid::SparseDenseGrid;
use crate::optim::{exponential_lr, SparseRmsProp};
use crate::render::{backward_into, sample_batch, GradBuffer, RenderConfig};
use crate::{Error, Result, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CrfLosses {
    pub color: f64,
    pub normal: f64,
    pub label: f64,
    /// `λ_color L_color + λ_normal L_normal + λ_label L_label`.
    pub total: f64,
}

/// CRF losses of the grid's current properties at the sample points against
/// a fixed consensus. Properties are re-read through each sample's corner
/// cache, so the losses follow the grid as it is optimized; sample
/// positions stay fixed. Gradients (already weighted by the λs) are added
/// to `buf` when given.
pub fn crf_losses(
    grid: &SparseDenseGrid,
    set: &SurfaceSampleSet,
    consensus: &Consensus,
    cfg: &CrfConfig,
    mut buf: Option<&mut GradBuffer>,
) -> CrfLosses {
    let n = set.len();
    if n == 0 {
        return CrfLosses::default();
    }
    let inv_n = 1.0 / n as f64;
    let c = set.n_labels;
    let with_labels = c > 0 && consensus.labels.len() == n * c;
    let mut out = CrfLosses::default();
    let mut z = vec![0.0; c];
    let mut p = vec![0.0; c];
    for (i, s) in set.samples.iter().enumerate() {
        let k = &s.corners;

        let dc = grid.interp_color(k) - consensus.colors[i];
        out.color += dc.norm_squared() * inv_n;

        let (_, g) = grid.interp_sdf_grad(k);
        let len = g.norm();
        let mut dg = Vec3::zeros();
        if len > 1e-12 {
            let u = g / len;
            let dn = u - consensus.normals[i];
            out.normal += dn.norm_squared() * inv_n;
            let gu = dn * (2.0 * inv_n * cfg.lambda_normal);
            dg = (gu - u * gu.dot(&u)) / len;
        }

        let mut dz = Vec::new();
        if with_labels {
            grid.interp_logits(k, &mut z);
            softmax_into(&z, cfg.label_temperature, &mut p);
            let q = &consensus.labels[i * c..(i + 1) * c];
            let r: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a.max(1e-300) / b.max(1e-300)).ln()).collect();
            let kl: f64 = p.iter().zip(&r).map(|(a, b)| a * b).sum();
            out.label += kl * inv_n;
            let scale = cfg.lambda_label * inv_n / cfg.label_temperature;
            dz = p.iter().zip(&r).map(|(a, b)| scale * a * (b - kl)).collect();
        }

        if let Some(buf) = buf.as_deref_mut() {
            let gc = dc * (2.0 * inv_n * cfg.lambda_color);
            let logits = buf.n_labels() == c && !dz.is_empty();
            for j in 0..8 {
                let id = k.ids[j];
                buf.add_color(id, gc * k.weights[j]);
                if cfg.normal_to_sdf {
                    buf.add_sdf(id, dg.dot(&k.grads[j]));
                }
                if logits {
                    for (l, g) in dz.iter().enumerate() {
                        buf.add_logit(id, l, g * k.weights[j]);
                    }
                }
            }
        }
    }
    out.total = cfg.lambda_color * out.color + cfg.lambda_normal * out.normal + cfg.lambda_label * out.label;
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrfRecord {
    pub step: usize,
    /// Rendering loss of the batch.
    pub render: f64,
    pub color: f64,
    pub normal: f64,
    pub label: f64,
    pub crf: f64,
    pub total: f64,
    pub samples: usize,
    pub lr: f64,
}

/// Joint optimization of the rendering loss and the CRF loss. Surface
/// samples and their consensus are recomputed every `resample_every` steps.
pub fn crf_refine(
    grid: &mut SparseDenseGrid,
    frames: &[Frame],
    scales: &[ScaleField],
    render: &RenderConfig,
    cfg: &CrfConfig,
) -> Result<Vec<CrfRecord>> {
    crf_refine_with(grid, frames, scales, render, cfg, |_, _, _| Ok(()))
}

pub fn crf_refine_with<F>(
    grid: &mut SparseDenseGrid,
    frames: &[Frame],
    scales: &[ScaleField],
    render: &RenderConfig,
    cfg: &CrfConfig,
    mut on_step: F,
) -> Result<Vec<CrfRecord>>
where
    F: FnMut(usize, &SparseDenseGrid, &CrfRecord) -> Result<()>,
{
    render.validate()?;
    cfg.validate()?;
    assert_eq!(frames.len(), scales.len());
    let mut trace = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 || grid.is_empty() {
        return Ok(trace);
    }
    let c = grid.n_labels();
    let stride = 4 + c;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = SparseRmsProp::new(stride * grid.num_voxels(), render.rms_decay, render.rms_eps);
    let mut buf = GradBuffer::new(grid, true);
    let mut set = SurfaceSampleSet::default();
    let mut consensus = Consensus::default();
    for step in 0..cfg.steps {
        if step % cfg.resample_every == 0 {
            let seed = cfg.seed.wrapping_add(step as u64);
            set = sample_surface(grid, cfg.n_viewpoints, cfg.rays_per_view, seed)?;
            set.subsample(cfg.samples, seed);
            consensus = infer(&set, cfg)?;
            log::debug!("crf step {step}: {} surface samples", set.len());
        }
        buf.clear();
        let render_loss = if frames.is_empty() {
            0.0
        } else {
            let (rays, targets) = sample_batch(frames, scales, render, &mut rng);
            backward_into(grid, &rays, &targets, render, step, &mut buf)?.total
        };
        let l = crf_losses(grid, &set, &consensus, cfg, Some(&mut buf));
        let total = render_loss + l.total;
        if !total.is_finite() || !buf.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let lr = exponential_lr(cfg.lr, cfg.lr_decay, step, cfg.steps);
        opt.begin_step();
        for &id in buf.touched() {
            let base = stride * id;
            let s = grid.sdf_by_id(id) as f64 + opt.update(base, buf.sdf[id], lr);
            *grid.sdf_by_id_mut(id) = s as f32;
            let g = buf.color[id];
            let col = grid.color_by_id_mut(id);
            for k in 0..3 {
                let v = col[k] as f64 + opt.update(base + 1 + k, g[k], lr);
                col[k] = v.clamp(0.0, 1.0) as f32;
            }
            let gl = &buf.logits[id * c..(id + 1) * c];
            let logits = grid.logits_by_id_mut(id);
            for k in 0..c {
                logits[k] = (logits[k] as f64 + opt.update(base + 4 + k, gl[k], lr)) as f32;
            }
        }
        let rec = CrfRecord {
            step,
            render: render_loss,
            color: l.color,
            normal: l.normal,
            label: l.label,
            crf: l.total,
            total,
            samples: set.len(),
            lr,
        };
        if step % 50 == 0 || step + 1 == cfg.steps {
            log::debug!(
                "crf step {step}: total {:.5} render {:.5} (c {:.5} n {:.5} l {:.5})",
                total,
                render_loss,
                l.color,
                l.normal,
                l.label
            );
        }
        trace.push(rec);
        on_step(step, grid, &rec)?;
    }
    Ok(trace)
}

pub fn write_crf_csv(path: &Path, trace: &[CrfRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,L_render,L_crf_color,L_crf_normal,L_crf_label,L_crf,total,samples,lr")?;
    for r in trace {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            r.step, r.render, r.color, r.normal, r.label, r.crf, r.total, r.samples, r.lr
        )?;
    }
    w.flush()?;
    Ok(())
}
