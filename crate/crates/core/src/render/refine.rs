use super::backward::{backward_into, GradBuffer, RayTarget};
use super::{Ray, RenderConfig};
use crate::calib::ScaleField;
use crate::dataio::Frame;
use crate::grid::SparseDenseGrid;
use crate::optim::{exponential_lr, SparseRmsProp};
use crate::raster::is_valid_depth;
use crate::{Result, Vec2, Vec3};
use rand::{seq::index, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub color: f64,
    pub depth: f64,
    pub normal: f64,
    pub eikonal: f64,
    pub total: f64,
    pub lr: f64,
}

/// Draw one training batch: random views, random pixels per view.
pub(crate) fn sample_batch(
    frames: &[Frame],
    scales: &[ScaleField],
    cfg: &RenderConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<Ray>, Vec<RayTarget>) {
    let n_img = cfg.images_per_batch.min(frames.len());
    let picks = index::sample(rng, frames.len(), n_img).into_vec();
    let mut rays = Vec::with_capacity(n_img * cfg.rays_per_image);
    let mut targets = Vec::with_capacity(rays.capacity());
    for k in picks {
        let f = &frames[k];
        let rot = f.camera.pose.rotation;
        for _ in 0..cfg.rays_per_image {
            let (u, v) = (rng.gen_range(0..f.width()), rng.gen_range(0..f.height()));
            let px = Vec2::new(u as f64, v as f64);
            let (dir, ratio) = f.camera.ray(px);
            let c = f.image.pixel(u, v);
            let d = f.depth.get(u, v, 0);
            let depth = is_valid_depth(d).then(|| d as f64 * scales[k].lookup(px.x, px.y) * ratio);
            let normal = f.normal.as_ref().and_then(|n| {
                let p = n.pixel(u, v);
                let n = Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64);
                let len = n.norm();
                (len > 0.5 && len.is_finite()).then(|| n / len)
            });
            rays.push(Ray {
                origin: f.camera.center(),
                direction: dir,
                offset: rng.gen(),
            });
            targets.push(RayTarget {
                color: Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64),
                depth,
                normal,
                rotation: rot,
            });
        }
    }
    (rays, targets)
}

/// Optimize voxel SDF and color by volume rendering.
pub fn refine(grid: &mut SparseDenseGrid, frames: &[Frame], scales: &[ScaleField], cfg: &RenderConfig) -> Result<Vec<LossRecord>> {
    refine_with(grid, frames, scales, cfg, |_, _, _| Ok(()))
}

/// [`refine`] with a callback after every step, e.g. for snapshots.
pub fn refine_with<F>(
    grid: &mut SparseDenseGrid,
    frames: &[Frame],
    scales: &[ScaleField],
    cfg: &RenderConfig,
    mut on_step: F,
) -> Result<Vec<LossRecord>>
where
    F: FnMut(usize, &SparseDenseGrid, &LossRecord) -> Result<()>,
{
    cfg.validate()?;
    assert_eq!(frames.len(), scales.len());
    let mut trace = Vec::with_capacity(cfg.steps);
    if cfg.steps == 0 || frames.is_empty() || grid.is_empty() {
        return Ok(trace);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = SparseRmsProp::new(4 * grid.num_voxels(), cfg.rms_decay, cfg.rms_eps);
    let mut buf = GradBuffer::new(grid, false);
    for step in 0..cfg.steps {
        let (rays, targets) = sample_batch(frames, scales, cfg, &mut rng);
        buf.clear();
        let l = backward_into(grid, &rays, &targets, cfg, step, &mut buf)?;
        let lr = exponential_lr(cfg.lr, cfg.lr_decay, step, cfg.steps);
        opt.begin_step();
        for &id in buf.touched() {
            let s = grid.sdf_by_id(id) as f64 + opt.update(4 * id, buf.sdf[id], lr);
            *grid.sdf_by_id_mut(id) = s as f32;
            let g = buf.color[id];
            let c = grid.color_by_id_mut(id);
            for k in 0..3 {
                let v = c[k] as f64 + opt.update(4 * id + 1 + k, g[k], lr);
                c[k] = v.clamp(0.0, 1.0) as f32;
            }
        }
        let rec = LossRecord {
            step,
            color: l.color,
            depth: l.depth,
            normal: l.normal,
            eikonal: l.eikonal,
            total: l.total,
            lr,
        };
        if step % 100 == 0 || step + 1 == cfg.steps {
            log::debug!(
                "refine step {step}: total {:.5} (c {:.4} d {:.5} n {:.4} eik {:.4}) rays {}",
                l.total,
                l.color,
                l.depth,
                l.normal,
                l.eikonal,
                l.rays
            );
        }
        trace.push(rec);
        on_step(step, grid, &rec)?;
    }
    Ok(trace)
}

pub fn write_loss_csv(path: &Path, trace: &[LossRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,L_c,L_d,L_n,L_eik,total,lr")?;
    for r in trace {
        writeln!(w, "{},{},{},{},{},{},{}", r.step, r.color, r.depth, r.normal, r.eikonal, r.total, r.lr)?;
    }
    w.flush()?;
    Ok(())
}
