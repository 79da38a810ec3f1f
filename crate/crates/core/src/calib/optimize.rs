use super::{binary_loss_gray, unary_loss, ScaleField, SparseLandmark, MAX_SCALE, MIN_SCALE};
use crate::calib::CovisibilityGraph;
use crate::dataio::Frame;
use crate::optim::RmsProp;
use crate::raster::{is_valid_depth, Raster};
use crate::{Error, Result, Vec2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibConfig {
    pub rows: usize,
    pub cols: usize,
    /// Weight of the landmark term.
    pub lambda: f64,
    pub lr: f64,
    pub steps: usize,
    /// Random pixels drawn per directed pair and step.
    pub pixels_per_pair: usize,
    pub min_covisibility: usize,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub seed: u64,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            rows: super::DEFAULT_ROWS,
            cols: super::DEFAULT_COLS,
            lambda: 1e-3,
            lr: 1e-2,
            steps: 500,
            pixels_per_pair: 512,
            min_covisibility: 20,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibRecord {
    pub step: usize,
    pub geometric: f64,
    pub photometric: f64,
    pub unary: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub scales: Vec<ScaleField>,
    pub trace: Vec<CalibRecord>,
}

/// Median of `d_k / D(p_k)` over a frame's landmark observations, or 1.
fn initial_scale(frame: &Frame, landmarks: &[SparseLandmark]) -> f64 {
    let mut ratios: Vec<f64> = landmarks
        .iter()
        .filter_map(|l| {
            let o = l.observation_in(frame.id)?;
            let d = frame.camera.project(&l.position).ok()?.depth;
            let prior = frame.depth.sample_depth(o.pixel.x, o.pixel.y)?;
            Some(d / prior)
        })
        .filter(|r| r.is_finite() && *r > 0.0)
        .collect();
    if ratios.is_empty() {
        return 1.0;
    }
    ratios.sort_by(f64::total_cmp);
    let n = ratios.len();
    if n % 2 == 1 {
        ratios[n / 2]
    } else {
        0.5 * (ratios[n / 2 - 1] + ratios[n / 2])
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn pair_seed(seed: u64, step: usize, i: usize, j: usize) -> u64 {
    mix(mix(mix(seed ^ step as u64) ^ i as u64) ^ j as u64)
}

/// Random pixels of `frame` with valid prior depth.
fn sample_pixels(frame: &Frame, n: usize, rng: &mut ChaCha8Rng, out: &mut Vec<Vec2>) {
    let (w, h) = (frame.width(), frame.height());
    let mut tries = 0;
    while out.len() < n && tries < 4 * n {
        tries += 1;
        let u = rng.gen_range(0..w);
        let v = rng.gen_range(0..h);
        if is_valid_depth(frame.depth.get(u, v, 0)) {
            out.push(Vec2::new(u as f64, v as f64));
        }
    }
}

/// Fit one scale field per frame by minimizing
/// `Σ_{(i,j)} h_ij + λ Σ_i g_i` with RMSProp. Both orientations of every
/// covisible pair contribute. Each step draws fresh random pixels per pair
/// and adds the pixels of landmarks shared by the pair.
pub fn optimize_scales(
    frames: &[Frame],
    landmarks: &[SparseLandmark],
    covis: &CovisibilityGraph,
    cfg: &CalibConfig,
) -> Result<Calibration> {
    if landmarks.is_empty() {
        return Err(Error::EmptySet);
    }
    let index: HashMap<usize, usize> = frames.iter().enumerate().map(|(k, f)| (f.id, k)).collect();
    let grays: Vec<Raster> = frames.par_iter().map(|f| f.image.to_gray()).collect();
    let mut scales: Vec<ScaleField> = frames
        .iter()
        .map(|f| ScaleField::new(cfg.rows, cfg.cols, f.width(), f.height(), initial_scale(f, landmarks)))
        .collect();

    let pairs: Vec<(usize, usize)> = covis
        .directed(cfg.min_covisibility)
        .into_iter()
        .filter_map(|(i, j)| Some((*index.get(&i)?, *index.get(&j)?)))
        .collect();
    let shared: Vec<Vec<Vec2>> = pairs
        .iter()
        .map(|&(a, b)| {
            let (fa, fb) = (frames[a].id, frames[b].id);
            landmarks
                .iter()
                .filter(|l| l.observation_in(fb).is_some())
                .filter_map(|l| l.observation_in(fa).map(|o| o.pixel))
                .collect()
        })
        .collect();
    let has_obs: Vec<bool> = frames
        .iter()
        .map(|f| landmarks.iter().any(|l| l.observation_in(f.id).is_some()))
        .collect();
    for (f, ok) in frames.iter().zip(&has_obs) {
        if !ok {
            log::warn!("frame {} has no landmark observations; unary term skipped", f.id);
        }
    }

    let n_params = cfg.rows * cfg.cols;
    let mut opt: Vec<RmsProp> = frames.iter().map(|_| RmsProp::new(n_params, cfg.rms_decay, cfg.rms_eps)).collect();
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let pair_losses: Vec<_> = pairs
            .par_iter()
            .zip(&shared)
            .map(|(&(a, b), extra)| {
                let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(cfg.seed, step, a, b));
                let mut px = Vec::with_capacity(cfg.pixels_per_pair + extra.len());
                sample_pixels(&frames[a], cfg.pixels_per_pair, &mut rng, &mut px);
                px.extend_from_slice(extra);
                binary_loss_gray(&frames[a], &grays[a], &frames[b], &grays[b], &scales[a], &scales[b], &px)
            })
            .collect();
        let unary: Vec<Option<(f64, Vec<f64>)>> = frames
            .par_iter()
            .zip(&scales)
            .zip(&has_obs)
            .map(|((f, s), &ok)| if ok { unary_loss(f, s, landmarks).ok() } else { None })
            .collect();

        let mut grads = vec![vec![0.0; n_params]; frames.len()];
        let mut rec = CalibRecord {
            step,
            geometric: 0.0,
            photometric: 0.0,
            unary: 0.0,
            total: 0.0,
        };
        for (&(a, b), l) in pairs.iter().zip(&pair_losses) {
            rec.geometric += l.geometric;
            rec.photometric += l.photometric;
            for (g, d) in grads[a].iter_mut().zip(&l.grad_i) {
                *g += d;
            }
            for (g, d) in grads[b].iter_mut().zip(&l.grad_j) {
                *g += d;
            }
        }
        for (k, u) in unary.iter().enumerate() {
            if let Some((v, g)) = u {
                rec.unary += v;
                for (acc, d) in grads[k].iter_mut().zip(g) {
                    *acc += cfg.lambda * d;
                }
            }
        }
        rec.total = rec.geometric + rec.photometric + cfg.lambda * rec.unary;
        trace.push(rec);
        if !rec.total.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                trace: trace.iter().map(|r| r.total).collect(),
            });
        }
        for ((s, o), g) in scales.iter_mut().zip(&mut opt).zip(&grads) {
            o.step(s.values_mut(), g, cfg.lr);
            s.clamp(MIN_SCALE, MAX_SCALE);
        }
        if step % 50 == 0 || step + 1 == cfg.steps {
            log::debug!(
                "calib step {step}: geo {:.5} photo {:.5} unary {:.5}",
                rec.geometric,
                rec.photometric,
                rec.unary
            );
        }
    }
    Ok(Calibration { scales, trace })
}

pub fn write_trace_csv(path: &Path, trace: &[CalibRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "step,geometric,photometric,unary,total")?;
    for r in trace {
        writeln!(w, "{},{},{},{},{}", r.step, r.geometric, r.photometric, r.unary, r.total)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_differ_per_pair_and_step() {
        let a = pair_seed(1, 0, 2, 3);
        assert_ne!(a, pair_seed(1, 0, 3, 2));
        assert_ne!(a, pair_seed(1, 1, 2, 3));
        assert_eq!(a, pair_seed(1, 0, 2, 3));
    }
}
