use super::{ScaleField, SparseLandmark};
use crate::camera::MIN_DEPTH;
use crate::dataio::Frame;
use crate::raster::Raster;
use crate::{Error, Result, Vec2};

/// Landmark reprojection loss of one frame:
/// `Σ_k (d_k − D(p_k) φ(p_k))²`, where `d_k` is the landmark's depth in the
/// frame and `p_k` its observed pixel. Returns the value and the gradient
/// over the control points.
pub fn unary_loss(frame: &Frame, scale: &ScaleField, landmarks: &[SparseLandmark]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; scale.values().len()];
    let mut value = 0.0;
    let mut used = 0;
    for l in landmarks {
        let Some(obs) = l.observation_in(frame.id) else {
            continue;
        };
        let Ok(proj) = frame.camera.project(&l.position) else {
            continue;
        };
        let Some(prior) = frame.depth.sample_depth(obs.pixel.x, obs.pixel.y) else {
            continue;
        };
        let taps = scale.stencil(obs.pixel.x, obs.pixel.y);
        let phi: f64 = taps.iter().map(|&(i, w)| w * scale.values()[i]).sum();
        let r = proj.depth - prior * phi;
        value += r * r;
        for (i, w) in taps {
            grad[i] += -2.0 * prior * r * w;
        }
        used += 1;
    }
    if used == 0 {
        return Err(Error::NoObservations { frame: frame.id });
    }
    Ok((value, grad))
}

/// Pairwise loss breakdown with gradients onto both scale grids.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub geometric: f64,
    pub photometric: f64,
    pub grad_i: Vec<f64>,
    pub grad_j: Vec<f64>,
    pub used: usize,
    pub skipped: usize,
}

impl PairLoss {
    pub fn value(&self) -> f64 {
        self.geometric + self.photometric
    }
}

/// Pairwise consistency loss for pixels of frame `i` (see [`binary_loss_gray`]).
pub fn binary_loss(
    frame_i: &Frame,
    frame_j: &Frame,
    scale_i: &ScaleField,
    scale_j: &ScaleField,
    pixels: &[Vec2],
) -> PairLoss {
    binary_loss_gray(
        frame_i,
        &frame_i.image.to_gray(),
        frame_j,
        &frame_j.image.to_gray(),
        scale_i,
        scale_j,
        pixels,
    )
}

/// Each pixel `p` of frame `i` is lifted with its scaled depth, moved into
/// frame `j` by the relative pose and projected to `p'`. The loss is
/// `(d_{i→j} − D_j(p') φ_j(p'))² + (I_i(p) − I_j(p'))²` on grayscale
/// intensities. Pixels without valid depth, or landing behind or outside
/// frame `j`, are skipped.
pub fn binary_loss_gray(
    frame_i: &Frame,
    gray_i: &Raster,
    frame_j: &Frame,
    gray_j: &Raster,
    scale_i: &ScaleField,
    scale_j: &ScaleField,
    pixels: &[Vec2],
) -> PairLoss {
    let mut out = PairLoss {
        geometric: 0.0,
        photometric: 0.0,
        grad_i: vec![0.0; scale_i.values().len()],
        grad_j: vec![0.0; scale_j.values().len()],
        used: 0,
        skipped: 0,
    };
    let (r_ij, t_ij) = frame_i.camera.pose.relative_to(&frame_j.camera.pose);
    let kj = frame_j.camera.intrinsics;
    for p in pixels {
        let Some(d_i) = frame_i.depth.sample_depth(p.x, p.y) else {
            out.skipped += 1;
            continue;
        };
        let Some(i_i) = gray_i.sample(p.x, p.y, 0) else {
            out.skipped += 1;
            continue;
        };
        let taps_i = scale_i.stencil(p.x, p.y);
        let phi_i: f64 = taps_i.iter().map(|&(k, w)| w * scale_i.values()[k]).sum();
        let z_i = d_i * phi_i;
        let q = r_ij * frame_i.camera.intrinsics.back_project(*p);
        let x = q * z_i + t_ij;
        if x.z <= MIN_DEPTH {
            out.skipped += 1;
            continue;
        }
        let p2 = Vec2::new(kj.fx * x.x / x.z + kj.cx, kj.fy * x.y / x.z + kj.cy);
        let Some((d_j, dd_x, dd_y)) = frame_j.depth.sample_depth_with_grad(p2.x, p2.y) else {
            out.skipped += 1;
            continue;
        };
        let (i_j, di_x, di_y) = gray_j.sample_with_grad(p2.x, p2.y, 0).expect("inside frame");
        let (taps_j, dtaps_j) = scale_j.stencil_with_grad(p2.x, p2.y);
        let mut phi_j = 0.0;
        let mut dphi = (0.0, 0.0);
        for (&(k, w), &(gx, gy)) in taps_j.iter().zip(&dtaps_j) {
            let v = scale_j.values()[k];
            phi_j += w * v;
            dphi.0 += gx * v;
            dphi.1 += gy * v;
        }

        let r_g = x.z - d_j * phi_j;
        let r_p = i_i - i_j;
        out.geometric += r_g * r_g;
        out.photometric += r_p * r_p;
        out.used += 1;

        // dx/dz_i = q; chain through the projection
        let inv_z = 1.0 / x.z;
        let dpx = kj.fx * (q.x * x.z - x.x * q.z) * inv_z * inv_z;
        let dpy = kj.fy * (q.y * x.z - x.y * q.z) * inv_z * inv_z;
        let dscaled_x = dd_x * phi_j + d_j * dphi.0;
        let dscaled_y = dd_y * phi_j + d_j * dphi.1;
        let dl_dz = 2.0 * r_g * (q.z - dscaled_x * dpx - dscaled_y * dpy) - 2.0 * r_p * (di_x * dpx + di_y * dpy);
        for &(k, w) in &taps_i {
            out.grad_i[k] += dl_dz * d_i * w;
        }
        for &(k, w) in &taps_j {
            out.grad_j[k] += -2.0 * r_g * d_j * w;
        }
    }
    out
}
