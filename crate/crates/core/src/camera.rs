//! Pinhole cameras with camera-to-world poses (`x_world = R x_cam + t`).

use crate::{Error, Mat3, Result, Vec2, Vec3};
use serde::{Deserialize, Serialize};

/// Minimum camera-frame depth accepted by [`Camera::project`].
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Camera-frame direction (z = 1) through a pixel.
    #[inline]
    pub fn back_project(&self, pixel: Vec2) -> Vec3 {
        Vec3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn in_bounds(&self, pixel: Vec2) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x <= (self.width - 1) as f64
            && pixel.y <= (self.height - 1) as f64
    }

    /// Resampled intrinsics for an image scaled by `factor`, keeping pixel
    /// centers at integer coordinates.
    pub fn scaled(&self, factor: f64) -> Intrinsics {
        Intrinsics {
            fx: self.fx * factor,
            fy: self.fy * factor,
            cx: (self.cx + 0.5) * factor - 0.5,
            cy: (self.cy + 0.5) * factor - 0.5,
            width: ((self.width as f64) * factor).round() as usize,
            height: ((self.height as f64) * factor).round() as usize,
        }
    }
}

/// Rigid camera-to-world transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Camera at `eye` looking at `target`; camera y axis points roughly
    /// along `-up` (image rows grow downward).
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        Self {
            rotation: Mat3::from_columns(&[x, y, z]),
            translation: eye,
        }
    }

    #[inline]
    pub fn to_world(&self, x_cam: &Vec3) -> Vec3 {
        self.rotation * x_cam + self.translation
    }

    #[inline]
    pub fn to_camera(&self, x_world: &Vec3) -> Vec3 {
        self.rotation.tr_mul(&(x_world - self.translation))
    }

    /// Transform taking points from this camera's frame into `other`'s frame:
    /// `(R_jᵀ R_i, R_jᵀ (t_i − t_j))`.
    pub fn relative_to(&self, other: &Pose) -> (Mat3, Vec3) {
        (
            other.rotation.transpose() * self.rotation,
            other.rotation.transpose() * (self.translation - other.translation),
        )
    }

    /// Largest deviation of `RᵀR` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        let e = self.rotation.transpose() * self.rotation - Mat3::identity();
        e.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Project the rotation onto SO(3). Fails when the determinant is not positive.
    pub fn orthonormalized(&self) -> Option<Pose> {
        if self.rotation.determinant() <= 0.0 {
            return None;
        }
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u?, svd.v_t?);
        let r = u * vt;
        (r.determinant() > 0.0).then_some(Pose {
            rotation: r,
            translation: self.translation,
        })
    }
}

/// Result of projecting a world point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vec2,
    pub depth: f64,
    /// Whether the pixel lies inside `[0, w-1] x [0, h-1]`.
    pub in_frame: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Self { intrinsics, pose }
    }

    pub fn project(&self, x_world: &Vec3) -> Result<Projection> {
        self.project_camera(&self.pose.to_camera(x_world))
    }

    /// Project a point already expressed in this camera's frame.
    #[inline]
    pub fn project_camera(&self, p: &Vec3) -> Result<Projection> {
        if p.z <= MIN_DEPTH {
            return Err(Error::BehindCamera(p.z));
        }
        let k = &self.intrinsics;
        let pixel = Vec2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
        Ok(Projection {
            pixel,
            depth: p.z,
            in_frame: k.in_bounds(pixel),
        })
    }

    pub fn unproject(&self, pixel: Vec2, depth: f64) -> Result<Vec3> {
        if !(depth > 0.0) {
            return Err(Error::NonPositiveDepth(depth));
        }
        Ok(self.pose.to_world(&(self.intrinsics.back_project(pixel) * depth)))
    }

    /// World-space unit ray direction through a pixel, and the ratio between
    /// distance along the ray and camera-frame depth.
    pub fn ray(&self, pixel: Vec2) -> (Vec3, f64) {
        let d = self.intrinsics.back_project(pixel);
        let n = d.norm();
        (self.pose.rotation * (d / n), n)
    }

    pub fn center(&self) -> Vec3 {
        self.pose.translation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3x4, Rotation3, Vector4};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr() -> Intrinsics {
        Intrinsics {
            fx: 500.0,
            fy: 480.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        }
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vec3::new(rng.gen(), rng.gen(), rng.gen());
        let r = Rotation3::new(axis * rng.gen_range(0.1..3.0)).into_inner();
        Pose::new(r, Vec3::new(rng.gen(), rng.gen(), rng.gen()))
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let cam = Camera::new(intr(), Pose::identity());
        let p = cam.project(&Vec3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(p.pixel, Vec2::new(320.0, 240.0));
        assert_eq!(p.depth, 2.0);
        assert!(p.in_frame);
        let x = cam.unproject(Vec2::new(320.0, 240.0), 1.0).unwrap();
        assert_eq!(x, Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn behind_camera_and_bad_depth_are_errors() {
        let cam = Camera::new(intr(), Pose::identity());
        assert!(matches!(
            cam.project(&Vec3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera(_))
        ));
        assert!(matches!(
            cam.unproject(Vec2::new(1.0, 1.0), 0.0),
            Err(Error::NonPositiveDepth(_))
        ));
        let off = cam.project(&Vec3::new(10.0, 0.0, 1.0)).unwrap();
        assert!(!off.in_frame);
    }

    #[test]
    fn round_trip_and_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let cam = Camera::new(intr(), random_pose(&mut rng));
            let px = Vec2::new(rng.gen_range(0.0..639.0), rng.gen_range(0.0..479.0));
            let d = rng.gen_range(0.1..10.0);
            let x = cam.unproject(px, d).unwrap();
            let p = cam.project(&x).unwrap();
            assert!((p.pixel - px).norm() < 1e-9);
            assert!((p.depth - d).abs() < 1e-9);

            // explicit K [Rᵀ | −Rᵀt] oracle
            let k = nalgebra::Matrix3::new(500.0, 0.0, 320.0, 0.0, 480.0, 240.0, 0.0, 0.0, 1.0);
            let rt = cam.pose.rotation.transpose();
            let mut ext = Matrix3x4::zeros();
            ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
            ext.set_column(3, &(-rt * cam.pose.translation));
            let w = Vec3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let h = k * ext * Vector4::new(w.x, w.y, w.z, 1.0);
            if h.z > 0.1 {
                let p = cam.project(&w).unwrap();
                let (ox, oy) = (h.x / h.z, h.y / h.z);
                assert!((p.pixel.x - ox).abs() < 1e-9 * ox.abs().max(1.0));
                assert!((p.pixel.y - oy).abs() < 1e-9 * oy.abs().max(1.0));
                assert!((p.depth - h.z).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn orthonormalize_rejects_reflections() {
        let mut p = Pose::identity();
        p.rotation[(2, 2)] = -1.0;
        assert!(p.orthonormalized().is_none());
        let mut q = Pose::identity();
        q.rotation[(0, 1)] = 1e-4;
        let fixed = q.orthonormalized().unwrap();
        assert!(fixed.orthonormality_error() < 1e-12);
    }
}
