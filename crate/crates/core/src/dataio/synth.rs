//! Synthetic indoor scenes with exact ground truth.
//!
//! An axis-aligned room `[0, sx] × [0, sy] × [0, sz]` (z up) holds a few
//! analytic spheres and boxes. Cameras move on a horizontal circle around the
//! room center looking outward. Every map is produced by analytic ray casting.

use super::{gt_dir, write_f32, Dataset, Frame};
use crate::calib::{CovisPair, CovisibilityGraph, Observation, SparseLandmark};
use crate::camera::{Camera, Intrinsics, Pose};
use crate::mesh::Mesh;
use crate::raster::Raster;
use crate::{Error, Result, Vec2, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    Box { min: [f64; 3], max: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Room extent in meters.
    pub room: [f64; 3],
    pub objects: Vec<Shape>,
    pub n_frames: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in degrees.
    pub hfov_deg: f64,
    pub trajectory_radius: f64,
    pub camera_height: f64,
    pub n_labels: usize,
    /// Texture contrast in `[0, 1]`; zero gives flat per-surface colors.
    pub texture: f64,
    /// Amplitude of the smooth multiplicative depth distortion.
    pub distortion: f64,
    /// Per-frame constant scale drawn uniformly from this range.
    pub scale_range: [f64; 2],
    pub landmarks_per_frame: usize,
    pub min_covisibility: usize,
    /// Edge length of the ground-truth mesh tessellation.
    pub mesh_cell: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            room: [4.0, 3.5, 2.6],
            objects: vec![
                Shape::Sphere {
                    center: [0.8, 0.9, 0.45],
                    radius: 0.45,
                },
                Shape::Box {
                    min: [2.7, 2.3, 0.0],
                    max: [3.5, 3.1, 0.8],
                },
            ],
            n_frames: 30,
            width: 320,
            height: 240,
            hfov_deg: 70.0,
            trajectory_radius: 0.5,
            camera_height: 1.3,
            n_labels: 4,
            texture: 0.5,
            distortion: 0.2,
            scale_range: [1.0, 1.0],
            landmarks_per_frame: 200,
            min_covisibility: 20,
            mesh_cell: 0.05,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.room.iter().any(|&s| !(s > 0.0)) {
            return bad("room extent must be positive");
        }
        if self.objects.is_empty() || self.objects.len() > 4 {
            return bad("scene needs 1 to 4 objects");
        }
        for o in &self.objects {
            match *o {
                Shape::Sphere { radius, .. } if !(radius > 0.0) => return bad("sphere radius must be positive"),
                Shape::Box { min, max } if (0..3).any(|a| !(max[a] > min[a])) => return bad("box max must exceed min"),
                _ => {}
            }
        }
        if self.n_frames < 2 || self.width < 8 || self.height < 8 {
            return bad("need at least 2 frames of 8x8 pixels");
        }
        if !(self.hfov_deg > 0.0 && self.hfov_deg < 170.0) {
            return bad("hfov must lie in (0, 170) degrees");
        }
        if self.n_labels < 2 {
            return bad("need at least 2 semantic classes");
        }
        if !(0.0..=1.0).contains(&self.texture) || !(0.0..1.0).contains(&self.distortion) {
            return bad("texture must lie in [0, 1] and distortion in [0, 1)");
        }
        if !(self.scale_range[0] > 0.0 && self.scale_range[1] >= self.scale_range[0]) {
            return bad("scale range must be positive and ordered");
        }
        let [sx, sy, sz] = self.room;
        let r = self.trajectory_radius;
        if r < 0.0 || 2.0 * r >= sx.min(sy) || !(0.0..sz).contains(&self.camera_height) || !(self.mesh_cell > 0.0) {
            return bad("trajectory must stay inside the room");
        }
        Ok(())
    }

    pub fn scene(&self) -> Scene {
        Scene {
            room: self.room,
            objects: self.objects.clone(),
            texture: self.texture,
            n_labels: self.n_labels,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub room: [f64; 3],
    pub objects: Vec<Shape>,
    pub texture: f64,
    pub n_labels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub point: Vec3,
    /// Unit normal pointing into free space.
    pub normal: Vec3,
    /// 0 floor, 1 ceiling, 2..6 walls, 6.. objects.
    pub surface: usize,
}

const PALETTE: [[f64; 3]; 10] = [
    [0.55, 0.40, 0.30],
    [0.85, 0.85, 0.80],
    [0.70, 0.75, 0.85],
    [0.80, 0.70, 0.60],
    [0.65, 0.80, 0.65],
    [0.85, 0.70, 0.75],
    [0.85, 0.25, 0.20],
    [0.20, 0.45, 0.85],
    [0.90, 0.75, 0.20],
    [0.30, 0.70, 0.40],
];

impl Scene {
    pub fn n_surfaces(&self) -> usize {
        6 + self.objects.len()
    }

    /// Semantic class of a surface: floor, wall, ceiling, then objects.
    pub fn class(&self, surface: usize) -> usize {
        let c = match surface {
            0 => 0,
            1 => 2,
            2..=5 => 1,
            _ => 3,
        };
        c.min(self.n_labels - 1)
    }

    /// Albedo at a surface point.
    pub fn color(&self, surface: usize, p: &Vec3) -> [f64; 3] {
        let base = PALETTE[surface.min(PALETTE.len() - 1)];
        let pattern =
            0.5 + ((2.0 * PI * p.x / 0.37).sin() + (2.0 * PI * p.y / 0.29).sin() + (2.0 * PI * p.z / 0.23).sin()) / 6.0;
        let m = 1.0 - self.texture * (1.0 - pattern);
        base.map(|b| b * m)
    }

    /// Signed distance, positive in free space (inside the room, outside objects).
    pub fn sdf(&self, x: &Vec3) -> f64 {
        let [sx, sy, sz] = self.room;
        let mut d = x.x.min(sx - x.x).min(x.y).min(sy - x.y).min(x.z).min(sz - x.z);
        for o in &self.objects {
            d = d.min(shape_sdf(o, x));
        }
        d
    }

    /// Distance to a single surface patch, used to pick the owning surface.
    pub fn surface_distance(&self, surface: usize, x: &Vec3) -> f64 {
        let [sx, sy, sz] = self.room;
        let clamp_dist = |a: f64, b: f64, lo: [f64; 2], hi: [f64; 2]| {
            let da = (lo[0] - a).max(a - hi[0]).max(0.0);
            let db = (lo[1] - b).max(b - hi[1]).max(0.0);
            (da * da + db * db).sqrt()
        };
        let plane = |off: f64, a: f64, b: f64, hi: [f64; 2]| (off * off + clamp_dist(a, b, [0.0, 0.0], hi).powi(2)).sqrt();
        match surface {
            0 => plane(x.z, x.x, x.y, [sx, sy]),
            1 => plane(sz - x.z, x.x, x.y, [sx, sy]),
            2 => plane(x.x, x.y, x.z, [sy, sz]),
            3 => plane(sx - x.x, x.y, x.z, [sy, sz]),
            4 => plane(x.y, x.x, x.z, [sx, sz]),
            5 => plane(sy - x.y, x.x, x.z, [sx, sz]),
            s => shape_sdf(&self.objects[s - 6], x).abs(),
        }
    }

    /// Nearest intersection for a ray starting inside free space.
    pub fn raycast(&self, o: &Vec3, d: &Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        let mut consider = |t: f64, normal: Vec3, surface: usize| {
            if t > 1e-9 && best.map_or(true, |b| t < b.t) {
                best = Some(Hit {
                    t,
                    point: o + d * t,
                    normal,
                    surface,
                });
            }
        };
        // room interior: exit through the first wall along each axis
        let [sx, sy, sz] = self.room;
        // (low surface, high surface, extent) per axis
        let walls = [(2, 3, sx), (4, 5, sy), (0, 1, sz)];
        for (a, &(lo_s, hi_s, ext)) in walls.iter().enumerate() {
            let mut n = Vec3::zeros();
            if d[a] > 0.0 {
                n[a] = -1.0;
                consider((ext - o[a]) / d[a], n, hi_s);
            } else if d[a] < 0.0 {
                n[a] = 1.0;
                consider(-o[a] / d[a], n, lo_s);
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if let Some((t, n)) = shape_hit(obj, o, d) {
                consider(t, n, 6 + i);
            }
        }
        best
    }

    /// Triangulated ground-truth surface with normals into free space.
    pub fn mesh(&self, cell: f64) -> Mesh {
        let mut m = Mesh::default();
        let [sx, sy, sz] = self.room;
        let e = Vec3::identity_axes();
        // (surface, origin, u axis, u length, v axis, v length); u × v points into the room
        let quads = [
            (0, Vec3::zeros(), e[0], sx, e[1], sy),
            (1, Vec3::new(0.0, 0.0, sz), e[1], sy, e[0], sx),
            (2, Vec3::zeros(), e[1], sy, e[2], sz),
            (3, Vec3::new(sx, 0.0, 0.0), e[2], sz, e[1], sy),
            (4, Vec3::zeros(), e[2], sz, e[0], sx),
            (5, Vec3::new(0.0, sy, 0.0), e[0], sx, e[2], sz),
        ];
        for (s, o, u, lu, v, lv) in quads {
            self.add_quad(&mut m, s, o, u * lu, v * lv, cell);
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let s = 6 + i;
            match *obj {
                Shape::Box { min, max } => {
                    let lo = Vec3::from(min);
                    let sz = Vec3::from(max) - lo;
                    // outward faces: u × v points away from the box interior
                    let faces = [
                        (lo, e[1] * sz.y, e[0] * sz.x),
                        (lo + e[2] * sz.z, e[0] * sz.x, e[1] * sz.y),
                        (lo, e[2] * sz.z, e[1] * sz.y),
                        (lo + e[0] * sz.x, e[1] * sz.y, e[2] * sz.z),
                        (lo, e[0] * sz.x, e[2] * sz.z),
                        (lo + e[1] * sz.y, e[2] * sz.z, e[0] * sz.x),
                    ];
                    for (o, u, v) in faces {
                        self.add_quad(&mut m, s, o, u, v, cell);
                    }
                }
                Shape::Sphere { center, radius } => {
                    let c = Vec3::from(center);
                    let n_lat = ((PI * radius / cell).ceil() as usize).max(8);
                    let n_lon = 2 * n_lat;
                    let base = m.vertices.len() as u32;
                    for i in 0..=n_lat {
                        let th = PI * i as f64 / n_lat as f64;
                        for j in 0..=n_lon {
                            let ph = 2.0 * PI * j as f64 / n_lon as f64;
                            let n = Vec3::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos());
                            self.push_vertex(&mut m, s, c + n * radius, n);
                        }
                    }
                    let idx = |i: usize, j: usize| base + (i * (n_lon + 1) + j) as u32;
                    for i in 0..n_lat {
                        for j in 0..n_lon {
                            let (a, b, c2, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                            if i > 0 {
                                m.triangles.push([a, b, d]);
                            }
                            if i + 1 < n_lat {
                                m.triangles.push([b, c2, d]);
                            }
                        }
                    }
                }
            }
        }
        m
    }

    fn push_vertex(&self, m: &mut Mesh, surface: usize, p: Vec3, n: Vec3) {
        let c = self.color(surface, &p);
        m.vertices.push(p);
        m.normals.push(n);
        m.colors.push([c[0] as f32, c[1] as f32, c[2] as f32]);
        m.labels.get_or_insert_with(Vec::new).push(self.class(surface) as i32);
    }

    fn add_quad(&self, m: &mut Mesh, surface: usize, o: Vec3, u: Vec3, v: Vec3, cell: f64) {
        let nu = ((u.norm() / cell).ceil() as usize).max(1);
        let nv = ((v.norm() / cell).ceil() as usize).max(1);
        let n = u.cross(&v).normalize();
        let base = m.vertices.len() as u32;
        for j in 0..=nv {
            for i in 0..=nu {
                let p = o + u * (i as f64 / nu as f64) + v * (j as f64 / nv as f64);
                self.push_vertex(m, surface, p, n);
            }
        }
        let idx = |i: usize, j: usize| base + (j * (nu + 1) + i) as u32;
        for j in 0..nv {
            for i in 0..nu {
                m.triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                m.triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
            }
        }
    }
}

trait Axes {
    fn identity_axes() -> [Vec3; 3];
}

impl Axes for Vec3 {
    fn identity_axes() -> [Vec3; 3] {
        [Vec3::x(), Vec3::y(), Vec3::z()]
    }
}

/// Signed distance to a solid, positive outside.
fn shape_sdf(s: &Shape, x: &Vec3) -> f64 {
    match *s {
        Shape::Sphere { center, radius } => (x - Vec3::from(center)).norm() - radius,
        Shape::Box { min, max } => {
            let c = (Vec3::from(min) + Vec3::from(max)) * 0.5;
            let h = (Vec3::from(max) - Vec3::from(min)) * 0.5;
            let q = (x - c).abs() - h;
            q.map(|v| v.max(0.0)).norm() + q.max().min(0.0)
        }
    }
}

/// Entry point of a ray into a solid, with the outward normal.
fn shape_hit(s: &Shape, o: &Vec3, d: &Vec3) -> Option<(f64, Vec3)> {
    match *s {
        Shape::Sphere { center, radius } => {
            let c = Vec3::from(center);
            let oc = o - c;
            let b = oc.dot(d);
            let disc = b * b - (oc.norm_squared() - radius * radius);
            if disc < 0.0 {
                return None;
            }
            let t = -b - disc.sqrt();
            (t > 0.0).then(|| (t, (o + d * t - c) / radius))
        }
        Shape::Box { min, max } => {
            let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
            for a in 0..3 {
                if d[a] == 0.0 {
                    if o[a] < min[a] || o[a] > max[a] {
                        return None;
                    }
                    continue;
                }
                let (mut ta, mut tb) = ((min[a] - o[a]) / d[a], (max[a] - o[a]) / d[a]);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                if ta > t0 {
                    t0 = ta;
                    axis = a;
                }
                t1 = t1.min(tb);
            }
            if t0 > t1 || t0 <= 0.0 {
                return None;
            }
            let mut n = Vec3::zeros();
            n[axis] = -d[axis].signum();
            Some((t0, n))
        }
    }
}

/// Smooth per-frame distortion `φ*(u, v) = s · (1 + a · g(u, v))`, `g ∈ [-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distortion {
    pub scale: f64,
    pub amplitude: f64,
    pub freq: [f64; 2],
    pub phase: [f64; 2],
}

impl Distortion {
    pub fn at(&self, u: f64, v: f64, width: usize, height: usize) -> f64 {
        let g = (2.0 * PI * self.freq[0] * u / width as f64 + self.phase[0]).sin()
            * (2.0 * PI * self.freq[1] * v / height as f64 + self.phase[1]).cos();
        self.scale * (1.0 + self.amplitude * g)
    }
}

/// In-memory result of [`generate_synthetic`].
#[derive(Debug, Clone)]
pub struct Synthetic {
    pub spec: SceneSpec,
    pub seed: u64,
    pub scene: Scene,
    pub dataset: Dataset,
    pub gt_depth: Vec<Raster>,
    /// Surface index hit by each pixel, `usize::MAX` for misses.
    pub surface_ids: Vec<Vec<usize>>,
    pub distortions: Vec<Distortion>,
}

impl Synthetic {
    pub fn gt_mesh(&self) -> Mesh {
        self.scene.mesh(self.spec.mesh_cell)
    }

    /// Write the dataset plus `gt/{mesh.ply, depth/, scene.json}`.
    pub fn write(&self, root: &Path) -> Result<()> {
        self.dataset.save(root)?;
        let gt = gt_dir(root);
        fs::create_dir_all(gt.join("depth"))?;
        for (f, d) in self.dataset.frames.iter().zip(&self.gt_depth) {
            write_f32(&gt.join(format!("depth/{:06}.f32", f.id)), d.data())?;
        }
        crate::mesh::export_ply(&self.gt_mesh(), &gt.join("mesh.ply"))?;
        let meta = serde_json::json!({
            "seed": self.seed,
            "spec": self.spec,
            "distortions": self.distortions,
        });
        fs::write(gt.join("scene.json"), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }
}

/// Camera poses on the circular trajectory.
pub fn trajectory(spec: &SceneSpec) -> Vec<Pose> {
    let [sx, sy, _] = spec.room;
    let c = Vec3::new(sx / 2.0, sy / 2.0, spec.camera_height);
    (0..spec.n_frames)
        .map(|i| {
            let th = 2.0 * PI * i as f64 / spec.n_frames as f64;
            let eye = c + Vec3::new(th.cos(), th.sin(), 0.0) * spec.trajectory_radius;
            let yaw = th + 0.5;
            let pitch = -0.3 + 0.25 * (2.0 * th).sin();
            let dir = Vec3::new(yaw.cos() * pitch.cos(), yaw.sin() * pitch.cos(), pitch.sin());
            Pose::look_at(eye, eye + dir, Vec3::z())
        })
        .collect()
}

pub fn generate_synthetic(spec: &SceneSpec, seed: u64) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scene = spec.scene();
    let (w, h) = (spec.width, spec.height);
    let f = w as f64 / (2.0 * (spec.hfov_deg.to_radians() / 2.0).tan());
    let k = Intrinsics {
        fx: f,
        fy: f,
        cx: (w as f64 - 1.0) / 2.0,
        cy: (h as f64 - 1.0) / 2.0,
        width: w,
        height: h,
    };
    let cameras: Vec<Camera> = trajectory(spec).into_iter().map(|p| Camera::new(k, p)).collect();
    let c = spec.n_labels;

    let mut frames = Vec::with_capacity(cameras.len());
    let mut gt_depth = Vec::with_capacity(cameras.len());
    let mut surface_ids = Vec::with_capacity(cameras.len());
    let mut distortions = Vec::with_capacity(cameras.len());
    for (id, cam) in cameras.iter().enumerate() {
        let dist = Distortion {
            scale: rng.gen_range(spec.scale_range[0]..=spec.scale_range[1]),
            amplitude: spec.distortion,
            freq: [rng.gen_range(0.3..0.8), rng.gen_range(0.3..0.8)],
            phase: [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)],
        };
        let mut image = Raster::new(w, h, 3);
        let mut depth = Raster::new(w, h, 1);
        let mut prior = Raster::new(w, h, 1);
        let mut normal = Raster::new(w, h, 3);
        let mut semantic = Raster::new(w, h, c);
        let mut ids = vec![usize::MAX; w * h];
        let origin = cam.center();
        let r_t = cam.pose.rotation.transpose();
        for v in 0..h {
            for u in 0..w {
                let (dir, ratio) = cam.ray(Vec2::new(u as f64, v as f64));
                let Some(hit) = scene.raycast(&origin, &dir) else {
                    continue;
                };
                ids[v * w + u] = hit.surface;
                let z = hit.t / ratio;
                depth.set(u, v, 0, z as f32);
                prior.set(u, v, 0, (z / dist.at(u as f64, v as f64, w, h)) as f32);
                let col = scene.color(hit.surface, &hit.point);
                image.pixel_mut(u, v).copy_from_slice(&col.map(|x| x as f32));
                let nc = r_t * hit.normal;
                normal.pixel_mut(u, v).copy_from_slice(&[nc.x as f32, nc.y as f32, nc.z as f32]);
                let cls = scene.class(hit.surface);
                for (l, s) in semantic.pixel_mut(u, v).iter_mut().enumerate() {
                    *s = (0.2 / c as f64 + if l == cls { 0.8 } else { 0.0 }) as f32;
                }
            }
        }
        frames.push(Frame {
            id,
            camera: *cam,
            image,
            depth: prior,
            normal: Some(normal),
            semantic: Some(semantic),
        });
        gt_depth.push(depth);
        surface_ids.push(ids);
        distortions.push(dist);
    }

    let landmarks = sample_landmarks(&scene, &cameras, spec.landmarks_per_frame, &mut rng);
    let covis = covisibility(&landmarks, spec.min_covisibility);
    Ok(Synthetic {
        spec: spec.clone(),
        seed,
        scene,
        dataset: Dataset {
            frames,
            landmarks,
            covis,
        },
        gt_depth,
        surface_ids,
        distortions,
    })
}

fn sample_landmarks(scene: &Scene, cameras: &[Camera], per_frame: usize, rng: &mut ChaCha8Rng) -> Vec<SparseLandmark> {
    let mut out = Vec::new();
    for src in cameras {
        let k = src.intrinsics;
        for _ in 0..per_frame {
            let px = Vec2::new(rng.gen_range(0.0..(k.width - 1) as f64), rng.gen_range(0.0..(k.height - 1) as f64));
            let (dir, _) = src.ray(px);
            let Some(hit) = scene.raycast(&src.center(), &dir) else {
                continue;
            };
            let x = hit.point;
            let observations: Vec<Observation> = cameras
                .iter()
                .enumerate()
                .filter_map(|(j, cam)| {
                    let proj = cam.project(&x).ok().filter(|p| p.in_frame)?;
                    let c = cam.center();
                    let to = x - c;
                    let visible = scene.raycast(&c, &to.normalize())?.t >= to.norm() - 1e-6;
                    visible.then_some(Observation {
                        frame: j,
                        pixel: proj.pixel,
                    })
                })
                .collect();
            if observations.len() >= 2 {
                out.push(SparseLandmark {
                    id: out.len() as u64,
                    position: x,
                    observations,
                });
            }
        }
    }
    out
}

/// Shared-landmark counts for every pair with at least `min_count`.
pub fn covisibility(landmarks: &[SparseLandmark], min_count: usize) -> CovisibilityGraph {
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for l in landmarks {
        for (a, oa) in l.observations.iter().enumerate() {
            for ob in &l.observations[a + 1..] {
                let key = (oa.frame.min(ob.frame), oa.frame.max(ob.frame));
                if key.0 != key.1 {
                    *counts.entry(key).or_default() += 1;
                }
            }
        }
    }
    CovisibilityGraph::from_pairs(
        counts
            .into_iter()
            .filter(|&(_, n)| n >= min_count)
            .map(|((i, j), count)| CovisPair { i, j, count })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneSpec {
        SceneSpec {
            n_frames: 8,
            width: 64,
            height: 48,
            landmarks_per_frame: 60,
            min_covisibility: 5,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn zero_distortion_gives_gt_prior() {
        let spec = SceneSpec {
            distortion: 0.0,
            ..small()
        };
        let s = generate_synthetic(&spec, 1).unwrap();
        for (f, gt) in s.dataset.frames.iter().zip(&s.gt_depth) {
            assert_eq!(f.depth, *gt);
        }
    }

    #[test]
    fn landmarks_reproject_exactly() {
        let s = generate_synthetic(&small(), 2).unwrap();
        assert!(!s.dataset.landmarks.is_empty());
        for l in &s.dataset.landmarks {
            for o in &l.observations {
                let p = s.dataset.frames[o.frame].camera.project(&l.position).unwrap();
                assert!((p.pixel - o.pixel).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn maps_are_well_formed() {
        let s = generate_synthetic(&small(), 3).unwrap();
        for f in &s.dataset.frames {
            assert!(f.depth.data().iter().all(|&d| d > 0.0));
            let n = f.normal.as_ref().unwrap();
            let sem = f.semantic.as_ref().unwrap();
            for v in 0..f.height() {
                for u in 0..f.width() {
                    let p = n.pixel(u, v);
                    let len = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                    assert!((len - 1.0).abs() < 1e-5);
                    let s: f32 = sem.pixel(u, v).iter().sum();
                    assert!((s - 1.0).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn sdf_and_raycast_agree() {
        let scene = SceneSpec::default().scene();
        let o = Vec3::new(2.0, 1.75, 1.3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let hit = scene.raycast(&o, &d).unwrap();
            assert!(scene.sdf(&hit.point).abs() < 1e-9);
            assert!(scene.sdf(&(hit.point - d * 0.01)) > 0.0);
            assert!(scene.surface_distance(hit.surface, &hit.point) < 1e-9);
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SceneSpec {
            objects: vec![],
            ..SceneSpec::default()
        };
        assert!(matches!(generate_synthetic(&spec, 0), Err(Error::InvalidSpec(_))));
    }
}
