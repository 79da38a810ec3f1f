//! Dataset layout and ingestion.
//!
//! ```text
//! root/
//!   intrinsics.txt        fx fy cx cy w h
//!   poses.txt             one row-major 3x4 camera-to-world matrix per line
//!   images/%06d.bin       f32 RGB, row-major (or %06d.png, 8-bit RGB)
//!   depth/%06d.f32        f32 prior depth (or %06d.png, 16-bit millimeters)
//!   normal/%06d.f32       f32 camera-frame normals, 3 channels (optional)
//!   semantic/%06d.f32     f32 per-class scores, C channels (optional)
//!   sfm/points.json       [{id, xyz, obs: [{frame, px, py}]}]
//!   sfm/covis.json        [{i, j, count}]
//!   gt/                   synthetic ground truth (mesh.ply, depth/, scene.json)
//! ```

pub mod synth;

use crate::calib::{CovisPair, CovisibilityGraph, Observation, SparseLandmark};
use crate::camera::{Camera, Intrinsics, Pose};
use crate::raster::Raster;
use crate::{Error, Mat3, Result, Vec2, Vec3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// One input image with its camera and monocular priors.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: usize,
    pub camera: Camera,
    /// RGB in `[0, 1]`.
    pub image: Raster,
    /// Unscaled monocular depth; non-positive or non-finite marks a hole.
    pub depth: Raster,
    /// Camera-frame unit normals pointing toward the camera side.
    pub normal: Option<Raster>,
    /// Per-class scores, `C` channels.
    pub semantic: Option<Raster>,
}

impl Frame {
    pub fn width(&self) -> usize {
        self.camera.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.camera.intrinsics.height
    }

    pub fn n_labels(&self) -> usize {
        self.semantic.as_ref().map_or(0, Raster::channels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub landmarks: Vec<SparseLandmark>,
    pub covis: CovisibilityGraph,
}

impl Dataset {
    pub fn n_labels(&self) -> usize {
        self.frames.first().map_or(0, Frame::n_labels)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        let first = self.frames.first().ok_or_else(|| Error::InvalidSpec("dataset has no frames".into()))?;
        let k = first.camera.intrinsics;
        for sub in ["images", "depth", "normal", "semantic", "sfm"] {
            fs::create_dir_all(root.join(sub))?;
        }
        fs::write(
            root.join("intrinsics.txt"),
            format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height),
        )?;
        let mut poses = String::new();
        for f in &self.frames {
            let (r, t) = (f.camera.pose.rotation, f.camera.pose.translation);
            let row: Vec<String> = (0..3)
                .flat_map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]])
                .map(|v| format!("{v:?}"))
                .collect();
            poses.push_str(&row.join(" "));
            poses.push('\n');
        }
        fs::write(root.join("poses.txt"), poses)?;
        for f in &self.frames {
            write_f32(&root.join(format!("images/{:06}.bin", f.id)), f.image.data())?;
            write_f32(&root.join(format!("depth/{:06}.f32", f.id)), f.depth.data())?;
            if let Some(n) = &f.normal {
                write_f32(&root.join(format!("normal/{:06}.f32", f.id)), n.data())?;
            }
            if let Some(s) = &f.semantic {
                write_f32(&root.join(format!("semantic/{:06}.f32", f.id)), s.data())?;
            }
        }
        let points: Vec<PointRecord> = self.landmarks.iter().map(PointRecord::from).collect();
        fs::write(root.join("sfm/points.json"), serde_json::to_vec(&points)?)?;
        fs::write(root.join("sfm/covis.json"), serde_json::to_vec(&self.covis.pairs)?)?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct PointRecord {
    id: u64,
    xyz: [f64; 3],
    obs: Vec<ObsRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObsRecord {
    frame: usize,
    px: f64,
    py: f64,
}

impl From<&SparseLandmark> for PointRecord {
    fn from(l: &SparseLandmark) -> Self {
        PointRecord {
            id: l.id,
            xyz: [l.position.x, l.position.y, l.position.z],
            obs: l
                .observations
                .iter()
                .map(|o| ObsRecord {
                    frame: o.frame,
                    px: o.pixel.x,
                    py: o.pixel.y,
                })
                .collect(),
        }
    }
}

/// Load a dataset directory.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let intrinsics = read_intrinsics(&root.join("intrinsics.txt"))?;
    let poses = read_poses(&root.join("poses.txt"))?;
    let (w, h) = (intrinsics.width, intrinsics.height);
    let mut frames = Vec::with_capacity(poses.len());
    let mut n_labels = None;
    for (id, pose) in poses.into_iter().enumerate() {
        let pose = check_pose(id, pose)?;
        let image = read_image(root, id, w, h)?;
        let depth = read_depth(root, id, w, h)?;
        let normal_path = root.join(format!("normal/{id:06}.f32"));
        let normal = if normal_path.exists() {
            Some(read_raster(&normal_path, w, h, Some(3))?)
        } else {
            None
        };
        let sem_path = root.join(format!("semantic/{id:06}.f32"));
        let semantic = if sem_path.exists() {
            let r = read_raster(&sem_path, w, h, n_labels)?;
            n_labels = Some(r.channels());
            Some(r)
        } else {
            None
        };
        frames.push(Frame {
            id,
            camera: Camera::new(intrinsics, pose),
            image,
            depth,
            normal,
            semantic,
        });
    }
    let landmarks = read_landmarks(&root.join("sfm/points.json"), &frames)?;
    let covis = read_covis(&root.join("sfm/covis.json"))?;
    Ok(Dataset {
        frames,
        landmarks,
        covis,
    })
}

fn missing(path: &Path) -> Error {
    Error::MissingFile { path: path.to_path_buf() }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => missing(path),
        _ => e.into(),
    })
}

fn parse_floats(path: &Path, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::format(path, format!("bad number {t:?}"))))
        .collect()
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    let text = read_text(path)?;
    let v = parse_floats(path, &text)?;
    if v.len() != 6 {
        return Err(Error::format(path, "expected `fx fy cx cy w h`"));
    }
    if !(v[0] > 0.0 && v[1] > 0.0 && v[4] >= 2.0 && v[5] >= 2.0) {
        return Err(Error::format(path, "focal lengths and image size must be positive"));
    }
    Ok(Intrinsics {
        fx: v[0],
        fy: v[1],
        cx: v[2],
        cy: v[3],
        width: v[4] as usize,
        height: v[5] as usize,
    })
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let v = parse_floats(path, line)?;
        if v.len() != 12 {
            return Err(Error::format(path, format!("pose line {} has {} values", out.len(), v.len())));
        }
        let r = Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        out.push(Pose::new(r, Vec3::new(v[3], v[7], v[11])));
    }
    Ok(out)
}

/// Reject reflections and non-finite rotations; re-orthonormalize drift.
fn check_pose(frame: usize, pose: Pose) -> Result<Pose> {
    if pose.rotation.iter().chain(pose.translation.iter()).any(|v| !v.is_finite()) {
        return Err(Error::BadPose {
            frame,
            reason: "non-finite entries".into(),
        });
    }
    let det = pose.rotation.determinant();
    if det <= 0.0 {
        return Err(Error::BadPose {
            frame,
            reason: format!("rotation determinant {det:.3}"),
        });
    }
    let err = pose.orthonormality_error();
    if err > 0.1 {
        return Err(Error::BadPose {
            frame,
            reason: format!("rotation is not orthonormal (|RᵀR − I| = {err:.3})"),
        });
    }
    if err > 1e-6 {
        return pose.orthonormalized().ok_or(Error::BadPose {
            frame,
            reason: "orthonormalization failed".into(),
        });
    }
    Ok(pose)
}

pub fn write_f32(path: &Path, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => missing(path),
        _ => e.into(),
    })?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(path, "length is not a multiple of 4"));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Read a raw f32 raster of `w x h`. When `channels` is `None` it is
/// inferred from the file size.
pub fn read_raster(path: &Path, w: usize, h: usize, channels: Option<usize>) -> Result<Raster> {
    let data = read_f32(path)?;
    let c = match channels {
        Some(c) => c,
        None => (data.len() / (w * h)).max(1),
    };
    let expected = w * h * c;
    if data.len() != expected {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            expected,
            got: data.len(),
        });
    }
    Ok(Raster::from_vec(w, h, c, data).expect("size checked"))
}

fn read_image(root: &Path, id: usize, w: usize, h: usize) -> Result<Raster> {
    let bin = root.join(format!("images/{id:06}.bin"));
    if bin.exists() {
        return read_raster(&bin, w, h, Some(3));
    }
    let png = root.join(format!("images/{id:06}.png"));
    if !png.exists() {
        return Err(missing(&bin));
    }
    let img = image::open(&png)
        .map_err(|e| Error::format(&png, e.to_string()))?
        .to_rgb32f();
    if (img.width() as usize, img.height() as usize) != (w, h) {
        return Err(Error::ShapeMismatch {
            path: png,
            expected: w * h * 3,
            got: (img.width() * img.height() * 3) as usize,
        });
    }
    Ok(Raster::from_vec(w, h, 3, img.into_raw()).expect("size checked"))
}

fn read_depth(root: &Path, id: usize, w: usize, h: usize) -> Result<Raster> {
    let raw = root.join(format!("depth/{id:06}.f32"));
    if raw.exists() {
        return read_raster(&raw, w, h, Some(1));
    }
    let png = root.join(format!("depth/{id:06}.png"));
    if !png.exists() {
        return Err(missing(&raw));
    }
    read_depth_png_mm(&png, w, h)
}

/// 16-bit PNG depth in millimeters; zero marks a hole.
pub fn read_depth_png_mm(path: &Path, w: usize, h: usize) -> Result<Raster> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_luma16();
    if (img.width() as usize, img.height() as usize) != (w, h) {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            expected: w * h,
            got: (img.width() * img.height()) as usize,
        });
    }
    let data = img.into_raw().into_iter().map(|mm| mm as f32 / 1000.0).collect();
    Ok(Raster::from_vec(w, h, 1, data).expect("size checked"))
}

fn read_landmarks(path: &Path, frames: &[Frame]) -> Result<Vec<SparseLandmark>> {
    if !path.exists() {
        return Err(missing(path));
    }
    let records: Vec<PointRecord> = serde_json::from_str(&read_text(path)?)?;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let mut observations = Vec::with_capacity(r.obs.len());
        for o in r.obs {
            let frame = frames
                .get(o.frame)
                .ok_or_else(|| Error::format(path, format!("landmark {} references frame {}", r.id, o.frame)))?;
            if !frame.camera.intrinsics.in_bounds(Vec2::new(o.px, o.py)) {
                return Err(Error::format(path, format!("landmark {} observed outside frame {}", r.id, o.frame)));
            }
            observations.push(Observation {
                frame: o.frame,
                pixel: Vec2::new(o.px, o.py),
            });
        }
        if observations.len() < 2 {
            continue;
        }
        out.push(SparseLandmark {
            id: r.id,
            position: Vec3::new(r.xyz[0], r.xyz[1], r.xyz[2]),
            observations,
        });
    }
    Ok(out)
}

fn read_covis(path: &Path) -> Result<CovisibilityGraph> {
    if !path.exists() {
        return Err(missing(path));
    }
    let pairs: Vec<CovisPair> = serde_json::from_str(&read_text(path)?)?;
    Ok(CovisibilityGraph::from_pairs(pairs))
}

/// Directory for ground-truth artifacts of a synthetic dataset.
pub fn gt_dir(root: &Path) -> PathBuf {
    root.join("gt")
}

/// Ground-truth depth maps written by the synthetic generator, if present.
pub fn load_gt_depths(root: &Path, frames: &[Frame]) -> Result<Option<Vec<Raster>>> {
    let dir = gt_dir(root).join("depth");
    if !dir.exists() {
        return Ok(None);
    }
    frames
        .iter()
        .map(|f| read_raster(&dir.join(format!("{:06}.f32", f.id)), f.width(), f.height(), Some(1)))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}
