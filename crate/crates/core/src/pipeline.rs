//! Stage runner and configuration.
//!
//! Every stage reads its inputs from and writes its outputs to the output
//! directory, so stages can run one at a time:
//!
//! ```text
//! out/
//!   scales.bin, calib_trace.csv          calibrate
//!   grid_fused.sdgv, fusion.json         fuse
//!   grid_init.sdgv                       denoise
//!   grid_refined.sdgv, refine_loss.csv   refine (snapshots/ when enabled)
//!   grid_crf.sdgv, crf_loss.csv          crf (crf_samples.bin when enabled)
//!   mesh.ply                             mesh
//!   metrics.json                         eval
//! ```

use crate::calib::{load_scales, optimize_scales, save_scales, write_trace_csv, CalibConfig, ScaleField};
use crate::crf::{crf_refine_with, sample_surface, write_crf_csv, CrfConfig};
use crate::dataio::synth::{generate_synthetic, SceneSpec};
use crate::dataio::{gt_dir, load_dataset, load_gt_depths, Dataset};
use crate::eval::{cull_to_views, evaluate, sample_mesh_points, Metrics, DEFAULT_THRESHOLD};
use crate::fusion::{denoise, fuse_all, normalize_logits};
use crate::grid::alloc::allocate;
use crate::grid::{DEFAULT_BLOCK_RES, DEFAULT_VOXEL_SIZE};
use crate::mesh::{export_ply, import_ply, marching_cubes, Mesh};
use crate::render::{refine_with, write_loss_csv, RenderConfig};
use crate::{Camera, Error, Result, SparseDenseGrid};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Dataset directory.
    pub data: PathBuf,
    /// Artifact directory.
    pub out: PathBuf,
    /// Seed of the synthetic generator.
    pub synth_seed: u64,
    /// Write a refinement snapshot every this many steps; 0 disables.
    pub snapshot_every: usize,
    /// Write the CRF surface samples of the last resampling.
    pub dump_samples: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            data: "data".into(),
            out: "out".into(),
            synth_seed: 0,
            snapshot_every: 0,
            dump_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub voxel_size: f64,
    pub block_res: usize,
    /// Allocation dilation `R` in blocks.
    pub dilation: usize,
    /// Optional cap on the number of blocks.
    pub max_blocks: Option<usize>,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection {
            voxel_size: DEFAULT_VOXEL_SIZE,
            block_res: DEFAULT_BLOCK_RES,
            dilation: 2,
            max_blocks: None,
        }
    }
}

impl GridSection {
    /// Truncation `μ = L · R`.
    pub fn truncation(&self) -> f64 {
        self.voxel_size * self.block_res as f64 * self.dilation as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSection {
    /// Overrides `μ = L · R` when set.
    pub truncation: Option<f64>,
    pub denoise_sigma: f64,
    pub denoise_radius: usize,
}

impl Default for FusionSection {
    fn default() -> Self {
        FusionSection {
            truncation: None,
            denoise_sigma: 1.0,
            denoise_radius: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshSection {
    pub iso: f64,
}

impl Default for MeshSection {
    fn default() -> Self {
        MeshSection { iso: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub threshold: f64,
    /// Surface samples per square meter on both meshes.
    pub density: f64,
    /// Drop ground-truth points hidden from every view by more than this
    /// distance; negative disables culling.
    pub cull_tolerance: f64,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            threshold: DEFAULT_THRESHOLD,
            density: 2000.0,
            cull_tolerance: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub run: RunSection,
    pub synth: SceneSpec,
    pub grid: GridSection,
    pub calibrate: CalibConfig,
    pub fusion: FusionSection,
    pub refine: RenderConfig,
    pub crf: CrfConfig,
    pub mesh: MeshSection,
    pub eval: EvalSection,
}

impl PipelineConfig {
    /// Parse TOML text, then apply `section.key=value` overrides. Values
    /// are read as TOML literals and fall back to plain strings.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: PipelineConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Load from an optional file plus overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if !(g.voxel_size > 0.0 && g.voxel_size.is_finite()) || g.block_res < 2 {
            return Err(Error::Config("grid.voxel_size must be positive and grid.block_res at least 2".into()));
        }
        if self.truncation() <= 0.0 {
            return Err(Error::Config("fusion truncation must be positive".into()));
        }
        if !(self.fusion.denoise_sigma > 0.0) {
            return Err(Error::Config("fusion.denoise_sigma must be positive".into()));
        }
        if !(self.eval.threshold > 0.0 && self.eval.density > 0.0) {
            return Err(Error::Config("eval.threshold and eval.density must be positive".into()));
        }
        if self.calibrate.rows < 2 || self.calibrate.cols < 2 {
            return Err(Error::Config("calibrate.rows and calibrate.cols must be at least 2".into()));
        }
        self.refine.validate()?;
        self.crf.validate()
    }

    pub fn truncation(&self) -> f64 {
        self.fusion.truncation.unwrap_or_else(|| self.grid.truncation())
    }
}

fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut node = table;
    for p in &parts[..parts.len() - 1] {
        let entry = node.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Calibrate,
    Fuse,
    Denoise,
    Refine,
    Crf,
    Mesh,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Calibrate,
        Stage::Fuse,
        Stage::Denoise,
        Stage::Refine,
        Stage::Crf,
        Stage::Mesh,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Calibrate => "calibrate",
            Stage::Fuse => "fuse",
            Stage::Denoise => "denoise",
            Stage::Refine => "refine",
            Stage::Crf => "crf",
            Stage::Mesh => "mesh",
            Stage::Eval => "eval",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

trait StageContext<T> {
    fn stage(self, s: Stage) -> std::result::Result<T, StageError>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

pub const SCALES: &str = "scales.bin";
pub const GRID_FUSED: &str = "grid_fused.sdgv";
pub const GRID_INIT: &str = "grid_init.sdgv";
pub const GRID_REFINED: &str = "grid_refined.sdgv";
pub const GRID_CRF: &str = "grid_crf.sdgv";
pub const MESH: &str = "mesh.ply";
pub const METRICS: &str = "metrics.json";

/// Stage functions over one configuration.
pub struct Pipeline {
    pub cfg: PipelineConfig,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Self {
        Pipeline { cfg }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.cfg.run.out.join(name)
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.cfg.run.out)?;
        Ok(())
    }

    /// Generate the synthetic dataset into `run.data`.
    pub fn synth(&self) -> Result<()> {
        let s = generate_synthetic(&self.cfg.synth, self.cfg.run.synth_seed)?;
        s.write(&self.cfg.run.data)
    }

    pub fn load_data(&self) -> Result<Dataset> {
        load_dataset(&self.cfg.run.data)
    }

    pub fn calibrate(&self, ds: &Dataset) -> Result<Vec<ScaleField>> {
        self.ensure_out()?;
        let mut cal = optimize_scales(&ds.frames, &ds.landmarks, &ds.covis, &self.cfg.calibrate)?;
        save_scales(&self.out_path(SCALES), &cal.scales)?;
        write_trace_csv(&self.out_path("calib_trace.csv"), &cal.trace)?;
        // continue with the stored precision so staged runs match
        for f in &mut cal.scales {
            f.values_mut().iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        Ok(cal.scales)
    }

    /// Scale fields from a previous calibration, or unit fields without one.
    pub fn load_scales(&self, ds: &Dataset) -> Result<Vec<ScaleField>> {
        let path = self.out_path(SCALES);
        let (w, h) = ds.frames.first().map_or((1, 1), |f| (f.width(), f.height()));
        if !path.exists() {
            log::warn!("{} not found; using unit scales", path.display());
            return Ok(ds.frames.iter().map(|f| ScaleField::constant(f.width(), f.height(), 1.0)).collect());
        }
        let s = load_scales(&path, w, h)?;
        if s.len() != ds.frames.len() {
            return Err(Error::ShapeMismatch {
                path,
                expected: ds.frames.len(),
                got: s.len(),
            });
        }
        Ok(s)
    }

    /// Allocate blocks around the scaled depth and fuse every frame.
    pub fn fuse(&self, ds: &Dataset, scales: &[ScaleField]) -> Result<SparseDenseGrid> {
        self.ensure_out()?;
        let g = &self.cfg.grid;
        let mut grid = SparseDenseGrid::new(g.voxel_size, g.block_res, ds.n_labels());
        if let Some(m) = g.max_blocks {
            grid = grid.with_capacity_limit(m);
        }
        let report = allocate(&mut grid, &ds.frames, scales, g.dilation)?;
        let stats = fuse_all(&mut grid, &ds.frames, scales, self.cfg.truncation());
        normalize_logits(&mut grid);
        log::info!(
            "fused {} blocks ({} surface), {} observations, {} rejected",
            report.blocks_total,
            report.surface_blocks,
            stats.integrated,
            stats.rejected
        );
        let summary = serde_json::json!({
            "blocks": report.blocks_total,
            "surface_blocks": report.surface_blocks,
            "integrated": stats.integrated,
            "rejected": stats.rejected,
            "no_depth": stats.no_depth,
            "truncation": self.cfg.truncation(),
        });
        std::fs::write(self.out_path("fusion.json"), serde_json::to_vec_pretty(&summary)?)?;
        grid.save(&self.out_path(GRID_FUSED))?;
        Ok(grid)
    }

    pub fn denoise(&self, mut grid: SparseDenseGrid) -> Result<SparseDenseGrid> {
        self.ensure_out()?;
        denoise(&mut grid, self.cfg.fusion.denoise_sigma, self.cfg.fusion.denoise_radius);
        grid.save(&self.out_path(GRID_INIT))?;
        Ok(grid)
    }

    pub fn refine(&self, ds: &Dataset, scales: &[ScaleField], mut grid: SparseDenseGrid) -> Result<SparseDenseGrid> {
        self.ensure_out()?;
        let every = self.cfg.run.snapshot_every;
        let dir = self.out_path("snapshots");
        if every > 0 {
            std::fs::create_dir_all(&dir)?;
        }
        let trace = refine_with(&mut grid, &ds.frames, scales, &self.cfg.refine, |step, g, _| {
            if every > 0 && (step + 1) % every == 0 {
                g.save(&dir.join(format!("refine_{:06}.sdgv", step + 1)))?;
            }
            Ok(())
        })?;
        write_loss_csv(&self.out_path("refine_loss.csv"), &trace)?;
        grid.save(&self.out_path(GRID_REFINED))?;
        Ok(grid)
    }

    pub fn crf(&self, ds: &Dataset, scales: &[ScaleField], mut grid: SparseDenseGrid) -> Result<SparseDenseGrid> {
        self.ensure_out()?;
        let trace = crf_refine_with(&mut grid, &ds.frames, scales, &self.cfg.refine, &self.cfg.crf, |_, _, _| Ok(()))?;
        write_crf_csv(&self.out_path("crf_loss.csv"), &trace)?;
        if self.cfg.run.dump_samples {
            let c = &self.cfg.crf;
            let mut set = sample_surface(&grid, c.n_viewpoints, c.rays_per_view, c.seed)?;
            set.subsample(c.samples, c.seed);
            set.write_dump(&self.out_path("crf_samples.bin"))?;
        }
        grid.save(&self.out_path(GRID_CRF))?;
        Ok(grid)
    }

    pub fn mesh(&self, grid: &SparseDenseGrid) -> Result<Mesh> {
        self.ensure_out()?;
        let m = marching_cubes(grid, self.cfg.mesh.iso);
        export_ply(&m, &self.out_path(MESH))?;
        Ok(m)
    }

    /// Ground-truth surface points, restricted to what the cameras observe
    /// when ground-truth depth is available.
    pub fn gt_points(&self, ds: &Dataset) -> Result<Vec<crate::Vec3>> {
        let root = &self.cfg.run.data;
        let path = gt_dir(root).join("mesh.ply");
        if !path.exists() {
            return Err(Error::MissingFile { path });
        }
        let gt = import_ply(&path)?;
        let e = &self.cfg.eval;
        let pts = sample_mesh_points(&gt, e.density, e.seed.wrapping_add(1));
        if e.cull_tolerance < 0.0 {
            return Ok(pts);
        }
        let cams: Vec<Camera> = ds.frames.iter().map(|f| f.camera).collect();
        let depths = load_gt_depths(root, &ds.frames)?;
        Ok(cull_to_views(&pts, &cams, depths.as_deref(), e.cull_tolerance))
    }

    pub fn evaluate_mesh(&self, mesh: &Mesh, gt: &[crate::Vec3]) -> Result<Metrics> {
        let e = &self.cfg.eval;
        let pred = sample_mesh_points(mesh, e.density, e.seed);
        evaluate(&pred, gt, e.threshold)
    }

    pub fn eval(&self, ds: &Dataset, mesh: &Mesh) -> Result<Metrics> {
        self.ensure_out()?;
        let gt = self.gt_points(ds)?;
        let m = self.evaluate_mesh(mesh, &gt)?;
        std::fs::write(self.out_path(METRICS), serde_json::to_vec_pretty(&m)?)?;
        Ok(m)
    }

    /// Most advanced grid artifact present in the output directory.
    pub fn latest_grid(&self) -> Result<SparseDenseGrid> {
        for name in [GRID_CRF, GRID_REFINED, GRID_INIT, GRID_FUSED] {
            let p = self.out_path(name);
            if p.exists() {
                log::info!("using {}", p.display());
                return SparseDenseGrid::load(&p);
            }
        }
        Err(Error::MissingFile {
            path: self.out_path(GRID_INIT),
        })
    }

    /// Run all stages in order. Skipped stages pass their input through, or
    /// load their artifact when they produce a new kind of object.
    pub fn run(&self, skip: &[Stage]) -> std::result::Result<Option<Metrics>, StageError> {
        let on = |s: Stage| !skip.contains(&s);
        let mut timings = Vec::new();
        let mut timed = |s: Stage, t: Instant| {
            let secs = t.elapsed().as_secs_f64();
            log::info!("stage {s}: {secs:.1} s");
            timings.push((s.name(), secs));
        };
        let ds = self.load_data().stage(Stage::Calibrate)?;

        let t = Instant::now();
        let scales = if on(Stage::Calibrate) {
            self.calibrate(&ds).stage(Stage::Calibrate)?
        } else {
            self.load_scales(&ds).stage(Stage::Calibrate)?
        };
        timed(Stage::Calibrate, t);

        let t = Instant::now();
        let mut grid = if on(Stage::Fuse) {
            self.fuse(&ds, &scales).stage(Stage::Fuse)?
        } else {
            SparseDenseGrid::load(&self.out_path(GRID_FUSED)).stage(Stage::Fuse)?
        };
        timed(Stage::Fuse, t);

        let stages: [(Stage, &dyn Fn(SparseDenseGrid) -> Result<SparseDenseGrid>); 3] = [
            (Stage::Denoise, &|g| self.denoise(g)),
            (Stage::Refine, &|g| self.refine(&ds, &scales, g)),
            (Stage::Crf, &|g| self.crf(&ds, &scales, g)),
        ];
        for (s, f) in stages {
            if on(s) {
                let t = Instant::now();
                grid = f(grid).stage(s)?;
                timed(s, t);
            }
        }

        let t = Instant::now();
        let mesh = if on(Stage::Mesh) {
            self.mesh(&grid).stage(Stage::Mesh)?
        } else {
            import_ply(&self.out_path(MESH)).stage(Stage::Mesh)?
        };
        timed(Stage::Mesh, t);

        let metrics = if on(Stage::Eval) {
            let t = Instant::now();
            let m = self.eval(&ds, &mesh).stage(Stage::Eval)?;
            timed(Stage::Eval, t);
            Some(m)
        } else {
            None
        };
        let timings: serde_json::Map<String, serde_json::Value> = timings.into_iter().map(|(k, v)| (k.to_string(), v.into())).collect();
        let write = serde_json::to_vec_pretty(&timings)
            .map_err(Error::from)
            .and_then(|b| std::fs::write(self.out_path("timings.json"), b).map_err(Error::from));
        write.stage(Stage::Eval)?;
        Ok(metrics)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml(&c.to_toml(), &[]).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.grid.voxel_size, 0.015);
        assert_eq!(c.grid.block_res, 8);
        assert!((c.truncation() - 0.24).abs() < 1e-12);
    }

    #[test]
    fn overrides_apply_and_type_check() {
        let c = PipelineConfig::from_toml(
            "[refine]\nsteps = 5\n",
            &["refine.lr=0.5".into(), "run.out=/tmp/x".into(), "crf.filter=exact".into()],
        )
        .unwrap();
        assert_eq!(c.refine.steps, 5);
        assert_eq!(c.refine.lr, 0.5);
        assert_eq!(c.run.out, PathBuf::from("/tmp/x"));
        assert_eq!(c.crf.filter, crate::crf::FilterKind::Exact);
        for bad in ["refine.nope=1", "refine.steps=abc", "grid.voxel_size=-1", "novalue"] {
            assert!(matches!(PipelineConfig::from_toml("", &[bad.into()]), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn stage_names_parse() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("render".parse::<Stage>().is_err());
    }
}
