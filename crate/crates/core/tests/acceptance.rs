//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if a gated criterion fails. Every oracle here is written
//! independently of the library code it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_recon::calib::{binary_loss, optimize_scales, unary_loss, CalibConfig, ScaleField};
use sparse_recon::crf::{
    crf_losses, infer, lattice_filter, sample_surface, Consensus, CrfConfig, FilterKind, SurfaceSampleSet,
};
use sparse_recon::dataio::synth::{generate_synthetic, SceneSpec, Shape};
use sparse_recon::eval::{evaluate, Metrics, DEFAULT_THRESHOLD};
use sparse_recon::fusion::fuse_all;
use sparse_recon::grid::alloc::allocate;
use sparse_recon::grid::BlockIndex;
use sparse_recon::mesh::marching_cubes;
use sparse_recon::pipeline::{Pipeline, PipelineConfig};
use sparse_recon::render::{backward_step, render_weights, GradBuffer, Ray, RayTarget, RenderConfig};
use sparse_recon::{BlockCoord, SparseDenseGrid, Vec2, Vec3};
use std::collections::{HashMap, HashSet};
use std::time::Instant;

const GRAD_TOL: f64 = 2e-3;
const GRAD_CHECKS: usize = 1000;
const GRAD_BUDGET_S: f64 = 300.0;
const HASH_ROUND_TRIPS: usize = 1_000_000;
const CONTINUITY_TOL: f64 = 1e-9;
const LINEAR_TOL: f64 = 1e-12;
const MARCH_RAYS: usize = 10_000;
const WEIGHT_FIELDS: usize = 100_000;
const WEIGHT_TOL: f64 = 1e-10;
const CALIB_TOL: f64 = 0.02;
const CALIB_BUDGET_S: f64 = 120.0;
const FUSION_SURFACE_FRACTION: f64 = 0.95;
const FUSION_COLOR_TOL: f64 = 1e-3;
const CRF_AGREEMENT: f64 = 0.98;
const LATTICE_TOL: f64 = 0.15;
const E2E_INIT_F: f64 = 0.6;
const E2E_BUDGET_S: f64 = 900.0;

#[derive(Default)]
struct Report {
    gated_failures: Vec<String>,
    reported_failures: Vec<String>,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} [{id}] {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.gated_failures.push(id.to_string());
        }
    }

    /// Printed honestly but not gating; see the limitations section of the README.
    fn reported(&mut self, id: &str, pass: bool, detail: String) {
        println!("{} [{id}] {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.reported_failures.push(id.to_string());
        }
    }
}

fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn block_grid(voxel: f64, res: usize, n_labels: usize, blocks: &[(i32, i32, i32)]) -> SparseDenseGrid {
    let mut g = SparseDenseGrid::new(voxel, res, n_labels);
    for &(x, y, z) in blocks {
        g.insert_block(BlockCoord::new(x, y, z)).unwrap();
    }
    g
}

fn cube_blocks(n: i32) -> Vec<(i32, i32, i32)> {
    let mut out = Vec::new();
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                out.push((x, y, z));
            }
        }
    }
    out
}

/// Fill every voxel from `f(position)`, weight 1.
fn fill(g: &mut SparseDenseGrid, mut f: impl FnMut(&Vec3, usize, &mut [f32], &mut [f32; 3], &mut f32)) {
    let c = g.n_labels();
    for h in 0..g.num_blocks() {
        let bc = g.coords()[h];
        for l in 0..g.voxels_per_block() {
            let p = g.voxel_position(g.voxel_coord(bc, l));
            let b = g.block_mut(h);
            let mut sdf = 0.0f32;
            let mut col = [0.0f32; 3];
            f(&p, l, &mut b.logits[l * c..(l + 1) * c], &mut col, &mut sdf);
            b.sdf[l] = sdf;
            b.color[l] = col;
            b.weight[l] = 1.0;
        }
    }
}

// ---------------------------------------------------------------- criterion 1

#[derive(Default)]
struct GradStats {
    checks: usize,
    worst: f64,
    failures: usize,
    kinks: usize,
}

impl GradStats {
    fn add(&mut self, e: f64) {
        self.checks += 1;
        self.worst = self.worst.max(e);
        if e > GRAD_TOL {
            self.failures += 1;
        }
    }

    /// Central difference for losses with L1 terms or bilinear lookups.
    /// Steps whose one-sided slopes disagree straddle a kink, where no
    /// derivative exists; those are counted and skipped.
    fn add_piecewise(&mut self, analytic: f64, l0: f64, lp: f64, lm: f64, hp: f64, hm: f64, floor: f64) {
        let (sp, sm) = ((lp - l0) / hp, (l0 - lm) / hm);
        if (sp - sm).abs() > 0.05 * sp.abs().max(sm.abs()).max(floor) {
            self.kinks += 1;
            return;
        }
        self.add(rel_err(analytic, (lp - lm) / (hp + hm), floor));
    }
}

fn grad_trilinear(st: &mut GradStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vs = 0.1;
    let mut g = block_grid(vs, 4, 0, &cube_blocks(2));
    fill(&mut g, |_, _, _, _, s| *s = rng.gen_range(-1.0..1.0));
    let h = 1e-6;
    let mut done = 0;
    while done < 300 {
        let x = Vec3::new(rng.gen_range(0.0..0.7), rng.gen_range(0.0..0.7), rng.gen_range(0.0..0.7));
        let frac = (x / vs).map(|v| v - v.floor());
        if frac.iter().any(|&f| !(0.01..0.99).contains(&f)) {
            continue;
        }
        let c = g.corners(&x).unwrap();
        let (_, grad) = g.interp_sdf_grad(&c);
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            let fp = g.interp_sdf(&g.corners(&(x + e)).unwrap());
            let fm = g.interp_sdf(&g.corners(&(x - e)).unwrap());
            st.add(rel_err(grad[a], (fp - fm) / (2.0 * h), 1e-3));
        }
        done += 1;
    }
}

fn small_scene(n_frames: usize, w: usize, h: usize) -> SceneSpec {
    SceneSpec {
        room: [2.4, 2.0, 1.8],
        objects: vec![
            Shape::Sphere {
                center: [0.7, 0.6, 0.35],
                radius: 0.35,
            },
            Shape::Box {
                min: [1.5, 1.2, 0.0],
                max: [2.1, 1.8, 0.6],
            },
        ],
        n_frames,
        width: w,
        height: h,
        trajectory_radius: 0.3,
        camera_height: 0.9,
        ..SceneSpec::default()
    }
}

fn grad_calibration(st: &mut GradStats) {
    let spec = SceneSpec {
        landmarks_per_frame: 80,
        min_covisibility: 5,
        scale_range: [0.7, 1.4],
        ..small_scene(16, 64, 48)
    };
    let syn = generate_synthetic(&spec, 3).unwrap();
    let ds = &syn.dataset;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let scales: Vec<ScaleField> = ds
        .frames
        .iter()
        .map(|f| {
            let mut s = ScaleField::new(6, 8, f.width(), f.height(), 1.0);
            s.values_mut().iter_mut().for_each(|v| *v = rng.gen_range(0.8..1.2));
            s
        })
        .collect();

    // landmark term: quadratic in the control values
    for (f, s) in ds.frames.iter().zip(&scales).take(8) {
        let Ok((_, grad)) = unary_loss(f, s, &ds.landmarks) else {
            continue;
        };
        let h = 1e-4;
        for k in (0..grad.len()).filter(|&k| grad[k] != 0.0).take(20) {
            let mut sp = s.clone();
            sp.values_mut()[k] += h;
            let lp = unary_loss(f, &sp, &ds.landmarks).unwrap().0;
            sp.values_mut()[k] -= 2.0 * h;
            let lm = unary_loss(f, &sp, &ds.landmarks).unwrap().0;
            st.add(rel_err(grad[k], (lp - lm) / (2.0 * h), 1e-6));
        }
    }

    // pairwise term, gradients onto both frames
    let pairs = ds.covis.directed(spec.min_covisibility);
    for &(i, j) in pairs.iter().take(6) {
        let (fi, fj) = (&ds.frames[i], &ds.frames[j]);
        let px: Vec<Vec2> = (0..150)
            .map(|_| Vec2::new(rng.gen_range(0.0..63.0), rng.gen_range(0.0..47.0)))
            .collect();
        let base = binary_loss(fi, fj, &scales[i], &scales[j], &px);
        let h = 1e-6;
        for side in 0..2 {
            let grad = if side == 0 { &base.grad_i } else { &base.grad_j };
            let mut idx: Vec<usize> = (0..grad.len()).filter(|&k| grad[k] != 0.0).collect();
            idx.sort_by(|a, b| grad[*b].abs().total_cmp(&grad[*a].abs()));
            for &k in idx.iter().take(12) {
                let eval = |delta: f64| {
                    let mut si = scales[i].clone();
                    let mut sj = scales[j].clone();
                    let s = if side == 0 { &mut si } else { &mut sj };
                    s.values_mut()[k] += delta;
                    binary_loss(fi, fj, &si, &sj, &px).value()
                };
                st.add_piecewise(grad[k], base.value(), eval(h), eval(-h), h, h, 1e-4);
            }
        }
    }
}

fn grad_render(st: &mut GradStats) {
    let mut g = block_grid(0.02, 8, 0, &[(0, 0, 0), (1, 0, 0)]);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = Vec3::new(0.9, 0.2, 0.1).normalize();
    fill(&mut g, |p, _, _, col, s| {
        *s = (n.dot(p) - 0.15 + rng.gen_range(-0.004..0.004)) as f32;
        *col = [0.2 + p.y * 2.0, 0.5 + rng.gen_range(-0.1..0.1), 0.8 - p.z * 2.0].map(|c| c as f32);
    });
    let rot = nalgebra::Rotation3::from_euler_angles(0.1, -0.2, 0.3).into_inner();
    let mut rays = Vec::new();
    let mut targets = Vec::new();
    for _ in 0..24 {
        let o = Vec3::new(-0.3, rng.gen_range(0.03..0.13), rng.gen_range(0.03..0.13));
        let d = Vec3::new(1.0, rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)).normalize();
        rays.push(Ray {
            origin: o,
            direction: d,
            offset: rng.gen(),
        });
        targets.push(RayTarget {
            color: Vec3::new(rng.gen(), rng.gen(), rng.gen()),
            depth: Some(rng.gen_range(0.4..0.6)),
            normal: Some(Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), -1.0).normalize()),
            rotation: rot,
        });
    }
    let cfg = RenderConfig {
        min_transmittance: 0.0,
        eikonal_uniform: 0,
        eikonal_band: Some(0.04),
        ..RenderConfig::default()
    };
    let total = |g: &SparseDenseGrid| backward_step(g, &rays, &targets, &cfg, 0).unwrap().0.total;
    let (base, grads) = backward_step(&g, &rays, &targets, &cfg, 0).unwrap();
    let l0 = base.total;
    let h = 1e-4f32;
    let mut sdf = grads.sdf.clone();
    sdf.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    for &(id, an) in sdf.iter().take(120) {
        let v = g.sdf_by_id(id);
        *g.sdf_by_id_mut(id) = v + h;
        let lp = total(&g);
        *g.sdf_by_id_mut(id) = v - h;
        let lm = total(&g);
        *g.sdf_by_id_mut(id) = v;
        let (hp, hm) = ((v + h) as f64 - v as f64, v as f64 - (v - h) as f64);
        st.add_piecewise(an, l0, lp, lm, hp, hm, 1e-3);
    }
    let mut col = grads.color.clone();
    col.sort_by(|a, b| b.1[0].abs().total_cmp(&a.1[0].abs()));
    for &(id, an) in col.iter().take(40) {
        for ch in 0..3 {
            let v = g.color_by_id(id)[ch];
            g.color_by_id_mut(id)[ch] = v + h;
            let lp = total(&g);
            g.color_by_id_mut(id)[ch] = v - h;
            let lm = total(&g);
            g.color_by_id_mut(id)[ch] = v;
            let (hp, hm) = ((v + h) as f64 - v as f64, v as f64 - (v - h) as f64);
            st.add_piecewise(an[ch], l0, lp, lm, hp, hm, 1e-3);
        }
    }
}

/// Sphere of radius `r` centered in a 2x2x2-block grid with smooth colors
/// and logits.
fn sphere_grid(r: f64, n_labels: usize) -> SparseDenseGrid {
    let mut g = block_grid(0.02, 8, n_labels, &cube_blocks(2));
    let c = Vec3::repeat(0.16);
    fill(&mut g, |p, _, logits, col, s| {
        let q = p - c;
        *s = (q.norm() - r) as f32;
        *col = [0.5 + q.x, 0.5 + q.y, 0.5 - q.z].map(|v| v as f32);
        for (k, l) in logits.iter_mut().enumerate() {
            *l = ((k as f64 + 1.0) * q.x * 5.0 + k as f64 * q.z * 3.0).sin() as f32;
        }
    });
    g
}

fn perturbed_consensus(set: &SurfaceSampleSet, cfg: &CrfConfig, rng: &mut ChaCha8Rng) -> Consensus {
    let mut c = Consensus::identity(set, cfg);
    let mut jitter = |s: f64| Vec3::new(rng.gen_range(-s..s), rng.gen_range(-s..s), rng.gen_range(-s..s));
    for v in &mut c.colors {
        *v += jitter(0.2);
    }
    for v in &mut c.normals {
        *v = (*v + jitter(0.3)).normalize();
    }
    for row in c.labels.chunks_mut(set.n_labels) {
        row.iter_mut().for_each(|v| *v = rng.gen_range(0.05..1.0));
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    c
}

fn grad_crf(st: &mut GradStats) {
    let mut g = sphere_grid(0.1, 3);
    let mut set = sample_surface(&g, 4, 80, 2).unwrap();
    set.subsample(200, 0);
    let cfg = CrfConfig {
        lambda_color: 1.0,
        ..CrfConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cons = perturbed_consensus(&set, &cfg, &mut rng);
    let mut buf = GradBuffer::new(&g, true);
    crf_losses(&g, &set, &cons, &cfg, Some(&mut buf));
    let mut ids = buf.touched().to_vec();
    ids.sort_by(|a, b| buf.sdf[*b].abs().total_cmp(&buf.sdf[*a].abs()));
    let c = g.n_labels();
    let loss = |g: &SparseDenseGrid| crf_losses(g, &set, &cons, &cfg, None).total;
    for &id in ids.iter().take(40) {
        for slot in 0..4 + c {
            let an = match slot {
                0 => buf.sdf[id],
                1..=3 => buf.color[id][slot - 1],
                _ => buf.logits[id * c + slot - 4],
            };
            // SDF values enter the normal through 1/voxel, so they take a smaller step.
            let h = if slot == 0 { 2e-5f32 } else { 1e-3 };
            let set_param = |g: &mut SparseDenseGrid, v: Option<f32>| -> f32 {
                let p = match slot {
                    0 => g.sdf_by_id_mut(id),
                    1..=3 => &mut g.color_by_id_mut(id)[slot - 1],
                    _ => &mut g.logits_by_id_mut(id)[slot - 4],
                };
                let old = *p;
                if let Some(v) = v {
                    *p = v;
                }
                old
            };
            let v0 = set_param(&mut g, None);
            set_param(&mut g, Some(v0 + h));
            let lp = loss(&g);
            set_param(&mut g, Some(v0 - h));
            let lm = loss(&g);
            set_param(&mut g, Some(v0));
            let fd = (lp - lm) / ((v0 + h) as f64 - (v0 - h) as f64);
            if an.abs().max(fd.abs()) < 1e-6 {
                continue;
            }
            st.add(rel_err(an, fd, 1e-6));
        }
    }
}

fn criterion_1(r: &mut Report) {
    let t = Instant::now();
    let mut parts = Vec::new();
    type Family = fn(&mut GradStats);
    let families: [(&str, Family); 4] = [
        ("trilinear", grad_trilinear),
        ("calibration", grad_calibration),
        ("render", grad_render),
        ("crf", grad_crf),
    ];
    let mut total = 0;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for (name, f) in families {
        let mut st = GradStats::default();
        f(&mut st);
        parts.push(format!("{name} {} checks, worst {:.1e}, {} kinks skipped", st.checks, st.worst, st.kinks));
        total += st.checks;
        worst = worst.max(st.worst);
        failures += st.failures;
    }
    let secs = t.elapsed().as_secs_f64();
    r.line(
        "1",
        failures == 0 && total >= GRAD_CHECKS && secs < GRAD_BUDGET_S,
        format!(
            "gradients vs central differences: {total} checks (need {GRAD_CHECKS}), {failures} over rel {GRAD_TOL:e}, worst {worst:.2e} [{}], {secs:.1} s",
            parts.join(", ")
        ),
    );
}

// ---------------------------------------------------------------- criterion 2

fn criterion_2(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut index = BlockIndex::with_capacity(1024);
    let mut oracle: HashMap<(i32, i32, i32), usize> = HashMap::new();
    let mut aliasing = 0usize;
    for _ in 0..HASH_ROUND_TRIPS {
        // a dense core forces repeats, the wide range forces collisions
        let k = if rng.gen_bool(0.3) {
            (rng.gen_range(-20..20), rng.gen_range(-20..20), rng.gen_range(-20..20))
        } else {
            (rng.gen_range(-1 << 20..1 << 20), rng.gen_range(-1 << 20..1 << 20), rng.gen_range(-1 << 20..1 << 20))
        };
        let (h, fresh) = index.insert(BlockCoord::new(k.0, k.1, k.2));
        let next = oracle.len();
        let expect = *oracle.entry(k).or_insert(next);
        if h != expect || fresh != (expect == next) || index.get(BlockCoord::new(k.0, k.1, k.2)) != Some(expect) {
            aliasing += 1;
        }
    }
    for (k, &h) in &oracle {
        if index.get(BlockCoord::new(k.0, k.1, k.2)) != Some(h) {
            aliasing += 1;
        }
    }
    let mut misses = 0;
    for _ in 0..100_000 {
        let k = (rng.gen_range(-1 << 22..1 << 22), rng.gen_range(-1 << 22..1 << 22), rng.gen_range(-1 << 22..1 << 22));
        if !oracle.contains_key(&k) && index.get(BlockCoord::new(k.0, k.1, k.2)).is_some() {
            misses += 1;
        }
    }
    r.line(
        "2a",
        aliasing == 0 && misses == 0 && index.len() == oracle.len(),
        format!(
            "block index: {HASH_ROUND_TRIPS} insert/find round trips, {} distinct keys, {aliasing} aliased, {misses} false hits",
            oracle.len()
        ),
    );

    // continuity across block faces
    let vs = 0.1;
    let res = 4;
    let mut g = block_grid(vs, res, 0, &cube_blocks(3));
    fill(&mut g, |_, _, _, _, s| *s = rng.gen_range(-1.0..1.0));
    let face = vs * res as f64;
    let mut worst: f64 = 0.0;
    let eps = 1e-12;
    for _ in 0..20_000 {
        let axis = rng.gen_range(0..3);
        let mut x = Vec3::new(rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0), rng.gen_range(0.05..1.0));
        x[axis] = face * rng.gen_range(1..3) as f64;
        let mut e = Vec3::zeros();
        e[axis] = eps;
        let a = g.query_sdf_with_gradient(&(x - e));
        let b = g.query_sdf_with_gradient(&(x + e));
        assert!(a.2 && b.2);
        worst = worst.max((a.0 - b.0).abs());
    }
    r.line(
        "2b",
        worst <= CONTINUITY_TOL,
        format!("trilinear continuity across block faces: max jump {worst:.2e} (tol {CONTINUITY_TOL:e})"),
    );

    // linear fields with f32-exact voxel values
    let vs = 0.25;
    let mut g = block_grid(vs, 4, 0, &cube_blocks(2));
    let (n, c0) = (Vec3::new(2.0, -3.0, 0.5), 1.0);
    fill(&mut g, |p, _, _, _, s| *s = (n.dot(p) + c0) as f32);
    let mut worst: f64 = 0.0;
    for _ in 0..100_000 {
        let x = Vec3::new(rng.gen_range(0.0..1.75), rng.gen_range(0.0..1.75), rng.gen_range(0.0..1.75));
        let (s, grad, ok) = g.query_sdf_with_gradient(&x);
        assert!(ok);
        worst = worst.max((s - (n.dot(&x) + c0)).abs()).max((grad - n).amax());
    }
    r.line(
        "2c",
        worst <= LINEAR_TOL,
        format!("linear field reproduction: max deviation {worst:.2e} over 1e5 queries (tol {LINEAR_TOL:e})"),
    );
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (vs, res) = (0.02, 4);
    let bs = vs * res as f64;
    let per_grid = 500;
    let (mut mismatched, mut outside, mut samples) = (0usize, 0usize, 0usize);
    for _ in 0..MARCH_RAYS / per_grid {
        let mut g = SparseDenseGrid::new(vs, res, 0);
        let mut alloc = HashSet::new();
        for _ in 0..rng.gen_range(10..200) {
            let k = (rng.gen_range(-5..5), rng.gen_range(-5..5), rng.gen_range(-5..5));
            g.insert_block(BlockCoord::new(k.0, k.1, k.2)).unwrap();
            alloc.insert(k);
        }
        let inside = |x: &Vec3| {
            alloc.contains(&((x.x / bs).floor() as i32, (x.y / bs).floor() as i32, (x.z / bs).floor() as i32))
        };
        for _ in 0..per_grid {
            let o = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let d = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let step = rng.gen_range(0.003..0.02);
            let got: Vec<f64> = g.march_ray(&o, &d, step, usize::MAX).iter().map(|s| s.t).collect();
            let expect: Vec<f64> = (0..)
                .map(|k| k as f64 * step)
                .take_while(|&t| t <= 4.0)
                .filter(|&t| inside(&(o + d * t)))
                .collect();
            samples += got.len();
            outside += got.iter().filter(|&&t| !inside(&(o + d * t))).count();
            if got != expect {
                mismatched += 1;
            }
        }
    }
    r.line(
        "3",
        mismatched == 0 && outside == 0,
        format!("ray march vs dense stepping: {MARCH_RAYS} rays, {samples} samples, {mismatched} mismatched rays, {outside} samples outside allocation"),
    );
}

// ---------------------------------------------------------------- criterion 4

fn criterion_4(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut negative, mut over_one) = (0usize, 0usize);
    let mut worst: f64 = 0.0;
    for _ in 0..WEIGHT_FIELDS {
        let n = rng.gen_range(1..=64);
        let scale = [0.01, 0.3, 3.0, 40.0][rng.gen_range(0..4)];
        let tau: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.1) { 0.0 } else { rng.gen_range(0.0..scale) })
            .collect();
        let (w, _) = render_weights(&tau);
        let mut trans = 1.0;
        let mut sum = 0.0;
        for (k, &t) in tau.iter().enumerate() {
            let alpha = 1.0 - (-t).exp();
            let expect = trans * alpha;
            trans *= 1.0 - alpha;
            worst = worst.max((w[k] - expect).abs());
            negative += usize::from(w[k] < 0.0);
            sum += w[k];
        }
        over_one += usize::from(sum > 1.0 + 1e-12);
    }
    r.line(
        "4",
        negative == 0 && over_one == 0 && worst <= WEIGHT_TOL,
        format!("rendering weights: {WEIGHT_FIELDS} fields, {negative} negative, {over_one} sums above 1, max deviation from recurrence {worst:.2e} (tol {WEIGHT_TOL:e})"),
    );
}

// ---------------------------------------------------------------- criterion 5

fn criterion_5(r: &mut Report) {
    let spec = SceneSpec {
        distortion: 0.0,
        scale_range: [0.5, 2.0],
        ..SceneSpec::default()
    };
    let syn = generate_synthetic(&spec, 5).unwrap();
    let ds = &syn.dataset;
    let cfg = CalibConfig::default();
    let t = Instant::now();
    let cal = optimize_scales(&ds.frames, &ds.landmarks, &ds.covis, &cfg).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let errs: Vec<f64> = cal
        .scales
        .iter()
        .zip(&syn.distortions)
        .map(|(s, d)| (s.mean() - d.scale).abs() / d.scale)
        .collect();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    r.line(
        "5",
        worst <= CALIB_TOL && secs < CALIB_BUDGET_S,
        format!(
            "scale recovery: {} frames at {}x{}, {}x{} grid, {} steps; per-frame mean-scale error max {:.2}% mean {:.2}% (tol {:.0}%), {secs:.1} s",
            spec.n_frames,
            spec.width,
            spec.height,
            cfg.cols,
            cfg.rows,
            cfg.steps,
            worst * 100.0,
            mean * 100.0,
            CALIB_TOL * 100.0
        ),
    );
}

// ---------------------------------------------------------------- criterion 6

fn criterion_6(r: &mut Report) {
    let spec = SceneSpec {
        distortion: 0.0,
        texture: 0.0,
        ..small_scene(12, 160, 120)
    };
    let syn = generate_synthetic(&spec, 6).unwrap();
    let mut frames = syn.dataset.frames.clone();
    for (f, d) in frames.iter_mut().zip(&syn.gt_depth) {
        f.depth = d.clone();
    }
    let scales: Vec<ScaleField> = frames.iter().map(|f| ScaleField::constant(f.width(), f.height(), 1.0)).collect();
    let (vs, res, dil) = (0.03, 8, 1);
    let mu = vs * res as f64 * dil as f64;
    let mut g = SparseDenseGrid::new(vs, res, spec.n_labels);
    allocate(&mut g, &frames, &scales, dil).unwrap();
    fuse_all(&mut g, &frames, &scales, mu);
    let scene = &syn.scene;

    // zero crossings on cell edges
    let (mut cells, mut good) = (0usize, 0usize);
    for (_, v) in g.valid_voxels() {
        let corner = |dx: i32, dy: i32, dz: i32| {
            let c = [v[0] + dx, v[1] + dy, v[2] + dz];
            g.voxel_id(c).filter(|&i| g.weight_by_id(i) > 0.0).map(|i| (g.voxel_position(c), g.sdf_by_id(i) as f64))
        };
        let Some(all) = (0..8)
            .map(|k| corner(k & 1, (k >> 1) & 1, k >> 2))
            .collect::<Option<Vec<_>>>()
        else {
            continue;
        };
        let mut crossings = Vec::new();
        for a in 0..8 {
            for bit in [1, 2, 4] {
                let b = a | bit;
                if a == b {
                    continue;
                }
                let ((pa, sa), (pb, sb)) = (all[a], all[b]);
                if (sa < 0.0) != (sb < 0.0) {
                    let t = sa / (sa - sb);
                    crossings.push(pa + (pb - pa) * t);
                }
            }
        }
        if crossings.is_empty() {
            continue;
        }
        cells += 1;
        if crossings.iter().all(|p| scene.sdf(p).abs() <= vs) {
            good += 1;
        }
    }
    let frac = good as f64 / cells.max(1) as f64;
    r.line(
        "6a",
        cells > 0 && frac >= FUSION_SURFACE_FRACTION,
        format!(
            "fused zero crossing within one voxel of the surface: {good}/{cells} cells = {:.2}% (need {:.0}%)",
            frac * 100.0,
            FUSION_SURFACE_FRACTION * 100.0
        ),
    );

    // colors against the mean of the observed ground-truth albedo
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let observed: Vec<(usize, [i32; 3])> = g.valid_voxels().filter(|(i, _)| g.weight_by_id(*i) > 0.0).collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..4000 {
        let (id, v) = observed[rng.gen_range(0..observed.len())];
        let x = g.voxel_position(v);
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for (k, f) in frames.iter().enumerate() {
            let Ok(p) = f.camera.project(&x) else { continue };
            let (u, w) = (p.pixel.x.round(), p.pixel.y.round());
            if u < 0.0 || w < 0.0 || u >= f.width() as f64 || w >= f.height() as f64 {
                continue;
            }
            let (u, w) = (u as usize, w as usize);
            let surf = syn.surface_ids[k][w * f.width() + u];
            if surf == usize::MAX || (syn.gt_depth[k].get(u, w, 0) as f64) - p.depth < -mu {
                continue;
            }
            let c = scene.color(surf, &x);
            (0..3).for_each(|ch| sum[ch] += c[ch] as f32 as f64);
            n += 1;
        }
        if n == 0 {
            continue;
        }
        let fused = g.color_by_id(id);
        for ch in 0..3 {
            worst = worst.max((fused[ch] as f64 - sum[ch] / n as f64).abs());
        }
        checked += 1;
    }
    r.line(
        "6b",
        checked > 1000 && worst <= FUSION_COLOR_TOL,
        format!("fused colors vs mean observed albedo: {checked} voxels, max deviation {worst:.2e} (tol {FUSION_COLOR_TOL:e})"),
    );
}

// ---------------------------------------------------------------- criterion 7

fn criterion_7(r: &mut Report) {
    // default coupling, and a stronger one that needs a padding ring
    for (id, weight, rings) in [("7a", 1.0, 0), ("7a w=3", 3.0, 1)] {
        let mut worst_agree: f64 = 1.0;
        let (mut nodes, mut flipped) = (0, 0);
        for seed in 0..5u64 {
            let g = sphere_grid(0.1, 3);
            let mut set = sample_surface(&g, 6, 120, seed).unwrap();
            set.subsample(200, seed);
            nodes = set.len();
            let mut cfg = CrfConfig {
                label_weight: weight,
                lattice_rings: rings,
                filter: FilterKind::Exact,
                ..CrfConfig::default()
            };
            let exact = infer(&set, &cfg).unwrap();
            cfg.filter = FilterKind::Lattice;
            let lat = infer(&set, &cfg).unwrap();
            let c = set.n_labels;
            let argmax = |row: &[f64]| (0..c).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            let agree = exact
                .labels
                .chunks(c)
                .zip(lat.labels.chunks(c))
                .filter(|(a, b)| argmax(a) == argmax(b))
                .count();
            let unary = set.label_distributions(cfg.label_temperature);
            flipped += exact
                .labels
                .chunks(c)
                .zip(unary.chunks(c))
                .filter(|(a, b)| argmax(a) != argmax(b))
                .count();
            worst_agree = worst_agree.min(agree as f64 / set.len() as f64);
        }
        r.line(
            id,
            nodes <= 200 && worst_agree >= CRF_AGREEMENT,
            format!(
                "lattice vs brute-force mean field, {nodes} surface samples, 5 iterations, label weight {weight}, {rings} padding ring(s): worst argmax agreement {:.1}% over 5 seeds (need {:.0}%); brute force moved {flipped} labels off the unary argmax",
                worst_agree * 100.0,
                CRF_AGREEMENT * 100.0
            ),
        );
    }

    for d in [1usize, 2, 3, 5, 8] {
        let mut worst: f64 = 0.0;
        let mut median_of_worst = Vec::new();
        for (seed, spread) in [0.5, 1.0, 2.0].into_iter().enumerate() {
            let n = 500;
            let mut rng = ChaCha8Rng::seed_from_u64(70 + seed as u64 + 10 * d as u64);
            let normal = rand_distr::Normal::new(0.0, spread).unwrap();
            let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.sample(normal)).collect()).collect();
            let vals: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.5..1.5)]).collect();
            let approx = lattice_filter(&feats, &vals).unwrap();
            let mut errs = Vec::with_capacity(n);
            for i in 0..n {
                let exact: f64 = (0..n)
                    .map(|j| {
                        let d2: f64 = feats[i].iter().zip(&feats[j]).map(|(a, b)| (a - b).powi(2)).sum();
                        (-0.5 * d2).exp() * vals[j][0]
                    })
                    .sum();
                errs.push((approx[i][0] - exact).abs() / exact);
            }
            errs.sort_by(f64::total_cmp);
            worst = worst.max(errs[n - 1]);
            median_of_worst.push(errs[n / 2]);
        }
        let med = median_of_worst.iter().copied().fold(0.0, f64::max);
        r.reported(
            &format!("7b d={d}"),
            worst <= LATTICE_TOL,
            format!(
                "lattice vs O(n^2) Gaussian sum, n=500, d={d}, spreads 0.5/1/2: max per-point rel error {:.1}%, median {:.1}% (tol {:.0}%)",
                worst * 100.0,
                med * 100.0,
                LATTICE_TOL * 100.0
            ),
        );
    }
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().display().to_string().replace('\\', "/");
    let text = format!(
        r#"
[run]
data = "{root}/data"
out = "{root}/out"
synth_seed = 1

[synth]
room = [2.4, 2.0, 1.8]
n_frames = 24
width = 160
height = 120
trajectory_radius = 0.3
camera_height = 0.9
distortion = 0.2
objects = [
  {{ kind = "sphere", center = [0.7, 0.6, 0.35], radius = 0.35 }},
  {{ kind = "box", min = [1.5, 1.2, 0.0], max = [2.1, 1.8, 0.6] }},
]

[grid]
voxel_size = 0.03
dilation = 1

[refine]
steps = 1000
rays_per_image = 256
images_per_batch = 8

[crf]
steps = 200
n_viewpoints = 8
rays_per_view = 512
samples = 8000
"#
    );
    let cfg = PipelineConfig::from_toml(&text, &[]).unwrap();
    let p = Pipeline::new(cfg);
    let t = Instant::now();
    p.synth().unwrap();
    let ds = p.load_data().unwrap();
    let gt = p.gt_points(&ds).unwrap();
    let score = |g: &SparseDenseGrid| -> Metrics { p.evaluate_mesh(&marching_cubes(g, 0.0), &gt).unwrap() };
    let scales = p.calibrate(&ds).unwrap();
    let g = p.fuse(&ds, &scales).unwrap();
    let g = p.denoise(g).unwrap();
    let init = score(&g);
    let g = p.refine(&ds, &scales, g).unwrap();
    let refined = score(&g);
    let g = p.crf(&ds, &scales, g).unwrap();
    let crf = score(&g);
    let secs = t.elapsed().as_secs_f64();
    let threshold = p.cfg.eval.threshold;
    r.line(
        "8a",
        init.fscore >= E2E_INIT_F,
        format!("end to end, calibrate+fuse+denoise: F@{threshold} = {:.4} (need {E2E_INIT_F})", init.fscore),
    );
    r.line(
        "8b",
        refined.fscore > init.fscore,
        format!(
            "end to end, + volume rendering (1000 steps): F = {:.4} > {:.4} (acc {:.4}, comp {:.4})",
            refined.fscore, init.fscore, refined.acc, refined.comp
        ),
    );
    r.line(
        "8c",
        crf.fscore >= refined.fscore,
        format!("end to end, + CRF: F = {:.4} >= {:.4} (acc {:.4}, comp {:.4})", crf.fscore, refined.fscore, crf.acc, crf.comp),
    );
    r.line(
        "8d",
        secs < E2E_BUDGET_S,
        format!(
            "end to end runtime {secs:.0} s on {} worker(s) (budget {E2E_BUDGET_S:.0} s)",
            rayon::current_num_threads()
        ),
    );
}

// ---------------------------------------------------------------- criterion 9

fn criterion_9(r: &mut Report) {
    let (vs, radius) = (0.02, 0.23);
    let mut g = block_grid(vs, 8, 0, &cube_blocks(4));
    let c = Vec3::repeat(0.32);
    fill(&mut g, |p, _, _, _, s| *s = ((p - c).norm() - radius) as f32);
    let m = marching_cubes(&g, 0.0);
    let worst = m.vertices.iter().map(|v| ((v - c).norm() - radius).abs()).fold(0.0, f64::max);
    r.line(
        "9a",
        !m.vertices.is_empty() && worst <= vs / 2.0,
        format!(
            "sphere extraction: {} vertices, max radial error {:.2e} m (tol half voxel {:.2e})",
            m.vertices.len(),
            worst,
            vs / 2.0
        ),
    );

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut exact = 0;
    let trials = 10;
    for t in 0..trials {
        let na = rng.gen_range(1..=2000);
        let nb = rng.gen_range(1..=2000);
        let spread = [0.2, 1.0, 3.0][t % 3];
        let mut cloud = |n: usize| -> Vec<Vec3> {
            (0..n)
                .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()) * spread)
                .collect()
        };
        let (a, b) = (cloud(na), cloud(nb));
        let got = evaluate(&a, &b, DEFAULT_THRESHOLD).unwrap();
        let nn = |p: &Vec3, set: &[Vec3]| set.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min);
        let da: Vec<f64> = a.iter().map(|p| nn(p, &b)).collect();
        let db: Vec<f64> = b.iter().map(|p| nn(p, &a)).collect();
        let mut acc = 0.0;
        da.iter().for_each(|d| acc += d);
        let mut comp = 0.0;
        db.iter().for_each(|d| comp += d);
        let prec = da.iter().filter(|&&d| d < DEFAULT_THRESHOLD).count() as f64 / na as f64;
        let recall = db.iter().filter(|&&d| d < DEFAULT_THRESHOLD).count() as f64 / nb as f64;
        let f = if prec + recall > 0.0 { 2.0 * prec * recall / (prec + recall) } else { 0.0 };
        let same = got.acc == acc / na as f64
            && got.comp == comp / nb as f64
            && got.prec == prec
            && got.recall == recall
            && got.fscore == f
            && got.n_pred == na
            && got.n_gt == nb;
        exact += usize::from(same);
    }
    let default_t = PipelineConfig::default().eval.threshold;
    r.line(
        "9b",
        exact == trials && default_t == 0.05 && DEFAULT_THRESHOLD == 0.05,
        format!("metrics vs brute force (n <= 2000): {exact}/{trials} bit-identical; default T = {default_t} m"),
    );
}

fn main() {
    // Positional arguments select criteria by number, e.g. `-- 1 7`.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let only: Vec<&str> = args.iter().filter(|a| !a.starts_with('-')).map(String::as_str).collect();
    let criteria: [(&str, fn(&mut Report)); 9] = [
        ("1", criterion_1),
        ("2", criterion_2),
        ("3", criterion_3),
        ("4", criterion_4),
        ("5", criterion_5),
        ("6", criterion_6),
        ("7", criterion_7),
        ("9", criterion_9),
        ("8", criterion_8),
    ];
    let mut r = Report::default();
    let t = Instant::now();
    for (id, f) in criteria {
        if only.is_empty() || only.contains(&id) {
            f(&mut r);
        }
    }
    println!(
        "acceptance: {} gated failure(s) {:?}, {} reported-only failure(s) {:?}, {:.0} s",
        r.gated_failures.len(),
        r.gated_failures,
        r.reported_failures.len(),
        r.reported_failures,
        t.elapsed().as_secs_f64()
    );
    if !r.gated_failures.is_empty() {
        std::process::exit(1);
    }
}
