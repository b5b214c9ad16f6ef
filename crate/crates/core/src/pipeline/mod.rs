//! End-to-end refinement loop over a synthetic or on-disk scene: motion
//! factors, deformation detection, densification, articulation, rendering
//! and scoring, with artifacts written per iteration.

pub mod config;
mod scene;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::cloud::{
    articulate, densify, prune_transparent, write_gaussians, DensifyCandidates, DensifyParams, Gaussian3D,
    GaussianCloud, Trigger,
};
use crate::error::{Error, Result};
use crate::fisher::FisherParams;
use crate::kinematics::{forward_kinematics, jntm_propagate, MotionFactors};
use crate::metrics::{format_metrics, format_sig9, image_parts, total_loss, LossReport};
use crate::render::{render, write_image_set, Camera, ImageRGBA, NEAR_PLANE};
use crate::uid::{detect, DetectParams, PointSet};

pub use config::{ExperimentConfig, CONFIG_HELP};
pub use scene::{format_pose, load_pose, load_scene_files, parse_pose, scene_gen, Scene, SCENE_NAMES};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cloud_size: usize,
    pub uid_flagged: usize,
    pub uid_degenerate: usize,
    pub gradient_candidates: usize,
    pub candidates: usize,
    pub clones: usize,
    pub splits: usize,
    pub pruned: usize,
    /// `format_sig9` strings so that infinite PSNR survives JSON.
    pub metrics: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub color_loss_initial: String,
    pub color_loss_final: String,
    /// `1 - final / initial`.
    pub relative_reduction: String,
}

/// Deterministic record of a run; wall-clock timings live in [`TIMINGS_FILE`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub scene: String,
    pub joints: usize,
    pub reference_size: usize,
    pub iterations: Vec<IterationRecord>,
    pub summary: RunSummary,
    pub timings_file: String,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub iteration: usize,
    pub stage: &'static str,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: RunManifest,
    pub timings: Vec<StageTiming>,
    /// Rest-pose cloud after the last iteration.
    pub cloud: GaussianCloud,
    pub reports: Vec<LossReport>,
    /// Cloud indices flagged by deformation detection, per iteration.
    pub uid_flags: Vec<Vec<usize>>,
    pub reference_image: ImageRGBA,
    pub final_image: ImageRGBA,
}

struct Stages {
    iteration: usize,
    timings: Vec<StageTiming>,
}

impl Stages {
    fn run<T>(&mut self, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f().map_err(|e| Error::Stage { stage, iteration: self.iteration, source: Box::new(e) });
        self.timings.push(StageTiming { iteration: self.iteration, stage, seconds: start.elapsed().as_secs_f64() });
        out
    }
}

/// Builds or loads the scene a config names.
pub fn resolve_scene(cfg: &ExperimentConfig) -> Result<Scene> {
    let s = &cfg.scene;
    let mut scene = match &s.name {
        Some(name) => scene_gen(name, cfg.seed)?,
        None => {
            let pick = |p: &Option<PathBuf>, file: &str| -> Result<PathBuf> {
                let path = match (p, &s.dir) {
                    (Some(p), _) => p.clone(),
                    (None, Some(d)) => d.join(file),
                    (None, None) => return Err(Error::Config(format!("[scene] has no path for {file}"))),
                };
                if !path.exists() {
                    return Err(Error::Config(format!("{} does not exist", path.display())));
                }
                Ok(path)
            };
            let name = s.dir.as_deref().and_then(Path::file_name).map(|n| n.to_string_lossy().into_owned());
            load_scene_files(
                name.as_deref().unwrap_or("custom"),
                &pick(&s.rig, "rig.txt")?,
                &pick(&s.initial, "initial.ply")?,
                &pick(&s.pose, "pose.txt")?,
                &pick(&s.reference, "reference.ply")?,
                &pick(&s.camera, "camera.toml")?,
            )?
        }
    };
    if let Some(c) = &cfg.camera {
        scene.camera = c.build()?;
    }
    Ok(scene)
}

/// Gaussians whose projected center sits in a window where the render covers
/// less than the reference: the mean alpha deficit `max(0, α_ref - α)` over a
/// `(2 radius + 1)²` window exceeds `threshold`.
pub fn residual_candidates(
    posed: &[Gaussian3D],
    cam: &Camera,
    current: &ImageRGBA,
    reference: &ImageRGBA,
    threshold: f64,
    radius: usize,
) -> Result<Vec<usize>> {
    current.same_size(reference)?;
    let r = radius as i64;
    let (w, h) = (current.width as i64, current.height as i64);
    Ok(posed
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let t = cam.to_camera_frame(&g.position);
            if t.z < NEAR_PLANE {
                return None;
            }
            let px = (cam.fx * t.x / t.z + cam.cx).floor() as i64;
            let py = (cam.fy * t.y / t.z + cam.cy).floor() as i64;
            let (mut sum, mut n) = (0.0, 0);
            for y in (py - r).max(0)..=(py + r).min(h - 1) {
                for x in (px - r).max(0)..=(px + r).min(w - 1) {
                    let j = (y * w + x) as usize;
                    sum += (reference.alpha[j] - current.alpha[j]).max(0.0);
                    n += 1;
                }
            }
            (n > 0 && sum / n as f64 > threshold).then_some(i)
        })
        .collect())
}

fn joint_nll(params: &[FisherParams], pose: &crate::kinematics::Pose) -> Result<f64> {
    params.iter().zip(&pose.0).map(|(p, r)| p.nll(r)).sum()
}

fn iteration_seed(seed: u64, iteration: usize) -> u64 {
    seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the loop and writes every artifact into `cfg.output`.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let mut st = Stages { iteration: 0, timings: Vec::new() };
    let scene = st.run("load", || resolve_scene(cfg))?;
    let out_dir = cfg.output.clone();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let tree = &scene.rig.tree;
    let transforms = st.run("kinematics", || forward_kinematics(tree, &scene.pose))?;
    let reference_image = st.run("reference", || {
        let img = render(&scene.reference, &scene.camera);
        write_image_set(&img, out_dir.join("reference.ppm"))?;
        Ok(img)
    })?;
    let reference_q = reference_image.quantized();

    let base_params: Vec<FisherParams> =
        scene.pose.0.iter().map(|r| FisherParams::new(r.matrix() * cfg.jntm.kappa)).collect::<Result<_>>()?;
    let detect_params = DetectParams::new(cfg.uid.k, cfg.uid.threshold_deg.to_radians());
    let densify_params =
        DensifyParams { mode_threshold: cfg.densify.mode_threshold, split_factor: cfg.densify.split_factor };
    let s3im = cfg.s3im;

    let mut cloud = scene.initial.clone();
    let mut records = Vec::new();
    let mut reports = Vec::new();
    let mut uid_flags_all = Vec::new();
    let mut posed: Vec<Gaussian3D> = Vec::new();
    let mut image = ImageRGBA::transparent(0, 0);

    for it in 0..=cfg.iterations {
        st.iteration = it;
        let (refined, factors): (Vec<FisherParams>, MotionFactors) =
            st.run("jntm", || jntm_propagate(tree, &base_params, cfg.jntm.gamma))?;
        let mut rec = IterationRecord {
            iteration: it,
            cloud_size: 0,
            uid_flagged: 0,
            uid_degenerate: 0,
            gradient_candidates: 0,
            candidates: 0,
            clones: 0,
            splits: 0,
            pruned: 0,
            metrics: BTreeMap::new(),
        };
        if it == 0 {
            uid_flags_all.push(Vec::new());
        } else {
            let mut candidates = DensifyCandidates::new();
            let grad = st.run("gradient", || {
                residual_candidates(
                    &posed,
                    &scene.camera,
                    &image,
                    &reference_image,
                    cfg.densify.grad_threshold,
                    cfg.densify.grad_radius,
                )
            })?;
            rec.gradient_candidates = grad.len();
            // Deformation detection runs on the gradient-selected set.
            let mut uid_flags = Vec::new();
            if cfg.uid.enabled && grad.len() > detect_params.k {
                let report = st.run("uid", || {
                    let pts = PointSet::new(grad.iter().map(|&i| cloud.gaussians[i].position).collect())?;
                    detect(&pts, detect_params)
                })?;
                rec.uid_flagged = report.flagged.len();
                rec.uid_degenerate = report.degenerate.len();
                uid_flags = report.flagged.iter().map(|&k| grad[k]).collect();
            }
            for &i in &uid_flags {
                candidates.insert(i, Trigger::Uid);
            }
            uid_flags_all.push(uid_flags);
            for &i in &grad {
                candidates.insert(i, Trigger::Gradient);
            }
            rec.candidates = candidates.len();
            rec.splits = candidates
                .iter()
                .filter(|&(i, _)| cloud.gaussians[i].scale.max() > densify_params.mode_threshold)
                .count();
            rec.clones = rec.candidates - rec.splits;
            let grown = st.run("densify", || {
                densify(&cloud, &candidates, &factors, &densify_params, iteration_seed(cfg.seed, it))
            })?;
            let pruned = st.run("prune", || prune_transparent(&grown, cfg.densify.min_opacity))?;
            rec.pruned = grown.len() - pruned.len();
            cloud = pruned;
        }
        rec.cloud_size = cloud.len();
        posed = st.run("articulate", || Ok(articulate(&cloud, &transforms)?.gaussians))?;
        image = st.run("render", || Ok(render(&posed, &scene.camera)))?;
        let report = st.run("metrics", || {
            let mut parts = image_parts(&image.quantized(), &reference_q, s3im.params(), s3im.seed)?;
            parts.joint_nll = joint_nll(&refined, &scene.pose)?;
            total_loss(parts, cfg.loss)
        })?;
        st.run("write", || {
            let stem = format!("iter_{it}");
            write_image_set(&image, out_dir.join(format!("{stem}.ppm")))?;
            write_gaussians(&cloud.gaussians, out_dir.join(format!("{stem}_cloud.ply")))?;
            let path = out_dir.join(format!("{stem}_metrics.txt"));
            std::fs::write(&path, format_metrics(&report.table())).map_err(|e| Error::io(&path, e))
        })?;
        rec.metrics = report.table().into_iter().map(|(k, v)| (k.to_string(), format_sig9(v))).collect();
        records.push(rec);
        reports.push(report);
    }

    let first = reports[0].parts.color;
    let last = reports[reports.len() - 1].parts.color;
    let manifest = RunManifest {
        config: cfg.clone(),
        scene: scene.name.clone(),
        joints: tree.joint_count(),
        reference_size: scene.reference.len(),
        iterations: records,
        summary: RunSummary {
            color_loss_initial: format_sig9(first),
            color_loss_final: format_sig9(last),
            relative_reduction: format_sig9(if first > 0.0 { 1.0 - last / first } else { 0.0 }),
        },
        timings_file: TIMINGS_FILE.to_string(),
    };
    let path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&path, manifest.to_json()).map_err(|e| Error::io(&path, e))?;
    let path = out_dir.join(TIMINGS_FILE);
    let timings = serde_json::to_string_pretty(&st.timings).expect("timings serialize");
    std::fs::write(&path, timings).map_err(|e| Error::io(&path, e))?;
    Ok(RunOutput {
        manifest,
        timings: st.timings,
        cloud,
        reports,
        uid_flags: uid_flags_all,
        reference_image,
        final_image: image,
    })
}
