use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cloud::{DEFAULT_MIN_OPACITY, DEFAULT_MODE_THRESHOLD, DEFAULT_SPLIT_FACTOR};
use crate::error::{Error, Result};
use crate::kinematics::DEFAULT_GAMMA;
use crate::metrics::{LossWeights, S3imParams};
use crate::render::CameraSpec;
use crate::uid::{DEFAULT_K, DEFAULT_THRESHOLD_DEG};

/// Every key accepted in a run configuration, for `--help`.
pub const CONFIG_HELP: &str = "\
Configuration keys (TOML; unknown keys are rejected):
  seed = <u64>                 scene generation and densify RNG seed [0]
  iterations = <n>             densify iterations; 0 scores the initial cloud [2]
  output = <dir>               artifact directory, relative to the config file [out]
  [scene]
    name = <arm2|chain4|humanoid24|creased_sheet>   synthetic scene, or
    dir = <dir>                directory written by `scene gen`
    rig, initial, pose, reference, camera = <path>  per-file overrides of dir
  [camera]                     optional; overrides the scene camera
    width, height, fx [, fy, cx, cy]
    rotation = [[..],[..],[..]], translation = [..]   or   eye, target [, up]
  [jntm]
    gamma = <0..1>             parent refinement strength [0.3]
    kappa = <f64>              concentration of the per-joint Fisher parameters [20]
  [uid]
    enabled = <bool>           [true]
    k = <n>                    neighborhood size [16]
    threshold_deg = <deg>      normal-angle threshold [30]
  [densify]
    mode_threshold = <m>       split above this scale, clone below [0.01]
    split_factor = <f64>       scale divisor for split children [1.6]
    grad_threshold = <f64>     mean alpha deficit that marks a Gaussian for densification [0.05]
    grad_radius = <px>         residual window half-width [2]
    min_opacity = <f64>        pruning threshold [0.005]
  [loss]
    lambda_image, lambda_percep, lambda_joint [1, 1, 1]
    alpha_mask, alpha_ssim, alpha_s3im, alpha_lpips, alpha_joint [0.5, 0.2, 0.5, 0.3, 0.06]
  [s3im]
    patches, kernel, stride [10, 4, 4]; seed [0]
";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    pub scene: SceneSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraSpec>,
    #[serde(default)]
    pub jntm: JntmConfig,
    #[serde(default)]
    pub uid: UidConfig,
    #[serde(default)]
    pub densify: DensifyConfig,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub s3im: S3imConfig,
}

fn default_iterations() -> usize {
    2
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rig: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JntmConfig {
    pub gamma: f64,
    pub kappa: f64,
}

impl Default for JntmConfig {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA, kappa: 20.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UidConfig {
    pub enabled: bool,
    pub k: usize,
    pub threshold_deg: f64,
}

impl Default for UidConfig {
    fn default() -> Self {
        Self { enabled: true, k: DEFAULT_K, threshold_deg: DEFAULT_THRESHOLD_DEG }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensifyConfig {
    pub mode_threshold: f64,
    pub split_factor: f64,
    pub grad_threshold: f64,
    pub grad_radius: usize,
    pub min_opacity: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            mode_threshold: DEFAULT_MODE_THRESHOLD,
            split_factor: DEFAULT_SPLIT_FACTOR,
            grad_threshold: 0.05,
            grad_radius: 2,
            min_opacity: DEFAULT_MIN_OPACITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct S3imConfig {
    pub patches: usize,
    pub kernel: usize,
    pub stride: usize,
    pub seed: u64,
}

impl Default for S3imConfig {
    fn default() -> Self {
        let p = S3imParams::default();
        Self { patches: p.patches, kernel: p.kernel, stride: p.stride, seed: 0 }
    }
}

impl S3imConfig {
    pub fn params(&self) -> S3imParams {
        S3imParams { patches: self.patches, kernel: self.kernel, stride: self.stride }
    }
}

impl ExperimentConfig {
    /// Config for a named synthetic scene with every other key at its default.
    pub fn for_scene(name: &str, output: impl Into<PathBuf>) -> Self {
        Self {
            seed: 0,
            iterations: default_iterations(),
            output: output.into(),
            scene: SceneSource { name: Some(name.to_string()), ..Default::default() },
            camera: None,
            jntm: JntmConfig::default(),
            uid: UidConfig::default(),
            densify: DensifyConfig::default(),
            loss: LossWeights::default(),
            s3im: S3imConfig::default(),
        }
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config and resolves its relative paths against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        let s = &mut self.scene;
        for p in
            [&mut s.dir, &mut s.rig, &mut s.initial, &mut s.pose, &mut s.reference, &mut s.camera].into_iter().flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let s = &self.scene;
        let has_files =
            s.dir.is_some() || s.rig.is_some() || s.initial.is_some() || s.pose.is_some() || s.reference.is_some();
        match (&s.name, has_files) {
            (Some(_), true) => return bad("[scene] takes either `name` or file paths, not both".into()),
            (None, false) => return bad("[scene] needs `name` or `dir`".into()),
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.jntm.gamma) {
            return bad(format!("jntm.gamma = {} outside [0, 1]", self.jntm.gamma));
        }
        if !(self.jntm.kappa >= 0.0 && self.jntm.kappa.is_finite()) {
            return bad(format!("jntm.kappa = {} must be finite and nonnegative", self.jntm.kappa));
        }
        if !(self.uid.threshold_deg > 0.0 && self.uid.threshold_deg <= 90.0) {
            return bad(format!("uid.threshold_deg = {} outside (0, 90]", self.uid.threshold_deg));
        }
        if self.uid.k < 2 {
            return bad(format!("uid.k = {} must be at least 2", self.uid.k));
        }
        let d = &self.densify;
        if !(d.mode_threshold >= 0.0 && d.split_factor > 0.0 && d.grad_threshold >= 0.0 && d.min_opacity >= 0.0) {
            return bad(format!("invalid [densify] values {d:?}"));
        }
        let s3 = &self.s3im;
        if s3.patches == 0 || s3.kernel == 0 || s3.stride == 0 {
            return bad(format!("[s3im] patches, kernel and stride must be positive (got {s3:?})"));
        }
        self.loss.validate()?;
        if let Some(c) = &self.camera {
            c.build()?;
        }
        Ok(())
    }
}
