//! 3D Gaussian primitives and motion-guided density control.
//!
//! New Gaussians are placed by sampling a displacement from the source
//! Gaussian's covariance reshaped by a joint's normalized concentration
//! factor, and inherit a scale multiplied by that factor and a rotation
//! pre-multiplied by the joint's most probable rotation.

mod io;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kinematics::{dominant, lbs_skin, JointTransforms, MotionFactors, SkinWeights};
use crate::so3::{Mat3, RotationMatrix, Vec3};

pub use io::{cloud_from_table, cloud_to_table, read_gaussians, write_gaussians, QUATERNION_TOL};

pub const MIN_SCALE: f64 = 1e-8;
pub const DEFAULT_SPLIT_FACTOR: f64 = 1.6;
pub const DEFAULT_MODE_THRESHOLD: f64 = 0.01;
pub const DEFAULT_MIN_OPACITY: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub position: Vec3,
    pub rotation: RotationMatrix,
    /// Diagonal of the scale matrix, in meters.
    pub scale: Vec3,
    pub opacity: f64,
    pub color: [f64; 3],
}

impl Gaussian3D {
    pub fn new(position: Vec3, rotation: RotationMatrix, scale: Vec3, opacity: f64, color: [f64; 3]) -> Result<Self> {
        let g = Self { position, rotation, scale, opacity, color };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("gaussian position"));
        }
        if let Some(s) = self.scale.iter().find(|s| !(**s > MIN_SCALE) || !s.is_finite()) {
            return Err(Error::DegenerateScale(*s));
        }
        if !(self.opacity > 0.0 && self.opacity <= 1.0) {
            return Err(Error::InvalidGaussian(format!("opacity {} outside (0, 1]", self.opacity)));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidGaussian(format!("color {:?} outside [0, 1]", self.color)));
        }
        Ok(())
    }

    /// `Σ = R S Sᵀ Rᵀ`.
    pub fn covariance(&self) -> Mat3 {
        let rs = self.rotation.matrix() * Mat3::from_diagonal(&self.scale);
        rs * rs.transpose()
    }

    /// `Σ⁻¹ = R S⁻¹ S⁻¹ Rᵀ` and `det Σ = (s1 s2 s3)²`, without a general inverse.
    pub fn covariance_inverse_det(&self) -> Result<(Mat3, f64)> {
        if let Some(s) = self.scale.iter().find(|s| !(**s > MIN_SCALE)) {
            return Err(Error::DegenerateScale(*s));
        }
        let inv_s = self.scale.map(|s| 1.0 / s);
        let r_inv_s = self.rotation.matrix() * Mat3::from_diagonal(&inv_s);
        let det = (self.scale.x * self.scale.y * self.scale.z).powi(2);
        Ok((r_inv_s * r_inv_s.transpose(), det))
    }

    /// Covariance of the motion-adjusted sampler,
    /// `R diag(|f| ⊙ s)² Rᵀ`.
    pub fn adjusted_covariance(&self, factor: [f64; 3]) -> Mat3 {
        let axes = adjusted_axes(&self.scale, factor);
        let rs = self.rotation.matrix() * Mat3::from_diagonal(&axes);
        rs * rs.transpose()
    }
}

fn adjusted_axes(scale: &Vec3, factor: [f64; 3]) -> Vec3 {
    Vec3::new(factor[0].abs() * scale.x, factor[1].abs() * scale.y, factor[2].abs() * scale.z)
}

/// Gaussians plus per-Gaussian joint bindings (skin-weight rows).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian3D>,
    pub bindings: SkinWeights,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian3D>, bindings: SkinWeights) -> Result<Self> {
        if gaussians.len() != bindings.len() {
            return Err(Error::LengthMismatch { what: "binding rows", expected: gaussians.len(), got: bindings.len() });
        }
        if gaussians.is_empty() {
            return Err(Error::InvalidGaussian("empty cloud".into()));
        }
        for g in &gaussians {
            g.validate()?;
        }
        Ok(Self { gaussians, bindings })
    }

    /// All Gaussians bound rigidly to joint 0.
    pub fn unbound(gaussians: Vec<Gaussian3D>) -> Result<Self> {
        let n = gaussians.len();
        Self::new(gaussians, SkinWeights::rigid(n, 0))
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.gaussians.iter().map(|g| g.position).collect()
    }
}

/// Why a Gaussian was selected for densification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Trigger {
    Gradient,
    Uid,
}

/// Gaussian indices selected for densification, each with its trigger.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensifyCandidates {
    entries: BTreeMap<usize, Trigger>,
}

impl DensifyCandidates {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rejects duplicates.
    pub fn from_entries(entries: impl IntoIterator<Item = (usize, Trigger)>) -> Result<Self> {
        let mut c = Self::new();
        for (i, t) in entries {
            if c.entries.insert(i, t).is_some() {
                return Err(Error::InvalidCandidates(format!("index {i} listed twice")));
            }
        }
        Ok(c)
    }

    /// Adds `index` unless already present; returns whether it was added.
    pub fn insert(&mut self, index: usize, trigger: Trigger) -> bool {
        if self.entries.contains_key(&index) {
            return false;
        }
        self.entries.insert(index, trigger);
        true
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Trigger)> + '_ {
        self.entries.iter().map(|(&i, &t)| (i, t))
    }

    pub fn contains(&self, index: usize) -> bool {
        self.entries.contains_key(&index)
    }

    pub fn count(&self, trigger: Trigger) -> usize {
        self.entries.values().filter(|&&t| t == trigger).count()
    }

    fn validate(&self, len: usize) -> Result<()> {
        match self.entries.keys().next_back() {
            Some(&i) if i >= len => {
                Err(Error::InvalidCandidates(format!("index {i} out of range for {len} gaussians")))
            }
            _ => Ok(()),
        }
    }
}

/// Independent stream per (seed, stream) pair.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn sample_displacement(g: &Gaussian3D, factor: [f64; 3], rng: &mut ChaCha8Rng) -> Vec3 {
    let axes = adjusted_axes(&g.scale, factor);
    let z = Vec3::from_fn(|_, _| StandardNormal.sample(rng));
    g.rotation.rotate(&axes.component_mul(&z))
}

/// Displacement drawn from `N(0, R diag(|f| ⊙ s)² Rᵀ)`.
pub fn density_perceptual_sample(g: &Gaussian3D, factor: [f64; 3], seed: u64) -> Vec3 {
    sample_displacement(g, factor, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn motion_child(g: &Gaussian3D, factor: [f64; 3], mode: &RotationMatrix, offset: Vec3, divisor: f64) -> Gaussian3D {
    let scale = adjusted_axes(&g.scale, factor).map(|s| (s / divisor).max(2.0 * MIN_SCALE));
    Gaussian3D {
        position: g.position + offset,
        rotation: mode * &g.rotation,
        scale,
        opacity: g.opacity,
        color: g.color,
    }
}

fn clone_from_rng(g: &Gaussian3D, factor: [f64; 3], mode: &RotationMatrix, rng: &mut ChaCha8Rng) -> Gaussian3D {
    let dx = sample_displacement(g, factor, rng);
    motion_child(g, factor, mode, dx, 1.0)
}

fn split_from_rng(
    g: &Gaussian3D,
    factor: [f64; 3],
    mode: &RotationMatrix,
    split_factor: f64,
    rng: &mut ChaCha8Rng,
) -> (Gaussian3D, Gaussian3D) {
    let a = sample_displacement(g, factor, rng);
    let b = sample_displacement(g, factor, rng);
    (motion_child(g, factor, mode, a, split_factor), motion_child(g, factor, mode, b, split_factor))
}

/// Clone at a sampled offset with scale `|f| ⊙ s` and rotation `R_mode R_g`.
pub fn clone_with_motion(g: &Gaussian3D, factor: [f64; 3], mode: &RotationMatrix, seed: u64) -> Gaussian3D {
    clone_from_rng(g, factor, mode, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Two children at independently sampled offsets, scales divided by
/// `split_factor` before the motion adjustment.
pub fn split_with_motion(
    g: &Gaussian3D,
    factor: [f64; 3],
    mode: &RotationMatrix,
    split_factor: f64,
    seed: u64,
) -> (Gaussian3D, Gaussian3D) {
    split_from_rng(g, factor, mode, split_factor, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensifyParams {
    /// Gaussians whose largest scale exceeds this are split, the rest cloned.
    pub mode_threshold: f64,
    pub split_factor: f64,
}

impl Default for DensifyParams {
    fn default() -> Self {
        Self { mode_threshold: DEFAULT_MODE_THRESHOLD, split_factor: DEFAULT_SPLIT_FACTOR }
    }
}

/// Clones or splits every candidate using its dominant joint's motion factors.
///
/// Untouched Gaussians keep their order; split parents are removed; new
/// Gaussians are appended in candidate-index order with the parent's binding.
/// Each candidate draws from its own random stream, so the result depends only
/// on the inputs and `seed`.
pub fn densify(
    cloud: &GaussianCloud,
    candidates: &DensifyCandidates,
    factors: &MotionFactors,
    params: &DensifyParams,
    seed: u64,
) -> Result<GaussianCloud> {
    candidates.validate(cloud.len())?;
    if !(params.split_factor > 0.0) || !(params.mode_threshold >= 0.0) {
        return Err(Error::InvalidParameter(format!("densify parameters {params:?}")));
    }
    let mut gaussians = Vec::with_capacity(cloud.len() + candidates.len());
    let mut bindings = Vec::with_capacity(cloud.len() + candidates.len());
    let mut born = Vec::new();
    for (i, g) in cloud.gaussians.iter().enumerate() {
        let row = cloud.bindings.row(i);
        let joint = dominant(row);
        if joint >= factors.len() {
            return Err(Error::LengthMismatch { what: "motion factors", expected: joint + 1, got: factors.len() });
        }
        let split = candidates.contains(i) && g.scale.max() > params.mode_threshold;
        if !split {
            gaussians.push(*g);
            bindings.push(row.to_vec());
        }
        if !candidates.contains(i) {
            continue;
        }
        let factor = factors.normalized_factor(joint);
        let mode = factors.modes[joint];
        let mut rng = stream_rng(seed, i as u64);
        if split {
            let (a, b) = split_from_rng(g, factor, &mode, params.split_factor, &mut rng);
            born.push((a, row.to_vec()));
            born.push((b, row.to_vec()));
        } else {
            born.push((clone_from_rng(g, factor, &mode, &mut rng), row.to_vec()));
        }
    }
    for (g, row) in born {
        gaussians.push(g);
        bindings.push(row);
    }
    GaussianCloud::new(gaussians, SkinWeights::new(bindings)?)
}

/// Drops Gaussians with opacity below `min_opacity`.
pub fn prune_transparent(cloud: &GaussianCloud, min_opacity: f64) -> Result<GaussianCloud> {
    let keep: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.gaussians[i].opacity >= min_opacity).collect();
    GaussianCloud::new(keep.iter().map(|&i| cloud.gaussians[i]).collect(), cloud.bindings.select(keep.iter().copied()))
}

/// Poses a cloud: positions by linear blend skinning of the bindings, each
/// orientation pre-multiplied by its dominant joint's rotation. Scales are kept.
pub fn articulate(cloud: &GaussianCloud, transforms: &JointTransforms) -> Result<GaussianCloud> {
    let positions = lbs_skin(&cloud.positions(), &cloud.bindings, transforms)?;
    let gaussians = cloud
        .gaussians
        .iter()
        .zip(positions)
        .enumerate()
        .map(|(i, (g, p))| {
            let joint = cloud.bindings.dominant_joint(i);
            Gaussian3D { position: p, rotation: transforms.rotations[joint] * g.rotation, ..*g }
        })
        .collect();
    Ok(GaussianCloud { gaussians, bindings: cloud.bindings.clone() })
}
