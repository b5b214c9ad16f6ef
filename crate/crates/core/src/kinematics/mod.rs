//! Kinematic tree, forward kinematics, linear blend skinning and the
//! parent-conditioned refinement of per-joint Fisher parameters.

mod rig;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fisher::FisherParams;
use crate::so3::{exp_so3, log_so3, AxisAngle, RotationMatrix, Vec3};

pub use rig::{format_rig, load_rig, parse_rig, write_rig, Rig};

pub const DEFAULT_GAMMA: f64 = 0.3;
pub const MAX_INFLUENCES: usize = 4;
const WEIGHT_SUM_TOL: f64 = 1e-6;

/// Joint hierarchy in topological order (`parent[i] < i`); joint 0 is a root.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    parents: Vec<Option<usize>>,
    rest_joints: Vec<Vec3>,
}

impl KinematicTree {
    pub fn new(parents: Vec<Option<usize>>, rest_joints: Vec<Vec3>) -> Result<Self> {
        if parents.is_empty() {
            return Err(Error::InvalidTree("no joints".into()));
        }
        if parents.len() != rest_joints.len() {
            return Err(Error::LengthMismatch {
                what: "rest joint positions",
                expected: parents.len(),
                got: rest_joints.len(),
            });
        }
        if parents[0].is_some() {
            return Err(Error::InvalidTree("joint 0 must be a root".into()));
        }
        for (i, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= i {
                    return Err(Error::InvalidTree(format!("joint {i} has parent {p}; parents must precede children")));
                }
            }
        }
        if rest_joints.iter().any(|j| !j.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("rest joint position"));
        }
        Ok(Self { parents, rest_joints })
    }

    pub fn joint_count(&self) -> usize {
        self.parents.len()
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn rest_joints(&self) -> &[Vec3] {
        &self.rest_joints
    }
}

/// Per-joint rotation relative to the parent, about the joint's rest position.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose(pub Vec<RotationMatrix>);

impl Pose {
    pub fn identity(joints: usize) -> Self {
        Self(vec![RotationMatrix::identity(); joints])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sparse per-vertex joint weights: nonnegative, at most four per row,
/// each row summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct SkinWeights {
    rows: Vec<Vec<(usize, f64)>>,
}

impl SkinWeights {
    pub fn new(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        for (row, entries) in rows.iter().enumerate() {
            if let Some(reason) = row_problem(entries) {
                return Err(Error::InvalidWeights { row, reason });
            }
        }
        Ok(Self { rows })
    }

    /// Every vertex bound entirely to `joint`.
    pub fn rigid(vertices: usize, joint: usize) -> Self {
        Self { rows: vec![vec![(joint, 1.0)]; vertices] }
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn max_joint(&self) -> Option<usize> {
        self.rows.iter().flatten().map(|e| e.0).max()
    }

    /// Highest-weight joint of a row; ties go to the lowest joint index.
    pub fn dominant_joint(&self, i: usize) -> usize {
        dominant(&self.rows[i])
    }

    pub fn select(&self, indices: impl IntoIterator<Item = usize>) -> Self {
        Self { rows: indices.into_iter().map(|i| self.rows[i].clone()).collect() }
    }

    pub fn push_row(&mut self, row: Vec<(usize, f64)>) {
        self.rows.push(row);
    }
}

pub(crate) fn dominant(row: &[(usize, f64)]) -> usize {
    let mut best: Option<(usize, f64)> = None;
    for &(j, w) in row {
        best = match best {
            Some((bj, bw)) if bw > w || (bw == w && bj < j) => Some((bj, bw)),
            _ => Some((j, w)),
        };
    }
    best.map_or(0, |b| b.0)
}

fn row_problem(entries: &[(usize, f64)]) -> Option<String> {
    if entries.is_empty() {
        return Some("no influences".into());
    }
    if entries.len() > MAX_INFLUENCES {
        return Some(format!("{} influences (at most {MAX_INFLUENCES})", entries.len()));
    }
    if let Some(&(j, w)) = entries.iter().find(|e| !(e.1 >= 0.0) || !e.1.is_finite()) {
        return Some(format!("weight {w} on joint {j} is not a finite nonnegative number"));
    }
    let sum: f64 = entries.iter().map(|e| e.1).sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Some(format!("weights sum to {sum}"));
    }
    for (a, &(ja, _)) in entries.iter().enumerate() {
        if entries[..a].iter().any(|e| e.0 == ja) {
            return Some(format!("joint {ja} listed twice"));
        }
    }
    None
}

/// World transforms `x ↦ G0 x + G1` per joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTransforms {
    pub rotations: Vec<RotationMatrix>,
    pub translations: Vec<Vec3>,
}

impl JointTransforms {
    pub fn identity(joints: usize) -> Self {
        Self { rotations: vec![RotationMatrix::identity(); joints], translations: vec![Vec3::zeros(); joints] }
    }

    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn apply(&self, joint: usize, p: &Vec3) -> Vec3 {
        self.rotations[joint].rotate(p) + self.translations[joint]
    }

    /// Per-joint inverse transforms.
    pub fn inverse(&self) -> Self {
        let rotations: Vec<_> = self.rotations.iter().map(RotationMatrix::inverse).collect();
        let translations = rotations.iter().zip(&self.translations).map(|(r, t)| -r.rotate(t)).collect();
        Self { rotations, translations }
    }
}

/// Rest-pose-relative forward kinematics: each joint rotates about its rest
/// position, composed onto its parent's world transform. The identity pose
/// maps every joint to itself.
pub fn forward_kinematics(tree: &KinematicTree, pose: &Pose) -> Result<JointTransforms> {
    let n = tree.joint_count();
    if pose.len() != n {
        return Err(Error::LengthMismatch { what: "pose", expected: n, got: pose.len() });
    }
    let mut out = JointTransforms::identity(n);
    for k in 0..n {
        let r = pose.0[k];
        let pivot = tree.rest_joints[k];
        let local_t = pivot - r.rotate(&pivot);
        let (rot, trans) = match tree.parents[k] {
            None => (r, local_t),
            Some(p) => (out.rotations[p] * r, out.rotations[p].rotate(&local_t) + out.translations[p]),
        };
        out.rotations[k] = rot;
        out.translations[k] = trans;
    }
    Ok(out)
}

/// Linear blend skinning `p'_i = Σ_k w_ki (G0_k p_i + G1_k)`.
pub fn lbs_skin(rest: &[Vec3], weights: &SkinWeights, transforms: &JointTransforms) -> Result<Vec<Vec3>> {
    if weights.len() != rest.len() {
        return Err(Error::LengthMismatch { what: "skin weight rows", expected: rest.len(), got: weights.len() });
    }
    if let Some(j) = weights.max_joint() {
        if j >= transforms.len() {
            return Err(Error::LengthMismatch { what: "joint transforms", expected: j + 1, got: transforms.len() });
        }
    }
    Ok(rest
        .par_iter()
        .zip(weights.rows.par_iter())
        .map(|(p, row)| row.iter().fold(Vec3::zeros(), |acc, &(k, w)| acc + transforms.apply(k, p) * w))
        .collect())
}

/// Refines a child's Fisher parameters given its already-refined parent.
pub trait ParentRefiner {
    fn refine(&self, child: &FisherParams, parent: &FisherParams) -> FisherParams;
}

/// Pre-multiplies the child by the `gamma`-geodesic toward the parent's mode:
/// `θ'_i = exp(γ log R_mode(θ'_parent)) θ_i`.
#[derive(Debug, Clone, Copy)]
pub struct GeodesicRefiner {
    pub gamma: f64,
}

impl Default for GeodesicRefiner {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA }
    }
}

impl ParentRefiner for GeodesicRefiner {
    fn refine(&self, child: &FisherParams, parent: &FisherParams) -> FisherParams {
        if self.gamma == 0.0 {
            return *child;
        }
        let a = log_so3(&parent.mode());
        let step = exp_so3(&AxisAngle::from_rotation_vector(&(a.rotation_vector() * self.gamma)));
        FisherParams::new(step.matrix() * child.matrix()).expect("product of finite matrices is finite")
    }
}

/// Per-joint proper singular values and modes of the refined parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFactors {
    pub singular_values: Vec<[f64; 3]>,
    pub modes: Vec<RotationMatrix>,
}

impl MotionFactors {
    pub fn from_params(params: &[FisherParams]) -> Self {
        Self {
            singular_values: params.iter().map(FisherParams::singular_values).collect(),
            modes: params.iter().map(FisherParams::mode).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Unit-free scale factor `|S| / max|S|` of a joint; `(1, 1, 1)` when S = 0.
    pub fn normalized_factor(&self, joint: usize) -> [f64; 3] {
        normalize_factor(self.singular_values[joint])
    }
}

pub fn normalize_factor(s: [f64; 3]) -> [f64; 3] {
    let m = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 || !m.is_finite() {
        [1.0; 3]
    } else {
        s.map(|v| v.abs() / m)
    }
}

/// Refines parameters root-to-leaf with the default geodesic refiner.
pub fn jntm_propagate(
    tree: &KinematicTree,
    params: &[FisherParams],
    gamma: f64,
) -> Result<(Vec<FisherParams>, MotionFactors)> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} outside [0, 1]")));
    }
    jntm_propagate_with(tree, params, &GeodesicRefiner { gamma })
}

pub fn jntm_propagate_with<R: ParentRefiner + ?Sized>(
    tree: &KinematicTree,
    params: &[FisherParams],
    refiner: &R,
) -> Result<(Vec<FisherParams>, MotionFactors)> {
    let n = tree.joint_count();
    if params.len() != n {
        return Err(Error::LengthMismatch { what: "fisher parameters", expected: n, got: params.len() });
    }
    let mut refined: Vec<FisherParams> = Vec::with_capacity(n);
    for (i, p) in params.iter().enumerate() {
        let r = match tree.parents[i] {
            None => *p,
            Some(parent) => refiner.refine(p, &refined[parent]),
        };
        refined.push(r);
    }
    let factors = MotionFactors::from_params(&refined);
    Ok((refined, factors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::Mat3;
    use std::f64::consts::FRAC_PI_2;

    fn chain2() -> KinematicTree {
        KinematicTree::new(vec![None, Some(0)], vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]).unwrap()
    }

    #[test]
    fn tree_validation() {
        assert!(KinematicTree::new(vec![], vec![]).is_err());
        assert!(KinematicTree::new(vec![Some(0)], vec![Vec3::zeros()]).is_err());
        assert!(KinematicTree::new(vec![None, Some(1)], vec![Vec3::zeros(); 2]).is_err());
        assert!(KinematicTree::new(vec![None, None, Some(1)], vec![Vec3::zeros(); 3]).is_ok());
        assert!(KinematicTree::new(vec![None, Some(0)], vec![Vec3::zeros()]).is_err());
    }

    #[test]
    fn weight_validation() {
        assert!(SkinWeights::new(vec![vec![(0, 0.5), (1, 0.5)]]).is_ok());
        let e = SkinWeights::new(vec![vec![(0, 1.0)], vec![(0, 0.5), (1, 0.4)]]).unwrap_err();
        assert!(matches!(e, Error::InvalidWeights { row: 1, .. }));
        assert!(SkinWeights::new(vec![vec![(0, 1.2), (1, -0.2)]]).is_err());
        assert!(SkinWeights::new(vec![vec![(0, 0.2); 5]]).is_err());
        assert!(SkinWeights::new(vec![vec![(1, 0.5), (1, 0.5)]]).is_err());
    }

    #[test]
    fn dominant_joint_ties_go_low() {
        let w = SkinWeights::new(vec![vec![(3, 0.5), (1, 0.5)], vec![(2, 0.3), (0, 0.7)]]).unwrap();
        assert_eq!(w.dominant_joint(0), 1);
        assert_eq!(w.dominant_joint(1), 0);
    }

    #[test]
    fn rest_pose_is_fixed() {
        let t = forward_kinematics(&chain2(), &Pose::identity(2)).unwrap();
        assert_eq!(t, JointTransforms::identity(2));
    }

    #[test]
    fn two_joint_chain() {
        let pose = Pose(vec![RotationMatrix::identity(), RotationMatrix::about_z(FRAC_PI_2)]);
        let t = forward_kinematics(&chain2(), &pose).unwrap();
        assert!((t.rotations[1].matrix() - RotationMatrix::about_z(FRAC_PI_2).matrix()).abs().max() < 1e-15);
        // the pivot stays put, a point one unit further along x swings to +y
        assert!((t.apply(1, &Vec3::new(1.0, 0.0, 0.0)) - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        assert!((t.apply(1, &Vec3::new(2.0, 0.0, 0.0)) - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
        assert!(forward_kinematics(&chain2(), &Pose::identity(3)).is_err());
    }

    #[test]
    fn skinning_examples() {
        let rest = vec![Vec3::new(0.3, -1.0, 2.0), Vec3::new(5.0, 0.0, 0.0)];
        let id = JointTransforms::identity(2);
        let w = SkinWeights::rigid(2, 0);
        assert_eq!(lbs_skin(&rest, &w, &id).unwrap(), rest);

        let d = Vec3::new(0.1, 0.2, -0.3);
        let mut shift = JointTransforms::identity(1);
        shift.translations[0] = d;
        let out = lbs_skin(&rest, &w, &shift).unwrap();
        for (a, b) in out.iter().zip(&rest) {
            assert!((a - b - d).norm() < 1e-15);
        }

        let mut t = JointTransforms::identity(2);
        t.translations[1] = Vec3::new(2.0, 0.0, 0.0);
        let half = SkinWeights::new(vec![vec![(0, 0.5), (1, 0.5)]]).unwrap();
        let out = lbs_skin(&[Vec3::zeros()], &half, &t).unwrap();
        assert_eq!(out[0], Vec3::new(1.0, 0.0, 0.0));

        assert!(lbs_skin(&rest, &half, &t).is_err());
        let far = SkinWeights::new(vec![vec![(5, 1.0)]]).unwrap();
        assert!(lbs_skin(&[Vec3::zeros()], &far, &t).is_err());
    }

    #[test]
    fn jntm_gamma_zero_is_identity() {
        let tree = chain2();
        let params = vec![
            FisherParams::new(RotationMatrix::about_z(FRAC_PI_2).into_inner() * 10.0).unwrap(),
            FisherParams::new(Mat3::from_diagonal(&Vec3::new(25.0, 5.0, 1.0))).unwrap(),
        ];
        let (refined, factors) = jntm_propagate(&tree, &params, 0.0).unwrap();
        assert_eq!(refined, params);
        assert_eq!(factors.modes[1], params[1].mode());
    }

    #[test]
    fn jntm_full_step() {
        let tree = chain2();
        let rz = RotationMatrix::about_z(FRAC_PI_2);
        let child = Mat3::from_diagonal(&Vec3::new(25.0, 5.0, 1.0));
        let params = vec![FisherParams::new(rz.into_inner() * 10.0).unwrap(), FisherParams::new(child).unwrap()];
        let (refined, factors) = jntm_propagate(&tree, &params, 1.0).unwrap();
        assert!((refined[1].matrix() - rz.matrix() * child).abs().max() < 1e-12);
        assert!((factors.modes[1].matrix() - rz.matrix()).abs().max() < 1e-12);
        for (a, b) in factors.singular_values[1].iter().zip([25.0, 5.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(jntm_propagate(&tree, &params, 1.5).is_err());
        assert!(jntm_propagate(&tree, &params[..1], 0.5).is_err());
    }

    #[test]
    fn normalized_factors() {
        assert_eq!(normalize_factor([20.0, 10.0, -5.0]), [1.0, 0.5, 0.25]);
        assert_eq!(normalize_factor([0.0; 3]), [1.0; 3]);
    }

    #[test]
    fn inverse_transforms() {
        let pose = Pose(vec![RotationMatrix::about_x(0.3), RotationMatrix::about_z(1.1)]);
        let t = forward_kinematics(&chain2(), &pose).unwrap();
        let inv = t.inverse();
        let p = Vec3::new(0.4, -0.2, 0.9);
        for k in 0..2 {
            assert!((inv.apply(k, &t.apply(k, &p)) - p).norm() < 1e-14);
        }
    }
}
