//! Synthetic articulated scenes: capsule limbs sampled into surface
//! Gaussians, a sparse initial cloud bound to the rig, a target pose and the
//! posed dense reference.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{articulate, Gaussian3D, GaussianCloud};
use crate::cloud::{read_gaussians, write_gaussians, QUATERNION_TOL};
use crate::error::{Error, Result};
use crate::kinematics::{forward_kinematics, load_rig, write_rig, KinematicTree, Pose, Rig, SkinWeights};
use crate::render::{format_camera, load_camera, render, write_image_set, Camera, ImageRGBA};
use crate::so3::{Mat3, RotationMatrix, Vec3};
use crate::uid::fixtures::creased_sheet;

pub const SCENE_NAMES: [&str; 4] = ["arm2", "chain4", "humanoid24", "creased_sheet"];
const IMAGE_SIZE: (usize, usize) = (160, 120);
const FOCAL: f64 = 180.0;
const OPACITY: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub name: String,
    /// Rest-pose rig whose vertices are the initial cloud's centers.
    pub rig: Rig,
    pub initial: GaussianCloud,
    pub pose: Pose,
    /// Dense reference cloud, already posed.
    pub reference: Vec<Gaussian3D>,
    pub camera: Camera,
}

impl Scene {
    pub fn reference_image(&self) -> ImageRGBA {
        render(&self.reference, &self.camera)
    }

    /// Writes `rig.txt`, `initial.ply`, `pose.txt`, `reference.ply`,
    /// `camera.toml` and the `reference.ppm` image set into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_rig(&self.rig, dir.join("rig.txt"))?;
        write_gaussians(&self.initial.gaussians, dir.join("initial.ply"))?;
        write_text(&dir.join("pose.txt"), &format_pose(&self.pose))?;
        write_gaussians(&self.reference, dir.join("reference.ply"))?;
        write_text(&dir.join("camera.toml"), &format_camera(&self.camera))?;
        write_image_set(&self.reference_image(), dir.join("reference.ppm"))
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the files written by [`Scene::write`]. The initial cloud must sit on
/// the rig vertices, one Gaussian per vertex.
pub fn load_scene_files(
    name: &str,
    rig: &Path,
    initial: &Path,
    pose: &Path,
    reference: &Path,
    camera: &Path,
) -> Result<Scene> {
    let rig = load_rig(rig)?;
    let gaussians = read_gaussians(initial)?;
    if gaussians.len() != rig.rest_vertices.len() {
        return Err(Error::LengthMismatch {
            what: "initial Gaussians (one per rig vertex)",
            expected: rig.rest_vertices.len(),
            got: gaussians.len(),
        });
    }
    if let Some(i) = gaussians.iter().zip(&rig.rest_vertices).position(|(g, v)| (g.position - v).norm() > 1e-9) {
        return Err(Error::InvalidGaussian(format!("{}: Gaussian {i} is not at rig vertex {i}", initial.display())));
    }
    let pose = load_pose(pose)?;
    if pose.len() != rig.tree.joint_count() {
        return Err(Error::LengthMismatch { what: "pose joints", expected: rig.tree.joint_count(), got: pose.len() });
    }
    Ok(Scene {
        name: name.to_string(),
        initial: GaussianCloud::new(gaussians, rig.weights.clone())?,
        rig,
        pose,
        reference: read_gaussians(reference)?,
        camera: load_camera(camera)?,
    })
}

/// One line per joint: `index w x y z`.
pub fn format_pose(pose: &Pose) -> String {
    let mut s = String::from("# joint w x y z\n");
    for (i, r) in pose.0.iter().enumerate() {
        let q = r.to_quaternion();
        let _ = writeln!(s, "{i} {} {} {} {}", q[0], q[1], q[2], q[3]);
    }
    s
}

pub fn parse_pose(text: &str, origin: &str) -> Result<Pose> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::parse(origin, n + 1, format!("{t:?}: {e}"))))
            .collect::<Result<_>>()?;
        if f.len() != 5 || f[0] != out.len() as f64 {
            return Err(Error::parse(origin, n + 1, format!("expected `{} w x y z`", out.len())));
        }
        let q = [f[1], f[2], f[3], f[4]];
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > QUATERNION_TOL {
            return Err(Error::parse(origin, n + 1, format!("quaternion norm {norm}")));
        }
        out.push(RotationMatrix::from_quaternion(q));
    }
    Ok(Pose(out))
}

pub fn load_pose(path: impl AsRef<Path>) -> Result<Pose> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose(&text, &path.display().to_string())
}

/// Deterministic synthetic scene for `(name, seed)`.
pub fn scene_gen(name: &str, seed: u64) -> Result<Scene> {
    match name {
        "arm2" => Ok(capsule_scene(name, &arm2(), 2000, 4, seed)),
        "chain4" => Ok(capsule_scene(name, &chain4(), 2000, 4, seed)),
        "humanoid24" => Ok(capsule_scene(name, &humanoid24(), 6000, 4, seed)),
        "creased_sheet" => Ok(sheet_scene(seed)),
        _ => Err(Error::UnknownScene(format!("{name} (known: {})", SCENE_NAMES.join(", ")))),
    }
}

struct Bone {
    joint: usize,
    start: Vec3,
    end: Vec3,
    /// Joint sitting at `end`, if any.
    end_joint: Option<usize>,
    radius: f64,
}

struct Skeleton {
    parents: Vec<Option<usize>>,
    joints: Vec<Vec3>,
    bones: Vec<Bone>,
    pose: Vec<RotationMatrix>,
}

impl Skeleton {
    /// One bone per parent-child edge, plus explicit leaf tips.
    fn new(parents: Vec<Option<usize>>, joints: Vec<Vec3>, tips: &[(usize, Vec3)], pose: Vec<RotationMatrix>) -> Self {
        let mut bones = Vec::new();
        for (c, p) in parents.iter().enumerate() {
            if let Some(p) = *p {
                bones.push(bone(p, joints[p], joints[c], Some(c)));
            }
        }
        for &(j, tip) in tips {
            bones.push(bone(j, joints[j], tip, None));
        }
        Self { parents, joints, bones, pose }
    }
}

fn bone(joint: usize, start: Vec3, end: Vec3, end_joint: Option<usize>) -> Bone {
    let radius = (0.3 * (end - start).norm()).clamp(0.03, 0.08);
    Bone { joint, start, end, end_joint, radius }
}

fn arm2() -> Skeleton {
    let mut s = Skeleton::new(
        vec![None, Some(0)],
        vec![Vec3::zeros(), Vec3::new(0.3, 0.0, 0.0)],
        &[(1, Vec3::new(0.6, 0.0, 0.0))],
        vec![RotationMatrix::about_z(0.2) * RotationMatrix::about_y(-0.3), RotationMatrix::about_y(-0.9)],
    );
    for b in &mut s.bones {
        b.radius = 0.05;
    }
    s
}

fn chain4() -> Skeleton {
    let joints = (0..4).map(|i| Vec3::new(0.2 * i as f64, 0.0, 0.0)).collect();
    let mut s = Skeleton::new(
        vec![None, Some(0), Some(1), Some(2)],
        joints,
        &[(3, Vec3::new(0.8, 0.0, 0.0))],
        vec![
            RotationMatrix::about_y(-0.35),
            RotationMatrix::about_y(-0.35),
            RotationMatrix::about_x(0.3) * RotationMatrix::about_y(-0.35),
            RotationMatrix::about_y(-0.35),
        ],
    );
    for b in &mut s.bones {
        b.radius = 0.04;
    }
    s
}

/// 24 joints in the usual parametric-body order.
fn humanoid24() -> Skeleton {
    let parents = [-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21];
    let j = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
    let joints = vec![
        j(0.0, 0.0, 0.95),
        j(0.09, 0.0, 0.87),
        j(-0.09, 0.0, 0.87),
        j(0.0, 0.0, 1.05),
        j(0.1, 0.0, 0.5),
        j(-0.1, 0.0, 0.5),
        j(0.0, 0.0, 1.18),
        j(0.1, 0.0, 0.1),
        j(-0.1, 0.0, 0.1),
        j(0.0, 0.0, 1.25),
        j(0.1, -0.1, 0.03),
        j(-0.1, -0.1, 0.03),
        j(0.0, 0.0, 1.45),
        j(0.08, 0.0, 1.38),
        j(-0.08, 0.0, 1.38),
        j(0.0, 0.0, 1.55),
        j(0.18, 0.0, 1.4),
        j(-0.18, 0.0, 1.4),
        j(0.45, 0.0, 1.4),
        j(-0.45, 0.0, 1.4),
        j(0.7, 0.0, 1.4),
        j(-0.7, 0.0, 1.4),
        j(0.78, 0.0, 1.4),
        j(-0.78, 0.0, 1.4),
    ];
    let tips = [
        (10, j(0.1, -0.18, 0.03)),
        (11, j(-0.1, -0.18, 0.03)),
        (15, j(0.0, 0.0, 1.75)),
        (22, j(0.86, 0.0, 1.4)),
        (23, j(-0.86, 0.0, 1.4)),
    ];
    let mut pose = vec![RotationMatrix::identity(); 24];
    pose[1] = RotationMatrix::about_x(-0.3);
    pose[4] = RotationMatrix::about_x(0.5);
    pose[12] = RotationMatrix::about_x(0.2);
    pose[16] = RotationMatrix::about_y(0.8);
    pose[17] = RotationMatrix::about_y(-0.8);
    pose[18] = RotationMatrix::about_z(-0.6);
    pose[19] = RotationMatrix::about_z(0.6);
    let parents = parents.iter().map(|&p| usize::try_from(p).ok()).collect();
    Skeleton::new(parents, joints, &tips, pose)
}

fn palette(joint: usize) -> [f64; 3] {
    const P: [[f64; 3]; 6] =
        [[0.85, 0.3, 0.25], [0.25, 0.6, 0.85], [0.3, 0.75, 0.35], [0.9, 0.75, 0.2], [0.6, 0.35, 0.8], [0.2, 0.8, 0.75]];
    P[joint % P.len()]
}

struct Sample {
    position: Vec3,
    normal: Vec3,
    tangent: Vec3,
    weights: Vec<(usize, f64)>,
    joint: usize,
}

/// Capsule surface samples: staggered rings on each cylinder and
/// Fibonacci caps, with weights blended toward the parent near a bone's
/// start and toward the child near its end.
fn sample_skeleton(sk: &Skeleton, count: usize, rng: &mut ChaCha8Rng) -> (Vec<Sample>, f64) {
    let area: f64 =
        sk.bones.iter().map(|b| 2.0 * PI * b.radius * (b.end - b.start).norm() + 4.0 * PI * b.radius * b.radius).sum();
    let h = (area / count as f64).sqrt();
    let mut out = Vec::new();
    for b in &sk.bones {
        let axis = b.end - b.start;
        let len = axis.norm();
        let a = axis / len;
        let u = any_perpendicular(&a);
        let v = a.cross(&u);
        let blend = |t: f64| -> Vec<(usize, f64)> {
            let b_len = b.radius;
            let w_par = match sk.parents[b.joint] {
                Some(_) if t < b_len => 0.5 * (1.0 - t.max(0.0) / b_len),
                _ => 0.0,
            };
            let w_end = match b.end_joint {
                Some(_) if len - t < b_len => 0.5 * (1.0 - (len - t).max(0.0) / b_len),
                _ => 0.0,
            };
            let mut w = vec![(b.joint, 1.0 - w_par - w_end)];
            if w_par > 0.0 {
                w.push((sk.parents[b.joint].expect("checked"), w_par));
            }
            if w_end > 0.0 {
                w.push((b.end_joint.expect("checked"), w_end));
            }
            w
        };
        let rings = (len / h).ceil().max(1.0) as usize;
        let around = (2.0 * PI * b.radius / h).ceil().max(3.0) as usize;
        let phase: f64 = rng.random_range(0.0..2.0 * PI);
        for i in 0..rings {
            let t = (i as f64 + 0.5) * len / rings as f64;
            for k in 0..around {
                let phi = phase + 2.0 * PI * (k as f64 + 0.5 * (i % 2) as f64) / around as f64;
                let n = u * phi.cos() + v * phi.sin();
                out.push(Sample {
                    position: b.start + a * t + n * b.radius,
                    normal: n,
                    tangent: a,
                    weights: blend(t),
                    joint: b.joint,
                });
            }
        }
        let cap = (2.0 * PI * b.radius * b.radius / (h * h)).round().max(1.0) as usize;
        for (center, dir, t) in [(b.start, -a, 0.0), (b.end, a, len)] {
            for i in 0..cap {
                // Fibonacci points on the hemisphere around `dir`
                let z = 1.0 - (i as f64 + 0.5) / cap as f64;
                let r = (1.0 - z * z).sqrt();
                let th = PI * (1.0 + 5f64.sqrt()) * i as f64 + phase;
                let n = dir * z + u * (r * th.cos()) + v * (r * th.sin());
                let tangent = any_perpendicular(&n);
                out.push(Sample {
                    position: center + n * b.radius,
                    normal: n,
                    tangent,
                    weights: blend(t),
                    joint: b.joint,
                });
            }
        }
    }
    (out, h)
}

fn any_perpendicular(n: &Vec3) -> Vec3 {
    let pick = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    (pick - n * n.dot(&pick)).normalize()
}

/// Flat surface Gaussian: local z along the normal.
fn surface_gaussian(p: Vec3, normal: Vec3, tangent: Vec3, h: f64, color: [f64; 3]) -> Gaussian3D {
    let n = normal.normalize();
    let t = (tangent - n * n.dot(&tangent)).normalize();
    let r = RotationMatrix::nearest(&Mat3::from_columns(&[t, n.cross(&t), n]));
    Gaussian3D::new(p, r, Vec3::new(0.7 * h, 0.7 * h, 0.25 * h), OPACITY, color).expect("valid surface Gaussian")
}

fn build_scene(
    name: &str,
    tree: KinematicTree,
    pose: Pose,
    dense: Vec<Gaussian3D>,
    dense_weights: SkinWeights,
    keep: Vec<usize>,
) -> Scene {
    let initial_g: Vec<Gaussian3D> = keep.iter().map(|&i| dense[i]).collect();
    let weights = dense_weights.select(keep.iter().copied());
    let rig = Rig {
        tree: tree.clone(),
        weights: weights.clone(),
        rest_vertices: initial_g.iter().map(|g| g.position).collect(),
    };
    let transforms = forward_kinematics(&tree, &pose).expect("pose matches tree");
    let reference =
        articulate(&GaussianCloud::new(dense, dense_weights).expect("bound"), &transforms).expect("bound").gaussians;
    let camera = frame_camera(&reference);
    Scene {
        name: name.to_string(),
        rig,
        initial: GaussianCloud::new(initial_g, weights).expect("bound"),
        pose,
        reference,
        camera,
    }
}

fn capsule_scene(name: &str, sk: &Skeleton, count: usize, stride: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (samples, h) = sample_skeleton(sk, count, &mut rng);
    let dense: Vec<Gaussian3D> =
        samples.iter().map(|s| surface_gaussian(s.position, s.normal, s.tangent, h, palette(s.joint))).collect();
    let weights =
        SkinWeights::new(samples.iter().map(|s| s.weights.clone()).collect()).expect("blend weights sum to one");
    let tree = KinematicTree::new(sk.parents.clone(), sk.joints.clone()).expect("generator keeps topological order");
    let keep = (0..dense.len()).step_by(stride).collect();
    build_scene(name, tree, Pose(sk.pose.clone()), dense, weights, keep)
}

/// Hinged sheet: joint 1 sits on the crease and carries the tilted half.
fn sheet_scene(seed: u64) -> Scene {
    let bend = 60f64.to_radians();
    let dense = creased_sheet(40, 0.01, bend, 0.05, seed);
    let coarse = creased_sheet(20, 0.02, bend, 0.05, seed.wrapping_add(1));
    let tilted = Vec3::new(-bend.sin(), 0.0, bend.cos());
    let gaussian = |p: &Vec3, t: f64, h: f64| {
        let n = if t <= 0.0 { Vec3::z() } else { tilted };
        let joint = usize::from(t > 0.0);
        surface_gaussian(*p, n, Vec3::y(), h, palette(joint))
    };
    let mut all: Vec<Gaussian3D> = Vec::new();
    let mut rows = Vec::new();
    for sheet in [&coarse, &dense] {
        for (p, &t) in sheet.points.positions().iter().zip(&sheet.offsets) {
            all.push(gaussian(p, t, 0.01));
            rows.push(vec![(usize::from(t > 0.0), 1.0)]);
        }
    }
    let n_coarse = coarse.points.len();
    let tree = KinematicTree::new(vec![None, Some(0)], vec![Vec3::zeros(), Vec3::zeros()]).expect("two-joint hinge");
    let pose = Pose(vec![RotationMatrix::about_x(0.2), RotationMatrix::about_y(-0.3)]);
    let weights = SkinWeights::new(rows).expect("rigid rows");
    // Reference uses only the dense sheet; the coarse one, with the dense
    // sheet's Gaussian size, seeds the cloud.
    let mut scene = build_scene("creased_sheet", tree, pose, all, weights, (0..n_coarse).collect());
    scene.reference.drain(..n_coarse);
    scene.camera = frame_camera(&scene.reference);
    scene
}

/// Look-at camera framing every Gaussian center, viewed from the front-left and above.
fn frame_camera(gs: &[Gaussian3D]) -> Camera {
    let (w, h) = IMAGE_SIZE;
    let mut lo = gs[0].position;
    let mut hi = lo;
    for g in gs {
        lo = lo.inf(&g.position);
        hi = hi.sup(&g.position);
    }
    let center = 0.5 * (lo + hi);
    let radius = 0.5 * (hi - lo).norm();
    let half_fov = ((h as f64 / 2.0) / FOCAL).atan();
    let dist = 1.15 * radius / half_fov.sin();
    let dir = Vec3::new(0.25, -1.0, 0.3).normalize();
    Camera::look_at(center + dir * dist, center, Vec3::z(), FOCAL, w, h).expect("non-degenerate framing")
}
