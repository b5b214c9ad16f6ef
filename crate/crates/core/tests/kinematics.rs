use nalgebra::Matrix4;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgas_core::fisher::FisherParams;
use kgas_core::kinematics::{
    format_rig, forward_kinematics, jntm_propagate, jntm_propagate_with, lbs_skin, parse_rig, JointTransforms,
    KinematicTree, ParentRefiner, Pose, Rig, SkinWeights,
};
use kgas_core::pipeline::scene_gen;
use kgas_core::so3::{log_so3, Mat3, RotationMatrix, Vec3};

fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> KinematicTree {
    let parents = (0..n).map(|i| if i == 0 { None } else { Some(rng.random_range(0..i)) }).collect();
    let joints = (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
    KinematicTree::new(parents, joints).unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng, n: usize) -> Pose {
    Pose((0..n).map(|_| RotationMatrix::uniform(rng)).collect())
}

fn homogeneous(r: &Mat3, t: &Vec3) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
    m
}

/// Recursive 4×4 composition: `T_k = T_parent · Tr(j_k) · R_k · Tr(-j_k)`.
fn fk_oracle(tree: &KinematicTree, pose: &Pose, k: usize) -> Matrix4<f64> {
    let j = tree.rest_joints()[k];
    let local = homogeneous(&Mat3::identity(), &j)
        * homogeneous(pose.0[k].matrix(), &Vec3::zeros())
        * homogeneous(&Mat3::identity(), &-j);
    match tree.parent(k) {
        None => local,
        Some(p) => fk_oracle(tree, pose, p) * local,
    }
}

#[test]
fn forward_kinematics_matches_homogeneous_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(1..30);
        let tree = random_tree(&mut rng, n);
        let pose = random_pose(&mut rng, n);
        let t = forward_kinematics(&tree, &pose).unwrap();
        for k in 0..n {
            let m = fk_oracle(&tree, &pose, k);
            assert!((t.rotations[k].matrix() - m.fixed_view::<3, 3>(0, 0)).abs().max() < 1e-12);
            assert!((t.translations[k] - m.fixed_view::<3, 1>(0, 3)).abs().max() < 1e-12);
        }
    }
}

#[test]
fn rest_pose_is_a_fixed_point_of_skinning() {
    let s = scene_gen("humanoid24", 0).unwrap();
    let t = forward_kinematics(&s.rig.tree, &Pose::identity(24)).unwrap();
    let skinned = lbs_skin(&s.rig.rest_vertices, &s.rig.weights, &t).unwrap();
    let worst = skinned.iter().zip(&s.rig.rest_vertices).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(worst <= 1e-9, "{worst}");
}

#[test]
fn skinning_is_affine_in_the_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tree = random_tree(&mut rng, 6);
    let t = forward_kinematics(&tree, &random_pose(&mut rng, 6)).unwrap();
    let rest: Vec<Vec3> = (0..100).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
    let rows: Vec<Vec<(usize, f64)>> = (0..100)
        .map(|_| {
            let (a, b) = (rng.random_range(0..6), rng.random_range(0..6));
            if a == b {
                vec![(a, 1.0)]
            } else {
                let w: f64 = rng.random();
                vec![(a, w), (b, 1.0 - w)]
            }
        })
        .collect();
    let skinned = lbs_skin(&rest, &SkinWeights::new(rows.clone()).unwrap(), &t).unwrap();
    for ((p, row), q) in rest.iter().zip(&rows).zip(&skinned) {
        let direct =
            row.iter().fold(Vec3::zeros(), |acc, &(k, w)| acc + (t.rotations[k].rotate(p) + t.translations[k]) * w);
        assert!((direct - q).norm() < 1e-12);
    }
    // a single full weight moves the vertex rigidly
    let rigid = lbs_skin(&rest, &SkinWeights::rigid(100, 3), &t).unwrap();
    for (p, q) in rest.iter().zip(&rigid) {
        assert!((t.apply(3, p) - q).norm() < 1e-12);
    }
}

#[test]
fn composed_poses_compose_transforms() {
    // posing a single chain by A then B equals posing by the products
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tree = KinematicTree::new(vec![None], vec![Vec3::new(0.2, 0.1, 0.0)]).unwrap();
    let (a, b) = (RotationMatrix::uniform(&mut rng), RotationMatrix::uniform(&mut rng));
    let ta = forward_kinematics(&tree, &Pose(vec![a])).unwrap();
    let tb = forward_kinematics(&tree, &Pose(vec![b])).unwrap();
    let tab = forward_kinematics(&tree, &Pose(vec![b * a])).unwrap();
    let p = Vec3::new(0.7, -0.3, 0.4);
    assert!((tb.apply(0, &ta.apply(0, &p)) - tab.apply(0, &p)).norm() < 1e-12);
    let inv = tab.inverse();
    assert!((inv.apply(0, &tab.apply(0, &p)) - p).norm() < 1e-12);
}

fn random_params(rng: &mut ChaCha8Rng, n: usize) -> Vec<FisherParams> {
    (0..n).map(|_| FisherParams::new(Mat3::from_fn(|_, _| rng.random_range(-10.0..10.0))).unwrap()).collect()
}

#[test]
fn jntm_gamma_zero_is_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let tree = scene_gen("humanoid24", 0).unwrap().rig.tree;
    let params = random_params(&mut rng, 24);
    let (refined, factors) = jntm_propagate(&tree, &params, 0.0).unwrap();
    assert_eq!(refined, params);
    for (k, p) in params.iter().enumerate() {
        assert_eq!(factors.singular_values[k], p.singular_values());
        assert_eq!(factors.modes[k], p.mode());
    }
}

#[test]
fn jntm_preserves_singular_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tree = scene_gen("humanoid24", 0).unwrap().rig.tree;
    let params = random_params(&mut rng, 24);
    for gamma in [0.0, 0.1, 0.3, 0.5, 0.9, 1.0] {
        let (_, factors) = jntm_propagate(&tree, &params, gamma).unwrap();
        for (k, p) in params.iter().enumerate() {
            let (a, b) = (factors.singular_values[k], p.singular_values());
            for i in 0..3 {
                assert!((a[i] - b[i]).abs() < 1e-9 * (1.0 + b[0]), "γ {gamma} joint {k}");
            }
        }
    }
    assert!(jntm_propagate(&tree, &params, 1.5).is_err());
    assert!(jntm_propagate(&tree, &params[..23], 0.3).is_err());
}

#[test]
fn jntm_full_step_carries_the_parent_mode() {
    let tree = KinematicTree::new(vec![None, Some(0)], vec![Vec3::zeros(), Vec3::x()]).unwrap();
    let parent = RotationMatrix::about_z(0.8);
    let child = RotationMatrix::about_x(-0.4);
    let params =
        vec![FisherParams::new(parent.matrix() * 5.0).unwrap(), FisherParams::new(child.matrix() * 5.0).unwrap()];
    let (_, f) = jntm_propagate(&tree, &params, 1.0).unwrap();
    assert!(f.modes[1].angle_to(&(parent * child)) < 1e-9);
    let (_, f) = jntm_propagate(&tree, &params, 0.5).unwrap();
    assert!(f.modes[1].angle_to(&(RotationMatrix::about_z(0.4) * child)) < 1e-9);
    assert!((log_so3(&f.modes[0]).angle() - 0.8).abs() < 1e-9);
}

#[test]
fn custom_refiners_plug_in() {
    struct Keep;
    impl ParentRefiner for Keep {
        fn refine(&self, _child: &FisherParams, parent: &FisherParams) -> FisherParams {
            *parent
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tree = random_tree(&mut rng, 8);
    let params = random_params(&mut rng, 8);
    let (refined, _) = jntm_propagate_with(&tree, &params, &Keep).unwrap();
    assert!(refined.iter().all(|p| *p == params[0]));
}

#[test]
fn rig_text_round_trip() {
    let s = scene_gen("chain4", 1).unwrap();
    let text = format_rig(&s.rig);
    let back: Rig = parse_rig(&text, "mem").unwrap();
    assert_eq!(back.tree.parents(), s.rig.tree.parents());
    assert_eq!(back.weights.len(), s.rig.weights.len());
    for (a, b) in back.rest_vertices.iter().zip(&s.rig.rest_vertices) {
        assert!((a - b).norm() < 1e-12);
    }
    assert_eq!(format_rig(&back), text);
}

#[test]
fn tree_and_weight_validation() {
    assert!(KinematicTree::new(vec![], vec![]).is_err());
    assert!(KinematicTree::new(vec![Some(0)], vec![Vec3::zeros()]).is_err());
    assert!(KinematicTree::new(vec![None, Some(2), Some(0)], vec![Vec3::zeros(); 3]).is_err());
    assert!(SkinWeights::new(vec![vec![(0, 0.5)]]).is_err());
    assert!(SkinWeights::new(vec![vec![(0, 0.2), (1, 0.2), (2, 0.2), (3, 0.2), (4, 0.2)]]).is_err());
    let tree = KinematicTree::new(vec![None], vec![Vec3::zeros()]).unwrap();
    assert!(forward_kinematics(&tree, &Pose::identity(2)).is_err());
    let t = JointTransforms::identity(1);
    assert!(lbs_skin(&[Vec3::zeros()], &SkinWeights::rigid(1, 1), &t).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn joints_follow_their_parents(seed in any::<u64>(), n in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = random_tree(&mut rng, n);
        let t = forward_kinematics(&tree, &random_pose(&mut rng, n)).unwrap();
        for k in 1..n {
            let p = tree.parent(k).unwrap();
            let j = tree.rest_joints()[k];
            prop_assert!((t.apply(k, &j) - t.apply(p, &j)).norm() < 1e-12);
        }
    }
}
