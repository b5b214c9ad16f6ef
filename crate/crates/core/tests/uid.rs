use kgas_core::so3::{Mat3, RotationMatrix, Vec3};
use kgas_core::uid::fixtures::{creased_sheet, fibonacci_sphere, planar_grid};
use kgas_core::uid::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_points(n: usize, seed: u64) -> PointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    PointSet::new((0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random::<f64>() * 0.3)).collect()).unwrap()
}

fn brute_knn(p: &PointSet, i: usize, k: usize) -> Vec<usize> {
    let q = p.positions()[i];
    let mut all: Vec<(f64, usize)> =
        p.positions().iter().enumerate().filter(|(j, _)| *j != i).map(|(j, x)| ((x - q).norm_squared(), j)).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all.into_iter().take(k).map(|e| e.1).collect()
}

#[test]
fn grid_knn_matches_exhaustive_sort() {
    for (n, seed) in [(300, 1), (1500, 2)] {
        let p = random_points(n, seed);
        let index = NeighborIndex::new(&p, 8);
        for i in (0..n).step_by(7) {
            for k in [1, 8, 30] {
                assert_eq!(index.query(i, k).unwrap(), brute_knn(&p, i, k), "n={n} i={i} k={k}");
            }
        }
    }
}

#[test]
fn grid_knn_ties_on_lattice() {
    let p = planar_grid(20, 1.0);
    assert!(p.len() >= GRID_MIN_POINTS);
    let index = NeighborIndex::new(&p, 8);
    for i in [0, 220, 440, 700] {
        assert_eq!(index.query(i, 8).unwrap(), brute_knn(&p, i, 8));
    }
}

#[test]
fn centroid_matches_reordered_sum() {
    let p = random_points(200, 3);
    let hood: Vec<usize> = (0..200).step_by(3).collect();
    let c = local_centroid(&p, &hood).unwrap();
    let mut rev = Vec3::zeros();
    for &j in hood.iter().rev() {
        rev += p.positions()[j];
    }
    assert!((c - rev / hood.len() as f64).norm() < 1e-12);
    let d = Vec3::new(3.0, -1.0, 2.0);
    let shifted = p.map(|x| x + d).unwrap();
    assert!((local_centroid(&shifted, &hood).unwrap() - (c + d)).norm() < 1e-12);
}

#[test]
fn covariance_sampling_and_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 200_000;
    let p = PointSet::new(
        (0..n)
            .map(|_| Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect(),
    )
    .unwrap();
    let all: Vec<usize> = (0..n).collect();
    let c = local_covariance(&p, &all).unwrap();
    assert!((c - Mat3::identity()).abs().max() < 0.02, "{c}");

    let small = random_points(50, 5);
    let hood: Vec<usize> = (0..50).collect();
    let r = RotationMatrix::about_z(0.4) * RotationMatrix::about_x(1.1);
    let rotated = small.map(|x| r.rotate(x)).unwrap();
    let lhs = local_covariance(&rotated, &hood).unwrap();
    let rhs = r.matrix() * local_covariance(&small, &hood).unwrap() * r.matrix().transpose();
    assert!((lhs - rhs).abs().max() < 1e-9);
}

/// Smallest root of the characteristic polynomial by bisection, then the
/// eigenvector as the largest cross product of rows of `A - λI`.
fn eigen_oracle(a: &Mat3) -> Vec3 {
    let det = |l: f64| (a - Mat3::identity() * l).determinant();
    let bound = a.abs().sum() + 1.0;
    // det(A - λI) is positive below the smallest root.
    let (mut lo, mut hi) = (-bound, bound);
    let mut steps = 4096;
    let mut x = lo;
    let dx = (hi - lo) / steps as f64;
    while steps > 0 && det(x + dx) > 0.0 {
        x += dx;
        steps -= 1;
    }
    lo = x;
    hi = x + dx;
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if det(m) > 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    let b = a - Mat3::identity() * (0.5 * (lo + hi));
    let rows = [b.row(0).transpose(), b.row(1).transpose(), b.row(2).transpose()];
    [rows[0].cross(&rows[1]), rows[1].cross(&rows[2]), rows[2].cross(&rows[0])]
        .into_iter()
        .max_by(|u, v| u.norm().total_cmp(&v.norm()))
        .unwrap()
        .normalize()
}

#[test]
fn min_eigenvector_matches_characteristic_root() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let m = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let a = m * m.transpose() + Mat3::identity() * 0.01;
        let n = min_eig_normal(&a).unwrap();
        assert!((n.norm() - 1.0).abs() < 1e-12);
        let o = eigen_oracle(&a);
        assert!(folded_angle(&n, &o) <= 1e-6, "{a}");
        let big = (0..3).fold(0, |b, i| if n[i].abs() > n[b].abs() { i } else { b });
        assert!(n[big] > 0.0);
    }
}

#[test]
fn crease_is_found() {
    let sheet = creased_sheet(20, 1.0, 60f64.to_radians(), 0.05, 0);
    let r = detect(&sheet.points, DetectParams::new(8, 30f64.to_radians())).unwrap();
    let truth = sheet.crease_band();
    let tp = r.flagged.iter().filter(|&&i| truth[i]).count();
    let precision = tp as f64 / r.flagged.len().max(1) as f64;
    let recall = tp as f64 / truth.iter().filter(|&&t| t).count() as f64;
    assert!(precision >= 0.9 && recall >= 0.9, "precision {precision} recall {recall}");
}

#[test]
fn smooth_sphere_has_no_flags() {
    let r = detect(&fibonacci_sphere(1000, 1.0), DetectParams::new(8, 45f64.to_radians())).unwrap();
    assert!(r.flagged.is_empty(), "{:?}", r.flagged);
}

#[test]
fn normals_are_eigenvectors() {
    let sheet = creased_sheet(10, 1.0, 1.0, 0.1, 3);
    let params = DetectParams::new(8, 0.5);
    let r = detect(&sheet.points, params).unwrap();
    for i in 0..sheet.points.len() {
        let hood = knn(&sheet.points, i, 8).unwrap();
        let cov = local_covariance(&sheet.points, &hood).unwrap();
        let n = r.normals[i].unwrap();
        assert!((n.norm() - 1.0).abs() < 1e-9);
        let lmin = cov.symmetric_eigenvalues().min();
        assert!((cov * n - lmin * n).norm() <= 1e-6 * cov.norm());
        assert!((0.0..=std::f64::consts::PI).contains(&r.max_angle[i]));
    }
}

#[test]
fn flags_are_rigid_and_scale_invariant() {
    let sheet = creased_sheet(12, 1.0, 60f64.to_radians(), 0.05, 7);
    let params = DetectParams::new(8, 30f64.to_radians());
    let base = detect(&sheet.points, params).unwrap().flagged;
    assert!(!base.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let r = RotationMatrix::uniform(&mut rng);
        let d = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let moved = sheet.points.map(|p| r.rotate(p) + d).unwrap();
        assert_eq!(detect(&moved, params).unwrap().flagged, base);
    }
    for c in [0.1, 10.0] {
        let scaled = sheet.points.map(|p| p * c).unwrap();
        assert_eq!(detect(&scaled, params).unwrap().flagged, base);
    }
}

#[test]
fn flags_are_antitone_in_threshold() {
    let sheet = creased_sheet(10, 1.0, 0.8, 0.15, 9);
    let mut prev: Option<Vec<usize>> = None;
    for deg in [5.0, 10.0, 20.0, 30.0, 45.0, 60.0, 90.0] {
        let f = detect(&sheet.points, DetectParams::new(8, f64::to_radians(deg))).unwrap().flagged;
        if let Some(p) = &prev {
            assert!(f.iter().all(|i| p.contains(i)));
        }
        prev = Some(f);
    }
}

#[test]
fn detect_validates_parameters() {
    let p = planar_grid(3, 1.0);
    assert!(detect(&p, DetectParams::new(8, 0.0)).is_err());
    assert!(detect(&p, DetectParams::new(8, 2.0)).is_err());
    assert!(detect(&p, DetectParams::new(49, 0.5)).is_err());
}

#[test]
fn report_ply_round_trip() {
    let p = planar_grid(3, 0.5);
    let r = detect(&p, DetectParams::new(6, 0.5)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.ply");
    kgas_core::ply::write_ply(&r.to_table(&p), &path).unwrap();
    let back = read_points(&path).unwrap();
    assert_eq!(back, p);
    let t = kgas_core::ply::read_ply(&path).unwrap();
    assert_eq!(t.column("nz"), Some(5));
    assert!(t.rows.iter().all(|row| row[5] == 1.0));
}
