//! Synthetic point sets with known surface structure.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PointSet;
use crate::so3::Vec3;

/// `(2n+1)²` grid points in the z = 0 plane.
pub fn planar_grid(n: usize, spacing: f64) -> PointSet {
    let n = n as i64;
    let pts =
        (-n..=n).flat_map(|i| (-n..=n).map(move |j| Vec3::new(i as f64 * spacing, j as f64 * spacing, 0.0))).collect();
    PointSet::new(pts).expect("finite grid")
}

#[derive(Debug, Clone)]
pub struct CreasedSheet {
    pub points: PointSet,
    /// Signed in-sheet distance of each point from the crease line.
    pub offsets: Vec<f64>,
    pub spacing: f64,
}

impl CreasedSheet {
    /// Points within one grid spacing of the crease.
    pub fn crease_band(&self) -> Vec<bool> {
        self.offsets.iter().map(|t| t.abs() <= self.spacing).collect()
    }
}

/// Two half-sheets hinged along the y axis, the t > 0 half tilted up by
/// `bend` radians. Rows sit at half-integer offsets so no point lies on the
/// crease; `jitter` is a uniform perturbation in units of the spacing.
pub fn creased_sheet(n: usize, spacing: f64, bend: f64, jitter: f64, seed: u64) -> CreasedSheet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n as i64;
    let mut pts = Vec::new();
    let mut offsets = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            let t = (i as f64 + 0.5) * spacing + rng.random_range(-jitter..=jitter) * spacing;
            let y = j as f64 * spacing + rng.random_range(-jitter..=jitter) * spacing;
            let p = if t <= 0.0 { Vec3::new(t, y, 0.0) } else { Vec3::new(t * bend.cos(), y, t * bend.sin()) };
            pts.push(p);
            offsets.push(t);
        }
    }
    CreasedSheet { points: PointSet::new(pts).expect("finite sheet"), offsets, spacing }
}

/// Fibonacci-lattice points on a sphere.
pub fn fibonacci_sphere(n: usize, radius: f64) -> PointSet {
    let golden = PI * (1.0 + 5f64.sqrt());
    let pts = (0..n)
        .map(|i| {
            let u = i as f64 + 0.5;
            let phi = (1.0 - 2.0 * u / n as f64).acos();
            let th = golden * u;
            radius * Vec3::new(th.cos() * phi.sin(), th.sin() * phi.sin(), phi.cos())
        })
        .collect();
    PointSet::new(pts).expect("finite sphere")
}
