//! Surface deformation detection from PCA normals over k-nearest-neighbor
//! neighborhoods.

pub mod fixtures;
mod knn;

use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::SymmetricEigen;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ply::{read_ply, write_ply, PlyTable};
use crate::so3::{Mat3, Vec3};

pub use knn::{NeighborIndex, GRID_MIN_POINTS};

pub const DEFAULT_K: usize = 16;
pub const DEFAULT_THRESHOLD_DEG: f64 = 30.0;
/// Relative eigenvalue gap below which the smallest eigenvalue counts as repeated.
pub const DEGENERACY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PointSet(Vec<Vec3>);

impl PointSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::NonFinite("point coordinate"));
        }
        Ok(Self(points))
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `p ↦ f(p)` applied to every point.
    pub fn map(&self, f: impl Fn(&Vec3) -> Vec3) -> Result<Self> {
        Self::new(self.0.iter().map(f).collect())
    }
}

/// The `k` nearest neighbors of point `i`, excluding `i`, ties by lower index.
pub fn knn(points: &PointSet, i: usize, k: usize) -> Result<Vec<usize>> {
    NeighborIndex::new(points, k).query(i, k)
}

pub fn local_centroid(points: &PointSet, neighborhood: &[usize]) -> Result<Vec3> {
    if neighborhood.is_empty() {
        return Err(Error::NeighborhoodTooSmall { got: 0, need: 1 });
    }
    let sum = neighborhood.iter().fold(Vec3::zeros(), |acc, &j| acc + points.0[j]);
    Ok(sum / neighborhood.len() as f64)
}

/// Unbiased sample covariance (`1/(k-1)`) about the local centroid.
pub fn local_covariance(points: &PointSet, neighborhood: &[usize]) -> Result<Mat3> {
    if neighborhood.len() < 2 {
        return Err(Error::NeighborhoodTooSmall { got: neighborhood.len(), need: 2 });
    }
    let c = local_centroid(points, neighborhood)?;
    let mut cov = Mat3::zeros();
    for &j in neighborhood {
        let d = points.0[j] - c;
        cov += d * d.transpose();
    }
    cov /= (neighborhood.len() - 1) as f64;
    Ok(0.5 * (cov + cov.transpose()))
}

/// Unit eigenvector of the smallest eigenvalue, its largest-magnitude component
/// made positive. `None` when the smallest eigenvalue is repeated.
pub fn min_eig_normal(cov: &Mat3) -> Option<Vec3> {
    let eig = SymmetricEigen::new(*cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let l = order.map(|i| eig.eigenvalues[i]);
    let scale = l[2].abs().max(l[0].abs());
    if !(scale > 0.0) || l[1] - l[0] <= DEGENERACY_TOL * scale {
        return None;
    }
    let v: Vec3 = eig.eigenvectors.column(order[0]).normalize();
    let big = (0..3).fold(0, |b, i| if v[i].abs() > v[b].abs() { i } else { b });
    Some(if v[big] < 0.0 { -v } else { v })
}

/// `arccos⟨a, b⟩` with the dot product clamped to `[-1, 1]`.
pub fn normal_angle(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).clamp(-1.0, 1.0).acos()
}

/// Sign-insensitive angle `min(θ, π - θ)`.
pub fn folded_angle(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b).abs().min(1.0).acos()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub k: usize,
    /// Radians.
    pub threshold: f64,
    /// Compare sign-folded angles (the default) rather than raw ones.
    pub folded: bool,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self { k: DEFAULT_K, threshold: DEFAULT_THRESHOLD_DEG.to_radians(), folded: true }
    }
}

impl DetectParams {
    pub fn new(k: usize, threshold: f64) -> Self {
        Self { k, threshold, folded: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub flagged: Vec<usize>,
    /// `None` for points whose neighborhood has no unique normal.
    pub normals: Vec<Option<Vec3>>,
    /// Largest angle to a neighbor's normal, radians; 0 for degenerate points.
    pub max_angle: Vec<f64>,
    pub degenerate: Vec<usize>,
    pub params: DetectParams,
}

/// Flags every point whose normal differs from some neighbor's by more than
/// the threshold. Degenerate points are never flagged and are skipped as
/// neighbors.
pub fn detect(points: &PointSet, params: DetectParams) -> Result<DetectionReport> {
    if !(params.threshold > 0.0 && params.threshold <= FRAC_PI_2) {
        return Err(Error::InvalidParameter(format!("threshold {} rad outside (0, π/2]", params.threshold)));
    }
    let n = points.len();
    if params.k < 2 || params.k >= n {
        return Err(Error::KOutOfRange { k: params.k, points: n });
    }
    let index = NeighborIndex::new(points, params.k);
    let hoods: Vec<Vec<usize>> = (0..n).into_par_iter().map(|i| index.query(i, params.k)).collect::<Result<_>>()?;
    let normals: Vec<Option<Vec3>> =
        hoods.par_iter().map(|h| local_covariance(points, h).map(|c| min_eig_normal(&c))).collect::<Result<_>>()?;
    let angle = if params.folded { folded_angle } else { normal_angle };
    let max_angle: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| match normals[i] {
            None => 0.0,
            Some(ni) => hoods[i].iter().filter_map(|&j| normals[j]).map(|nj| angle(&ni, &nj)).fold(0.0, f64::max),
        })
        .collect();
    let flagged = (0..n).filter(|&i| normals[i].is_some() && max_angle[i] > params.threshold).collect();
    let degenerate = (0..n).filter(|&i| normals[i].is_none()).collect();
    Ok(DetectionReport { flagged, normals, max_angle, degenerate, params })
}

impl DetectionReport {
    /// Plain-text summary: parameters, flagged indices, per-point maxima in degrees.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "k = {}", self.params.k);
        let _ = writeln!(s, "threshold_deg = {:.4}", self.params.threshold.to_degrees());
        let _ = writeln!(s, "folded = {}", self.params.folded);
        let _ = writeln!(s, "points = {}", self.normals.len());
        let _ = writeln!(s, "flagged_count = {}", self.flagged.len());
        let _ = writeln!(s, "degenerate_count = {}", self.degenerate.len());
        let _ = writeln!(s, "flagged = {}", join(&self.flagged));
        let _ = writeln!(s, "degenerate = {}", join(&self.degenerate));
        let _ = writeln!(s, "[max_angle_deg]");
        for (i, a) in self.max_angle.iter().enumerate() {
            let _ = writeln!(s, "{i} {:.4}", a.to_degrees());
        }
        s
    }

    /// Points with normals (zero for degenerate points), flag and angle columns.
    pub fn to_table(&self, points: &PointSet) -> PlyTable {
        let mut t = PlyTable::new(&["x", "y", "z", "nx", "ny", "nz", "flag", "max_angle"]);
        let mut flag = vec![0.0; points.len()];
        for &i in &self.flagged {
            flag[i] = 1.0;
        }
        t.rows = points
            .positions()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let nrm = self.normals[i].unwrap_or_else(Vec3::zeros);
                vec![p.x, p.y, p.z, nrm.x, nrm.y, nrm.z, flag[i], self.max_angle[i]]
            })
            .collect();
        t
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn points_from_table(table: &PlyTable, origin: &str) -> Result<PointSet> {
    let c = table.columns(&["x", "y", "z"], origin)?;
    PointSet::new(table.rows.iter().map(|r| Vec3::new(r[c[0]], r[c[1]], r[c[2]])).collect())
}

pub fn read_points(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    points_from_table(&read_ply(path)?, &path.display().to_string())
}

pub fn write_points(points: &PointSet, path: impl AsRef<Path>) -> Result<()> {
    let mut t = PlyTable::new(&["x", "y", "z"]);
    t.rows = points.positions().iter().map(|p| vec![p.x, p.y, p.z]).collect();
    write_ply(&t, path)
}
