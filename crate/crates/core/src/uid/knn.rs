use std::collections::HashMap;

use super::PointSet;
use crate::error::{Error, Result};
use crate::so3::Vec3;

/// Below this many points queries scan everything.
pub const GRID_MIN_POINTS: usize = 512;

/// Exact k-nearest-neighbor index: brute force for small sets, a uniform
/// grid hash otherwise. Results are identical either way, ties broken by index.
pub struct NeighborIndex<'a> {
    points: &'a [Vec3],
    grid: Option<Grid>,
}

struct Grid {
    origin: Vec3,
    cell: f64,
    cells: HashMap<[i64; 3], Vec<usize>>,
    max_ring: i64,
}

impl<'a> NeighborIndex<'a> {
    /// Index tuned for queries of about `k` neighbors.
    pub fn new(points: &'a PointSet, k: usize) -> Self {
        let pts = points.positions();
        let grid = (pts.len() >= GRID_MIN_POINTS).then(|| Grid::build(pts, k.max(1)));
        Self { points: pts, grid }
    }

    pub fn query(&self, i: usize, k: usize) -> Result<Vec<usize>> {
        let n = self.points.len();
        if k == 0 || k >= n || i >= n {
            return Err(Error::KOutOfRange { k, points: n });
        }
        let q = self.points[i];
        let mut cand: Vec<(f64, usize)> = match &self.grid {
            None => (0..n).filter(|&j| j != i).map(|j| (dist2(&q, &self.points[j]), j)).collect(),
            Some(g) => g.candidates(self.points, i, k),
        };
        cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        cand.truncate(k);
        Ok(cand.into_iter().map(|c| c.1).collect())
    }
}

fn dist2(a: &Vec3, b: &Vec3) -> f64 {
    (a - b).norm_squared()
}

impl Grid {
    fn build(pts: &[Vec3], k: usize) -> Self {
        let mut lo = pts[0];
        let mut hi = pts[0];
        for p in pts {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = hi - lo;
        let max_ext = ext.max().max(f64::MIN_POSITIVE);
        // Occupied dimensionality decides how cell size scales with density.
        let dims: Vec<f64> = ext.iter().copied().filter(|&e| e > 1e-9 * max_ext).collect();
        let d = dims.len().max(1) as f64;
        let volume: f64 = dims.iter().product::<f64>().max(f64::MIN_POSITIVE);
        let cell = (volume * 2.0 * k as f64 / pts.len() as f64).powf(1.0 / d).clamp(max_ext * 1e-6, max_ext);
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (j, p) in pts.iter().enumerate() {
            cells.entry(key(&lo, cell, p)).or_default().push(j);
        }
        let max_ring = (max_ext / cell).ceil() as i64 + 1;
        Self { origin: lo, cell, cells, max_ring }
    }

    fn candidates(&self, pts: &[Vec3], i: usize, k: usize) -> Vec<(f64, usize)> {
        let q = pts[i];
        let c = key(&self.origin, self.cell, &q);
        let mut found = Vec::new();
        for r in 0..=self.max_ring {
            for_ring(c, r, |cell| {
                if let Some(members) = self.cells.get(&cell) {
                    found.extend(members.iter().filter(|&&j| j != i).map(|&j| (dist2(&q, &pts[j]), j)));
                }
            });
            // Anything outside rings 0..=r is at least r cells away.
            let reach = r as f64 * self.cell;
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                if found[k - 1].0 < reach * reach {
                    break;
                }
            }
        }
        found
    }
}

fn key(origin: &Vec3, cell: f64, p: &Vec3) -> [i64; 3] {
    let v = (p - origin) / cell;
    [v.x.floor() as i64, v.y.floor() as i64, v.z.floor() as i64]
}

/// Visits cells at Chebyshev distance exactly `r` from `c`.
fn for_ring(c: [i64; 3], r: i64, mut f: impl FnMut([i64; 3])) {
    for dx in -r..=r {
        for dy in -r..=r {
            let edge = dx.abs() == r || dy.abs() == r;
            if edge {
                for dz in -r..=r {
                    f([c[0] + dx, c[1] + dy, c[2] + dz]);
                }
            } else {
                f([c[0] + dx, c[1] + dy, c[2] - r]);
                if r > 0 {
                    f([c[0] + dx, c[1] + dy, c[2] + r]);
                }
            }
        }
    }
}
