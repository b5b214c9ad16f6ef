use std::path::Path;

use super::Gaussian3D;
use crate::error::{Error, Result};
use crate::ply::{read_ply, write_ply, PlyTable};
use crate::so3::{RotationMatrix, Vec3};

/// Readers reject quaternions whose norm is further than this from one.
pub const QUATERNION_TOL: f64 = 1e-3;

const PROPERTIES: [&str; 14] = [
    "x", "y", "z", "rot_w", "rot_x", "rot_y", "rot_z", "scale_x", "scale_y", "scale_z", "opacity", "red", "green",
    "blue",
];

pub fn cloud_to_table(gaussians: &[Gaussian3D]) -> PlyTable {
    let mut t = PlyTable::new(&PROPERTIES);
    t.rows = gaussians
        .iter()
        .map(|g| {
            let q = g.rotation.to_quaternion();
            vec![
                g.position.x,
                g.position.y,
                g.position.z,
                q[0],
                q[1],
                q[2],
                q[3],
                g.scale.x,
                g.scale.y,
                g.scale.z,
                g.opacity,
                g.color[0],
                g.color[1],
                g.color[2],
            ]
        })
        .collect();
    t
}

pub fn cloud_from_table(table: &PlyTable, origin: &str) -> Result<Vec<Gaussian3D>> {
    let cols = table.columns(&PROPERTIES, origin)?;
    table
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let v = |k: usize| row[cols[k]];
            let q = [v(3), v(4), v(5), v(6)];
            let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > QUATERNION_TOL {
                return Err(Error::InvalidGaussian(format!("{origin}: vertex {i} has quaternion norm {norm}")));
            }
            Gaussian3D::new(
                Vec3::new(v(0), v(1), v(2)),
                RotationMatrix::from_quaternion(q),
                Vec3::new(v(7), v(8), v(9)),
                v(10),
                [v(11), v(12), v(13)],
            )
            .map_err(|e| Error::InvalidGaussian(format!("{origin}: vertex {i}: {e}")))
        })
        .collect()
}

pub fn write_gaussians(gaussians: &[Gaussian3D], path: impl AsRef<Path>) -> Result<()> {
    write_ply(&cloud_to_table(gaussians), path)
}

pub fn read_gaussians(path: impl AsRef<Path>) -> Result<Vec<Gaussian3D>> {
    let path = path.as_ref();
    cloud_from_table(&read_ply(path)?, &path.display().to_string())
}
