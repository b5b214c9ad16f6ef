//! Plain-text rig files.
//!
//! ```text
//! # comment
//! joints
//! 0 -1 0.0 0.0 0.0        # index, parent (-1 for a root), rest x y z
//! 1 0 0.3 0.0 0.0
//! weights
//! 0 0:0.5 1:0.5           # vertex index, then up to 4 joint:weight pairs
//! vertices
//! 0.1 0.0 0.0             # x y z, one vertex per line
//! ```

use std::fmt::Write as _;
use std::path::Path;

use super::{row_problem, KinematicTree, SkinWeights};
use crate::error::{Error, Result};
use crate::so3::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct Rig {
    pub tree: KinematicTree,
    pub weights: SkinWeights,
    pub rest_vertices: Vec<Vec3>,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Joints,
    Weights,
    Vertices,
}

pub fn load_rig(path: impl AsRef<Path>) -> Result<Rig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rig(&text, &path.display().to_string())
}

/// Parses rig text; `origin` names the source in diagnostics.
pub fn parse_rig(text: &str, origin: &str) -> Result<Rig> {
    let mut section = Section::None;
    let mut parents = Vec::new();
    let mut joints = Vec::new();
    let mut rows = Vec::new();
    let mut row_lines = Vec::new();
    let mut vertices = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "joints" => {
                section = Section::Joints;
                continue;
            }
            "weights" => {
                section = Section::Weights;
                continue;
            }
            "vertices" => {
                section = Section::Vertices;
                continue;
            }
            _ => {}
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| Error::parse(origin, line_no, msg);
        match section {
            Section::None => return Err(err(format!("data before any section header: '{line}'"))),
            Section::Joints => {
                if fields.len() != 5 {
                    return Err(err(format!("joint line needs 5 fields (index parent x y z), got {}", fields.len())));
                }
                let index: usize = fields[0].parse().map_err(|_| err(format!("bad joint index '{}'", fields[0])))?;
                if index != parents.len() {
                    return Err(err(format!("joint index {index} out of order (expected {})", parents.len())));
                }
                let parent: i64 = fields[1].parse().map_err(|_| err(format!("bad parent index '{}'", fields[1])))?;
                let parent = match parent {
                    -1 => None,
                    p if p >= 0 => Some(p as usize),
                    p => return Err(err(format!("bad parent index {p}"))),
                };
                parents.push(parent);
                joints.push(parse_vec3(&fields[2..], origin, line_no)?);
            }
            Section::Weights => {
                let index: usize = fields[0].parse().map_err(|_| err(format!("bad vertex index '{}'", fields[0])))?;
                if index != rows.len() {
                    return Err(err(format!("weight row {index} out of order (expected {})", rows.len())));
                }
                let mut row = Vec::new();
                for pair in &fields[1..] {
                    let (j, w) =
                        pair.split_once(':').ok_or_else(|| err(format!("expected joint:weight, got '{pair}'")))?;
                    let j: usize = j.parse().map_err(|_| err(format!("bad joint '{j}' in '{pair}'")))?;
                    let w: f64 = w.parse().map_err(|_| err(format!("bad weight '{w}' in '{pair}'")))?;
                    row.push((j, w));
                }
                rows.push(row);
                row_lines.push(line_no);
            }
            Section::Vertices => vertices.push(parse_vec3(&fields, origin, line_no)?),
        }
    }

    let tree = KinematicTree::new(parents, joints)?;
    for (i, row) in rows.iter().enumerate() {
        if let Some(reason) = row_problem(row) {
            return Err(Error::InvalidWeights { row: i, reason: format!("{reason} ({origin}:{})", row_lines[i]) });
        }
        if let Some(&(j, _)) = row.iter().find(|e| e.0 >= tree.joint_count()) {
            return Err(Error::InvalidWeights {
                row: i,
                reason: format!("joint {j} does not exist ({origin}:{})", row_lines[i]),
            });
        }
    }
    if rows.len() != vertices.len() {
        return Err(Error::LengthMismatch {
            what: "weight rows vs vertices",
            expected: vertices.len(),
            got: rows.len(),
        });
    }
    Ok(Rig { tree, weights: SkinWeights::new(rows)?, rest_vertices: vertices })
}

fn parse_vec3(fields: &[&str], origin: &str, line: usize) -> Result<Vec3> {
    if fields.len() != 3 {
        return Err(Error::parse(origin, line, format!("expected 3 coordinates, got {}", fields.len())));
    }
    let mut v = Vec3::zeros();
    for (k, f) in fields.iter().enumerate() {
        let x: f64 = f.parse().map_err(|_| Error::parse(origin, line, format!("bad coordinate '{f}'")))?;
        if !x.is_finite() {
            return Err(Error::parse(origin, line, format!("non-finite coordinate '{f}'")));
        }
        v[k] = x;
    }
    Ok(v)
}

pub fn format_rig(rig: &Rig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# kgas rig: {} joints, {} vertices", rig.tree.joint_count(), rig.rest_vertices.len());
    s.push_str("joints\n");
    for (i, (p, j)) in rig.tree.parents().iter().zip(rig.tree.rest_joints()).enumerate() {
        let p = p.map_or(-1, |p| p as i64);
        let _ = writeln!(s, "{i} {p} {} {} {}", j.x, j.y, j.z);
    }
    s.push_str("weights\n");
    for (i, row) in rig.weights.rows().iter().enumerate() {
        let _ = write!(s, "{i}");
        for (j, w) in row {
            let _ = write!(s, " {j}:{w}");
        }
        s.push('\n');
    }
    s.push_str("vertices\n");
    for v in &rig.rest_vertices {
        let _ = writeln!(s, "{} {} {}", v.x, v.y, v.z);
    }
    s
}

pub fn write_rig(rig: &Rig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_rig(rig)).map_err(|e| Error::io(path, e))
}
