//! Minimal ASCII PLY: one `vertex` element of scalar properties.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlyTable {
    pub properties: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl PlyTable {
    pub fn new(properties: &[&str]) -> Self {
        Self { properties: properties.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p == name)
    }

    /// Column indices for `names`, failing on the first one missing.
    pub fn columns(&self, names: &[&str], origin: &str) -> Result<Vec<usize>> {
        names
            .iter()
            .map(|n| self.column(n).ok_or_else(|| Error::parse(origin, 0, format!("missing vertex property '{n}'"))))
            .collect()
    }
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PlyTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&text, &path.display().to_string())
}

pub fn write_ply(table: &PlyTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_ply(table)).map_err(|e| Error::io(path, e))
}

pub fn parse_ply(text: &str, origin: &str) -> Result<PlyTable> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(Error::parse(origin, 1, "missing 'ply' magic")),
    }
    // (name, count, properties)
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut saw_format = false;
    loop {
        let (no, line) = lines.next().ok_or_else(|| Error::parse(origin, 0, "unterminated header"))?;
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.first().copied() {
            Some("format") => {
                if f.get(1) != Some(&"ascii") {
                    return Err(Error::parse(origin, no, format!("unsupported format '{line}' (ascii only)")));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                if f.len() != 3 {
                    return Err(Error::parse(origin, no, "element line needs a name and a count"));
                }
                let count =
                    f[2].parse().map_err(|_| Error::parse(origin, no, format!("bad element count '{}'", f[2])))?;
                elements.push((f[1].to_string(), count, Vec::new()));
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| Error::parse(origin, no, "property before element"))?;
                if f.get(1) == Some(&"list") {
                    if el.0 == "vertex" {
                        return Err(Error::parse(origin, no, "list properties are not supported on vertices"));
                    }
                    el.2.push(String::new());
                    continue;
                }
                if f.len() != 3 {
                    return Err(Error::parse(origin, no, "property line needs a type and a name"));
                }
                el.2.push(f[2].to_string());
            }
            Some("end_header") => break,
            Some(other) => return Err(Error::parse(origin, no, format!("unexpected header keyword '{other}'"))),
        }
    }
    if !saw_format {
        return Err(Error::parse(origin, 0, "missing format line"));
    }
    let mut table = None;
    for (name, count, props) in elements {
        let mut rows = Vec::with_capacity(if name == "vertex" { count } else { 0 });
        for _ in 0..count {
            let (no, line) = lines.next().ok_or_else(|| Error::parse(origin, 0, format!("truncated '{name}' data")))?;
            if name != "vertex" {
                continue;
            }
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| Error::parse(origin, no, format!("bad number '{t}'"))))
                .collect::<Result<_>>()?;
            if vals.len() != props.len() {
                return Err(Error::parse(origin, no, format!("expected {} values, got {}", props.len(), vals.len())));
            }
            rows.push(vals);
        }
        if name == "vertex" {
            table = Some(PlyTable { properties: props, rows });
        }
    }
    table.ok_or_else(|| Error::parse(origin, 0, "no vertex element"))
}

pub fn format_ply(table: &PlyTable) -> String {
    let mut s = String::from("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", table.rows.len());
    for p in &table.properties {
        let _ = writeln!(s, "property double {p}");
    }
    s.push_str("end_header\n");
    for row in &table.rows {
        let mut first = true;
        for v in row {
            if !first {
                s.push(' ');
            }
            first = false;
            let _ = write!(s, "{v}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut t = PlyTable::new(&["x", "y", "z"]);
        t.rows.push(vec![0.1, -2.0, 3.5e-9]);
        t.rows.push(vec![1.0 / 3.0, 0.0, 7.0]);
        assert_eq!(parse_ply(&format_ply(&t), "t").unwrap(), t);
    }

    #[test]
    fn skips_other_elements() {
        let text = "ply\nformat ascii 1.0\ncomment x\nelement vertex 2\nproperty float x\nproperty float y\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n1 2\n3 4\n3 0 1 2\n";
        let t = parse_ply(text, "t").unwrap();
        assert_eq!(t.rows, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(t.column("y"), Some(1));
    }

    #[test]
    fn rejects_binary_and_short_rows() {
        let bin = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(parse_ply(bin, "t").is_err());
        let short = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nend_header\n1\n";
        assert!(matches!(parse_ply(short, "t"), Err(Error::Parse { line: 7, .. })));
    }
}
