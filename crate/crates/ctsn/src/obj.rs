//! Wavefront OBJ subset: `v` and `f` records. Faces with more than three
//! corners are fan-triangulated, corner entries may be `i`, `i/j` or `i/j/k`
//! (only `i` is used) and negative indices count back from the last vertex.
//! Every other record type is ignored.

use std::fmt::Write as _;
use std::path::Path;

use ctsn_core::math::Vec3;
use ctsn_core::mesh::Mesh;

use crate::error::{in_file, read_to_string, write, Error, Result};

pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[usize; 3]> = Vec::new();
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut fields = body.split_whitespace();
        match fields.next() {
            Some("v") => {
                let mut p = [0.0f64; 3];
                for (a, slot) in p.iter_mut().enumerate() {
                    let f = fields
                        .next()
                        .ok_or_else(|| err(line, format!("vertex needs 3 coordinates, got {a}")))?;
                    *slot = f
                        .parse()
                        .map_err(|_| err(line, format!("bad coordinate {f:?}")))?;
                    if !slot.is_finite() {
                        return Err(err(line, format!("non-finite coordinate {f:?}")));
                    }
                }
                vertices.push(p);
            }
            Some("f") => {
                let corners = fields
                    .map(|f| corner_index(f, vertices.len()).map_err(|m| err(line, m)))
                    .collect::<Result<Vec<usize>>>()?;
                if corners.len() < 3 {
                    return Err(err(line, format!("face needs at least 3 corners, got {}", corners.len())));
                }
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, triangles).map_err(in_file(path))
}

fn corner_index(field: &str, count: usize) -> std::result::Result<usize, String> {
    let first = field.split('/').next().unwrap_or("");
    let i: i64 = first
        .parse()
        .map_err(|_| format!("bad face index {field:?}"))?;
    let idx = match i {
        0 => return Err("face index 0 (indices are 1-based)".into()),
        i if i > 0 => i as usize - 1,
        i => count
            .checked_sub(i.unsigned_abs() as usize)
            .ok_or_else(|| format!("relative face index {i} before the first vertex"))?,
    };
    if idx >= count {
        return Err(format!("face index {i} refers to an undefined vertex (have {count})"));
    }
    Ok(idx)
}

pub fn read_obj(path: &Path) -> Result<Mesh> {
    parse_obj(&read_to_string(path)?, path)
}

/// Shortest decimal text that reads back to the same `f64`.
pub fn format_obj(mesh: &Mesh) -> String {
    let mut s = String::with_capacity(mesh.vertex_count() * 48 + mesh.triangles().len() * 24);
    for v in mesh.vertices() {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for t in mesh.triangles() {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    s
}

pub fn write_obj(path: &Path, mesh: &Mesh) -> Result<()> {
    write(path, format_obj(mesh))
}
