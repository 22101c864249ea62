use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Point, TriangleMesh, Vec3};
use crate::error::{Result, VolrigError};

/// Reads a Wavefront OBJ file. Only `v`, `vn` and `f` records are used;
/// polygons are fan-triangulated.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| VolrigError::io(path, e))?;
    parse_obj(&text, path)
}

fn resolve(idx: i64, count: usize, what: &str, path: &Path, line: usize) -> Result<usize> {
    let resolved = if idx > 0 {
        idx - 1
    } else if idx < 0 {
        count as i64 + idx
    } else {
        -1
    };
    if resolved < 0 || resolved as usize >= count {
        return Err(VolrigError::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{what} index {idx} out of range ({count} defined)"),
        });
    }
    Ok(resolved as usize)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<TriangleMesh> {
    let perr = |line: usize, msg: String| VolrigError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut vertices: Vec<Point> = Vec::new();
    let mut file_normals: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // per-vertex normal assignment from `f v//vn` references
    let mut assigned: Vec<Option<Vec3>> = Vec::new();
    let mut all_faces_have_normals = true;

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        let Some(tag) = it.next() else { continue };
        match tag {
            "v" | "vn" => {
                let mut xyz = [0.0f64; 3];
                for c in &mut xyz {
                    let tok = it
                        .next()
                        .ok_or_else(|| perr(line_no, format!("`{tag}` needs three coordinates")))?;
                    *c = tok
                        .parse()
                        .map_err(|_| perr(line_no, format!("bad number `{tok}`")))?;
                    if !c.is_finite() {
                        return Err(perr(line_no, format!("non-finite coordinate `{tok}`")));
                    }
                }
                if tag == "v" {
                    vertices.push(Point::new(xyz[0], xyz[1], xyz[2]));
                    assigned.push(None);
                } else {
                    file_normals.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
                }
            }
            "f" => {
                let mut poly = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let vi: i64 = parts
                        .next()
                        .unwrap_or("")
                        .parse()
                        .map_err(|_| perr(line_no, format!("bad face index `{tok}`")))?;
                    let v = resolve(vi, vertices.len(), "vertex", path, line_no)?;
                    let _tex = parts.next();
                    match parts.next().filter(|s| !s.is_empty()) {
                        Some(n) => {
                            let ni: i64 = n
                                .parse()
                                .map_err(|_| perr(line_no, format!("bad normal index `{tok}`")))?;
                            let n = resolve(ni, file_normals.len(), "normal", path, line_no)?;
                            assigned[v] = Some(file_normals[n]);
                        }
                        None => all_faces_have_normals = false,
                    }
                    poly.push(v as u32);
                }
                if poly.len() < 3 {
                    return Err(perr(line_no, "face with fewer than 3 vertices".into()));
                }
                for k in 1..poly.len() - 1 {
                    triangles.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(VolrigError::EmptyMesh);
    }
    let usable = all_faces_have_normals
        && triangles
            .iter()
            .flatten()
            .all(|&i| assigned[i as usize].is_some_and(|n| n.norm() > 0.0));
    if usable {
        let normals = assigned
            .into_iter()
            .map(|n| n.map(|n| n.normalize()).unwrap_or_else(Vec3::y))
            .collect();
        TriangleMesh::with_normals(vertices, triangles, normals)
    } else {
        TriangleMesh::new(vertices, triangles)
    }
}

/// Writes positions and faces; normals are left to the reader.
pub fn save_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(mesh.vertices.len() * 40);
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    fs::write(path, out).map_err(|e| VolrigError::io(path, e))
}
