//! Reader and writer for the Wavefront OBJ subset documented in
//! `docs/formats.md`: `v x y z [r g b]`, `vn x y z` and `f` records.

use std::fmt::Write as _;
use std::path::Path;

use super::{vertex_normals, GeometryError, Mesh, Vec3};

const DEFAULT_COLOR: [f64; 3] = [0.8, 0.8, 0.8];
const IGNORED_RECORDS: [&str; 7] = ["vt", "o", "g", "s", "usemtl", "mtllib", "vp"];

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh, GeometryError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => GeometryError::FileNotFound(path.display().to_string()),
        _ => GeometryError::Io(format!("{}: {e}", path.display())),
    })?;
    parse_obj(&text)
}

fn parse_err(line: usize, message: impl Into<String>) -> GeometryError {
    GeometryError::ParseError {
        line,
        message: message.into(),
    }
}

fn parse_floats(line: usize, fields: &[&str]) -> Result<Vec<f64>, GeometryError> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("bad number {f:?}")))
        })
        .collect()
}

/// Resolves a 1-based (or negative, relative) OBJ index against `count`.
fn resolve_index(
    line: usize,
    token: &str,
    count: usize,
    what: &str,
) -> Result<usize, GeometryError> {
    let raw: i64 = token
        .parse()
        .map_err(|_| parse_err(line, format!("bad {what} index {token:?}")))?;
    let idx = match raw {
        0 => None,
        r if r > 0 => Some(r as usize - 1),
        r => count.checked_sub(r.unsigned_abs() as usize),
    };
    idx.filter(|&i| i < count).ok_or_else(|| {
        parse_err(
            line,
            format!("{what} index {raw} out of range (have {count})"),
        )
    })
}

pub fn parse_obj(text: &str) -> Result<Mesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut file_normals: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // normal index for each face corner, when given
    let mut corner_normals: Vec<[Option<usize>; 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let tag = fields.next().unwrap_or("");
        let rest: Vec<&str> = fields.collect();
        match tag {
            "v" => {
                let vals = parse_floats(line, &rest)?;
                match vals.len() {
                    3 => colors.push(DEFAULT_COLOR),
                    6 => {
                        if vals[3..].iter().any(|c| !(0.0..=1.0).contains(c)) {
                            return Err(parse_err(line, "vertex color outside [0,1]"));
                        }
                        colors.push([vals[3], vals[4], vals[5]]);
                    }
                    n => {
                        return Err(parse_err(
                            line,
                            format!("vertex needs 3 or 6 values, got {n}"),
                        ))
                    }
                }
                vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
            }
            "vn" => {
                let vals = parse_floats(line, &rest)?;
                if vals.len() != 3 {
                    return Err(parse_err(line, "normal needs 3 values"));
                }
                let n = Vec3::new(vals[0], vals[1], vals[2]);
                let len = n.norm();
                if len < 1e-12 {
                    return Err(parse_err(line, "zero-length normal"));
                }
                file_normals.push(n / len);
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(parse_err(line, "face needs at least 3 corners"));
                }
                let mut corners = Vec::with_capacity(rest.len());
                for tok in &rest {
                    let mut parts = tok.split('/');
                    let vi =
                        resolve_index(line, parts.next().unwrap_or(""), vertices.len(), "vertex")?;
                    let _texture = parts.next();
                    let ni = match parts.next() {
                        Some(s) if !s.is_empty() => {
                            Some(resolve_index(line, s, file_normals.len(), "normal")?)
                        }
                        _ => None,
                    };
                    if parts.next().is_some() {
                        return Err(parse_err(line, format!("malformed face corner {tok:?}")));
                    }
                    corners.push((vi, ni));
                }
                // fan triangulation
                for i in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[i], corners[i + 1]];
                    triangles.push(tri.map(|c| c.0 as u32));
                    corner_normals.push(tri.map(|c| c.1));
                }
            }
            t if IGNORED_RECORDS.contains(&t) => {}
            t => return Err(parse_err(line, format!("unsupported record {t:?}"))),
        }
    }

    if triangles.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }

    let all_corners_have_normals = corner_normals.iter().flatten().all(Option::is_some);
    let normals = if all_corners_have_normals {
        let mut acc = vec![Vec3::zeros(); vertices.len()];
        for (tri, ns) in triangles.iter().zip(&corner_normals) {
            for (&v, n) in tri.iter().zip(ns) {
                acc[v as usize] += file_normals[n.expect("checked above")];
            }
        }
        let computed = vertex_normals(&vertices, &triangles);
        acc.into_iter()
            .zip(computed)
            .map(|(n, fallback)| {
                let len = n.norm();
                if len > 1e-12 {
                    n / len
                } else {
                    fallback
                }
            })
            .collect()
    } else {
        vertex_normals(&vertices, &triangles)
    };

    Mesh::new(vertices, normals, colors, triangles)
}

/// Serializes a mesh with 9 significant digits per value.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str("# synthfreeze OBJ subset\n");
    for (v, c) in mesh.vertices().iter().zip(mesh.colors()) {
        let _ = writeln!(
            out,
            "v {:.8e} {:.8e} {:.8e} {:.8e} {:.8e} {:.8e}",
            v.x, v.y, v.z, c[0], c[1], c[2]
        );
    }
    for n in mesh.normals() {
        let _ = writeln!(out, "vn {:.8e} {:.8e} {:.8e}", n.x, n.y, n.z);
    }
    for t in mesh.triangles() {
        let [a, b, c] = t.map(|i| i + 1);
        let _ = writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}");
    }
    out
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    std::fs::write(path.as_ref(), write_obj(mesh)).map_err(|e| GeometryError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_primitive_mesh, PrimitiveKind};
    use proptest::prelude::*;

    #[test]
    fn one_triangle() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.vertices().len(), 3);
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
        for n in m.normals() {
            assert_eq!(*n, Vec3::z());
        }
    }

    #[test]
    fn out_of_range_face_is_parse_error() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n").unwrap_err();
        assert!(
            matches!(err, GeometryError::ParseError { line: 4, .. }),
            "{err:?}"
        );
    }

    #[test]
    fn malformed_records() {
        assert!(matches!(
            parse_obj("v 0 0\n"),
            Err(GeometryError::ParseError { line: 1, .. })
        ));
        assert!(matches!(
            parse_obj("v 0 0 x\n"),
            Err(GeometryError::ParseError { line: 1, .. })
        ));
        assert!(matches!(
            parse_obj("v 0 0 0\nbogus 1\n"),
            Err(GeometryError::ParseError { line: 2, .. })
        ));
        assert_eq!(
            parse_obj("v 0 0 0\n# nothing\n"),
            Err(GeometryError::EmptyMesh)
        );
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            load_mesh("/nonexistent/mesh.obj"),
            Err(GeometryError::FileNotFound(_))
        ));
    }

    #[test]
    fn colors_negative_indices_and_quads() {
        let m = parse_obj(
            "v 0 0 0 1 0 0\nv 1 0 0 0 1 0\nv 1 1 0 0 0 1\nv 0 1 0 1 1 1\nf -4 -3 -2 -1\n",
        )
        .unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.colors()[1], [0.0, 1.0, 0.0]);
    }

    #[test]
    fn explicit_normals_are_used() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 -2\nf 1//1 2//1 3//1\n").unwrap();
        assert!(m.normals().iter().all(|n| *n == -Vec3::z()));
    }

    /// Brute force: for each vertex scan every face and add the face's
    /// cross product when the face touches the vertex.
    fn accumulate_normals_oracle(m: &Mesh) -> Vec<Vec3> {
        (0..m.vertices().len())
            .map(|vi| {
                let mut sum = Vec3::zeros();
                for t in m.triangles() {
                    if t.contains(&(vi as u32)) {
                        let p = t.map(|i| m.vertices()[i as usize]);
                        sum += (p[1] - p[0]).cross(&(p[2] - p[0]));
                    }
                }
                sum.normalize()
            })
            .collect()
    }

    #[test]
    fn cube_normals_match_accumulation_oracle() {
        let cube = make_primitive_mesh(&PrimitiveKind::Cube { edge: 1.0 }, [0.5; 3]).unwrap();
        let mut text = String::new();
        for v in cube.vertices() {
            text += &format!("v {} {} {}\n", v.x, v.y, v.z);
        }
        for t in cube.triangles() {
            text += &format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1);
        }
        let loaded = parse_obj(&text).unwrap();
        assert_eq!(loaded.triangles().len(), 12);
        let oracle = accumulate_normals_oracle(&loaded);
        for ((a, b), v) in loaded.normals().iter().zip(&oracle).zip(loaded.vertices()) {
            assert!((a - b).norm() < 1e-12);
            assert!(a.dot(v) > 0.0);
        }
    }

    proptest! {
        #[test]
        fn nine_digit_positions_round_trip(coords in proptest::collection::vec(-1000.0f64..1000.0, 9)) {
            // quantize to 9 significant digits first
            let q: Vec<f64> = coords.iter().map(|c| format!("{c:.8e}").parse().unwrap()).collect();
            let vs: Vec<Vec3> = q.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            let mesh = Mesh::with_computed_normals(vs, vec![[0.25; 3]; 3], vec![[0, 1, 2]]).unwrap();
            let back = parse_obj(&write_obj(&mesh)).unwrap();
            prop_assert_eq!(back.vertices(), mesh.vertices());
            prop_assert_eq!(back.colors(), mesh.colors());
        }
    }
}
