//! Closed primitive meshes centered at the origin, outward-oriented.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{vertex_normals, GeometryError, Mesh, Vec3};
use crate::viewsampler::subdivided_icosahedron_mesh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PrimitiveKind {
    Cube {
        edge: f64,
    },
    /// Axis along Z.
    Cylinder {
        radius: f64,
        height: f64,
        segments: u32,
    },
    /// Apex at +Z.
    Cone {
        radius: f64,
        height: f64,
        segments: u32,
    },
    /// Lies in the XY plane.
    Torus {
        major_radius: f64,
        minor_radius: f64,
        major_segments: u32,
        minor_segments: u32,
    },
    Icosphere {
        radius: f64,
        level: u32,
    },
}

fn positive(name: &str, v: f64) -> Result<(), GeometryError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::InvalidParam(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

fn at_least_three(name: &str, n: u32) -> Result<(), GeometryError> {
    if n >= 3 {
        Ok(())
    } else {
        Err(GeometryError::InvalidParam(format!(
            "{name} must be at least 3, got {n}"
        )))
    }
}

impl PrimitiveKind {
    pub fn validate(&self) -> Result<(), GeometryError> {
        match *self {
            PrimitiveKind::Cube { edge } => positive("edge", edge),
            PrimitiveKind::Cylinder {
                radius,
                height,
                segments,
            }
            | PrimitiveKind::Cone {
                radius,
                height,
                segments,
            } => {
                positive("radius", radius)?;
                positive("height", height)?;
                at_least_three("segments", segments)
            }
            PrimitiveKind::Torus {
                major_radius,
                minor_radius,
                major_segments,
                minor_segments,
            } => {
                positive("major_radius", major_radius)?;
                positive("minor_radius", minor_radius)?;
                if minor_radius >= major_radius {
                    return Err(GeometryError::InvalidParam(
                        "minor_radius must be below major_radius".into(),
                    ));
                }
                at_least_three("major_segments", major_segments)?;
                at_least_three("minor_segments", minor_segments)
            }
            PrimitiveKind::Icosphere { radius, level } => {
                positive("radius", radius)?;
                if level > 6 {
                    return Err(GeometryError::InvalidParam(format!(
                        "icosphere level {level} above 6"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Largest distance from the origin of the ideal (untessellated) shape.
    pub fn analytic_radius(&self) -> f64 {
        match *self {
            PrimitiveKind::Cube { edge } => edge * 3f64.sqrt() / 2.0,
            PrimitiveKind::Cylinder { radius, height, .. }
            | PrimitiveKind::Cone { radius, height, .. } => {
                (radius * radius + height * height / 4.0).sqrt()
            }
            PrimitiveKind::Torus {
                major_radius,
                minor_radius,
                ..
            } => major_radius + minor_radius,
            PrimitiveKind::Icosphere { radius, .. } => radius,
        }
    }
}

pub fn make_primitive_mesh(kind: &PrimitiveKind, color: [f64; 3]) -> Result<Mesh, GeometryError> {
    kind.validate()?;
    let (vertices, triangles, normals) = match *kind {
        PrimitiveKind::Cube { edge } => {
            let h = edge / 2.0;
            // bit 0 → x, bit 1 → y, bit 2 → z
            let vertices: Vec<Vec3> = (0..8)
                .map(|i| {
                    let s = |bit: u32| if i & (1 << bit) != 0 { h } else { -h };
                    Vec3::new(s(0), s(1), s(2))
                })
                .collect();
            let quads = [
                [0, 4, 6, 2],
                [1, 3, 7, 5],
                [0, 1, 5, 4],
                [2, 6, 7, 3],
                [0, 2, 3, 1],
                [4, 5, 7, 6],
            ];
            (vertices, quads_to_triangles(&quads), None)
        }
        PrimitiveKind::Cylinder {
            radius,
            height,
            segments,
        } => {
            let n = segments;
            let ring = |z: f64| (0..n).map(move |i| circle_point(radius, i, n, z));
            let mut vertices: Vec<Vec3> = ring(-height / 2.0).chain(ring(height / 2.0)).collect();
            vertices.push(Vec3::new(0.0, 0.0, -height / 2.0));
            vertices.push(Vec3::new(0.0, 0.0, height / 2.0));
            let (bc, tc) = (2 * n, 2 * n + 1);
            let mut triangles = Vec::new();
            for i in 0..n {
                let j = (i + 1) % n;
                triangles.push([i, j, n + j]);
                triangles.push([i, n + j, n + i]);
                triangles.push([tc, n + i, n + j]);
                triangles.push([bc, j, i]);
            }
            (vertices, triangles, None)
        }
        PrimitiveKind::Cone {
            radius,
            height,
            segments,
        } => {
            let n = segments;
            let mut vertices: Vec<Vec3> = (0..n)
                .map(|i| circle_point(radius, i, n, -height / 2.0))
                .collect();
            vertices.push(Vec3::new(0.0, 0.0, height / 2.0));
            vertices.push(Vec3::new(0.0, 0.0, -height / 2.0));
            let (apex, bc) = (n, n + 1);
            let mut triangles = Vec::new();
            for i in 0..n {
                let j = (i + 1) % n;
                triangles.push([i, j, apex]);
                triangles.push([bc, j, i]);
            }
            (vertices, triangles, None)
        }
        PrimitiveKind::Torus {
            major_radius,
            minor_radius,
            major_segments,
            minor_segments,
        } => {
            let (m, n) = (major_segments, minor_segments);
            let mut vertices = Vec::with_capacity((m * n) as usize);
            let mut normals = Vec::with_capacity((m * n) as usize);
            for i in 0..m {
                let u = TAU * i as f64 / m as f64;
                for j in 0..n {
                    let v = TAU * j as f64 / n as f64;
                    let rho = major_radius + minor_radius * v.cos();
                    vertices.push(Vec3::new(
                        rho * u.cos(),
                        rho * u.sin(),
                        minor_radius * v.sin(),
                    ));
                    normals
                        .push(Vec3::new(v.cos() * u.cos(), v.cos() * u.sin(), v.sin()).normalize());
                }
            }
            let idx = |i: u32, j: u32| (i % m) * n + (j % n);
            let quads: Vec<[u32; 4]> = (0..m)
                .flat_map(|i| {
                    (0..n)
                        .map(move |j| [idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)])
                })
                .collect();
            (vertices, quads_to_triangles(&quads), Some(normals))
        }
        PrimitiveKind::Icosphere { radius, level } => {
            let (dirs, triangles) = subdivided_icosahedron_mesh(level);
            let vertices = dirs.iter().map(|d| d * radius).collect();
            (vertices, triangles, Some(dirs))
        }
    };
    let normals = normals.unwrap_or_else(|| vertex_normals(&vertices, &triangles));
    let colors = vec![color; vertices.len()];
    Mesh::new(vertices, normals, colors, triangles)
}

fn circle_point(radius: f64, i: u32, n: u32, z: f64) -> Vec3 {
    let a = TAU * i as f64 / n as f64;
    Vec3::new(radius * a.cos(), radius * a.sin(), z)
}

fn quads_to_triangles(quads: &[[u32; 4]]) -> Vec<[u32; 3]> {
    quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;
    use std::f64::consts::PI;

    /// Divergence theorem: sum of signed tetrahedra against the origin.
    fn signed_volume(m: &Mesh) -> f64 {
        m.triangles()
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| m.vertices()[i as usize]);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Every undirected edge shared by exactly two triangles, with opposite
    /// directions.
    fn is_watertight(m: &Mesh) -> bool {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for t in m.triangles() {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &count)| count == 1 && directed.get(&(b, a)) == Some(&1))
    }

    #[test]
    fn cube() {
        let kind = PrimitiveKind::Cube { edge: 1.0 };
        let m = make_primitive_mesh(&kind, [0.2, 0.4, 0.6]).unwrap();
        assert_eq!(m.vertices().len(), 8);
        assert_eq!(m.triangles().len(), 12);
        assert!((m.bounding_radius() - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!((signed_volume(&m) - 1.0).abs() < 1e-12);
        assert!(is_watertight(&m));
    }

    #[test]
    fn cylinder() {
        let kind = PrimitiveKind::Cylinder {
            radius: 0.5,
            height: 1.0,
            segments: 16,
        };
        let m = make_primitive_mesh(&kind, [0.5; 3]).unwrap();
        assert!((m.bounding_radius() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((kind.analytic_radius() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(is_watertight(&m));
        // inscribed 16-gon prism
        let expected = 8.0 * 0.25 * (TAU / 16.0).sin();
        assert!((signed_volume(&m) - expected).abs() < 1e-12);
    }

    #[test]
    fn cone_and_icosphere() {
        let cone = PrimitiveKind::Cone {
            radius: 0.3,
            height: 0.8,
            segments: 24,
        };
        let m = make_primitive_mesh(&cone, [0.5; 3]).unwrap();
        assert!(is_watertight(&m));
        assert!((m.bounding_radius() - cone.analytic_radius()).abs() < 1e-12);
        assert!(signed_volume(&m) > 0.0);

        let sphere = PrimitiveKind::Icosphere {
            radius: 0.4,
            level: 2,
        };
        let m = make_primitive_mesh(&sphere, [0.5; 3]).unwrap();
        assert!(is_watertight(&m));
        assert_eq!(m.vertices().len(), 162);
        assert!((m.bounding_radius() - 0.4).abs() < 1e-12);
        let v = signed_volume(&m);
        assert!(v > 0.0 && v < 4.0 / 3.0 * PI * 0.064);
    }

    fn torus(m: u32, n: u32) -> (PrimitiveKind, Mesh) {
        let kind = PrimitiveKind::Torus {
            major_radius: 1.0,
            minor_radius: 0.25,
            major_segments: m,
            minor_segments: n,
        };
        let mesh = make_primitive_mesh(&kind, [0.5; 3]).unwrap();
        (kind, mesh)
    }

    #[test]
    fn torus_volume_matches_inscribed_closed_form() {
        for (m, n) in [(32, 16), (64, 32), (12, 5)] {
            let (kind, mesh) = torus(m, n);
            assert!(is_watertight(&mesh));
            assert!((mesh.bounding_radius() - kind.analytic_radius()).abs() < 1e-12);
            // vertices lie on the surface, so the mesh is the inscribed ring
            // polyhedron: M sin(2π/M) R · (N/2) sin(2π/N) r²
            let (mf, nf) = (m as f64, n as f64);
            let closed = mf * (TAU / mf).sin() * 1.0 * (nf / 2.0) * (TAU / nf).sin() * 0.0625;
            assert!((signed_volume(&mesh) - closed).abs() < 1e-12 * closed);
        }
    }

    #[test]
    fn torus_volume_against_analytic() {
        let analytic = 2.0 * PI * PI * 1.0 * 0.0625;
        let rel = |mesh: &Mesh| (signed_volume(mesh) - analytic).abs() / analytic;
        // inscribed 32x16 tessellation loses 3.2% of the volume
        let coarse = rel(&torus(32, 16).1);
        assert!((coarse - 0.0317).abs() < 5e-4, "{coarse}");
        assert!(rel(&torus(64, 32).1) < 0.02);
    }

    #[test]
    fn invalid_params() {
        assert!(matches!(
            make_primitive_mesh(&PrimitiveKind::Cube { edge: 0.0 }, [0.5; 3]),
            Err(GeometryError::InvalidParam(_))
        ));
        assert!(make_primitive_mesh(
            &PrimitiveKind::Cylinder {
                radius: -1.0,
                height: 1.0,
                segments: 8
            },
            [0.5; 3]
        )
        .is_err());
        assert!(make_primitive_mesh(
            &PrimitiveKind::Cone {
                radius: 1.0,
                height: 1.0,
                segments: 2
            },
            [0.5; 3]
        )
        .is_err());
    }
}
