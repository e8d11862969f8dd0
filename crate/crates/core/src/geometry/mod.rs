//! Meshes, rigid poses, pinhole projection and projected bounding boxes.
//!
//! All geometry is `f64`. The camera frame follows the computer-vision
//! convention: +X right, +Y down, +Z along the optical axis, so a point is
//! visible when its camera-frame depth is positive.

mod obj;
mod primitives;

pub use obj::{load_mesh, parse_obj, save_mesh, write_obj};
pub use primitives::{make_primitive_mesh, PrimitiveKind};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Depth below which a camera-frame point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("mesh file not found: {0}")]
    FileNotFound(String),
    #[error("parse error on line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("point is behind the camera (depth {0})")]
    BehindCamera(f64),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Triangle mesh with per-vertex normals and colors.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    normals: Vec<Vec3>,
    colors: Vec<[f64; 3]>,
    triangles: Vec<[u32; 3]>,
}

impl Mesh {
    /// Builds a mesh, checking index ranges, unit normals and color range.
    pub fn new(
        vertices: Vec<Vec3>,
        normals: Vec<Vec3>,
        colors: Vec<[f64; 3]>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self, GeometryError> {
        let n = vertices.len();
        if normals.len() != n || colors.len() != n {
            return Err(GeometryError::InvalidMesh(format!(
                "{} vertices but {} normals and {} colors",
                n,
                normals.len(),
                colors.len()
            )));
        }
        if let Some(t) = triangles
            .iter()
            .find(|t| t.iter().any(|&i| i as usize >= n))
        {
            return Err(GeometryError::InvalidMesh(format!(
                "triangle {t:?} indexes past {n} vertices"
            )));
        }
        if let Some((i, nrm)) = normals
            .iter()
            .enumerate()
            .find(|(_, v)| (v.norm() - 1.0).abs() > 1e-6)
        {
            return Err(GeometryError::InvalidMesh(format!(
                "normal {i} has length {}",
                nrm.norm()
            )));
        }
        if colors.iter().flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(GeometryError::InvalidMesh("color outside [0,1]".into()));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(GeometryError::InvalidMesh("non-finite vertex".into()));
        }
        Ok(Self {
            vertices,
            normals,
            colors,
            triangles,
        })
    }

    /// Builds a mesh whose normals are computed with [`vertex_normals`].
    pub fn with_computed_normals(
        vertices: Vec<Vec3>,
        colors: Vec<[f64; 3]>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self, GeometryError> {
        let normals = vertex_normals(&vertices, &triangles);
        Self::new(vertices, normals, colors, triangles)
    }

    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            normals: Vec::new(),
            colors: Vec::new(),
            triangles: Vec::new(),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    /// Largest vertex distance from the origin.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Returns a copy with every vertex color replaced.
    pub fn recolored(&self, color: [f64; 3]) -> Result<Self, GeometryError> {
        Self::new(
            self.vertices.clone(),
            self.normals.clone(),
            vec![color; self.vertices.len()],
            self.triangles.clone(),
        )
    }
}

/// Area-weighted vertex normals: each face adds its unnormalized cross
/// product (twice its area times the unit normal) to its three vertices.
/// Vertices touched by no face, or whose sum vanishes, get +Z.
pub fn vertex_normals(vertices: &[Vec3], triangles: &[[u32; 3]]) -> Vec<Vec3> {
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    for t in triangles {
        let [a, b, c] = t.map(|i| vertices[i as usize]);
        let n = (b - a).cross(&(c - a));
        for &i in t {
            acc[i as usize] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 1e-300 {
                n / len
            } else {
                Vec3::z()
            }
        })
        .collect()
}

/// Rigid transform from object frame to camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        let err = (rotation.transpose() * rotation - Mat3::identity()).amax();
        if !(err < 1e-9) || rotation.determinant() <= 0.0 {
            return Err(GeometryError::InvalidParam(format!(
                "rotation is not proper orthonormal (|RᵀR − I|∞ = {err:e})"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Object-frame point to camera frame.
    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Rotation in row-major order.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
        ]
    }

    pub fn from_row_major(
        rotation: [f64; 9],
        translation: [f64; 3],
    ) -> Result<Self, GeometryError> {
        Self::new(Mat3::from_row_slice(&rotation), Vec3::from(translation))
    }
}

/// Pinhole intrinsics. Pixel centers sit at half-integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::InvalidParam(
                "focal lengths must be positive".into(),
            ));
        }
        if self.width < 1 || self.height < 1 {
            return Err(GeometryError::InvalidParam(
                "image size must be at least 1x1".into(),
            ));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(GeometryError::InvalidParam(
                "principal point must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Same focal lengths scaled, principal point at the image center.
    pub fn centered(focal: f64, width: u32, height: u32) -> Self {
        Self {
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox2D {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        debug_assert!(x_min <= x_max && y_min <= y_max);
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    /// From the `[x_min, y_min, width, height]` annotation convention.
    pub fn from_xywh(b: [f64; 4]) -> Self {
        Self::new(b[0], b[1], b[0] + b[2], b[1] + b[3])
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn is_valid(&self) -> bool {
        [self.x_min, self.y_min, self.x_max, self.y_max]
            .iter()
            .all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn clip(&self, width: u32, height: u32) -> Self {
        let (w, h) = (width as f64, height as f64);
        let x_min = self.x_min.clamp(0.0, w);
        let y_min = self.y_min.clamp(0.0, h);
        Self {
            x_min,
            y_min,
            x_max: self.x_max.clamp(x_min, w),
            y_max: self.y_max.clamp(y_min, h),
        }
    }

    pub fn expand(&self, margin: f64) -> Self {
        Self {
            x_min: self.x_min - margin,
            y_min: self.y_min - margin,
            x_max: self.x_max + margin,
            y_max: self.y_max + margin,
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x_min: self.x_min + dx,
            y_min: self.y_min + dy,
            x_max: self.x_max + dx,
            y_max: self.y_max + dy,
        }
    }

    pub fn contains(&self, other: &BBox2D) -> bool {
        other.x_min >= self.x_min
            && other.y_min >= self.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }
}

/// Projects an object-frame point; returns pixel coordinates and depth.
pub fn project_point(
    k: &CameraIntrinsics,
    pose: &Pose,
    p: &Vec3,
) -> Result<(f64, f64, f64), GeometryError> {
    project_camera_point(k, &pose.transform(p))
}

/// Projects a point already expressed in the camera frame.
pub fn project_camera_point(
    k: &CameraIntrinsics,
    q: &Vec3,
) -> Result<(f64, f64, f64), GeometryError> {
    if q.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera(q.z));
    }
    Ok((k.fx * q.x / q.z + k.cx, k.fy * q.y / q.z + k.cy, q.z))
}

/// Box spanned by all projected vertices, clipped to the image.
pub fn vertex_bbox(
    mesh: &Mesh,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<BBox2D, GeometryError> {
    vertex_bbox_unclipped(mesh, pose, k).map(|b| b.clip(k.width, k.height))
}

pub fn vertex_bbox_unclipped(
    mesh: &Mesh,
    pose: &Pose,
    k: &CameraIntrinsics,
) -> Result<BBox2D, GeometryError> {
    if mesh.vertices.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    let mut b = BBox2D {
        x_min: f64::INFINITY,
        y_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for v in &mesh.vertices {
        let (u, w, _) = project_point(k, pose, v)?;
        b.x_min = b.x_min.min(u);
        b.y_min = b.y_min.min(w);
        b.x_max = b.x_max.max(u);
        b.y_max = b.y_max.max(w);
    }
    Ok(b)
}
