//! Training pose space: view directions from a subdivided icosahedron,
//! equally spaced in-plane rotations and geometrically spaced distances.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Mat3, Pose, Vec3};

pub const MAX_SUBDIVISION_LEVEL: u32 = 6;

#[derive(Debug, Error, PartialEq)]
pub enum ViewError {
    #[error("subdivision level {0} exceeds {MAX_SUBDIVISION_LEVEL}")]
    LevelTooLarge(u32),
    #[error("invalid distance range: {0}")]
    InvalidRange(String),
    #[error("direction is not unit length (|d| = {0})")]
    NonUnitDirection(f64),
    #[error("invalid pose grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSphere {
    pub level: u32,
    pub directions: Vec<Vec3>,
}

const ICOSAHEDRON_FACES: [[u32; 3]; 20] = [
    [0, 11, 5],
    [0, 5, 1],
    [0, 1, 7],
    [0, 7, 10],
    [0, 10, 11],
    [1, 5, 9],
    [5, 11, 4],
    [11, 10, 2],
    [10, 7, 6],
    [7, 1, 8],
    [3, 9, 4],
    [3, 4, 2],
    [3, 2, 6],
    [3, 6, 8],
    [3, 8, 9],
    [4, 9, 5],
    [2, 4, 11],
    [6, 2, 10],
    [8, 6, 7],
    [9, 8, 1],
];

fn icosahedron_vertices() -> Vec<Vec3> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::from(*v).normalize())
    .collect()
}

/// Unit-sphere vertices and outward triangles after `level` midpoint
/// subdivisions of the regular icosahedron. Callers validate the level.
pub(crate) fn subdivided_icosahedron_mesh(level: u32) -> (Vec<Vec3>, Vec<[u32; 3]>) {
    let mut vertices = icosahedron_vertices();
    let mut faces = ICOSAHEDRON_FACES.to_vec();
    for _ in 0..level {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = (vertices[a as usize] + vertices[b as usize]).normalize();
                vertices.push(m);
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (vertices, faces)
}

/// Vertex directions of the icosahedron subdivided `level` times;
/// `10·4^level + 2` of them.
pub fn subdivide_icosahedron(level: u32) -> Result<ViewSphere, ViewError> {
    if level > MAX_SUBDIVISION_LEVEL {
        return Err(ViewError::LevelTooLarge(level));
    }
    let (directions, _) = subdivided_icosahedron_mesh(level);
    Ok(ViewSphere { level, directions })
}

/// `n` distances from `d_min` to `d_max` with a constant ratio between
/// neighbors.
pub fn log_distances(d_min: f64, d_max: f64, n: u32) -> Result<Vec<f64>, ViewError> {
    if !(d_min > 0.0 && d_max >= d_min && d_max.is_finite()) {
        return Err(ViewError::InvalidRange(format!(
            "need 0 < d_min <= d_max, got [{d_min}, {d_max}]"
        )));
    }
    match n {
        0 => Err(ViewError::InvalidRange("need at least one distance".into())),
        1 if d_min != d_max => Err(ViewError::InvalidRange(
            "a single distance level requires d_min == d_max".into(),
        )),
        1 => Ok(vec![d_min]),
        _ => {
            let ratio = d_max / d_min;
            let last = (n - 1) as f64;
            Ok((0..n)
                .map(|i| {
                    if i == n - 1 {
                        d_max
                    } else {
                        d_min * ratio.powf(i as f64 / last)
                    }
                })
                .collect())
        }
    }
}

/// Pose that views the object from `direction` (object frame, pointing from
/// the object toward the camera) at `distance`, then rolls the image by
/// `in_plane` radians about the optical axis.
///
/// The object origin lands at `(0, 0, distance)` in the camera frame. The
/// image "up" follows world +Z, or +X when the view is within 1e-6 of the
/// Z axis.
pub fn look_at_pose(direction: &Vec3, in_plane: f64, distance: f64) -> Result<Pose, ViewError> {
    let len = direction.norm();
    if !((len - 1.0).abs() <= 1e-6) {
        return Err(ViewError::NonUnitDirection(len));
    }
    if !(distance > 0.0 && distance.is_finite()) {
        return Err(ViewError::InvalidRange(format!(
            "distance must be positive, got {distance}"
        )));
    }
    let dir = direction / len;
    let up = if dir.z.abs() > 1.0 - 1e-6 {
        Vec3::x()
    } else {
        Vec3::z()
    };
    let forward = -dir;
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    let base = Mat3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    let (s, c) = in_plane.sin_cos();
    let roll = Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
    let rotation = roll * base;
    Pose::new(rotation, Vec3::new(0.0, 0.0, distance))
        .map_err(|e| ViewError::InvalidGrid(format!("degenerate look-at rotation: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseGridSpec {
    pub subdivision_level: u32,
    pub in_plane_count: u32,
    /// Degrees, half-open `[lo, hi)`.
    pub in_plane_range: [f64; 2],
    pub distance_min: f64,
    pub distance_max: f64,
    pub scale_levels: u32,
    #[serde(default)]
    pub hemisphere_only: bool,
}

impl Default for PoseGridSpec {
    fn default() -> Self {
        Self {
            subdivision_level: 2,
            in_plane_count: 8,
            in_plane_range: [0.0, 360.0],
            distance_min: 1.0,
            distance_max: 2.0,
            scale_levels: 3,
            hemisphere_only: false,
        }
    }
}

impl PoseGridSpec {
    pub fn validate(&self) -> Result<(), ViewError> {
        if self.subdivision_level > MAX_SUBDIVISION_LEVEL {
            return Err(ViewError::LevelTooLarge(self.subdivision_level));
        }
        if self.in_plane_count < 1 {
            return Err(ViewError::InvalidGrid(
                "in_plane_count must be at least 1".into(),
            ));
        }
        if self.scale_levels < 1 {
            return Err(ViewError::InvalidGrid(
                "scale_levels must be at least 1".into(),
            ));
        }
        let [lo, hi] = self.in_plane_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(ViewError::InvalidGrid(format!(
                "bad in_plane_range [{lo}, {hi}]"
            )));
        }
        if !(self.distance_min > 0.0 && self.distance_max >= self.distance_min) {
            return Err(ViewError::InvalidRange(format!(
                "need 0 < distance_min <= distance_max, got [{}, {}]",
                self.distance_min, self.distance_max
            )));
        }
        Ok(())
    }

    /// In-plane angles in radians: `lo + (hi − lo)·k / count`.
    pub fn in_plane_angles(&self) -> Vec<f64> {
        let [lo, hi] = self.in_plane_range;
        (0..self.in_plane_count)
            .map(|k| (lo + (hi - lo) * k as f64 / self.in_plane_count as f64).to_radians())
            .collect()
    }

    pub fn distances(&self) -> Result<Vec<f64>, ViewError> {
        let (lo, hi) = if self.scale_levels == 1 {
            (self.distance_min, self.distance_min)
        } else {
            (self.distance_min, self.distance_max)
        };
        log_distances(lo, hi, self.scale_levels)
    }

    pub fn directions(&self) -> Result<Vec<Vec3>, ViewError> {
        let sphere = subdivide_icosahedron(self.subdivision_level)?;
        Ok(sphere
            .directions
            .into_iter()
            .filter(|d| !self.hemisphere_only || d.z >= 0.0)
            .collect())
    }
}

/// The full pose grid: direction-major, then in-plane angle, then distance.
pub fn enumerate_poses(spec: &PoseGridSpec) -> Result<Vec<Pose>, ViewError> {
    spec.validate()?;
    let directions = spec.directions()?;
    let angles = spec.in_plane_angles();
    let distances = spec.distances()?;
    let mut poses = Vec::with_capacity(directions.len() * angles.len() * distances.len());
    for d in &directions {
        for &a in &angles {
            for &z in &distances {
                poses.push(look_at_pose(d, a, z)?);
            }
        }
    }
    Ok(poses)
}

/// Approximate projected diameter in pixels of a sphere of `radius` at each
/// distance, for checking how pixel coverage changes between scale levels.
pub fn pixel_coverage(radius: f64, focal: f64, distances: &[f64]) -> Vec<f64> {
    distances.iter().map(|d| 2.0 * focal * radius / d).collect()
}
