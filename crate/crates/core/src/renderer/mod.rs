//! Software perspective rasterizer with a z-buffer and Phong shading.
//!
//! Pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`. A pixel whose
//! center falls exactly on a triangle edge is covered only when that edge is
//! a top edge (horizontal, interior below) or a left edge, so pixels on a
//! shared edge are drawn once. Normals, colors and positions are
//! interpolated with perspective-correct barycentric weights; depth is the
//! interpolated camera-frame z. Triangles are two-sided unless
//! [`RenderOptions::backface_culling`] is set.

mod shading;

pub use shading::{perturb_params, phong_shade, JitterSpec, LightSpec, PhongMaterial, Rgb};

use std::path::Path;

use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Mesh, Pose, Vec3};

/// Minimum camera-frame depth of a renderable vertex.
pub const NEAR_PLANE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("vertex {index} is behind the camera (depth {depth})")]
    BehindCamera { index: usize, depth: f64 },
    #[error("image has zero area")]
    ZeroAreaImage,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RenderOptions {
    pub backface_culling: bool,
}

/// Object layer produced by [`render`]; composited later.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderLayer {
    pub width: u32,
    pub height: u32,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
    /// 255 on covered pixels, 0 elsewhere.
    pub alpha: Vec<u8>,
    /// Camera-frame depth in meters, `+∞` where empty.
    pub depth: Vec<f64>,
}

impl RenderLayer {
    pub fn empty(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            rgb: vec![0; 3 * n],
            alpha: vec![0; n],
            depth: vec![f64::INFINITY; n],
        }
    }

    pub fn covered_count(&self) -> usize {
        self.alpha.iter().filter(|&&a| a > 0).count()
    }

    /// Inclusive pixel bounds `(x0, y0, x1, y1)` of the covered pixels.
    pub fn mask_bounds(&self) -> Option<(u32, u32, u32, u32)> {
        let w = self.width as usize;
        let mut bounds: Option<(u32, u32, u32, u32)> = None;
        for (i, _) in self.alpha.iter().enumerate().filter(|(_, &a)| a > 0) {
            let (x, y) = ((i % w) as u32, (i / w) as u32);
            bounds = Some(match bounds {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        bounds
    }

    /// Checks the alpha/depth/rgb consistency invariant.
    pub fn is_consistent(&self) -> bool {
        self.alpha
            .iter()
            .zip(&self.depth)
            .enumerate()
            .all(|(i, (&a, d))| {
                (a > 0) == d.is_finite() && (a > 0 || self.rgb[3 * i..3 * i + 3] == [0, 0, 0])
            })
    }

    /// Writes `<stem>_rgb.png` and `<stem>_alpha.png` for debugging.
    pub fn save_debug(&self, dir: &Path, stem: &str) -> image::ImageResult<()> {
        let rgb = image::RgbImage::from_raw(self.width, self.height, self.rgb.clone())
            .expect("layer buffer size");
        rgb.save(dir.join(format!("{stem}_rgb.png")))?;
        let alpha = image::GrayImage::from_raw(self.width, self.height, self.alpha.clone())
            .expect("layer buffer size");
        alpha.save(dir.join(format!("{stem}_alpha.png")))
    }
}

pub fn render(
    mesh: &Mesh,
    pose: &Pose,
    k: &CameraIntrinsics,
    material: &PhongMaterial,
    light: &LightSpec,
) -> Result<RenderLayer, RenderError> {
    render_with(mesh, pose, k, material, light, &RenderOptions::default())
}

struct ScreenVertex {
    x: f64,
    y: f64,
    /// camera-frame position
    p: Vec3,
    normal: Vec3,
    color: [f64; 3],
}

/// Edge function: positive when `p` is on the interior side of `a → b`
/// for a triangle with positive area under this convention.
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

fn is_top_left(dx: f64, dy: f64) -> bool {
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

pub fn render_with(
    mesh: &Mesh,
    pose: &Pose,
    k: &CameraIntrinsics,
    material: &PhongMaterial,
    light: &LightSpec,
    options: &RenderOptions,
) -> Result<RenderLayer, RenderError> {
    if k.width == 0 || k.height == 0 {
        return Err(RenderError::ZeroAreaImage);
    }
    let mut layer = RenderLayer::empty(k.width, k.height);
    let rot = pose.rotation();
    let mut verts = Vec::with_capacity(mesh.vertices().len());
    for (index, ((v, n), c)) in mesh
        .vertices()
        .iter()
        .zip(mesh.normals())
        .zip(mesh.colors())
        .enumerate()
    {
        let p = pose.transform(v);
        if !(p.z > NEAR_PLANE) {
            return Err(RenderError::BehindCamera { index, depth: p.z });
        }
        verts.push(ScreenVertex {
            x: k.fx * p.x / p.z + k.cx,
            y: k.fy * p.y / p.z + k.cy,
            p,
            normal: rot * n,
            color: *c,
        });
    }

    let w = k.width as usize;
    for tri in mesh.triangles() {
        let [mut v0, v1, mut v2] = tri.map(|i| &verts[i as usize]);
        if options.backface_culling {
            let g = (v1.p - v0.p).cross(&(v2.p - v0.p));
            if g.dot(&(-v0.p)) <= 0.0 {
                continue;
            }
        }
        let mut area = edge(v0.x, v0.y, v1.x, v1.y, v2.x, v2.y);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            std::mem::swap(&mut v0, &mut v2);
            area = -area;
        }
        let x_lo = (v0.x.min(v1.x).min(v2.x) - 0.5).ceil().max(0.0);
        let x_hi = (v0.x.max(v1.x).max(v2.x) - 0.5)
            .floor()
            .min(k.width as f64 - 1.0);
        let y_lo = (v0.y.min(v1.y).min(v2.y) - 0.5).ceil().max(0.0);
        let y_hi = (v0.y.max(v1.y).max(v2.y) - 0.5)
            .floor()
            .min(k.height as f64 - 1.0);
        if x_lo > x_hi || y_lo > y_hi {
            continue;
        }
        // edges opposite v0, v1, v2
        let edges = [(v1, v2), (v2, v0), (v0, v1)];
        let bias: [bool; 3] = edges.map(|(a, b)| is_top_left(b.x - a.x, b.y - a.y));
        let inv_z = [1.0 / v0.p.z, 1.0 / v1.p.z, 1.0 / v2.p.z];
        for py in y_lo as usize..=y_hi as usize {
            let sy = py as f64 + 0.5;
            for px in x_lo as usize..=x_hi as usize {
                let sx = px as f64 + 0.5;
                let mut bary = [0.0; 3];
                let mut inside = true;
                for (e, ((a, b), &top_left)) in edges.iter().zip(&bias).enumerate() {
                    let wv = edge(a.x, a.y, b.x, b.y, sx, sy);
                    if wv < 0.0 || (wv == 0.0 && !top_left) {
                        inside = false;
                        break;
                    }
                    bary[e] = wv / area;
                }
                if !inside {
                    continue;
                }
                let lambda = [bary[0] * inv_z[0], bary[1] * inv_z[1], bary[2] * inv_z[2]];
                let sum = lambda[0] + lambda[1] + lambda[2];
                let z = 1.0 / sum;
                let idx = py * w + px;
                if !(z < layer.depth[idx]) {
                    continue;
                }
                let wts = lambda.map(|l| l / sum);
                let interp = |f: &dyn Fn(&ScreenVertex) -> Vec3| {
                    f(v0) * wts[0] + f(v1) * wts[1] + f(v2) * wts[2]
                };
                let position = interp(&|v| v.p);
                let mut normal = interp(&|v| v.normal);
                let color = interp(&|v| Vec3::from(v.color));
                let view = (-position).normalize();
                let len = normal.norm();
                normal = if len > 1e-12 { normal / len } else { view };
                if normal.dot(&view) < 0.0 {
                    normal = -normal;
                }
                let base = [color.x, color.y, color.z].map(|c| c.clamp(0.0, 1.0));
                let shaded = phong_shade(&normal, &view, light, material, &base);
                layer.depth[idx] = z;
                layer.alpha[idx] = 255;
                for c in 0..3 {
                    layer.rgb[3 * idx + c] = to_byte(shaded[c]);
                }
            }
        }
    }
    Ok(layer)
}

pub(crate) fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{make_primitive_mesh, PrimitiveKind};
    use crate::viewsampler::look_at_pose;

    fn k64() -> CameraIntrinsics {
        CameraIntrinsics::new(64.0, 64.0, 32.0, 32.0, 64, 64).unwrap()
    }

    fn flat_triangle(pts: [[f64; 3]; 3], color: [f64; 3]) -> Mesh {
        Mesh::with_computed_normals(
            pts.iter().map(|p| Vec3::from(*p)).collect(),
            vec![color; 3],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn empty_mesh_gives_empty_layer() {
        let layer = render(
            &Mesh::empty(),
            &Pose::identity(),
            &k64(),
            &PhongMaterial::default(),
            &LightSpec::default(),
        )
        .unwrap();
        assert_eq!(layer.covered_count(), 0);
        assert!(layer.is_consistent());
    }

    #[test]
    fn near_triangle_wins_overlap() {
        let near = flat_triangle(
            [[-0.5, -0.5, 1.0], [0.5, -0.5, 1.0], [0.0, 0.5, 1.0]],
            [1.0, 0.0, 0.0],
        );
        let far = flat_triangle(
            [[-1.0, -1.0, 2.0], [1.0, -1.0, 2.0], [0.0, 1.0, 2.0]],
            [0.0, 0.0, 1.0],
        );
        let material = PhongMaterial {
            ambient: [1.0; 3],
            diffuse: [0.0; 3],
            specular: [0.0; 3],
            shininess: 1.0,
        };
        // draw order must not matter
        for (a, b) in [(&near, &far), (&far, &near)] {
            let mut verts: Vec<Vec3> = a.vertices().to_vec();
            verts.extend(b.vertices());
            let mesh = Mesh::with_computed_normals(
                verts,
                [a.colors(), b.colors()].concat(),
                vec![[0, 1, 2], [3, 4, 5]],
            )
            .unwrap();
            let layer = render(
                &mesh,
                &Pose::identity(),
                &k64(),
                &material,
                &LightSpec::default(),
            )
            .unwrap();
            let center = 32 * 64 + 32;
            assert!((layer.depth[center] - 1.0).abs() < 1e-12);
            assert_eq!(&layer.rgb[3 * center..3 * center + 3], &[255, 0, 0]);
            assert!(layer.is_consistent());
        }
    }

    #[test]
    fn shared_edges_cover_each_pixel_once() {
        // a quad split along its diagonal, sized so pixel centers land on edges
        let mesh = Mesh::with_computed_normals(
            vec![
                Vec3::new(-0.25, -0.25, 1.0),
                Vec3::new(0.25, -0.25, 1.0),
                Vec3::new(0.25, 0.25, 1.0),
                Vec3::new(-0.25, 0.25, 1.0),
            ],
            vec![[0.5; 3]; 4],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap();
        let layer = render(
            &mesh,
            &Pose::identity(),
            &k64(),
            &PhongMaterial::default(),
            &LightSpec::default(),
        )
        .unwrap();
        // 32x32 px square spanning [16, 48)
        assert_eq!(layer.covered_count(), 32 * 32);
        assert_eq!(layer.mask_bounds(), Some((16, 16, 47, 47)));
    }

    #[test]
    fn backface_culling_removes_far_side() {
        let cube =
            make_primitive_mesh(&PrimitiveKind::Cube { edge: 0.5 }, [0.6, 0.3, 0.2]).unwrap();
        let pose = look_at_pose(&Vec3::new(1.0, 1.0, 1.0).normalize(), 0.2, 2.0).unwrap();
        let m = PhongMaterial::default();
        let l = LightSpec::default();
        let two_sided = render(&cube, &pose, &k64(), &m, &l).unwrap();
        let culled = render_with(
            &cube,
            &pose,
            &k64(),
            &m,
            &l,
            &RenderOptions {
                backface_culling: true,
            },
        )
        .unwrap();
        // a closed mesh looks the same either way
        assert_eq!(two_sided.alpha, culled.alpha);
        assert_eq!(two_sided.depth, culled.depth);
        assert!(two_sided.covered_count() > 100);
    }

    #[test]
    fn behind_camera_and_zero_area() {
        let tri = flat_triangle(
            [[0.0, 0.0, -1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]],
            [0.5; 3],
        );
        let err = render(
            &tri,
            &Pose::identity(),
            &k64(),
            &PhongMaterial::default(),
            &LightSpec::default(),
        );
        assert!(matches!(
            err,
            Err(RenderError::BehindCamera { index: 0, .. })
        ));
        let k = CameraIntrinsics { width: 0, ..k64() };
        let err = render(
            &Mesh::empty(),
            &Pose::identity(),
            &k,
            &PhongMaterial::default(),
            &LightSpec::default(),
        );
        assert_eq!(err, Err(RenderError::ZeroAreaImage));
    }

    #[test]
    fn rendering_is_deterministic() {
        let torus = make_primitive_mesh(
            &PrimitiveKind::Torus {
                major_radius: 0.3,
                minor_radius: 0.1,
                major_segments: 24,
                minor_segments: 12,
            },
            [0.2, 0.7, 0.4],
        )
        .unwrap();
        let pose = look_at_pose(&Vec3::new(0.3, -0.5, 0.8).normalize(), 1.0, 1.5).unwrap();
        let a = render(
            &torus,
            &pose,
            &k64(),
            &PhongMaterial::default(),
            &LightSpec::default(),
        )
        .unwrap();
        let b = render(
            &torus,
            &pose,
            &k64(),
            &PhongMaterial::default(),
            &LightSpec::default(),
        )
        .unwrap();
        assert_eq!(a, b);
        assert!(a.is_consistent());
    }
}
