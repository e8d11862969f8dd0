use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;

pub type Rgb = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhongMaterial {
    pub ambient: Rgb,
    pub diffuse: Rgb,
    pub specular: Rgb,
    pub shininess: f64,
}

impl Default for PhongMaterial {
    fn default() -> Self {
        Self {
            ambient: [0.25; 3],
            diffuse: [0.65; 3],
            specular: [0.25; 3],
            shininess: 16.0,
        }
    }
}

impl PhongMaterial {
    pub fn validate(&self) -> Result<(), String> {
        let coeffs = self
            .ambient
            .iter()
            .chain(&self.diffuse)
            .chain(&self.specular);
        if coeffs.clone().any(|c| !(0.0..=1.0).contains(c)) {
            return Err("material coefficients must lie in [0, 1]".into());
        }
        if !(self.shininess > 0.0 && self.shininess.is_finite()) {
            return Err("shininess must be positive".into());
        }
        Ok(())
    }
}

/// Directional light in the camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSpec {
    /// Unit vector from the surface toward the light.
    pub direction: [f64; 3],
    pub color: Rgb,
    pub ambient_color: Rgb,
}

impl Default for LightSpec {
    fn default() -> Self {
        let d = Vec3::new(0.3, -0.5, -0.8).normalize();
        Self {
            direction: [d.x, d.y, d.z],
            color: [1.0; 3],
            ambient_color: [1.0; 3],
        }
    }
}

impl LightSpec {
    pub fn direction(&self) -> Vec3 {
        Vec3::from(self.direction)
    }

    pub fn validate(&self) -> Result<(), String> {
        if (self.direction().norm() - 1.0).abs() > 1e-6 {
            return Err("light direction must be unit length".into());
        }
        if self
            .color
            .iter()
            .chain(&self.ambient_color)
            .any(|c| !(0.0..=1.0).contains(c))
        {
            return Err("light colors must lie in [0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterSpec {
    /// Relative half-range applied multiplicatively to every material coefficient.
    pub material_jitter: f64,
    /// Absolute half-range added to each light color channel.
    pub light_color_jitter: f64,
    /// Degrees; the light direction is redrawn uniformly inside this cone.
    pub light_cone_angle: f64,
}

impl Default for JitterSpec {
    fn default() -> Self {
        Self {
            material_jitter: 0.1,
            light_color_jitter: 0.1,
            light_cone_angle: 30.0,
        }
    }
}

impl JitterSpec {
    pub fn none() -> Self {
        Self {
            material_jitter: 0.0,
            light_color_jitter: 0.0,
            light_cone_angle: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if ok(self.material_jitter)
            && ok(self.light_color_jitter)
            && ok(self.light_cone_angle)
            && self.light_cone_angle <= 180.0
        {
            Ok(())
        } else {
            Err("jitter half-ranges must be non-negative (cone angle at most 180°)".into())
        }
    }
}

/// Phong reflection, clamped per channel to [0, 1]. The specular term is
/// only present on the lit side (`N·L > 0`).
pub fn phong_shade(
    normal: &Vec3,
    view: &Vec3,
    light: &LightSpec,
    material: &PhongMaterial,
    base_color: &Rgb,
) -> Rgb {
    let l = light.direction();
    let n_dot_l = normal.dot(&l);
    let diffuse = n_dot_l.max(0.0);
    let specular = if n_dot_l > 0.0 {
        let reflected = 2.0 * n_dot_l * normal - l;
        reflected.dot(view).max(0.0).powf(material.shininess)
    } else {
        0.0
    };
    std::array::from_fn(|c| {
        let i = material.ambient[c] * light.ambient_color[c] * base_color[c]
            + material.diffuse[c] * diffuse * light.color[c] * base_color[c]
            + material.specular[c] * specular * light.color[c];
        i.clamp(0.0, 1.0)
    })
}

/// Random material and light perturbation. Always consumes the same number
/// of draws so streams stay aligned whatever the jitter values.
pub fn perturb_params<R: Rng + ?Sized>(
    material: &PhongMaterial,
    light: &LightSpec,
    jitter: &JitterSpec,
    rng: &mut R,
) -> (PhongMaterial, LightSpec) {
    let scale = |k: f64, rng: &mut R| {
        let f = 1.0 + jitter.material_jitter * (2.0 * rng.random::<f64>() - 1.0);
        (k * f).clamp(0.0, 1.0)
    };
    let mut m = *material;
    for coeffs in [&mut m.ambient, &mut m.diffuse, &mut m.specular] {
        for k in coeffs.iter_mut() {
            *k = scale(*k, rng);
        }
    }

    let mut l = *light;
    for c in l.color.iter_mut() {
        *c = (*c + jitter.light_color_jitter * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0);
    }

    let (u, v): (f64, f64) = (rng.random(), rng.random());
    if jitter.light_cone_angle > 0.0 {
        let axis = light.direction();
        let cos_max = jitter.light_cone_angle.to_radians().cos();
        let cos_t = 1.0 - u * (1.0 - cos_max);
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        let phi = std::f64::consts::TAU * v;
        let helper = if axis.x.abs() < 0.9 {
            Vec3::x()
        } else {
            Vec3::y()
        };
        let e1 = axis.cross(&helper).normalize();
        let e2 = axis.cross(&e1);
        let d = (axis * cos_t + (e1 * phi.cos() + e2 * phi.sin()) * sin_t).normalize();
        l.direction = [d.x, d.y, d.z];
    }
    (m, l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Mat3;
    use nalgebra::Rotation3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn light_along(d: Vec3) -> LightSpec {
        LightSpec {
            direction: [d.x, d.y, d.z],
            color: [1.0; 3],
            ambient_color: [1.0; 3],
        }
    }

    #[test]
    fn back_lit_is_pure_ambient() {
        let m = PhongMaterial {
            ambient: [0.1, 0.2, 0.3],
            ..Default::default()
        };
        let light = LightSpec {
            ambient_color: [0.5, 1.0, 1.0],
            ..light_along(-Vec3::z())
        };
        let base = [0.8, 0.5, 1.0];
        let out = phong_shade(&Vec3::z(), &Vec3::z(), &light, &m, &base);
        assert_eq!(out, [0.1 * 0.5 * 0.8, 0.2 * 0.5, 0.3]);
    }

    #[test]
    fn aligned_mirror_case_sums_coefficients() {
        let m = PhongMaterial {
            ambient: [0.1; 3],
            diffuse: [0.6; 3],
            specular: [0.3; 3],
            shininess: 7.0,
        };
        let n = Vec3::new(1.0, 2.0, 2.0) / 3.0;
        let out = phong_shade(&n, &n, &light_along(n), &m, &[1.0; 3]);
        for c in out {
            assert!((c - 1.0).abs() < 1e-12);
        }
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let n = v.norm();
            if n > 0.1 && n < 1.0 {
                return v / n;
            }
        }
    }

    #[test]
    fn rotation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (n, v, l) = (
                random_unit(&mut rng),
                random_unit(&mut rng),
                random_unit(&mut rng),
            );
            let m = PhongMaterial {
                ambient: std::array::from_fn(|_| rng.random_range(0.0..0.4)),
                diffuse: std::array::from_fn(|_| rng.random_range(0.0..0.6)),
                specular: std::array::from_fn(|_| rng.random_range(0.0..0.5)),
                shininess: rng.random_range(1.0..64.0),
            };
            let base = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let axis = nalgebra::Unit::new_normalize(random_unit(&mut rng));
            let rot: Mat3 =
                Rotation3::from_axis_angle(&axis, rng.random_range(0.0..6.3)).into_inner();
            let a = phong_shade(&n, &v, &light_along(l), &m, &base);
            let b = phong_shade(&(rot * n), &(rot * v), &light_along(rot * l), &m, &base);
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 1e-12, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn zero_jitter_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (m, l) = (PhongMaterial::default(), LightSpec::default());
        assert_eq!(
            perturb_params(&m, &l, &JitterSpec::none(), &mut rng),
            (m, l)
        );
    }

    #[test]
    fn material_jitter_stays_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = PhongMaterial {
            ambient: [0.2, 0.5, 0.95],
            diffuse: [0.7, 0.1, 0.0],
            specular: [0.3, 0.3, 1.0],
            shininess: 8.0,
        };
        let jitter = JitterSpec {
            material_jitter: 0.1,
            light_color_jitter: 0.05,
            light_cone_angle: 20.0,
        };
        let cos_cone = 20f64.to_radians().cos();
        for _ in 0..1000 {
            let (out, light) = perturb_params(&m, &LightSpec::default(), &jitter, &mut rng);
            let pairs = m
                .ambient
                .iter()
                .chain(&m.diffuse)
                .chain(&m.specular)
                .zip(out.ambient.iter().chain(&out.diffuse).chain(&out.specular));
            for (&k, &o) in pairs {
                assert!(
                    o >= (0.9 * k).min(1.0) - 1e-15 && o <= (1.1 * k).min(1.0) + 1e-15,
                    "{k} -> {o}"
                );
            }
            assert!(light.validate().is_ok());
            assert!(light.color.iter().all(|c| *c >= 0.95 - 1e-15));
            assert!(light.direction().dot(&LightSpec::default().direction()) >= cos_cone - 1e-12);
        }
    }

    #[test]
    fn perturbation_is_deterministic() {
        let j = JitterSpec::default();
        let a = perturb_params(
            &PhongMaterial::default(),
            &LightSpec::default(),
            &j,
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        let b = perturb_params(
            &PhongMaterial::default(),
            &LightSpec::default(),
            &j,
            &mut ChaCha8Rng::seed_from_u64(9),
        );
        assert_eq!(a, b);
    }
}
