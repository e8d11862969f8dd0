//! Pastes a rendered cone onto a procedural background with noise and
//! blur, then writes the image and its mask.
//!
//!     cargo run --example compose_sample [output_dir]

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synthfreeze::compositor::{compose_sample, procedural_backgrounds, BackgroundPool, ComposeSpec, Provenance};
use synthfreeze::geometry::{make_primitive_mesh, CameraIntrinsics, PrimitiveKind};
use synthfreeze::renderer::{render, LightSpec, PhongMaterial};
use synthfreeze::viewsampler::look_at_pose;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example_output".into()));
    std::fs::create_dir_all(&out)?;
    let camera = CameraIntrinsics::centered(400.0, 320, 240);
    let cone = make_primitive_mesh(
        &PrimitiveKind::Cone {
            radius: 0.1,
            height: 0.22,
            segments: 32,
        },
        [0.9, 0.75, 0.2],
    )?;
    let pose = look_at_pose(&nalgebra::Vector3::new(1.0, 0.2, 0.4).normalize(), 0.0, 1.5)?;
    let layer = render(&cone, &pose, &camera, &PhongMaterial::default(), &LightSpec::default())?;

    let pool = BackgroundPool::from_images(procedural_backgrounds(4, 320, 320, 11), (320, 240))?;
    let spec = ComposeSpec {
        noise_sigma_range: [6.0, 6.0],
        blur_sigma_range: [1.0, 1.0],
        ..ComposeSpec::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sample = compose_sample(&layer, &pool, &spec, 1, pose, Provenance::default(), &mut rng)?;
    sample.image.save(out.join("composite.png"))?;
    sample.mask.save(out.join("composite_mask.png"))?;
    let [x, y, w, h] = sample.bbox.to_xywh();
    println!("bbox x={x} y={y} w={w} h={h}, noise sigma {}, blur sigma {}", sample.noise_sigma, sample.blur_sigma);
    Ok(())
}
