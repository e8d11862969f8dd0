//! Renders a torus and an OBJ cube, writing color and alpha layers.
//!
//!     cargo run --example render_object [output_dir]

use std::path::PathBuf;

use synthfreeze::geometry::{make_primitive_mesh, parse_obj, CameraIntrinsics, PrimitiveKind};
use synthfreeze::renderer::{render, LightSpec, PhongMaterial};
use synthfreeze::viewsampler::look_at_pose;

const CUBE_OBJ: &str = "\
v -0.1 -0.1 -0.1
v 0.1 -0.1 -0.1
v 0.1 0.1 -0.1
v -0.1 0.1 -0.1
v -0.1 -0.1 0.1
v 0.1 -0.1 0.1
v 0.1 0.1 0.1
v -0.1 0.1 0.1
f 1 3 2
f 1 4 3
f 5 6 7
f 5 7 8
f 1 2 6
f 1 6 5
f 2 3 7
f 2 7 6
f 3 4 8
f 3 8 7
f 4 1 5
f 4 5 8
";

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example_output".into()));
    std::fs::create_dir_all(&out)?;
    let camera = CameraIntrinsics::centered(525.0, 320, 240);
    let pose = look_at_pose(&nalgebra::Vector3::new(0.3, -0.5, 0.8).normalize(), 20.0, 1.2)?;
    let torus = make_primitive_mesh(
        &PrimitiveKind::Torus {
            major_radius: 0.1,
            minor_radius: 0.035,
            major_segments: 48,
            minor_segments: 24,
        },
        [0.9, 0.5, 0.2],
    )?;
    let cube = parse_obj(CUBE_OBJ)?.recolored([0.3, 0.6, 0.9])?;
    for (name, mesh) in [("torus", &torus), ("cube", &cube)] {
        let layer = render(mesh, &pose, &camera, &PhongMaterial::default(), &LightSpec::default())?;
        layer.save_debug(&out, name)?;
        println!(
            "{name}: {} triangles, {} covered pixels, mask bounds {:?}",
            mesh.triangles().len(),
            layer.covered_count(),
            layer.mask_bounds()
        );
    }
    println!("layers written to {}", out.display());
    Ok(())
}
