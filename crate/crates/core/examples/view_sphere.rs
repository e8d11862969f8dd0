//! Viewpoint counts per subdivision level and the full pose grid.
//!
//!     cargo run --example view_sphere

use synthfreeze::viewsampler::{enumerate_poses, pixel_coverage, subdivide_icosahedron, PoseGridSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for level in 0..=3 {
        let sphere = subdivide_icosahedron(level)?;
        println!("level {level}: {} directions", sphere.directions.len());
    }
    let spec = PoseGridSpec::default();
    let poses = enumerate_poses(&spec)?;
    println!(
        "grid: {} directions x {} in-plane angles x {} distances = {} poses",
        spec.directions()?.len(),
        spec.in_plane_angles().len(),
        spec.distances()?.len(),
        poses.len()
    );
    let distances = spec.distances()?;
    for (d, px) in distances.iter().zip(pixel_coverage(0.1, 525.0, &distances)) {
        println!("distance {d:.3} m -> object radius {px:.1} px");
    }
    Ok(())
}
