//! Generates a small detection dataset with images, masks and a single
//! annotation file.
//!
//!     cargo run --release --example generate_dataset [output_dir]

use std::path::PathBuf;

use synthfreeze::datagen::{generate_dataset, read_annotations, GenerationConfig, ANNOTATION_FILE_NAME};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "example_output/dataset".into()));
    let config = GenerationConfig {
        sample_count: 20,
        master_seed: 42,
        output_dir: Some(out.clone()),
        ..GenerationConfig::default()
    };
    let manifest = generate_dataset(&config, 2)?;
    println!("{} images in {}", manifest.total_images, out.display());
    for c in &manifest.per_class_counts {
        println!("class {}: {} samples", c.class_id, c.count);
    }
    let annotations = read_annotations(&out.join(ANNOTATION_FILE_NAME))?;
    let first = &annotations.annotations[0];
    println!("first record: {} bbox {:?}", first.file_name, first.bbox);
    Ok(())
}
