//! End-to-end dataset generation: pose draw → render → composite → write.
//!
//! Sample `i` uses only `substream(master_seed, i)`, so outputs do not
//! depend on the worker count. Classes are assigned round-robin over the
//! configured objects.

mod annotations;

pub use annotations::{
    read_annotations, write_annotations, write_atomic, AnnotationFile, AnnotationRecord, Category,
    ClassCount, DatasetManifest, ImageRecord, PoseRecord, ANNOTATION_SCHEMA_VERSION,
};

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::compositor::{
    compose_sample, procedural_backgrounds, BackgroundPool, ComposeSpec, CompositeError,
    CompositeSample, Provenance,
};
use crate::geometry::{
    load_mesh, make_primitive_mesh, vertex_bbox_unclipped, BBox2D, CameraIntrinsics, GeometryError,
    Mesh, Pose, PrimitiveKind,
};
use crate::renderer::{perturb_params, render, JitterSpec, LightSpec, PhongMaterial, RenderError};
use crate::substream::substream;
use crate::viewsampler::{enumerate_poses, PoseGridSpec, ViewError};

/// Attempts per sample before giving up.
pub const MAX_ATTEMPTS: u32 = 32;

const DEFAULT_COLOR: [f64; 3] = [0.8, 0.8, 0.8];

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("sample {0} failed after {MAX_ATTEMPTS} attempts")]
    GenerationFailed(u64),
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("annotation schema version {found:?} is not the supported version {expected}")]
    SchemaVersionMismatch { found: Option<u64>, expected: u32 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Composite(#[from] CompositeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectSource {
    Mesh(PathBuf),
    Primitive(PrimitiveKind),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub class_id: u32,
    pub class_name: String,
    pub source: ObjectSource,
    /// Overrides the mesh vertex colors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub color: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackgroundSource {
    /// PNG/JPEG files, each at least `max(width, height)` on both sides if
    /// quarter-turn rotations are enabled.
    Directory { path: PathBuf },
    /// Value noise with random polygons, square so every rotation fits.
    Procedural { count: usize, seed: u64 },
    /// One random flat color per sample.
    Solid,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub objects: Vec<ObjectSpec>,
    pub camera: CameraIntrinsics,
    #[serde(default)]
    pub pose_grid: PoseGridSpec,
    #[serde(default)]
    pub material: PhongMaterial,
    #[serde(default)]
    pub light: LightSpec,
    #[serde(default)]
    pub jitter: JitterSpec,
    #[serde(default)]
    pub compose: ComposeSpec,
    pub backgrounds: BackgroundSource,
    pub sample_count: u64,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "yes")]
    pub emit_masks: bool,
    /// Emit every (object, grid pose) pair once instead of `sample_count`
    /// random draws.
    #[serde(default)]
    pub exhaustive: bool,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        let objects = [
            ("cube", PrimitiveKind::Cube { edge: 0.2 }, [0.85, 0.3, 0.25]),
            (
                "cylinder",
                PrimitiveKind::Cylinder {
                    radius: 0.08,
                    height: 0.25,
                    segments: 24,
                },
                [0.25, 0.6, 0.85],
            ),
            (
                "cone",
                PrimitiveKind::Cone {
                    radius: 0.1,
                    height: 0.22,
                    segments: 24,
                },
                [0.9, 0.75, 0.2],
            ),
            (
                "torus",
                PrimitiveKind::Torus {
                    major_radius: 0.1,
                    minor_radius: 0.035,
                    major_segments: 32,
                    minor_segments: 16,
                },
                [0.35, 0.8, 0.4],
            ),
        ];
        Self {
            objects: objects
                .into_iter()
                .enumerate()
                .map(|(i, (name, kind, color))| ObjectSpec {
                    class_id: i as u32 + 1,
                    class_name: name.into(),
                    source: ObjectSource::Primitive(kind),
                    color: Some(color),
                })
                .collect(),
            camera: CameraIntrinsics::centered(525.0, 640, 480),
            pose_grid: PoseGridSpec::default(),
            material: PhongMaterial::default(),
            light: LightSpec::default(),
            jitter: JitterSpec::default(),
            compose: ComposeSpec::default(),
            backgrounds: BackgroundSource::Procedural { count: 8, seed: 0 },
            sample_count: 100,
            master_seed: 0,
            output_dir: None,
            emit_masks: true,
            exhaustive: false,
        }
    }
}

impl GenerationConfig {
    /// Checks every invariant; errors name the offending field.
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |field: &str, msg: String| Err(DatagenError::Config(format!("{field}: {msg}")));
        if self.objects.is_empty() {
            return bad("objects", "at least one object is required".into());
        }
        let mut seen = HashSet::new();
        for (i, o) in self.objects.iter().enumerate() {
            if !seen.insert(o.class_id) {
                return bad(
                    &format!("objects[{i}].class_id"),
                    format!("duplicate class id {}", o.class_id),
                );
            }
            if let ObjectSource::Primitive(kind) = &o.source {
                if let Err(e) = kind.validate() {
                    return bad(&format!("objects[{i}].source"), e.to_string());
                }
            }
            if let Some(c) = o.color {
                if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return bad(
                        &format!("objects[{i}].color"),
                        "channels must lie in [0, 1]".into(),
                    );
                }
            }
        }
        if !self.exhaustive && self.sample_count < 1 {
            return bad("sample_count", "must be at least 1".into());
        }
        if let Err(e) = self.camera.validate() {
            return bad("camera", e.to_string());
        }
        if let Err(e) = self.pose_grid.validate() {
            return bad("pose_grid", e.to_string());
        }
        if let Err(e) = self.material.validate() {
            return bad("material", e);
        }
        if let Err(e) = self.light.validate() {
            return bad("light", e);
        }
        if let Err(e) = self.jitter.validate() {
            return bad("jitter", e);
        }
        if let Err(e) = self.compose.validate() {
            return bad("compose", e.to_string());
        }
        if let BackgroundSource::Procedural { count: 0, .. } = self.backgrounds {
            return bad("backgrounds.count", "must be at least 1".into());
        }
        Ok(())
    }

    pub fn frame(&self) -> (u32, u32) {
        (self.camera.width, self.camera.height)
    }

    pub fn categories(&self) -> Vec<Category> {
        self.objects
            .iter()
            .map(|o| Category {
                id: o.class_id,
                name: o.class_name.clone(),
            })
            .collect()
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> DatagenError {
    DatagenError::Io(format!("{}: {e}", path.display()))
}

/// Loaded meshes, the pose grid and the background pool for one config.
#[derive(Debug, Clone)]
pub struct SampleGenerator {
    config: GenerationConfig,
    meshes: Vec<Mesh>,
    poses: Vec<Pose>,
    pool: BackgroundPool,
}

impl SampleGenerator {
    pub fn new(config: &GenerationConfig) -> Result<Self, DatagenError> {
        config.validate()?;
        let meshes = config
            .objects
            .iter()
            .map(|o| {
                let mesh = match &o.source {
                    ObjectSource::Mesh(path) => load_mesh(path)?,
                    ObjectSource::Primitive(kind) => {
                        make_primitive_mesh(kind, o.color.unwrap_or(DEFAULT_COLOR))?
                    }
                };
                Ok(match o.color {
                    Some(c) => mesh.recolored(c)?,
                    None => mesh,
                })
            })
            .collect::<Result<Vec<_>, DatagenError>>()?;
        let poses = enumerate_poses(&config.pose_grid)?;
        let target = config.frame();
        let pool = match &config.backgrounds {
            BackgroundSource::Directory { path } => {
                BackgroundPool::from_directory(path, target).map_err(|e| io_err(path, e))?
            }
            BackgroundSource::Procedural { count, seed } => {
                let side = target.0.max(target.1);
                BackgroundPool::from_images(
                    procedural_backgrounds(*count, side, side, *seed),
                    target,
                )?
            }
            BackgroundSource::Solid => BackgroundPool::SolidRandom { target },
        };
        Ok(Self {
            config: config.clone(),
            meshes,
            poses,
            pool,
        })
    }

    pub fn config(&self) -> &GenerationConfig {
        &self.config
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn meshes(&self) -> &[Mesh] {
        &self.meshes
    }

    pub fn total_samples(&self) -> u64 {
        if self.config.exhaustive {
            (self.poses.len() * self.meshes.len()) as u64
        } else {
            self.config.sample_count
        }
    }

    /// Object index of sample `i`.
    pub fn object_of(&self, i: u64) -> usize {
        (i % self.meshes.len() as u64) as usize
    }

    /// Sample `i` with its pose drawn from the substream (or fixed by the
    /// grid in exhaustive mode).
    pub fn sample(&self, i: u64) -> Result<CompositeSample, DatagenError> {
        let fixed = self
            .config
            .exhaustive
            .then(|| (i / self.meshes.len() as u64) as usize);
        self.sample_with_pose(i, fixed)
    }

    /// Sample `i` rendered at grid pose `pose_index` when given. Two
    /// generators over the same grid produce pose-paired samples this way.
    /// With a fixed pose, retries redraw everything except the pose.
    pub fn sample_with_pose(
        &self,
        i: u64,
        pose_index: Option<usize>,
    ) -> Result<CompositeSample, DatagenError> {
        let object = self.object_of(i);
        let mesh = &self.meshes[object];
        let class_id = self.config.objects[object].class_id;
        let mut rng = substream(self.config.master_seed, i);
        for _ in 0..MAX_ATTEMPTS {
            let drawn = rng.random_range(0..self.poses.len());
            let pose = self.poses[pose_index.unwrap_or(drawn)];
            let (material, light) = perturb_params(
                &self.config.material,
                &self.config.light,
                &self.config.jitter,
                &mut rng,
            );
            // a silhouette cut by the render frame would be composited as if whole
            let frame = BBox2D::new(
                0.0,
                0.0,
                self.config.camera.width as f64,
                self.config.camera.height as f64,
            );
            match vertex_bbox_unclipped(mesh, &pose, &self.config.camera) {
                Ok(b) if frame.contains(&b) => {}
                _ => continue,
            }
            let layer = match render(mesh, &pose, &self.config.camera, &material, &light) {
                Ok(l) => l,
                Err(RenderError::BehindCamera { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            let provenance = Provenance {
                seed: self.config.master_seed,
                sample_index: i,
            };
            match compose_sample(
                &layer,
                &self.pool,
                &self.config.compose,
                class_id,
                pose,
                provenance,
                &mut rng,
            ) {
                Ok(s) => return Ok(s),
                Err(CompositeError::NoValidPlacement | CompositeError::EmptyLayer) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        Err(DatagenError::GenerationFailed(i))
    }
}

pub fn image_file_name(i: u64) -> String {
    format!("images/{i:06}.png")
}

pub fn mask_file_name(i: u64) -> String {
    format!("masks/{i:06}.png")
}

pub const ANNOTATION_FILE_NAME: &str = "annotations.json";

fn save_png_rgb(img: &RgbImage, path: &Path) -> Result<(), DatagenError> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| io_err(path, e))
}

fn save_png_gray(img: &GrayImage, path: &Path) -> Result<(), DatagenError> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| io_err(path, e))
}

fn record_for(i: u64, sample: &CompositeSample, emit_masks: bool) -> AnnotationRecord {
    AnnotationRecord {
        image_id: i,
        file_name: image_file_name(i),
        category_id: sample.class_id,
        bbox: sample.bbox.to_xywh(),
        mask_file: emit_masks.then(|| mask_file_name(i)),
        pose: PoseRecord {
            rotation: sample.pose.rotation_row_major(),
            translation: (*sample.pose.translation()).into(),
        },
    }
}

/// Generates the whole dataset into `config.output_dir` using `jobs`
/// worker threads. Layout: `images/NNNNNN.png`, `masks/NNNNNN.png` and
/// `annotations.json`.
pub fn generate_dataset(
    config: &GenerationConfig,
    jobs: usize,
) -> Result<DatasetManifest, DatagenError> {
    let out = config
        .output_dir
        .clone()
        .ok_or_else(|| DatagenError::Config("output_dir: required for generation".into()))?;
    let generator = SampleGenerator::new(config)?;
    for sub in ["images", "masks"] {
        if sub == "masks" && !config.emit_masks {
            continue;
        }
        let dir = out.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| DatagenError::Io(e.to_string()))?;
    let results: Vec<Result<AnnotationRecord, DatagenError>> = pool.install(|| {
        (0..generator.total_samples())
            .into_par_iter()
            .map(|i| {
                let sample = generator.sample(i)?;
                save_png_rgb(&sample.image, &out.join(image_file_name(i)))?;
                if config.emit_masks {
                    save_png_gray(&sample.mask, &out.join(mask_file_name(i)))?;
                }
                Ok(record_for(i, &sample, config.emit_masks))
            })
            .collect()
    });
    let records = results.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut manifest = DatasetManifest::empty(config.master_seed);
    manifest.total_images = records.len() as u64;
    manifest.per_class_counts = config
        .objects
        .iter()
        .map(|o| ClassCount {
            class_id: o.class_id,
            count: records
                .iter()
                .filter(|r| r.category_id == o.class_id)
                .count() as u64,
        })
        .collect();
    let mut echo = config.clone();
    echo.output_dir = None;
    manifest.config = Some(echo);

    let file = AnnotationFile::from_records(
        records,
        manifest.clone(),
        config.categories(),
        config.frame(),
    );
    write_annotations(&file, &out.join(ANNOTATION_FILE_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compositor::mask_bbox;

    fn small_config(samples: u64, classes: usize) -> GenerationConfig {
        let mut c = GenerationConfig {
            camera: CameraIntrinsics::centered(120.0, 96, 72),
            sample_count: samples,
            master_seed: 11,
            ..Default::default()
        };
        c.objects.truncate(classes);
        c.pose_grid.subdivision_level = 1;
        c.backgrounds = BackgroundSource::Procedural { count: 3, seed: 1 };
        c
    }

    #[test]
    fn round_robin_balance() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config(10, 2);
        c.output_dir = Some(dir.path().to_path_buf());
        let m = generate_dataset(&c, 1).unwrap();
        assert_eq!(m.total_images, 10);
        assert_eq!(
            m.per_class_counts
                .iter()
                .map(|c| c.count)
                .collect::<Vec<_>>(),
            vec![5, 5]
        );

        let mut c = small_config(7, 3);
        c.output_dir = Some(dir.path().join("b"));
        let m = generate_dataset(&c, 1).unwrap();
        let counts: Vec<u64> = m.per_class_counts.iter().map(|c| c.count).collect();
        assert_eq!(counts.iter().sum::<u64>(), 7);
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn boxes_rederive_from_written_masks() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small_config(12, 4);
        c.output_dir = Some(dir.path().to_path_buf());
        generate_dataset(&c, 2).unwrap();
        let file = read_annotations(&dir.path().join(ANNOTATION_FILE_NAME)).unwrap();
        assert_eq!(file.annotations.len(), 12);
        for r in &file.annotations {
            assert!(dir.path().join(&r.file_name).exists());
            let mask = image::open(dir.path().join(r.mask_file.as_ref().unwrap()))
                .unwrap()
                .to_luma8();
            assert_eq!(mask_bbox(&mask).unwrap().to_xywh(), r.bbox);
            assert!(r.bbox[2] > 0.0 && r.bbox[3] > 0.0);
        }
        assert!(file.manifest.config.as_ref().unwrap().output_dir.is_none());
    }

    #[test]
    fn sample_is_order_independent() {
        let g = SampleGenerator::new(&small_config(20, 3)).unwrap();
        let forward: Vec<_> = (0..6).map(|i| g.sample(i).unwrap()).collect();
        for i in (0..6).rev() {
            assert_eq!(g.sample(i).unwrap(), forward[i as usize]);
        }
    }

    #[test]
    fn exhaustive_covers_grid() {
        let mut c = small_config(1, 2);
        c.exhaustive = true;
        c.pose_grid = PoseGridSpec {
            subdivision_level: 0,
            in_plane_count: 2,
            scale_levels: 1,
            distance_min: 1.5,
            ..Default::default()
        };
        let g = SampleGenerator::new(&c).unwrap();
        assert_eq!(g.total_samples(), 2 * 12 * 2);
        for i in [0u64, 5, 17] {
            let s = g.sample(i).unwrap();
            assert_eq!(s.pose, g.poses()[(i / 2) as usize]);
            assert_eq!(s.class_id, c.objects[(i % 2) as usize].class_id);
        }
    }

    #[test]
    fn impossible_placement_fails_with_index() {
        let mut c = small_config(3, 1);
        // object far larger than the frame at every distance
        c.pose_grid.distance_min = 0.3;
        c.pose_grid.distance_max = 0.3;
        c.pose_grid.scale_levels = 1;
        let g = SampleGenerator::new(&c).unwrap();
        assert!(matches!(
            g.sample(2),
            Err(DatagenError::GenerationFailed(2))
        ));
    }

    #[test]
    fn validation_names_fields() {
        let mut c = small_config(3, 2);
        c.objects[1].class_id = c.objects[0].class_id;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("objects[1].class_id"), "{msg}");
        let mut c = small_config(0, 2);
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("sample_count"));
        c.sample_count = 1;
        c.objects.clear();
        assert!(c.validate().unwrap_err().to_string().contains("objects"));
    }
}
