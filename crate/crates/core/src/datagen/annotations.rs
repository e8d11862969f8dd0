//! The single-file dataset annotation format.
//!
//! One JSON document with top-level keys in this order: `manifest`,
//! `categories`, `images`, `annotations`. Boxes are
//! `[x_min, y_min, width, height]` in pixels, origin at the top-left image
//! corner. Floats are written in shortest round-trip form, so
//! `write ∘ read ∘ write` is byte-stable.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatagenError, GenerationConfig};

pub const ANNOTATION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    /// Row-major 3×3.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image_id: u64,
    pub file_name: String,
    pub category_id: u32,
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_file: Option<String>,
    pub pose: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Category {
    pub id: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassCount {
    pub class_id: u32,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub generator_version: String,
    pub master_seed: u64,
    pub total_images: u64,
    pub per_class_counts: Vec<ClassCount>,
    /// Generation settings, without the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<GenerationConfig>,
}

impl DatasetManifest {
    pub fn empty(master_seed: u64) -> Self {
        Self {
            schema_version: ANNOTATION_SCHEMA_VERSION,
            generator_version: env!("CARGO_PKG_VERSION").to_string(),
            master_seed,
            total_images: 0,
            per_class_counts: Vec::new(),
            config: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationFile {
    pub manifest: DatasetManifest,
    pub categories: Vec<Category>,
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<AnnotationRecord>,
}

impl AnnotationFile {
    /// Wraps bare records, deriving image entries from them.
    pub fn from_records(
        records: Vec<AnnotationRecord>,
        manifest: DatasetManifest,
        categories: Vec<Category>,
        size: (u32, u32),
    ) -> Self {
        let images = records
            .iter()
            .map(|r| ImageRecord {
                id: r.image_id,
                file_name: r.file_name.clone(),
                width: size.0,
                height: size.1,
            })
            .collect();
        Self {
            manifest,
            categories,
            images,
            annotations: records,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("annotation file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, DatagenError> {
        // check the version before the full schema so old files get a clear error
        let raw: serde_json::Value = serde_json::from_str(text).map_err(json_error)?;
        let found = raw
            .get("manifest")
            .and_then(|m| m.get("schema_version"))
            .and_then(|v| v.as_u64());
        if found != Some(ANNOTATION_SCHEMA_VERSION as u64) {
            return Err(DatagenError::SchemaVersionMismatch {
                found,
                expected: ANNOTATION_SCHEMA_VERSION,
            });
        }
        serde_json::from_str(text).map_err(json_error)
    }
}

fn json_error(e: serde_json::Error) -> DatagenError {
    DatagenError::ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Writes via a temporary file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), DatagenError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| DatagenError::Io(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, contents)
        .map_err(|e| DatagenError::Io(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))
}

pub fn write_annotations(file: &AnnotationFile, path: &Path) -> Result<(), DatagenError> {
    write_atomic(path, file.to_json().as_bytes())
}

pub fn read_annotations(path: &Path) -> Result<AnnotationFile, DatagenError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatagenError::Io(format!("{}: {e}", path.display())))?;
    AnnotationFile::from_json(&text)
}
