//! TOML tool configuration with dotted-key overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::GenerationConfig;
use crate::transferlab::{AblationConfig, ExperimentConfig};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error: {0}")]
    Parse(String),
    /// `path` is the dotted location of the offending field.
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("bad override {0:?}: expected key=value")]
    Override(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToolConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ablate: Option<AblationConfig>,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            generate: Some(GenerationConfig::default()),
            experiment: Some(ExperimentConfig::default()),
            ablate: Some(AblationConfig::default()),
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    format!("v = {value}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.into()))
}

/// Applies `key.path=value`; missing tables along the path are created.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Override(assignment.into()))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(assignment.into()));
    }
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for (i, p) in parents.iter().enumerate() {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid(&parts[..=i].join("."), "not a table"))?;
    }
    cur.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}

impl ToolConfig {
    /// Parses TOML text, applies overrides, then checks every section.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            ConfigError::Parse(e.to_string().trim_end().to_string())
        })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let config: ToolConfig = serde_path_to_error::deserialize(table).map_err(|e| {
            let path = e.path().to_string();
            invalid(&path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("found {}, expected {CONFIG_SCHEMA_VERSION}", self.schema_version),
            ));
        }
        if let Some(g) = &self.generate {
            g.validate().map_err(|e| invalid("generate", e.to_string()))?;
        }
        if let Some(x) = &self.experiment {
            x.validate().map_err(|e| invalid("experiment", e.to_string()))?;
        }
        if let Some(a) = &self.ablate {
            if a.train_per_combo == 0 {
                return Err(invalid("ablate.train_per_combo", "must be positive"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let c = ToolConfig::default();
        assert_eq!(ToolConfig::from_toml(&c.to_toml(), &[]).unwrap(), c);
    }

    #[test]
    fn shipped_default_config_matches_defaults() {
        let text = include_str!("../../../configs/default.toml");
        assert_eq!(ToolConfig::from_toml(text, &[]).unwrap(), ToolConfig::default());
    }

    #[test]
    fn unknown_key_reports_path() {
        let mut text = ToolConfig::default().to_toml();
        text = text.replace("sample_count =", "sample_cuont =");
        match ToolConfig::from_toml(&text, &[]) {
            Err(ConfigError::Invalid { path, message }) => {
                assert_eq!(path, "generate.sample_cuont");
                assert!(message.contains("sample_cuont"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_type_reports_nested_path() {
        let text = ToolConfig::default().to_toml();
        let err = ToolConfig::from_toml(&text, &["experiment.stage1.steps=\"many\"".into()]).unwrap_err();
        match err {
            ConfigError::Invalid { path, .. } => assert_eq!(path, "experiment.stage1.steps"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn overrides_apply() {
        let text = ToolConfig::default().to_toml();
        let c = ToolConfig::from_toml(
            &text,
            &["generate.master_seed=7".into(), "ablate.train_per_combo = 12".into()],
        )
        .unwrap();
        assert_eq!(c.generate.unwrap().master_seed, 7);
        assert_eq!(c.ablate.unwrap().train_per_combo, 12);
        assert!(matches!(
            ToolConfig::from_toml(&text, &["novalue".into()]),
            Err(ConfigError::Override(_))
        ));
    }

    #[test]
    fn semantic_errors_name_the_section() {
        let text = ToolConfig::default().to_toml();
        let err = ToolConfig::from_toml(&text, &["generate.sample_count=0".into()]).unwrap_err();
        assert!(err.to_string().starts_with("generate"), "{err}");
        let err = ToolConfig::from_toml(&text, &["schema_version=9".into()]).unwrap_err();
        assert!(err.to_string().starts_with("schema_version"), "{err}");
    }

    #[test]
    fn sections_are_optional() {
        let c = ToolConfig::from_toml("schema_version = 1\n", &[]).unwrap();
        assert!(c.generate.is_none() && c.experiment.is_none());
        assert!(matches!(ToolConfig::from_toml("schema_version = [", &[]), Err(ConfigError::Parse(_))));
    }
}
