use std::fs;
use std::path::{Path, PathBuf};

use lobsad::data::{FeatureView, LabelKey, SynthConfig};
use lobsad::harness::TrainConfig;
use lobsad::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CONFIG_VERSION: u32 = 1;

/// The JSON run configuration. Flags override these values; the merged
/// result is recorded in the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub version: u32,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub data: DataSection,
}

/// Where `run` reads order book data from. Without `lob_csv` a synthetic
/// dataset is generated from the `synth` section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub lob_csv: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub label_key: LabelKey,
    pub feature_view: FeatureView,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            data: DataSection::default(),
        }
    }
}

impl RunConfigFile {
    /// Reads and checks a config file. Relative data paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "{}: config version {} is not supported (expected {CONFIG_VERSION})",
                path.display(),
                cfg.version
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.data.lob_csv, &mut cfg.data.labels].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfigFile::default();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfigFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<RunConfigFile>(r#"{"version": 1, "trian": {}}"#).unwrap_err();
        assert!(err.to_string().contains("trian"));
        let err = serde_json::from_str::<RunConfigFile>(r#"{"version": 1, "train": {"epochs": 3}}"#).unwrap_err();
        assert!(err.to_string().contains("epochs"));
    }

    #[test]
    fn version_is_required_and_checked() {
        assert!(serde_json::from_str::<RunConfigFile>("{}").is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"version": 9}"#).unwrap();
        assert!(matches!(RunConfigFile::load(&path), Err(Error::Config(_))));
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg: RunConfigFile =
            serde_json::from_str(r#"{"version": 1, "train": {"main_epochs": 7}, "data": {"lob_csv": "x.csv"}}"#).unwrap();
        assert_eq!(cfg.train.main_epochs, 7);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.synth, SynthConfig::default());
        assert_eq!(cfg.data.lob_csv, Some(PathBuf::from("x.csv")));
    }

    #[test]
    fn shipped_config_matches_defaults() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk_scale.json");
        let cfg = RunConfigFile::load(&path).unwrap();
        let json = |c: &RunConfigFile| serde_json::to_value((&c.train, &c.synth)).unwrap();
        assert_eq!(json(&cfg), json(&RunConfigFile::default()));
    }
}
