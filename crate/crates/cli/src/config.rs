use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use csi_recomp::model::{ArchConfig, ModelKind};
use csi_recomp::sim::SceneConfig;
use csi_recomp::store::RUN_CONFIG;
use csi_recomp::train::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Model input raster (height, width); stored images are area-averaged down to it.
    pub image_hw: [usize; 2],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { image_hw: [96, 96] }
    }
}

/// Every tunable of a pipeline invocation, as read from the TOML config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResolvedConfig {
    pub scene: SceneConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    pub model: ArchConfig,
}

/// Config snapshot stored in every run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSnapshot {
    pub dataset: PathBuf,
    pub kind: ModelKind,
    pub seed: u64,
    pub config: ResolvedConfig,
}

impl ResolvedConfig {
    pub fn snapshot(&self, dataset: &Path, kind: ModelKind, seed: u64) -> RunSnapshot {
        let mut config = self.clone();
        config.train.seeds = vec![seed];
        RunSnapshot {
            dataset: dataset.to_path_buf(),
            kind,
            seed,
            config,
        }
    }
}

/// Reads a TOML config, or the defaults when no file is given. Every unknown key is
/// reported by its dotted path.
pub fn load_config(path: Option<&Path>) -> Result<ResolvedConfig, CliError> {
    let Some(path) = path else {
        return Ok(ResolvedConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn parse_config(text: &str) -> Result<ResolvedConfig, String> {
    let value: toml::Value = toml::from_str(text).map_err(|e| e.to_string())?;
    let reference = toml::Value::try_from(ResolvedConfig::default()).expect("defaults serialize");
    let mut unknown = Vec::new();
    unknown_keys(&value, &reference, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(format!("unknown config keys: {}", unknown.join(", ")));
    }
    value.try_into().map_err(|e: toml::de::Error| e.to_string())
}

fn unknown_keys(value: &toml::Value, reference: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match (value, reference) {
        (toml::Value::Table(table), toml::Value::Table(known)) => {
            for (key, child) in table {
                let path = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                match known.get(key) {
                    Some(r) => unknown_keys(child, r, &path, out),
                    None => out.push(path),
                }
            }
        }
        (toml::Value::Array(items), toml::Value::Array(known)) => {
            if let Some(r) = known.first() {
                for (i, item) in items.iter().enumerate() {
                    unknown_keys(item, r, &format!("{prefix}[{i}]"), out);
                }
            }
        }
        _ => {}
    }
}

pub fn load_snapshot(run_dir: &Path) -> Result<ResolvedConfig, CliError> {
    let path = run_dir.join(RUN_CONFIG);
    let text = fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let snapshot: RunSnapshot =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(snapshot.config)
}
