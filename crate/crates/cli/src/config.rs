//! Run specs: JSON files layered under command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use mtsn::data::CorpusSpec;
use mtsn::experiments::{GridSpec, TrainConfig};
use mtsn::Error;

pub fn read_json(path: &Path) -> anyhow::Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let value = serde_json::from_str(&text)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(value)
}

/// Overlays `patch` onto `base`, recursing into objects.
pub fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Preset fields, overridden by an optional partial JSON object.
pub fn corpus_spec(preset: &str, overrides: Option<serde_json::Value>) -> anyhow::Result<CorpusSpec> {
    let spec = CorpusSpec::preset(preset)?;
    let Some(patch) = overrides else {
        return Ok(spec);
    };
    let mut value = serde_json::to_value(&spec)?;
    merge(&mut value, patch);
    Ok(serde_json::from_value(value).map_err(|e| Error::Spec(e.to_string()))?)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub framework: String,
    pub train_languages: String,
    pub fraction: f64,
    pub train_manifest: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            framework: "mtsn".into(),
            train_languages: "both".into(),
            fraction: 1.0,
            train_manifest: None,
            resume: None,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridRun {
    /// Preset used to generate a corpus when no manifests are given.
    pub preset: String,
    /// Partial corpus fields over the preset.
    pub corpus: Option<serde_json::Value>,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    pub grid: GridSpec,
}

impl Default for GridRun {
    fn default() -> Self {
        GridRun {
            preset: "default".into(),
            corpus: None,
            train_manifest: None,
            test_manifest: None,
            grid: GridSpec::default(),
        }
    }
}

pub fn load_or_default<T: Default + for<'de> Deserialize<'de>>(path: Option<&Path>) -> anyhow::Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let value = read_json(p)?;
            Ok(serde_json::from_value(value)
                .map_err(|e| Error::Spec(format!("{}: {e}", p.display())))?)
        }
    }
}

/// Writes the effective configuration next to a command's outputs.
pub fn echo<T: Serialize>(dir: &Path, config: &T) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let path = dir.join("effective_config.json");
    fs::write(&path, serde_json::to_string_pretty(config)? + "\n").map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(())
}

/// `--out`, else `$MTSN_OUT_DIR/<command>`, else `mtsn-out/<command>`.
pub fn out_dir(flag: Option<PathBuf>, command: &str) -> PathBuf {
    flag.unwrap_or_else(|| {
        std::env::var_os("MTSN_OUT_DIR")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("mtsn-out"))
            .join(command)
    })
}
