//! On-disk dataset format.
//!
//! A dataset is a manifest (`<name>.manifest.json`) and a record stream
//! (`<name>.jsonl`, one example per line). Tensors inside records are
//! base64-encoded little-endian `f32` arrays; the acoustic array is
//! row-major `[frames, acoustic_dim]`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, Example, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub split: Split,
    pub classes: usize,
    pub acoustic_dim: usize,
    pub teacher_dim: usize,
    pub languages: Vec<String>,
    pub num_records: usize,
    pub language_counts: BTreeMap<String, usize>,
    /// Record file name, relative to the manifest.
    pub records: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    utterance_id: String,
    speaker_id: String,
    language: String,
    intent: usize,
    frames: usize,
    acoustic: String,
    teacher: String,
}

fn encode(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for &v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode(text: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = B64.decode(text).map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 {
        return Err(format!("{} bytes is not a whole number of f32 values", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

/// Writes `<dir>/<name>.manifest.json` and `<dir>/<name>.jsonl`, returning
/// the manifest path.
pub fn save_dataset(dataset: &Dataset, dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let records_name = format!("{name}.jsonl");
    let records_path = dir.join(&records_name);
    let file = fs::File::create(&records_path).map_err(|e| Error::io(&records_path, e))?;
    let mut out = BufWriter::new(file);
    for ex in dataset.examples() {
        let record = Record {
            utterance_id: ex.utterance_id.clone(),
            speaker_id: ex.speaker_id.clone(),
            language: ex.language.clone(),
            intent: ex.intent,
            frames: ex.frames(),
            acoustic: encode(ex.acoustic.data()),
            teacher: encode(ex.teacher.data()),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(&records_path, e))?;
    }
    out.flush().map_err(|e| Error::io(&records_path, e))?;

    let meta = dataset.meta();
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        split: meta.split,
        classes: meta.classes,
        acoustic_dim: meta.acoustic_dim,
        teacher_dim: meta.teacher_dim,
        languages: meta.languages.clone(),
        num_records: dataset.len(),
        language_counts: dataset.language_counts(),
        records: records_name,
    };
    let manifest_path = dir.join(format!("{name}.manifest.json"));
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, text + "\n").map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Reads a dataset from its manifest, validating every record against it.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let raw: serde_json::Value = serde_json::from_str(&text)?;
    let version = raw.get("format_version").and_then(|v| v.as_u64()).ok_or_else(|| {
        Error::Validation {
            record: 0,
            field: "format_version".into(),
            detail: "missing from manifest".into(),
        }
    })?;
    if version != DATASET_FORMAT_VERSION as u64 {
        return Err(Error::Version {
            found: version as u32,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let manifest: DatasetManifest = serde_json::from_value(raw)?;
    for (field, v) in [
        ("acoustic_dim", manifest.acoustic_dim),
        ("teacher_dim", manifest.teacher_dim),
    ] {
        if v == 0 {
            return Err(Error::Validation {
                record: 0,
                field: field.into(),
                detail: "must be positive".into(),
            });
        }
    }
    let meta = DatasetMeta {
        split: manifest.split,
        classes: manifest.classes,
        acoustic_dim: manifest.acoustic_dim,
        teacher_dim: manifest.teacher_dim,
        languages: manifest.languages.clone(),
    };

    let records_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.records);
    let file = fs::File::open(&records_path).map_err(|e| Error::io(&records_path, e))?;
    let mut examples = Vec::with_capacity(manifest.num_records);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&records_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        examples.push(parse_record(i, &line, &meta)?);
    }

    if examples.len() != manifest.num_records {
        return Err(Error::Validation {
            record: examples.len(),
            field: "num_records".into(),
            detail: format!(
                "manifest declares {} records, file holds {}",
                manifest.num_records,
                examples.len()
            ),
        });
    }
    let dataset = Dataset::new(meta, examples)?;
    let counts = dataset.language_counts();
    if counts != manifest.language_counts {
        return Err(Error::Validation {
            record: dataset.len(),
            field: "language_counts".into(),
            detail: format!("manifest declares {:?}, records give {counts:?}", manifest.language_counts),
        });
    }
    Ok(dataset)
}

fn parse_record(i: usize, line: &str, meta: &DatasetMeta) -> Result<Example> {
    let invalid = |field: &str, detail: String| Error::Validation {
        record: i,
        field: field.into(),
        detail,
    };
    let r: Record =
        serde_json::from_str(line).map_err(|e| invalid("record", e.to_string()))?;
    if r.intent >= meta.classes {
        return Err(invalid(
            "intent",
            format!("{} not below class count {}", r.intent, meta.classes),
        ));
    }
    if !meta.languages.contains(&r.language) {
        return Err(invalid("language", format!("undeclared tag `{}`", r.language)));
    }
    if r.frames == 0 {
        return Err(invalid("frames", "zero frames".into()));
    }
    let acoustic = decode(&r.acoustic).map_err(|e| invalid("acoustic", e))?;
    if acoustic.len() != r.frames * meta.acoustic_dim {
        return Err(Error::dim(
            "load_dataset",
            &[r.frames, meta.acoustic_dim],
            &[acoustic.len()],
        ));
    }
    let teacher = decode(&r.teacher).map_err(|e| invalid("teacher", e))?;
    if teacher.len() != meta.teacher_dim {
        return Err(Error::dim("load_dataset", &[meta.teacher_dim], &[teacher.len()]));
    }
    if acoustic.iter().chain(&teacher).any(|v| !v.is_finite()) {
        return Err(invalid("acoustic", "non-finite value".into()));
    }
    Example::new(
        r.utterance_id,
        r.speaker_id,
        r.language,
        Tensor::new(vec![r.frames, meta.acoustic_dim], acoustic)?,
        Tensor::vector(teacher),
        r.intent,
    )
}
