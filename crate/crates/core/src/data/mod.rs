//! Utterance records, corpora, and the operations that slice them.

mod generate;
mod io;
mod split;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use generate::{generate_corpus, CorpusSpec};
pub use io::{load_dataset, save_dataset, DatasetManifest, DATASET_FORMAT_VERSION};
pub use split::{epoch_batches, filter_language, subset_fraction};

/// One spoken utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub utterance_id: String,
    pub speaker_id: String,
    pub language: String,
    /// Acoustic embedding sequence, `[T, acoustic_dim]`.
    pub acoustic: Tensor,
    /// Mean-pooled teacher sentence embedding, `[teacher_dim]`.
    pub teacher: Tensor,
    pub intent: usize,
}

impl Example {
    /// Builds an example, rounding embeddings to single precision so every
    /// example survives the on-disk format bit-exactly.
    pub fn new(
        utterance_id: impl Into<String>,
        speaker_id: impl Into<String>,
        language: impl Into<String>,
        acoustic: Tensor,
        teacher: Tensor,
        intent: usize,
    ) -> Result<Self> {
        if acoustic.shape().len() != 2 {
            return Err(Error::dim("example", acoustic.shape(), &[0, 0]));
        }
        if teacher.shape().len() != 1 {
            return Err(Error::dim("example", teacher.shape(), &[0]));
        }
        Ok(Example {
            utterance_id: utterance_id.into(),
            speaker_id: speaker_id.into(),
            language: language.into(),
            acoustic: acoustic.map(round_f32),
            teacher: teacher.map(round_f32),
            intent,
        })
    }

    pub fn frames(&self) -> usize {
        self.acoustic.rows()
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub split: Split,
    pub classes: usize,
    pub acoustic_dim: usize,
    pub teacher_dim: usize,
    /// Declared language tags, in corpus order.
    pub languages: Vec<String>,
}

/// Immutable collection of examples sharing one set of dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    meta: DatasetMeta,
    examples: Vec<Example>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, examples: Vec<Example>) -> Result<Self> {
        if meta.classes < 2 {
            return Err(Error::Contract(format!("{} classes; need at least 2", meta.classes)));
        }
        for (i, ex) in examples.iter().enumerate() {
            let invalid = |field: &str, detail: String| Error::Validation {
                record: i,
                field: field.into(),
                detail,
            };
            if ex.intent >= meta.classes {
                return Err(invalid(
                    "intent",
                    format!("{} not below class count {}", ex.intent, meta.classes),
                ));
            }
            if !meta.languages.contains(&ex.language) {
                return Err(invalid("language", format!("undeclared tag `{}`", ex.language)));
            }
            if ex.acoustic.cols() != meta.acoustic_dim {
                return Err(Error::dim("dataset", ex.acoustic.shape(), &[0, meta.acoustic_dim]));
            }
            if ex.teacher.shape() != [meta.teacher_dim] {
                return Err(Error::dim("dataset", ex.teacher.shape(), &[meta.teacher_dim]));
            }
        }
        Ok(Dataset { meta, examples })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn split(&self) -> Split {
        self.meta.split
    }

    pub fn languages(&self) -> &[String] {
        &self.meta.languages
    }

    /// Example count per declared language (zero counts included).
    pub fn language_counts(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<String, usize> =
            self.meta.languages.iter().map(|l| (l.clone(), 0)).collect();
        for ex in &self.examples {
            *counts.entry(ex.language.clone()).or_default() += 1;
        }
        counts
    }

    /// Rebuilds with a subset of examples, keeping metadata.
    pub(crate) fn with_examples(&self, examples: Vec<Example>) -> Dataset {
        Dataset {
            meta: self.meta.clone(),
            examples,
        }
    }
}
