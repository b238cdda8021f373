use std::collections::BTreeMap;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::IntentModel;
use crate::tensor::Tensor;

const CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn percent(&self) -> f64 {
        100.0 * self.correct as f64 / self.total as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    /// Percent over all examples.
    pub combined: f64,
    /// Percent per language present in the test set.
    pub per_language: BTreeMap<String, f64>,
    pub tallies: BTreeMap<String, Tally>,
}

/// Scores predictions aligned with `dataset.examples()`.
pub fn score_predictions(dataset: &Dataset, predictions: &[usize]) -> Result<Accuracy> {
    if dataset.is_empty() {
        return Err(Error::Contract("cannot evaluate on an empty test set".into()));
    }
    if predictions.len() != dataset.len() {
        return Err(Error::dim("evaluate", &[predictions.len()], &[dataset.len()]));
    }
    let mut tallies: BTreeMap<String, Tally> = BTreeMap::new();
    for (ex, &p) in dataset.examples().iter().zip(predictions) {
        let t = tallies.entry(ex.language.clone()).or_default();
        t.total += 1;
        t.correct += usize::from(p == ex.intent);
    }
    let correct: usize = tallies.values().map(|t| t.correct).sum();
    Ok(Accuracy {
        combined: 100.0 * correct as f64 / dataset.len() as f64,
        per_language: tallies.iter().map(|(l, t)| (l.clone(), t.percent())).collect(),
        tallies,
    })
}

pub fn predict_dataset(model: &dyn IntentModel, dataset: &Dataset) -> Result<Vec<usize>> {
    let inputs: Vec<&Tensor> = dataset.examples().iter().map(|e| &e.acoustic).collect();
    let chunks: Vec<Vec<usize>> = inputs
        .par_chunks(CHUNK)
        .map(|c| model.predict(c))
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

pub fn evaluate(model: &dyn IntentModel, dataset: &Dataset) -> Result<Accuracy> {
    if model.dims().acoustic != dataset.meta().acoustic_dim {
        return Err(Error::dim(
            "evaluate",
            &[model.dims().acoustic],
            &[dataset.meta().acoustic_dim],
        ));
    }
    score_predictions(dataset, &predict_dataset(model, dataset)?)
}

/// `⟨a, b⟩ / (‖a‖ ‖b‖)`, or `None` when either norm is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineStats {
    pub combined: f64,
    pub per_language: BTreeMap<String, f64>,
    /// Examples dropped for a zero-norm embedding.
    pub excluded: usize,
}

/// Mean cosine between paired embeddings, per language and combined.
pub fn cosine_stats<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a [f64], &'a [f64])>) -> Result<CosineStats> {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut excluded = 0;
    for (lang, a, b) in pairs {
        match cosine(a, b) {
            Some(c) => {
                let s = sums.entry(lang.to_string()).or_default();
                s.0 += c;
                s.1 += 1;
            }
            None => excluded += 1,
        }
    }
    if excluded > 0 {
        warn!("{excluded} zero-norm embeddings excluded from the cosine mean");
    }
    let (total, n) = sums.values().fold((0.0, 0), |(t, n), (s, c)| (t + s, n + c));
    if n == 0 {
        return Err(Error::Contract("no embedding pair with nonzero norms".into()));
    }
    Ok(CosineStats {
        combined: total / n as f64,
        per_language: sums.into_iter().map(|(l, (s, c))| (l, s / c as f64)).collect(),
        excluded,
    })
}

/// Pooled transferred embeddings for every example, in dataset order.
pub fn transferred_embeddings(model: &dyn IntentModel, dataset: &Dataset) -> Result<Vec<Tensor>> {
    let inputs: Vec<&Tensor> = dataset.examples().iter().map(|e| &e.acoustic).collect();
    let chunks: Vec<Vec<Tensor>> = inputs
        .par_chunks(CHUNK)
        .map(|c| {
            model
                .infer(c)?
                .into_iter()
                .map(|inf| {
                    inf.transferred.ok_or_else(|| {
                        Error::Contract(format!("`{}` has no transfer layer", model.kind()))
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.concat())
}

/// Mean cos(E_TE, E_lang) over a test set.
pub fn cosine_analysis(model: &dyn IntentModel, dataset: &Dataset) -> Result<CosineStats> {
    let te = transferred_embeddings(model, dataset)?;
    cosine_stats(
        dataset
            .examples()
            .iter()
            .zip(&te)
            .map(|(ex, t)| (ex.language.as_str(), t.data(), ex.teacher.data())),
    )
}
