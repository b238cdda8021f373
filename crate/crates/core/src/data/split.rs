use std::collections::BTreeMap;

use log::warn;

use super::generate::permutation;
use super::Dataset;
use crate::error::{Error, Result};
use crate::seed;

/// Keeps the examples whose language is in `tags`.
pub fn filter_language(dataset: &Dataset, tags: &[String]) -> Result<Dataset> {
    if let Some(bad) = tags.iter().find(|t| !dataset.languages().contains(t)) {
        return Err(Error::Tag(bad.clone()));
    }
    let examples = dataset
        .examples()
        .iter()
        .filter(|e| tags.contains(&e.language))
        .cloned()
        .collect();
    Ok(dataset.with_examples(examples))
}

/// Stratified subset over (language, intent) strata.
///
/// Each example gets a fixed key in `[0, 1)`: within a stratum of size n the
/// example at shuffled rank r gets `(r + u) / n`, where the offset u is
/// spread evenly over the strata of a language. An example is kept when its
/// key is below `fraction`, so subsets for growing fractions are nested and
/// every stratum keeps ⌊f·n⌋ or ⌈f·n⌉ examples. Nonempty strata keep at
/// least one example.
pub fn subset_fraction(dataset: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Contract(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut strata: BTreeMap<(String, usize), Vec<usize>> = BTreeMap::new();
    for (i, ex) in dataset.examples().iter().enumerate() {
        strata.entry((ex.language.clone(), ex.intent)).or_default().push(i);
    }

    let mut keep = vec![false; dataset.len()];
    let mut languages: BTreeMap<&str, Vec<(&(String, usize), &Vec<usize>)>> = BTreeMap::new();
    for (key, members) in &strata {
        languages.entry(key.0.as_str()).or_default().push((key, members));
    }
    for (lang, groups) in languages {
        let mut rng = seed::rng_for(seed, &format!("subset/{lang}"));
        let strata_in_language = groups.len() as f64;
        let offsets = permutation(groups.len(), &mut rng);
        for ((key, members), slot) in groups.into_iter().zip(offsets) {
            let u = (slot as f64 + 0.5) / strata_in_language;
            let mut rng = seed::rng_for(seed, &format!("subset/{}/{}", key.0, key.1));
            let order = permutation(members.len(), &mut rng);
            let n = members.len() as f64;
            let mut kept = 0;
            for (rank, &pos) in order.iter().enumerate() {
                if (rank as f64 + u) / n < fraction {
                    keep[members[pos]] = true;
                    kept += 1;
                }
            }
            if kept == 0 {
                warn!(
                    "fraction {fraction} leaves stratum ({}, intent {}) empty; keeping one example",
                    key.0, key.1
                );
                keep[members[order[0]]] = true;
            }
        }
    }
    let examples = dataset
        .examples()
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(e, _)| e.clone())
        .collect();
    Ok(dataset.with_examples(examples))
}

/// Index batches for one epoch. The order is reshuffled per epoch from a
/// seed derived from `(shuffle_seed, epoch)`; the final short batch is kept.
pub fn epoch_batches(len: usize, batch_size: usize, shuffle_seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be positive");
    let mut rng = seed::rng_for(shuffle_seed, &format!("epoch/{epoch}"));
    let order = permutation(len, &mut rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}
