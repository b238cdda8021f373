use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{filter_language, subset_fraction, Dataset};
use crate::error::{Error, Result};
use crate::model::FrameworkRegistry;
use crate::seed;

use super::evaluate::{cosine_analysis, evaluate, Accuracy, CosineStats};
use super::train::{train, EpochLosses, TrainConfig};

/// A named set of training languages: a single tag, `both`/`all` for every
/// corpus language, or tags joined with `+`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainLanguages {
    pub label: String,
    pub tags: Vec<String>,
}

impl TrainLanguages {
    pub fn parse(label: &str, corpus: &[String]) -> Result<Self> {
        let tags: Vec<String> = match label {
            "both" | "all" => corpus.to_vec(),
            _ => label.split('+').map(str::to_string).collect(),
        };
        if let Some(bad) = tags.iter().find(|t| !corpus.contains(t)) {
            return Err(Error::Tag(bad.clone()));
        }
        Ok(TrainLanguages {
            label: label.to_string(),
            tags,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub frameworks: Vec<String>,
    pub train_languages: Vec<String>,
    /// Training-data fractions; 1.0 is always run so degradation can be measured.
    pub fractions: Vec<f64>,
    /// Number of replicate seeds per cell.
    pub seeds: usize,
    /// Top-level seed; per-cell seeds are derived from it.
    pub seed: u64,
    pub parallelism: usize,
    /// Whether to compute initial/final cosine statistics for transfer models.
    pub cosine: bool,
    pub train: TrainConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            frameworks: vec!["mtsn".into(), "baseline2".into()],
            train_languages: vec!["L1".into(), "L2".into(), "both".into()],
            fractions: vec![1.0],
            seeds: 1,
            seed: 0,
            parallelism: 1,
            cosine: true,
            train: TrainConfig::default(),
        }
    }
}

impl GridSpec {
    pub fn validate(&self, registry: &FrameworkRegistry) -> Result<()> {
        if self.frameworks.is_empty() || self.train_languages.is_empty() {
            return Err(Error::Spec("grid needs at least one framework and train language".into()));
        }
        for f in &self.frameworks {
            registry.get(f)?;
        }
        if let Some(f) = self.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(Error::Spec(format!("fraction {f} outside (0, 1]")));
        }
        if self.seeds == 0 {
            return Err(Error::Spec("seeds must be at least 1".into()));
        }
        self.train.validate()
    }

    /// Requested fractions plus 1.0, ascending and deduplicated.
    pub fn fractions_with_full(&self) -> Vec<f64> {
        let mut f = self.fractions.clone();
        f.push(1.0);
        f.sort_by(f64::total_cmp);
        f.dedup();
        f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub id: String,
    pub framework: String,
    pub train_languages: TrainLanguages,
    pub fraction: f64,
    pub replicate: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CellSpec,
    pub train_examples: usize,
    pub accuracy: Accuracy,
    pub cosine_initial: Option<CosineStats>,
    pub cosine_final: Option<CosineStats>,
    pub history: Vec<EpochLosses>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub spec: GridSpec,
    pub config_hash: String,
    pub test_languages: Vec<String>,
    pub cells: Vec<CellResult>,
}

/// Enumerates cells in a fixed order: framework, train languages, fraction,
/// replicate.
pub fn plan_cells(spec: &GridSpec, corpus_languages: &[String]) -> Result<Vec<CellSpec>> {
    let mut cells = Vec::new();
    for fw in &spec.frameworks {
        for label in &spec.train_languages {
            let langs = TrainLanguages::parse(label, corpus_languages)?;
            for &fraction in &spec.fractions_with_full() {
                for r in 0..spec.seeds {
                    let id = format!("{fw}/{label}/f{fraction}/r{r}");
                    cells.push(CellSpec {
                        seed: seed::derive(spec.seed, &id),
                        id,
                        framework: fw.clone(),
                        train_languages: langs.clone(),
                        fraction,
                        replicate: r,
                    });
                }
            }
        }
    }
    Ok(cells)
}

/// Subset seed shared by every fraction of a replicate, so subsets nest.
pub fn subset_seed(top: u64, replicate: usize) -> u64 {
    seed::derive(top, &format!("subset/r{replicate}"))
}

pub fn run_cell(
    registry: &FrameworkRegistry,
    spec: &GridSpec,
    cell: &CellSpec,
    train_set: &Dataset,
    test_set: &Dataset,
) -> Result<CellResult> {
    let data = filter_language(train_set, &cell.train_languages.tags)?;
    let data = if cell.fraction < 1.0 {
        subset_fraction(&data, cell.fraction, subset_seed(spec.seed, cell.replicate))?
    } else {
        data
    };
    let config = TrainConfig {
        seed: cell.seed,
        ..spec.train.clone()
    };
    let outcome = train(registry, &cell.framework, &data, &config)?;
    let transfers = registry.get(&cell.framework)?.transfers;
    let (cosine_initial, cosine_final) = if spec.cosine && transfers {
        (
            Some(cosine_analysis(outcome.initial.as_ref(), test_set)?),
            Some(cosine_analysis(outcome.model.as_ref(), test_set)?),
        )
    } else {
        (None, None)
    };
    Ok(CellResult {
        cell: cell.clone(),
        train_examples: data.len(),
        accuracy: evaluate(outcome.model.as_ref(), test_set)?,
        cosine_initial,
        cosine_final,
        history: outcome.history,
    })
}

fn cell_file(id: &str) -> String {
    format!("{}.json", id.replace(['/', '.'], "_"))
}

/// Trains and evaluates every cell. Completed cells are written to
/// `<out>/cells/` as they finish; the first failing cell (in plan order)
/// aborts the grid.
pub fn run_grid(
    registry: &FrameworkRegistry,
    spec: &GridSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    out: Option<&Path>,
) -> Result<GridReport> {
    spec.validate(registry)?;
    let cells = plan_cells(spec, train_set.languages())?;
    let cell_dir = out.map(|o| o.join("cells"));
    if let Some(dir) = &cell_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let run_one = |cell: &CellSpec| -> Result<CellResult> {
        let start = Instant::now();
        let wrap = |e: Error| Error::Cell {
            cell: cell.id.clone(),
            source: Box::new(e),
        };
        let result = run_cell(registry, spec, cell, train_set, test_set).map_err(wrap)?;
        info!(
            "cell {} done in {:.1}s: {:.2}%",
            cell.id,
            start.elapsed().as_secs_f64(),
            result.accuracy.combined
        );
        if let Some(dir) = &cell_dir {
            let path = dir.join(cell_file(&cell.id));
            let text = serde_json::to_string_pretty(&result).map_err(|e| wrap(e.into()))?;
            fs::write(&path, text).map_err(|e| wrap(Error::io(&path, e)))?;
        }
        Ok(result)
    };
    let results: Vec<CellResult> = if spec.parallelism > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(spec.parallelism)
            .build()
            .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run_one).collect::<Result<_>>())?
    } else {
        cells.iter().map(run_one).collect::<Result<_>>()?
    };
    Ok(GridReport {
        config_hash: seed::config_hash(&serde_json::to_vec(spec)?),
        spec: spec.clone(),
        test_languages: test_set.languages().to_vec(),
        cells: results,
    })
}
