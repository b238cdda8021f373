//! Training loop, evaluation, embedding analysis, and grid reports.

mod evaluate;
mod grid;
mod pca;
mod report;
mod train;

pub use evaluate::{
    cosine, cosine_analysis, cosine_stats, evaluate, predict_dataset, score_predictions,
    transferred_embeddings, Accuracy, CosineStats, Tally,
};
pub use grid::{
    plan_cells, run_cell, run_grid, subset_seed, CellResult, CellSpec, GridReport, GridSpec,
    TrainLanguages,
};
pub use pca::{export_projection, pca_2d, Projection};
pub use report::{render, MeanSd, COMBINED};
pub use train::{train, EpochLosses, TrainConfig, TrainOutcome, Trainer};
