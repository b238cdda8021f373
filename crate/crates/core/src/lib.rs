//! Multi-lingual teacher-student distillation for speech intent
//! classification: a small reverse-mode autodiff engine, the MTSN and
//! Baseline-2 models, a synthetic bilingual corpus, and the experiment
//! harness that produces accuracy and embedding-similarity reports.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod layers;
pub mod losses;
pub mod model;
pub mod optim;
pub mod seed;
pub mod tensor;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
