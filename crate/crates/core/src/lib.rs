//! Co-clustering federated recommendation simulator.
//!
//! Each simulated client trains a private score function and its own copy of
//! the item embedding table. The server clusters items, splits participants
//! into a similar and a dissimilar group per round and hands the similar
//! group its averaged item table.

pub mod clustering;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod federation;
pub mod io;
pub mod model;
pub mod par;
pub mod partition;
pub mod rng;
pub mod synthetic;

pub use config::ExperimentConfig;
pub use dataset::{EvalMode, InteractionDataset, RatingFormat};
pub use error::{Error, Result};
pub use federation::{AblationMode, RoundConfig, RunReport, Simulation};
pub use model::{ItemEmbeddingMatrix, LossConfig, SclVariant, ScoreFunction};
pub use par::Parallelism;
