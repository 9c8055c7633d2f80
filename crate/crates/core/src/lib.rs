//! Federated cross-project defect prediction.
//!
//! Clients are project versions that train logistic-regression models on
//! private data. The server aggregates them and, in the FedDP protocol,
//! distills a correlation-weighted ensemble of the local models into the
//! global model using a public open-source project. FLR, OpenFLR and
//! centralized training are provided as baselines, together with the
//! metric and significance machinery used to compare them.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the common instantiations.

pub mod dataset;
pub mod distillation;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod federation;
pub mod model;
pub mod scalar;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, ExperimentReport};
pub use scalar::Scalar;

pub type Instance64 = dataset::Instance<f64>;
pub type ProjectDataset64 = dataset::ProjectDataset<f64>;
pub type ProjectDataset32 = dataset::ProjectDataset<f32>;
pub type NormStats64 = dataset::NormStats<f64>;
pub type ModelParams64 = model::ModelParams<f64>;
pub type ModelParams32 = model::ModelParams<f32>;
pub type SoftPrediction64 = model::SoftPrediction<f64>;
pub type TrainSpec64 = model::TrainSpec<f64>;
pub type CorrelationMatrix64 = distillation::CorrelationMatrix<f64>;
pub type RoundConfig64 = federation::RoundConfig<f64>;
pub type ServerState64 = federation::ServerState<f64>;
pub type ServerState32 = federation::ServerState<f32>;
