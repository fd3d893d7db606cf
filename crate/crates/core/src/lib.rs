//! Thermodynamically consistent recurrent neural constitutive models.
//!
//! A recurrent cell infers internal state variables (ISVs) from the measurable
//! strain/stress history, a feed-forward head maps strain, temperature and ISVs
//! to Helmholtz free energy, and stress, entropy and dissipation follow as
//! derivatives of that energy.
//!
//! Modules, bottom-up:
//!
//! - [`autodiff`]: reverse-mode differentiation with nested gradients.
//! - [`nets`]: dense stacks, vanilla RNN and GRU cells, constitutive baselines.
//! - [`thermo`]: the composite energy-based model and its derived outputs.
//! - [`datagen`]: 1-D elasto-plastic paths with exact energy and dissipation.
//! - [`pipeline`]: standardization, windows, losses, Adam, training, checkpoints.
//! - [`eval`]: open-loop rollout, error metrics, correlation, parametric sweeps.
//! - [`io`]: the CSV path format.

pub mod autodiff;
pub mod datagen;
pub mod eval;
pub mod io;
pub mod nets;
pub mod pipeline;
pub mod rng;
pub mod thermo;

mod error;

pub use autodiff::{Graph, GraphError, Value, Var};
pub use datagen::{ElastoPlasticParams, LoadingProgram, MaterialPath};
pub use error::{Error, Result};
pub use eval::EvalReport;
pub use pipeline::{LossWeights, StandardizationStats, TrainConfig};
pub use thermo::{TcrnnModel, ThermoOutputs};
