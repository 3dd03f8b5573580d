//! Simulator for clustered federated learning under concept drift.
//!
//! Clients receive fresh data every time step, subject to label-permutation
//! (real), rotation (virtual) and Dirichlet class-skew (label) drift. The
//! server groups clients by data prototypes, detects real drift per client,
//! and trains one model per cluster with EM-weighted local updates.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ncd;
pub mod prototype;
pub mod rdld;
pub mod rng;
pub mod runner;

pub use config::{parse_config, Preset, SimulationConfig};
pub use datagen::{build_scenario, Scenario, ScenarioConfig, TaskKey};
pub use engine::{run_simulation, Method, TrainingConfig};
pub use error::{Error, Result};
pub use metrics::{average_accuracy, RunReport};
pub use model::{Architecture, ModelParams};
pub use prototype::{Prototype, ProbeModel};
