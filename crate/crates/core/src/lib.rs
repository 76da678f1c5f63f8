//! Self-modulated reservoir computing.
//!
//! An echo-state network whose input strength and recurrent gain are scaled
//! at every step by two scalar gates driven by feedback from the reservoir
//! state. The crate provides
//!
//! - [`reservoir`]: the model, its initialization and simulation
//! - [`training`]: least-squares readouts, BPTT gradients for the gate
//!   feedback weights, Adam and multi-restart training
//! - [`tasks`]: attention, NARMA and Lorenz benchmark generators
//! - [`analysis`]: perturbation-based local sensitivity and evaluation metrics

pub mod analysis;
pub mod error;
pub mod reservoir;
pub mod rng;
pub mod tasks;
pub mod training;

pub use error::{Result, SmrcError};
pub use reservoir::{GateMode, GateParams, Model, ModelConfig, ReadoutParams, ReservoirParams, Trajectory};
pub use tasks::{Dataset, TaskKind, TaskSample};
pub use training::{ReadoutMode, SnapshotSelection, TrainConfig, TrainOutcome};
