//! Simulation and verification lab for the modified Arratia flow: coalescing
//! Brownian particles on `[0, 1]` whose masses add on collision and whose
//! diffusivity is inverse to mass.
//!
//! Layers, bottom up:
//!
//! * [`flow`]: the finite particle system as a step-function valued chain.
//! * [`observables`]: pushforward measures, quantile functions and the exact
//!   quadratic Wasserstein distance on the line.
//! * [`stoch_calc`]: projections onto block partitions and stochastic
//!   integrals of simple processes against the flow.
//! * [`girsanov`]: drifted flows, likelihood ratios and tilted estimators.
//! * [`ldp`]: rate function, time rescaling and large-deviation probes.
//! * [`harness`]: statistical test batteries and exports.
//! * [`cli`]: the `massflow` command line.

pub mod cli;
pub mod config;
pub mod drift;
pub mod error;
pub mod flow;
pub mod girsanov;
pub mod grid;
pub mod harness;
pub mod ldp;
pub mod observables;
pub mod pava;
pub mod rng;
pub mod stats;
pub mod stoch_calc;

pub use config::{ExperimentConfig, InitialConvention};
pub use drift::DriftPath;
pub use error::{Error, Result};
pub use flow::{simulate_path, simulate_replica, Block, FlowPath, FlowState, Merge, NoiseVector};
pub use grid::TimeGrid;
