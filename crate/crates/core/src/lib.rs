//! Crash-aware autotuning of LLM serving configurations.
//!
//! The crate is `no_std` (with `alloc`) and contains every algorithmic piece
//! of the tuner:
//!
//! - [`space`]: the eight-knob conditional configuration space, uniform
//!   sampling and neighbor proposals.
//! - [`repair`]: the repair map and the KV-cache memory guard, plus the
//!   per-model hardware registry.
//! - [`sim`]: a deterministic serving-engine simulator with a four-way crash
//!   taxonomy and sequential/concurrent request dispatch.
//! - [`metrics`]: SLO feasibility, goodput, violation scores and per-seed
//!   summaries.
//! - [`optimizer`]: random search, feasible-first annealing, density-ratio
//!   exploitation and the two-phase hybrid.
//! - [`study`]: the trial pipeline (propose, repair, simulate, evaluate,
//!   observe) and the persisted trial record.
//! - [`stats`]: Mann-Whitney U, Holm-Bonferroni and the cross-seed report.
//! - [`check`]: simulator calibration targets.
//!
//! File IO, the experiment runner and the command line live in the companion
//! `slotune` crate.
#![no_std]

extern crate alloc;

pub mod check;
pub mod metrics;
pub mod optimizer;
pub mod repair;
pub mod rng;
pub mod sim;
pub mod space;
pub mod stats;
pub mod study;

mod error;
mod text;

pub use error::ParseError;
pub use metrics::{SeedSummary, SloThresholds, TrialMetrics};
pub use optimizer::{Observation, Optimizer, OptimizerKind, OptimizerParams, Phase};
pub use repair::{HardwareProfile, Registry, RepairAction, RepairReport};
pub use sim::{BatchResult, Calibration, CrashCategory, DispatchMode, Simulator, Workload};
pub use space::{Config, Knob, Quantization, SearchSpace, StructuralSignature};
pub use study::{Study, StudySpec, TrialRecord};
