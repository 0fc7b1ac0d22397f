//! Proposal strategies behind one interface.
//!
//! Every optimizer owns its history. The runner calls [`Optimizer::propose`]
//! for trial `t`, repairs and executes the candidate, then hands the result
//! back through [`Optimizer::observe`]. Both calls receive a generator
//! derived from `(seed, t)`, so feeding a fresh instance the same
//! observations rebuilds the same state.

mod hybrid;
mod random;
mod tba;
mod tpe;

use core::fmt;
use core::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::metrics::TrialMetrics;
use crate::sim::CrashCategory;
use crate::space::{Config, SearchSpace};

pub use hybrid::{handoff_check, Handoff, HandoffPolicy, Hybrid};
pub use random::RandomSearch;
pub use tba::{Tba, TbaState};
pub use tpe::{tpe_warm_start, Tpe, TpeState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Explore,
    Exploit,
    Baseline,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Explore => "explore",
            Phase::Exploit => "exploit",
            Phase::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What an optimizer learns from one executed trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// The repaired configuration that actually ran.
    pub config: Config,
    pub crash: CrashCategory,
    pub violation_score: f64,
    pub goodput: f64,
    pub avg_latency_ms: Option<f64>,
    pub trial_index: u32,
    pub phase: Phase,
}

impl Observation {
    pub fn from_metrics(config: Config, metrics: &TrialMetrics, trial_index: u32, phase: Phase) -> Self {
        Self {
            config,
            crash: metrics.crash,
            violation_score: metrics.violation_score,
            goodput: metrics.goodput_tokens_per_s,
            avg_latency_ms: metrics.avg_latency_ms,
            trial_index,
            phase,
        }
    }

    pub fn feasible(&self) -> bool {
        !self.crash.is_crash() && self.violation_score == 0.0
    }
}

/// An unrepaired candidate and the phase it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub config: Config,
    pub phase: Phase,
}

/// Hyperparameters shared by the strategies. Every field may be omitted in
/// a configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerParams {
    /// Uniform initialization trials.
    pub n_init: u32,
    /// Feasible trials required for an early handoff.
    pub n_f_min: u32,
    /// Crashed or SLO-violating trials required for an early handoff.
    pub n_b_min: u32,
    /// Good-set quantile.
    pub gamma: f64,
    pub candidate_count: u32,
    pub temperature_decay: f64,
    /// Crashes recorded for a signature before its proposals are resampled.
    pub veto_threshold: u32,
}

impl Default for OptimizerParams {
    fn default() -> Self {
        Self {
            n_init: 3,
            n_f_min: 2,
            n_b_min: 1,
            gamma: 0.25,
            candidate_count: 24,
            temperature_decay: 0.9,
            veto_threshold: 2,
        }
    }
}

impl OptimizerParams {
    pub fn validate(&self) -> Result<(), &'static str> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err("gamma must lie in (0, 1]");
        }
        if self.candidate_count == 0 {
            return Err("candidate_count must be positive");
        }
        if !(self.temperature_decay > 0.0 && self.temperature_decay < 1.0) {
            return Err("temperature_decay must lie in (0, 1)");
        }
        Ok(())
    }
}

pub trait Optimizer {
    fn kind(&self) -> OptimizerKind;

    /// Candidate for 1-based trial `trial_index`, before repair.
    fn propose(&self, trial_index: u32, space: &SearchSpace, rng: &mut dyn RngCore) -> Proposal;

    /// Records the outcome of the most recent trial.
    fn observe(&mut self, obs: Observation, space: &SearchSpace, rng: &mut dyn RngCore);

    fn history(&self) -> &[Observation];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "tba")]
    Tba,
    #[serde(rename = "tpe")]
    Tpe,
    #[serde(rename = "tba-tpe")]
    TbaTpe,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 4] = [
        OptimizerKind::Random,
        OptimizerKind::Tba,
        OptimizerKind::Tpe,
        OptimizerKind::TbaTpe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Random => "random",
            OptimizerKind::Tba => "tba",
            OptimizerKind::Tpe => "tpe",
            OptimizerKind::TbaTpe => "tba-tpe",
        }
    }

    pub fn build(self, budget: u32, params: OptimizerParams) -> AnyOptimizer {
        match self {
            OptimizerKind::Random => AnyOptimizer::Random(RandomSearch::new()),
            OptimizerKind::Tba => AnyOptimizer::Tba(Tba::new(budget, params)),
            OptimizerKind::Tpe => AnyOptimizer::Tpe(Tpe::new(params)),
            OptimizerKind::TbaTpe => AnyOptimizer::TbaTpe(Hybrid::new(budget, params)),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnknownOptimizer;

impl fmt::Display for UnknownOptimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("unknown optimizer (expected random, tba, tpe or tba-tpe)")
    }
}

impl core::error::Error for UnknownOptimizer {}

impl FromStr for OptimizerKind {
    type Err = UnknownOptimizer;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(OptimizerKind::Random),
            "tba" => Ok(OptimizerKind::Tba),
            "tpe" => Ok(OptimizerKind::Tpe),
            "tba-tpe" | "hybrid" => Ok(OptimizerKind::TbaTpe),
            _ => Err(UnknownOptimizer),
        }
    }
}

/// Closed set of strategies, so studies stay comparable by value.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyOptimizer {
    Random(RandomSearch),
    Tba(Tba),
    Tpe(Tpe),
    TbaTpe(Hybrid),
}

impl AnyOptimizer {
    fn inner(&self) -> &dyn Optimizer {
        match self {
            AnyOptimizer::Random(o) => o,
            AnyOptimizer::Tba(o) => o,
            AnyOptimizer::Tpe(o) => o,
            AnyOptimizer::TbaTpe(o) => o,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Optimizer {
        match self {
            AnyOptimizer::Random(o) => o,
            AnyOptimizer::Tba(o) => o,
            AnyOptimizer::Tpe(o) => o,
            AnyOptimizer::TbaTpe(o) => o,
        }
    }
}

impl Optimizer for AnyOptimizer {
    fn kind(&self) -> OptimizerKind {
        self.inner().kind()
    }

    fn propose(&self, trial_index: u32, space: &SearchSpace, rng: &mut dyn RngCore) -> Proposal {
        self.inner().propose(trial_index, space, rng)
    }

    fn observe(&mut self, obs: Observation, space: &SearchSpace, rng: &mut dyn RngCore) {
        self.inner_mut().observe(obs, space, rng)
    }

    fn history(&self) -> &[Observation] {
        self.inner().history()
    }
}

/// Feasible and infeasible counts `(n_f, n_b)` of a history.
pub fn outcome_counts(history: &[Observation]) -> (u32, u32) {
    let feasible = history.iter().filter(|o| o.feasible()).count() as u32;
    (feasible, history.len() as u32 - feasible)
}
