//! Feasible-first annealing with crash memory.
//!
//! Before any feasible point exists the walk follows a cursor accepted on
//! violation score. The first feasible observation becomes the incumbent;
//! after that only feasible observations can replace it, accepted on
//! goodput. Crashes never move either point but are counted per
//! `(category, signature)` so later proposals can steer around them.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::{Observation, Optimizer, OptimizerKind, OptimizerParams, Phase, Proposal};
use crate::sim::CrashCategory;
use crate::space::{structural_prob_schedule, Config, SearchSpace, StructuralSignature};
use crate::stats::sample_std;

#[derive(Debug, Clone, PartialEq)]
pub struct TbaState {
    /// `None` until `n_init` observations have been seen.
    pub temperature: Option<f64>,
    /// Best accepted feasible observation.
    pub incumbent: Option<Observation>,
    /// Pre-feasibility position of the walk.
    pub cursor: Option<Observation>,
    pub bad_regions: BTreeMap<(CrashCategory, StructuralSignature), u32>,
    pub init_count: u32,
    /// Non-crash violation scores among the first `init_count` observations.
    init_violations: Vec<f64>,
    observed: u32,
}

/// A TBA candidate and whether the crash-memory veto redrew it.
#[derive(Debug, Clone, PartialEq)]
pub struct TbaCandidate {
    pub config: Config,
    pub resampled: bool,
}

impl TbaState {
    pub fn new(init_count: u32) -> Self {
        Self {
            temperature: None,
            incumbent: None,
            cursor: None,
            bad_regions: BTreeMap::new(),
            init_count,
            init_violations: Vec::new(),
            observed: 0,
        }
    }

    /// Crashes recorded for `signature`, summed over categories.
    pub fn crash_count(&self, signature: &StructuralSignature) -> u32 {
        self.bad_regions
            .iter()
            .filter(|((_, s), _)| s == signature)
            .map(|(_, n)| *n)
            .sum()
    }

    pub fn observed(&self) -> u32 {
        self.observed
    }

    /// Temperature used for acceptance on the current step.
    fn working_temperature(&self) -> f64 {
        self.temperature
            .unwrap_or_else(|| sample_std(&self.init_violations).unwrap_or(0.0).max(1.0))
    }

    /// Folds one observation into the state.
    pub fn step(&mut self, obs: &Observation, params: &OptimizerParams, space: &SearchSpace, rng: &mut dyn RngCore) {
        self.observed += 1;
        if self.observed <= self.init_count && !obs.crash.is_crash() {
            self.init_violations.push(obs.violation_score);
        }
        if self.temperature.is_none() && self.observed >= self.init_count {
            self.temperature = Some(sample_std(&self.init_violations).unwrap_or(0.0).max(1.0));
        }
        let temperature = self.working_temperature();

        if obs.crash.is_crash() {
            *self
                .bad_regions
                .entry((obs.crash, space.signature(&obs.config)))
                .or_insert(0) += 1;
        } else if let Some(incumbent) = &self.incumbent {
            if obs.feasible() {
                let scale = if incumbent.goodput > 0.0 {
                    incumbent.goodput
                } else {
                    1.0
                };
                let delta = obs.goodput - incumbent.goodput;
                // Always draw, so the stream position does not depend on the branch.
                let u: f64 = rng.gen();
                if delta >= 0.0 || u < libm::exp(delta / (temperature * scale)) {
                    self.incumbent = Some(obs.clone());
                }
            }
        } else if obs.feasible() {
            self.incumbent = Some(obs.clone());
        } else {
            let u: f64 = rng.gen();
            let accept = match &self.cursor {
                None => true,
                Some(cursor) => {
                    let delta = obs.violation_score - cursor.violation_score;
                    delta <= 0.0 || u < libm::exp(-delta / temperature)
                }
            };
            if accept {
                self.cursor = Some(obs.clone());
            }
        }

        if let Some(t) = self.temperature.as_mut() {
            *t *= params.temperature_decay;
        }
    }

    /// Neighbor of the incumbent (or the cursor before feasibility), redrawn
    /// once when its signature has crashed `veto_threshold` times. `None`
    /// when there is nothing to move from.
    pub fn propose(
        &self,
        trial_index: u32,
        budget: u32,
        params: &OptimizerParams,
        space: &SearchSpace,
        rng: &mut dyn RngCore,
    ) -> Option<TbaCandidate> {
        let anchor = self.incumbent.as_ref().or(self.cursor.as_ref())?;
        let p = structural_prob_schedule(trial_index, budget);
        let first = space.neighbor(&anchor.config, p, rng);
        if self.crash_count(&space.signature(&first)) < params.veto_threshold {
            return Some(TbaCandidate {
                config: first,
                resampled: false,
            });
        }
        Some(TbaCandidate {
            config: space.neighbor(&anchor.config, p, rng),
            resampled: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tba {
    budget: u32,
    params: OptimizerParams,
    state: TbaState,
    history: Vec<Observation>,
}

impl Tba {
    pub fn new(budget: u32, params: OptimizerParams) -> Self {
        Self {
            budget,
            params,
            state: TbaState::new(params.n_init),
            history: Vec::new(),
        }
    }

    pub fn state(&self) -> &TbaState {
        &self.state
    }

    pub(crate) fn propose_config(&self, trial_index: u32, space: &SearchSpace, rng: &mut dyn RngCore) -> Config {
        if (self.history.len() as u32) < self.params.n_init {
            return space.sample_uniform(rng);
        }
        match self.state.propose(trial_index, self.budget, &self.params, space, rng) {
            Some(c) => c.config,
            None => space.sample_uniform(rng),
        }
    }
}

impl Optimizer for Tba {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::Tba
    }

    fn propose(&self, trial_index: u32, space: &SearchSpace, rng: &mut dyn RngCore) -> Proposal {
        Proposal {
            config: self.propose_config(trial_index, space, rng),
            phase: Phase::Explore,
        }
    }

    fn observe(&mut self, obs: Observation, space: &SearchSpace, rng: &mut dyn RngCore) {
        self.state.step(&obs, &self.params, space, rng);
        self.history.push(obs);
    }

    fn history(&self) -> &[Observation] {
        &self.history
    }
}
