use alloc::vec::Vec;

use rand::RngCore;

use super::{Observation, Optimizer, OptimizerKind, Phase, Proposal};
use crate::space::SearchSpace;

/// Independent uniform draws; the baseline.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RandomSearch {
    history: Vec<Observation>,
}

impl RandomSearch {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Optimizer for RandomSearch {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::Random
    }

    fn propose(&self, _trial_index: u32, space: &SearchSpace, rng: &mut dyn RngCore) -> Proposal {
        Proposal {
            config: space.sample_uniform(rng),
            phase: Phase::Baseline,
        }
    }

    fn observe(&mut self, obs: Observation, _space: &SearchSpace, _rng: &mut dyn RngCore) {
        self.history.push(obs);
    }

    fn history(&self) -> &[Observation] {
        &self.history
    }
}
