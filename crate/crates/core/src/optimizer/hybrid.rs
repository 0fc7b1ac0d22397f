//! Annealing exploration followed by a one-way handoff to warm-started
//! density-ratio exploitation.

use alloc::vec::Vec;

use rand::RngCore;

use super::tba::Tba;
use super::tpe::{tpe_warm_start, TpeState};
use super::{outcome_counts, Observation, Optimizer, OptimizerKind, OptimizerParams, Phase, Proposal};
use crate::space::SearchSpace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandoffPolicy {
    pub t_min: u32,
    pub t_max: u32,
    pub n_f_min: u32,
    pub n_b_min: u32,
}

impl HandoffPolicy {
    pub fn for_budget(budget: u32, params: &OptimizerParams) -> Self {
        let t_min = (budget / 5).max(3);
        let t_max = ((budget * 2) / 5).max(5).max(t_min);
        Self {
            t_min,
            t_max,
            n_f_min: params.n_f_min,
            n_b_min: params.n_b_min,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Handoff {
    Stay,
    Handoff,
}

pub fn handoff_check(policy: &HandoffPolicy, history: &[Observation]) -> Handoff {
    let n = history.len() as u32;
    if n < policy.t_min {
        return Handoff::Stay;
    }
    if n >= policy.t_max {
        return Handoff::Handoff;
    }
    let (n_f, n_b) = outcome_counts(history);
    if n_f >= policy.n_f_min && n_b >= policy.n_b_min {
        Handoff::Handoff
    } else {
        Handoff::Stay
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hybrid {
    params: OptimizerParams,
    policy: HandoffPolicy,
    explore: Tba,
    /// Set once, when the handoff fires.
    exploit: Option<TpeState>,
    history: Vec<Observation>,
}

impl Hybrid {
    pub fn new(budget: u32, params: OptimizerParams) -> Self {
        Self {
            params,
            policy: HandoffPolicy::for_budget(budget, &params),
            explore: Tba::new(budget, params),
            exploit: None,
            history: Vec::new(),
        }
    }

    pub fn policy(&self) -> &HandoffPolicy {
        &self.policy
    }

    pub fn phase(&self) -> Phase {
        if self.exploit.is_some() {
            Phase::Exploit
        } else {
            Phase::Explore
        }
    }

    pub fn tpe_state(&self) -> Option<&TpeState> {
        self.exploit.as_ref()
    }

    pub fn tba(&self) -> &Tba {
        &self.explore
    }
}

impl Optimizer for Hybrid {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::TbaTpe
    }

    fn propose(&self, trial_index: u32, space: &SearchSpace, rng: &mut dyn RngCore) -> Proposal {
        match &self.exploit {
            Some(tpe) => Proposal {
                config: tpe.propose(space, rng),
                phase: Phase::Exploit,
            },
            None => Proposal {
                config: self.explore.propose_config(trial_index, space, rng),
                phase: Phase::Explore,
            },
        }
    }

    fn observe(&mut self, obs: Observation, space: &SearchSpace, rng: &mut dyn RngCore) {
        if self.exploit.is_none() {
            self.explore.observe(obs.clone(), space, rng);
        }
        self.history.push(obs);
        match self.exploit {
            Some(_) => self.exploit = Some(tpe_warm_start(&self.history, &self.params)),
            None if handoff_check(&self.policy, &self.history) == Handoff::Handoff => {
                self.exploit = Some(tpe_warm_start(&self.history, &self.params));
            }
            None => {}
        }
    }

    fn history(&self) -> &[Observation] {
        &self.history
    }
}
