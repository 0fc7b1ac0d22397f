//! One (optimizer, seed) study: propose, repair, run, evaluate, observe.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::metrics::{annotate_slo, evaluate_trial, SloThresholds, TrialMetrics};
use crate::optimizer::{AnyOptimizer, Observation, Optimizer, OptimizerKind, OptimizerParams, Phase};
use crate::repair::{repair, HardwareProfile, RepairAction};
use crate::rng::{trial_rng, Stream};
use crate::sim::{BatchResult, CrashCategory, DispatchMode, RequestOutcome, ServingBackend, Workload};
use crate::space::{Config, SearchSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub budget: u32,
    pub workload: Workload,
    pub slo: SloThresholds,
    pub hw: HardwareProfile,
    pub params: OptimizerParams,
    /// When false, proposals run as drawn: no flag cleanup, no memory guard.
    pub repair_enabled: bool,
}

impl StudySpec {
    pub fn new(optimizer: OptimizerKind, seed: u64) -> Self {
        Self {
            optimizer,
            seed,
            budget: 15,
            workload: Workload::default(),
            slo: SloThresholds::default(),
            hw: HardwareProfile::reference(),
            params: OptimizerParams::default(),
            repair_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<(), &'static str> {
        if self.budget == 0 {
            return Err("budget must be at least 1");
        }
        if !self.workload.is_valid() {
            return Err("workload needs positive requests, token cap, rate and concurrency cap");
        }
        if !self.hw.is_valid() {
            return Err("hardware profile is invalid");
        }
        if !(self.slo.ttft_p99_ms > 0.0 && self.slo.itl_p99_ms > 0.0 && self.slo.memory_bytes.is_none_or(|m| m > 0.0)) {
            return Err("SLO thresholds must be positive");
        }
        self.params.validate()
    }
}

/// Everything persisted about one executed trial. Field names are the
/// trial-log schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialRecord {
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// 1-based.
    pub trial_index: u32,
    pub phase: Phase,
    pub raw_config: Config,
    pub repaired_config: Config,
    pub repair_actions: Vec<RepairAction>,
    pub crash_category: CrashCategory,
    pub requests: Vec<RequestOutcome>,
    pub batch_wall_clock_ms: f64,
    pub dispatch_mode: DispatchMode,
    pub feasible: bool,
    pub ttft_p99_ms: Option<f64>,
    pub itl_p99_ms: Option<f64>,
    pub memory_bytes: f64,
    pub goodput_tokens_per_s: f64,
    pub violation_score: f64,
    pub avg_latency_ms: Option<f64>,
    /// Wall time of the trial's completion, milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
}

impl TrialRecord {
    pub fn metrics(&self) -> TrialMetrics {
        TrialMetrics {
            feasible: self.feasible,
            ttft_p99_ms: self.ttft_p99_ms,
            itl_p99_ms: self.itl_p99_ms,
            memory_bytes: self.memory_bytes,
            goodput_tokens_per_s: self.goodput_tokens_per_s,
            violation_score: self.violation_score,
            avg_latency_ms: self.avg_latency_ms,
            crash: self.crash_category,
        }
    }

    pub fn observation(&self) -> Observation {
        Observation::from_metrics(
            self.repaired_config.clone(),
            &self.metrics(),
            self.trial_index,
            self.phase,
        )
    }

    /// Copy with the timestamp zeroed, for comparisons across runs.
    pub fn without_timestamp(&self) -> Self {
        Self {
            timestamp_ms: 0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReplayError {
    Foreign {
        trial_index: u32,
        optimizer: OptimizerKind,
        seed: u64,
    },
    OutOfOrder {
        expected: u32,
        found: u32,
    },
    BudgetExceeded {
        budget: u32,
    },
    /// The record does not match what this study would propose.
    Diverged {
        trial_index: u32,
        detail: String,
    },
}

impl fmt::Display for ReplayError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayError::Foreign {
                trial_index,
                optimizer,
                seed,
            } => {
                write!(f, "trial {trial_index} belongs to {optimizer}/{seed}, not this study")
            }
            ReplayError::OutOfOrder { expected, found } => {
                write!(f, "expected trial {expected}, found trial {found}")
            }
            ReplayError::BudgetExceeded { budget } => write!(f, "study budget of {budget} trials already spent"),
            ReplayError::Diverged { trial_index, detail } => write!(f, "trial {trial_index} diverges: {detail}"),
        }
    }
}

impl core::error::Error for ReplayError {}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    spec: StudySpec,
    space: SearchSpace,
    optimizer: AnyOptimizer,
    records: u32,
}

impl Study {
    pub fn new(spec: StudySpec) -> Self {
        Self::with_space(spec, SearchSpace::default())
    }

    pub fn with_space(spec: StudySpec, space: SearchSpace) -> Self {
        let optimizer = spec.optimizer.build(spec.budget, spec.params);
        Self {
            spec,
            space,
            optimizer,
            records: 0,
        }
    }

    pub fn spec(&self) -> &StudySpec {
        &self.spec
    }

    pub fn optimizer(&self) -> &AnyOptimizer {
        &self.optimizer
    }

    pub fn completed(&self) -> u32 {
        self.records
    }

    pub fn next_trial_index(&self) -> u32 {
        self.records + 1
    }

    pub fn is_complete(&self) -> bool {
        self.records >= self.spec.budget
    }

    /// Runs the next trial without observing it.
    pub fn execute_trial<B: ServingBackend>(&self, backend: &mut B, timestamp_ms: u64) -> TrialRecord {
        let t = self.next_trial_index();
        let seed = self.spec.seed;
        let proposal = self
            .optimizer
            .propose(t, &self.space, &mut trial_rng(seed, t, Stream::Propose));
        let (repaired, actions) = if self.spec.repair_enabled {
            let report = repair(&self.space, &proposal.config, &self.spec.hw);
            (report.repaired, report.actions)
        } else {
            (proposal.config.clone(), Vec::new())
        };

        let mut batch = if actions.contains(&RepairAction::GuardUnsatisfiable) {
            BatchResult::crashed(CrashCategory::StartupFailure)
        } else {
            match backend.start_engine(&repaired, &self.spec.hw, seed) {
                Err(crash) => BatchResult::crashed(crash),
                Ok(engine) => match backend.preflight(&engine) {
                    Err(crash) => BatchResult::crashed(crash),
                    Ok(()) => {
                        backend.dispatch_batch(&engine, &self.spec.workload, &mut trial_rng(seed, t, Stream::Simulate))
                    }
                },
            }
        };
        annotate_slo(&mut batch, &self.spec.slo);
        let metrics = evaluate_trial(&batch, &self.spec.slo, &repaired, &self.spec.hw)
            .expect("validated workloads always issue requests");

        TrialRecord {
            optimizer: self.spec.optimizer,
            seed,
            trial_index: t,
            phase: proposal.phase,
            raw_config: proposal.config,
            repaired_config: repaired,
            repair_actions: actions,
            crash_category: metrics.crash,
            requests: batch.requests,
            batch_wall_clock_ms: batch.batch_wall_clock_ms,
            dispatch_mode: self.spec.workload.dispatch_mode,
            feasible: metrics.feasible,
            ttft_p99_ms: metrics.ttft_p99_ms,
            itl_p99_ms: metrics.itl_p99_ms,
            memory_bytes: metrics.memory_bytes,
            goodput_tokens_per_s: metrics.goodput_tokens_per_s,
            violation_score: metrics.violation_score,
            avg_latency_ms: metrics.avg_latency_ms,
            timestamp_ms,
        }
    }

    /// Feeds a record of the next trial to the optimizer after checking that
    /// it belongs here.
    pub fn commit(&mut self, record: &TrialRecord) -> Result<(), ReplayError> {
        if record.optimizer != self.spec.optimizer || record.seed != self.spec.seed {
            return Err(ReplayError::Foreign {
                trial_index: record.trial_index,
                optimizer: record.optimizer,
                seed: record.seed,
            });
        }
        if self.is_complete() {
            return Err(ReplayError::BudgetExceeded {
                budget: self.spec.budget,
            });
        }
        let t = self.next_trial_index();
        if record.trial_index != t {
            return Err(ReplayError::OutOfOrder {
                expected: t,
                found: record.trial_index,
            });
        }
        let expected = self
            .optimizer
            .propose(t, &self.space, &mut trial_rng(self.spec.seed, t, Stream::Propose));
        if expected.phase != record.phase {
            return Err(ReplayError::Diverged {
                trial_index: t,
                detail: alloc::format!("phase {} where {} was expected", record.phase, expected.phase),
            });
        }
        if expected.config != record.raw_config {
            return Err(ReplayError::Diverged {
                trial_index: t,
                detail: String::from("proposed configuration differs"),
            });
        }
        self.optimizer.observe(
            record.observation(),
            &self.space,
            &mut trial_rng(self.spec.seed, t, Stream::Observe),
        );
        self.records += 1;
        Ok(())
    }

    /// Rebuilds state from persisted records, oldest first.
    pub fn replay<'a>(&mut self, records: impl IntoIterator<Item = &'a TrialRecord>) -> Result<(), ReplayError> {
        records.into_iter().try_for_each(|r| self.commit(r))
    }

    /// Executes and commits trials until the budget is spent.
    pub fn run_to_completion<B: ServingBackend>(&mut self, backend: &mut B) -> Vec<TrialRecord> {
        let mut out = Vec::new();
        while !self.is_complete() {
            let record = self.execute_trial(backend, 0);
            self.commit(&record).expect("a freshly executed trial always commits");
            out.push(record);
        }
        out
    }
}
