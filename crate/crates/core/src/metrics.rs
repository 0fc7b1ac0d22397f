//! SLO feasibility, goodput and per-seed summaries.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::repair::HardwareProfile;
use crate::sim::{BatchResult, CrashCategory, RequestOutcome};
use crate::space::Config;

/// Violation score assigned to every crashed trial.
pub const V_CRASH: f64 = 1e6;

/// Average request latency below which a feasible trial is fast-cluster.
pub const FAST_LATENCY_MS: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SloThresholds {
    pub ttft_p99_ms: f64,
    pub itl_p99_ms: f64,
    /// Memory cap. `None` ties it to `u·V` of each trial.
    pub memory_bytes: Option<f64>,
}

impl Default for SloThresholds {
    fn default() -> Self {
        Self {
            ttft_p99_ms: 500.0,
            itl_p99_ms: 100.0,
            memory_bytes: None,
        }
    }
}

impl SloThresholds {
    pub fn memory_cap(&self, config: &Config, hw: &HardwareProfile) -> f64 {
        self.memory_bytes
            .unwrap_or(config.gpu_memory_utilization * hw.vram_bytes as f64)
    }
}

impl RequestOutcome {
    /// Per-request SLO check: own TTFT and own largest gap.
    pub fn meets(&self, slo: &SloThresholds) -> bool {
        self.error.is_none() && self.ttft_ms <= slo.ttft_p99_ms && self.max_itl_ms() <= slo.itl_p99_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialMetrics {
    pub feasible: bool,
    pub ttft_p99_ms: Option<f64>,
    pub itl_p99_ms: Option<f64>,
    pub memory_bytes: f64,
    pub goodput_tokens_per_s: f64,
    pub violation_score: f64,
    pub avg_latency_ms: Option<f64>,
    pub crash: CrashCategory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    /// A healthy batch must contain at least one request.
    EmptyHealthyBatch,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptyHealthyBatch => f.write_str("healthy batch has no requests"),
        }
    }
}

impl core::error::Error for MetricsError {}

/// Nearest-rank percentile (`q` in (0, 100]). With five samples every
/// percentile above 80 is the maximum.
pub fn percentile_nearest_rank(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = libm::ceil(q / 100.0 * sorted.len() as f64) as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Total constraint violation: relative excess over each threshold, or
/// [`V_CRASH`] for a crash.
pub fn violation_score(
    crash: CrashCategory,
    ttft_p99_ms: f64,
    itl_p99_ms: f64,
    memory_bytes: f64,
    slo: &SloThresholds,
    memory_cap: f64,
) -> f64 {
    if crash.is_crash() {
        return V_CRASH;
    }
    let excess = |value: f64, cap: f64| (value / cap - 1.0).max(0.0);
    excess(ttft_p99_ms, slo.ttft_p99_ms) + excess(itl_p99_ms, slo.itl_p99_ms) + excess(memory_bytes, memory_cap)
}

/// Marks each request's SLO satisfaction in place.
pub fn annotate_slo(batch: &mut BatchResult, slo: &SloThresholds) {
    for r in &mut batch.requests {
        r.satisfied_slo = r.meets(slo);
    }
}

pub fn evaluate_trial(
    batch: &BatchResult,
    slo: &SloThresholds,
    config: &Config,
    hw: &HardwareProfile,
) -> Result<TrialMetrics, MetricsError> {
    let memory_bytes = hw.memory_bytes(config);
    if batch.crash.is_crash() {
        return Ok(TrialMetrics {
            feasible: false,
            ttft_p99_ms: None,
            itl_p99_ms: None,
            memory_bytes,
            goodput_tokens_per_s: 0.0,
            violation_score: V_CRASH,
            avg_latency_ms: None,
            crash: batch.crash,
        });
    }
    if batch.requests.is_empty() {
        return Err(MetricsError::EmptyHealthyBatch);
    }

    let ttfts: Vec<f64> = batch.requests.iter().map(|r| r.ttft_ms).collect();
    let itls: Vec<f64> = batch.requests.iter().flat_map(|r| r.itl_ms.iter().copied()).collect();
    let ttft_p99 = percentile_nearest_rank(&ttfts, 99.0).unwrap_or(0.0);
    // A one-token response has no gaps.
    let itl_p99 = percentile_nearest_rank(&itls, 99.0).unwrap_or(0.0);
    let memory_cap = slo.memory_cap(config, hw);
    let violation = violation_score(batch.crash, ttft_p99, itl_p99, memory_bytes, slo, memory_cap);

    let good_tokens: u32 = batch
        .requests
        .iter()
        .filter(|r| r.meets(slo))
        .map(|r| r.output_tokens)
        .sum();
    let seconds = batch.batch_wall_clock_ms / 1000.0;
    let goodput = if seconds > 0.0 {
        f64::from(good_tokens) / seconds
    } else {
        0.0
    };
    let avg = batch.requests.iter().map(|r| r.total_latency_ms).sum::<f64>() / batch.requests.len() as f64;

    Ok(TrialMetrics {
        feasible: violation == 0.0,
        ttft_p99_ms: Some(ttft_p99),
        itl_p99_ms: Some(itl_p99),
        memory_bytes,
        goodput_tokens_per_s: goodput,
        violation_score: violation,
        avg_latency_ms: Some(avg),
        crash: batch.crash,
    })
}

/// Feasible with average request latency strictly below 1000 ms.
pub fn is_fast(metrics: &TrialMetrics) -> bool {
    metrics.feasible && metrics.avg_latency_ms.is_some_and(|avg| avg < FAST_LATENCY_MS)
}

/// Fast-cluster statistics of one trial sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FastTrace {
    pub fast_count: u32,
    /// 1-based.
    pub first_fast: Option<u32>,
    /// Share of trials after the first fast one that are fast. `None` when
    /// no fast trial exists or the first fast trial is the last trial.
    pub post_hit_consistency: Option<f64>,
}

impl FastTrace {
    pub fn from_flags(flags: &[bool]) -> Self {
        let fast_count = flags.iter().filter(|&&f| f).count() as u32;
        let first = flags.iter().position(|&f| f);
        let post_hit_consistency = first.and_then(|i| {
            let later = &flags[i + 1..];
            (!later.is_empty()).then(|| later.iter().filter(|&&f| f).count() as f64 / later.len() as f64)
        });
        Self {
            fast_count,
            first_fast: first.map(|i| i as u32 + 1),
            post_hit_consistency,
        }
    }
}

/// Per-(optimizer, seed) summary feeding the cross-seed tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub optimizer: String,
    pub seed: u64,
    pub budget: u32,
    pub fast_count: u32,
    pub post_hit_consistency: Option<f64>,
    pub first_fast: Option<u32>,
    pub best_latency_ms: Option<f64>,
    #[serde(default)]
    pub feasible_count: Option<u32>,
    #[serde(default)]
    pub crash_count: Option<u32>,
}

impl SeedSummary {
    /// `fast_count = 1 + PHC·(budget − first_fast)` whenever both are defined.
    pub fn is_consistent(&self) -> bool {
        match (self.first_fast, self.post_hit_consistency) {
            (Some(first), Some(phc)) if first <= self.budget => {
                let implied = 1.0 + phc * f64::from(self.budget - first);
                libm::round(implied) as u32 == self.fast_count
            }
            (None, _) => self.fast_count == 0,
            _ => true,
        }
    }
}

/// Summarizes trials given in execution order.
pub fn seed_summary(optimizer: &str, seed: u64, trials: &[TrialMetrics]) -> SeedSummary {
    let flags: Vec<bool> = trials.iter().map(is_fast).collect();
    let trace = FastTrace::from_flags(&flags);
    let best_latency_ms = trials
        .iter()
        .filter(|m| m.feasible)
        .filter_map(|m| m.avg_latency_ms)
        .min_by(f64::total_cmp);
    SeedSummary {
        optimizer: optimizer.into(),
        seed,
        budget: trials.len() as u32,
        fast_count: trace.fast_count,
        post_hit_consistency: trace.post_hit_consistency,
        first_fast: trace.first_fast,
        best_latency_ms,
        feasible_count: Some(trials.iter().filter(|m| m.feasible).count() as u32),
        crash_count: Some(trials.iter().filter(|m| m.crash.is_crash()).count() as u32),
    }
}
