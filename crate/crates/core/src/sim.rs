//! Deterministic serving-engine simulator.
//!
//! Stands in for a live engine behind the same three-stage interface a real
//! driver would expose ([`ServingBackend`]): start the engine, run a
//! single-token preflight, then dispatch a batch of requests. Each stage can
//! fail, and the earliest failing stage names the trial's
//! [`CrashCategory`].
//!
//! Time is virtual. Requests arrive every `1 / target_rate` seconds;
//! sequential dispatch serializes them, concurrent dispatch overlaps them up
//! to `concurrency_cap` in flight. Latency constants live in a checked-in
//! [`Calibration`] table.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::ParseError;
use crate::repair::{kv_token_budget, HardwareProfile};
use crate::rng::truncated_normal;
use crate::space::{grid_index, Config, Quantization, SearchSpace};
use crate::text::content_lines;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashCategory {
    Healthy,
    StartupFailure,
    PreflightFailure,
    RuntimeFailure,
}

impl CrashCategory {
    pub const ALL: [CrashCategory; 4] = [
        CrashCategory::Healthy,
        CrashCategory::StartupFailure,
        CrashCategory::PreflightFailure,
        CrashCategory::RuntimeFailure,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CrashCategory::Healthy => "healthy",
            CrashCategory::StartupFailure => "startup_failure",
            CrashCategory::PreflightFailure => "preflight_failure",
            CrashCategory::RuntimeFailure => "runtime_failure",
        }
    }

    pub fn is_crash(self) -> bool {
        self != CrashCategory::Healthy
    }
}

impl fmt::Display for CrashCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispatchMode {
    Sequential,
    Concurrent,
}

impl DispatchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DispatchMode::Sequential => "sequential",
            DispatchMode::Concurrent => "concurrent",
        }
    }
}

impl core::str::FromStr for DispatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(DispatchMode::Sequential),
            "concurrent" => Ok(DispatchMode::Concurrent),
            other => Err(alloc::format!(
                "unknown harness {other:?} (expected sequential or concurrent)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workload {
    pub num_requests: u32,
    pub output_tokens_cap: u32,
    /// Requests per second.
    pub target_rate: f64,
    pub concurrency_cap: u32,
    pub dispatch_mode: DispatchMode,
}

impl Default for Workload {
    fn default() -> Self {
        Self {
            num_requests: 5,
            output_tokens_cap: 100,
            target_rate: 1.0,
            concurrency_cap: 5,
            dispatch_mode: DispatchMode::Concurrent,
        }
    }
}

impl Workload {
    pub fn with_mode(mode: DispatchMode) -> Self {
        Self {
            dispatch_mode: mode,
            ..Self::default()
        }
    }

    pub fn is_valid(&self) -> bool {
        self.num_requests > 0 && self.output_tokens_cap > 0 && self.target_rate > 0.0 && self.concurrency_cap >= 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestOutcome {
    pub ttft_ms: f64,
    /// One gap per generated token after the first.
    pub itl_ms: Vec<f64>,
    pub total_latency_ms: f64,
    pub output_tokens: u32,
    pub satisfied_slo: bool,
    pub error: Option<String>,
}

impl RequestOutcome {
    pub fn max_itl_ms(&self) -> f64 {
        self.itl_ms.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub requests: Vec<RequestOutcome>,
    /// First issue to last completion.
    pub batch_wall_clock_ms: f64,
    pub crash: CrashCategory,
}

impl BatchResult {
    pub fn crashed(crash: CrashCategory) -> Self {
        Self {
            requests: Vec::new(),
            batch_wall_clock_ms: 0.0,
            crash,
        }
    }
}

/// Latency constants of the simulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub base_ttft_ms: f64,
    pub ttft_jitter_sd_ms: f64,
    pub base_itl_ms: f64,
    pub itl_jitter_sd_ms: f64,
    pub eager_itl_multiplier: f64,
    pub prefix_caching_itl_bonus: f64,
    pub fp8_itl_multiplier: f64,
    pub concurrent_overhead_ms: f64,
    pub concurrent_overhead_spread_ms: f64,
    pub contention_itl_ms: f64,
    pub contention_ttft_ms: f64,
    pub runtime_failure_prob: f64,
    pub runtime_failure_min_util: f64,
    pub runtime_failure_kv_margin: f64,
    pub jitter_truncation_sd: f64,
}

const BUILTIN_CALIBRATION: &str = include_str!("../data/calibration.txt");

impl Default for Calibration {
    fn default() -> Self {
        Self::parse(BUILTIN_CALIBRATION).expect("bundled calibration table is well-formed")
    }
}

impl Calibration {
    /// Reads `key value` lines. Every key must appear exactly once.
    pub fn parse(src: &str) -> Result<Self, ParseError> {
        const KEYS: [&str; 15] = [
            "base_ttft_ms",
            "ttft_jitter_sd_ms",
            "base_itl_ms",
            "itl_jitter_sd_ms",
            "eager_itl_multiplier",
            "prefix_caching_itl_bonus",
            "fp8_itl_multiplier",
            "concurrent_overhead_ms",
            "concurrent_overhead_spread_ms",
            "contention_itl_ms",
            "contention_ttft_ms",
            "runtime_failure_prob",
            "runtime_failure_min_util",
            "runtime_failure_kv_margin",
            "jitter_truncation_sd",
        ];
        let mut values = [None::<f64>; 15];
        for (line, content) in content_lines(src) {
            let mut parts = content.split_whitespace();
            let (Some(key), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(ParseError::new(line, "expected `key value`"));
            };
            let slot = KEYS
                .iter()
                .position(|k| *k == key)
                .ok_or_else(|| ParseError::new(line, alloc::format!("unknown calibration key {key:?}")))?;
            if values[slot].is_some() {
                return Err(ParseError::new(line, alloc::format!("duplicate key {key:?}")));
            }
            let v = value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| ParseError::new(line, alloc::format!("{key} must be a non-negative number")))?;
            values[slot] = Some(v);
        }
        if let Some(missing) = values.iter().position(Option::is_none) {
            return Err(ParseError::new(
                0,
                alloc::format!("missing calibration key {:?}", KEYS[missing]),
            ));
        }
        let v = |i: usize| values[i].unwrap_or_default();
        Ok(Self {
            base_ttft_ms: v(0),
            ttft_jitter_sd_ms: v(1),
            base_itl_ms: v(2),
            itl_jitter_sd_ms: v(3),
            eager_itl_multiplier: v(4),
            prefix_caching_itl_bonus: v(5),
            fp8_itl_multiplier: v(6),
            concurrent_overhead_ms: v(7),
            concurrent_overhead_spread_ms: v(8),
            contention_itl_ms: v(9),
            contention_ttft_ms: v(10),
            runtime_failure_prob: v(11),
            runtime_failure_min_util: v(12),
            runtime_failure_kv_margin: v(13),
            jitter_truncation_sd: v(14),
        })
    }
}

/// A started engine: the configuration it runs and its KV token budget.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineHandle {
    pub config: Config,
    pub kv_budget: i64,
    pub seed: u64,
}

/// One drawn request: TTFT, inter-token gaps, and whether it fails.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencySample {
    pub ttft_ms: f64,
    pub itl_ms: Vec<f64>,
    pub runtime_fail: bool,
}

/// The start / preflight / dispatch interface of a serving engine.
pub trait ServingBackend {
    type Engine;

    fn start_engine(&mut self, config: &Config, hw: &HardwareProfile, seed: u64)
        -> Result<Self::Engine, CrashCategory>;

    fn preflight(&mut self, engine: &Self::Engine) -> Result<(), CrashCategory>;

    fn dispatch_batch(&mut self, engine: &Self::Engine, workload: &Workload, rng: &mut dyn RngCore) -> BatchResult;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub calibration: Calibration,
    pub space: SearchSpace,
}

impl Default for Simulator {
    fn default() -> Self {
        Self::new(Calibration::default(), SearchSpace::default())
    }
}

impl Simulator {
    pub fn new(calibration: Calibration, space: SearchSpace) -> Self {
        Self { calibration, space }
    }

    /// Engine startup fails exactly when the batch geometry exceeds the KV
    /// token budget (warmup out of memory).
    pub fn start(&self, config: &Config, hw: &HardwareProfile, seed: u64) -> Result<EngineHandle, CrashCategory> {
        let kv_budget = kv_token_budget(hw, config.gpu_memory_utilization);
        if kv_budget < 0 || config.kv_geometry() > kv_budget as u64 {
            return Err(CrashCategory::StartupFailure);
        }
        Ok(EngineHandle {
            config: config.clone(),
            kv_budget,
            seed,
        })
    }

    /// A single-token completion fails on the eager + chunked-prefill flag
    /// conflict.
    pub fn preflight_check(&self, engine: &EngineHandle) -> Result<(), CrashCategory> {
        if engine.config.enforce_eager && engine.config.enable_chunked_prefill {
            Err(CrashCategory::PreflightFailure)
        } else {
            Ok(())
        }
    }

    /// Per-config scheduler overhead position in `[0, 1]`, visible only
    /// under concurrent dispatch.
    pub fn concurrency_sensitivity(&self, config: &Config) -> f64 {
        let position = |grid: &[u32], v: u32| {
            if grid.len() < 2 {
                0.0
            } else {
                grid_index(grid, v) as f64 / (grid.len() - 1) as f64
            }
        };
        let seqs = position(&self.space.max_num_seqs, config.max_num_seqs);
        let batched = position(&self.space.max_num_batched_tokens, config.max_num_batched_tokens);
        let chunked = if config.enable_chunked_prefill && !config.enforce_eager {
            0.0
        } else {
            1.0
        };
        0.5 * seqs + 0.3 * (1.0 - batched) + 0.2 * chunked
    }

    /// Probability that a request fails under load.
    pub fn runtime_failure_prob(&self, config: &Config, kv_budget: i64) -> f64 {
        let c = &self.calibration;
        if kv_budget <= 0 || config.gpu_memory_utilization <= c.runtime_failure_min_util {
            return 0.0;
        }
        let slack = 1.0 - config.kv_geometry() as f64 / kv_budget as f64;
        if slack <= c.runtime_failure_kv_margin {
            c.runtime_failure_prob
        } else {
            0.0
        }
    }

    /// Draws one request served with `in_flight` requests on the engine
    /// (including itself).
    pub fn latency_model<R: Rng + ?Sized>(
        &self,
        config: &Config,
        kv_budget: i64,
        in_flight: u32,
        mode: DispatchMode,
        output_tokens: u32,
        rng: &mut R,
    ) -> LatencySample {
        let c = &self.calibration;
        let k = c.jitter_truncation_sd;
        let extra = f64::from(in_flight.saturating_sub(1));

        let mut ttft_mean = c.base_ttft_ms + c.contention_ttft_ms * extra;
        if mode == DispatchMode::Concurrent {
            ttft_mean +=
                c.concurrent_overhead_ms + c.concurrent_overhead_spread_ms * self.concurrency_sensitivity(config);
        }
        let ttft_ms = truncated_normal(rng, ttft_mean, c.ttft_jitter_sd_ms, k).max(0.0);

        let mut itl_mean = c.base_itl_ms;
        if config.enforce_eager {
            itl_mean *= c.eager_itl_multiplier;
        }
        if config.enable_prefix_caching {
            itl_mean *= 1.0 - c.prefix_caching_itl_bonus;
        }
        if config.quantization == Quantization::Fp8 {
            itl_mean *= c.fp8_itl_multiplier;
        }
        itl_mean += c.contention_itl_ms * extra;
        let itl_ms = (1..output_tokens)
            .map(|_| truncated_normal(rng, itl_mean, c.itl_jitter_sd_ms, k).max(0.0))
            .collect();

        let p = self.runtime_failure_prob(config, kv_budget);
        // Always draw so the stream position does not depend on the config.
        let runtime_fail = rng.gen::<f64>() < p;
        LatencySample {
            ttft_ms,
            itl_ms,
            runtime_fail,
        }
    }

    /// Simulates one batch on the virtual clock.
    pub fn dispatch<R: Rng + ?Sized>(&self, engine: &EngineHandle, workload: &Workload, rng: &mut R) -> BatchResult {
        let interval_ms = 1000.0 / workload.target_rate;
        let mut requests = Vec::with_capacity(workload.num_requests as usize);
        // Completion times of issued requests, in issue order.
        let mut completions: Vec<f64> = Vec::with_capacity(workload.num_requests as usize);
        let cap = workload.concurrency_cap.max(1) as usize;
        let mut last_start = 0.0f64;

        for i in 0..workload.num_requests {
            let arrival = f64::from(i) * interval_ms;
            let start = match workload.dispatch_mode {
                DispatchMode::Sequential => completions.last().map_or(arrival, |&done| arrival.max(done)),
                DispatchMode::Concurrent => {
                    let mut busy: Vec<f64> = completions.iter().copied().filter(|&done| done > arrival).collect();
                    let free = if busy.len() >= cap {
                        busy.sort_by(f64::total_cmp);
                        busy[busy.len() - cap]
                    } else {
                        arrival
                    };
                    // First-in first-out issue order.
                    arrival.max(free).max(last_start)
                }
            };
            last_start = start;
            let in_flight = 1 + completions.iter().filter(|&&done| done > start).count() as u32;
            let sample = self.latency_model(
                &engine.config,
                engine.kv_budget,
                in_flight,
                workload.dispatch_mode,
                workload.output_tokens_cap,
                rng,
            );
            if sample.runtime_fail {
                requests.push(RequestOutcome {
                    ttft_ms: 0.0,
                    itl_ms: Vec::new(),
                    total_latency_ms: 0.0,
                    output_tokens: 0,
                    satisfied_slo: false,
                    error: Some("runtime-failure".to_string()),
                });
                let last = completions.iter().copied().fold(start, f64::max);
                return BatchResult {
                    requests,
                    batch_wall_clock_ms: last,
                    crash: CrashCategory::RuntimeFailure,
                };
            }
            let total = sample.ttft_ms + sample.itl_ms.iter().sum::<f64>();
            completions.push(start + total);
            requests.push(RequestOutcome {
                output_tokens: 1 + sample.itl_ms.len() as u32,
                ttft_ms: sample.ttft_ms,
                itl_ms: sample.itl_ms,
                total_latency_ms: total,
                satisfied_slo: false,
                error: None,
            });
        }

        // The first request is issued at t = 0.
        let last = completions.iter().copied().fold(0.0, f64::max);
        BatchResult {
            requests,
            batch_wall_clock_ms: last,
            crash: CrashCategory::Healthy,
        }
    }
}

impl ServingBackend for Simulator {
    type Engine = EngineHandle;

    fn start_engine(
        &mut self,
        config: &Config,
        hw: &HardwareProfile,
        seed: u64,
    ) -> Result<EngineHandle, CrashCategory> {
        self.start(config, hw, seed)
    }

    fn preflight(&mut self, engine: &EngineHandle) -> Result<(), CrashCategory> {
        self.preflight_check(engine)
    }

    fn dispatch_batch(&mut self, engine: &EngineHandle, workload: &Workload, rng: &mut dyn RngCore) -> BatchResult {
        self.dispatch(engine, workload, rng)
    }
}
