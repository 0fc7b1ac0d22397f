//! Calibration targets for the simulator.

use alloc::string::String;
use alloc::vec::Vec;

use crate::repair::{repair, HardwareProfile};
use crate::rng::{trial_rng, Stream, TrialRng};
use crate::sim::{DispatchMode, Simulator, Workload};
use crate::space::Config;
use crate::stats::mean;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    /// Human-readable acceptance band.
    pub target: String,
    pub observed: f64,
    pub passed: bool,
}

impl CheckResult {
    fn within(name: &'static str, observed: f64, lo: f64, hi: f64) -> Self {
        Self {
            name,
            target: alloc::format!("[{lo}, {hi}]"),
            observed,
            passed: (lo..=hi).contains(&observed),
        }
    }
}

const DRAWS: u32 = 1000;

fn fast_config(sim: &Simulator, hw: &HardwareProfile, rng: &mut TrialRng) -> Config {
    let mut c = sim.space.sample_uniform(rng);
    c.enforce_eager = false;
    repair(&sim.space, &c, hw).repaired
}

fn slow_config(sim: &Simulator, hw: &HardwareProfile, rng: &mut TrialRng) -> Config {
    let mut c = sim.space.sample_uniform(rng);
    c.enforce_eager = true;
    c.enable_chunked_prefill = false;
    repair(&sim.space, &c, hw).repaired
}

/// Mean single-request latency of uniformly drawn configs.
fn isolated_mean(
    sim: &Simulator,
    hw: &HardwareProfile,
    seed: u64,
    mode: DispatchMode,
    pick: fn(&Simulator, &HardwareProfile, &mut TrialRng) -> Config,
) -> f64 {
    let tokens = Workload::default().output_tokens_cap;
    let totals: Vec<f64> = (1..=DRAWS)
        .map(|i| {
            let mut rng = trial_rng(seed, i, Stream::Simulate);
            let config = pick(sim, hw, &mut rng);
            let s = sim.latency_model(&config, i64::MAX, 1, mode, tokens, &mut rng);
            s.ttft_ms + s.itl_ms.iter().sum::<f64>()
        })
        .collect();
    mean(&totals).unwrap_or(f64::NAN)
}

/// Range of per-config mean latency across fast configs.
fn per_config_spread(sim: &Simulator, hw: &HardwareProfile, seed: u64, mode: DispatchMode) -> f64 {
    const CONFIGS: u32 = 200;
    const REPEATS: u32 = 20;
    let tokens = Workload::default().output_tokens_cap;
    let means: Vec<f64> = (1..=CONFIGS)
        .map(|i| {
            let config = fast_config(sim, hw, &mut trial_rng(seed, i, Stream::Propose));
            let mut rng = trial_rng(seed, i, Stream::Simulate);
            let totals: Vec<f64> = (0..REPEATS)
                .map(|_| {
                    let s = sim.latency_model(&config, i64::MAX, 1, mode, tokens, &mut rng);
                    s.ttft_ms + s.itl_ms.iter().sum::<f64>()
                })
                .collect();
            mean(&totals).unwrap_or(f64::NAN)
        })
        .collect();
    let max = means.iter().copied().fold(f64::MIN, f64::max);
    let min = means.iter().copied().fold(f64::MAX, f64::min);
    max - min
}

/// Share of batch-mean latency variance explained by `enforce_eager` over
/// `n` uniform repaired configs under concurrent dispatch.
pub fn eager_r_squared(sim: &Simulator, hw: &HardwareProfile, seed: u64, n: u32) -> f64 {
    let workload = Workload::with_mode(DispatchMode::Concurrent);
    let mut points: Vec<(bool, f64)> = Vec::new();
    for i in 1..=n {
        let raw = sim.space.sample_uniform(&mut trial_rng(seed, i, Stream::Propose));
        let config = repair(&sim.space, &raw, hw).repaired;
        let Ok(engine) = sim.start(&config, hw, seed) else {
            continue;
        };
        let batch = sim.dispatch(&engine, &workload, &mut trial_rng(seed, i, Stream::Simulate));
        if batch.crash.is_crash() {
            continue;
        }
        let lat: Vec<f64> = batch.requests.iter().map(|r| r.total_latency_ms).collect();
        points.push((config.enforce_eager, mean(&lat).unwrap_or(f64::NAN)));
    }
    let all: Vec<f64> = points.iter().map(|p| p.1).collect();
    let grand = mean(&all).unwrap_or(0.0);
    let group = |eager: bool| {
        let v: Vec<f64> = points.iter().filter(|p| p.0 == eager).map(|p| p.1).collect();
        mean(&v).unwrap_or(0.0)
    };
    let (slow, fast) = (group(true), group(false));
    let sst: f64 = all.iter().map(|y| (y - grand) * (y - grand)).sum();
    let sse: f64 = points
        .iter()
        .map(|&(e, y)| {
            let fit = if e { slow } else { fast };
            (y - fit) * (y - fit)
        })
        .sum();
    if sst == 0.0 {
        1.0
    } else {
        1.0 - sse / sst
    }
}

/// Startup failures among `n` uniform configs after repair.
pub fn guarded_startup_failures(sim: &Simulator, hw: &HardwareProfile, seed: u64, n: u32) -> u32 {
    (1..=n)
        .filter(|&i| {
            let raw = sim.space.sample_uniform(&mut trial_rng(seed, i, Stream::Propose));
            sim.start(&repair(&sim.space, &raw, hw).repaired, hw, seed).is_err()
        })
        .count() as u32
}

/// Largest deviation of batch wall-clock from the dispatch arithmetic over
/// slow configs: concurrent equals last arrival plus last latency,
/// sequential equals the sum of latencies.
fn wall_clock_arithmetic(sim: &Simulator, hw: &HardwareProfile, seed: u64) -> (f64, bool) {
    let mut worst: f64 = 0.0;
    let mut ordered = true;
    for i in 1..=50 {
        let config = slow_config(sim, hw, &mut trial_rng(seed, i, Stream::Propose));
        let Ok(engine) = sim.start(&config, hw, seed) else {
            continue;
        };
        let run = |mode| {
            sim.dispatch(
                &engine,
                &Workload::with_mode(mode),
                &mut trial_rng(seed, i, Stream::Simulate),
            )
        };
        let (conc, seq) = (run(DispatchMode::Concurrent), run(DispatchMode::Sequential));
        if conc.crash.is_crash() || seq.crash.is_crash() {
            continue;
        }
        let workload = Workload::default();
        let last_arrival = f64::from(workload.num_requests - 1) * 1000.0 / workload.target_rate;
        let expected_conc = last_arrival + conc.requests.last().map_or(0.0, |r| r.total_latency_ms);
        let expected_seq: f64 = seq.requests.iter().map(|r| r.total_latency_ms).sum();
        worst = worst
            .max((conc.batch_wall_clock_ms - expected_conc).abs())
            .max((seq.batch_wall_clock_ms - expected_seq).abs());
        ordered &= conc.batch_wall_clock_ms < seq.batch_wall_clock_ms;
    }
    (worst, ordered)
}

/// Runs every calibration target.
pub fn calibration_suite(sim: &Simulator, hw: &HardwareProfile, seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    out.push(CheckResult::within(
        "fast_sequential_mean_ms",
        isolated_mean(sim, hw, seed, DispatchMode::Sequential, fast_config),
        428.0,
        434.0,
    ));
    out.push(CheckResult::within(
        "fast_concurrent_mean_ms",
        isolated_mean(sim, hw, seed, DispatchMode::Concurrent, fast_config),
        460.0,
        480.0,
    ));

    let workload = Workload::with_mode(DispatchMode::Concurrent);
    let slow: Vec<f64> = (1..=200)
        .filter_map(|i| {
            let config = slow_config(sim, hw, &mut trial_rng(seed, i, Stream::Propose));
            let engine = sim.start(&config, hw, seed).ok()?;
            let b = sim.dispatch(&engine, &workload, &mut trial_rng(seed, i, Stream::Simulate));
            let lat: Vec<f64> = b.requests.iter().map(|r| r.total_latency_ms).collect();
            (!b.crash.is_crash()).then(|| mean(&lat)).flatten()
        })
        .collect();
    out.push(CheckResult::within(
        "slow_concurrent_mean_ms",
        mean(&slow).unwrap_or(f64::NAN),
        2000.0,
        2600.0,
    ));

    let extra = per_config_spread(sim, hw, seed, DispatchMode::Concurrent)
        - per_config_spread(sim, hw, seed, DispatchMode::Sequential);
    out.push(CheckResult::within("concurrent_extra_spread_ms", extra, 30.0, 50.0));

    let r2 = eager_r_squared(sim, hw, seed, 500);
    out.push(CheckResult {
        name: "eager_r_squared",
        target: String::from("> 0.95"),
        observed: r2,
        passed: r2 > 0.95,
    });

    let failures = guarded_startup_failures(sim, hw, seed, 10_000);
    out.push(CheckResult {
        name: "guarded_startup_failures",
        target: String::from("= 0 of 10000"),
        observed: f64::from(failures),
        passed: failures == 0,
    });

    let (deviation, ordered) = wall_clock_arithmetic(sim, hw, seed);
    out.push(CheckResult {
        name: "wall_clock_arithmetic_ms",
        target: String::from("< 1e-6 deviation, concurrent < sequential"),
        observed: deviation,
        passed: deviation < 1e-6 && ordered,
    });
    out
}
