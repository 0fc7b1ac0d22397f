use proptest::prelude::*;
use slotune_core::metrics::{annotate_slo, evaluate_trial, V_CRASH};
use slotune_core::optimizer::AnyOptimizer;
use slotune_core::sim::RequestOutcome;
use slotune_core::stats::{holm, holm_raw_multiplier, mann_whitney, Alternative, TestMethod};
use slotune_core::*;

fn request(ttft: f64, itl: Vec<f64>) -> RequestOutcome {
    let total = ttft + itl.iter().sum::<f64>();
    RequestOutcome {
        ttft_ms: ttft,
        output_tokens: itl.len() as u32 + 1,
        itl_ms: itl,
        total_latency_ms: total,
        satisfied_slo: false,
        error: None,
    }
}

fn arb_requests() -> impl Strategy<Value = Vec<RequestOutcome>> {
    prop::collection::vec(
        (0.0..800.0f64, prop::collection::vec(0.0..150.0f64, 0..20)).prop_map(|(t, itl)| request(t, itl)),
        1..8,
    )
}

fn base_config() -> Config {
    Config {
        quantization: Quantization::None,
        max_num_seqs: 64,
        max_num_batched_tokens: 2048,
        gpu_memory_utilization: 0.8,
        max_model_len: 2048,
        enforce_eager: false,
        enable_chunked_prefill: false,
        enable_prefix_caching: false,
    }
}

fn crash_category() -> impl Strategy<Value = CrashCategory> {
    prop_oneof![
        Just(CrashCategory::StartupFailure),
        Just(CrashCategory::PreflightFailure),
        Just(CrashCategory::RuntimeFailure),
    ]
}

/// Tie-free integer samples.
fn distinct_pair(n: usize, m: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    Just((0..100i32).collect::<Vec<_>>()).prop_shuffle().prop_map(move |v| {
        let x = v[..n].iter().map(|&a| f64::from(a)).collect();
        let y = v[n..n + m].iter().map(|&a| f64::from(a)).collect();
        (x, y)
    })
}

proptest! {
    #[test]
    fn crash_dominates(requests in arb_requests(), crash in crash_category(), wall in 1.0..20_000.0f64) {
        let batch = BatchResult { requests, batch_wall_clock_ms: wall, crash };
        let m = evaluate_trial(&batch, &SloThresholds::default(), &base_config(), &HardwareProfile::reference()).unwrap();
        prop_assert!(!m.feasible);
        prop_assert_eq!(m.goodput_tokens_per_s, 0.0);
        prop_assert_eq!(m.violation_score, V_CRASH);
    }

    #[test]
    fn goodput_is_bounded(requests in arb_requests(), wall in 1.0..20_000.0f64) {
        let mut batch = BatchResult { requests, batch_wall_clock_ms: wall, crash: CrashCategory::Healthy };
        let slo = SloThresholds::default();
        annotate_slo(&mut batch, &slo);
        let m = evaluate_trial(&batch, &slo, &base_config(), &HardwareProfile::reference()).unwrap();
        let n = batch.requests.len() as f64;
        let cap = batch.requests.iter().map(|r| r.output_tokens).max().unwrap() as f64;
        prop_assert!(m.goodput_tokens_per_s <= n * cap / (wall / 1000.0) + 1e-9);
        prop_assert!(m.violation_score >= 0.0);
        prop_assert_eq!(m.feasible, m.violation_score == 0.0);
    }

    #[test]
    fn holm_dominates_raw(ps in prop::collection::vec(0.0..=1.0f64, 1..8)) {
        let adj = holm(&ps);
        let adj_m = holm_raw_multiplier(&ps);
        for i in 0..ps.len() {
            prop_assert!(adj[i] >= ps[i] && adj[i] <= 1.0);
            prop_assert!(adj_m[i] >= ps[i] && adj_m[i] <= adj[i] + 1e-15);
        }
        let mut order: Vec<usize> = (0..ps.len()).collect();
        order.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]));
        for w in order.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]]);
        }
    }

    #[test]
    fn one_sided_tests_are_complementary((x, y) in distinct_pair(5, 5)) {
        let a = mann_whitney(&x, &y, Alternative::OneSidedGreater, TestMethod::Approximate).unwrap();
        let b = mann_whitney(&y, &x, Alternative::OneSidedGreater, TestMethod::Approximate).unwrap();
        // Both sums exceed 1 by the mass at the observed U: the normal mass
        // within half a unit of it, or its exact point probability (at most
        // 20 of the 252 labelings for five against five).
        prop_assert!(a.p + b.p >= 1.0 - 1e-12);
        let ea = mann_whitney(&x, &y, Alternative::OneSidedGreater, TestMethod::Exact).unwrap();
        let eb = mann_whitney(&y, &x, Alternative::OneSidedGreater, TestMethod::Exact).unwrap();
        prop_assert!(ea.p + eb.p > 1.0 && ea.p + eb.p <= 1.0 + 20.0 / 252.0 + 1e-12);
    }

    #[test]
    fn approximation_tracks_enumeration((x, y) in distinct_pair(5, 5)) {
        for alt in [Alternative::OneSidedGreater, Alternative::TwoSided] {
            let a = mann_whitney(&x, &y, alt, TestMethod::Approximate).unwrap();
            let e = mann_whitney(&x, &y, alt, TestMethod::Exact).unwrap();
            prop_assert_eq!(a.u, e.u);
            prop_assert!((a.p - e.p).abs() < 0.02, "{:?} approx {} exact {}", alt, a.p, e.p);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn handoff_is_one_way(seed in any::<u64>(), budget in 1u32..25) {
        let spec = StudySpec { budget, ..StudySpec::new(OptimizerKind::TbaTpe, seed) };
        let records = Study::new(spec).run_to_completion(&mut Simulator::default());
        let phases: Vec<Phase> = records.iter().map(|r| r.phase).collect();
        let explore = phases.iter().take_while(|p| **p == Phase::Explore).count();
        prop_assert!(phases[explore..].iter().all(|p| *p == Phase::Exploit));
        let t_max = (budget * 2 / 5).max(5);
        prop_assert!(explore as u32 <= t_max.min(budget));
    }

    #[test]
    fn annealing_cools_and_stays_feasible_first(seed in any::<u64>()) {
        let mut study = Study::new(StudySpec::new(OptimizerKind::Tba, seed));
        let mut sim = Simulator::default();
        let mut last_t: Option<f64> = None;
        let mut had_feasible = false;
        while !study.is_complete() {
            let record = study.execute_trial(&mut sim, 0);
            study.commit(&record).unwrap();
            let AnyOptimizer::Tba(tba) = study.optimizer() else { unreachable!() };
            let state = tba.state();
            if let Some(t) = state.temperature {
                prop_assert!(t > 0.0);
                if let Some(prev) = last_t {
                    prop_assert!(t < prev);
                }
                last_t = Some(t);
            }
            if let Some(inc) = &state.incumbent {
                prop_assert!(inc.feasible());
                had_feasible = true;
            } else {
                prop_assert!(!had_feasible);
            }
        }
    }
}
