//! Cross-seed statistics: Mann-Whitney U, Holm-Bonferroni and the
//! two-optimizer report.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::metrics::SeedSummary;

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Unbiased (`n − 1`) variance.
pub fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = mean(values)?;
    Some(values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64)
}

pub fn sample_std(values: &[f64]) -> Option<f64> {
    sample_variance(values).map(libm::sqrt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// `y` stochastically exceeds `x`.
    OneSidedGreater,
    TwoSided,
}

impl Alternative {
    pub fn as_str(self) -> &'static str {
        match self {
            Alternative::OneSidedGreater => "one_sided_greater",
            Alternative::TwoSided => "two_sided",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    /// Normal approximation with tie-corrected variance and continuity
    /// correction.
    #[default]
    Approximate,
    /// Enumeration of every relabeling of the pooled sample.
    Exact,
}

impl TestMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            TestMethod::Approximate => "approximate",
            TestMethod::Exact => "exact",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of `y`.
    pub u: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsError {
    EmptySample,
    /// Exact enumeration is limited to pooled samples of this size.
    TooLargeForExact(usize),
}

impl fmt::Display for StatsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatsError::EmptySample => f.write_str("both samples must be nonempty"),
            StatsError::TooLargeForExact(n) => write!(f, "exact test limited to {MAX_EXACT} pooled values, got {n}"),
        }
    }
}

impl core::error::Error for StatsError {}

pub const MAX_EXACT: usize = 24;

/// Mid-ranks (1-based) of `values`.
fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / core::f64::consts::SQRT_2)
}

fn u_of_y(ranks: &[f64], is_y: impl Fn(usize) -> bool, n_y: usize) -> f64 {
    let r: f64 = ranks.iter().enumerate().filter(|&(i, _)| is_y(i)).map(|(_, r)| r).sum();
    r - (n_y * (n_y + 1)) as f64 / 2.0
}

pub fn mann_whitney(
    x: &[f64],
    y: &[f64],
    alternative: Alternative,
    method: TestMethod,
) -> Result<MannWhitney, StatsError> {
    match method {
        TestMethod::Approximate => mann_whitney_approx(x, y, alternative),
        TestMethod::Exact => mann_whitney_exact(x, y, alternative),
    }
}

pub fn mann_whitney_approx(x: &[f64], y: &[f64], alternative: Alternative) -> Result<MannWhitney, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let (n1, n2) = (x.len() as f64, y.len() as f64);
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = mid_ranks(&pooled);
    let u = u_of_y(&ranks, |i| i >= x.len(), y.len());
    let n = n1 + n2;

    let mut tie_term = 0.0;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let variance = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if variance <= 0.0 {
        return Ok(MannWhitney { u, p: 1.0 });
    }
    let sd = libm::sqrt(variance);
    let mu = n1 * n2 / 2.0;
    let p = match alternative {
        Alternative::OneSidedGreater => normal_sf((u - mu - 0.5) / sd),
        Alternative::TwoSided => {
            let big = u.max(n1 * n2 - u);
            2.0 * normal_sf((big - mu - 0.5) / sd)
        }
    };
    Ok(MannWhitney {
        u,
        p: p.clamp(0.0, 1.0),
    })
}

/// Calls `visit` with each `k`-subset of `0..n` as a membership mask.
fn for_each_subset(n: usize, k: usize, visit: &mut impl FnMut(&[bool])) {
    fn go(pos: usize, left: usize, mask: &mut Vec<bool>, visit: &mut impl FnMut(&[bool])) {
        if left == 0 {
            visit(mask);
            return;
        }
        if mask.len() - pos < left {
            return;
        }
        mask[pos] = true;
        go(pos + 1, left - 1, mask, visit);
        mask[pos] = false;
        go(pos + 1, left, mask, visit);
    }
    let mut mask = vec![false; n];
    go(0, k, &mut mask, visit);
}

pub fn mann_whitney_exact(x: &[f64], y: &[f64], alternative: Alternative) -> Result<MannWhitney, StatsError> {
    if x.is_empty() || y.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    if pooled.len() > MAX_EXACT {
        return Err(StatsError::TooLargeForExact(pooled.len()));
    }
    let ranks = mid_ranks(&pooled);
    let u = u_of_y(&ranks, |i| i >= x.len(), y.len());
    const EPS: f64 = 1e-9;
    let (mut total, mut at_least, mut at_most) = (0u64, 0u64, 0u64);
    for_each_subset(pooled.len(), y.len(), &mut |mask| {
        let v = u_of_y(&ranks, |i| mask[i], y.len());
        total += 1;
        if v >= u - EPS {
            at_least += 1;
        }
        if v <= u + EPS {
            at_most += 1;
        }
    });
    let ge = at_least as f64 / total as f64;
    let le = at_most as f64 / total as f64;
    let p = match alternative {
        Alternative::OneSidedGreater => ge,
        Alternative::TwoSided => (2.0 * ge.min(le)).min(1.0),
    };
    Ok(MannWhitney { u, p })
}

/// Holm step-down adjustment with monotone enforcement, in input order.
pub fn holm(p_values: &[f64]) -> Vec<f64> {
    holm_inner(p_values, true)
}

/// Holm multipliers without the running maximum.
pub fn holm_raw_multiplier(p_values: &[f64]) -> Vec<f64> {
    holm_inner(p_values, false)
}

fn holm_inner(p_values: &[f64], monotone: bool) -> Vec<f64> {
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let mut v = (p_values[i] * (m - rank) as f64).min(1.0);
        if monotone {
            running = running.max(v);
            v = running;
        }
        adjusted[i] = v;
    }
    adjusted
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    FastCount,
    PostHitConsistency,
    BestLatency,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::FastCount, Metric::PostHitConsistency, Metric::BestLatency];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::FastCount => "fast_count",
            Metric::PostHitConsistency => "post_hit_consistency",
            Metric::BestLatency => "best_latency_ms",
        }
    }

    pub fn alternative(self) -> Alternative {
        match self {
            Metric::FastCount | Metric::PostHitConsistency => Alternative::OneSidedGreater,
            Metric::BestLatency => Alternative::TwoSided,
        }
    }

    fn higher_is_better(self) -> bool {
        !matches!(self, Metric::BestLatency)
    }

    fn value(self, s: &SeedSummary) -> Option<f64> {
        match self {
            Metric::FastCount => Some(f64::from(s.fast_count)),
            Metric::PostHitConsistency => s.post_hit_consistency,
            Metric::BestLatency => s.best_latency_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Describe {
    pub n: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Describe {
    pub fn of(values: &[f64]) -> Self {
        Self {
            n: values.len(),
            mean: mean(values),
            std: sample_std(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub metric: Metric,
    pub u_statistic: f64,
    pub p_raw: f64,
    /// Holm with monotone enforcement.
    pub p_adjusted: f64,
    /// Holm multipliers without monotone enforcement.
    pub p_adjusted_raw_multiplier: f64,
    pub alternative: Alternative,
    pub method: TestMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WinCount {
    pub wins: u32,
    pub ties: u32,
    pub losses: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: Metric,
    pub baseline: Describe,
    pub candidate: Describe,
    pub test: Option<TestResult>,
    /// Per-seed comparison from the candidate's side.
    pub wins: WinCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub baseline: String,
    pub candidate: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<MetricRow>,
    /// Baseline over candidate best-latency standard deviation.
    pub best_latency_std_ratio: Option<f64>,
    /// Baseline over candidate best-latency variance.
    pub best_latency_variance_ratio: Option<f64>,
    pub crashes: Option<(u32, u32)>,
    pub feasible: Option<(u32, u32)>,
}

impl StatsReport {
    pub fn row(&self, metric: Metric) -> &MetricRow {
        self.rows
            .iter()
            .find(|r| r.metric == metric)
            .expect("every metric has a row")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReportError {
    /// Not exactly two optimizers present.
    OptimizerCount(Vec<String>),
    /// Seeds present for one optimizer but not the other.
    MismatchedSeeds {
        missing: Vec<(String, u64)>,
    },
    DuplicateSeed {
        optimizer: String,
        seed: u64,
    },
    Stats(StatsError),
}

impl fmt::Display for ReportError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReportError::OptimizerCount(names) => {
                write!(f, "expected exactly two optimizers, found {}", names.len())?;
                if !names.is_empty() {
                    write!(f, " ({})", names.join(", "))?;
                }
                Ok(())
            }
            ReportError::MismatchedSeeds { missing } => {
                f.write_str("seed sets differ; missing")?;
                for (opt, seed) in missing {
                    write!(f, " {opt}/{seed}")?;
                }
                Ok(())
            }
            ReportError::DuplicateSeed { optimizer, seed } => write!(f, "duplicate summary for {optimizer}/{seed}"),
            ReportError::Stats(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for ReportError {}

/// Compares two optimizers over identical seed sets. The baseline is
/// `random` when present, otherwise the alphabetically first name.
pub fn build_report(summaries: &[SeedSummary], method: TestMethod) -> Result<StatsReport, ReportError> {
    let names: BTreeSet<&str> = summaries.iter().map(|s| s.optimizer.as_str()).collect();
    if names.len() != 2 {
        return Err(ReportError::OptimizerCount(
            names.into_iter().map(String::from).collect(),
        ));
    }
    let baseline = if names.contains("random") {
        "random"
    } else {
        names.iter().next().copied().expect("two names")
    };
    let candidate = names.iter().copied().find(|n| *n != baseline).expect("two names");

    let mut pairs = BTreeSet::new();
    for s in summaries {
        if !pairs.insert((s.optimizer.as_str(), s.seed)) {
            return Err(ReportError::DuplicateSeed {
                optimizer: s.optimizer.clone(),
                seed: s.seed,
            });
        }
    }
    let seeds: BTreeSet<u64> = summaries.iter().map(|s| s.seed).collect();
    let missing: Vec<(String, u64)> = seeds
        .iter()
        .flat_map(|&seed| [baseline, candidate].map(|o| (o, seed)))
        .filter(|p| !pairs.contains(p))
        .map(|(o, seed)| (String::from(o), seed))
        .collect();
    if !missing.is_empty() {
        return Err(ReportError::MismatchedSeeds { missing });
    }

    let find = |opt: &str, seed: u64| {
        summaries
            .iter()
            .find(|s| s.optimizer == opt && s.seed == seed)
            .expect("checked above")
    };

    let mut rows = Vec::new();
    for metric in Metric::ALL {
        let xs: Vec<f64> = seeds.iter().filter_map(|&s| metric.value(find(baseline, s))).collect();
        let ys: Vec<f64> = seeds.iter().filter_map(|&s| metric.value(find(candidate, s))).collect();
        let test = if xs.is_empty() || ys.is_empty() {
            None
        } else {
            let r = mann_whitney(&xs, &ys, metric.alternative(), method).map_err(ReportError::Stats)?;
            Some(TestResult {
                metric,
                u_statistic: r.u,
                p_raw: r.p,
                p_adjusted: r.p,
                p_adjusted_raw_multiplier: r.p,
                alternative: metric.alternative(),
                method,
            })
        };
        let mut wins = WinCount::default();
        for &seed in &seeds {
            if let (Some(b), Some(c)) = (metric.value(find(baseline, seed)), metric.value(find(candidate, seed))) {
                let better = if metric.higher_is_better() { c > b } else { c < b };
                if c == b {
                    wins.ties += 1;
                } else if better {
                    wins.wins += 1;
                } else {
                    wins.losses += 1;
                }
            }
        }
        rows.push(MetricRow {
            metric,
            baseline: Describe::of(&xs),
            candidate: Describe::of(&ys),
            test,
            wins,
        });
    }

    let raw: Vec<f64> = rows.iter().filter_map(|r| r.test.as_ref().map(|t| t.p_raw)).collect();
    let (adj, adj_raw) = (holm(&raw), holm_raw_multiplier(&raw));
    for (row, (a, b)) in rows
        .iter_mut()
        .filter(|r| r.test.is_some())
        .zip(adj.into_iter().zip(adj_raw))
    {
        let t = row.test.as_mut().expect("filtered");
        t.p_adjusted = a;
        t.p_adjusted_raw_multiplier = b;
    }

    let latency = |opt: &str| -> Vec<f64> { seeds.iter().filter_map(|&s| find(opt, s).best_latency_ms).collect() };
    let (lb, lc) = (latency(baseline), latency(candidate));
    let ratio = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        (Some(a), Some(b)) if a == b => Some(1.0),
        _ => None,
    };
    let totals = |f: fn(&SeedSummary) -> Option<u32>| {
        let sum = |opt: &str| seeds.iter().map(|&s| f(find(opt, s))).sum::<Option<u32>>();
        sum(baseline).zip(sum(candidate))
    };

    let crashes = totals(|s| s.crash_count);
    let feasible = totals(|s| s.feasible_count);
    Ok(StatsReport {
        baseline: baseline.into(),
        candidate: candidate.into(),
        seeds: seeds.iter().copied().collect(),
        rows,
        best_latency_std_ratio: ratio(sample_std(&lb), sample_std(&lc)),
        best_latency_variance_ratio: ratio(sample_variance(&lb), sample_variance(&lc)),
        crashes,
        feasible,
    })
}
