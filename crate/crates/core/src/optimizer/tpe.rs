//! Density-ratio exploitation.
//!
//! Observations split into a good set (the top `⌈γ·n_feasible⌉` feasible
//! trials by goodput) and a bad set (everything else, crashes included).
//! Each set gets an independent per-knob Parzen model; candidates drawn from
//! the good model are ranked by `log ℓ(θ) − log g(θ)`.
//!
//! Ordinal knobs are modeled over grid indices (each index owning a unit
//! cell) with discretized normal kernels, the continuous knob with truncated
//! normal kernels, both mixed with a uniform prior weighted as one extra
//! point. Candidates are drawn from that same mixture. Each kernel's
//! bandwidth is the larger of a tenth of the domain width and the distance
//! to its nearest neighbor. Categorical knobs use add-one smoothed
//! frequencies. `enable_chunked_prefill` is modeled only over observations
//! with `enforce_eager = false` and contributes nothing otherwise.

use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::{Observation, Optimizer, OptimizerKind, OptimizerParams, Phase, Proposal};
use crate::space::{grid_index, Config, Knob, Quantization, SearchSpace};

#[derive(Debug, Clone, PartialEq)]
pub struct TpeState {
    pub good_set: Vec<Observation>,
    pub bad_set: Vec<Observation>,
    pub gamma: f64,
    pub candidate_count: u32,
}

/// Partitions a complete history into good and bad sets.
pub fn tpe_warm_start(history: &[Observation], params: &OptimizerParams) -> TpeState {
    let mut feasible: Vec<&Observation> = history.iter().filter(|o| o.feasible()).collect();
    // Stable: equal goodput keeps trial order.
    feasible.sort_by(|a, b| b.goodput.total_cmp(&a.goodput));
    let n_good = libm::ceil(params.gamma * feasible.len() as f64) as usize;
    let good: Vec<u32> = feasible.iter().take(n_good).map(|o| o.trial_index).collect();
    let (good_set, bad_set) = history.iter().cloned().partition(|o| good.contains(&o.trial_index));
    TpeState {
        good_set,
        bad_set,
        gamma: params.gamma,
        candidate_count: params.candidate_count,
    }
}

const NUMERIC: [Knob; 4] = [
    Knob::MaxNumSeqs,
    Knob::MaxNumBatchedTokens,
    Knob::GpuMemoryUtilization,
    Knob::MaxModelLen,
];

fn coordinate(space: &SearchSpace, config: &Config, knob: Knob) -> f64 {
    match knob {
        Knob::GpuMemoryUtilization => config.gpu_memory_utilization,
        _ => {
            let grid = space.grid(knob).expect("ordinal knob");
            grid_index(grid, crate::space::knob_u32(config, knob)) as f64
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

/// One numeric knob's kernel mixture.
struct Parzen {
    lo: f64,
    hi: f64,
    /// Grid size for ordinal knobs.
    levels: Option<usize>,
    centers: Vec<f64>,
    bandwidths: Vec<f64>,
}

impl Parzen {
    fn new(lo: f64, hi: f64, levels: Option<usize>, centers: Vec<f64>) -> Self {
        let floor = (hi - lo) / 10.0;
        let bandwidths = centers
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let nearest = centers
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, &d)| (d - c).abs())
                    .min_by(f64::total_cmp)
                    .unwrap_or(0.0);
                // A degenerate single-point grid still needs a positive width.
                nearest.max(floor).max(1e-9)
            })
            .collect();
        Self {
            lo,
            hi,
            levels,
            centers,
            bandwidths,
        }
    }

    /// Kernel `i` mass at grid index `j`.
    fn level_weights(&self, i: usize) -> Vec<f64> {
        let n = self.levels.expect("ordinal");
        let (c, b) = (self.centers[i], self.bandwidths[i]);
        let raw: Vec<f64> = (0..n)
            .map(|j| {
                let z = (j as f64 - c) / b;
                libm::exp(-0.5 * z * z)
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }

    fn density(&self, x: f64) -> f64 {
        let n = self.centers.len() as f64;
        let (kernels, prior) = match self.levels {
            Some(levels) => {
                let j = libm::round(x) as usize;
                let k: f64 = (0..self.centers.len()).map(|i| self.level_weights(i)[j]).sum();
                (k, 1.0 / levels as f64)
            }
            None => {
                let k: f64 = self
                    .centers
                    .iter()
                    .zip(&self.bandwidths)
                    .map(|(&c, &b)| {
                        let z = (x - c) / b;
                        let mass = normal_cdf((self.hi - c) / b) - normal_cdf((self.lo - c) / b);
                        libm::exp(-0.5 * z * z) / (b * libm::sqrt(core::f64::consts::TAU) * mass)
                    })
                    .sum();
                (k, 1.0 / (self.hi - self.lo))
            }
        };
        (kernels + prior) / (n + 1.0)
    }

    /// Draws from the mixture, prior included.
    fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        let i = rng.gen_range(0..=self.centers.len());
        if i == self.centers.len() {
            return match self.levels {
                Some(n) => rng.gen_range(0..n) as f64,
                None => rng.gen_range(self.lo..=self.hi),
            };
        }
        match self.levels {
            Some(_) => {
                let weights = self.level_weights(i);
                let mut u: f64 = rng.gen();
                for (j, w) in weights.iter().enumerate() {
                    if u < *w {
                        return j as f64;
                    }
                    u -= w;
                }
                (weights.len() - 1) as f64
            }
            None => {
                let (c, b) = (self.centers[i], self.bandwidths[i]);
                for _ in 0..64 {
                    let x = c + b * crate::rng::standard_normal(rng);
                    if (self.lo..=self.hi).contains(&x) {
                        return x;
                    }
                }
                c.clamp(self.lo, self.hi)
            }
        }
    }
}

/// Add-one smoothed frequencies over a finite domain.
struct Categorical<T> {
    values: Vec<T>,
    counts: Vec<u32>,
}

impl<T: PartialEq + Copy> Categorical<T> {
    fn new(values: Vec<T>, observed: impl Iterator<Item = T>) -> Self {
        let mut counts = alloc::vec![0; values.len()];
        for v in observed {
            if let Some(i) = values.iter().position(|x| *x == v) {
                counts[i] += 1;
            }
        }
        Self { values, counts }
    }

    fn probability(&self, v: T) -> f64 {
        let total: u32 = self.counts.iter().sum();
        let count = self.values.iter().position(|x| *x == v).map_or(0, |i| self.counts[i]);
        f64::from(count + 1) / f64::from(total + self.values.len() as u32)
    }

    fn sample(&self, rng: &mut dyn RngCore) -> T {
        let mut u: f64 = rng.gen();
        for &v in &self.values {
            let p = self.probability(v);
            if u < p {
                return v;
            }
            u -= p;
        }
        *self.values.last().expect("nonempty domain")
    }
}

/// Per-knob model of one observation set.
struct Model {
    numeric: Vec<(Knob, Parzen)>,
    quantization: Categorical<Quantization>,
    enforce_eager: Categorical<bool>,
    chunked_prefill: Categorical<bool>,
    prefix_caching: Categorical<bool>,
}

impl Model {
    fn fit(space: &SearchSpace, set: &[Observation]) -> Self {
        let numeric = NUMERIC
            .iter()
            .map(|&knob| {
                let centers = set.iter().map(|o| coordinate(space, &o.config, knob)).collect();
                let parzen = match knob {
                    Knob::GpuMemoryUtilization => {
                        let (lo, hi) = space.gpu_memory_utilization;
                        Parzen::new(lo, hi, None, centers)
                    }
                    _ => {
                        let n = space.grid(knob).expect("ordinal knob").len();
                        Parzen::new(-0.5, n as f64 - 0.5, Some(n), centers)
                    }
                };
                (knob, parzen)
            })
            .collect();
        let bools = || alloc::vec![false, true];
        Self {
            numeric,
            quantization: Categorical::new(space.quantization.clone(), set.iter().map(|o| o.config.quantization)),
            enforce_eager: Categorical::new(bools(), set.iter().map(|o| o.config.enforce_eager)),
            chunked_prefill: Categorical::new(
                bools(),
                set.iter()
                    .filter(|o| !o.config.enforce_eager)
                    .map(|o| o.config.enable_chunked_prefill),
            ),
            prefix_caching: Categorical::new(bools(), set.iter().map(|o| o.config.enable_prefix_caching)),
        }
    }

    fn log_density(&self, space: &SearchSpace, config: &Config) -> f64 {
        let mut total = 0.0;
        for (knob, parzen) in &self.numeric {
            total += libm::log(parzen.density(coordinate(space, config, *knob)));
        }
        total += libm::log(self.quantization.probability(config.quantization));
        total += libm::log(self.enforce_eager.probability(config.enforce_eager));
        if config.chunked_prefill_active() {
            total += libm::log(self.chunked_prefill.probability(config.enable_chunked_prefill));
        }
        total + libm::log(self.prefix_caching.probability(config.enable_prefix_caching))
    }

    fn sample(&self, space: &SearchSpace, rng: &mut dyn RngCore) -> Config {
        let mut config = space.sample_uniform(rng);
        for (knob, parzen) in &self.numeric {
            let x = parzen.sample(rng);
            match knob {
                Knob::GpuMemoryUtilization => config.gpu_memory_utilization = x,
                _ => {
                    let grid = space.grid(*knob).expect("ordinal knob");
                    let idx = (libm::round(x) as usize).min(grid.len() - 1);
                    crate::space::set_knob_u32(&mut config, *knob, grid[idx]);
                }
            }
        }
        config.quantization = self.quantization.sample(rng);
        config.enforce_eager = self.enforce_eager.sample(rng);
        config.enable_chunked_prefill = !config.enforce_eager && self.chunked_prefill.sample(rng);
        config.enable_prefix_caching = self.prefix_caching.sample(rng);
        config
    }
}

impl TpeState {
    /// `log ℓ(θ) − log g(θ)`.
    pub fn score(&self, space: &SearchSpace, config: &Config) -> f64 {
        let good = Model::fit(space, &self.good_set);
        let bad = Model::fit(space, &self.bad_set);
        good.log_density(space, config) - bad.log_density(space, config)
    }

    /// Best-scoring of `candidate_count` draws from the good model; uniform
    /// when the good set is empty.
    pub fn propose(&self, space: &SearchSpace, rng: &mut dyn RngCore) -> Config {
        if self.good_set.is_empty() {
            return space.sample_uniform(rng);
        }
        let good = Model::fit(space, &self.good_set);
        let bad = Model::fit(space, &self.bad_set);
        let mut best: Option<(f64, Config)> = None;
        for _ in 0..self.candidate_count.max(1) {
            let candidate = good.sample(space, rng);
            let score = good.log_density(space, &candidate) - bad.log_density(space, &candidate);
            if best.as_ref().is_none_or(|(s, _)| score > *s) {
                best = Some((score, candidate));
            }
        }
        best.expect("at least one candidate").1
    }
}

/// Cold-start density-ratio search: uniform for `n_init` trials, then TPE.
#[derive(Debug, Clone, PartialEq)]
pub struct Tpe {
    params: OptimizerParams,
    state: TpeState,
    history: Vec<Observation>,
}

impl Tpe {
    pub fn new(params: OptimizerParams) -> Self {
        Self {
            params,
            state: tpe_warm_start(&[], &params),
            history: Vec::new(),
        }
    }

    pub fn state(&self) -> &TpeState {
        &self.state
    }
}

impl Optimizer for Tpe {
    fn kind(&self) -> OptimizerKind {
        OptimizerKind::Tpe
    }

    fn propose(&self, _trial_index: u32, space: &SearchSpace, rng: &mut dyn RngCore) -> Proposal {
        let config = if (self.history.len() as u32) < self.params.n_init {
            space.sample_uniform(rng)
        } else {
            self.state.propose(space, rng)
        };
        Proposal {
            config,
            phase: Phase::Exploit,
        }
    }

    fn observe(&mut self, obs: Observation, _space: &SearchSpace, _rng: &mut dyn RngCore) {
        self.history.push(obs);
        self.state = tpe_warm_start(&self.history, &self.params);
    }

    fn history(&self) -> &[Observation] {
        &self.history
    }
}
