//! The conditional configuration space.
//!
//! Eight knobs: a categorical quantization mode, three ordinal grids
//! (`max_num_seqs`, `max_num_batched_tokens`, `max_model_len`), one
//! continuous range (`gpu_memory_utilization`) and three booleans.
//! `enable_chunked_prefill` is conditional: it is only meaningful while
//! `enforce_eager` is false and otherwise sits at its default (`false`).

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantization {
    None,
    Fp8,
}

impl Quantization {
    pub fn as_str(self) -> &'static str {
        match self {
            Quantization::None => "none",
            Quantization::Fp8 => "fp8",
        }
    }
}

/// One point in the space. Serializes to a flat map keyed by knob name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub quantization: Quantization,
    pub max_num_seqs: u32,
    pub max_num_batched_tokens: u32,
    pub gpu_memory_utilization: f64,
    pub max_model_len: u32,
    pub enforce_eager: bool,
    pub enable_chunked_prefill: bool,
    pub enable_prefix_caching: bool,
}

impl Config {
    /// Whether `enable_chunked_prefill` carries meaning for this config.
    pub fn chunked_prefill_active(&self) -> bool {
        !self.enforce_eager
    }

    /// Product that must fit the KV token budget.
    pub fn kv_geometry(&self) -> u64 {
        u64::from(self.max_num_seqs) * u64::from(self.max_model_len)
    }

    /// Knobs whose values differ. The conditional knob is compared only when
    /// it is active in both configs.
    pub fn differing_knobs(&self, other: &Config) -> Vec<Knob> {
        Knob::ALL
            .iter()
            .copied()
            .filter(|&knob| match knob {
                Knob::Quantization => self.quantization != other.quantization,
                Knob::MaxNumSeqs => self.max_num_seqs != other.max_num_seqs,
                Knob::MaxNumBatchedTokens => self.max_num_batched_tokens != other.max_num_batched_tokens,
                Knob::GpuMemoryUtilization => self.gpu_memory_utilization != other.gpu_memory_utilization,
                Knob::MaxModelLen => self.max_model_len != other.max_model_len,
                Knob::EnforceEager => self.enforce_eager != other.enforce_eager,
                Knob::EnableChunkedPrefill => {
                    self.chunked_prefill_active()
                        && other.chunked_prefill_active()
                        && self.enable_chunked_prefill != other.enable_chunked_prefill
                }
                Knob::EnablePrefixCaching => self.enable_prefix_caching != other.enable_prefix_caching,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Knob {
    Quantization,
    MaxNumSeqs,
    MaxNumBatchedTokens,
    GpuMemoryUtilization,
    MaxModelLen,
    EnforceEager,
    EnableChunkedPrefill,
    EnablePrefixCaching,
}

impl Knob {
    pub const ALL: [Knob; 8] = [
        Knob::Quantization,
        Knob::MaxNumSeqs,
        Knob::MaxNumBatchedTokens,
        Knob::GpuMemoryUtilization,
        Knob::MaxModelLen,
        Knob::EnforceEager,
        Knob::EnableChunkedPrefill,
        Knob::EnablePrefixCaching,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Knob::Quantization => "quantization",
            Knob::MaxNumSeqs => "max_num_seqs",
            Knob::MaxNumBatchedTokens => "max_num_batched_tokens",
            Knob::GpuMemoryUtilization => "gpu_memory_utilization",
            Knob::MaxModelLen => "max_model_len",
            Knob::EnforceEager => "enforce_eager",
            Knob::EnableChunkedPrefill => "enable_chunked_prefill",
            Knob::EnablePrefixCaching => "enable_prefix_caching",
        }
    }

    /// Categorical and boolean knobs.
    pub fn is_structural(self) -> bool {
        matches!(
            self,
            Knob::Quantization | Knob::EnforceEager | Knob::EnableChunkedPrefill | Knob::EnablePrefixCaching
        )
    }
}

impl fmt::Display for Knob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum KnobKind {
    Categorical(Vec<&'static str>),
    OrdinalGrid(Vec<u32>),
    ContinuousRange { lo: f64, hi: f64 },
}

/// Predicate under which a conditional knob is meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    EagerDisabled,
}

impl Condition {
    pub fn holds(self, config: &Config) -> bool {
        match self {
            Condition::EagerDisabled => !config.enforce_eager,
        }
    }
}

/// Descriptive view of one knob's domain.
#[derive(Debug, Clone, PartialEq)]
pub struct KnobDomain {
    pub knob: Knob,
    pub kind: KnobKind,
    pub condition: Option<Condition>,
    /// Value used when the condition is false, rendered as text.
    pub default: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SpaceError {
    EmptyDomain(Knob),
    NotIncreasing(Knob),
    DuplicateCategory(Knob),
    BadRange { lo: f64, hi: f64 },
}

impl fmt::Display for SpaceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpaceError::EmptyDomain(k) => write!(f, "knob {k} has an empty domain"),
            SpaceError::NotIncreasing(k) => write!(f, "grid for {k} is not strictly increasing"),
            SpaceError::DuplicateCategory(k) => write!(f, "knob {k} repeats a category"),
            SpaceError::BadRange { lo, hi } => {
                write!(
                    f,
                    "gpu_memory_utilization range [{lo}, {hi}] is empty or outside (0, 1]"
                )
            }
        }
    }
}

impl core::error::Error for SpaceError {}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub quantization: Vec<Quantization>,
    pub max_num_seqs: Vec<u32>,
    pub max_num_batched_tokens: Vec<u32>,
    pub gpu_memory_utilization: (f64, f64),
    pub max_model_len: Vec<u32>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            quantization: vec![Quantization::None, Quantization::Fp8],
            max_num_seqs: vec![16, 32, 64, 128, 256],
            max_num_batched_tokens: vec![512, 1024, 2048, 4096, 8192],
            gpu_memory_utilization: (0.50, 0.95),
            max_model_len: vec![512, 1024, 2048, 4096, 8192],
        }
    }
}

/// Numeric knobs in signature order.
const NUMERIC: [Knob; 4] = [
    Knob::MaxNumSeqs,
    Knob::MaxNumBatchedTokens,
    Knob::GpuMemoryUtilization,
    Knob::MaxModelLen,
];

impl SearchSpace {
    pub fn validate(&self) -> Result<(), SpaceError> {
        if self.quantization.is_empty() {
            return Err(SpaceError::EmptyDomain(Knob::Quantization));
        }
        for (i, q) in self.quantization.iter().enumerate() {
            if self.quantization[..i].contains(q) {
                return Err(SpaceError::DuplicateCategory(Knob::Quantization));
            }
        }
        for knob in [Knob::MaxNumSeqs, Knob::MaxNumBatchedTokens, Knob::MaxModelLen] {
            let grid = self.grid(knob).expect("ordinal knob");
            if grid.is_empty() {
                return Err(SpaceError::EmptyDomain(knob));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) || grid[0] == 0 {
                return Err(SpaceError::NotIncreasing(knob));
            }
        }
        let (lo, hi) = self.gpu_memory_utilization;
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            return Err(SpaceError::BadRange { lo, hi });
        }
        Ok(())
    }

    pub fn domains(&self) -> Vec<KnobDomain> {
        let grid = |k| KnobKind::OrdinalGrid(self.grid(k).expect("ordinal knob").to_vec());
        let boolean = || KnobKind::Categorical(vec!["false", "true"]);
        vec![
            KnobDomain {
                knob: Knob::Quantization,
                kind: KnobKind::Categorical(self.quantization.iter().map(|q| q.as_str()).collect()),
                condition: None,
                default: None,
            },
            KnobDomain {
                knob: Knob::MaxNumSeqs,
                kind: grid(Knob::MaxNumSeqs),
                condition: None,
                default: None,
            },
            KnobDomain {
                knob: Knob::MaxNumBatchedTokens,
                kind: grid(Knob::MaxNumBatchedTokens),
                condition: None,
                default: None,
            },
            KnobDomain {
                knob: Knob::GpuMemoryUtilization,
                kind: KnobKind::ContinuousRange {
                    lo: self.gpu_memory_utilization.0,
                    hi: self.gpu_memory_utilization.1,
                },
                condition: None,
                default: None,
            },
            KnobDomain {
                knob: Knob::MaxModelLen,
                kind: grid(Knob::MaxModelLen),
                condition: None,
                default: None,
            },
            KnobDomain {
                knob: Knob::EnforceEager,
                kind: boolean(),
                condition: None,
                default: None,
            },
            KnobDomain {
                knob: Knob::EnableChunkedPrefill,
                kind: boolean(),
                condition: Some(Condition::EagerDisabled),
                default: Some("false"),
            },
            KnobDomain {
                knob: Knob::EnablePrefixCaching,
                kind: boolean(),
                condition: None,
                default: None,
            },
        ]
    }

    /// The ordinal grid behind `knob`, if it has one.
    pub fn grid(&self, knob: Knob) -> Option<&[u32]> {
        match knob {
            Knob::MaxNumSeqs => Some(&self.max_num_seqs),
            Knob::MaxNumBatchedTokens => Some(&self.max_num_batched_tokens),
            Knob::MaxModelLen => Some(&self.max_model_len),
            _ => None,
        }
    }

    /// True when every knob value lies in its domain and the conditional
    /// knob sits at its default whenever its condition is false.
    pub fn contains(&self, config: &Config) -> bool {
        let (lo, hi) = self.gpu_memory_utilization;
        self.quantization.contains(&config.quantization)
            && self.max_num_seqs.contains(&config.max_num_seqs)
            && self.max_num_batched_tokens.contains(&config.max_num_batched_tokens)
            && self.max_model_len.contains(&config.max_model_len)
            && (lo..=hi).contains(&config.gpu_memory_utilization)
            && (config.chunked_prefill_active() || !config.enable_chunked_prefill)
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Config {
        let pick = |rng: &mut R, grid: &[u32]| grid[rng.gen_range(0..grid.len())];
        let quantization = self.quantization[rng.gen_range(0..self.quantization.len())];
        let max_num_seqs = pick(rng, &self.max_num_seqs);
        let max_num_batched_tokens = pick(rng, &self.max_num_batched_tokens);
        let (lo, hi) = self.gpu_memory_utilization;
        let gpu_memory_utilization = rng.gen_range(lo..=hi);
        let max_model_len = pick(rng, &self.max_model_len);
        let enforce_eager = rng.gen::<bool>();
        let enable_chunked_prefill = if enforce_eager { false } else { rng.gen::<bool>() };
        let enable_prefix_caching = rng.gen::<bool>();
        Config {
            quantization,
            max_num_seqs,
            max_num_batched_tokens,
            gpu_memory_utilization,
            max_model_len,
            enforce_eager,
            enable_chunked_prefill,
            enable_prefix_caching,
        }
    }

    /// Structural knobs that can be flipped from `config`.
    fn flippable(&self, config: &Config) -> Vec<Knob> {
        let mut knobs = Vec::with_capacity(4);
        if self.quantization.len() > 1 {
            knobs.push(Knob::Quantization);
        }
        knobs.push(Knob::EnforceEager);
        if config.chunked_prefill_active() {
            knobs.push(Knob::EnableChunkedPrefill);
        }
        knobs.push(Knob::EnablePrefixCaching);
        knobs
    }

    fn perturbable(&self) -> Vec<Knob> {
        NUMERIC
            .iter()
            .copied()
            .filter(|&k| self.grid(k).is_none_or(|g| g.len() > 1))
            .collect()
    }

    /// One-knob move away from `current`.
    ///
    /// With probability `structural_prob` a categorical or boolean knob is
    /// flipped; otherwise one numeric knob moves one grid step (ordinal) or
    /// by at most 10% of its range (continuous). Moves that would leave the
    /// domain bounce back inward, so the result always differs from
    /// `current` in exactly one active knob.
    pub fn neighbor<R: Rng + ?Sized>(&self, current: &Config, structural_prob: f64, rng: &mut R) -> Config {
        let mut next = current.clone();
        let numeric = self.perturbable();
        let structural = rng.gen::<f64>() < structural_prob || numeric.is_empty();
        if structural {
            let knobs = self.flippable(current);
            match knobs[rng.gen_range(0..knobs.len())] {
                Knob::Quantization => {
                    let others: Vec<_> = self
                        .quantization
                        .iter()
                        .copied()
                        .filter(|&q| q != current.quantization)
                        .collect();
                    next.quantization = others[rng.gen_range(0..others.len())];
                }
                Knob::EnforceEager => {
                    next.enforce_eager = !current.enforce_eager;
                    if next.enforce_eager {
                        // Deactivated conditional knob returns to its default.
                        next.enable_chunked_prefill = false;
                    }
                }
                Knob::EnableChunkedPrefill => next.enable_chunked_prefill = !current.enable_chunked_prefill,
                Knob::EnablePrefixCaching => next.enable_prefix_caching = !current.enable_prefix_caching,
                _ => unreachable!("numeric knob in structural set"),
            }
            return next;
        }

        match numeric[rng.gen_range(0..numeric.len())] {
            Knob::GpuMemoryUtilization => {
                let (lo, hi) = self.gpu_memory_utilization;
                let width = hi - lo;
                // Magnitude in (0, 0.1·width].
                let magnitude = (1.0 - rng.gen::<f64>()) * 0.1 * width;
                let up = rng.gen::<bool>();
                let cur = current.gpu_memory_utilization.clamp(lo, hi);
                let mut value = if up { cur + magnitude } else { cur - magnitude }.clamp(lo, hi);
                if value == current.gpu_memory_utilization {
                    value = if up { cur - magnitude } else { cur + magnitude }.clamp(lo, hi);
                }
                next.gpu_memory_utilization = value;
            }
            knob => {
                let grid = self.grid(knob).expect("ordinal knob");
                let value = knob_u32(current, knob);
                let idx = grid_index(grid, value);
                let up = rng.gen::<bool>();
                let target = step_index(idx, grid.len(), up, grid[idx] != value);
                set_knob_u32(&mut next, knob, grid[target]);
            }
        }
        next
    }

    pub fn signature(&self, config: &Config) -> StructuralSignature {
        let mut numeric_bins = [0u8; 4];
        for (slot, knob) in numeric_bins.iter_mut().zip(NUMERIC) {
            let position = match knob {
                Knob::GpuMemoryUtilization => {
                    let (lo, hi) = self.gpu_memory_utilization;
                    (config.gpu_memory_utilization - lo) / (hi - lo)
                }
                _ => {
                    let grid = self.grid(knob).expect("ordinal knob");
                    let idx = grid_index(grid, knob_u32(config, knob));
                    // Thirds of the grid by index: 5 entries bin as 0,0,1,1,2.
                    *slot = ((idx * 3) / grid.len()).min(2) as u8;
                    continue;
                }
            };
            *slot = libm::floor(position.clamp(0.0, 1.0) * 3.0).min(2.0) as u8;
        }
        StructuralSignature {
            quantization: config.quantization,
            enforce_eager: config.enforce_eager,
            enable_chunked_prefill: config.enable_chunked_prefill,
            enable_prefix_caching: config.enable_prefix_caching,
            numeric_bins,
        }
    }
}

/// Coarse identity of a configuration: categorical values verbatim, numeric
/// knobs binned into thirds of their domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StructuralSignature {
    pub quantization: Quantization,
    pub enforce_eager: bool,
    pub enable_chunked_prefill: bool,
    pub enable_prefix_caching: bool,
    /// Bins for `max_num_seqs`, `max_num_batched_tokens`,
    /// `gpu_memory_utilization`, `max_model_len`; each in `0..=2`.
    pub numeric_bins: [u8; 4],
}

/// Probability of a structural move at 1-based `trial_index`: linear from
/// 0.5 at the first trial to 0.1 at the last.
pub fn structural_prob_schedule(trial_index: u32, budget: u32) -> f64 {
    const START: f64 = 0.5;
    const END: f64 = 0.1;
    if budget <= 1 {
        return START;
    }
    let t = trial_index.clamp(1, budget);
    START + (END - START) * f64::from(t - 1) / f64::from(budget - 1)
}

/// Index of the largest grid value not above `value` (0 when below the grid).
pub fn grid_index(grid: &[u32], value: u32) -> usize {
    grid.iter().rposition(|&g| g <= value).unwrap_or(0)
}

/// One step from `idx`, bouncing off the grid ends. `off_grid` marks a value
/// strictly between `grid[idx]` and `grid[idx + 1]`, where a downward step
/// lands on `grid[idx]` itself.
fn step_index(idx: usize, len: usize, up: bool, off_grid: bool) -> usize {
    if off_grid && !up {
        return idx;
    }
    match (up, idx) {
        (true, i) if i + 1 < len => i + 1,
        (true, i) => i - 1,
        (false, 0) => 1,
        (false, i) => i - 1,
    }
}

pub(crate) fn knob_u32(config: &Config, knob: Knob) -> u32 {
    match knob {
        Knob::MaxNumSeqs => config.max_num_seqs,
        Knob::MaxNumBatchedTokens => config.max_num_batched_tokens,
        Knob::MaxModelLen => config.max_model_len,
        _ => panic!("{knob} is not an integer knob"),
    }
}

pub(crate) fn set_knob_u32(config: &mut Config, knob: Knob, value: u32) {
    match knob {
        Knob::MaxNumSeqs => config.max_num_seqs = value,
        Knob::MaxNumBatchedTokens => config.max_num_batched_tokens = value,
        Knob::MaxModelLen => config.max_model_len = value,
        _ => panic!("{knob} is not an integer knob"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{trial_rng, Stream};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn base() -> Config {
        Config {
            quantization: Quantization::None,
            max_num_seqs: 64,
            max_num_batched_tokens: 4096,
            gpu_memory_utilization: 0.8,
            max_model_len: 2048,
            enforce_eager: false,
            enable_chunked_prefill: true,
            enable_prefix_caching: false,
        }
    }

    #[test]
    fn default_space_is_valid() {
        let space = SearchSpace::default();
        space.validate().unwrap();
        assert_eq!(space.domains().len(), 8);
    }

    #[test]
    fn validate_rejects_bad_grids() {
        let space = SearchSpace {
            max_num_seqs: vec![32, 16],
            ..SearchSpace::default()
        };
        assert_eq!(space.validate(), Err(SpaceError::NotIncreasing(Knob::MaxNumSeqs)));
        let space = SearchSpace {
            gpu_memory_utilization: (0.9, 0.9),
            ..SearchSpace::default()
        };
        assert!(matches!(space.validate(), Err(SpaceError::BadRange { .. })));
    }

    #[test]
    fn sampling_is_deterministic_under_seed() {
        let space = SearchSpace::default();
        let a = space.sample_uniform(&mut ChaCha8Rng::seed_from_u64(5));
        let b = space.sample_uniform(&mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        assert!(space.contains(&a));
    }

    #[test]
    fn boolean_frequencies_are_balanced() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut eager, mut prefix, mut chunked, mut active) = (0, 0, 0, 0);
        for _ in 0..10_000 {
            let c = space.sample_uniform(&mut rng);
            eager += c.enforce_eager as u32;
            prefix += c.enable_prefix_caching as u32;
            if c.enforce_eager {
                assert!(!c.enable_chunked_prefill);
            } else {
                active += 1;
                chunked += c.enable_chunked_prefill as u32;
            }
        }
        let freq = |n: u32, d: u32| f64::from(n) / f64::from(d);
        assert!((freq(eager, 10_000) - 0.5).abs() < 0.02);
        assert!((freq(prefix, 10_000) - 0.5).abs() < 0.02);
        // Conditional knob is balanced wherever it is active.
        assert!((freq(chunked, active) - 0.5).abs() < 0.02);
    }

    #[test]
    fn categorical_sampling_passes_chi_square() {
        // Critical value of chi-square with 4 degrees of freedom at 0.01.
        const CRIT_4DF: f64 = 13.277;
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0f64; 5];
        let mut quant = [0f64; 2];
        for _ in 0..10_000 {
            let c = space.sample_uniform(&mut rng);
            counts[grid_index(&space.max_num_seqs, c.max_num_seqs)] += 1.0;
            quant[(c.quantization == Quantization::Fp8) as usize] += 1.0;
        }
        let chi = |obs: &[f64]| {
            let e = 10_000.0 / obs.len() as f64;
            obs.iter().map(|o| (o - e) * (o - e) / e).sum::<f64>()
        };
        assert!(chi(&counts) < CRIT_4DF);
        // 1 degree of freedom at 0.01.
        assert!(chi(&quant) < 6.635);
    }

    #[test]
    fn forced_structural_move_flips_one_structural_knob() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let n = space.neighbor(&base(), 1.0, &mut rng);
            let diff = base().differing_knobs(&n);
            assert_eq!(diff.len(), 1, "{diff:?}");
            assert!(diff[0].is_structural());
        }
    }

    #[test]
    fn numeric_move_at_grid_minimum_never_goes_below() {
        let space = SearchSpace::default();
        let mut at_min = base();
        at_min.max_num_seqs = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            let n = space.neighbor(&at_min, 0.0, &mut rng);
            let diff = at_min.differing_knobs(&n);
            assert_eq!(diff.len(), 1);
            assert!(!diff[0].is_structural());
            assert!(n.max_num_seqs == 16 || n.max_num_seqs == 32);
        }
    }

    #[test]
    fn structural_fraction_tracks_probability() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let structural = (0..1000)
            .filter(|_| {
                let n = space.neighbor(&base(), 0.5, &mut rng);
                base().differing_knobs(&n)[0].is_structural()
            })
            .count();
        assert!((structural as f64 / 1000.0 - 0.5).abs() < 0.05);
    }

    #[test]
    fn eager_flip_resets_conditional_knob() {
        let space = SearchSpace::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut seen = false;
        for _ in 0..200 {
            let n = space.neighbor(&base(), 1.0, &mut rng);
            if n.enforce_eager {
                assert!(!n.enable_chunked_prefill);
                seen = true;
            }
        }
        assert!(seen);
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_eq!(structural_prob_schedule(1, 15), 0.5);
        assert!((structural_prob_schedule(15, 15) - 0.1).abs() < 1e-12);
        assert!((structural_prob_schedule(8, 15) - 0.3).abs() < 1e-12);
        assert_eq!(structural_prob_schedule(1, 1), 0.5);
    }

    #[test]
    fn signature_bins() {
        let space = SearchSpace::default();
        let a = base();
        assert_eq!(space.signature(&a), space.signature(&a.clone()));
        let mut b = a.clone();
        // 64 and 128 share the middle third of the five-entry grid.
        b.max_num_seqs = 128;
        b.gpu_memory_utilization = 0.81;
        assert_eq!(space.signature(&a), space.signature(&b));
        let mut c = a.clone();
        c.enforce_eager = true;
        c.enable_chunked_prefill = false;
        assert_ne!(space.signature(&a), space.signature(&c));
        // 0.80 sits on the upper third boundary of [0.50, 0.95].
        assert_eq!(space.signature(&a).numeric_bins, [1, 1, 2, 1]);
    }

    #[test]
    fn conditional_knob_is_declared() {
        let space = SearchSpace::default();
        let domains = space.domains();
        let chunked = domains.iter().find(|d| d.knob == Knob::EnableChunkedPrefill).unwrap();
        assert_eq!(chunked.condition, Some(Condition::EagerDisabled));
        assert_eq!(chunked.default, Some("false"));
        let mut c = space.sample_uniform(&mut trial_rng(1, 1, Stream::Propose));
        c.enforce_eager = true;
        c.enable_chunked_prefill = true;
        assert!(!space.contains(&c));
    }

    proptest! {
        #[test]
        fn neighbors_differ_in_exactly_one_knob(seed in any::<u64>(), p in 0.0f64..=1.0) {
            let space = SearchSpace::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let origin = space.sample_uniform(&mut rng);
            let n = space.neighbor(&origin, p, &mut rng);
            prop_assert_eq!(origin.differing_knobs(&n).len(), 1);
            prop_assert!(space.contains(&n));
            if n.enforce_eager {
                prop_assert!(!n.enable_chunked_prefill);
            }
        }
    }
}
