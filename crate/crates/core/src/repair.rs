//! Repair map and KV-cache memory guard.
//!
//! Every proposed configuration passes through [`repair`] before it runs.
//! The repair clears the eager/chunked-prefill flag conflict, keeps the
//! batched-token budget above both `max_num_seqs` and `max_model_len`, and
//! shrinks the batch geometry until `max_num_seqs × max_model_len` fits the
//! KV token budget returned by [`kv_token_budget`].

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::ParseError;
use crate::space::{grid_index, knob_u32, set_knob_u32, Config, Knob, SearchSpace};
use crate::text::content_lines;

pub const GIB: u64 = 1 << 30;

/// Memory constants of one model on one GPU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    /// Device memory `V`.
    pub vram_bytes: u64,
    /// Weights and runtime overhead `F`.
    pub model_footprint_bytes: u64,
    /// KV-cache cost per token `κ`.
    pub kv_bytes_per_token: u64,
    /// Safety margin `α` in (0, 1].
    pub safety_margin: f64,
}

impl HardwareProfile {
    /// Reference model on a 40 GiB device.
    pub fn reference() -> Self {
        Registry::builtin().lookup("qwen2-1.5b", 40 * GIB).profile
    }

    pub fn is_valid(&self) -> bool {
        self.vram_bytes > 0
            && self.model_footprint_bytes > 0
            && self.kv_bytes_per_token > 0
            && self.safety_margin > 0.0
            && self.safety_margin <= 1.0
    }

    /// Estimated footprint `F + κ·(max_num_seqs × max_model_len)`.
    pub fn memory_bytes(&self, config: &Config) -> f64 {
        self.model_footprint_bytes as f64 + self.kv_bytes_per_token as f64 * config.kv_geometry() as f64
    }
}

/// `⌊α·(u·V − F)/κ⌋`. Non-positive when `u·V ≤ F`.
pub fn kv_token_budget(hw: &HardwareProfile, utilization: f64) -> i64 {
    let usable = utilization * hw.vram_bytes as f64 - hw.model_footprint_bytes as f64;
    libm::floor(hw.safety_margin * usable / hw.kv_bytes_per_token as f64) as i64
}

/// Whether the batch geometry of `config` fits its KV token budget.
pub fn guard_satisfied(config: &Config, hw: &HardwareProfile) -> bool {
    let budget = kv_token_budget(hw, config.gpu_memory_utilization);
    budget >= 0 && config.kv_geometry() <= budget as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepairAction {
    ChunkedPrefillCleared,
    BatchedTokensRaised,
    ModelLenReduced,
    NumSeqsReduced,
    GuardUnsatisfiable,
}

impl RepairAction {
    pub fn as_str(self) -> &'static str {
        match self {
            RepairAction::ChunkedPrefillCleared => "chunked-prefill-cleared",
            RepairAction::BatchedTokensRaised => "batched-tokens-raised",
            RepairAction::ModelLenReduced => "model-len-reduced",
            RepairAction::NumSeqsReduced => "num-seqs-reduced",
            RepairAction::GuardUnsatisfiable => "guard-unsatisfiable",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairReport {
    pub original: Config,
    pub repaired: Config,
    /// One entry per adjustment, in the order applied.
    pub actions: Vec<RepairAction>,
}

impl RepairReport {
    pub fn guard_unsatisfiable(&self) -> bool {
        self.actions.contains(&RepairAction::GuardUnsatisfiable)
    }
}

fn raise_batched_tokens(config: &mut Config, actions: &mut Vec<RepairAction>) {
    let floor = config.max_num_seqs.max(config.max_model_len);
    if config.max_num_batched_tokens < floor {
        config.max_num_batched_tokens = floor;
        actions.push(RepairAction::BatchedTokensRaised);
    }
}

/// Next grid value strictly below `value`, if any.
fn step_down(grid: &[u32], value: u32) -> Option<u32> {
    let idx = grid_index(grid, value);
    if grid[idx] < value {
        Some(grid[idx])
    } else {
        idx.checked_sub(1).map(|i| grid[i])
    }
}

/// Applies the repair map. A geometry that cannot fit even at the grid
/// minima is recorded as [`RepairAction::GuardUnsatisfiable`]; running such
/// a config fails at engine startup.
pub fn repair(space: &SearchSpace, config: &Config, hw: &HardwareProfile) -> RepairReport {
    let mut repaired = config.clone();
    let mut actions = Vec::new();

    if repaired.enforce_eager && repaired.enable_chunked_prefill {
        repaired.enable_chunked_prefill = false;
        actions.push(RepairAction::ChunkedPrefillCleared);
    }
    raise_batched_tokens(&mut repaired, &mut actions);

    let budget = kv_token_budget(hw, repaired.gpu_memory_utilization);
    // Length goes first so batch parallelism survives as long as possible.
    while budget < 0 || repaired.kv_geometry() > budget as u64 {
        let step = [
            (Knob::MaxModelLen, RepairAction::ModelLenReduced),
            (Knob::MaxNumSeqs, RepairAction::NumSeqsReduced),
        ]
        .into_iter()
        .find_map(|(knob, action)| {
            let grid = space.grid(knob).expect("ordinal knob");
            step_down(grid, knob_u32(&repaired, knob)).map(|v| (knob, v, action))
        });
        match step {
            Some((knob, value, action)) => {
                set_knob_u32(&mut repaired, knob, value);
                actions.push(action);
            }
            None => {
                actions.push(RepairAction::GuardUnsatisfiable);
                break;
            }
        }
    }
    raise_batched_tokens(&mut repaired, &mut actions);

    RepairReport {
        original: config.clone(),
        repaired,
        actions,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelEntry {
    pub model_id: String,
    pub model_footprint_bytes: u64,
    pub kv_bytes_per_token: u64,
    pub safety_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistryLookup {
    pub profile: HardwareProfile,
    /// The model was not in the registry; the fallback row was used.
    pub fallback: bool,
    /// No device memory was detected; the guard budget is non-positive.
    pub zero_vram: bool,
}

/// Per-model memory constants, read from a whitespace-separated table.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    entries: Vec<ModelEntry>,
    fallback: ModelEntry,
}

const BUILTIN_REGISTRY: &str = include_str!("../data/registry.txt");

fn normalize_model_id(id: &str) -> String {
    let id = id.rsplit('/').next().unwrap_or(id);
    id.trim().to_ascii_lowercase()
}

impl Registry {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_REGISTRY).expect("bundled registry table is well-formed")
    }

    pub fn parse(src: &str) -> Result<Self, ParseError> {
        let mut entries = Vec::new();
        let mut fallback = None;
        for (line, content) in content_lines(src) {
            let cols: Vec<&str> = content.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(ParseError::new(
                    line,
                    "expected 4 columns: model_id footprint_bytes kv_bytes_per_token safety_margin",
                ));
            }
            let int = |s: &str, what: &str| {
                s.parse::<u64>().ok().filter(|&v| v > 0).ok_or_else(|| {
                    ParseError::new(line, alloc::format!("{what} must be a positive integer, got {s:?}"))
                })
            };
            let safety_margin = cols[3]
                .parse::<f64>()
                .ok()
                .filter(|a| *a > 0.0 && *a <= 1.0)
                .ok_or_else(|| ParseError::new(line, "safety_margin must lie in (0, 1]"))?;
            let entry = ModelEntry {
                model_id: normalize_model_id(cols[0]),
                model_footprint_bytes: int(cols[1], "footprint_bytes")?,
                kv_bytes_per_token: int(cols[2], "kv_bytes_per_token")?,
                safety_margin,
            };
            if cols[0] == "*" {
                fallback = Some(ModelEntry {
                    model_id: "*".to_string(),
                    ..entry
                });
            } else {
                entries.push(entry);
            }
        }
        let fallback = fallback.ok_or_else(|| ParseError::new(0, "registry has no `*` fallback row"))?;
        Ok(Self { entries, fallback })
    }

    pub fn entries(&self) -> &[ModelEntry] {
        &self.entries
    }

    /// Profile for `model_id` with `V` set to the detected device memory.
    pub fn lookup(&self, model_id: &str, detected_vram: u64) -> RegistryLookup {
        let key = normalize_model_id(model_id);
        let found = self.entries.iter().find(|e| e.model_id == key);
        let entry = found.unwrap_or(&self.fallback);
        RegistryLookup {
            profile: HardwareProfile {
                vram_bytes: detected_vram,
                model_footprint_bytes: entry.model_footprint_bytes,
                kv_bytes_per_token: entry.kv_bytes_per_token,
                safety_margin: entry.safety_margin,
            },
            fallback: found.is_none() || detected_vram == 0,
            zero_vram: detected_vram == 0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Quantization;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hw(v: u64, f: u64, kappa: u64, alpha: f64) -> HardwareProfile {
        HardwareProfile {
            vram_bytes: v,
            model_footprint_bytes: f,
            kv_bytes_per_token: kappa,
            safety_margin: alpha,
        }
    }

    fn config(seqs: u32, len: u32) -> Config {
        Config {
            quantization: Quantization::None,
            max_num_seqs: seqs,
            max_num_batched_tokens: 8192,
            gpu_memory_utilization: 0.9,
            max_model_len: len,
            enforce_eager: false,
            enable_chunked_prefill: false,
            enable_prefix_caching: false,
        }
    }

    #[test]
    fn budget_hand_evaluations() {
        assert_eq!(kv_token_budget(&hw(1_000_000, 200_000, 100, 0.5), 0.7), 2_500);
        assert_eq!(kv_token_budget(&hw(1_000_000, 500_000, 100, 0.5), 0.5), 0);
        assert_eq!(kv_token_budget(&hw(123_456, 0, 1, 1.0), 1.0), 123_456);
        assert!(kv_token_budget(&hw(1_000_000, 900_000, 100, 0.5), 0.5) < 0);
    }

    #[test]
    fn clears_flag_conflict() {
        let mut c = config(16, 512);
        c.enforce_eager = true;
        c.enable_chunked_prefill = true;
        let r = repair(&SearchSpace::default(), &c, &HardwareProfile::reference());
        assert!(!r.repaired.enable_chunked_prefill);
        assert_eq!(r.actions, [RepairAction::ChunkedPrefillCleared]);
    }

    #[test]
    fn satisfied_config_is_fixed_point() {
        let c = config(64, 2048);
        let r = repair(&SearchSpace::default(), &c, &HardwareProfile::reference());
        assert_eq!(r.repaired, c);
        assert!(r.actions.is_empty());
    }

    #[test]
    fn reduces_length_before_sequences() {
        // α·(u·V − F)/κ = 500,000 exactly with u = 1.
        let profile = hw(500_000, 0, 1, 1.0);
        let mut c = config(256, 8192);
        c.gpu_memory_utilization = 1.0;
        let r = repair(&SearchSpace::default(), &c, &profile);
        assert_eq!(r.repaired.max_model_len, 1024);
        assert_eq!(r.repaired.max_num_seqs, 256);
        assert_eq!(r.actions, [RepairAction::ModelLenReduced; 3]);
    }

    #[test]
    fn falls_back_to_sequence_reduction_then_gives_up() {
        let profile = hw(4096, 0, 1, 1.0);
        let mut c = config(256, 8192);
        c.gpu_memory_utilization = 1.0;
        let r = repair(&SearchSpace::default(), &c, &profile);
        assert_eq!(r.repaired.max_model_len, 512);
        assert_eq!(r.repaired.max_num_seqs, 16);
        assert!(r.guard_unsatisfiable());
        let first_seq = r
            .actions
            .iter()
            .position(|a| *a == RepairAction::NumSeqsReduced)
            .unwrap();
        assert!(r.actions[..first_seq]
            .iter()
            .all(|a| *a == RepairAction::ModelLenReduced));
    }

    #[test]
    fn raises_batched_tokens() {
        let mut c = config(64, 4096);
        c.max_num_batched_tokens = 512;
        let r = repair(&SearchSpace::default(), &c, &HardwareProfile::reference());
        assert_eq!(r.repaired.max_num_batched_tokens, 4096);
        assert_eq!(r.actions, [RepairAction::BatchedTokensRaised]);
    }

    #[test]
    fn registry_lookups() {
        let reg = Registry::builtin();
        let known = reg.lookup("Qwen/Qwen2-1.5B", 40 * GIB);
        assert!(!known.fallback);
        assert_eq!(known.profile.vram_bytes, 40 * GIB);
        assert_eq!(known.profile.model_footprint_bytes, 3 * GIB);
        assert_eq!(known.profile.kv_bytes_per_token, 28_672);
        assert_eq!(known.profile.safety_margin, 0.9);

        let unknown = reg.lookup("mystery-7b", 24 * GIB);
        assert!(unknown.fallback);
        assert!(!unknown.zero_vram);

        let zero = reg.lookup("qwen2-1.5b", 0);
        assert!(zero.fallback && zero.zero_vram);
        assert!(kv_token_budget(&zero.profile, 0.95) <= 0);
    }

    #[test]
    fn registry_parse_errors_name_lines() {
        let err = Registry::parse("# header\nfoo 1 2\n* 1 1 0.5\n").unwrap_err();
        assert_eq!(err.line, 2);
        let err = Registry::parse("foo 1 2 1.5\n* 1 1 0.5\n").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(Registry::parse("foo 1 2 0.5\n").is_err());
    }

    proptest! {
        #[test]
        fn repair_is_sound_idempotent_and_monotone(seed in any::<u64>(), vram_gib in 4u64..=80) {
            let space = SearchSpace::default();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut raw = space.sample_uniform(&mut rng);
            raw.enable_chunked_prefill = seed % 3 == 0;
            let profile = Registry::builtin().lookup("qwen2-1.5b", vram_gib * GIB).profile;
            let r = repair(&space, &raw, &profile);
            if !r.guard_unsatisfiable() {
                prop_assert!(guard_satisfied(&r.repaired, &profile));
            }
            prop_assert_eq!(&repair(&space, &r.repaired, &profile).repaired, &r.repaired);
            prop_assert!(r.repaired.max_num_seqs <= raw.max_num_seqs);
            prop_assert!(r.repaired.max_model_len <= raw.max_model_len);
            prop_assert!(r.repaired.max_num_batched_tokens >= r.repaired.max_num_seqs.max(r.repaired.max_model_len));
            prop_assert!(!(r.repaired.enforce_eager && r.repaired.enable_chunked_prefill));
            if let Some(first_seq) = r.actions.iter().position(|a| *a == RepairAction::NumSeqsReduced) {
                prop_assert!(!r.actions[first_seq..].contains(&RepairAction::ModelLenReduced));
            }
        }
    }
}
