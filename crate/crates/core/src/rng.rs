//! Per-trial random streams.
//!
//! Every trial draws from child generators keyed by `(study seed, trial
//! index, stream)`, so the draws of trial `t` do not depend on how many
//! numbers earlier trials consumed. Replaying a persisted study through a
//! fresh optimizer therefore reproduces the live run exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TrialRng = ChaCha8Rng;

/// Independent purposes a trial draws randomness for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Propose,
    Observe,
    Simulate,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Propose => 0x7072_6f70,
            Stream::Observe => 0x6f62_7365,
            Stream::Simulate => 0x7369_6d75,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn child_seed(seed: u64, trial_index: u32, stream: Stream) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ u64::from(trial_index)) ^ stream.tag())
}

pub fn trial_rng(seed: u64, trial_index: u32, stream: Stream) -> TrialRng {
    ChaCha8Rng::seed_from_u64(child_seed(seed, trial_index, stream))
}

/// Box-Muller standard normal draw.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // 1 - [0,1) keeps the log argument in (0, 1].
    let u1 = 1.0 - rng.gen::<f64>();
    let u2 = rng.gen::<f64>();
    libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2)
}

/// Normal draw truncated to `mean ± k·sd` by rejection.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, sd: f64, k: f64) -> f64 {
    if sd <= 0.0 {
        return mean;
    }
    loop {
        let z = standard_normal(rng);
        if z.abs() <= k {
            return mean + sd * z;
        }
    }
}
