//! Seed derivation and random streams.
//!
//! Every random number in a run comes from a ChaCha8 generator seeded with
//! `ChaCha8Rng::seed_from_u64(sample_seed)` and switched to a dedicated
//! stream with `set_stream`:
//!
//! | stream      | consumer                           |
//! |-------------|------------------------------------|
//! | `0`         | disorder signs                     |
//! | `1`         | replica-exchange decisions         |
//! | `2 + k`     | initial spins and sweeps of replica `k` |
//!
//! Sample seeds come from [`derive_seed`] applied to
//! `[master_seed, p_group, L, sample_index]`, so adding samples never
//! perturbs existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DISORDER_STREAM: u64 = 0;
pub const EXCHANGE_STREAM: u64 = 1;
pub const REPLICA_STREAM_BASE: u64 = 2;

const DERIVE_INIT: u64 = 0x243F_6A88_85A3_08D3;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `h ← splitmix64(h + part)` folded over `parts`, from a fixed constant.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(DERIVE_INIT, |h, &p| splitmix64(h.wrapping_add(p)))
}

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
