//! Seeded random streams.
//!
//! Every stochastic step in the simulator draws from a `ChaCha8Rng` whose seed
//! is derived by hashing a tuple of integers, so adding a client or a round
//! never shifts the stream of another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash an ordered list of words into a single 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6a09_e667_f3bc_c908, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream for client `client` in round `round` of an experiment.
pub fn client_stream_seed(master_seed: u64, round: usize, client: usize) -> u64 {
    derive_seed(&[master_seed, round as u64, client as u64])
}
