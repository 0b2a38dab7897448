//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream addressed by
//! `(master seed, stream index)`. Replication `i` uses stream `i`; sampled
//! environment paths live in the upper half of the stream space so the two
//! families never collide.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const ENVIRONMENT_STREAM_BASE: u64 = 1 << 63;

/// Stream used by replication `index`.
pub fn replication_stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index & !ENVIRONMENT_STREAM_BASE);
    rng
}

/// Stream used to sample quenched environment path `index`.
pub fn environment_stream(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ENVIRONMENT_STREAM_BASE | index);
    rng
}
