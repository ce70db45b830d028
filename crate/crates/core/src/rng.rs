//! Seeded random streams.
//!
//! Every random draw in the simulator comes from a ChaCha8 generator keyed by
//! `(master seed, stream, index)`. Streams are independent ChaCha streams, so the
//! training symbols, evaluation symbols and the noise never share state even
//! when they are derived from the same master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TRAIN_SYMBOLS: u64 = 1;
pub const TRAIN_NOISE: u64 = 2;
pub const EVAL_SYMBOLS: u64 = 3;
pub const EVAL_NOISE: u64 = 4;
pub const VALIDATION_SYMBOLS: u64 = 5;
pub const VALIDATION_NOISE: u64 = 6;
pub const CALIBRATION: u64 = 7;
pub const SYNC: u64 = 8;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(index)));
    rng.set_stream(stream);
    rng
}
