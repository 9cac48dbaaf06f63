//! Counter-based seeding: every (base seed, sweep point, trial) triple owns an
//! independent ChaCha stream, so results do not depend on worker scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream key for `(base, point, trial, lane)`; `lane` separates independent
/// draws inside one trial (e.g. channel vs. noise).
pub fn stream_key(base: u64, point: u64, trial: u64, lane: u64) -> [u8; 32] {
    let mut seed = [0u8; 32];
    let words = [
        splitmix64(base ^ 0x5851_f42d_4c95_7f2d),
        splitmix64(point.wrapping_add(splitmix64(base))),
        splitmix64(trial.wrapping_add(splitmix64(base ^ point))),
        splitmix64(lane ^ splitmix64(trial ^ point.rotate_left(17))),
    ];
    for (chunk, w) in seed.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    seed
}

pub fn stream(base: u64, point: u64, trial: u64, lane: u64) -> StreamRng {
    ChaCha8Rng::from_seed(stream_key(base, point, trial, lane))
}
