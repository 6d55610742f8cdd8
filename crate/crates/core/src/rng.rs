//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha8 stream keyed by
//! `(seed, purpose, index)`. Device noise uses `index = device`, and each
//! device draws exactly in step order, so results do not depend on how the
//! devices are scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Parameters = 1,
    Phase = 2,
    Noise = 3,
    Selection = 4,
    Latency = 5,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(purpose as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
