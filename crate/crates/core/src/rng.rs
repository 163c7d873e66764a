//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha::ChaCha8Rng`)
//! seeded with `seed_from_u64(seed)` and then switched to a per-purpose stream
//! with `set_stream`. Parameter initialization, dropout masks and batch
//! shuffling therefore never consume each other's randomness, and a run is
//! reproducible from its seed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 0,
    Dropout = 1,
    Shuffle = 2,
    Embedding = 3,
    Split = 4,
    Data = 5,
}

pub fn stream_rng(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
