//! Seeded random streams.
//!
//! Every consumer draws from a ChaCha20 stream selected by `(master seed,
//! stream id)`. Stream ids are derived from a replicate index and a purpose
//! tag, so the assignment of work to threads never changes the numbers drawn.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

pub const GENERATOR_ID: &str = "chacha20";

/// What a stream is used for inside one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Field = 1,
    Pattern = 2,
    Hmc = 3,
    Vb = 4,
    Ppc = 5,
    Misc = 6,
}

pub fn stream(seed: u64, id: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn stream_id(replicate: u64, purpose: Purpose) -> u64 {
    (replicate << 8) | purpose as u64
}

pub fn replicate_stream(seed: u64, replicate: u64, purpose: Purpose) -> StreamRng {
    stream(seed, stream_id(replicate, purpose))
}
