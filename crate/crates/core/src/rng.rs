//! Seeded random streams.
//!
//! Every random consumer draws from a ChaCha8 stream keyed by `(seed, stream id)`,
//! so sample draws, replacement draws, test sets and random Fourier features
//! never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifiers of the independent sub-streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Train = 1,
    Test = 2,
    Features = 3,
    Replacement = 4,
    Monitor = 5,
    Estimate = 6,
    Generate = 7,
    Probe = 8,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Stream with an extra integer index folded into the stream id, for
/// consumers that need many independent streams of the same kind.
pub fn indexed_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) ^ index.wrapping_add(1));
    rng
}
