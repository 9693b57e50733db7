//! Named random streams.
//!
//! Every stream is a ChaCha8 generator keyed by the run seed and addressed by
//! its own stream id, so streams never overlap and changing how much one
//! stream consumes leaves the others untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Confounders = 1,
    Loadings = 2,
    ConfounderEffects = 3,
    Idiosyncratic = 4,
    Noise = 5,
    Signals = 6,
    Graph = 7,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
