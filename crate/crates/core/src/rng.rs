//! Named random streams derived from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent sub-streams of the experiment seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Synth = 3,
    Split = 4,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
