//! Seeded random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Preprocess,
    Init,
    Shuffle,
    Scene,
}

impl Stream {
    fn index(self) -> u64 {
        match self {
            Stream::Preprocess => 1,
            Stream::Init => 2,
            Stream::Shuffle => 3,
            Stream::Scene => 4,
        }
    }
}

/// Independent generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.index());
    rng
}
