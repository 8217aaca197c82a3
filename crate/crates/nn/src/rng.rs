use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator used for every seeded draw in the workspace.
pub type SeededRng = ChaCha8Rng;

pub const RNG_ALGORITHM: &str = "chacha8";

/// A seed plus the name of the generator it feeds. ChaCha output is
/// specified bit-for-bit, so draws match across platforms.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub algorithm: String,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            algorithm: RNG_ALGORITHM.to_string(),
        }
    }

    pub fn rng(&self) -> SeededRng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }

    /// Independent stream derived from this seed, e.g. one per subsystem.
    pub fn fork(&self, stream: u64) -> SeededRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}
