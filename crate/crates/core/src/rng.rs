//! Reproducible, splittable random streams.
//!
//! A [`RngSeed`] names one ChaCha8 stream. Child streams are derived by
//! hashing the parent stream with a tag, so a job tree (grid point,
//! replicate, restart, ...) gets independent streams that do not depend on
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed {
    pub seed: u64,
    #[serde(default)]
    pub stream: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSeed {
    pub fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Independent sub-stream identified by `tag`.
    pub fn child(&self, tag: u64) -> Self {
        let mixed = splitmix64(self.stream ^ splitmix64(tag.wrapping_add(0xD1B5_4A32_D192_ED03)));
        Self {
            seed: self.seed,
            stream: mixed,
        }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}

impl Default for RngSeed {
    fn default() -> Self {
        Self::new(0)
    }
}
