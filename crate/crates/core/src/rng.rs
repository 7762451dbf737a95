//! Deterministic generator trees.
//!
//! Every random quantity is drawn from a ChaCha8 stream addressed by
//! `(root seed, domain, index)`. Parallel work indexes its own stream, so the
//! output never depends on scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub type StreamRng = ChaCha8Rng;

/// Root of a generator tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Seed(pub u64);

/// Stream domains, kept disjoint so e.g. noise and Dirichlet draws never share
/// a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Init = 1,
    Dirichlet = 2,
    Noise = 3,
    Data = 4,
    Dropout = 5,
    Grid = 6,
    Replication = 7,
    Oracle = 8,
    Evaluation = 9,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seed {
    /// Child seed for a sub-task; used to build nested trees (suite row,
    /// grid point, replication, ...).
    pub fn child(self, domain: Domain, index: u64) -> Seed {
        Seed(splitmix(splitmix(self.0 ^ ((domain as u64) << 56)).wrapping_add(index)))
    }

    /// Generator for stream `index` of `domain`.
    pub fn stream(self, domain: Domain, index: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.0 ^ ((domain as u64) << 56)));
        rng.set_stream(index);
        rng
    }
}
