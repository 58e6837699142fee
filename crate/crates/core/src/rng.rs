//! Seeded random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by
//! `(seed, purpose, index)`, so a result never depends on which worker thread
//! happened to run it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Separates the random streams of unrelated consumers sharing one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    EprReplicate,
    McmcChain,
    SimTruth,
    SimCovariates,
    SimPartition,
    Harness,
    Test,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::EprReplicate => 0x45_5052_5245_504c,
            Purpose::McmcChain => 0x4d43_4d43_4348_4e,
            Purpose::SimTruth => 0x5349_4d54_5255_54,
            Purpose::SimCovariates => 0x5349_4d43_4f56_41,
            Purpose::SimPartition => 0x5349_4d50_4152_54,
            Purpose::Harness => 0x4841_524e_4553_53,
            Purpose::Test => 0x5445_5354_5445_53,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream number `index` for `purpose` under `seed`.
pub fn stream(seed: u64, purpose: Purpose, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ purpose.tag()));
    rng.set_stream(index);
    rng
}

/// Derives a child seed, e.g. one per simulation replicate.
pub fn child_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ purpose.tag()) ^ index.wrapping_mul(0xa076_1d64_78bd_642f))
}
