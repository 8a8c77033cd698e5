//! Seed derivation for reproducible, parallelisable sampling.
//!
//! Every randomised operation owns a ChaCha stream derived from the run seed,
//! a per-operation salt, and (for per-sample parallelism) the sample index.
//! Results are therefore independent of worker count and execution order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod salt {
    pub const DATASET: u64 = 0x01;
    pub const UNIFORM_REF: u64 = 0x02;
    pub const FORWARD_SLICES: u64 = 0x03;
    pub const BACKWARD: u64 = 0x04;
    pub const TRAIN_INIT: u64 = 0x05;
    pub const TRAIN_BATCH: u64 = 0x06;
    pub const TRAIN_SIM: u64 = 0x07;
    pub const VIZ: u64 = 0x08;
}

/// splitmix64 finaliser; decorrelates seed/salt pairs.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a sub-seed for one operation of a run.
pub fn derive(seed: u64, salt: u64) -> u64 {
    mix(seed ^ mix(salt))
}

/// RNG for sample `index` of the operation identified by `op_seed`.
pub fn stream_rng(op_seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(op_seed);
    rng.set_stream(index);
    rng
}
