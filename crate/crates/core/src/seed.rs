//! Named random streams derived from a single master seed.
//!
//! Every consumer (parameter init, child shuffles, node visits, splits,
//! baselines) asks for its own stream by name, so adding a new consumer
//! never shifts the draws seen by the existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const VISIT: &str = "visit";
pub const SPLIT: &str = "split";
pub const BASELINE: &str = "baseline";
pub const DATA: &str = "data";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the stream `name` under `master`.
pub fn derive(master: u64, name: &str) -> u64 {
    // FNV-1a over the name, then mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(splitmix64(master) ^ h)
}

pub fn stream(master: u64, name: &str) -> Rng {
    Rng::seed_from_u64(derive(master, name))
}

/// Sub-stream `index` of a named stream, e.g. one per model level.
pub fn substream(master: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(splitmix64(derive(master, name) ^ splitmix64(index)))
}
