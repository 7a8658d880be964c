//! Named, index-addressable random streams derived from one master seed.
//!
//! Every consumer (initialisation, shuffling, augmentation, synthesis) asks for
//! its own stream, and per-sample work asks for a stream keyed by the sample
//! index, so results do not depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const AUGMENT: &str = "augment";
pub const SYNTH: &str = "synth";

/// Stream `name` / `index` of the master `seed`.
pub fn stream(seed: u64, name: &str, index: u64) -> Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
