use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::toy::fnv1a;

/// Per-item seed from the run seed and a stable key (usually an image id),
/// so results do not depend on processing order.
pub fn derive_seed(global: u64, key: &str) -> u64 {
    fnv1a(key.as_bytes()) ^ global.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn rng_for(global: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, key))
}

/// Content hash of a float buffer.
pub fn hash_f64s(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}
