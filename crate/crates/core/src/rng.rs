//! Seed derivation so that every (trial, fold, tree, patient) task owns an
//! independent stream regardless of how work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random generator used throughout the crate.
pub type TaskRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a path of task coordinates.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(master);
    for (depth, &p) in path.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(p ^ ((depth as u64 + 1) << 56)));
    }
    h
}

pub fn task_rng(master: u64, path: &[u64]) -> TaskRng {
    TaskRng::seed_from_u64(derive_seed(master, path))
}
