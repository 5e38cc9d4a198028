//! Deterministic random-source plumbing.
//!
//! Every random draw in the crate flows from an explicit seed through
//! [`Rng`]. Sub-streams are derived with [`derive_seed`] so that parallel
//! workers (per-scene, per-sphere, per-draw shards) stay reproducible
//! regardless of thread count.

use rand::SeedableRng;

/// The concrete RNG used everywhere. ChaCha keeps streams portable across
/// platforms and rust versions.
pub type Rng = rand_chacha::ChaCha12Rng;

/// Build the root RNG for a run.
pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// splitmix64 finalizer; good avalanche, cheap.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent sub-stream seed from a parent seed and a tag path.
///
/// `derive_seed(s, &[a, b])` differs from `derive_seed(s, &[b, a])`.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = mix(seed ^ 0x5851_f42d_4c95_7f2d);
    for &t in tags {
        acc = mix(acc ^ mix(t));
    }
    acc
}

/// Convenience: RNG for a derived sub-stream.
pub fn sub_rng(seed: u64, tags: &[u64]) -> Rng {
    rng_from_seed(derive_seed(seed, tags))
}
