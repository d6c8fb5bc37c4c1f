//! Seed derivation for deterministic stages.
//!
//! Every randomized stage owns a base seed; per-iteration and per-task seeds
//! are derived with a splitmix64 step so results never depend on scheduling
//! or worker count. The same (seed, stream) pair always yields the same child.

/// One splitmix64 output step.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed for an indexed stream (iteration, task, epoch...).
pub fn derive(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}
