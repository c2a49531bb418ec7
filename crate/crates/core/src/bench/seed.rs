//! Per-trial seed derivation.
//!
//! `splitmix64(x)`:
//! ```text
//! z = x + 0x9E3779B97F4A7C15            (wrapping)
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9  (wrapping)
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB  (wrapping)
//! z ^ (z >> 31)
//! ```
//! The seed of trial `t` at sweep index `s` under base seed `b` is
//! `splitmix64(splitmix64(splitmix64(b) ^ s) ^ t)`. All methods and coupling
//! values at a given `(s, t)` see the same problem instance.

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn trial_seed(base_seed: u64, sweep_index: usize, trial: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(base_seed) ^ sweep_index as u64) ^ trial as u64)
}
