//! Uncertainty-aware active recognition workbench.
//!
//! * [`opinion`]: subjective-logic opinions and their Dempster combination.
//! * [`numerics`]: special functions and a small layer kit with manual gradients.
//! * [`edl`]: evidential classifier, losses and training.
//! * [`world`]: occluded 2-D gridworld with a synthetic feature sensor.
//! * [`bench`]: difficulty scoring and test-set generation.
//! * [`agent`]: recurrent PPO policy, baselines, fusion strategies, evaluation.

pub mod numerics;
pub mod opinion;
pub mod bench;
pub mod edl;
pub mod world;
pub mod agent;

pub const CSV_SCHEMA_VERSION: u32 = 1;

/// First line of every CSV this crate writes, e.g. `# schema: evaluation v1`.
pub fn csv_schema_comment(name: &str) -> String {
    format!("# schema: {name} v{CSV_SCHEMA_VERSION}")
}

/// Mixes a sequence of integers into one 64-bit seed (splitmix64 finaliser
/// applied after each part).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x6a09_e667_f3bc_c909;
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    h
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
