//! Deterministic seed derivation so that every random stream in a run is a
//! pure function of the master seed and a small tuple of labels.

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `master` and an ordered list of labels.
pub fn derive(master: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(mix(master), |acc, &l| mix(acc ^ mix(l)))
}

/// Stream labels used across the crate.
pub mod stream {
    pub const DEMAND: u64 = 1;
    pub const EVAL: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SELECT: u64 = 4;
    pub const TRAIN: u64 = 5;
    pub const ATTACK: u64 = 6;
    pub const DELAY: u64 = 7;
    pub const CENTRAL: u64 = 8;
    pub const SUBSAMPLE: u64 = 9;
}
