//! Counter-based seed derivation.
//!
//! `rep_seed(master, problem, r) = splitmix64(splitmix64(master ^ fnv1a64(problem)) + r)`.
//! Seeds depend only on their inputs, so repetitions can run in any order.
//! The formula is part of the report format and must stay stable.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Tag mixed into the test-set seed so it never collides with a repetition seed.
const TEST_SET_TAG: u64 = 0x7465_7374_7365_7421;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn problem_seed(master: u64, problem: &str) -> u64 {
    splitmix64(master ^ fnv1a64(problem.as_bytes()))
}

/// Seed of repetition `rep` of `problem`.
pub fn rep_seed(master: u64, problem: &str, rep: usize) -> u64 {
    splitmix64(problem_seed(master, problem).wrapping_add(rep as u64))
}

/// Seed of the shared test set of `problem`.
pub fn test_set_seed(master: u64, problem: &str) -> u64 {
    splitmix64(problem_seed(master, problem) ^ TEST_SET_TAG)
}
