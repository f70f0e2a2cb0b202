//! Counter-based random streams.
//!
//! Every sampled response gets its own generator keyed by (global seed,
//! step, task id, response index), so results are independent of how work
//! is scheduled across threads.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies the group being sampled; combined with the task id and the
/// response index to derive a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleKey {
    pub seed: u64,
    pub step: u64,
}

impl SampleKey {
    pub fn new(seed: u64, step: u64) -> Self {
        SampleKey { seed, step }
    }
}

/// FNV-1a over bytes; stable across platforms and runs.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for p in parts {
        h = splitmix64(h ^ *p);
    }
    h
}

/// The generator for one response.
pub fn stream_rng(key: SampleKey, task_id: &str, response_index: u64) -> ChaCha8Rng {
    let s = mix(&[
        key.seed,
        key.step,
        fnv1a64(task_id.as_bytes()),
        response_index,
    ]);
    ChaCha8Rng::seed_from_u64(s)
}

/// A generator for auxiliary deterministic draws (episode shuffles,
/// evaluation sampling) labeled by purpose.
pub fn labeled_rng(seed: u64, label: &str, counter: u64) -> ChaCha8Rng {
    let s = mix(&[seed, fnv1a64(label.as_bytes()), counter]);
    ChaCha8Rng::seed_from_u64(s)
}
