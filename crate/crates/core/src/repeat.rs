//! Replicating a randomized procedure across derived seeds and summarizing
//! each statistic by median, minimum and maximum.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::derive_seed;

pub const DEFAULT_REPEATS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Median, min and max of the finite values, or `None` if there are none.
pub fn spread(values: &[f64]) -> Option<Spread> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n.is_multiple_of(2) { 0.5 * (v[n / 2 - 1] + v[n / 2]) } else { v[n / 2] };
    Some(Spread {
        median,
        min: v[0],
        max: v[n - 1],
    })
}

/// Seed used by repetition `r` of a run seeded with `seed`. Repetition 0
/// keeps the base seed so a single run and the first repeat agree.
pub fn repetition_seed(seed: u64, r: usize) -> u64 {
    if r == 0 {
        seed
    } else {
        derive_seed(seed, r as u64)
    }
}

/// Runs `f` once per repetition with its derived seed.
pub fn replicate<T>(seed: u64, repeats: usize, mut f: impl FnMut(usize, u64) -> Result<T>) -> Result<Vec<T>> {
    (0..repeats).map(|r| f(r, repetition_seed(seed, r))).collect()
}
