use rand::seq::index::sample;

use super::Sample;
use crate::error::{Error, Result};
use crate::rng::rng_for;

/// `round(x)` with ties away from zero, for non-negative `x`.
pub fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Uniform subset without replacement of size `round(fraction · N)`, in the
/// original order. `fraction == 1.0` returns the full set; `0.0` an empty one.
pub fn subsample_fraction(train: &[Sample], fraction: f64, seed: u64) -> Result<Vec<Sample>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction {fraction} outside [0, 1]")));
    }
    if fraction == 1.0 {
        return Ok(train.to_vec());
    }
    let n = train.len();
    let k = round_half_up(fraction * n as f64).min(n);
    let mut rng = rng_for(seed, &[0x73_75_62]);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| train[i].clone()).collect())
}
