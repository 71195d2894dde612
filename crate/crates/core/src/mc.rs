//! Block-parallel Monte Carlo driver.
//!
//! Trials are grouped into fixed-size blocks. Block `b` draws from
//! `seed.child(b)` and block summaries are merged in block order, so the
//! estimate is bitwise identical for any thread count.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stats::SeedSpec;

/// Trials per generator block.
pub const BLOCK_TRIALS: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(trials)`.
    pub std_err: f64,
    pub trials: u64,
}

#[derive(Clone, Copy)]
struct Moments {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    const EMPTY: Moments = Moments {
        n: 0,
        mean: 0.0,
        m2: 0.0,
    };

    fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.n == 0 {
            return other;
        }
        if other.n == 0 {
            return self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        Moments { n, mean, m2 }
    }
}

/// Runs `trials` independent evaluations of `sample` and returns the mean
/// and its standard error.
pub fn estimate<F>(trials: u64, seed: SeedSpec, sample: F) -> Result<McEstimate>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync,
{
    if trials == 0 {
        return Err(Error::invalid("trials", "must be >= 1"));
    }
    let blocks = trials.div_ceil(BLOCK_TRIALS);
    let summaries: Vec<Moments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let n = BLOCK_TRIALS.min(trials - b * BLOCK_TRIALS);
            let mut rng = seed.child(b).rng();
            let mut m = Moments::EMPTY;
            for _ in 0..n {
                m.push(sample(&mut rng));
            }
            m
        })
        .collect();
    let total = summaries.into_iter().fold(Moments::EMPTY, Moments::merge);
    let std_err = if total.n > 1 {
        (total.m2 / (total.n - 1) as f64).sqrt() / (total.n as f64).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate {
        mean: total.mean,
        std_err,
        trials,
    })
}
