//! Sample statistics, WNR conversions, seeded generator streams and AWGN
//! injection.
//!
//! # Random streams
//!
//! Every random draw in the crate comes from a [`SeedSpec`]. A spec maps to a
//! ChaCha8 generator as follows:
//!
//! 1. the 32-byte key is expanded from `master_seed` by
//!    `rand_core::SeedableRng::seed_from_u64` (PCG32 expansion);
//! 2. the ChaCha stream (nonce) is set to `stream_id`;
//! 3. the block counter starts at zero.
//!
//! ChaCha streams with the same key and different nonces are independent
//! keystreams, so distinct `stream_id`s under one master seed never overlap.
//! Hierarchical seeds (trial blocks, rounds, devices) are derived with
//! [`SeedSpec::child`], which hashes `(stream_id, tag)` through SplitMix64.
//! Gaussian variates use the Ziggurat sampler of `rand_distr::StandardNormal`;
//! both algorithms are platform independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Flat real-valued parameter vector with an optional noise-free mask.
///
/// `mask[i] == true` marks an entry that is never perturbed or denoised.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    values: Vec<f64>,
    mask: Option<Vec<bool>>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        Self::build(values, None)
    }

    pub fn with_mask(values: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        Self::build(values, Some(mask))
    }

    fn build(values: Vec<f64>, mask: Option<Vec<bool>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("weight vector"));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some(m) = &mask {
            if m.len() != values.len() {
                return Err(Error::LengthMismatch {
                    what: "mask",
                    expected: values.len(),
                    found: m.len(),
                });
            }
        }
        Ok(Self { values, mask })
    }

    /// Replaces the values keeping the mask. Used internally where the new
    /// values are known to be finite and of the same length.
    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            mask: self.mask.clone(),
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_masked(&self, i: usize) -> bool {
        self.mask.as_ref().is_some_and(|m| m[i])
    }

    /// Values of the entries that are subject to noise, in index order.
    pub fn unmasked(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.is_masked(*i))
            .map(|(_, v)| *v)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Gaussian prior statistics of the weights plus the channel noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorStats {
    pub mu_w: f64,
    pub var_w: f64,
    pub var_z: f64,
}

impl PriorStats {
    pub fn new(mu_w: f64, var_w: f64, var_z: f64) -> Result<Self> {
        if !mu_w.is_finite() {
            return Err(Error::invalid("mu_w", "must be finite"));
        }
        if !(var_w >= 0.0) || !var_w.is_finite() {
            return Err(Error::invalid("var_w", format!("must be finite and >= 0, got {var_w}")));
        }
        if !(var_z >= 0.0) || !var_z.is_finite() {
            return Err(Error::invalid("var_z", format!("must be finite and >= 0, got {var_z}")));
        }
        Ok(Self { mu_w, var_w, var_z })
    }

    /// Weight variance to noise power ratio in dB. Infinite when `var_z == 0`.
    pub fn wnr_db(&self) -> f64 {
        10.0 * (self.var_w / self.var_z).log10()
    }

    /// Same variances with a zero prior mean.
    pub fn centered(&self) -> Self {
        Self { mu_w: 0.0, ..*self }
    }
}

/// Deterministic generator stream identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl SeedSpec {
    pub const fn new(master_seed: u64, stream_id: u64) -> Self {
        Self {
            master_seed,
            stream_id,
        }
    }

    pub const fn from_master(master_seed: u64) -> Self {
        Self::new(master_seed, 0)
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Derives a sub-stream identified by `tag`.
    pub fn child(&self, tag: u64) -> Self {
        let mixed = splitmix64(self.stream_id ^ splitmix64(tag.wrapping_add(0x6a09_e667_f3bc_c908)));
        Self::new(self.master_seed, mixed)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Arithmetic mean, summed in index order.
pub fn sample_mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("sample_mean"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Population variance (divisor `d`).
pub fn sample_variance(values: &[f64]) -> Result<f64> {
    let mean = sample_mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(ss / values.len() as f64)
}

/// `sigma_z^2 = var_w * 10^(-eta/10)`.
pub fn wnr_to_noise_var(eta_db: f64, var_w: f64) -> Result<f64> {
    if !(var_w > 0.0) {
        return Err(Error::invalid("var_w", format!("must be > 0, got {var_w}")));
    }
    if eta_db.is_nan() {
        return Err(Error::invalid("eta_db", "is NaN"));
    }
    Ok(var_w * 10f64.powf(-eta_db / 10.0))
}

/// `eta = 10 log10(var_w / var_z)`.
pub fn noise_var_to_wnr(var_z: f64, var_w: f64) -> Result<f64> {
    if !(var_w > 0.0) {
        return Err(Error::invalid("var_w", format!("must be > 0, got {var_w}")));
    }
    if !(var_z >= 0.0) {
        return Err(Error::invalid("var_z", format!("must be >= 0, got {var_z}")));
    }
    Ok(10.0 * (var_w / var_z).log10())
}

/// Draws `n` i.i.d. `N(0, var)` samples from one stream.
pub fn gaussian_vec(n: usize, var: f64, seed: SeedSpec) -> Vec<f64> {
    let sd = var.sqrt();
    let mut rng = seed.rng();
    (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            sd * g
        })
        .collect()
}

/// Returns `r = w + z` with `z ~ N(0, var_z)` on unmasked entries.
///
/// One Gaussian is drawn per index, masked or not, so the noise that lands
/// on a given index does not depend on the mask.
pub fn add_awgn(w: &WeightVector, var_z: f64, seed: SeedSpec) -> Result<WeightVector> {
    if !(var_z >= 0.0) || !var_z.is_finite() {
        return Err(Error::invalid("var_z", format!("must be finite and >= 0, got {var_z}")));
    }
    if var_z == 0.0 {
        return Ok(w.clone());
    }
    let noise = gaussian_vec(w.len(), var_z, seed);
    let values = w
        .values()
        .iter()
        .zip(&noise)
        .enumerate()
        .map(|(i, (&wi, &zi))| if w.is_masked(i) { wi } else { wi + zi })
        .collect();
    Ok(w.with_values(values))
}

/// Receiver-side prior estimate: `mu_w = mu_r`, `var_w = sigma_r^2 - var_z`,
/// floored at `floor * sigma_r^2`. Masked entries are excluded.
pub fn estimate_prior_stats(r: &WeightVector, var_z: f64, floor: f64) -> Result<PriorStats> {
    if !(var_z >= 0.0) {
        return Err(Error::invalid("var_z", format!("must be >= 0, got {var_z}")));
    }
    if !(floor > 0.0) {
        return Err(Error::invalid("floor", format!("must be > 0, got {floor}")));
    }
    let observed: Vec<f64> = r.unmasked().collect();
    let mu = sample_mean(&observed)?;
    let var_r = sample_variance(&observed)?;
    let var_w = (var_r - var_z).max(floor * var_r);
    PriorStats::new(mu, var_w, var_z)
}

/// Default variance floor used when `sigma_r^2 < sigma_z^2`.
pub const DEFAULT_VAR_FLOOR: f64 = 1e-6;
