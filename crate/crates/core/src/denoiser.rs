//! Linear Bayesian denoisers for a weight vector observed through AWGN.
//!
//! Under an i.i.d. Gaussian prior `W ~ N(mu_w, var_w)` and noise
//! `Z ~ N(0, var_z)` the posterior is Gaussian, so the MMSE and MAP estimates
//! coincide ([`mmse_estimate`] serves both). Reweighting the posterior by
//! `exp(lambda W^2 + beta W)` keeps it Gaussian with
//!
//! ```text
//! mean     = (var_w r + var_z mu_w + var_w var_z beta) / (var_w + (1 - 2 var_w lambda) var_z)
//! variance = var_w var_z / (var_w + (1 - 2 var_w lambda) var_z)
//! ```
//!
//! which is the affine map `theta r + rho` implemented by [`LinearDenoiser`].
//! The variance stays positive only for `lambda < 1/(2 var_w) + 1/(2 var_z)`.
//! `lambda = 0, beta = 0` recovers MMSE; `lambda = 1/(2 var_w), beta = 0,
//! mu_w = 0` recovers ML (`theta = 1, rho = 0`).

use crate::error::{Error, Result};
use crate::stats::{PriorStats, WeightVector};

/// Raw temperature parameters `(lambda, beta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureParams {
    pub lambda: f64,
    pub beta: f64,
}

/// Temperature with `lambda' = 2 var_w lambda`; `lambda' = 1` is the ML point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedTemperature {
    pub lambda_prime: f64,
    pub beta: f64,
}

/// The affine denoiser `w_hat = theta r + rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDenoiser {
    pub theta: f64,
    pub rho: f64,
}

impl TemperatureParams {
    pub fn new(lambda: f64, beta: f64) -> Self {
        Self { lambda, beta }
    }

    pub fn normalize(&self, var_w: f64) -> Result<NormalizedTemperature> {
        check_var_w(var_w)?;
        Ok(NormalizedTemperature {
            lambda_prime: 2.0 * var_w * self.lambda,
            beta: self.beta,
        })
    }
}

impl NormalizedTemperature {
    pub const ML: NormalizedTemperature = NormalizedTemperature {
        lambda_prime: 1.0,
        beta: 0.0,
    };
    pub const MMSE: NormalizedTemperature = NormalizedTemperature {
        lambda_prime: 0.0,
        beta: 0.0,
    };

    pub fn new(lambda_prime: f64, beta: f64) -> Self {
        Self { lambda_prime, beta }
    }

    pub fn denormalize(&self, var_w: f64) -> Result<TemperatureParams> {
        check_var_w(var_w)?;
        Ok(TemperatureParams {
            lambda: self.lambda_prime / (2.0 * var_w),
            beta: self.beta,
        })
    }

    /// Whether `lambda'` lies in `[0, 1 + var_w/var_z)`.
    pub fn is_feasible(&self, p: &PriorStats) -> bool {
        self.lambda_prime >= 0.0 && self.lambda_prime < lambda_prime_bound(p)
    }
}

fn check_var_w(var_w: f64) -> Result<()> {
    if var_w > 0.0 && var_w.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("var_w", format!("must be > 0, got {var_w}")))
    }
}

/// Upper bound `1/(2 var_w) + 1/(2 var_z)` on `lambda` (infinite if either variance is 0).
pub fn lambda_bound(p: &PriorStats) -> f64 {
    if p.var_w == 0.0 || p.var_z == 0.0 {
        f64::INFINITY
    } else {
        0.5 / p.var_w + 0.5 / p.var_z
    }
}

/// Upper bound `1 + var_w/var_z` on `lambda'`.
pub fn lambda_prime_bound(p: &PriorStats) -> f64 {
    if p.var_z == 0.0 {
        f64::INFINITY
    } else {
        1.0 + p.var_w / p.var_z
    }
}

impl LinearDenoiser {
    pub const IDENTITY: LinearDenoiser = LinearDenoiser { theta: 1.0, rho: 0.0 };

    /// Applies `theta r + rho` to unmasked entries; masked entries are copied.
    pub fn apply(&self, r: &WeightVector) -> WeightVector {
        let values = r
            .values()
            .iter()
            .enumerate()
            .map(|(i, &x)| if r.is_masked(i) { x } else { self.apply_scalar(x) })
            .collect();
        r.with_values(values)
    }

    #[inline]
    pub fn apply_scalar(&self, x: f64) -> f64 {
        // rho == 0 skips the addition so that -0.0 survives the identity map
        if self.rho == 0.0 {
            self.theta * x
        } else {
            self.theta * x + self.rho
        }
    }
}

/// Maximum-likelihood estimate: the observation itself.
pub fn ml_estimate(r: &WeightVector) -> WeightVector {
    r.clone()
}

/// MMSE (equivalently MAP) estimate under the Gaussian prior.
pub fn mmse_estimate(r: &WeightVector, p: &PriorStats) -> Result<WeightVector> {
    let total = p.var_w + p.var_z;
    if !(total > 0.0) {
        return Err(Error::invalid("prior", "var_w + var_z must be > 0"));
    }
    let denoiser = LinearDenoiser {
        theta: p.var_w / total,
        rho: p.var_z * p.mu_w / total,
    };
    Ok(denoiser.apply(r))
}

fn factors_from_prime(lambda_prime: f64, beta: f64, p: &PriorStats) -> Result<LinearDenoiser> {
    // var_w + (1 - 2 var_w lambda) var_z, written in lambda' so that lambda' = 1
    // gives exactly var_w
    let denom = p.var_w + (1.0 - lambda_prime) * p.var_z;
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::invalid("prior", "denoiser denominator must be > 0"));
    }
    Ok(LinearDenoiser {
        theta: p.var_w / denom,
        rho: (p.var_z * p.mu_w + p.var_w * p.var_z * beta) / denom,
    })
}

fn infeasible(lambda: f64, p: &PriorStats) -> Error {
    Error::Infeasible {
        lambda,
        bound: lambda_bound(p),
    }
}

/// Multiplicative and additive factors for raw temperatures.
pub fn denoise_factors(t: TemperatureParams, p: &PriorStats) -> Result<LinearDenoiser> {
    if !(t.lambda >= 0.0) || !(t.lambda < lambda_bound(p)) || !t.beta.is_finite() {
        return Err(infeasible(t.lambda, p));
    }
    factors_from_prime(2.0 * p.var_w * t.lambda, t.beta, p)
}

/// Factors for normalized temperatures. Errors when `lambda'` is outside
/// `[0, 1 + var_w/var_z)` or `var_w == 0`.
pub fn normalized_factors(t: NormalizedTemperature, p: &PriorStats) -> Result<LinearDenoiser> {
    check_var_w(p.var_w)?;
    if !t.is_feasible(p) || !t.beta.is_finite() {
        return Err(infeasible(t.lambda_prime / (2.0 * p.var_w), p));
    }
    factors_from_prime(t.lambda_prime, t.beta, p)
}

/// Compensated denoiser `theta(lambda) r + rho(lambda, beta)`.
pub fn mmse_pb_denoise(r: &WeightVector, t: TemperatureParams, p: &PriorStats) -> Result<WeightVector> {
    Ok(denoise_factors(t, p)?.apply(r))
}

/// Same as [`mmse_pb_denoise`] with normalized temperatures.
pub fn mmse_pb_denoise_normalized(
    r: &WeightVector,
    t: NormalizedTemperature,
    p: &PriorStats,
) -> Result<WeightVector> {
    Ok(normalized_factors(t, p)?.apply(r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn prior(mu: f64, vw: f64, vz: f64) -> PriorStats {
        PriorStats::new(mu, vw, vz).unwrap()
    }

    fn bits(v: &WeightVector) -> Vec<u64> {
        v.values().iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn ml_is_identity() {
        let r = WeightVector::new(vec![0.5, -0.2]).unwrap();
        assert_eq!(bits(&ml_estimate(&r)), bits(&r));
        let zero = WeightVector::new(vec![0.0; 3]).unwrap();
        assert_eq!(ml_estimate(&zero).values(), &[0.0; 3]);
    }

    #[test]
    fn mmse_examples() {
        let r = WeightVector::new(vec![2.0, -4.0]).unwrap();
        assert_eq!(mmse_estimate(&r, &prior(0.3, 1.0, 0.0)).unwrap().values(), r.values());
        assert_eq!(mmse_estimate(&r, &prior(0.7, 0.0, 1.0)).unwrap().values(), &[0.7, 0.7]);
        assert_eq!(mmse_estimate(&r, &prior(0.0, 2.0, 2.0)).unwrap().values(), &[1.0, -2.0]);
        assert!(mmse_estimate(&r, &prior(0.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn factor_special_points() {
        let p = prior(0.0, 1.7, 0.6);
        let ml = denoise_factors(TemperatureParams::new(1.0 / (2.0 * 1.7), 0.0), &p).unwrap();
        assert_relative_eq!(ml.theta, 1.0, max_relative = 1e-15);
        assert_eq!(ml.rho, 0.0);
        assert_eq!(normalized_factors(NormalizedTemperature::ML, &p).unwrap(), LinearDenoiser::IDENTITY);

        let p = prior(0.4, 1.7, 0.6);
        let mmse = denoise_factors(TemperatureParams::new(0.0, 0.0), &p).unwrap();
        assert_relative_eq!(mmse.theta, 1.7 / 2.3, max_relative = 1e-15);
        assert_relative_eq!(mmse.rho, 0.4 * 0.6 / 2.3, max_relative = 1e-15);
    }

    #[test]
    fn factor_at_tanh_optimum() {
        // lambda* = 1/2 + 1 - sqrt(1 + 1) for var_w = 1, var_z = 0.5
        let p = prior(0.0, 1.0, 0.5);
        let lambda = 1.5 - 2f64.sqrt();
        assert_relative_eq!(lambda, 0.08579, epsilon = 1e-5);
        let f = denoise_factors(TemperatureParams::new(lambda, 0.0), &p).unwrap();
        assert_relative_eq!(f.theta, 0.5f64.sqrt(), max_relative = 1e-12);
        let rounded = denoise_factors(TemperatureParams::new(0.08579, 0.0), &p).unwrap();
        assert_relative_eq!(rounded.theta, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-5);
    }

    #[test]
    fn factor_constraint_violations() {
        let p = prior(0.0, 1.0, 0.5);
        let bound = lambda_bound(&p);
        assert_eq!(bound, 1.5);
        assert!(matches!(
            denoise_factors(TemperatureParams::new(bound, 0.0), &p),
            Err(Error::Infeasible { .. })
        ));
        assert!(denoise_factors(TemperatureParams::new(-1e-9, 0.0), &p).is_err());
        assert!(denoise_factors(TemperatureParams::new(bound * 0.999, 0.0), &p).is_ok());
        assert!(normalized_factors(NormalizedTemperature::new(3.0, 0.0), &p).is_err());
        assert!(normalized_factors(NormalizedTemperature::new(2.99, 0.0), &p).is_ok());
    }

    #[test]
    fn pb_denoise_examples() {
        let r = WeightVector::new(vec![1.0, 2.0]).unwrap();
        let f = LinearDenoiser { theta: 0.5, rho: 0.1 };
        assert_eq!(f.apply(&r).values(), &[0.6, 1.1]);

        let p = prior(0.0, 0.9, 0.4);
        let r = WeightVector::new(vec![0.3, -0.0, 1.2, -2.2]).unwrap();
        let out = mmse_pb_denoise_normalized(&r, NormalizedTemperature::ML, &p).unwrap();
        assert_eq!(bits(&out), bits(&r));

        let p = prior(0.2, 0.9, 0.4);
        let a = mmse_pb_denoise(&r, TemperatureParams::new(0.0, 0.0), &p).unwrap();
        let b = mmse_estimate(&r, &p).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert_relative_eq!(*x, *y, max_relative = 1e-12);
        }
    }

    #[test]
    fn normalize_examples() {
        let t = TemperatureParams::new(1.0 / (2.0 * 1.3), 0.0);
        assert_relative_eq!(t.normalize(1.3).unwrap().lambda_prime, 1.0, max_relative = 1e-15);
        assert_eq!(TemperatureParams::new(0.0, 0.0).normalize(1.3).unwrap().lambda_prime, 0.0);
        let back = NormalizedTemperature::new(1.01, 0.0).denormalize(2.0).unwrap();
        assert_relative_eq!(back.lambda, 0.2525, max_relative = 1e-15);
        assert!(NormalizedTemperature::new(1.0, 0.0).denormalize(0.0).is_err());
        assert!(TemperatureParams::new(1.0, 0.0).normalize(-1.0).is_err());
    }

    #[test]
    fn theta_strictly_increasing() {
        let p = prior(0.0, 0.7, 1.9);
        let bound = lambda_bound(&p);
        let thetas: Vec<f64> = (0..100)
            .map(|k| {
                let lambda = bound * k as f64 / 100.0;
                denoise_factors(TemperatureParams::new(lambda, 0.0), &p).unwrap().theta
            })
            .collect();
        assert!(thetas.windows(2).all(|w| w[1] > w[0]));
        assert!(thetas[0] > 0.0);
    }

    #[test]
    fn masked_entries_untouched() {
        let r = WeightVector::with_mask(vec![1.0, 2.0, 3.0], vec![true, false, true]).unwrap();
        let p = prior(0.5, 1.0, 1.0);
        let out = mmse_estimate(&r, &p).unwrap();
        assert_eq!(out.values()[0], 1.0);
        assert_eq!(out.values()[2], 3.0);
        assert_eq!(out.values()[1], 0.5 * 2.0 + 0.25);
    }

    proptest! {
        #[test]
        fn accepted_lambdas_have_positive_posterior_variance(
            vw in 1e-3f64..10.0, vz in 1e-3f64..10.0, frac in -0.5f64..1.5,
        ) {
            let p = prior(0.0, vw, vz);
            let lambda = frac * lambda_bound(&p);
            let posterior_var = vw * vz / (vw + (1.0 - 2.0 * vw * lambda) * vz);
            match denoise_factors(TemperatureParams::new(lambda, 0.0), &p) {
                Ok(f) => {
                    prop_assert!((0.0..1.0).contains(&frac));
                    prop_assert!(posterior_var > 0.0);
                    prop_assert!(f.theta > 0.0);
                }
                Err(_) => prop_assert!(!(0.0..1.0).contains(&frac) || posterior_var <= 0.0),
            }
        }

        #[test]
        fn beta_does_not_move_theta(
            vw in 1e-3f64..10.0, vz in 1e-3f64..10.0, frac in 0.0f64..0.99,
            b1 in -50.0f64..50.0, b2 in -50.0f64..50.0, mu in -1.0f64..1.0,
        ) {
            let p = prior(mu, vw, vz);
            let lambda = frac * lambda_bound(&p);
            let f1 = denoise_factors(TemperatureParams::new(lambda, b1), &p).unwrap();
            let f2 = denoise_factors(TemperatureParams::new(lambda, b2), &p).unwrap();
            prop_assert_eq!(f1.theta.to_bits(), f2.theta.to_bits());
        }

        #[test]
        fn mask_opacity(
            vals in prop::collection::vec(-5.0f64..5.0, 1..32),
            seed_mask in prop::collection::vec(any::<bool>(), 32),
            lp in 0.0f64..1.5, beta in -2.0f64..2.0,
        ) {
            let mask = seed_mask[..vals.len()].to_vec();
            let r = WeightVector::with_mask(vals.clone(), mask.clone()).unwrap();
            let p = prior(0.1, 1.0, 1.0);
            let out = mmse_pb_denoise_normalized(&r, NormalizedTemperature::new(lp, beta), &p).unwrap();
            for i in 0..vals.len() {
                if mask[i] {
                    prop_assert_eq!(out.values()[i].to_bits(), vals[i].to_bits());
                }
            }
        }
    }
}
