//! Three-layer tanh network `y(x, w) = sum_i v_i tanh(u_i x)` with
//! `w = [u; v]`, and its denoised counterpart
//! `sum_i (theta (v_i + dv_i) + rho) tanh(theta (u_i + du_i) x + rho x)`.
//!
//! Forward passes and Monte Carlo oracles use the exact `tanh`. The
//! polynomial error surface [`tanh_error_closed`] is a small-`c` expansion
//! truncated below order `c^4`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mc::{self, McEstimate};
use crate::stats::SeedSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TanhConfig {
    pub n_hidden: usize,
    /// Input half-width: `x ~ U(-c, c)`.
    pub c: f64,
    pub var_w: f64,
    pub var_z: f64,
}

/// Hidden width for the `c = 0.4, var_w = 1, var_z = 0.5` illustration.
///
/// Not given with the original setup; recovered from the predicted ML error
/// `(2N/3) c^2 var_w var_z = 0.53`, i.e. `N = 0.53 * 3 / (2 * 0.16 * 0.5) = 9.94`.
pub const ILLUSTRATION_HIDDEN: usize = 10;

impl TanhConfig {
    pub const ILLUSTRATION: TanhConfig = TanhConfig {
        n_hidden: ILLUSTRATION_HIDDEN,
        c: 0.4,
        var_w: 1.0,
        var_z: 0.5,
    };

    pub fn new(n_hidden: usize, c: f64, var_w: f64, var_z: f64) -> Result<Self> {
        let cfg = Self {
            n_hidden,
            c,
            var_w,
            var_z,
        };
        cfg.validate(false)?;
        Ok(cfg)
    }

    fn validate(&self, allow_noiseless: bool) -> Result<()> {
        if self.n_hidden == 0 {
            return Err(Error::invalid("n_hidden", "must be >= 1"));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::invalid("c", format!("must be > 0, got {}", self.c)));
        }
        if !(self.var_w > 0.0 && self.var_w.is_finite()) {
            return Err(Error::invalid("var_w", format!("must be > 0, got {}", self.var_w)));
        }
        let vz_ok = if allow_noiseless { self.var_z >= 0.0 } else { self.var_z > 0.0 };
        if !vz_ok || !self.var_z.is_finite() {
            return Err(Error::invalid("var_z", format!("out of range: {}", self.var_z)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TanhWeights {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl TanhWeights {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.is_empty() {
            return Err(Error::Empty("tanh weights"));
        }
        if u.len() != v.len() {
            return Err(Error::LengthMismatch {
                what: "output weights",
                expected: u.len(),
                found: v.len(),
            });
        }
        Ok(Self { u, v })
    }

    pub fn n_hidden(&self) -> usize {
        self.u.len()
    }

    /// Flattened `[u; v]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.u.iter().chain(&self.v).copied().collect()
    }
}

pub fn tanh_forward(x: f64, w: &TanhWeights) -> f64 {
    w.u.iter().zip(&w.v).map(|(u, v)| v * (u * x).tanh()).sum()
}

/// Denoised output with noise `z = [du; dv]` of length `2N`.
pub fn tanh_denoised_forward(x: f64, w: &TanhWeights, z: &[f64], theta: f64, rho: f64) -> Result<f64> {
    let n = w.n_hidden();
    if z.len() != 2 * n {
        return Err(Error::LengthMismatch {
            what: "tanh noise vector",
            expected: 2 * n,
            found: z.len(),
        });
    }
    let (du, dv) = z.split_at(n);
    Ok((0..n)
        .map(|i| (theta * w.v[i] + theta * dv[i] + rho) * (theta * w.u[i] * x + theta * du[i] * x + rho * x).tanh())
        .sum())
}

/// Second-order Taylor approximation of `E_z[y~]`:
/// `y~_0 + var_z sum_i (theta v_i + rho) theta^2 x^2 (tanh^3 a_i - tanh a_i)`,
/// `a_i = theta u_i x + rho x`.
pub fn tanh_taylor_mean_output(x: f64, w: &TanhWeights, theta: f64, rho: f64, var_z: f64) -> f64 {
    let mut base = 0.0;
    let mut curvature = 0.0;
    for (u, v) in w.u.iter().zip(&w.v) {
        let g = (theta * u * x + rho * x).tanh();
        let amp = theta * v + rho;
        base += amp * g;
        curvature += amp * theta * theta * x * x * (g * g * g - g);
    }
    base + var_z * curvature
}

/// Polynomial approximation of the expected squared output error, with all
/// terms of order `c^4` and higher dropped.
pub fn tanh_error_closed(theta: f64, rho: f64, cfg: &TanhConfig) -> f64 {
    let n = cfg.n_hidden as f64;
    let pairs = n * (n - 1.0);
    let c2 = cfg.c * cfg.c;
    let (vw, vz) = (cfg.var_w, cfg.var_z);
    let (t2, r2) = (theta * theta, rho * rho);
    let (t4, r4) = (t2 * t2, r2 * r2);
    n / 3.0 * c2 * vw * vw * t4 - 2.0 * n / 3.0 * c2 * vw * vw * t2
        + 2.0 * n / 3.0 * c2 * (vw + vz) * t2 * r2
        + 2.0 * pairs / 3.0 * vw * t2 * r4 * r2
        + 2.0 * n / 3.0 * c2 * vw * vz * t4
        + pairs * vw * vw * t4 * r4
        + n * n / 3.0 * c2 * r4
        + pairs / 9.0 * r4 * r4
        + n / 3.0 * c2 * vw * vw
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TanhOptimum {
    pub lambda_star: f64,
    pub beta_star: f64,
    pub theta_star: f64,
}

/// Minimiser of [`tanh_error_closed`] over feasible temperatures.
pub fn tanh_optimal_params(cfg: &TanhConfig) -> TanhOptimum {
    let (vw, vz) = (cfg.var_w, cfg.var_z);
    if vz == 0.0 {
        return TanhOptimum {
            lambda_star: 0.5 / vw,
            beta_star: 0.0,
            theta_star: 1.0,
        };
    }
    // 1/(2vw) + a - sqrt(a^2 + b) with a = 1/(2vz), b = 1/(2 vw vz)
    let a = 0.5 / vz;
    let b = 0.5 / (vw * vz);
    TanhOptimum {
        lambda_star: 0.5 / vw - b / (a + (a * a + b).sqrt()),
        beta_star: 0.0,
        theta_star: (vw / (vw + 2.0 * vz)).sqrt(),
    }
}

/// Predicted relative error reduction `2 var_z / (var_w + 2 var_z)`.
pub fn tanh_gain(cfg: &TanhConfig) -> f64 {
    2.0 * cfg.var_z / (cfg.var_w + 2.0 * cfg.var_z)
}

/// Monte Carlo estimate of `E_{x,w,z} (y~ - y)^2` with the exact `tanh`.
/// Accepts `var_z = 0`.
pub fn tanh_mc_error(theta: f64, rho: f64, cfg: &TanhConfig, trials: u64, seed: SeedSpec) -> Result<McEstimate> {
    cfg.validate(true)?;
    let (sw, sz, c, n) = (cfg.var_w.sqrt(), cfg.var_z.sqrt(), cfg.c, cfg.n_hidden);
    mc::estimate(trials, seed, |rng| {
        let x: f64 = rng.random_range(-c..c);
        let mut err = 0.0;
        for _ in 0..n {
            let u = sw * Distribution::<f64>::sample(&StandardNormal, rng);
            let v = sw * Distribution::<f64>::sample(&StandardNormal, rng);
            let du = sz * Distribution::<f64>::sample(&StandardNormal, rng);
            let dv = sz * Distribution::<f64>::sample(&StandardNormal, rng);
            let noisy = (theta * v + theta * dv + rho) * (theta * u * x + theta * du * x + rho * x).tanh();
            err += noisy - v * (u * x).tanh();
        }
        err * err
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CSweepRow {
    pub c: f64,
    pub closed_ml: f64,
    pub mc_ml: McEstimate,
    pub closed_pb: f64,
    pub mc_pb: McEstimate,
}

/// Evaluates ML `(1, 0)` and the optimal denoiser `(theta*, 0)` for each
/// input half-width. Row `i` uses `seed.child(i)` for both estimates.
pub fn tanh_c_sweep(template: &TanhConfig, c_values: &[f64], trials: u64, seed: SeedSpec) -> Result<Vec<CSweepRow>> {
    let theta_star = tanh_optimal_params(template).theta_star;
    c_values
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let cfg = TanhConfig { c, ..*template };
            cfg.validate(true)?;
            let row_seed = seed.child(i as u64);
            Ok(CSweepRow {
                c,
                closed_ml: tanh_error_closed(1.0, 0.0, &cfg),
                mc_ml: tanh_mc_error(1.0, 0.0, &cfg, trials, row_seed)?,
                closed_pb: tanh_error_closed(theta_star, 0.0, &cfg),
                mc_pb: tanh_mc_error(theta_star, 0.0, &cfg, trials, row_seed)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{denoise_factors, TemperatureParams};
    use crate::stats::{gaussian_vec, PriorStats};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const CFG: TanhConfig = TanhConfig::ILLUSTRATION;

    fn weights(u: &[f64], v: &[f64]) -> TanhWeights {
        TanhWeights::new(u.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn forward_examples() {
        let w = weights(&[0.3, -1.2], &[0.5, 2.0]);
        assert_eq!(tanh_forward(0.0, &w), 0.0);
        assert_eq!(tanh_forward(0.7, &weights(&[0.3, -1.2], &[0.0, 0.0])), 0.0);
        assert_relative_eq!(tanh_forward(1.0, &weights(&[1.0], &[2.0])), 1.52319, epsilon = 1e-5);
    }

    #[test]
    fn denoised_forward_examples() {
        let w = weights(&[0.3, -1.2], &[0.5, 2.0]);
        let zero = [0.0; 4];
        assert_eq!(tanh_denoised_forward(0.4, &w, &zero, 1.0, 0.0).unwrap(), tanh_forward(0.4, &w));
        assert_eq!(tanh_denoised_forward(0.4, &w, &[0.1, 0.2, -0.3, 0.4], 0.0, 0.0).unwrap(), 0.0);
        let w1 = weights(&[1.0], &[1.0]);
        let y = tanh_denoised_forward(0.5, &w1, &[0.1, -0.1], 1.0, 0.0).unwrap();
        assert_relative_eq!(y, 0.9 * 0.55f64.tanh(), max_relative = 1e-15);
        assert!(tanh_denoised_forward(0.5, &w1, &[0.1], 1.0, 0.0).is_err());
    }

    #[test]
    fn taylor_collapses() {
        let w = weights(&[0.3, -1.2, 0.8], &[0.5, 2.0, -1.0]);
        let y0 = tanh_denoised_forward(0.45, &w, &[0.0; 6], 0.9, 0.1).unwrap();
        assert_relative_eq!(tanh_taylor_mean_output(0.45, &w, 0.9, 0.1, 0.0), y0, max_relative = 1e-14);
        assert_eq!(tanh_taylor_mean_output(0.0, &w, 0.9, 0.1, 0.3), 0.0);
    }

    #[test]
    fn taylor_close_to_empirical_mean() {
        let w = weights(&[0.8, -1.3], &[1.1, 0.6]);
        let (x, vz) = (0.3f64, 0.01f64);
        let est = mc::estimate(1_000_000, SeedSpec::from_master(77), |rng| {
            let z: Vec<f64> = (0..4).map(|_| vz.sqrt() * Distribution::<f64>::sample(&StandardNormal, rng)).collect();
            tanh_denoised_forward(x, &w, &z, 1.0, 0.0).unwrap()
        })
        .unwrap();
        let taylor = tanh_taylor_mean_output(x, &w, 1.0, 0.0, vz);
        assert!((taylor - est.mean).abs() < 4.0 * est.std_err + 10.0 * vz * vz, "{taylor} vs {}", est.mean);
    }

    #[test]
    fn closed_form_examples() {
        assert_relative_eq!(tanh_error_closed(1.0, 0.0, &CFG), 0.533, epsilon = 1e-3);
        assert_relative_eq!(tanh_error_closed(0.5f64.sqrt(), 0.0, &CFG), 0.267, epsilon = 1e-3);
        let n = CFG.n_hidden as f64;
        assert_relative_eq!(tanh_error_closed(0.0, 0.0, &CFG), n / 3.0 * 0.16, max_relative = 1e-14);
    }

    #[test]
    fn hidden_width_recovered_from_predicted_error() {
        let per_neuron = 2.0 / 3.0 * CFG.c * CFG.c * CFG.var_w * CFG.var_z;
        let n = (0.53 / per_neuron).round() as usize;
        assert_eq!(n, ILLUSTRATION_HIDDEN);
    }

    #[test]
    fn optimum_examples() {
        let opt = tanh_optimal_params(&CFG);
        assert_relative_eq!(opt.lambda_star, 0.08579, epsilon = 1e-5);
        assert_relative_eq!(opt.theta_star, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-5);
        assert_eq!(opt.beta_star, 0.0);
        let p = PriorStats::new(0.0, CFG.var_w, CFG.var_z).unwrap();
        let f = denoise_factors(TemperatureParams::new(opt.lambda_star, 0.0), &p).unwrap();
        assert_relative_eq!(f.theta, opt.theta_star, max_relative = 1e-12);
        // grid minimisation of the closed form over theta at rho = 0
        let best = (0..=20_000)
            .map(|k| k as f64 * 1e-4)
            .min_by(|a, b| tanh_error_closed(*a, 0.0, &CFG).total_cmp(&tanh_error_closed(*b, 0.0, &CFG)))
            .unwrap();
        assert!((best - opt.theta_star).abs() <= 1e-4);

        let quiet = TanhConfig { var_z: 1e-9, ..CFG };
        assert!((tanh_optimal_params(&quiet).theta_star - 1.0).abs() < 1e-8);
        let silent = TanhConfig { var_z: 0.0, ..CFG };
        assert_eq!(tanh_optimal_params(&silent).theta_star, 1.0);
    }

    #[test]
    fn theta_star_feasible() {
        for (vw, vz) in [(1.0, 0.5), (0.2, 3.0), (4.0, 0.01)] {
            let cfg = TanhConfig { var_w: vw, var_z: vz, ..CFG };
            let t = tanh_optimal_params(&cfg).theta_star;
            let floor = vw / (vw + vz);
            assert!(t >= floor);
            let gap = vw * vz * vz / ((vw + 2.0 * vz) * (vw + vz).powi(2));
            assert_relative_eq!(t * t - floor * floor, gap, max_relative = 1e-12);
        }
    }

    #[test]
    fn gain_examples() {
        assert_eq!(tanh_gain(&CFG), 0.5);
        assert_eq!(tanh_gain(&TanhConfig { var_z: 0.0, ..CFG }), 0.0);
        assert!(1.0 - tanh_gain(&TanhConfig { var_z: 1e12, ..CFG }) < 1e-11);
        let t = tanh_optimal_params(&CFG).theta_star;
        let ratio = tanh_error_closed(t, 0.0, &CFG) / tanh_error_closed(1.0, 0.0, &CFG);
        assert_relative_eq!(1.0 - ratio, tanh_gain(&CFG), max_relative = 1e-12);
    }

    #[test]
    fn mc_noiseless_ml_is_zero() {
        let cfg = TanhConfig { var_z: 0.0, ..CFG };
        let est = tanh_mc_error(1.0, 0.0, &cfg, 5_000, SeedSpec::from_master(1)).unwrap();
        assert_eq!(est.mean, 0.0);
        assert!(tanh_mc_error(1.0, 0.0, &CFG, 0, SeedSpec::from_master(1)).is_err());
    }

    #[test]
    fn sweep_near_zero_c() {
        let rows = tanh_c_sweep(&CFG, &[1e-3], 20_000, SeedSpec::from_master(4)).unwrap();
        let r = rows[0];
        for v in [r.closed_ml, r.mc_ml.mean, r.closed_pb, r.mc_pb.mean] {
            assert!(v.abs() < 1e-4, "{v}");
        }
        assert!(tanh_c_sweep(&CFG, &[0.0], 10, SeedSpec::from_master(4)).is_err());
    }

    #[test]
    fn closed_ml_increasing_in_c() {
        let vals: Vec<f64> = (1..=10)
            .map(|k| tanh_error_closed(1.0, 0.0, &TanhConfig { c: 0.05 * k as f64, ..CFG }))
            .collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn tanh_derivative_identities() {
        let alphas = gaussian_vec(50, 1.5, SeedSpec::from_master(8));
        let h = 1e-5;
        for a in alphas {
            let d1 = ((a + h).tanh() - (a - h).tanh()) / (2.0 * h);
            let g1 = 1.0 - a.tanh().powi(2);
            assert!((d1 - g1).abs() <= 1e-6 * g1.abs().max(1e-3));
            let gp = |t: f64| 1.0 - t.tanh().powi(2);
            let d2 = (gp(a + h) - gp(a - h)) / (2.0 * h);
            let g2 = 2.0 * (a.tanh().powi(3) - a.tanh());
            assert!((d2 - g2).abs() <= 1e-6 * g2.abs().max(1e-3));
        }
    }

    proptest! {
        #[test]
        fn closed_form_even_in_rho(theta in -2.0f64..2.0, rho in -1.0f64..1.0) {
            prop_assert_eq!(
                tanh_error_closed(theta, rho, &CFG).to_bits(),
                tanh_error_closed(theta, -rho, &CFG).to_bits()
            );
        }
    }
}
