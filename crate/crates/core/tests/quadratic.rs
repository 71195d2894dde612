//! Integration checks for the quadratic case study against an oracle that
//! never touches the closed-form constants: the expected error is computed
//! from raw moments, with the Gaussian part integrated exactly by a
//! five-point Gauss-Hermite rule (exact for polynomials of degree <= 9).

use noisynn_core::quadratic::{
    quad_critical_points, quad_error_closed, quad_error_ml, quad_gain, quad_mc_error, quad_optimal_params,
    quad_theta_star, PointKind, QuadConfig,
};
use noisynn_core::SeedSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Nodes and weights of the probabilists' Gauss-Hermite rule, n = 5.
fn hermite5() -> [(f64, f64); 5] {
    let s10 = 10f64.sqrt();
    let (inner, outer) = ((5.0 - s10).sqrt(), (5.0 + s10).sqrt());
    let (wi, wo) = ((7.0 + 2.0 * s10) / 60.0, (7.0 - 2.0 * s10) / 60.0);
    [(-outer, wo), (-inner, wi), (0.0, 8.0 / 15.0), (inner, wi), (outer, wo)]
}

/// `E[(sum_i a_i q_i)^2]` with i.i.d. `a_i = (x_i - c)^2`, `x_i ~ U(-1, 1)`,
/// and `q_i = (theta (w_i + z_i) + rho)^2 - w_i^2`.
fn oracle_error(theta: f64, rho: f64, cfg: &QuadConfig) -> f64 {
    let (sw, sz) = (cfg.var_w.sqrt(), cfg.var_z.sqrt());
    let (mut mq, mut mq2) = (0.0, 0.0);
    for (g1, p1) in hermite5() {
        for (g2, p2) in hermite5() {
            let (w, z) = (sw * g1, sz * g2);
            let q = (theta * (w + z) + rho).powi(2) - w * w;
            mq += p1 * p2 * q;
            mq2 += p1 * p2 * q * q;
        }
    }
    let c2 = cfg.c * cfg.c;
    // E[(x - c)^2] and E[(x - c)^4] for x ~ U(-1, 1)
    let ma = c2 + 1.0 / 3.0;
    let ma2 = c2 * c2 + 2.0 * c2 + 0.2;
    let d = cfg.d as f64;
    d * ma2 * mq2 + d * (d - 1.0) * (ma * mq).powi(2)
}

/// Dense-grid minimiser of the oracle over the feasible box. Along `rho = 0`
/// the oracle is a quadratic in `t = theta^2`; the grid optimum is refined by
/// recovering that quadratic from three evaluations.
fn oracle_minimiser(cfg: &QuadConfig) -> (f64, f64) {
    let floor = cfg.var_w / (cfg.var_w + cfg.var_z);
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=2000 {
        let theta = floor + (2.0 - floor) * i as f64 / 2000.0;
        for j in 0..=400 {
            let rho = -2.0 + 4.0 * j as f64 / 400.0;
            let v = oracle_error(theta, rho, cfg);
            if v < best.0 {
                best = (v, theta, rho);
            }
        }
    }
    let step = (2.0 - floor) / 2000.0;
    assert_eq!(best.2, 0.0, "grid optimum off the rho = 0 axis");
    // q(t) = a t^2 + b t + k through t = 0, 1, 2
    let (q0, q1, q2) = (oracle_error(0.0, 0.0, cfg), oracle_error(1.0, 0.0, cfg), oracle_error(2f64.sqrt(), 0.0, cfg));
    let a = (q2 - 2.0 * q1 + q0) / 2.0;
    let b = q1 - q0 - a;
    let theta = (-b / (2.0 * a)).sqrt();
    assert!((theta - best.1).abs() <= step, "refined {theta} vs grid {}", best.1);
    (theta, 0.0)
}

// Frozen from `oracle_minimiser(&QuadConfig::ILLUSTRATION)` and
// 1 - D(theta3, 0) / D(1, 0) evaluated with `oracle_error`.
const THETA3_ILLUSTRATION: f64 = 0.780_677_790_6;
const GAIN_ILLUSTRATION: f64 = 0.585_784_353_7;

#[test]
fn oracle_minimiser_matches_frozen_values() {
    let cfg = QuadConfig::ILLUSTRATION;
    let (theta, rho) = oracle_minimiser(&cfg);
    assert_eq!(rho, 0.0);
    assert!((theta - THETA3_ILLUSTRATION).abs() < 1e-9, "theta {theta}");
    let gain = 1.0 - oracle_error(theta, 0.0, &cfg) / oracle_error(1.0, 0.0, &cfg);
    assert!((gain - GAIN_ILLUSTRATION).abs() < 1e-9, "gain {gain}");
}

#[test]
fn closed_form_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let cfg = QuadConfig::new(
            rng.random_range(1..12),
            rng.random_range(0.0..1.5),
            rng.random_range(0.1..4.0),
            rng.random_range(0.05..3.0),
        )
        .unwrap();
        let (theta, rho) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let (closed, oracle) = (quad_error_closed(theta, rho, &cfg), oracle_error(theta, rho, &cfg));
        assert!(
            (closed - oracle).abs() <= 1e-10 * oracle.abs().max(1.0),
            "{cfg:?} ({theta}, {rho}): closed {closed} oracle {oracle}"
        );
    }
}

#[test]
fn library_optimum_matches_oracle() {
    let cfg = QuadConfig::ILLUSTRATION;
    assert!((quad_theta_star(&cfg) - THETA3_ILLUSTRATION).abs() < 1e-9);
    assert!((quad_gain(&cfg) - GAIN_ILLUSTRATION).abs() < 1e-9);
    let gain = 1.0 - quad_error_closed(quad_theta_star(&cfg), 0.0, &cfg) / quad_error_ml(&cfg);
    assert!((gain - quad_gain(&cfg)).abs() <= 1e-9 * gain);

    // lambda* maps back onto theta3
    let opt = quad_optimal_params(&cfg);
    let theta = cfg.var_w / (cfg.var_w + (1.0 - 2.0 * cfg.var_w * opt.lambda_star) * cfg.var_z);
    assert!((theta - THETA3_ILLUSTRATION).abs() < 1e-9, "theta(lambda*) {theta}");
    assert_eq!(opt.beta_star, 0.0);
}

#[test]
fn optimum_matches_oracle_across_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..8 {
        let cfg = QuadConfig::new(
            rng.random_range(2..9),
            rng.random_range(0.0..0.5),
            rng.random_range(0.5..3.0),
            rng.random_range(0.2..2.0),
        )
        .unwrap();
        let (theta, rho) = oracle_minimiser(&cfg);
        assert!(rho.abs() < 1e-12, "{cfg:?}: rho {rho}");
        assert!((theta - quad_theta_star(&cfg)).abs() < 1e-6, "{cfg:?}: {theta} vs {}", quad_theta_star(&cfg));
    }
}

#[test]
fn no_feasible_grid_point_beats_p3() {
    let cfg = QuadConfig::ILLUSTRATION;
    let floor = cfg.var_w / (cfg.var_w + cfg.var_z);
    let p3 = quad_error_closed(quad_theta_star(&cfg), 0.0, &cfg);
    let n_theta = ((3.0 - floor) / 0.01) as usize;
    for i in 0..=n_theta {
        let theta = floor + i as f64 * 0.01;
        for j in 0..=600 {
            let rho = -3.0 + j as f64 * 0.01;
            let v = quad_error_closed(theta, rho, &cfg);
            assert!(v >= p3 - 1e-9, "({theta}, {rho}): {v} < {p3}");
        }
    }
}

#[test]
fn critical_points_are_stationary() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    for k in 0..20 {
        let cfg = if k == 0 {
            QuadConfig::ILLUSTRATION
        } else {
            QuadConfig::new(
                rng.random_range(1..10),
                rng.random_range(0.0..1.0),
                rng.random_range(0.2..3.0),
                rng.random_range(0.1..2.0),
            )
            .unwrap()
        };
        for p in quad_critical_points(&cfg) {
            let f = |t: f64, r: f64| oracle_error(t, r, &cfg);
            let gt = (f(p.theta + h, p.rho) - f(p.theta - h, p.rho)) / (2.0 * h);
            let gr = (f(p.theta, p.rho + h) - f(p.theta, p.rho - h)) / (2.0 * h);
            let norm = gt.hypot(gr);
            // central differences carry ~1e-10 relative rounding noise
            assert!(norm < 1e-6 * (1.0 + p.value.abs()), "{cfg:?} {}: |grad| {norm}", p.label);
        }
    }
}

#[test]
fn p4_is_a_saddle_of_the_oracle() {
    let cfg = QuadConfig::ILLUSTRATION;
    let p4 = quad_critical_points(&cfg).into_iter().find(|p| p.label == "P4").unwrap();
    assert_eq!(p4.kind, PointKind::Saddle);
    // a saddle has directions of both descent and ascent
    let f = |t: f64, r: f64| oracle_error(t, r, &cfg);
    let e = 1e-3;
    let dirs = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, -1.0)];
    let changes: Vec<f64> = dirs
        .iter()
        .map(|(a, b)| f(p4.theta + e * a, p4.rho + e * b) - p4.value)
        .collect();
    assert!(changes.iter().any(|&d| d < 0.0), "{changes:?}");
    assert!(changes.iter().any(|&d| d > 0.0), "{changes:?}");
}

#[test]
fn monte_carlo_agrees_with_oracle() {
    let cfg = QuadConfig::ILLUSTRATION;
    let points = [(1.0, 0.0), (THETA3_ILLUSTRATION, 0.0), (0.5, 0.7), (1.3, -0.4)];
    for (i, &(theta, rho)) in points.iter().enumerate() {
        let mc = quad_mc_error(theta, rho, &cfg, 400_000, SeedSpec::new(21, i as u64)).unwrap();
        let target = oracle_error(theta, rho, &cfg);
        assert!(
            (mc.mean - target).abs() <= 3.5 * mc.std_err,
            "({theta}, {rho}): mc {} +- {} vs {target}",
            mc.mean,
            mc.std_err
        );
    }
}

#[test]
fn monte_carlo_without_noise_is_exact_at_ml() {
    let cfg = QuadConfig { var_z: 0.0, ..QuadConfig::ILLUSTRATION };
    let mc = quad_mc_error(1.0, 0.0, &cfg, 10_000, SeedSpec::from_master(4)).unwrap();
    assert_eq!(mc.mean, 0.0);
    assert_eq!(mc.std_err, 0.0);
}
