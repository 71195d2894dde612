//! Quadratic network `y = (x - c e)^T W^2 (x - c e)` with diagonal `W`.
//!
//! With `x_i ~ U(-1, 1)`, `w_i ~ N(0, var_w)` and `z_i ~ N(0, var_z)`, the
//! expected squared output error of the denoised network
//! `(x - c e)^T (theta (W + Z) + rho I)^2 (x - c e)` is the quartic
//!
//! ```text
//! D(theta, rho) = C1' [theta^4 S^2 - 2 theta^2 var_w^2 + 2 theta^2 rho^2 S + var_w^2]
//!               + C2' [rho^4 - 2 theta^2 var_w var_z - 2 var_w rho^2],   S = var_w + var_z
//! ```
//!
//! with `C1' = 3 C1 d + C2 d (d-1)`, `C2' = C1 d + C2 d (d-1)`,
//! `C1 = E[(x-c)^4] = c^4 + 2c^2 + 1/5` and `C2 = (E[(x-c)^2])^2 = (c^2 + 1/3)^2`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mc::{self, McEstimate};
use crate::stats::SeedSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub d: usize,
    pub c: f64,
    pub var_w: f64,
    pub var_z: f64,
}

impl QuadConfig {
    /// The illustration setup: `d = 5`, `c = 0.1`, `var_w = 2.25`, `var_z = 1`.
    pub const ILLUSTRATION: QuadConfig = QuadConfig {
        d: 5,
        c: 0.1,
        var_w: 2.25,
        var_z: 1.0,
    };

    pub fn new(d: usize, c: f64, var_w: f64, var_z: f64) -> Result<Self> {
        let cfg = Self { d, c, var_w, var_z };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::invalid("d", "must be >= 1"));
        }
        if !self.c.is_finite() {
            return Err(Error::invalid("c", "must be finite"));
        }
        if !(self.var_w > 0.0 && self.var_w.is_finite()) {
            return Err(Error::invalid("var_w", format!("must be > 0, got {}", self.var_w)));
        }
        if !(self.var_z > 0.0 && self.var_z.is_finite()) {
            return Err(Error::invalid("var_z", format!("must be > 0, got {}", self.var_z)));
        }
        Ok(())
    }

    pub fn constants(&self) -> QuadConstants {
        QuadConstants::new(self.d, self.c)
    }

    /// Smallest feasible `theta`, reached at `lambda = 0`.
    pub fn theta_floor(&self) -> f64 {
        self.var_w / (self.var_w + self.var_z)
    }
}

/// Input-moment constants of the error surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConstants {
    pub c1: f64,
    pub c2: f64,
    pub c1p: f64,
    pub c2p: f64,
}

impl QuadConstants {
    pub fn new(d: usize, c: f64) -> Self {
        let c2 = (c * c + 1.0 / 3.0).powi(2);
        Self::with_c2(d, c, c2)
    }

    /// Builds the constants from an explicit cross moment `c2`. Useful for
    /// comparing against surfaces derived with a different `E[(x-c)^2]^2`.
    pub fn with_c2(d: usize, c: f64, c2: f64) -> Self {
        let c1 = c.powi(4) + 2.0 * c * c + 0.2;
        let df = d as f64;
        let pairs = df * (df - 1.0);
        Self {
            c1,
            c2,
            c1p: 3.0 * c1 * df + c2 * pairs,
            c2p: c1 * df + c2 * pairs,
        }
    }

    /// `C1'` and `C2'` expanded as polynomials in `c` and `d`.
    pub fn polynomial_form(d: usize, c: f64) -> (f64, f64) {
        let df = d as f64;
        let c2 = c * c;
        let lead = (c2 + 1.0 / 3.0).powi(2) * df * df;
        let c1p = lead + 2.0 * (c2 * c2 + 8.0 / 3.0 * c2 + 11.0 / 45.0) * df;
        let c2p = lead + 4.0 / 3.0 * (c2 + 1.0 / 15.0) * df;
        (c1p, c2p)
    }
}

/// `sum_i w_i^2 (x_i - c)^2`.
pub fn quad_forward(x: &[f64], w: &[f64], c: f64) -> Result<f64> {
    if x.len() != w.len() {
        return Err(Error::LengthMismatch {
            what: "quad_forward input",
            expected: w.len(),
            found: x.len(),
        });
    }
    Ok(x.iter().zip(w).map(|(xi, wi)| wi * wi * (xi - c) * (xi - c)).sum())
}

fn surface(theta: f64, rho: f64, cfg: &QuadConfig, k: &QuadConstants) -> f64 {
    let (vw, vz) = (cfg.var_w, cfg.var_z);
    let s = vw + vz;
    let (t2, r2) = (theta * theta, rho * rho);
    k.c1p * (t2 * t2 * s * s - 2.0 * t2 * vw * vw + 2.0 * t2 * r2 * s + vw * vw)
        + k.c2p * (r2 * r2 - 2.0 * t2 * vw * vz - 2.0 * vw * r2)
}

/// Closed-form expected squared output error at `(theta, rho)`.
pub fn quad_error_closed(theta: f64, rho: f64, cfg: &QuadConfig) -> f64 {
    surface(theta, rho, cfg, &cfg.constants())
}

/// Same surface evaluated with caller-supplied constants.
pub fn quad_error_with_constants(theta: f64, rho: f64, cfg: &QuadConfig, k: &QuadConstants) -> f64 {
    surface(theta, rho, cfg, k)
}

/// Expected error of the ML estimate: `C1' var_z^2 + 4 C1 d var_w var_z`.
pub fn quad_error_ml(cfg: &QuadConfig) -> f64 {
    let k = cfg.constants();
    k.c1p * cfg.var_z * cfg.var_z + 4.0 * k.c1 * cfg.d as f64 * cfg.var_w * cfg.var_z
}

/// Analytic gradient `(dD/dtheta, dD/drho)`.
pub fn quad_gradient(theta: f64, rho: f64, cfg: &QuadConfig) -> [f64; 2] {
    let k = cfg.constants();
    let (vw, vz) = (cfg.var_w, cfg.var_z);
    let s = vw + vz;
    let dt = 4.0 * theta * (k.c1p * (s * s * theta * theta + s * rho * rho - vw * vw) - k.c2p * vw * vz);
    let dr = 4.0 * rho * (k.c1p * s * theta * theta + k.c2p * (rho * rho - vw));
    [dt, dr]
}

/// Symmetric 2x2 Hessian `[[D_tt, D_tr], [D_tr, D_rr]]`.
pub fn quad_hessian(theta: f64, rho: f64, cfg: &QuadConfig) -> [[f64; 2]; 2] {
    let k = cfg.constants();
    let (vw, vz) = (cfg.var_w, cfg.var_z);
    let s = vw + vz;
    let tt = 4.0 * (3.0 * k.c1p * s * s * theta * theta - k.c2p * vw * vz - k.c1p * vw * vw + k.c1p * s * rho * rho);
    let rr = 4.0 * (k.c1p * s * theta * theta - k.c2p * vw + 3.0 * k.c2p * rho * rho);
    let tr = 8.0 * k.c1p * s * theta * rho;
    [[tt, tr], [tr, rr]]
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
pub fn symmetric_eigenvalues(h: &[[f64; 2]; 2]) -> [f64; 2] {
    let mean = 0.5 * (h[0][0] + h[1][1]);
    let half_diff = 0.5 * (h[0][0] - h[1][1]);
    let radius = half_diff.hypot(h[0][1]);
    [mean - radius, mean + radius]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    PositiveDefinite,
    NegativeDefinite,
    Indefinite,
    Degenerate,
}

/// Definiteness with eigenvalue threshold `1e-9 (1 + |trace|)`.
pub fn classify_hessian(h: &[[f64; 2]; 2]) -> Curvature {
    let [lo, hi] = symmetric_eigenvalues(h);
    let tol = 1e-9 * (1.0 + (h[0][0] + h[1][1]).abs());
    if lo > tol {
        Curvature::PositiveDefinite
    } else if hi < -tol {
        Curvature::NegativeDefinite
    } else if lo < -tol && hi > tol {
        Curvature::Indefinite
    } else {
        Curvature::Degenerate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointKind {
    LocalMax,
    LocalMin,
    GlobalMin,
    Saddle,
    Degenerate,
}

impl PointKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PointKind::LocalMax => "local-max",
            PointKind::LocalMin => "local-min",
            PointKind::GlobalMin => "global-min",
            PointKind::Saddle => "saddle",
            PointKind::Degenerate => "degenerate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    pub label: &'static str,
    pub theta: f64,
    pub rho: f64,
    pub value: f64,
    pub kind: PointKind,
    /// `theta >= var_w / (var_w + var_z)`, i.e. reachable with `lambda >= 0`.
    pub feasible: bool,
}

/// `theta` of the feasible global minimum (`rho = 0`).
pub fn quad_theta_star(cfg: &QuadConfig) -> f64 {
    let k = cfg.constants();
    cfg.theta_floor() * (1.0 + k.c2p * cfg.var_z / (k.c1p * cfg.var_w)).sqrt()
}

/// Critical points in the order P1, P2, P3, P4, P3'. Kinds come from the
/// Hessian; minima whose value ties the smallest one become `GlobalMin`.
pub fn quad_critical_points(cfg: &QuadConfig) -> Vec<CriticalPoint> {
    let k = cfg.constants();
    let (vw, vz) = (cfg.var_w, cfg.var_z);
    let s = vw + vz;
    let theta3 = quad_theta_star(cfg);
    let theta4 = (k.c2p / k.c1p).sqrt() * (vw * vz).sqrt() / s;
    let rho4 = vw / s.sqrt();
    let raw = [
        ("P1", 0.0, 0.0),
        ("P2", 0.0, vw.sqrt()),
        ("P3", theta3, 0.0),
        ("P4", theta4, rho4),
        ("P3'", -theta3, 0.0),
    ];
    let floor = cfg.theta_floor();
    let mut points: Vec<CriticalPoint> = raw
        .iter()
        .map(|&(label, theta, rho)| {
            let kind = match classify_hessian(&quad_hessian(theta, rho, cfg)) {
                Curvature::PositiveDefinite => PointKind::LocalMin,
                Curvature::NegativeDefinite => PointKind::LocalMax,
                Curvature::Indefinite => PointKind::Saddle,
                Curvature::Degenerate => PointKind::Degenerate,
            };
            CriticalPoint {
                label,
                theta,
                rho,
                value: quad_error_closed(theta, rho, cfg),
                kind,
                feasible: theta >= floor,
            }
        })
        .collect();
    // the global minimum is taken over the feasible region; the mirror
    // image P3' shares its value
    let best = points
        .iter()
        .filter(|p| p.kind == PointKind::LocalMin && p.feasible)
        .map(|p| p.value)
        .fold(f64::INFINITY, f64::min);
    for p in &mut points {
        if p.kind == PointKind::LocalMin && (p.value - best).abs() <= 1e-12 * best.abs().max(1.0) {
            p.kind = PointKind::GlobalMin;
        }
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptimum {
    pub lambda_star: f64,
    pub beta_star: f64,
}

/// Optimal temperatures: the `lambda` whose `theta(lambda)` is the feasible
/// global minimum, and `beta = 0`.
pub fn quad_optimal_params(cfg: &QuadConfig) -> QuadOptimum {
    let k = cfg.constants();
    let (vw, vz) = (cfg.var_w, cfg.var_z);
    let root = (k.c1p * vw / (k.c1p * vw + k.c2p * vz)).sqrt();
    // 1/(2 vw) + 1/(2 vz) - root (vw + vz) / (2 vw vz), rearranged to avoid
    // cancelling two O(1/vz) terms when vz is small
    let lambda_star = (vw + vz) * k.c2p / (2.0 * vw * (k.c1p * vw + k.c2p * vz) * (1.0 + root));
    QuadOptimum {
        lambda_star,
        beta_star: 0.0,
    }
}

/// Relative error reduction `(D_ML - D_opt) / D_ML` of the optimal denoiser.
pub fn quad_gain(cfg: &QuadConfig) -> f64 {
    let k = cfg.constants();
    let (vw, vz) = (cfg.var_w, cfg.var_z);
    let num = (2.0 * k.c1p * vw - k.c2p * vw + k.c1p * vz).powi(2) * vz;
    let den = k.c1p * (vw + vz).powi(2) * (2.0 * k.c1p * vw - 2.0 * k.c2p * vw + k.c1p * vz);
    num / den
}

/// Monte Carlo estimate of the expected squared output error.
///
/// Unlike the closed forms, `var_z = 0` is accepted here.
pub fn quad_mc_error(theta: f64, rho: f64, cfg: &QuadConfig, trials: u64, seed: SeedSpec) -> Result<McEstimate> {
    QuadConfig {
        var_z: if cfg.var_z == 0.0 { 1.0 } else { cfg.var_z },
        ..*cfg
    }
    .validate()?;
    let (sw, sz, c, d) = (cfg.var_w.sqrt(), cfg.var_z.sqrt(), cfg.c, cfg.d);
    mc::estimate(trials, seed, |rng| {
        let (mut clean, mut denoised) = (0.0, 0.0);
        for _ in 0..d {
            let x: f64 = rng.random_range(-1.0..1.0);
            let gw: f64 = StandardNormal.sample(rng);
            let gz: f64 = StandardNormal.sample(rng);
            let (w, z) = (sw * gw, sz * gz);
            let a = (x - c) * (x - c);
            let wd = theta * (w + z) + rho;
            clean += a * w * w;
            denoised += a * wd * wd;
        }
        (denoised - clean).powi(2)
    })
}
