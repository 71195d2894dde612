//! Analytic case studies: closed-form error surfaces checked against Monte
//! Carlo, with the optimal denoiser and its predicted gain.

use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use noisynn_core::io::{fmt_f64, RunConfig};
use noisynn_core::quadratic::{
    quad_critical_points, quad_error_closed, quad_error_ml, quad_gain, quad_mc_error, quad_optimal_params,
    quad_theta_star, QuadConfig,
};
use noisynn_core::tanh::{
    tanh_c_sweep, tanh_error_closed, tanh_gain, tanh_mc_error, tanh_optimal_params, TanhConfig,
};
use noisynn_core::{AxisSpec, SeedSpec};

use crate::config::{self, join, positive_trials, Overrides};
use crate::output::{summary, Table};
use crate::Common;

/// Monte Carlo trials per surface point unless overridden.
const SURFACE_TRIALS: u64 = 100_000;

#[derive(Args)]
pub struct SurfaceArgs {
    #[arg(long, allow_hyphen_values = true)]
    theta_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    theta_max: Option<f64>,
    #[arg(long)]
    theta_step: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    rho_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    rho_max: Option<f64>,
    #[arg(long)]
    rho_step: Option<f64>,
}

impl SurfaceArgs {
    fn apply(&self, c: &mut RunConfig, prefix: &str) {
        c.flag(&format!("{prefix}.theta_min"), &self.theta_min);
        c.flag(&format!("{prefix}.theta_max"), &self.theta_max);
        c.flag(&format!("{prefix}.theta_step"), &self.theta_step);
        c.flag(&format!("{prefix}.rho_min"), &self.rho_min);
        c.flag(&format!("{prefix}.rho_max"), &self.rho_max);
        c.flag(&format!("{prefix}.rho_step"), &self.rho_step);
    }
}

/// Reads the `(theta, rho)` evaluation axes; defaults cover the optimum,
/// the ML point and both signs of `rho`.
fn read_axes(c: &mut RunConfig, prefix: &str, theta: AxisSpec, rho: AxisSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let key = |k: &str| format!("{prefix}.{k}");
    let theta = AxisSpec::new(
        c.get_or(&key("theta_min"), theta.min)?,
        c.get_or(&key("theta_max"), theta.max)?,
        c.get_or(&key("theta_step"), theta.step)?,
    );
    let rho = AxisSpec::new(
        c.get_or(&key("rho_min"), rho.min)?,
        c.get_or(&key("rho_max"), rho.max)?,
        c.get_or(&key("rho_step"), rho.step)?,
    );
    theta.validate("theta axis")?;
    rho.validate("rho axis")?;
    Ok((theta.values(), rho.values()))
}

const SURFACE_HEADER: [&str; 5] = ["theta", "rho", "d_closed", "d_mc", "std_err"];

#[derive(Args)]
pub struct QuadStudyArgs {
    #[command(flatten)]
    common: Common,
    /// Input dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Input offset.
    #[arg(long, allow_hyphen_values = true)]
    c: Option<f64>,
    #[arg(long)]
    var_w: Option<f64>,
    #[arg(long)]
    var_z: Option<f64>,
    /// Monte Carlo trials per surface point.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    trials: Option<u64>,
    #[command(flatten)]
    surface: SurfaceArgs,
    /// Surface CSV: theta,rho,d_closed,d_mc,std_err.
    #[arg(long)]
    out: PathBuf,
}

pub fn quad_study(a: QuadStudyArgs) -> Result<String> {
    let mut c = config::load(&a.common)?;
    c.flag("quad.d", &a.d);
    c.flag("quad.c", &a.c);
    c.flag("quad.var_w", &a.var_w);
    c.flag("quad.var_z", &a.var_z);
    c.flag("quad.trials", &a.trials);
    a.surface.apply(&mut c, "quad");
    let d = QuadConfig::ILLUSTRATION;
    let cfg = QuadConfig::new(
        c.get_or("quad.d", d.d)?,
        c.get_or("quad.c", d.c)?,
        c.get_or("quad.var_w", d.var_w)?,
        c.get_or("quad.var_z", d.var_z)?,
    )?;
    let trials = positive_trials(c.get_or("quad.trials", SURFACE_TRIALS)?)?;
    let seed = SeedSpec::from_master(c.get_or("seed", 1)?);
    let (thetas, rhos) = read_axes(&mut c, "quad", AxisSpec::new(0.0, 1.6, 0.2), AxisSpec::new(-1.5, 1.5, 0.5))?;
    c.finish()?;

    let mut table = Table::new(&SURFACE_HEADER)?;
    let mut k = 0u64;
    for &theta in &thetas {
        for &rho in &rhos {
            let mc = quad_mc_error(theta, rho, &cfg, trials, seed.child(k))?;
            let closed = quad_error_closed(theta, rho, &cfg);
            table.row(&[fmt_f64(theta), fmt_f64(rho), fmt_f64(closed), fmt_f64(mc.mean), fmt_f64(mc.std_err)])?;
            k += 1;
        }
    }
    table.write(&a.out)?;

    let opt = quad_optimal_params(&cfg);
    let theta_star = quad_theta_star(&cfg);
    let mut fields = vec![
        ("gain", fmt_f64(quad_gain(&cfg))),
        ("lambda_star", fmt_f64(opt.lambda_star)),
        ("lambda_prime_star", fmt_f64(2.0 * cfg.var_w * opt.lambda_star)),
        ("theta_star", fmt_f64(theta_star)),
        ("d_ml", fmt_f64(quad_error_ml(&cfg))),
        ("d_opt", fmt_f64(quad_error_closed(theta_star, 0.0, &cfg))),
    ];
    for p in quad_critical_points(&cfg) {
        let value = format!("{}:{}:{}:{}", fmt_f64(p.theta), fmt_f64(p.rho), fmt_f64(p.value), p.kind.as_str());
        fields.push((p.label, value));
    }
    Ok(summary("quad-study", &fields))
}

#[derive(Args)]
pub struct TanhStudyArgs {
    #[command(flatten)]
    common: Common,
    /// Hidden width.
    #[arg(long)]
    n: Option<usize>,
    /// Input half-width.
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    var_w: Option<f64>,
    #[arg(long)]
    var_z: Option<f64>,
    /// Monte Carlo trials per surface point.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    trials: Option<u64>,
    #[command(flatten)]
    surface: SurfaceArgs,
    /// Surface CSV: theta,rho,d_closed,d_mc,std_err.
    #[arg(long)]
    out: PathBuf,
}

fn read_tanh_config(c: &mut RunConfig) -> Result<TanhConfig> {
    let d = TanhConfig::ILLUSTRATION;
    Ok(TanhConfig::new(
        c.get_or("tanh.n", d.n_hidden)?,
        c.get_or("tanh.c", d.c)?,
        c.get_or("tanh.var_w", d.var_w)?,
        c.get_or("tanh.var_z", d.var_z)?,
    )?)
}

pub fn tanh_study(a: TanhStudyArgs) -> Result<String> {
    let mut c = config::load(&a.common)?;
    c.flag("tanh.n", &a.n);
    c.flag("tanh.c", &a.c);
    c.flag("tanh.var_w", &a.var_w);
    c.flag("tanh.var_z", &a.var_z);
    c.flag("tanh.trials", &a.trials);
    a.surface.apply(&mut c, "tanh");
    let cfg = read_tanh_config(&mut c)?;
    let trials = positive_trials(c.get_or("tanh.trials", SURFACE_TRIALS)?)?;
    let seed = SeedSpec::from_master(c.get_or("seed", 1)?);
    let (thetas, rhos) = read_axes(&mut c, "tanh", AxisSpec::new(0.0, 1.4, 0.1), AxisSpec::new(-0.2, 0.2, 0.1))?;
    c.finish()?;

    let mut table = Table::new(&SURFACE_HEADER)?;
    let mut k = 0u64;
    for &theta in &thetas {
        for &rho in &rhos {
            let mc = tanh_mc_error(theta, rho, &cfg, trials, seed.child(k))?;
            let closed = tanh_error_closed(theta, rho, &cfg);
            table.row(&[fmt_f64(theta), fmt_f64(rho), fmt_f64(closed), fmt_f64(mc.mean), fmt_f64(mc.std_err)])?;
            k += 1;
        }
    }
    table.write(&a.out)?;

    let opt = tanh_optimal_params(&cfg);
    // the two headline points use streams past the surface's
    let mc_ml = tanh_mc_error(1.0, 0.0, &cfg, trials, seed.child(k))?;
    let mc_pb = tanh_mc_error(opt.theta_star, 0.0, &cfg, trials, seed.child(k + 1))?;
    Ok(summary(
        "tanh-study",
        &[
            ("d_closed_ml", fmt_f64(tanh_error_closed(1.0, 0.0, &cfg))),
            ("d_closed_pb", fmt_f64(tanh_error_closed(opt.theta_star, 0.0, &cfg))),
            ("d_mc_ml", fmt_f64(mc_ml.mean)),
            ("d_mc_pb", fmt_f64(mc_pb.mean)),
            ("lambda_star", fmt_f64(opt.lambda_star)),
            ("lambda_prime_star", fmt_f64(2.0 * cfg.var_w * opt.lambda_star)),
            ("theta_star", fmt_f64(opt.theta_star)),
            ("gain", fmt_f64(tanh_gain(&cfg))),
        ],
    ))
}

#[derive(Args)]
pub struct TanhSweepArgs {
    #[command(flatten)]
    common: Common,
    /// Hidden width.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    var_w: Option<f64>,
    #[arg(long)]
    var_z: Option<f64>,
    /// Comma-separated input half-widths.
    #[arg(long, value_delimiter = ',')]
    c_list: Option<Vec<f64>>,
    /// Monte Carlo trials per row and denoiser.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    trials: Option<u64>,
    /// Sweep CSV: c,closed_ml,mc_ml,se_ml,closed_pb,mc_pb,se_pb.
    #[arg(long)]
    out: PathBuf,
}

pub fn tanh_sweep(a: TanhSweepArgs) -> Result<String> {
    let mut c = config::load(&a.common)?;
    c.flag("tanh.n", &a.n);
    c.flag("tanh.var_w", &a.var_w);
    c.flag("tanh.var_z", &a.var_z);
    c.flag("tanh.trials", &a.trials);
    if let Some(list) = &a.c_list {
        c.set("tanh.c_list", join(list));
    }
    let template = read_tanh_config(&mut c)?;
    let default_cs: Vec<f64> = (1..=10).map(|k| 0.05 * k as f64).collect();
    let cs = c.get_list::<f64>("tanh.c_list")?.unwrap_or(default_cs);
    let trials = positive_trials(c.get_or("tanh.trials", SURFACE_TRIALS)?)?;
    let seed = SeedSpec::from_master(c.get_or("seed", 1)?);
    c.finish()?;
    if cs.is_empty() {
        anyhow::bail!("tanh.c_list is empty");
    }

    let rows = tanh_c_sweep(&template, &cs, trials, seed)?;
    let mut table = Table::new(&["c", "closed_ml", "mc_ml", "se_ml", "closed_pb", "mc_pb", "se_pb"])?;
    let mut worst: f64 = 0.0;
    for r in &rows {
        table.row(&[
            fmt_f64(r.c),
            fmt_f64(r.closed_ml),
            fmt_f64(r.mc_ml.mean),
            fmt_f64(r.mc_ml.std_err),
            fmt_f64(r.closed_pb),
            fmt_f64(r.mc_pb.mean),
            fmt_f64(r.mc_pb.std_err),
        ])?;
        for (closed, mc) in [(r.closed_ml, r.mc_ml.mean), (r.closed_pb, r.mc_pb.mean)] {
            if mc > 0.0 {
                worst = worst.max((closed - mc).abs() / mc);
            }
        }
    }
    table.write(&a.out)?;
    Ok(summary(
        "tanh-sweep",
        &[
            ("rows", rows.len().to_string()),
            ("theta_star", fmt_f64(tanh_optimal_params(&template).theta_star)),
            ("max_rel_diff", fmt_f64(worst)),
        ],
    ))
}
