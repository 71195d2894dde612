//! Noisy-inference experiments: perturb a trained model's weights at a
//! given WNR, denoise with each strategy and measure test accuracy, plus a
//! batch denoiser for weight files.
//!
//! Repeat `j` at WNR index `i` draws its channel noise from stream
//! `seed.child(i).child(j)`; every strategy sees the same noisy weights.
//! The server validation subset for grid strategies is drawn once from the
//! validation split with stream `seed.child(u64::MAX)`.

use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;

use crate::denoiser::{normalized_factors, NormalizedTemperature};
use crate::error::{Error, Result};
use crate::io::{read_weights_with_mask, write_meta, write_weight_file, meta_path};
use crate::mlp::{evaluate, Examples, MlpModel, SyntheticDataset};
use crate::stats::{
    add_awgn, estimate_prior_stats, sample_mean, sample_variance, PriorStats, SeedSpec, WeightVector,
    DEFAULT_VAR_FLOOR,
};
use crate::strategy::{apply_strategy, DenoiseStrategy};

/// Where the denoiser's prior statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsSource {
    /// From the received weights and the known noise power.
    Estimated,
    /// The clean model's true mean and variance.
    True,
}

#[derive(Debug, Clone)]
pub struct InferenceExperiment<'a> {
    pub model: &'a MlpModel,
    pub data: &'a SyntheticDataset,
    pub wnr_values: Vec<f64>,
    pub repeats: usize,
    pub strategies: Vec<DenoiseStrategy>,
    pub stats: StatsSource,
    pub seed: SeedSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub wnr_db: f64,
    pub strategy: String,
    pub repeat: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub wnr_db: f64,
    pub strategy: String,
    pub mean: f64,
    /// Sample standard deviation over the repeats (0 for one repeat).
    pub std: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub clean_accuracy: f64,
    /// Ordered by WNR, then repeat, then strategy.
    pub rows: Vec<SweepRow>,
    /// Ordered by WNR, then strategy.
    pub summary: Vec<SweepSummary>,
}

impl SweepResult {
    pub fn summary_for(&self, wnr_db: f64, strategy: &str) -> Option<&SweepSummary> {
        self.summary.iter().find(|s| s.wnr_db == wnr_db && s.strategy == strategy)
    }
}

pub const ROWS_HEADER: [&str; 4] = ["wnr_db", "strategy", "repeat", "accuracy"];
pub const SUMMARY_HEADER: [&str; 5] = ["wnr_db", "strategy", "mean", "std", "repeats"];

fn validation_subset(exp: &InferenceExperiment) -> Result<Option<Examples>> {
    let kappa = exp
        .strategies
        .iter()
        .filter_map(|s| match s {
            DenoiseStrategy::MmsePbGrid { kappa, .. } => Some(*kappa),
            _ => None,
        })
        .max();
    let Some(kappa) = kappa else {
        return Ok(None);
    };
    let n = exp.data.validation.len();
    if kappa == 0 || kappa > n {
        return Err(Error::invalid("grid.kappa", format!("must be in [1, {n}]")));
    }
    let pick = index::sample(&mut exp.seed.child(u64::MAX).rng(), n, kappa).into_vec();
    Ok(Some(exp.data.validation.subset(&pick)))
}

pub fn run_inference_sweep(exp: &InferenceExperiment) -> Result<SweepResult> {
    if exp.wnr_values.is_empty() {
        return Err(Error::Empty("WNR list"));
    }
    if exp.repeats == 0 {
        return Err(Error::invalid("repeats", "must be >= 1"));
    }
    if exp.strategies.is_empty() {
        return Err(Error::Empty("strategy list"));
    }
    if let Some(w) = exp.wnr_values.iter().find(|w| w.is_nan()) {
        return Err(Error::invalid("wnr_db", format!("bad value {w}")));
    }
    let clean = exp.model.flatten();
    let clean_values: Vec<f64> = clean.unmasked().collect();
    if clean_values.is_empty() {
        return Err(Error::Empty("unmasked model parameters"));
    }
    let true_mean = sample_mean(&clean_values)?;
    let true_var = sample_variance(&clean_values)?;
    if !(true_var > 0.0) {
        return Err(Error::invalid("model", "clean weights have zero variance"));
    }
    let clean_accuracy = evaluate(exp.model, &exp.data.test)?;
    let validation = validation_subset(exp)?;
    let spec = exp.model.spec();

    let jobs: Vec<(usize, usize)> = (0..exp.wnr_values.len())
        .flat_map(|i| (0..exp.repeats).map(move |j| (i, j)))
        .collect();
    let per_job: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let wnr = exp.wnr_values[i];
            let var_z = if wnr == f64::INFINITY { 0.0 } else { true_var * 10f64.powf(-wnr / 10.0) };
            let r = add_awgn(&clean, var_z, exp.seed.child(i as u64).child(j as u64))?;
            let p = match exp.stats {
                StatsSource::Estimated => estimate_prior_stats(&r, var_z, DEFAULT_VAR_FLOOR)?,
                StatsSource::True => PriorStats::new(true_mean, true_var, var_z)?,
            };
            exp.strategies
                .iter()
                .map(|s| {
                    let applied = apply_strategy(s, &r, &p, validation.as_ref().map(|v| (spec, v)))?;
                    let model = MlpModel::unflatten(spec.clone(), &applied.estimate)?;
                    evaluate(&model, &exp.data.test)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let names: Vec<String> = exp.strategies.iter().map(DenoiseStrategy::name).collect();
    let mut rows = Vec::with_capacity(jobs.len() * names.len());
    for (&(i, j), accs) in jobs.iter().zip(&per_job) {
        for (name, &accuracy) in names.iter().zip(accs) {
            rows.push(SweepRow {
                wnr_db: exp.wnr_values[i],
                strategy: name.clone(),
                repeat: j,
                accuracy,
            });
        }
    }
    let mut summary = Vec::new();
    for (i, &wnr) in exp.wnr_values.iter().enumerate() {
        for (s, name) in names.iter().enumerate() {
            let values: Vec<f64> = (0..exp.repeats).map(|j| per_job[i * exp.repeats + j][s]).collect();
            let (mean, std) = mean_std(&values);
            summary.push(SweepSummary {
                wnr_db: wnr,
                strategy: name.clone(),
                mean,
                std,
                values,
            });
        }
    }
    Ok(SweepResult {
        clean_accuracy,
        rows,
        summary,
    })
}

/// Mean and sample (n - 1) standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Noise specification for the file denoiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Known noise variance; prior stats estimated from the received weights.
    VarZ(f64),
    /// Known WNR: `var_r = var_w (1 + 10^(-wnr/10))` fixes both variances.
    WnrDb(f64),
}

impl NoiseLevel {
    /// Prior statistics for received weights `r`.
    pub fn prior(&self, r: &WeightVector) -> Result<PriorStats> {
        match *self {
            NoiseLevel::VarZ(var_z) => estimate_prior_stats(r, var_z, DEFAULT_VAR_FLOOR),
            NoiseLevel::WnrDb(db) => {
                if db.is_nan() {
                    return Err(Error::invalid("wnr_db", "must not be NaN"));
                }
                let values: Vec<f64> = r.unmasked().collect();
                if values.is_empty() {
                    return Err(Error::Empty("unmasked weights"));
                }
                let ratio = 10f64.powf(-db / 10.0);
                let var_r = sample_variance(&values)?;
                let var_w = var_r / (1.0 + ratio);
                PriorStats::new(sample_mean(&values)?, var_w, var_w * ratio)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiseReport {
    pub theta: f64,
    pub rho: f64,
    pub lambda_prime: f64,
    pub beta: f64,
    pub prior: PriorStats,
}

/// Denoises the weight file `input` into `output` and writes the sidecar
/// `<output>.meta` with the applied factors and statistics. Grid strategies
/// need a model and are rejected here.
pub fn apply_denoiser_file(
    input: &Path,
    output: &Path,
    noise: NoiseLevel,
    strategy: &DenoiseStrategy,
    mask: Option<&Path>,
) -> Result<DenoiseReport> {
    let r = read_weights_with_mask(input, mask)?;
    let p = noise.prior(&r)?;
    let t = match *strategy {
        DenoiseStrategy::Ml => NormalizedTemperature::ML,
        DenoiseStrategy::Mmse => NormalizedTemperature::MMSE,
        DenoiseStrategy::MmsePbFixed { lambda_prime, beta } => NormalizedTemperature::new(lambda_prime, beta),
        DenoiseStrategy::MmsePbGrid { .. } => {
            return Err(Error::invalid("strategy", "grid search needs a model and validation data"));
        }
    };
    let (estimate, f) = match strategy {
        DenoiseStrategy::Ml => (r, crate::denoiser::LinearDenoiser::IDENTITY),
        // as in `apply_strategy`: the MMSE_pb form assumes a zero prior mean
        DenoiseStrategy::MmsePbFixed { .. } => {
            let f = normalized_factors(t, &p.centered())?;
            (f.apply(&r), f)
        }
        _ => {
            let f = normalized_factors(t, &p)?;
            (f.apply(&r), f)
        }
    };
    write_weight_file(output, estimate.values())?;
    let report = DenoiseReport {
        theta: f.theta,
        rho: f.rho,
        lambda_prime: t.lambda_prime,
        beta: t.beta,
        prior: p,
    };
    write_meta(
        &meta_path(output),
        &[
            ("strategy", strategy.name()),
            ("theta", report.theta.to_string()),
            ("rho", report.rho.to_string()),
            ("lambda_prime", report.lambda_prime.to_string()),
            ("beta", report.beta.to_string()),
            ("mu_w", p.mu_w.to_string()),
            ("var_w_est", p.var_w.to_string()),
            ("var_z", p.var_z.to_string()),
        ],
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{encode_weights, read_weight_file};
    use crate::mlp::{make_blobs, sgd_train, MlpSpec};

    fn trained() -> (MlpModel, SyntheticDataset) {
        let data = make_blobs(4, 2, 50, 0.3, SeedSpec::from_master(1)).unwrap();
        let spec = MlpSpec::new(vec![2, 8, 4]).unwrap();
        let m = MlpModel::init(spec, SeedSpec::from_master(2));
        let m = sgd_train(&m, &data.train, 20, 16, 0.1, SeedSpec::from_master(3)).unwrap();
        (m, data)
    }

    #[test]
    fn ml_and_fixed_identity_columns_match() {
        let (m, data) = trained();
        let exp = InferenceExperiment {
            model: &m,
            data: &data,
            wnr_values: vec![-5.0, 5.0],
            repeats: 3,
            strategies: vec![
                DenoiseStrategy::Ml,
                DenoiseStrategy::MmsePbFixed {
                    lambda_prime: 1.0,
                    beta: 0.0,
                },
            ],
            stats: StatsSource::Estimated,
            seed: SeedSpec::from_master(4),
        };
        let res = run_inference_sweep(&exp).unwrap();
        assert_eq!(res.rows.len(), 12);
        for pair in res.rows.chunks(2) {
            assert_eq!(pair[0].accuracy, pair[1].accuracy);
        }
        assert_eq!(res, run_inference_sweep(&exp).unwrap());
    }

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[1.0]), (1.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wnr_prior_split() {
        let r = WeightVector::new(vec![-2.0, 0.0, 2.0, 0.0]).unwrap();
        let p = NoiseLevel::WnrDb(0.0).prior(&r).unwrap();
        assert_eq!(p.var_w, 1.0);
        assert_eq!(p.var_z, 1.0);
    }

    #[test]
    fn file_denoiser_ml_and_affine() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.bin");
        let out = dir.path().join("out.bin");
        let v = vec![0.3, -1.2, 2.5, 0.1, -0.7];
        write_weight_file(&input, &v).unwrap();
        apply_denoiser_file(&input, &out, NoiseLevel::VarZ(0.5), &DenoiseStrategy::Ml, None).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), encode_weights(&v));
        let rep = apply_denoiser_file(&input, &out, NoiseLevel::VarZ(0.5), &DenoiseStrategy::Mmse, None).unwrap();
        let got = read_weight_file(&out).unwrap();
        for (g, x) in got.values().iter().zip(&v) {
            assert_eq!(*g, rep.theta * x + rep.rho);
        }
        let meta = std::fs::read_to_string(meta_path(&out)).unwrap();
        assert!(meta.contains(&format!("theta={}\n", rep.theta)));
        assert!(apply_denoiser_file(&input, &out, NoiseLevel::VarZ(0.5), &DenoiseStrategy::grid_default(), None).is_err());
    }
}
