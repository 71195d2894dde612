//! Model-level experiments: file denoising, training, noisy inference and
//! federated learning.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use noisynn_core::feel::{read_blobs, read_grid, run_feel, FeelConfig, HISTORY_HEADER};
use noisynn_core::inference::{
    apply_denoiser_file, run_inference_sweep, InferenceExperiment, NoiseLevel, StatsSource, ROWS_HEADER,
    SUMMARY_HEADER,
};
use noisynn_core::io::{fmt_f64, load_model, save_model, RunConfig};
use noisynn_core::mlp::{evaluate, sgd_train};
use noisynn_core::strategy::{DenoiseStrategy, DEFAULT_KAPPA};
use noisynn_core::{MlpModel, MlpSpec, SeedSpec, SyntheticDataset};

use crate::config::{self, join, Overrides};
use crate::output::{sibling, summary, Table};
use crate::Common;

#[derive(Args)]
pub struct DenoiseArgs {
    #[command(flatten)]
    common: Common,
    /// Received (noisy) weight file.
    #[arg(long = "in")]
    input: PathBuf,
    /// Denoised weight file; factors go to `<out>.meta`.
    #[arg(long)]
    out: PathBuf,
    /// `ml`, `mmse` or `fixed:<lambda'>:<beta>`; `--lambda-prime`/`--beta`
    /// alone imply a fixed MMSE_pb denoiser.
    #[arg(long)]
    strategy: Option<String>,
    /// Known noise variance; prior statistics are estimated from the file.
    #[arg(long, conflicts_with = "wnr_db")]
    var_z: Option<f64>,
    /// Known WNR in dB.
    #[arg(long, allow_hyphen_values = true)]
    wnr_db: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    lambda_prime: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    /// Mask file marking noise-free entries.
    #[arg(long)]
    mask: Option<PathBuf>,
}

pub fn denoise(a: DenoiseArgs) -> Result<String> {
    let mut c = config::load(&a.common)?;
    c.flag("denoise.strategy", &a.strategy);
    c.flag("denoise.var_z", &a.var_z);
    c.flag("denoise.wnr_db", &a.wnr_db);
    c.flag("denoise.lambda_prime", &a.lambda_prime);
    c.flag("denoise.beta", &a.beta);
    c.flag("denoise.mask", &a.mask.as_ref().map(|p| p.display().to_string()));

    let name: Option<String> = c.get("denoise.strategy")?;
    let lambda_prime: Option<f64> = c.get("denoise.lambda_prime")?;
    let beta: Option<f64> = c.get("denoise.beta")?;
    let strategy = match name.as_deref() {
        None | Some("fixed") if lambda_prime.is_some() || beta.is_some() => DenoiseStrategy::MmsePbFixed {
            lambda_prime: lambda_prime.unwrap_or(1.0),
            beta: beta.unwrap_or(0.0),
        },
        None => DenoiseStrategy::Ml,
        Some(s) => {
            if lambda_prime.is_some() || beta.is_some() {
                bail!("--lambda-prime/--beta only apply to the fixed strategy, not {s:?}");
            }
            s.parse()?
        }
    };
    if strategy.needs_validation() {
        bail!("the grid strategy needs a model; use infer-sweep or feel");
    }
    let var_z: Option<f64> = c.get("denoise.var_z")?;
    let wnr_db: Option<f64> = c.get("denoise.wnr_db")?;
    let noise = match (var_z, wnr_db) {
        (Some(_), Some(_)) => bail!("give either var_z or wnr_db, not both"),
        (Some(v), None) => NoiseLevel::VarZ(v),
        (None, Some(db)) => NoiseLevel::WnrDb(db),
        (None, None) if strategy == DenoiseStrategy::Ml => NoiseLevel::VarZ(0.0),
        (None, None) => bail!("{strategy} needs --var-z or --wnr-db"),
    };
    let mask: Option<PathBuf> = c.get::<String>("denoise.mask")?.map(PathBuf::from);
    c.finish()?;

    let report = apply_denoiser_file(&a.input, &a.out, noise, &strategy, mask.as_deref())?;
    Ok(summary(
        "denoise",
        &[
            ("strategy", strategy.name()),
            ("theta", fmt_f64(report.theta)),
            ("rho", fmt_f64(report.rho)),
            ("lambda_prime", fmt_f64(report.lambda_prime)),
            ("beta", fmt_f64(report.beta)),
            ("var_w_est", fmt_f64(report.prior.var_w)),
            ("var_z", fmt_f64(report.prior.var_z)),
        ],
    ))
}

/// Training settings shared by `train` and `infer-sweep`.
struct TrainSettings {
    spec: MlpSpec,
    epochs: usize,
    learning_rate: f64,
    batch_size: usize,
}

fn read_train(c: &mut RunConfig) -> Result<TrainSettings> {
    let spec = MlpSpec::from_header(&c.get_or("model.layers", "2-16-16-4".to_string())?)?;
    let s = TrainSettings {
        spec,
        epochs: c.get_or("train.epochs", 30)?,
        learning_rate: c.get_or("train.learning_rate", 0.1)?,
        batch_size: c.get_or("train.batch_size", 32)?,
    };
    if !(s.learning_rate > 0.0) {
        bail!("train.learning_rate must be > 0");
    }
    Ok(s)
}

/// Blobs data from `seed.child(1)`, initial weights from `seed.child(2)`,
/// SGD shuffles from `seed.child(3)`.
fn dataset(c: &mut RunConfig, seed: SeedSpec, spec: &MlpSpec) -> Result<SyntheticDataset> {
    let blobs = read_blobs(c)?;
    if spec.input_dim() != blobs.dim || spec.n_classes() != blobs.k_classes {
        bail!("model.layers {} does not match data.dim {} and data.k_classes {}", spec.to_header(), blobs.dim, blobs.k_classes);
    }
    Ok(blobs.generate(seed.child(1))?)
}

fn fit(s: &TrainSettings, data: &SyntheticDataset, seed: SeedSpec) -> Result<MlpModel> {
    let init = MlpModel::init(s.spec.clone(), seed.child(2));
    Ok(sgd_train(&init, &data.train, s.epochs, s.batch_size, s.learning_rate, seed.child(3))?)
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Layer sizes, e.g. 2-16-16-4.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Weight file; the layer sizes go to `<out>.meta`.
    #[arg(long)]
    out: PathBuf,
}

pub fn train(a: TrainArgs) -> Result<String> {
    let mut c = config::load(&a.common)?;
    c.flag("model.layers", &a.layers);
    c.flag("train.epochs", &a.epochs);
    c.flag("train.learning_rate", &a.learning_rate);
    c.flag("train.batch_size", &a.batch_size);
    let settings = read_train(&mut c)?;
    let seed = SeedSpec::from_master(c.get_or("seed", 1)?);
    let data = dataset(&mut c, seed, &settings.spec)?;
    c.finish()?;

    let model = fit(&settings, &data, seed)?;
    save_model(&a.out, &model)?;
    Ok(summary(
        "train",
        &[
            ("layers", settings.spec.to_header()),
            ("params", settings.spec.param_count().to_string()),
            ("train_accuracy", fmt_f64(evaluate(&model, &data.train)?)),
            ("test_accuracy", fmt_f64(evaluate(&model, &data.test)?)),
        ],
    ))
}

#[derive(Args)]
pub struct InferSweepArgs {
    #[command(flatten)]
    common: Common,
    /// Trained weight file (with `.meta`); trained from `train.*` keys when
    /// absent. Must have been trained on the configured `data.*` and seed.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated WNR values in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    wnr_db: Option<Vec<f64>>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Comma-separated strategies (ml, mmse, grid, fixed:<lambda'>:<beta>).
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    /// Prior statistics for the denoiser: `estimated` or `true`.
    #[arg(long)]
    stats: Option<String>,
    /// Per-repeat CSV: wnr_db,strategy,repeat,accuracy.
    #[arg(long)]
    out: PathBuf,
    /// Aggregated CSV: wnr_db,strategy,mean,std,repeats (default
    /// `<out stem>.summary.csv`).
    #[arg(long)]
    summary_out: Option<PathBuf>,
}

fn parse_stats(s: &str) -> Result<StatsSource> {
    match s {
        "estimated" => Ok(StatsSource::Estimated),
        "true" => Ok(StatsSource::True),
        _ => bail!("infer.stats must be `estimated` or `true`, got {s:?}"),
    }
}

pub fn infer_sweep(a: InferSweepArgs) -> Result<String> {
    let mut c = config::load(&a.common)?;
    c.flag("infer.model", &a.model.as_ref().map(|p| p.display().to_string()));
    if let Some(w) = &a.wnr_db {
        c.set("infer.wnr_db", join(w));
    }
    c.flag("infer.repeats", &a.repeats);
    if let Some(s) = &a.strategies {
        c.set("infer.strategies", s.join(","));
    }
    c.flag("infer.stats", &a.stats);

    let seed = SeedSpec::from_master(c.get_or("seed", 1)?);
    let model_path: Option<PathBuf> = c.get::<String>("infer.model")?.map(PathBuf::from);
    let settings = read_train(&mut c)?;
    let wnr_values = c.get_list::<f64>("infer.wnr_db")?.unwrap_or_else(|| vec![-10.0, -5.0, 0.0, 5.0, 10.0, 60.0]);
    let repeats = c.get_or("infer.repeats", 10)?;
    let names = c.get_list::<String>("infer.strategies")?.unwrap_or_else(|| vec!["ml".into(), "mmse".into(), "grid".into()]);
    let stats = parse_stats(&c.get_or("infer.stats", "estimated".to_string())?)?;
    let grid = read_grid(&mut c)?;
    let kappa = c.get_or("grid.kappa", DEFAULT_KAPPA)?;
    let strategies = names
        .iter()
        .map(|s| Ok(s.parse::<DenoiseStrategy>()?.with_grid(grid, kappa)))
        .collect::<Result<Vec<_>>>()?;

    let (model, data) = match model_path {
        Some(path) => {
            let model = load_model(&path).with_context(|| format!("loading {}", path.display()))?;
            let data = dataset(&mut c, seed, model.spec())?;
            (model, data)
        }
        None => {
            let data = dataset(&mut c, seed, &settings.spec)?;
            (fit(&settings, &data, seed)?, data)
        }
    };
    c.finish()?;

    let exp = InferenceExperiment {
        model: &model,
        data: &data,
        wnr_values,
        repeats,
        strategies,
        stats,
        seed: seed.child(4),
    };
    let res = run_inference_sweep(&exp)?;

    let mut rows = Table::new(&ROWS_HEADER)?;
    for r in &res.rows {
        rows.row(&[fmt_f64(r.wnr_db), r.strategy.clone(), r.repeat.to_string(), fmt_f64(r.accuracy)])?;
    }
    rows.write(&a.out)?;
    let mut agg = Table::new(&SUMMARY_HEADER)?;
    for s in &res.summary {
        agg.row(&[fmt_f64(s.wnr_db), s.strategy.clone(), fmt_f64(s.mean), fmt_f64(s.std), s.values.len().to_string()])?;
    }
    let summary_path = a.summary_out.clone().unwrap_or_else(|| sibling(&a.out, "summary"));
    agg.write(&summary_path)?;

    Ok(summary(
        "infer-sweep",
        &[
            ("clean_accuracy", fmt_f64(res.clean_accuracy)),
            ("rows", res.rows.len().to_string()),
            ("summary", summary_path.display().to_string()),
        ],
    ))
}

#[derive(Args)]
pub struct FeelArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    wnr_db: Option<f64>,
    /// ml, mmse, grid or fixed:<lambda'>:<beta>.
    #[arg(long)]
    strategy: Option<String>,
    /// `tracking` or `fixed`.
    #[arg(long)]
    noise_mode: Option<String>,
    /// History CSV: round,lambda_prime,beta,sigma2_r,sigma2_w_est,test_accuracy.
    #[arg(long)]
    out: PathBuf,
    /// Optional weight file for the final global model.
    #[arg(long)]
    model_out: Option<PathBuf>,
}

pub fn feel(a: FeelArgs) -> Result<String> {
    let mut c = config::load(&a.common)?;
    c.flag("feel.rounds", &a.rounds);
    c.flag("feel.wnr_db", &a.wnr_db);
    c.flag("feel.strategy", &a.strategy);
    c.flag("feel.noise_mode", &a.noise_mode);
    let cfg = FeelConfig::from_run_config(&mut c)?;
    c.finish()?;

    let run = run_feel(&cfg)?;
    let mut table = Table::new(&HISTORY_HEADER)?;
    for r in &run.history {
        table.row(&r.csv_fields())?;
    }
    table.write(&a.out)?;
    if let Some(path) = &a.model_out {
        save_model(path, &run.final_model)?;
    }
    let final_accuracy = match run.final_accuracy() {
        Some(acc) => acc,
        // no rounds: score the initial model on the run's test split
        None => evaluate(&run.final_model, &cfg.data.generate(SeedSpec::from_master(cfg.seed).child(1))?.test)?,
    };
    Ok(summary(
        "feel",
        &[
            ("strategy", cfg.strategy.name()),
            ("rounds", run.history.len().to_string()),
            ("fallbacks", run.history.iter().filter(|r| r.fell_back).count().to_string()),
            ("final_accuracy", fmt_f64(final_accuracy)),
        ],
    ))
}
