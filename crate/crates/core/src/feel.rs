//! Federated edge learning with over-the-air aggregation.
//!
//! Each round: broadcast `w`, let `m_active` sampled devices train locally,
//! receive `r = sum_m (w_m - w) + z` over the noisy multiple-access channel,
//! denoise `r` at the server and set `w <- w + w_hat / m_active`.
//!
//! All randomness derives from `FeelConfig::seed`:
//!
//! | stream                         | use                         |
//! |--------------------------------|-----------------------------|
//! | `child(1)`                     | dataset generation          |
//! | `child(2)`                     | initial model               |
//! | `child(3)`                     | partitioning                |
//! | `child(4)`                     | server validation subset    |
//! | `child(5).child(t)`            | device sampling, round `t`  |
//! | `child(6).child(t)`            | channel noise, round `t`    |
//! | `child(7).child(t).child(k)`   | local shuffles, device `k`  |

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::RunConfig;
use crate::mlp::{evaluate, make_blobs, sgd_train, Examples, MlpModel, MlpSpec, SyntheticDataset};
use crate::search::{AxisSpec, GridSpec, ModelEvaluator};
use crate::stats::{add_awgn, estimate_prior_stats, sample_variance, SeedSpec, WeightVector, DEFAULT_VAR_FLOOR};
use crate::strategy::{apply_strategy, DenoiseStrategy, DEFAULT_KAPPA};

/// How the channel noise power is set from the WNR.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    /// Every round: `var_z = Var(true sum) * 10^(-wnr/10)`.
    Tracking,
    /// `var_z` fixed to the round-0 value of the tracking rule.
    Fixed,
}

impl std::str::FromStr for NoiseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tracking" => Ok(NoiseMode::Tracking),
            "fixed" => Ok(NoiseMode::Fixed),
            other => Err(Error::invalid("noise_mode", format!("expected tracking or fixed, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionSpec {
    /// Fraction of the training split dealt out uniformly at random.
    pub random_fraction: f64,
    /// Label-sorted shards per device taken from the remainder.
    pub shards_per_device: usize,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            random_fraction: 0.8,
            shards_per_device: 1,
        }
    }
}

/// Data set configuration: `k`-class blobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobsSpec {
    pub k_classes: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub spread: f64,
}

impl Default for BlobsSpec {
    fn default() -> Self {
        Self {
            k_classes: 4,
            dim: 2,
            n_per_class: 200,
            spread: DEFAULT_SPREAD,
        }
    }
}

impl BlobsSpec {
    pub fn generate(&self, seed: SeedSpec) -> Result<SyntheticDataset> {
        make_blobs(self.k_classes, self.dim, self.n_per_class, self.spread, seed)
    }
}

/// Default blob standard deviation (means are one unit apart).
pub const DEFAULT_SPREAD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct FeelConfig {
    pub n_devices: usize,
    pub m_active: usize,
    pub local_epochs: usize,
    pub rounds: usize,
    /// `+inf` disables the channel noise.
    pub wnr_db: f64,
    pub noise_mode: NoiseMode,
    pub strategy: DenoiseStrategy,
    pub partition: PartitionSpec,
    pub data: BlobsSpec,
    pub model: MlpSpec,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for FeelConfig {
    fn default() -> Self {
        Self {
            n_devices: 8,
            m_active: 4,
            local_epochs: 5,
            rounds: 25,
            wnr_db: -10.0,
            noise_mode: NoiseMode::Tracking,
            strategy: DenoiseStrategy::grid_default(),
            partition: PartitionSpec::default(),
            data: BlobsSpec::default(),
            model: MlpSpec::new(vec![2, 16, 16, 4]).unwrap(),
            learning_rate: 0.1,
            batch_size: 16,
            seed: 1,
        }
    }
}

impl FeelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 {
            return Err(Error::invalid("feel.n_devices", "must be >= 1"));
        }
        if self.m_active == 0 || self.m_active > self.n_devices {
            return Err(Error::invalid("feel.m_active", format!("must be in [1, {}]", self.n_devices)));
        }
        if self.local_epochs == 0 {
            return Err(Error::invalid("feel.local_epochs", "must be >= 1"));
        }
        if self.wnr_db.is_nan() {
            return Err(Error::invalid("feel.wnr_db", "must not be NaN"));
        }
        if !(0.0..=1.0).contains(&self.partition.random_fraction) {
            return Err(Error::invalid("partition.random_fraction", "must be in [0, 1]"));
        }
        if self.partition.shards_per_device == 0 {
            return Err(Error::invalid("partition.shards_per_device", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("feel.learning_rate", "must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("feel.batch_size", "must be >= 1"));
        }
        if self.model.input_dim() != self.data.dim || self.model.n_classes() != self.data.k_classes {
            return Err(Error::invalid("model.layers", "input/output sizes must match data.dim and data.k_classes"));
        }
        Ok(())
    }

    /// Reads `feel.*`, `partition.*`, `data.*`, `model.layers`, `grid.*`,
    /// `fixed.*` and `seed` keys over the defaults. Keys are marked as read;
    /// the caller decides when to reject unknown keys.
    pub fn from_run_config(c: &mut RunConfig) -> Result<Self> {
        let d = FeelConfig::default();
        let strategy = read_strategy(c, "feel.strategy", d.strategy)?;
        let model = match c.get::<String>("model.layers")? {
            Some(h) => MlpSpec::from_header(&h)?,
            None => d.model,
        };
        let cfg = FeelConfig {
            n_devices: c.get_or("feel.n_devices", d.n_devices)?,
            m_active: c.get_or("feel.m_active", d.m_active)?,
            local_epochs: c.get_or("feel.local_epochs", d.local_epochs)?,
            rounds: c.get_or("feel.rounds", d.rounds)?,
            wnr_db: c.get_or("feel.wnr_db", d.wnr_db)?,
            noise_mode: c.get_or("feel.noise_mode", d.noise_mode)?,
            learning_rate: c.get_or("feel.learning_rate", d.learning_rate)?,
            batch_size: c.get_or("feel.batch_size", d.batch_size)?,
            partition: PartitionSpec {
                random_fraction: c.get_or("partition.random_fraction", d.partition.random_fraction)?,
                shards_per_device: c.get_or("partition.shards_per_device", d.partition.shards_per_device)?,
            },
            data: read_blobs(c)?,
            model,
            strategy,
            seed: c.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reads `data.*` keys over [`BlobsSpec::default`].
pub fn read_blobs(c: &mut RunConfig) -> Result<BlobsSpec> {
    let d = BlobsSpec::default();
    Ok(BlobsSpec {
        k_classes: c.get_or("data.k_classes", d.k_classes)?,
        dim: c.get_or("data.dim", d.dim)?,
        n_per_class: c.get_or("data.n_per_class", d.n_per_class)?,
        spread: c.get_or("data.spread", d.spread)?,
    })
}

/// Reads `grid.*` keys over [`GridSpec::default`].
pub fn read_grid(c: &mut RunConfig) -> Result<GridSpec> {
    let d = GridSpec::default();
    let grid = GridSpec {
        lambda_prime: AxisSpec::new(
            c.get_or("grid.lambda_prime_min", d.lambda_prime.min)?,
            c.get_or("grid.lambda_prime_max", d.lambda_prime.max)?,
            c.get_or("grid.lambda_prime_step", d.lambda_prime.step)?,
        ),
        beta: AxisSpec::new(
            c.get_or("grid.beta_min", d.beta.min)?,
            c.get_or("grid.beta_max", d.beta.max)?,
            c.get_or("grid.beta_step", d.beta.step)?,
        ),
        beta_relative: c.get_or("grid.beta_relative", d.beta_relative)?,
    };
    grid.validate()?;
    Ok(grid)
}

/// Reads a strategy name from `key`, then applies `grid.*` and
/// `grid.kappa` to grid strategies.
pub fn read_strategy(c: &mut RunConfig, key: &str, default: DenoiseStrategy) -> Result<DenoiseStrategy> {
    let s = c.get::<DenoiseStrategy>(key)?.unwrap_or(default);
    let grid = read_grid(c)?;
    let kappa = c.get_or("grid.kappa", DEFAULT_KAPPA)?;
    Ok(s.with_grid(grid, kappa))
}

/// Splits `train` across devices: a random `random_fraction` portion dealt
/// round-robin, then the remainder sorted by label (ties by index) and cut
/// into `n_devices * shards_per_device` equal shards assigned at random.
/// Returns per-device index lists into `train`.
pub fn partition_indices(train: &Examples, spec: &PartitionSpec, n_devices: usize, seed: SeedSpec) -> Result<Vec<Vec<usize>>> {
    if n_devices == 0 {
        return Err(Error::invalid("n_devices", "must be >= 1"));
    }
    if !(0.0..=1.0).contains(&spec.random_fraction) || spec.shards_per_device == 0 {
        return Err(Error::invalid("partition", "random_fraction must be in [0, 1] and shards_per_device >= 1"));
    }
    let n = train.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.child(0).rng());
    let n_random = (spec.random_fraction * n as f64).round() as usize;
    let (random, rest) = order.split_at(n_random);
    let n_shards = n_devices * spec.shards_per_device;
    if rest.len() % n_shards != 0 {
        return Err(Error::invalid(
            "partition",
            format!("{} sorted examples do not split into {n_shards} equal shards", rest.len()),
        ));
    }
    let mut devices: Vec<Vec<usize>> = vec![Vec::new(); n_devices];
    for (j, &i) in random.iter().enumerate() {
        devices[j % n_devices].push(i);
    }
    if !rest.is_empty() {
        let mut sorted = rest.to_vec();
        sorted.sort_by_key(|&i| (train.label(i), i));
        let shard_len = sorted.len() / n_shards;
        let mut shard_ids: Vec<usize> = (0..n_shards).collect();
        shard_ids.shuffle(&mut seed.child(1).rng());
        for (slot, &s) in shard_ids.iter().enumerate() {
            devices[slot / spec.shards_per_device].extend_from_slice(&sorted[s * shard_len..(s + 1) * shard_len]);
        }
    }
    Ok(devices)
}

pub fn partition_dataset(train: &Examples, spec: &PartitionSpec, n_devices: usize, seed: SeedSpec) -> Result<Vec<Examples>> {
    Ok(partition_indices(train, spec, n_devices, seed)?
        .iter()
        .map(|idx| train.subset(idx))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub lambda_prime: f64,
    pub beta: f64,
    /// Sample variance of the received aggregate.
    pub sigma2_r: f64,
    /// Server-side estimate of the aggregate's signal variance.
    pub sigma2_w_est: f64,
    pub sigma2_z: f64,
    pub test_accuracy: f64,
    /// The strategy was infeasible and ML was used.
    pub fell_back: bool,
}

pub const HISTORY_HEADER: [&str; 6] = ["round", "lambda_prime", "beta", "sigma2_r", "sigma2_w_est", "test_accuracy"];

impl RoundRecord {
    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.round.to_string(),
            self.lambda_prime.to_string(),
            self.beta.to_string(),
            self.sigma2_r.to_string(),
            self.sigma2_w_est.to_string(),
            self.test_accuracy.to_string(),
        ]
    }
}

/// What went over the channel in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTrace {
    /// `sum_m (w_m - w)` in device-index order.
    pub true_sum: Vec<f64>,
    pub noise: Vec<f64>,
    pub received: WeightVector,
    pub active: Vec<usize>,
}

/// Scores a candidate denoised aggregate by the accuracy of
/// `base + candidate / m`.
struct UpdateEvaluator<'a> {
    spec: &'a MlpSpec,
    base: &'a [f64],
    m: f64,
}

impl ModelEvaluator for UpdateEvaluator<'_> {
    type Examples = Examples;

    fn param_count(&self) -> usize {
        self.base.len()
    }

    fn example_count(&self, e: &Examples) -> usize {
        e.len()
    }

    fn accuracy(&self, update: &[f64], e: &Examples) -> f64 {
        let params: Vec<f64> = self.base.iter().zip(update).map(|(w, u)| w + u / self.m).collect();
        self.spec.accuracy(&params, e)
    }
}

/// Simulation state shared by all rounds.
#[derive(Debug, Clone)]
pub struct FeelContext {
    pub data: SyntheticDataset,
    pub devices: Vec<Examples>,
    /// Server validation subset sampled once from the training split.
    pub validation: Examples,
    /// Noise power for [`NoiseMode::Fixed`], set by the first noisy round.
    pub fixed_var_z: Option<f64>,
}

impl FeelContext {
    pub fn new(cfg: &FeelConfig) -> Result<Self> {
        cfg.validate()?;
        let seed = SeedSpec::from_master(cfg.seed);
        let data = cfg.data.generate(seed.child(1))?;
        let devices = partition_dataset(&data.train, &cfg.partition, cfg.n_devices, seed.child(3))?;
        if let Some(k) = devices.iter().position(Examples::is_empty) {
            return Err(Error::invalid("partition", format!("device {k} received no examples")));
        }
        let kappa = match cfg.strategy {
            DenoiseStrategy::MmsePbGrid { kappa, .. } => kappa,
            _ => 0,
        };
        if cfg.strategy.needs_validation() && (kappa == 0 || kappa > data.train.len()) {
            return Err(Error::invalid("grid.kappa", format!("must be in [1, {}]", data.train.len())));
        }
        let pick = index::sample(&mut seed.child(4).rng(), data.train.len(), kappa).into_vec();
        let validation = data.train.subset(&pick);
        Ok(Self {
            data,
            devices,
            validation,
            fixed_var_z: None,
        })
    }
}

/// One FEEL round; `t` selects the round's random streams.
pub fn feel_round(global: &MlpModel, ctx: &mut FeelContext, cfg: &FeelConfig, t: usize) -> Result<(MlpModel, RoundRecord, ChannelTrace)> {
    let seed = SeedSpec::from_master(cfg.seed);
    let mut active = index::sample(&mut seed.child(5).child(t as u64).rng(), cfg.n_devices, cfg.m_active).into_vec();
    active.sort_unstable();

    let local_seed = seed.child(7).child(t as u64);
    let locals: Vec<MlpModel> = active
        .par_iter()
        .map(|&k| {
            sgd_train(
                global,
                &ctx.devices[k],
                cfg.local_epochs,
                cfg.batch_size,
                cfg.learning_rate,
                local_seed.child(k as u64),
            )
        })
        .collect::<Result<_>>()?;

    let base = global.params();
    let mut true_sum = vec![0.0; base.len()];
    for local in &locals {
        for ((s, w), w0) in true_sum.iter_mut().zip(local.params()).zip(base) {
            *s += w - w0;
        }
    }
    let sum_vec = match global.mask() {
        Some(m) => WeightVector::with_mask(true_sum.clone(), m.to_vec())?,
        None => WeightVector::new(true_sum.clone())?,
    };

    let var_z = if cfg.wnr_db == f64::INFINITY {
        0.0
    } else {
        let tracking = sample_variance(&sum_vec.unmasked().collect::<Vec<_>>())? * 10f64.powf(-cfg.wnr_db / 10.0);
        match cfg.noise_mode {
            NoiseMode::Tracking => tracking,
            NoiseMode::Fixed => *ctx.fixed_var_z.get_or_insert(tracking),
        }
    };
    let received = add_awgn(&sum_vec, var_z, seed.child(6).child(t as u64))?;
    let noise: Vec<f64> = received.values().iter().zip(&true_sum).map(|(r, s)| r - s).collect();

    let p = estimate_prior_stats(&received, var_z, DEFAULT_VAR_FLOOR)?;
    let m = cfg.m_active as f64;
    let evaluator = UpdateEvaluator {
        spec: global.spec(),
        base,
        m,
    };
    let applied = match apply_strategy(&cfg.strategy, &received, &p, Some((&evaluator, &ctx.validation))) {
        Ok(a) => a,
        // statistics too degenerate for any denoiser (e.g. an all-zero update)
        Err(Error::InvalidParameter { .. }) => apply_strategy::<UpdateEvaluator>(&DenoiseStrategy::Ml, &received, &p, None)
            .map(|mut a| {
                a.fell_back = true;
                a
            })?,
        Err(e) => return Err(e),
    };

    let mut next = global.clone();
    for (w, u) in next.params_mut().iter_mut().zip(applied.estimate.values()) {
        *w += u / m;
    }
    let sigma2_r = sample_variance(&received.unmasked().collect::<Vec<_>>())?;
    let record = RoundRecord {
        round: t,
        lambda_prime: applied.temperature.lambda_prime,
        beta: applied.temperature.beta,
        sigma2_r,
        sigma2_w_est: p.var_w,
        sigma2_z: var_z,
        test_accuracy: evaluate(&next, &ctx.data.test)?,
        fell_back: applied.fell_back,
    };
    let trace = ChannelTrace {
        true_sum,
        noise,
        received,
        active,
    };
    Ok((next, record, trace))
}

#[derive(Debug, Clone)]
pub struct FeelRun {
    pub history: Vec<RoundRecord>,
    pub initial_model: MlpModel,
    pub final_model: MlpModel,
}

impl FeelRun {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.history.last().map(|r| r.test_accuracy)
    }
}

pub fn run_feel(cfg: &FeelConfig) -> Result<FeelRun> {
    let mut ctx = FeelContext::new(cfg)?;
    let initial = MlpModel::init(cfg.model.clone(), SeedSpec::from_master(cfg.seed).child(2));
    let mut model = initial.clone();
    let mut history = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let (next, record, _) = feel_round(&model, &mut ctx, cfg, t)?;
        model = next;
        history.push(record);
    }
    Ok(FeelRun {
        history,
        initial_model: initial,
        final_model: model,
    })
}
