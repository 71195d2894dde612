use std::fmt::Display;

use anyhow::{bail, Context, Result};
use noisynn_core::io::RunConfig;

use crate::Common;

/// Loads the config file (if any), then applies `--set` pairs and
/// `--seed`. Command-specific flags are applied by the caller with
/// [`Overrides::flag`].
pub fn load(common: &Common) -> Result<RunConfig> {
    let mut c = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for pair in &common.set {
        let (k, v) = pair
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {pair:?}"))?;
        if k.trim().is_empty() {
            bail!("--set expects KEY=VALUE, got {pair:?}");
        }
        c.set(k.trim(), v.trim());
    }
    if let Some(seed) = common.seed {
        c.set("seed", seed);
    }
    Ok(c)
}

pub trait Overrides {
    fn flag<T: Display>(&mut self, key: &str, value: &Option<T>);
}

impl Overrides for RunConfig {
    fn flag<T: Display>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }
}

/// Formats a list for a comma-separated config value.
pub fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

pub fn positive_trials(trials: u64) -> Result<u64> {
    if trials == 0 {
        bail!("trials must be >= 1");
    }
    Ok(trials)
}
