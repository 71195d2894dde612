//! Server- or receiver-side denoising strategies shared by the federated
//! simulator and the noisy-inference harness.

use std::fmt;
use std::str::FromStr;

use crate::denoiser::{normalized_factors, LinearDenoiser, NormalizedTemperature};
use crate::error::{Error, Result};
use crate::search::{grid_search_parallel, validation_score_builder, GridSpec, ModelEvaluator};
use crate::stats::{PriorStats, WeightVector};

/// Default number of validation examples used by the grid strategy.
pub const DEFAULT_KAPPA: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenoiseStrategy {
    /// `w_hat = r`.
    Ml,
    /// `lambda' = 0, beta = 0`.
    Mmse,
    /// `(lambda', beta)` chosen by grid search on `kappa` validation examples.
    MmsePbGrid { grid: GridSpec, kappa: usize },
    MmsePbFixed { lambda_prime: f64, beta: f64 },
}

impl DenoiseStrategy {
    pub fn grid_default() -> Self {
        DenoiseStrategy::MmsePbGrid {
            grid: GridSpec::default(),
            kappa: DEFAULT_KAPPA,
        }
    }

    /// Short stable name used in CSV output.
    pub fn name(&self) -> String {
        match self {
            DenoiseStrategy::Ml => "ml".into(),
            DenoiseStrategy::Mmse => "mmse".into(),
            DenoiseStrategy::MmsePbGrid { .. } => "grid".into(),
            DenoiseStrategy::MmsePbFixed { lambda_prime, beta } => format!("fixed:{lambda_prime}:{beta}"),
        }
    }

    pub fn needs_validation(&self) -> bool {
        matches!(self, DenoiseStrategy::MmsePbGrid { .. })
    }

    /// Replaces the grid of a grid strategy (other variants unchanged).
    pub fn with_grid(self, grid: GridSpec, kappa: usize) -> Self {
        match self {
            DenoiseStrategy::MmsePbGrid { .. } => DenoiseStrategy::MmsePbGrid { grid, kappa },
            other => other,
        }
    }
}

impl fmt::Display for DenoiseStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Parses `ml`, `mmse`, `grid` (default grid and kappa) or
/// `fixed:<lambda'>:<beta>`.
impl FromStr for DenoiseStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "ml" => return Ok(DenoiseStrategy::Ml),
            "mmse" => return Ok(DenoiseStrategy::Mmse),
            "grid" => return Ok(DenoiseStrategy::grid_default()),
            _ => {}
        }
        let bad = || Error::invalid("strategy", format!("expected ml, mmse, grid or fixed:<lambda'>:<beta>, got {s:?}"));
        let rest = s.strip_prefix("fixed:").ok_or_else(bad)?;
        let (lp, beta) = rest.split_once(':').ok_or_else(bad)?;
        Ok(DenoiseStrategy::MmsePbFixed {
            lambda_prime: lp.trim().parse().map_err(|_| bad())?,
            beta: beta.trim().parse().map_err(|_| bad())?,
        })
    }
}

/// Outcome of applying a strategy to one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Applied {
    pub estimate: WeightVector,
    pub temperature: NormalizedTemperature,
    pub factors: LinearDenoiser,
    /// The requested strategy was infeasible at these statistics and ML was
    /// used instead.
    pub fell_back: bool,
}

fn ml(r: &WeightVector, fell_back: bool) -> Applied {
    Applied {
        estimate: r.clone(),
        temperature: NormalizedTemperature::ML,
        factors: LinearDenoiser::IDENTITY,
        fell_back,
    }
}

fn fixed(r: &WeightVector, t: NormalizedTemperature, p: &PriorStats) -> Applied {
    match normalized_factors(t, p) {
        Ok(factors) => Applied {
            estimate: factors.apply(r),
            temperature: t,
            factors,
            fell_back: false,
        },
        Err(_) => ml(r, true),
    }
}

/// Applies `strategy` to `r` under prior `p`.
///
/// The MMSE_pb strategies use the zero-prior-mean form `theta r + rho` with
/// `rho = var_w var_z beta / den` (the sample mean of network weights is
/// close to zero), so `lambda' = 1, beta = 0` is exactly ML; the MMSE
/// strategy keeps the `mu_w` term. The general form remains available
/// through [`crate::denoiser::normalized_factors`].
///
/// The grid strategy needs `validation = Some((evaluator, examples))`; the
/// evaluator scores a candidate estimate of `r`. Infeasible parameters fall
/// back to ML and set [`Applied::fell_back`].
pub fn apply_strategy<M>(
    strategy: &DenoiseStrategy,
    r: &WeightVector,
    p: &PriorStats,
    validation: Option<(&M, &M::Examples)>,
) -> Result<Applied>
where
    M: ModelEvaluator + Sync,
    M::Examples: Sync,
{
    match *strategy {
        DenoiseStrategy::Ml => Ok(ml(r, false)),
        DenoiseStrategy::Mmse => Ok(fixed(r, NormalizedTemperature::MMSE, p)),
        DenoiseStrategy::MmsePbFixed { lambda_prime, beta } => {
            Ok(fixed(r, NormalizedTemperature::new(lambda_prime, beta), &p.centered()))
        }
        DenoiseStrategy::MmsePbGrid { grid, .. } => {
            let p = &p.centered();
            let (model, examples) = validation.ok_or(Error::Empty("validation set for grid strategy"))?;
            if !(p.var_w > 0.0) && grid.beta_relative {
                return Ok(ml(r, true));
            }
            let score = validation_score_builder(model, examples, r, *p)?;
            match grid_search_parallel(score, &grid, p) {
                Ok(res) => Ok(fixed(r, res.best(), p)),
                Err(Error::NoFeasibleCell) => Ok(ml(r, true)),
                Err(e) => Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Dummy;

    impl ModelEvaluator for Dummy {
        type Examples = [f64];

        fn param_count(&self) -> usize {
            2
        }

        fn example_count(&self, e: &[f64]) -> usize {
            e.len()
        }

        /// Prefers estimates close to the target.
        fn accuracy(&self, params: &[f64], target: &[f64]) -> f64 {
            let d: f64 = params.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum();
            1.0 / (1.0 + d)
        }
    }

    fn r() -> WeightVector {
        WeightVector::new(vec![1.0, -3.0]).unwrap()
    }

    #[test]
    fn parse_and_name_round_trip() {
        for s in ["ml", "mmse", "grid", "fixed:0.9:-0.1"] {
            assert_eq!(s.parse::<DenoiseStrategy>().unwrap().name(), s);
        }
        assert!("fixed:1".parse::<DenoiseStrategy>().is_err());
        assert!("mle".parse::<DenoiseStrategy>().is_err());
    }

    #[test]
    fn ml_is_identity() {
        let p = PriorStats::new(0.0, 1.0, 1.0).unwrap();
        let a = apply_strategy::<Dummy>(&DenoiseStrategy::Ml, &r(), &p, None).unwrap();
        assert_eq!(a.estimate, r());
        assert!(!a.fell_back);
    }

    #[test]
    fn pb_strategies_ignore_prior_mean() {
        let p = PriorStats::new(0.8, 1.0, 2.0).unwrap();
        let s = DenoiseStrategy::MmsePbFixed {
            lambda_prime: 1.0,
            beta: 0.0,
        };
        let a = apply_strategy::<Dummy>(&s, &r(), &p, None).unwrap();
        assert_eq!(a.estimate, r());
        let m = apply_strategy::<Dummy>(&DenoiseStrategy::Mmse, &r(), &p, None).unwrap();
        assert_eq!(m.factors.rho, 0.8 * 2.0 / 3.0);
    }

    #[test]
    fn infeasible_fixed_falls_back() {
        let p = PriorStats::new(0.0, 0.1, 1.0).unwrap();
        let s = DenoiseStrategy::MmsePbFixed {
            lambda_prime: 1.2,
            beta: 0.0,
        };
        let a = apply_strategy::<Dummy>(&s, &r(), &p, None).unwrap();
        assert!(a.fell_back);
        assert_eq!(a.estimate, r());
        assert_eq!(a.temperature, NormalizedTemperature::ML);
    }

    #[test]
    fn grid_requires_validation_and_picks_best() {
        let p = PriorStats::new(0.0, 1.0, 1.0).unwrap();
        let s = DenoiseStrategy::grid_default();
        assert!(apply_strategy::<Dummy>(&s, &r(), &p, None).is_err());
        // target is r shrunk by one half: lambda' = 0 gives theta = 1/2
        let target = [0.5, -1.5];
        let g = GridSpec {
            lambda_prime: crate::search::AxisSpec::new(0.0, 1.5, 0.1),
            beta: crate::search::AxisSpec::new(0.0, 0.0, 1.0),
            beta_relative: false,
        };
        let a = apply_strategy(&s.with_grid(g, 2), &r(), &p, Some((&Dummy, &target[..]))).unwrap();
        assert_eq!(a.temperature.lambda_prime, 0.0);
        assert_eq!(a.estimate.values(), &target);
    }
}
