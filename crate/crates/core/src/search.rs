//! Exhaustive grid search over normalized temperatures `(lambda', beta)`.
//!
//! Scores are maximised. Cells with `lambda' >= 1 + var_w/var_z` are recorded
//! as infeasible and never evaluated. Ties go to the cell closest to the ML
//! point: smallest `|lambda' - 1|`, then smallest `|beta|`, then the
//! lexicographically smallest `(lambda', beta)`.

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::denoiser::{lambda_prime_bound, normalized_factors, NormalizedTemperature};
use crate::error::{Error, Result};
use crate::stats::{PriorStats, WeightVector};

/// Inclusive range `min, min + step, ...` up to `max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl AxisSpec {
    pub const fn new(min: f64, max: f64, step: f64) -> Self {
        Self { min, max, step }
    }

    pub fn validate(&self, name: &'static str) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite() && self.step.is_finite()) {
            return Err(Error::invalid(name, "bounds must be finite"));
        }
        if self.min > self.max {
            return Err(Error::invalid(name, format!("min {} > max {}", self.min, self.max)));
        }
        if !(self.step > 0.0) {
            return Err(Error::invalid(name, format!("step must be > 0, got {}", self.step)));
        }
        Ok(())
    }

    /// Grid values computed as `min + k step` (no accumulation). Values
    /// within rounding of zero are snapped to exactly zero so that a
    /// symmetric axis always contains `beta = 0`.
    pub fn values(&self) -> Vec<f64> {
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        (0..n)
            .map(|k| {
                let v = self.min + k as f64 * self.step;
                if v.abs() < 1e-9 * self.step {
                    0.0
                } else {
                    v
                }
            })
            .collect()
    }

    fn scaled(&self, factor: f64) -> AxisSpec {
        AxisSpec::new(self.min * factor, self.max * factor, self.step * factor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lambda_prime: AxisSpec,
    pub beta: AxisSpec,
    /// When set, the `beta` axis is in units of `1/sigma_w` and is rescaled
    /// by the prior at search time.
    pub beta_relative: bool,
}

impl Default for GridSpec {
    /// `lambda' in [0.70, 1.30]` step 0.01, `beta in [-0.5, 0.5] / sigma_w`
    /// step `0.05 / sigma_w`.
    fn default() -> Self {
        Self {
            lambda_prime: AxisSpec::new(0.70, 1.30, 0.01),
            beta: AxisSpec::new(-0.5, 0.5, 0.05),
            beta_relative: true,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        self.lambda_prime.validate("grid.lambda_prime")?;
        self.beta.validate("grid.beta")?;
        if self.lambda_prime.min < 0.0 {
            return Err(Error::invalid("grid.lambda_prime", "values must be >= 0"));
        }
        Ok(())
    }

    /// Resolves a relative `beta` axis against the prior weight variance.
    pub fn resolve(&self, var_w: f64) -> Result<GridSpec> {
        if !self.beta_relative {
            return Ok(*self);
        }
        if !(var_w > 0.0) {
            return Err(Error::invalid("var_w", "relative beta axis needs var_w > 0"));
        }
        Ok(GridSpec {
            lambda_prime: self.lambda_prime,
            beta: self.beta.scaled(1.0 / var_w.sqrt()),
            beta_relative: false,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.lambda_prime.values().len() * self.beta.values().len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceCell {
    pub lambda_prime: f64,
    pub beta: f64,
    /// `NaN` for infeasible cells.
    pub score: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub best_lambda_prime: f64,
    pub best_beta: f64,
    pub best_score: f64,
    /// Row-major in `lambda'` then `beta`.
    pub surface: Vec<SurfaceCell>,
}

impl SearchResult {
    pub fn best(&self) -> NormalizedTemperature {
        NormalizedTemperature::new(self.best_lambda_prime, self.best_beta)
    }

    /// CSV with header `lambda_prime,beta,score,feasible`.
    pub fn surface_csv(&self) -> String {
        let mut out = String::from("lambda_prime,beta,score,feasible\n");
        for c in &self.surface {
            out.push_str(&format!("{},{},{},{}\n", c.lambda_prime, c.beta, c.score, c.feasible));
        }
        out
    }
}

fn cells(grid: &GridSpec, p: &PriorStats) -> Result<Vec<(f64, f64, bool)>> {
    grid.validate()?;
    let grid = grid.resolve(p.var_w)?;
    let bound = lambda_prime_bound(p);
    let betas = grid.beta.values();
    Ok(grid
        .lambda_prime
        .values()
        .into_iter()
        .flat_map(|lp| betas.iter().map(move |&b| (lp, b, lp >= 0.0 && lp < bound)))
        .collect())
}

/// `Greater` when `a` should win over `b`.
fn prefer(a: &SurfaceCell, b: &SurfaceCell) -> Ordering {
    a.score
        .total_cmp(&b.score)
        .then_with(|| (b.lambda_prime - 1.0).abs().total_cmp(&(a.lambda_prime - 1.0).abs()))
        .then_with(|| b.beta.abs().total_cmp(&a.beta.abs()))
        .then_with(|| b.lambda_prime.total_cmp(&a.lambda_prime))
        .then_with(|| b.beta.total_cmp(&a.beta))
}

fn finish(surface: Vec<SurfaceCell>) -> Result<SearchResult> {
    let best = surface
        .iter()
        .filter(|c| c.feasible)
        .copied()
        .reduce(|best, c| if prefer(&c, &best) == Ordering::Greater { c } else { best })
        .ok_or(Error::NoFeasibleCell)?;
    Ok(SearchResult {
        best_lambda_prime: best.lambda_prime,
        best_beta: best.beta,
        best_score: best.score,
        surface,
    })
}

/// Sequential search; `score` is only called on feasible cells.
pub fn grid_search<F>(mut score: F, grid: &GridSpec, p: &PriorStats) -> Result<SearchResult>
where
    F: FnMut(f64, f64) -> f64,
{
    let surface = cells(grid, p)?
        .into_iter()
        .map(|(lambda_prime, beta, feasible)| SurfaceCell {
            lambda_prime,
            beta,
            score: if feasible { score(lambda_prime, beta) } else { f64::NAN },
            feasible,
        })
        .collect();
    finish(surface)
}

/// Parallel variant for scorers that are safe to call concurrently. The
/// result is identical to [`grid_search`].
pub fn grid_search_parallel<F>(score: F, grid: &GridSpec, p: &PriorStats) -> Result<SearchResult>
where
    F: Fn(f64, f64) -> f64 + Sync,
{
    let surface = cells(grid, p)?
        .into_par_iter()
        .map(|(lambda_prime, beta, feasible)| SurfaceCell {
            lambda_prime,
            beta,
            score: if feasible { score(lambda_prime, beta) } else { f64::NAN },
            feasible,
        })
        .collect();
    finish(surface)
}

/// Something that scores a flat parameter vector on a labelled example set.
pub trait ModelEvaluator {
    type Examples: ?Sized;

    fn param_count(&self) -> usize;

    fn example_count(&self, examples: &Self::Examples) -> usize;

    /// Accuracy in `[0, 1]`.
    fn accuracy(&self, params: &[f64], examples: &Self::Examples) -> f64;
}

/// Builds the validation scorer `(lambda', beta) -> accuracy` that denoises
/// `r` with the given prior and evaluates the result.
pub fn validation_score_builder<'a, M>(
    model: &'a M,
    validation: &'a M::Examples,
    r: &'a WeightVector,
    p: PriorStats,
) -> Result<impl Fn(f64, f64) -> f64 + Sync + 'a>
where
    M: ModelEvaluator + Sync,
    M::Examples: Sync,
{
    if model.example_count(validation) == 0 {
        return Err(Error::Empty("validation set"));
    }
    if r.len() != model.param_count() {
        return Err(Error::LengthMismatch {
            what: "weights for model",
            expected: model.param_count(),
            found: r.len(),
        });
    }
    Ok(move |lambda_prime: f64, beta: f64| {
        match normalized_factors(NormalizedTemperature::new(lambda_prime, beta), &p) {
            Ok(f) => model.accuracy(f.apply(r).values(), validation),
            Err(_) => f64::NEG_INFINITY,
        }
    })
}
