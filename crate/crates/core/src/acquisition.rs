//! Expected improvement and its maximization over the encoded space.
//!
//! Scores are minimized, so improvement is measured below the incumbent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::gp::{GpError, GpModel, PredictionGradient};
use crate::space::{Configuration, SearchSpace, SpaceError, UnitVector};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Error)]
pub enum AcquisitionError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Best observation so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Incumbent {
    pub best_score: f64,
    pub best_config: Configuration,
    pub trial_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    pub u: UnitVector,
    pub config: Configuration,
    pub ei_value: f64,
}

/// Search effort spent by [`maximize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcquisitionBudget {
    /// Random candidates per dimension.
    pub candidates_per_dim: usize,
    /// Gradient-ascent starts taken from the best candidates.
    pub ascent_starts: usize,
    pub max_ascent_iters: usize,
    /// Standard deviation of the jitter applied to training inputs.
    pub perturbation_sd: f64,
}

impl Default for AcquisitionBudget {
    fn default() -> Self {
        Self {
            candidates_per_dim: 512,
            ascent_starts: 10,
            max_ascent_iters: 100,
            perturbation_sd: 0.05,
        }
    }
}

pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Closed-form `E[max(y' − Y, 0)]` for `Y ~ N(mean, variance)`.
pub fn expected_improvement(mean: f64, variance: f64, incumbent_score: f64) -> f64 {
    let improvement = incumbent_score - mean;
    let sigma = variance.max(0.0).sqrt();
    if sigma == 0.0 {
        return improvement.max(0.0);
    }
    let z = improvement / sigma;
    (improvement * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// EI at `u` together with its analytic gradient.
pub fn ei_with_gradient(model: &GpModel, incumbent_score: f64, u: &[f64]) -> Result<(f64, Vec<f64>), GpError> {
    let pg = model.predict_with_gradient(u)?;
    Ok(ei_chain_rule(&pg, incumbent_score))
}

fn ei_chain_rule(pg: &PredictionGradient, incumbent_score: f64) -> (f64, Vec<f64>) {
    let p = pg.prediction;
    let ei = expected_improvement(p.mean, p.variance, incumbent_score);
    if p.variance <= 0.0 {
        return (ei, vec![0.0; pg.d_mean.len()]);
    }
    let sigma = p.variance.sqrt();
    let z = (incumbent_score - p.mean) / sigma;
    let (cdf, pdf) = (normal_cdf(z), normal_pdf(z));
    let grad = pg
        .d_mean
        .iter()
        .zip(&pg.d_variance)
        .map(|(dm, dv)| -cdf * dm + pdf * dv / (2.0 * sigma))
        .collect();
    (ei, grad)
}

/// Gradient of EI∘predict with respect to the encoded coordinates. Zero where
/// the posterior variance clamps to zero.
pub fn ei_gradient(model: &GpModel, incumbent_score: f64, u: &[f64]) -> Result<Vec<f64>, GpError> {
    ei_with_gradient(model, incumbent_score, u).map(|(_, g)| g)
}

fn ei_at(model: &GpModel, incumbent_score: f64, u: &[f64]) -> Result<f64, GpError> {
    let p = model.predict(u)?;
    Ok(expected_improvement(p.mean, p.variance, incumbent_score))
}

/// Projected gradient ascent on `[0, 1]^d` with backtracking.
fn ascend(model: &GpModel, incumbent_score: f64, start: &[f64], max_iters: usize) -> Result<(Vec<f64>, f64), GpError> {
    let mut x = start.to_vec();
    let (mut f, mut g) = ei_with_gradient(model, incumbent_score, &x)?;
    let mut step = f64::NAN;
    for _ in 0..max_iters {
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax == 0.0 || !gmax.is_finite() {
            break;
        }
        if !step.is_finite() {
            step = 0.05 / gmax;
        }
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| (xi + step * gi).clamp(0.0, 1.0)).collect();
            let ft = ei_at(model, incumbent_score, &trial)?;
            if ft > f {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft)) = accepted else { break };
        let moved = trial.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        x = trial;
        f = ft;
        step *= 2.0;
        if moved < 1e-12 {
            break;
        }
        g = ei_with_gradient(model, incumbent_score, &x)?.1;
    }
    Ok((x, f))
}

/// Proposes the next configuration by maximizing EI with the default budget.
pub fn maximize(
    model: &GpModel,
    space: &SearchSpace,
    incumbent: &Incumbent,
    rng_seed: u64,
) -> Result<Proposal, AcquisitionError> {
    maximize_with_budget(model, space, incumbent, rng_seed, &AcquisitionBudget::default())
}

/// Random candidates are drawn and snapped to feasible points first, so
/// every scored candidate is itself a valid proposal. The best candidates
/// seed projected gradient ascent in the relaxed cube; ascent end points are
/// snapped and re-scored. Points identical to a training input are skipped
/// unless nothing else remains.
pub fn maximize_with_budget(
    model: &GpModel,
    space: &SearchSpace,
    incumbent: &Incumbent,
    rng_seed: u64,
    budget: &AcquisitionBudget,
) -> Result<Proposal, AcquisitionError> {
    let d = space.dim();
    if model.dim() != d {
        return Err(GpError::DimensionMismatch {
            expected: d,
            got: model.dim(),
        }
        .into());
    }
    let y_best = incumbent.best_score;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let jitter = Normal::new(0.0, budget.perturbation_sd).expect("finite perturbation sd");

    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(budget.candidates_per_dim * d + model.len());
    for _ in 0..budget.candidates_per_dim * d {
        let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        candidates.push(space.snap(&u)?);
    }
    for x in model.inputs() {
        let u: Vec<f64> = x.iter().map(|v| (v + jitter.sample(&mut rng)).clamp(0.0, 1.0)).collect();
        candidates.push(space.snap(&u)?);
    }

    let scores = candidates
        .iter()
        .map(|u| ei_at(model, y_best, u))
        .collect::<Result<Vec<f64>, _>>()?;

    let mut order: Vec<usize> = (0..candidates.len()).collect();
    // stable sort: equal scores keep lower candidate index first
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut pool: Vec<(Vec<f64>, f64)> = candidates.into_iter().zip(scores).collect();
    for &start in order.iter().take(budget.ascent_starts) {
        let (relaxed, _) = ascend(model, y_best, &pool[start].0, budget.max_ascent_iters)?;
        let snapped = space.snap(&relaxed)?;
        let ei = ei_at(model, y_best, &snapped)?;
        pool.push((snapped, ei));
    }

    let is_duplicate = |u: &[f64]| model.inputs().iter().any(|x| x.as_slice() == u);
    let pick = |allow_dup: bool| {
        let mut best: Option<usize> = None;
        for (i, (u, ei)) in pool.iter().enumerate() {
            if !allow_dup && is_duplicate(u) {
                continue;
            }
            if best.is_none_or(|b| *ei > pool[b].1) {
                best = Some(i);
            }
        }
        best
    };
    let chosen = pick(false).or_else(|| pick(true)).expect("candidate pool is non-empty");
    let (u, ei_value) = pool.swap_remove(chosen);
    let config = space.decode_slice(&u)?;
    Ok(Proposal {
        u: UnitVector::clamped(u),
        config,
        ei_value,
    })
}
