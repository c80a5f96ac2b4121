//! Gaussian-process regression on the unit hypercube.
//!
//! Matérn-5/2 kernel with one lengthscale per dimension (ARD). Targets are
//! standardized before fitting and predictions are reported in raw units.
//! Kernel hyperparameters are fitted by maximizing the log marginal
//! likelihood with multi-start BFGS in log-parameter space.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const SQRT5: f64 = 2.236_067_977_499_79;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Relative jitter added to the diagonal on the first factorization attempt.
pub const JITTER_START: f64 = 1e-10;
/// Largest relative jitter tried before giving up.
pub const JITTER_MAX: f64 = 1e-4;

/// Number of random restarts of the likelihood optimizer.
pub const FIT_RESTARTS: usize = 8;
/// Iteration cap per restart.
pub const FIT_MAX_ITERS: usize = 200;

// Initial-point ranges for restarts (standardized units).
const INIT_LENGTHSCALE: (f64, f64) = (0.05, 2.0);
const INIT_SIGNAL: (f64, f64) = (0.1, 10.0);
const INIT_NOISE: (f64, f64) = (1e-6, 1e-1);

// Box on the fitted parameters.
const BOX_LENGTHSCALE: (f64, f64) = (1e-2, 1e2);
const BOX_SIGNAL: (f64, f64) = (1e-2, 1e2);
const BOX_NOISE: (f64, f64) = (1e-8, 1.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no training data")]
    Empty,
    #[error("training targets and inputs differ in length ({inputs} inputs, {targets} targets)")]
    LengthMismatch { inputs: usize, targets: usize },
    #[error("non-finite training target at index {0}")]
    NonFiniteTarget(usize),
    #[error("invalid kernel parameters: {0}")]
    InvalidParams(String),
    #[error("kernel matrix not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64) -> Result<Self, GpError> {
        let p = Self {
            lengthscales,
            signal_variance,
            noise_variance,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn isotropic(dim: usize, lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self, GpError> {
        Self::new(vec![lengthscale; dim], signal_variance, noise_variance)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    fn validate(&self) -> Result<(), GpError> {
        if self.lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(GpError::InvalidParams("lengthscales must be positive".into()));
        }
        if !(self.signal_variance.is_finite() && self.signal_variance > 0.0) {
            return Err(GpError::InvalidParams("signal variance must be positive".into()));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance >= 0.0) {
            return Err(GpError::InvalidParams("noise variance must be non-negative".into()));
        }
        Ok(())
    }

    /// `[log l_1, .., log l_d, log signal, log noise]`.
    pub fn to_log_vec(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_variance.ln());
        v.push(self.noise_variance.ln());
        v
    }

    pub fn from_log_vec(theta: &[f64]) -> Self {
        let d = theta.len() - 2;
        Self {
            lengthscales: theta[..d].iter().map(|t| t.exp()).collect(),
            signal_variance: theta[d].exp(),
            noise_variance: theta[d + 1].exp(),
        }
    }
}

fn check_dim(expected: usize, got: usize) -> Result<(), GpError> {
    if expected == got {
        Ok(())
    } else {
        Err(GpError::DimensionMismatch { expected, got })
    }
}

fn scaled_distance(lengthscales: &[f64], a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(lengthscales)
        .map(|((x, y), l)| {
            let s = (x - y) / l;
            s * s
        })
        .sum::<f64>()
        .sqrt()
}

fn matern52(signal: f64, r: f64) -> f64 {
    let s = SQRT5 * r;
    signal * (1.0 + s + s * s / 3.0) * (-s).exp()
}

/// `-(1/r) dk/dr` for the Matérn-5/2 kernel; finite at `r = 0`.
fn matern52_radial(signal: f64, r: f64) -> f64 {
    let s = SQRT5 * r;
    signal * (5.0 / 3.0) * (1.0 + s) * (-s).exp()
}

/// Matérn-5/2 ARD covariance between two points.
pub fn kernel_eval(params: &KernelParams, a: &[f64], b: &[f64]) -> Result<f64, GpError> {
    check_dim(params.dim(), a.len())?;
    check_dim(params.dim(), b.len())?;
    Ok(matern52(params.signal_variance, scaled_distance(&params.lengthscales, a, b)))
}

fn kernel_matrix(params: &KernelParams, x: &[Vec<f64>]) -> DMatrix<f64> {
    let t = x.len();
    let mut k = DMatrix::zeros(t, t);
    for i in 0..t {
        k[(i, i)] = params.signal_variance;
        for j in 0..i {
            let v = matern52(params.signal_variance, scaled_distance(&params.lengthscales, &x[i], &x[j]));
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky factor of `K + (noise + jitter) I` with jitter escalation.
fn factorize(params: &KernelParams, x: &[Vec<f64>]) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let k = kernel_matrix(params, x);
    let mut rel = JITTER_START;
    loop {
        let jitter = rel * params.signal_variance;
        let mut m = k.clone();
        for i in 0..x.len() {
            m[(i, i)] += params.noise_variance + jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
        if rel >= JITTER_MAX {
            return Err(GpError::NotPositiveDefinite { jitter });
        }
        rel *= 10.0;
    }
}

fn check_data(dim: usize, x: &[Vec<f64>], y: &[f64]) -> Result<(), GpError> {
    if x.is_empty() {
        return Err(GpError::Empty);
    }
    if x.len() != y.len() {
        return Err(GpError::LengthMismatch {
            inputs: x.len(),
            targets: y.len(),
        });
    }
    for xi in x {
        check_dim(dim, xi.len())?;
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(GpError::NonFiniteTarget(i));
    }
    Ok(())
}

/// `-½ yᵀK⁻¹y − ½ log|K| − (t/2) log 2π` with `K = K_f + (noise + jitter) I`.
pub fn log_marginal_likelihood(params: &KernelParams, x: &[Vec<f64>], y: &[f64]) -> Result<f64, GpError> {
    params.validate()?;
    check_data(params.dim(), x, y)?;
    let (chol, _) = factorize(params, x)?;
    Ok(lml_from_factor(&chol, y))
}

fn lml_from_factor(chol: &Cholesky<f64, Dyn>, y: &[f64]) -> f64 {
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * yv.dot(&alpha) - 0.5 * log_det - 0.5 * y.len() as f64 * LN_2PI
}

/// Log marginal likelihood and its gradient with respect to
/// [`KernelParams::to_log_vec`]. The jitter is held fixed when differentiating.
pub fn lml_with_gradient(params: &KernelParams, x: &[Vec<f64>], y: &[f64]) -> Result<(f64, Vec<f64>), GpError> {
    params.validate()?;
    check_data(params.dim(), x, y)?;
    let (chol, _) = factorize(params, x)?;
    let lml = lml_from_factor(&chol, y);

    let t = x.len();
    let d = params.dim();
    let alpha = chol.solve(&DVector::from_column_slice(y));
    let k_inv = chol.inverse();
    // W = ααᵀ − K⁻¹ ; dLML/dθ = ½ tr(W dK/dθ)
    let w = |i: usize, j: usize| alpha[i] * alpha[j] - k_inv[(i, j)];

    let mut grad = vec![0.0; d + 2];
    let inv_l2: Vec<f64> = params.lengthscales.iter().map(|l| 1.0 / (l * l)).collect();
    let mut signal_term = 0.0;
    let mut trace_w = 0.0;
    for i in 0..t {
        let wii = w(i, i);
        trace_w += wii;
        signal_term += wii * params.signal_variance;
        for j in 0..i {
            let wij = w(i, j);
            let r = scaled_distance(&params.lengthscales, &x[i], &x[j]);
            signal_term += 2.0 * wij * matern52(params.signal_variance, r);
            let g = 2.0 * wij * matern52_radial(params.signal_variance, r);
            for (k, gk) in grad.iter_mut().take(d).enumerate() {
                let delta = x[i][k] - x[j][k];
                *gk += g * delta * delta * inv_l2[k];
            }
        }
    }
    for gk in grad.iter_mut().take(d) {
        *gk *= 0.5;
    }
    grad[d] = 0.5 * signal_term;
    grad[d + 1] = 0.5 * trace_w * params.noise_variance;
    Ok((lml, grad))
}

/// Shift and scale applied to raw targets before fitting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub scale: f64,
}

impl Standardization {
    /// Zero mean and unit (population) variance; constant targets keep scale 1.
    pub fn from_targets(y: &[f64]) -> Self {
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        let scale = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
        Self { mean, scale }
    }

    pub fn apply(&self, y: f64) -> f64 {
        (y - self.mean) / self.scale
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorPrediction {
    pub mean: f64,
    pub variance: f64,
}

impl PosteriorPrediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Posterior prediction together with its spatial gradient, raw units.
#[derive(Debug, Clone)]
pub struct PredictionGradient {
    pub prediction: PosteriorPrediction,
    pub d_mean: Vec<f64>,
    pub d_variance: Vec<f64>,
}

/// Serializable form of a fitted model; the factorization is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpSnapshot {
    pub kernel: KernelParams,
    pub standardization: Standardization,
    pub x: Vec<Vec<f64>>,
    pub y_raw: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    y_raw: Vec<f64>,
    y_std: Vec<f64>,
    standardization: Standardization,
    kernel: KernelParams,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

impl GpModel {
    /// Builds a model with fixed kernel parameters, standardizing `y_raw`.
    pub fn with_params(x: Vec<Vec<f64>>, y_raw: Vec<f64>, kernel: KernelParams) -> Result<Self, GpError> {
        if y_raw.is_empty() {
            return Err(GpError::Empty);
        }
        let standardization = Standardization::from_targets(&y_raw);
        Self::from_parts(x, y_raw, kernel, standardization)
    }

    pub fn from_parts(
        x: Vec<Vec<f64>>,
        y_raw: Vec<f64>,
        kernel: KernelParams,
        standardization: Standardization,
    ) -> Result<Self, GpError> {
        kernel.validate()?;
        check_data(kernel.dim(), &x, &y_raw)?;
        let y_std: Vec<f64> = y_raw.iter().map(|&v| standardization.apply(v)).collect();
        let (chol, jitter) = factorize(&kernel, &x)?;
        let alpha = chol.solve(&DVector::from_column_slice(&y_std));
        Ok(Self {
            x,
            y_raw,
            y_std,
            standardization,
            kernel,
            jitter,
            chol,
            alpha,
        })
    }

    pub fn from_snapshot(snapshot: GpSnapshot) -> Result<Self, GpError> {
        Self::from_parts(snapshot.x, snapshot.y_raw, snapshot.kernel, snapshot.standardization)
    }

    pub fn snapshot(&self) -> GpSnapshot {
        GpSnapshot {
            kernel: self.kernel.clone(),
            standardization: self.standardization,
            x: self.x.clone(),
            y_raw: self.y_raw.clone(),
        }
    }

    /// Fits kernel hyperparameters by multi-start maximization of the log
    /// marginal likelihood. Deterministic for a given seed and data.
    pub fn fit(x: Vec<Vec<f64>>, y_raw: Vec<f64>, rng_seed: u64) -> Result<Self, GpError> {
        let dim = x.first().ok_or(GpError::Empty)?.len();
        check_data(dim, &x, &y_raw)?;
        let standardization = Standardization::from_targets(&y_raw);
        let y_std: Vec<f64> = y_raw.iter().map(|&v| standardization.apply(v)).collect();

        let bounds = LogBox::new(dim);
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let starts: Vec<Vec<f64>> = (0..FIT_RESTARTS)
            .map(|_| initial_log_params(dim, &mut rng))
            .collect();

        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut last_err = None;
        for start in &starts {
            match maximize_lml(&bounds, start, &x, &y_std) {
                Ok((value, theta)) => {
                    // strict comparison keeps the lowest restart index on ties
                    if best.as_ref().is_none_or(|(b, _)| value > *b) {
                        best = Some((value, theta));
                    }
                }
                Err(e) => last_err = Some(e),
            }
        }
        let (_, theta) = match best {
            Some(b) => b,
            None => return Err(last_err.unwrap_or(GpError::Empty)),
        };
        Self::from_parts(x, y_raw, KernelParams::from_log_vec(&theta), standardization)
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn targets(&self) -> &[f64] {
        &self.y_raw
    }

    pub fn standardized_targets(&self) -> &[f64] {
        &self.y_std
    }

    /// Log marginal likelihood of the standardized targets under the model.
    pub fn log_marginal_likelihood(&self) -> f64 {
        lml_from_factor(&self.chol, &self.y_std)
    }

    fn cross_covariance(&self, u: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.x.len(),
            self.x
                .iter()
                .map(|xi| matern52(self.kernel.signal_variance, scaled_distance(&self.kernel.lengthscales, u, xi))),
        )
    }

    /// Posterior of the latent function in standardized units.
    pub fn predict_standardized(&self, u: &[f64]) -> Result<PosteriorPrediction, GpError> {
        check_dim(self.dim(), u.len())?;
        let ks = self.cross_covariance(u);
        let mean = ks.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&ks)
            .expect("cholesky factor has a positive diagonal");
        let variance = (self.kernel.signal_variance - v.norm_squared()).max(0.0);
        Ok(PosteriorPrediction { mean, variance })
    }

    pub fn predict(&self, u: &[f64]) -> Result<PosteriorPrediction, GpError> {
        let p = self.predict_standardized(u)?;
        let s = self.standardization;
        Ok(PosteriorPrediction {
            mean: s.mean + s.scale * p.mean,
            variance: s.scale * s.scale * p.variance,
        })
    }

    /// Raw-unit posterior with gradients of mean and variance with respect to `u`.
    pub fn predict_with_gradient(&self, u: &[f64]) -> Result<PredictionGradient, GpError> {
        check_dim(self.dim(), u.len())?;
        let d = self.dim();
        let ks = self.cross_covariance(u);
        let mean_std = ks.dot(&self.alpha);
        let w = self.chol.solve(&ks);
        let var_std = self.kernel.signal_variance - ks.dot(&w);

        let mut d_mean = vec![0.0; d];
        let mut d_var = vec![0.0; d];
        for (i, xi) in self.x.iter().enumerate() {
            let r = scaled_distance(&self.kernel.lengthscales, u, xi);
            let g = matern52_radial(self.kernel.signal_variance, r);
            for k in 0..d {
                let l = self.kernel.lengthscales[k];
                // dk/du_k = -g * (u_k - x_k) / l_k²
                let dk = -g * (u[k] - xi[k]) / (l * l);
                d_mean[k] += dk * self.alpha[i];
                d_var[k] -= 2.0 * dk * w[i];
            }
        }

        let s = self.standardization;
        let s2 = s.scale * s.scale;
        Ok(PredictionGradient {
            prediction: PosteriorPrediction {
                mean: s.mean + s.scale * mean_std,
                variance: s2 * var_std.max(0.0),
            },
            d_mean: d_mean.into_iter().map(|g| g * s.scale).collect(),
            d_variance: d_var.into_iter().map(|g| g * s2).collect(),
        })
    }
}

fn initial_log_params(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut log_uniform = |(lo, hi): (f64, f64)| lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln());
    let mut theta: Vec<f64> = (0..dim).map(|_| log_uniform(INIT_LENGTHSCALE)).collect();
    theta.push(log_uniform(INIT_SIGNAL));
    theta.push(log_uniform(INIT_NOISE));
    theta
}

/// Box in log-parameter space, mapped to an unconstrained space with a
/// scaled logistic: `θ = lo + (hi − lo) σ(z)`.
struct LogBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl LogBox {
    fn new(dim: usize) -> Self {
        let mut lo = vec![BOX_LENGTHSCALE.0.ln(); dim];
        let mut hi = vec![BOX_LENGTHSCALE.1.ln(); dim];
        lo.push(BOX_SIGNAL.0.ln());
        hi.push(BOX_SIGNAL.1.ln());
        lo.push(BOX_NOISE.0.ln());
        hi.push(BOX_NOISE.1.ln());
        Self { lo, hi }
    }

    fn to_theta(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut theta = Vec::with_capacity(z.len());
        let mut jac = Vec::with_capacity(z.len());
        for ((&zi, &lo), &hi) in z.iter().zip(&self.lo).zip(&self.hi) {
            let s = 1.0 / (1.0 + (-zi).exp());
            theta.push(lo + (hi - lo) * s);
            jac.push((hi - lo) * s * (1.0 - s));
        }
        (theta, jac)
    }

    fn to_z(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.lo)
            .zip(&self.hi)
            .map(|((&t, &lo), &hi)| {
                let p = ((t - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9);
                (p / (1.0 - p)).ln()
            })
            .collect()
    }
}

/// Negative LML and gradient in the unconstrained coordinates.
fn objective_z(bounds: &LogBox, z: &[f64], x: &[Vec<f64>], y: &[f64]) -> Option<(f64, Vec<f64>)> {
    let (theta, jac) = bounds.to_theta(z);
    let params = KernelParams::from_log_vec(&theta);
    let (lml, grad) = lml_with_gradient(&params, x, y).ok()?;
    if !lml.is_finite() {
        return None;
    }
    Some((-lml, grad.iter().zip(&jac).map(|(g, j)| -g * j).collect()))
}

/// BFGS with Armijo backtracking, minimizing `-LML`. Returns the final LML
/// and log-parameters; never ends below the starting value.
fn maximize_lml(bounds: &LogBox, start: &[f64], x: &[Vec<f64>], y: &[f64]) -> Result<(f64, Vec<f64>), GpError> {
    let n = start.len();
    let mut z = bounds.to_z(start);
    let (mut f, mut g) = match objective_z(bounds, &z, x, y) {
        Some(v) => v,
        None => {
            // surface the underlying error for the caller
            let params = KernelParams::from_log_vec(&bounds.to_theta(&z).0);
            lml_with_gradient(&params, x, y)?;
            return Err(GpError::InvalidParams("non-finite likelihood".into()));
        }
    };
    let mut h = DMatrix::<f64>::identity(n, n);

    for _ in 0..FIT_MAX_ITERS {
        let gv = DVector::from_column_slice(&g);
        if gv.amax() < 1e-6 {
            break;
        }
        let mut dir = -(&h * &gv);
        let mut slope = dir.dot(&gv);
        if slope >= 0.0 {
            h = DMatrix::identity(n, n);
            dir = -gv.clone();
            slope = dir.dot(&gv);
        }
        // cap the step length so the first trial stays in a sane range
        let max_step = 5.0;
        let norm = dir.norm();
        if norm > max_step {
            dir *= max_step / norm;
            slope *= max_step / norm;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = z.iter().zip(dir.iter()).map(|(zi, di)| zi + step * di).collect();
            if let Some((ft, gt)) = objective_z(bounds, &trial, x, y) {
                if ft <= f + 1e-4 * step * slope {
                    accepted = Some((trial, ft, gt));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((z_new, f_new, g_new)) = accepted else {
            break;
        };

        let s = DVector::from_iterator(n, z_new.iter().zip(&z).map(|(a, b)| a - b));
        let yk = DVector::from_iterator(n, g_new.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&yk);
        let rel_change = (f - f_new).abs() / f.abs().max(1.0);
        z = z_new;
        f = f_new;
        g = g_new;
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - rho * &s * yk.transpose();
            let right = &i - rho * &yk * s.transpose();
            h = &left * &h * &right + rho * &s * s.transpose();
        }
        if rel_change < 1e-12 {
            break;
        }
    }
    Ok((-f, bounds.to_theta(&z).0))
}
