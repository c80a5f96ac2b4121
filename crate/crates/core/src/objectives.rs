//! Score functions the tuner minimizes.
//!
//! Three families: classic synthetic benchmarks, seeded per-speaker
//! surrogate losses whose optimum moves from speaker to speaker, and an
//! adapter that scores a configuration by running an external training job.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::seeding::{derive_seed, Stream};
use crate::space::{Configuration, ParamValue, ParameterSpec, Scale, SearchSpace, SpaceError, UnitVector};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(#[from] SpaceError),
    #[error("external objective failed: {message}")]
    External { message: String, stderr: String },
    #[error("external objective timed out after {0:?}")]
    Timeout(Duration),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Synthetic,
    SpeakerSurrogate,
    External,
}

/// Per-evaluation metadata handed to an objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalContext {
    pub trial_index: usize,
    /// Seed of the run the trial belongs to.
    pub run_seed: u64,
    /// Seed for any evaluation noise.
    pub eval_seed: u64,
}

impl EvalContext {
    pub fn new(trial_index: usize, run_seed: u64) -> Self {
        Self {
            trial_index,
            run_seed,
            eval_seed: derive_seed(run_seed, Stream::Evaluation, trial_index as u64),
        }
    }
}

/// Anything that scores a configuration; lower is better.
pub trait Objective: Send + Sync {
    fn space(&self) -> &SearchSpace;

    fn kind(&self) -> ObjectiveKind;

    fn evaluate(&self, config: &Configuration, ctx: &EvalContext) -> Result<f64, ObjectiveError>;
}

/// Wraps a closure over configurations.
pub struct FnObjective<F> {
    space: SearchSpace,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&Configuration) -> f64 + Send + Sync,
{
    pub fn new(space: SearchSpace, f: F) -> Self {
        Self { space, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&Configuration) -> f64 + Send + Sync,
{
    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Synthetic
    }

    fn evaluate(&self, config: &Configuration, _ctx: &EvalContext) -> Result<f64, ObjectiveError> {
        let config = self.space.validate(config)?;
        Ok((self.f)(&config))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SyntheticFunction {
    /// Branin-Hoo on `[-5, 10] × [0, 15]`; global minimum 0.397887.
    Branin,
    /// Hartmann 6-D on `[0, 1]^6`; global minimum −3.32237.
    Hartmann6,
    /// `Σ (x_i − c_i)²` on `[0, 1]^d`.
    Sphere { center: Vec<f64> },
}

pub const BRANIN_MINIMUM: f64 = 0.397_887_357_729_738;
pub const HARTMANN6_MINIMUM: f64 = -3.322_368_011_391_339;

const HARTMANN6_ALPHA: [f64; 4] = [1.0, 1.2, 3.0, 3.2];
const HARTMANN6_A: [[f64; 6]; 4] = [
    [10.0, 3.0, 17.0, 3.5, 1.7, 8.0],
    [0.05, 10.0, 17.0, 0.1, 8.0, 14.0],
    [3.0, 3.5, 1.7, 10.0, 17.0, 8.0],
    [17.0, 8.0, 0.05, 10.0, 0.1, 14.0],
];
const HARTMANN6_P: [[f64; 6]; 4] = [
    [0.1312, 0.1696, 0.5569, 0.0124, 0.8283, 0.5886],
    [0.2329, 0.4135, 0.8307, 0.3736, 0.1004, 0.9991],
    [0.2348, 0.1451, 0.3522, 0.2883, 0.3047, 0.6650],
    [0.4047, 0.8828, 0.8732, 0.5743, 0.1091, 0.0381],
];

impl SyntheticFunction {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "branin" => Some(Self::Branin),
            "hartmann6" => Some(Self::Hartmann6),
            "sphere" => Some(Self::Sphere { center: vec![0.3; 2] }),
            _ => None,
        }
    }

    pub fn space(&self) -> SearchSpace {
        let cont = |n: &str, lo, hi| ParameterSpec::continuous(n, lo, hi, Scale::Linear).unwrap();
        let params = match self {
            Self::Branin => vec![cont("x1", -5.0, 10.0), cont("x2", 0.0, 15.0)],
            Self::Hartmann6 => (1..=6).map(|i| cont(&format!("x{i}"), 0.0, 1.0)).collect(),
            Self::Sphere { center } => (0..center.len()).map(|i| cont(&format!("x{i}"), 0.0, 1.0)).collect(),
        };
        SearchSpace::new(params).expect("synthetic spaces have unique names")
    }

    /// Evaluates on the native coordinates, in space order.
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Self::Branin => {
                let (x1, x2) = (x[0], x[1]);
                let pi = std::f64::consts::PI;
                let b = 5.1 / (4.0 * pi * pi);
                let c = 5.0 / pi;
                let t = 1.0 / (8.0 * pi);
                (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
            }
            Self::Hartmann6 => -(0..4)
                .map(|i| {
                    let inner: f64 = (0..6).map(|j| HARTMANN6_A[i][j] * (x[j] - HARTMANN6_P[i][j]).powi(2)).sum();
                    HARTMANN6_ALPHA[i] * (-inner).exp()
                })
                .sum::<f64>(),
            Self::Sphere { center } => x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum(),
        }
    }
}

/// A synthetic benchmark bound to its native search space.
#[derive(Debug, Clone)]
pub struct SyntheticObjective {
    function: SyntheticFunction,
    space: SearchSpace,
}

impl SyntheticObjective {
    pub fn new(function: SyntheticFunction) -> Self {
        let space = function.space();
        Self { function, space }
    }

    pub fn function(&self) -> &SyntheticFunction {
        &self.function
    }
}

impl Objective for SyntheticObjective {
    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::Synthetic
    }

    fn evaluate(&self, config: &Configuration, _ctx: &EvalContext) -> Result<f64, ObjectiveError> {
        let config = self.space.validate(config)?;
        let x: Vec<f64> = self
            .space
            .params()
            .iter()
            .map(|p| config.get_f64(p.name()).expect("synthetic spaces are numeric"))
            .collect();
        Ok(self.function.value(&x))
    }
}

/// Distribution of per-speaker loss landscapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateFamily {
    /// Log-uniform range of per-dimension curvatures.
    pub curvature: (f64, f64),
    /// Uniform range of per-dimension ruggedness frequencies.
    pub frequency: (f64, f64),
    pub rugged_amplitude: f64,
    pub noise_sd: f64,
    /// Minimum achievable loss.
    pub floor: f64,
    /// Optima are drawn uniformly from `[margin, 1 − margin]` per axis.
    pub optimum_margin: f64,
}

impl Default for SurrogateFamily {
    fn default() -> Self {
        Self {
            curvature: (0.5, 8.0),
            frequency: (4.0, 10.0),
            rugged_amplitude: 0.02,
            noise_sd: 0.005,
            floor: 0.3,
            optimum_margin: 0.1,
        }
    }
}

impl SurrogateFamily {
    pub fn validate(&self) -> Result<(), String> {
        let (c0, c1) = self.curvature;
        if !(c0 > 0.0 && c0 <= c1 && c1.is_finite()) {
            return Err("curvature range must satisfy 0 < low <= high".into());
        }
        let (w0, w1) = self.frequency;
        if !(w0 >= 0.0 && w0 <= w1 && w1.is_finite()) {
            return Err("frequency range must satisfy 0 <= low <= high".into());
        }
        if !(self.rugged_amplitude >= 0.0 && self.noise_sd >= 0.0 && self.floor.is_finite()) {
            return Err("amplitude and noise must be non-negative, floor finite".into());
        }
        if !(0.0..0.5).contains(&self.optimum_margin) {
            return Err("optimum margin must lie in [0, 0.5)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSurrogateDescriptor {
    pub speaker_seed: u64,
    pub optimum: UnitVector,
    pub curvature: Vec<f64>,
    pub frequency: Vec<f64>,
    pub phase: Vec<f64>,
    pub rugged_amplitude: f64,
    pub noise_sd: f64,
    pub floor: f64,
}

/// Loss landscape of one synthetic target speaker:
///
/// `floor + Σ c_j (u_j − u*_j)² + a Σ sin²(ω_j u_j + φ_j) + noise`
///
/// with `φ_j = −ω_j u*_j`, so the ruggedness vanishes at the optimum and the
/// noiseless minimum is exactly `floor` at `u*`.
#[derive(Debug, Clone)]
pub struct SpeakerSurrogate {
    space: SearchSpace,
    descriptor: SpeakerSurrogateDescriptor,
    optimum_config: Configuration,
}

pub fn make_speaker_surrogate(space: &SearchSpace, speaker_seed: u64, family: &SurrogateFamily) -> SpeakerSurrogate {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(speaker_seed, Stream::Surrogate, 0));
    let d = space.dim();
    let m = family.optimum_margin;
    let raw: Vec<f64> = (0..d).map(|_| m + (1.0 - 2.0 * m) * rng.random::<f64>()).collect();
    // the optimum must be a feasible point so it can actually be evaluated
    let optimum_config = space.decode_slice(&raw).expect("dimension matches");
    let optimum = space.encode(&optimum_config).expect("decoded configs encode");
    let (c0, c1) = family.curvature;
    let curvature: Vec<f64> = (0..d).map(|_| (c0.ln() + rng.random::<f64>() * (c1.ln() - c0.ln())).exp()).collect();
    let (w0, w1) = family.frequency;
    let frequency: Vec<f64> = (0..d).map(|_| w0 + rng.random::<f64>() * (w1 - w0)).collect();
    let phase = frequency.iter().zip(optimum.as_slice()).map(|(w, u)| -w * u).collect();
    SpeakerSurrogate {
        space: space.clone(),
        descriptor: SpeakerSurrogateDescriptor {
            speaker_seed,
            optimum,
            curvature,
            frequency,
            phase,
            rugged_amplitude: family.rugged_amplitude,
            noise_sd: family.noise_sd,
            floor: family.floor,
        },
        optimum_config,
    }
}

impl SpeakerSurrogate {
    pub fn descriptor(&self) -> &SpeakerSurrogateDescriptor {
        &self.descriptor
    }

    pub fn optimum_config(&self) -> &Configuration {
        &self.optimum_config
    }

    /// Noiseless loss at encoded coordinates.
    pub fn clean_loss(&self, u: &[f64]) -> f64 {
        let s = &self.descriptor;
        let mut loss = s.floor;
        for (j, &uj) in u.iter().enumerate() {
            let delta = uj - s.optimum.as_slice()[j];
            let rugged = (s.frequency[j] * uj + s.phase[j]).sin();
            loss += s.curvature[j] * delta * delta + s.rugged_amplitude * rugged * rugged;
        }
        loss
    }
}

impl Objective for SpeakerSurrogate {
    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::SpeakerSurrogate
    }

    fn evaluate(&self, config: &Configuration, ctx: &EvalContext) -> Result<f64, ObjectiveError> {
        let u = self.space.encode(config)?;
        let mut loss = self.clean_loss(u.as_slice());
        if self.descriptor.noise_sd > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.descriptor.speaker_seed, Stream::Evaluation, ctx.eval_seed));
            let z: f64 = StandardNormal.sample(&mut rng);
            loss += self.descriptor.noise_sd * z;
        }
        Ok(loss)
    }
}

/// Default wall-clock limit for one external trial.
pub const DEFAULT_EXTERNAL_TIMEOUT: Duration = Duration::from_secs(24 * 3600);
/// Environment variable overriding the external timeout, in seconds.
pub const TIMEOUT_ENV: &str = "BOFFIN_TIMEOUT_S";

/// Modules an external trainer is expected to update; everything else stays frozen.
pub const TRAINABLE_MODULES: [&str; 2] = ["speaker_embedding", "decoder"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialHints {
    pub trainable_modules: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_epoch: Option<i64>,
}

/// Contents of `config.json` written for every external trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRequest {
    pub trial_index: usize,
    pub seed: u64,
    pub config: Configuration,
    pub hints: TrialHints,
}

/// Contents of `result.json` produced by the external command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<serde_json::Value>,
}

/// Scores configurations by running a shell command per trial.
///
/// Each trial gets its own directory under `workdir` holding `config.json`.
/// The command runs there via `sh -c` and must write `result.json` and exit 0.
/// The placeholders `{config}`, `{result}` and `{trial_dir}` in the command
/// expand to absolute paths; the same paths are exported as
/// `BOFFIN_CONFIG`, `BOFFIN_RESULT` and `BOFFIN_TRIAL_DIR`.
#[derive(Debug, Clone)]
pub struct ExternalObjective {
    space: SearchSpace,
    command: String,
    workdir: PathBuf,
    timeout: Duration,
}

impl ExternalObjective {
    pub fn new(space: SearchSpace, command: impl Into<String>, workdir: impl Into<PathBuf>) -> Self {
        Self {
            space,
            command: command.into(),
            workdir: workdir.into(),
            timeout: DEFAULT_EXTERNAL_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Timeout from `BOFFIN_TIMEOUT_S`, if set to a positive number.
    pub fn timeout_from_env() -> Option<Duration> {
        std::env::var(TIMEOUT_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s > 0.0)
            .map(Duration::from_secs_f64)
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn trial_dir(&self, trial_index: usize) -> PathBuf {
        self.workdir.join(format!("trial_{trial_index:04}"))
    }

    pub fn request(&self, config: &Configuration, ctx: &EvalContext) -> TrialRequest {
        TrialRequest {
            trial_index: ctx.trial_index,
            seed: ctx.run_seed,
            config: config.clone(),
            hints: TrialHints {
                trainable_modules: TRAINABLE_MODULES.iter().map(|s| s.to_string()).collect(),
                mixing_ratio: config.get_f64("mixing_ratio"),
                base_epoch: match config.get("base_epoch") {
                    Some(ParamValue::Int(e)) => Some(*e),
                    _ => None,
                },
            },
        }
    }

    pub fn external_evaluate(&self, config: &Configuration, ctx: &EvalContext) -> Result<f64, ObjectiveError> {
        let config = self.space.validate(config)?;
        let dir = self.trial_dir(ctx.trial_index);
        fs::create_dir_all(&dir)?;
        let dir = dir.canonicalize()?;
        let config_path = dir.join("config.json");
        let result_path = dir.join("result.json");
        let stderr_path = dir.join("stderr.log");
        if result_path.exists() {
            fs::remove_file(&result_path)?;
        }
        let request = self.request(&config, ctx);
        fs::write(&config_path, serde_json::to_string_pretty(&request).expect("request serializes"))?;

        let command = self
            .command
            .replace("{config}", &config_path.to_string_lossy())
            .replace("{result}", &result_path.to_string_lossy())
            .replace("{trial_dir}", &dir.to_string_lossy());
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&command)
            .current_dir(&dir)
            .env("BOFFIN_CONFIG", &config_path)
            .env("BOFFIN_RESULT", &result_path)
            .env("BOFFIN_TRIAL_DIR", &dir)
            .stdin(Stdio::null())
            .stdout(fs::File::create(dir.join("stdout.log"))?)
            .stderr(fs::File::create(&stderr_path)?)
            .spawn()?;

        let status = match child.wait_timeout(self.timeout)? {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return Err(ObjectiveError::Timeout(self.timeout));
            }
        };
        let stderr = read_tail(&stderr_path);
        if !status.success() {
            return Err(ObjectiveError::External {
                message: format!("command exited with {status}"),
                stderr,
            });
        }
        let text = fs::read_to_string(&result_path).map_err(|e| ObjectiveError::External {
            message: format!("cannot read {}: {e}", result_path.display()),
            stderr: stderr.clone(),
        })?;
        let result: TrialResult = serde_json::from_str(&text).map_err(|e| ObjectiveError::External {
            message: format!("malformed result.json: {e}"),
            stderr: stderr.clone(),
        })?;
        if !result.score.is_finite() {
            return Err(ObjectiveError::External {
                message: "non-finite score".into(),
                stderr,
            });
        }
        Ok(result.score)
    }
}

fn read_tail(path: &Path) -> String {
    const LIMIT: usize = 8192;
    let text = fs::read_to_string(path).unwrap_or_default();
    if text.len() <= LIMIT {
        text
    } else {
        let mut start = text.len() - LIMIT;
        while !text.is_char_boundary(start) {
            start += 1;
        }
        text[start..].to_string()
    }
}

impl Objective for ExternalObjective {
    fn space(&self) -> &SearchSpace {
        &self.space
    }

    fn kind(&self) -> ObjectiveKind {
        ObjectiveKind::External
    }

    fn evaluate(&self, config: &Configuration, ctx: &EvalContext) -> Result<f64, ObjectiveError> {
        self.external_evaluate(config, ctx)
    }
}
