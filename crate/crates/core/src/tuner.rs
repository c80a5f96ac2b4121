//! The optimization loop and its comparators.
//!
//! All three strategies share one seeded sampler and one evaluation-seed
//! stream, so the random initialization of a BO run and the first trials of
//! a random-search run with the same seed are the same trials.

use std::fmt::Write as _;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{self, Incumbent};
use crate::gp::GpModel;
use crate::objectives::{EvalContext, Objective};
use crate::seeding::{derive_seed, Stream};
use crate::space::{Configuration, SpaceError};

pub const DEFAULT_N_INIT: usize = 10;

#[derive(Debug, Error)]
pub enum TunerError {
    #[error("invalid tuner config: {0}")]
    InvalidConfig(String),
    #[error("invalid configuration: {0}")]
    Space(#[from] SpaceError),
    #[error("all {} trials failed", .0.trials.len())]
    AllTrialsFailed(History),
    #[error("baseline evaluation failed: {0}")]
    BaselineFailed(String),
    #[error("history is empty")]
    EmptyHistory,
    #[error("trial log line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunerConfig {
    pub n_init: usize,
    /// Total number of evaluations, including the initial design.
    pub budget: usize,
    pub seed: u64,
}

impl TunerConfig {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            n_init: DEFAULT_N_INIT.min(budget.max(1)),
            budget,
            seed,
        }
    }

    pub fn with_n_init(mut self, n_init: usize) -> Self {
        self.n_init = n_init;
        self
    }

    pub fn validate(&self) -> Result<(), TunerError> {
        if self.n_init == 0 || self.n_init > self.budget {
            return Err(TunerError::InvalidConfig(format!(
                "need 1 <= n_init <= budget, got n_init {} and budget {}",
                self.n_init, self.budget
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Init,
    Bo,
    Rs,
    Baseline,
}

/// One evaluated configuration. `score` is `None` when the evaluation failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: usize,
    pub phase: Phase,
    pub config: Configuration,
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Expected improvement predicted for BO proposals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_improvement: Option<f64>,
    /// Wall-clock seconds; kept out of the trial log so logs are reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.score.is_none()
    }
}

/// Ordered trial log with its running incumbent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    trials: Vec<TrialRecord>,
    incumbent_trace: Vec<Option<f64>>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, trial: TrialRecord) {
        let prev = self.incumbent_trace.last().copied().flatten();
        let best = match (prev, trial.score) {
            (Some(p), Some(s)) => Some(if s < p { s } else { p }),
            (p, s) => p.or(s),
        };
        self.trials.push(trial);
        self.incumbent_trace.push(best);
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// Best score after each trial; `None` until the first success.
    pub fn incumbent_trace(&self) -> &[Option<f64>] {
        &self.incumbent_trace
    }

    /// Earliest trial achieving the minimum score.
    pub fn incumbent(&self) -> Option<Incumbent> {
        let mut best: Option<&TrialRecord> = None;
        for t in &self.trials {
            if let Some(s) = t.score {
                if best.is_none_or(|b| s < b.score.unwrap()) {
                    best = Some(t);
                }
            }
        }
        best.map(|t| Incumbent {
            best_score: t.score.unwrap(),
            best_config: t.config.clone(),
            trial_index: t.index,
        })
    }

    pub fn final_incumbent(&self) -> Option<f64> {
        self.incumbent_trace.last().copied().flatten()
    }

    pub fn failed_count(&self) -> usize {
        self.trials.iter().filter(|t| t.failed()).count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.trials {
            out.push_str(&serde_json::to_string(t).expect("trial serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TunerError> {
        let mut h = History::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let t: TrialRecord = serde_json::from_str(line).map_err(|e| parse_error(i + 1, e.to_string()))?;
            h.push(t);
        }
        Ok(h)
    }

    /// `index,best_score` rows; the score is empty before the first success.
    pub fn incumbent_csv(&self) -> String {
        let mut out = String::from("index,best_score\n");
        for (i, b) in self.incumbent_trace.iter().enumerate() {
            match b {
                Some(v) => writeln!(out, "{i},{v}").unwrap(),
                None => writeln!(out, "{i},").unwrap(),
            }
        }
        out
    }

    pub fn timings_csv(&self) -> String {
        let mut out = String::from("index,wall_time_s\n");
        for t in &self.trials {
            writeln!(out, "{},{}", t.index, t.wall_time_s).unwrap();
        }
        out
    }
}

fn parse_error(line: usize, message: String) -> TunerError {
    TunerError::Parse { line, message }
}

/// Running minimum over non-failed trials, one entry per trial.
pub fn incumbent_trace(history: &History) -> Result<Vec<(usize, Option<f64>)>, TunerError> {
    if history.is_empty() {
        return Err(TunerError::EmptyHistory);
    }
    Ok(history.incumbent_trace().iter().copied().enumerate().collect())
}

/// Parses an incumbent CSV back into `(index, best_score)` rows.
pub fn parse_incumbent_csv(text: &str) -> Result<Vec<(usize, Option<f64>)>, TunerError> {
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |m: &str| parse_error(i + 1, m.to_string());
            let (idx, score) = line.split_once(',').ok_or_else(|| bad("expected two columns"))?;
            let idx = idx.trim().parse().map_err(|_| bad("bad index"))?;
            let score = match score.trim() {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("bad score"))?),
            };
            Ok((idx, score))
        })
        .collect()
}

fn evaluate_trial(
    objective: &dyn Objective,
    config: Configuration,
    index: usize,
    phase: Phase,
    seed: u64,
    expected_improvement: Option<f64>,
) -> TrialRecord {
    let ctx = EvalContext::new(index, seed);
    let start = Instant::now();
    let result = objective.evaluate(&config, &ctx);
    let wall_time_s = start.elapsed().as_secs_f64();
    let (score, error) = match result {
        Ok(s) if s.is_finite() => (Some(s), None),
        Ok(s) => (None, Some(format!("non-finite score {s}"))),
        Err(e) => {
            warn!("trial {index} failed: {e}");
            (None, Some(e.to_string()))
        }
    };
    TrialRecord {
        index,
        phase,
        config,
        score,
        error,
        expected_improvement,
        wall_time_s,
    }
}

fn finish(history: History) -> Result<History, TunerError> {
    if history.trials.iter().all(TrialRecord::failed) {
        Err(TunerError::AllTrialsFailed(history))
    } else {
        Ok(history)
    }
}

fn initial_design(objective: &dyn Objective, seed: u64, n: usize) -> Vec<Configuration> {
    objective.space().sample(derive_seed(seed, Stream::Design, 0), n)
}

/// Chooses the next BO configuration from the successful trials so far.
/// Falls back to a seeded random draw when no model can be fitted.
fn propose(objective: &dyn Objective, history: &History, seed: u64, index: usize) -> (Configuration, Option<f64>) {
    let space = objective.space();
    let fallback = || {
        let c = space.sample(derive_seed(seed, Stream::Fallback, index as u64), 1).remove(0);
        (c, None)
    };
    let Some(incumbent) = history.incumbent() else {
        return fallback();
    };
    let (x, y): (Vec<Vec<f64>>, Vec<f64>) = history
        .trials()
        .iter()
        .filter_map(|t| Some((space.encode(&t.config).ok()?.into_inner(), t.score?)))
        .unzip();
    let model = match GpModel::fit(x, y, derive_seed(seed, Stream::Fit, index as u64)) {
        Ok(m) => m,
        Err(e) => {
            warn!("trial {index}: surrogate fit failed ({e}); sampling at random");
            return fallback();
        }
    };
    match acquisition::maximize(&model, space, &incumbent, derive_seed(seed, Stream::Acquisition, index as u64)) {
        Ok(p) => (p.config, Some(p.ei_value)),
        Err(e) => {
            warn!("trial {index}: acquisition failed ({e}); sampling at random");
            fallback()
        }
    }
}

/// Bayesian optimization: `n_init` random trials, then one EI-maximizing
/// proposal per remaining evaluation.
pub fn run_bo(objective: &dyn Objective, cfg: &TunerConfig) -> Result<History, TunerError> {
    cfg.validate()?;
    let mut history = History::new();
    for (i, c) in initial_design(objective, cfg.seed, cfg.n_init).into_iter().enumerate() {
        history.push(evaluate_trial(objective, c, i, Phase::Init, cfg.seed, None));
    }
    for i in cfg.n_init..cfg.budget {
        let (config, ei) = propose(objective, &history, cfg.seed, i);
        history.push(evaluate_trial(objective, config, i, Phase::Bo, cfg.seed, ei));
    }
    finish(history)
}

pub fn run_random_search(objective: &dyn Objective, cfg: &TunerConfig) -> Result<History, TunerError> {
    if cfg.budget == 0 {
        return Err(TunerError::InvalidConfig("budget must be at least 1".into()));
    }
    let mut history = History::new();
    for (i, c) in initial_design(objective, cfg.seed, cfg.budget).into_iter().enumerate() {
        history.push(evaluate_trial(objective, c, i, Phase::Rs, cfg.seed, None));
    }
    finish(history)
}

/// Single evaluation of a fixed configuration.
pub fn run_baseline(objective: &dyn Objective, baseline_config: &Configuration, seed: u64) -> Result<History, TunerError> {
    let config = objective.space().validate(baseline_config)?;
    let trial = evaluate_trial(objective, config, 0, Phase::Baseline, seed, None);
    if let Some(e) = &trial.error {
        return Err(TunerError::BaselineFailed(e.clone()));
    }
    let mut history = History::new();
    history.push(trial);
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{FnObjective, ObjectiveError, ObjectiveKind, SyntheticFunction, SyntheticObjective};
    use crate::space::{ParamValue, ParameterSpec, Scale, SearchSpace};

    fn record(index: usize, score: Option<f64>) -> TrialRecord {
        TrialRecord {
            index,
            phase: Phase::Rs,
            config: Configuration::new().with("x", ParamValue::Real(index as f64)),
            score,
            error: score.is_none().then(|| "boom".to_string()),
            expected_improvement: None,
            wall_time_s: 0.0,
        }
    }

    #[test]
    fn running_minimum() {
        let mut h = History::new();
        for (i, s) in [3.0, 2.0, 2.5, 1.0].into_iter().enumerate() {
            h.push(record(i, Some(s)));
        }
        let trace: Vec<f64> = incumbent_trace(&h).unwrap().into_iter().map(|(_, b)| b.unwrap()).collect();
        assert_eq!(trace, [3.0, 2.0, 2.0, 1.0]);
        assert_eq!(h.incumbent().unwrap().trial_index, 3);
    }

    #[test]
    fn trace_with_failures() {
        let mut h = History::new();
        h.push(record(0, None));
        h.push(record(1, None));
        h.push(record(2, Some(4.0)));
        h.push(record(3, None));
        let trace = incumbent_trace(&h).unwrap();
        assert_eq!(trace.len(), 4);
        assert_eq!(trace.iter().map(|t| t.1).collect::<Vec<_>>(), [None, None, Some(4.0), Some(4.0)]);
        assert!(matches!(incumbent_trace(&History::new()), Err(TunerError::EmptyHistory)));
    }

    #[test]
    fn incumbent_ties_pick_earliest() {
        let mut h = History::new();
        h.push(record(0, Some(2.0)));
        h.push(record(1, Some(1.0)));
        h.push(record(2, Some(1.0)));
        assert_eq!(h.incumbent().unwrap().trial_index, 1);
    }

    #[test]
    fn jsonl_and_csv_round_trip() {
        let mut h = History::new();
        h.push(record(0, None));
        h.push(record(1, Some(0.25)));
        h.push(record(2, Some(1.0 / 3.0)));
        let back = History::from_jsonl(&h.to_jsonl()).unwrap();
        assert_eq!(back, h);
        assert_eq!(parse_incumbent_csv(&h.incumbent_csv()).unwrap(), incumbent_trace(&h).unwrap());
        match History::from_jsonl("{\"index\":0}\n") {
            Err(TunerError::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    fn unit_space(d: usize) -> SearchSpace {
        SearchSpace::new(
            (0..d)
                .map(|i| ParameterSpec::continuous(&format!("x{i}"), 0.0, 1.0, Scale::Linear).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn bo_without_bo_phase_equals_random_search() {
        let f = SyntheticObjective::new(SyntheticFunction::Branin);
        let cfg = TunerConfig::new(10, 3).with_n_init(10);
        let bo = run_bo(&f, &cfg).unwrap();
        let rs = run_random_search(&f, &cfg).unwrap();
        let key = |h: &History| h.trials().iter().map(|t| (t.config.clone(), t.score)).collect::<Vec<_>>();
        assert_eq!(key(&bo), key(&rs));
    }

    #[test]
    fn bo_solves_one_dim_quadratic() {
        let f = SyntheticObjective::new(SyntheticFunction::Sphere { center: vec![0.3] });
        // dense-grid oracle: the minimum is 0 at 0.3
        let grid_min = (0..=1000)
            .map(|i| f.function().value(&[i as f64 / 1000.0]))
            .fold(f64::INFINITY, f64::min);
        assert!(grid_min < 1e-12);
        let h = run_bo(&f, &TunerConfig::new(25, 1)).unwrap();
        assert!(h.final_incumbent().unwrap() < 1e-3, "{:?}", h.final_incumbent());
        assert!(h.trials()[10..].iter().all(|t| t.phase == Phase::Bo));
    }

    #[test]
    fn runs_are_reproducible() {
        let f = SyntheticObjective::new(SyntheticFunction::Branin);
        let cfg = TunerConfig::new(16, 9);
        assert_eq!(run_bo(&f, &cfg).unwrap().to_jsonl(), run_bo(&f, &cfg).unwrap().to_jsonl());
        assert_eq!(
            run_random_search(&f, &cfg).unwrap().to_jsonl(),
            run_random_search(&f, &cfg).unwrap().to_jsonl()
        );
    }

    #[test]
    fn bo_shares_init_with_random_search() {
        let f = SyntheticObjective::new(SyntheticFunction::Branin);
        let cfg = TunerConfig::new(14, 21);
        let bo = run_bo(&f, &cfg).unwrap();
        let rs = run_random_search(&f, &cfg).unwrap();
        for (a, b) in bo.trials()[..10].iter().zip(rs.trials()) {
            assert_eq!((&a.config, a.score), (&b.config, b.score));
        }
    }

    #[test]
    fn random_search_order_statistics() {
        let f = FnObjective::new(unit_space(2), |c| c.get_f64("x0").unwrap());
        let h = run_random_search(&f, &TunerConfig::new(10_000, 5)).unwrap();
        // expected minimum of 10^4 uniforms is 1/(n+1)
        assert!(h.final_incumbent().unwrap() < 0.001);
        let trace = h.incumbent_trace();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn baseline_is_one_trial() {
        let f = SyntheticObjective::new(SyntheticFunction::Branin);
        let c = Configuration::new().with("x1", ParamValue::Real(0.0)).with("x2", ParamValue::Real(5.0));
        let h = run_baseline(&f, &c, 0).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.trials()[0].phase, Phase::Baseline);
        assert_eq!(incumbent_trace(&h).unwrap().len(), 1);
        let bad = Configuration::new().with("x1", ParamValue::Real(99.0)).with("x2", ParamValue::Real(5.0));
        assert!(run_baseline(&f, &bad, 0).is_err());
    }

    struct Flaky {
        space: SearchSpace,
    }

    impl Objective for Flaky {
        fn space(&self) -> &SearchSpace {
            &self.space
        }
        fn kind(&self) -> ObjectiveKind {
            ObjectiveKind::External
        }
        fn evaluate(&self, config: &Configuration, ctx: &EvalContext) -> Result<f64, ObjectiveError> {
            if ctx.trial_index.is_multiple_of(3) {
                Err(ObjectiveError::Other("crashed".into()))
            } else if ctx.trial_index == 4 {
                Ok(f64::NAN)
            } else {
                Ok((config.get_f64("x0").unwrap() - 0.5).powi(2))
            }
        }
    }

    #[test]
    fn failed_trials_are_recorded_and_skipped() {
        let f = Flaky { space: unit_space(1) };
        let h = run_bo(&f, &TunerConfig::new(15, 2).with_n_init(5)).unwrap();
        assert_eq!(h.len(), 15);
        assert!(h.trials()[0].failed() && h.trials()[4].failed());
        assert_eq!(h.trials()[0].error.as_deref(), Some("crashed"));
        assert!(h.trials()[0].score.is_none() && h.incumbent_trace()[0].is_none());
        let best = h.incumbent().unwrap();
        assert!(!h.trials()[best.trial_index].failed());
    }

    #[test]
    fn all_failed_is_an_error() {
        let f = FnObjective::new(unit_space(1), |_| f64::NAN);
        match run_bo(&f, &TunerConfig::new(12, 0)) {
            Err(TunerError::AllTrialsFailed(h)) => assert_eq!(h.len(), 12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let f = FnObjective::new(unit_space(1), |_| 0.0);
        assert!(run_bo(&f, &TunerConfig::new(5, 0).with_n_init(6)).is_err());
        assert!(run_bo(&f, &TunerConfig::new(5, 0).with_n_init(0)).is_err());
        assert!(run_random_search(&f, &TunerConfig::new(0, 0)).is_err());
    }
}
