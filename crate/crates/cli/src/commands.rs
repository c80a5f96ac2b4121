use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use boffin_core::benchmark::{mean_traces, run_cells, summarize, trace_csv, BenchmarkSpec, Strategy};
use boffin_core::corpus::{mix, split_holdout, MixPlan, UtteranceManifest};
use boffin_core::objectives::{
    make_speaker_surrogate, ExternalObjective, Objective, SyntheticFunction, SyntheticObjective,
};
use boffin_core::space::{preset_baseline_config, Configuration};
use boffin_core::tuner::{
    run_baseline, run_bo, run_random_search, History, TunerConfig, TunerError, DEFAULT_N_INIT,
};
use log::info;
use serde::{Deserialize, Serialize};

use crate::settings::{load_baseline, load_family, load_space, pick, FileConfig};
use crate::{BenchmarkArgs, Cli, Command, MixArgs, SplitArgs, TuneArgs};

const DEFAULT_BUDGET: usize = 50;
const DEFAULT_SPEAKERS: usize = 20;
const DEFAULT_SEEDS: usize = 5;

/// Contents of `summary.json` written by the tuning commands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSummary {
    pub strategy: Strategy,
    pub objective: String,
    pub seed: u64,
    pub budget: usize,
    pub n_init: usize,
    pub trial_count: usize,
    pub failed_trials: usize,
    pub best_score: Option<f64>,
    pub best_config: Option<Configuration>,
    pub best_trial: Option<usize>,
}

struct Globals {
    seed: u64,
    out: Option<PathBuf>,
    space: Option<String>,
    objective: Option<String>,
    file: FileConfig,
}

impl Globals {
    fn out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| anyhow!("--out is required"))
    }

    fn space_given(&self) -> bool {
        self.space.is_some() || self.file.space.is_some()
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let g = Globals {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        out: cli.out.or_else(|| file.out.clone()),
        space: cli.space,
        objective: cli.objective.or_else(|| file.objective.clone()),
        file,
    };
    match cli.command {
        Command::Tune(a) => {
            let strategy = a.strategy.as_deref().or(g.file.strategy.as_deref()).unwrap_or("bo");
            let strategy: Strategy = strategy.parse().map_err(|e: String| anyhow!(e))?;
            tune(&g, strategy, &a)
        }
        Command::RandomSearch(a) => tune(&g, Strategy::Rs, &a),
        Command::Baseline(a) => tune(&g, Strategy::Baseline, &a),
        Command::Benchmark(a) => benchmark(&g, &a),
        Command::MixCorpus(a) => mix_corpus(&g, &a),
        Command::Split(a) => split(&g, &a),
    }
}

fn build_objective(g: &Globals, a: &TuneArgs, out: &Path) -> Result<(String, Box<dyn Objective>)> {
    let name = g
        .objective
        .clone()
        .ok_or_else(|| anyhow!("--objective is required (branin, hartmann6, sphere, surrogate or external)"))?;
    let speaker = a.objective.speaker.or(g.file.speaker);
    let family_given = a.objective.family.is_some() || g.file.family.is_some();
    let command = a.objective.command.clone().or_else(|| g.file.command.clone());
    if name != "surrogate" && (speaker.is_some() || family_given) {
        bail!("--speaker and --family only apply to the surrogate objective");
    }
    if name != "external" && command.is_some() {
        bail!("--command only applies to the external objective");
    }
    let space = || load_space(pick(g.space.as_deref(), g.file.space.as_ref(), &g.file));
    let objective: Box<dyn Objective> = match name.as_str() {
        "surrogate" => {
            let family = load_family(a.objective.family.as_deref(), &g.file)?;
            Box::new(make_speaker_surrogate(&space()?, speaker.unwrap_or(0), &family))
        }
        "external" => {
            let command = command.ok_or_else(|| anyhow!("the external objective needs --command"))?;
            let mut ext = ExternalObjective::new(space()?, command, out.join("trials"));
            if let Some(t) = ExternalObjective::timeout_from_env() {
                ext = ext.with_timeout(t);
            }
            Box::new(ext)
        }
        other => {
            let f = SyntheticFunction::from_name(other).ok_or_else(|| anyhow!("unknown objective `{other}`"))?;
            if g.space_given() {
                bail!("objective `{other}` defines its own space; --space does not apply");
            }
            Box::new(SyntheticObjective::new(f))
        }
    };
    Ok((name, objective))
}

fn tune(g: &Globals, strategy: Strategy, a: &TuneArgs) -> Result<()> {
    let out = g.out()?;
    let baseline = load_baseline(pick(a.baseline_config.as_deref(), g.file.baseline_config.as_ref(), &g.file))?;
    if strategy == Strategy::Baseline && baseline.is_none() {
        bail!("the baseline strategy requires --baseline-config");
    }
    let (name, objective) = build_objective(g, a, out)?;
    let budget = a.budget.or(g.file.budget).unwrap_or(DEFAULT_BUDGET);
    let n_init = a.n_init.or(g.file.n_init).unwrap_or(DEFAULT_N_INIT.min(budget.max(1)));
    let cfg = TunerConfig::new(budget, g.seed).with_n_init(n_init);
    if strategy == Strategy::Bo {
        cfg.validate()?;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    info!("running {strategy} on {name} with seed {}", g.seed);
    let result = match strategy {
        Strategy::Bo => run_bo(objective.as_ref(), &cfg),
        Strategy::Rs => run_random_search(objective.as_ref(), &cfg),
        Strategy::Baseline => run_baseline(objective.as_ref(), baseline.as_ref().expect("checked above"), g.seed),
    };
    let (history, failure) = match result {
        Ok(h) => (h, None),
        Err(TunerError::AllTrialsFailed(h)) => {
            let msg = format!("all {} trials failed", h.len());
            (h, Some(msg))
        }
        Err(e) => return Err(e.into()),
    };

    write_history(out, &history)?;
    let incumbent = history.incumbent();
    let (budget, n_init) = match strategy {
        Strategy::Bo => (budget, n_init),
        Strategy::Rs => (budget, budget),
        Strategy::Baseline => (1, 1),
    };
    let summary = TuneSummary {
        strategy,
        objective: name,
        seed: g.seed,
        budget,
        n_init,
        trial_count: history.len(),
        failed_trials: history.failed_count(),
        best_score: incumbent.as_ref().map(|i| i.best_score),
        best_config: incumbent.as_ref().map(|i| i.best_config.clone()),
        best_trial: incumbent.as_ref().map(|i| i.trial_index),
    };
    write(&out.join("summary.json"), &pretty(&summary)?)?;
    if let Some(msg) = failure {
        bail!(msg);
    }
    println!("trials={}", summary.trial_count);
    println!("failed={}", summary.failed_trials);
    if let Some(s) = summary.best_score {
        println!("best_score={s}");
    }
    println!("out_dir={}", out.display());
    Ok(())
}

fn write_history(dir: &Path, history: &History) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join("trials.jsonl"), &history.to_jsonl())?;
    write(&dir.join("incumbent.csv"), &history.incumbent_csv())?;
    write(&dir.join("timings.csv"), &history.timings_csv())
}

fn benchmark(g: &Globals, a: &BenchmarkArgs) -> Result<()> {
    let out = g.out()?;
    if let Some(o) = g.objective.as_deref().filter(|&o| o != "surrogate") {
        bail!("benchmark only runs the surrogate objective, not `{o}`");
    }
    let strategies = match a.strategies.as_ref().or(g.file.strategies.as_ref()) {
        Some(list) => list
            .iter()
            .map(|s| s.trim().parse::<Strategy>().map_err(|e| anyhow!(e)))
            .collect::<Result<Vec<_>>>()?,
        None => vec![Strategy::Bo, Strategy::Rs, Strategy::Baseline],
    };
    let n_speakers = a.speakers.or(g.file.speakers).unwrap_or(DEFAULT_SPEAKERS);
    let n_seeds = a.seeds.or(g.file.seeds).unwrap_or(DEFAULT_SEEDS);
    let baseline = load_baseline(pick(a.baseline_config.as_deref(), g.file.baseline_config.as_ref(), &g.file))?
        .unwrap_or_else(preset_baseline_config);
    let spec = BenchmarkSpec {
        space: load_space(pick(g.space.as_deref(), g.file.space.as_ref(), &g.file))?,
        family: load_family(a.family.as_deref(), &g.file)?,
        speakers: (0..n_speakers as u64).collect(),
        seeds: (0..n_seeds as u64).map(|k| g.seed.wrapping_add(k)).collect(),
        strategies,
        n_init: a.n_init.or(g.file.n_init).unwrap_or(DEFAULT_N_INIT),
        budget: a.budget.or(g.file.budget).unwrap_or(DEFAULT_BUDGET),
        baseline_config: baseline,
    };
    spec.validate().map_err(|e| anyhow!("invalid benchmark: {e}"))?;

    info!("running {} benchmark cells", spec.cells().len());
    let outcomes = run_cells(&spec);
    for o in &outcomes {
        let dir = out.join(o.id.dir_name());
        match &o.result {
            Ok(h) => write_history(&dir, h)?,
            Err(e) => {
                fs::create_dir_all(&dir)?;
                write(&dir.join("error.txt"), &format!("{e}\n"))?;
            }
        }
    }
    let summary = summarize(&spec, &outcomes);
    write(&out.join("summary.json"), &pretty(&summary)?)?;
    for &s in &spec.strategies {
        write(&out.join(format!("trace_{s}.csv")), &trace_csv(&mean_traces(s, &outcomes)))?;
    }
    if summary.all_failed() {
        bail!("all {} benchmark cells failed", summary.total_cells);
    }
    for s in &summary.strategies {
        match s.median_final_incumbent {
            Some(m) => println!("{}: median final incumbent {m:.6}", s.strategy),
            None => println!("{}: no successful runs", s.strategy),
        }
    }
    for w in &summary.win_rates {
        println!("{} beats {} on {}/{} speakers", w.strategy, w.versus, w.wins, w.speakers);
    }
    if !summary.failed_cells.is_empty() {
        println!("failed cells: {}", summary.failed_cells.len());
    }
    Ok(())
}

fn mix_corpus(g: &Globals, a: &MixArgs) -> Result<()> {
    let out = g.out()?;
    let plan = MixPlan {
        target: load_manifest(&a.target)?,
        base: load_manifest(&a.base)?,
        ratio: a.ratio,
        seed: g.seed,
    };
    let outcome = mix(&plan)?;
    ensure_parent(out)?;
    outcome.manifest.save(out).with_context(|| format!("writing {}", out.display()))?;
    println!("target={}", plan.target.len());
    println!("base={}", outcome.base_count);
    println!("with_replacement={}", outcome.with_replacement);
    println!("out={}", out.display());
    Ok(())
}

fn split(g: &Globals, a: &SplitArgs) -> Result<()> {
    let out = g.out()?;
    let manifest = load_manifest(&a.manifest)?;
    let (train, validation) = split_holdout(&manifest, a.fraction, g.seed)?;
    let ext = match a.manifest.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => "csv",
        _ => "jsonl",
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (tp, vp) = (out.join(format!("train.{ext}")), out.join(format!("validation.{ext}")));
    train.save(&tp).with_context(|| format!("writing {}", tp.display()))?;
    validation.save(&vp).with_context(|| format!("writing {}", vp.display()))?;
    println!("train={}", train.len());
    println!("validation={}", validation.len());
    Ok(())
}

fn load_manifest(path: &Path) -> Result<UtteranceManifest> {
    UtteranceManifest::load(path).with_context(|| format!("reading manifest {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => {
            fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))
        }
        _ => Ok(()),
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
