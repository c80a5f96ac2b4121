//! Strategy comparison over a family of synthetic speakers.
//!
//! Every (strategy, speaker, seed) cell is an independent run. Cells run in
//! parallel; aggregation happens afterwards over the ordered cell list, so
//! results do not depend on scheduling.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::objectives::{make_speaker_surrogate, SurrogateFamily};
use crate::space::{Configuration, SearchSpace};
use crate::tuner::{run_baseline, run_bo, run_random_search, History, TunerConfig, TunerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Bo,
    Rs,
    Baseline,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Bo => "bo",
            Strategy::Rs => "rs",
            Strategy::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bo" => Ok(Strategy::Bo),
            "rs" | "random-search" => Ok(Strategy::Rs),
            "baseline" => Ok(Strategy::Baseline),
            other => Err(format!("unknown strategy `{other}` (expected bo, rs or baseline)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub space: SearchSpace,
    pub family: SurrogateFamily,
    pub speakers: Vec<u64>,
    pub seeds: Vec<u64>,
    pub strategies: Vec<Strategy>,
    pub n_init: usize,
    pub budget: usize,
    pub baseline_config: Configuration,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.strategies.is_empty() {
            return Err("at least one strategy is required".into());
        }
        if self.seeds.is_empty() || self.speakers.is_empty() {
            return Err("at least one seed and one speaker are required".into());
        }
        self.family.validate()?;
        if self.strategies.contains(&Strategy::Bo) || self.strategies.contains(&Strategy::Rs) {
            TunerConfig::new(self.budget, 0)
                .with_n_init(self.n_init)
                .validate()
                .map_err(|e| e.to_string())?;
        }
        if self.strategies.contains(&Strategy::Baseline) {
            self.space.validate(&self.baseline_config).map_err(|e| e.to_string())?;
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<CellId> {
        let mut cells = Vec::new();
        for &strategy in &self.strategies {
            for &speaker in &self.speakers {
                for &seed in &self.seeds {
                    cells.push(CellId { strategy, speaker, seed });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub strategy: Strategy,
    pub speaker: u64,
    pub seed: u64,
}

impl CellId {
    /// Relative directory for this cell's artifacts.
    pub fn dir_name(&self) -> String {
        format!("{}/speaker_{:03}/seed_{:03}", self.strategy, self.speaker, self.seed)
    }
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub id: CellId,
    pub result: Result<History, String>,
}

pub fn run_cell(spec: &BenchmarkSpec, id: CellId) -> CellOutcome {
    let objective = make_speaker_surrogate(&spec.space, id.speaker, &spec.family);
    let cfg = TunerConfig::new(spec.budget, id.seed).with_n_init(spec.n_init);
    let result = match id.strategy {
        Strategy::Bo => run_bo(&objective, &cfg),
        Strategy::Rs => run_random_search(&objective, &cfg),
        Strategy::Baseline => run_baseline(&objective, &spec.baseline_config, id.seed),
    };
    CellOutcome {
        id,
        result: result.map_err(|e: TunerError| e.to_string()),
    }
}

pub fn run_cells(spec: &BenchmarkSpec) -> Vec<CellOutcome> {
    spec.cells().into_par_iter().map(|id| run_cell(spec, id)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerSummary {
    pub speaker: u64,
    /// Final incumbent per seed, in seed order; `None` for failed cells.
    pub final_incumbents: Vec<Option<f64>>,
    pub median: Option<f64>,
    /// Configuration behind the best final incumbent across seeds.
    pub best_config: Option<Configuration>,
    pub best_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub speakers: Vec<SpeakerSummary>,
    /// Median over all successful cells of this strategy.
    pub median_final_incumbent: Option<f64>,
}

/// Fraction of speakers on which `strategy`'s median final incumbent is
/// strictly below `versus`'s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRate {
    pub strategy: Strategy,
    pub versus: Strategy,
    pub wins: usize,
    pub speakers: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub seeds: Vec<u64>,
    pub speakers: Vec<u64>,
    pub budget: usize,
    pub n_init: usize,
    pub strategies: Vec<StrategySummary>,
    pub win_rates: Vec<WinRate>,
    pub failed_cells: Vec<CellId>,
    pub total_cells: usize,
}

impl BenchmarkSummary {
    pub fn strategy(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }

    pub fn win_rate(&self, strategy: Strategy, versus: Strategy) -> Option<&WinRate> {
        self.win_rates.iter().find(|w| w.strategy == strategy && w.versus == versus)
    }

    pub fn all_failed(&self) -> bool {
        self.failed_cells.len() == self.total_cells
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Aggregates outcomes; only needs each cell's history, so it can be
/// recomputed from trial logs.
pub fn summarize(spec: &BenchmarkSpec, outcomes: &[CellOutcome]) -> BenchmarkSummary {
    let find = |id: CellId| outcomes.iter().find(|o| o.id == id).and_then(|o| o.result.as_ref().ok());
    let strategies: Vec<StrategySummary> = spec
        .strategies
        .iter()
        .map(|&strategy| {
            let mut all = Vec::new();
            let speakers = spec
                .speakers
                .iter()
                .map(|&speaker| {
                    let histories: Vec<Option<&History>> =
                        spec.seeds.iter().map(|&seed| find(CellId { strategy, speaker, seed })).collect();
                    let finals: Vec<Option<f64>> =
                        histories.iter().map(|h| h.and_then(History::final_incumbent)).collect();
                    let ok: Vec<f64> = finals.iter().flatten().copied().collect();
                    all.extend_from_slice(&ok);
                    let best = histories
                        .iter()
                        .flatten()
                        .filter_map(|h| h.incumbent())
                        .fold(None, |b: Option<crate::acquisition::Incumbent>, inc| match b {
                            Some(b) if b.best_score <= inc.best_score => Some(b),
                            _ => Some(inc),
                        });
                    SpeakerSummary {
                        speaker,
                        final_incumbents: finals,
                        median: median(&ok),
                        best_score: best.as_ref().map(|b| b.best_score),
                        best_config: best.map(|b| b.best_config),
                    }
                })
                .collect();
            StrategySummary {
                strategy,
                speakers,
                median_final_incumbent: median(&all),
            }
        })
        .collect();

    let mut win_rates = Vec::new();
    for a in &strategies {
        for b in &strategies {
            if a.strategy == b.strategy {
                continue;
            }
            let wins = a
                .speakers
                .iter()
                .zip(&b.speakers)
                .filter(|(x, y)| matches!((x.median, y.median), (Some(p), Some(q)) if p < q))
                .count();
            let n = spec.speakers.len();
            win_rates.push(WinRate {
                strategy: a.strategy,
                versus: b.strategy,
                wins,
                speakers: n,
                rate: wins as f64 / n as f64,
            });
        }
    }

    BenchmarkSummary {
        seeds: spec.seeds.clone(),
        speakers: spec.speakers.clone(),
        budget: spec.budget,
        n_init: spec.n_init,
        strategies,
        win_rates,
        failed_cells: outcomes.iter().filter(|o| o.result.is_err()).map(|o| o.id).collect(),
        total_cells: outcomes.len(),
    }
}

/// Mean and standard error of the incumbent trace across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub speaker: u64,
    pub index: usize,
    pub mean: f64,
    #[serde(rename = "se")]
    pub standard_error: f64,
    pub runs: usize,
}

pub fn mean_traces(strategy: Strategy, outcomes: &[CellOutcome]) -> Vec<TraceRow> {
    let mut speakers: Vec<u64> = outcomes.iter().filter(|o| o.id.strategy == strategy).map(|o| o.id.speaker).collect();
    speakers.sort_unstable();
    speakers.dedup();
    let mut rows = Vec::new();
    for speaker in speakers {
        let traces: Vec<&[Option<f64>]> = outcomes
            .iter()
            .filter(|o| o.id.strategy == strategy && o.id.speaker == speaker)
            .filter_map(|o| o.result.as_ref().ok())
            .map(|h| h.incumbent_trace())
            .collect();
        let len = traces.iter().map(|t| t.len()).max().unwrap_or(0);
        for index in 0..len {
            let vals: Vec<f64> = traces.iter().filter_map(|t| t.get(index).copied().flatten()).collect();
            if vals.is_empty() {
                continue;
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let se = if vals.len() > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
            } else {
                0.0
            };
            rows.push(TraceRow {
                speaker,
                index,
                mean,
                standard_error: se,
                runs: vals.len(),
            });
        }
    }
    rows
}

/// CSV with header `speaker,index,mean,se,runs`.
pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(["speaker", "index", "mean", "se", "runs"]).expect("in-memory write");
    }
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

/// For each pair of configurations, the number of encoded dimensions in
/// which they differ by more than `threshold` (a fraction of the range).
pub fn pairwise_distinct_dimensions(
    space: &SearchSpace,
    configs: &[Configuration],
    threshold: f64,
) -> Result<Vec<(usize, usize, usize)>, crate::space::SpaceError> {
    let encoded = configs.iter().map(|c| space.encode(c)).collect::<Result<Vec<_>, _>>()?;
    let mut out = Vec::new();
    for i in 0..encoded.len() {
        for j in i + 1..encoded.len() {
            let n = encoded[i]
                .as_slice()
                .iter()
                .zip(encoded[j].as_slice())
                .filter(|(a, b)| (*a - *b).abs() > threshold)
                .count();
            out.push((i, j, n));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{boffin_preset, preset_baseline_config};

    fn small_spec() -> BenchmarkSpec {
        BenchmarkSpec {
            space: boffin_preset(),
            family: SurrogateFamily::default(),
            speakers: vec![0, 1],
            seeds: vec![0, 1, 2],
            strategies: vec![Strategy::Rs, Strategy::Baseline],
            n_init: 5,
            budget: 20,
            baseline_config: preset_baseline_config(),
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn cell_accounting_and_summary() {
        let spec = small_spec();
        assert_eq!(spec.cells().len(), 12);
        let outcomes = run_cells(&spec);
        let summary = summarize(&spec, &outcomes);
        assert_eq!(summary.total_cells, 12);
        assert!(summary.failed_cells.is_empty());
        let rs = summary.strategy(Strategy::Rs).unwrap();
        assert_eq!(rs.speakers.len(), 2);
        assert_eq!(rs.speakers[0].final_incumbents.len(), 3);
        let w = summary.win_rate(Strategy::Rs, Strategy::Baseline).unwrap();
        assert_eq!(w.speakers, 2);
        // traces: rs has budget rows per speaker, baseline one
        assert_eq!(mean_traces(Strategy::Rs, &outcomes).len(), 2 * 20);
        assert_eq!(mean_traces(Strategy::Baseline, &outcomes).len(), 2);
        let rows = mean_traces(Strategy::Rs, &outcomes);
        assert_eq!(parse_trace_csv(&trace_csv(&rows)).unwrap(), rows);
        assert!(parse_trace_csv(&trace_csv(&[])).unwrap().is_empty());
        let json = serde_json::to_string(&summary).unwrap();
        assert_eq!(serde_json::from_str::<BenchmarkSummary>(&json).unwrap(), summary);
    }

    #[test]
    fn parallel_cells_match_sequential() {
        let spec = small_spec();
        let par = run_cells(&spec);
        let seq: Vec<_> = spec.cells().into_iter().map(|id| run_cell(&spec, id)).collect();
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.result.as_ref().unwrap().to_jsonl(), b.result.as_ref().unwrap().to_jsonl());
        }
    }

    #[test]
    fn validation() {
        let mut spec = small_spec();
        spec.strategies.clear();
        assert!(spec.validate().is_err());
        let mut spec = small_spec();
        spec.n_init = 50;
        assert!(spec.validate().is_err());
        assert!(small_spec().validate().is_ok());
    }

    #[test]
    fn distinct_dimension_counts() {
        let space = boffin_preset();
        let a = space.decode_slice(&[0.1; 9]).unwrap();
        let mut u = vec![0.1; 9];
        u[0] = 0.5;
        u[3] = 0.9;
        let b = space.decode_slice(&u).unwrap();
        let pairs = pairwise_distinct_dimensions(&space, &[a, b], 0.1).unwrap();
        assert_eq!(pairs, vec![(0, 1, 2)]);
    }
}
