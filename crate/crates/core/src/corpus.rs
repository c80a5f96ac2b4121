//! Corpus manifests and the adaptation-data plumbing around them:
//! validation holdout, rehearsal mixing with base-speaker data, and the
//! early-stopping monitor driven by the held-out loss.
//!
//! The mixing ratio is the fraction of *base-speaker utterances* in the
//! mixed corpus: ratio 0 is the target data alone, ratio 0.5 adds as many
//! base utterances as there are target utterances.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use log::warn;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::{derive_seed, Stream};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate utterance id `{0}`")]
    DuplicateId(String),
    #[error("utterance `{0}` has a non-positive duration")]
    InvalidDuration(String),
    #[error("manifest is empty")]
    Empty,
    #[error("holdout fraction must lie strictly between 0 and 1, got {0}")]
    FractionOutOfRange(f64),
    #[error("mixing ratio must lie in [0, 1), got {0}")]
    RatioOutOfRange(f64),
    #[error("base manifest is empty but {0} base utterances were requested")]
    EmptyBase(usize),
    #[error("step {step} does not follow step {previous}")]
    NonMonotoneStep { previous: u64, step: u64 },
    #[error("early stopping already triggered")]
    AlreadyStopped,
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Target,
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub speaker_id: String,
    pub audio_path: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UtteranceManifest {
    entries: Vec<Utterance>,
}

impl UtteranceManifest {
    pub fn new(entries: Vec<Utterance>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert(e.utterance_id.as_str()) {
                return Err(CorpusError::DuplicateId(e.utterance_id.clone()));
            }
            if let Some(d) = e.duration_s {
                if !(d > 0.0 && d.is_finite()) {
                    return Err(CorpusError::InvalidDuration(e.utterance_id.clone()));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Utterance] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_jsonl(text: &str) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let u: Utterance = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            entries.push(u);
        }
        Self::new(entries)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("utterance serializes"));
            out.push('\n');
        }
        out
    }

    /// Reads the CSV variant. Header: `utterance_id,speaker_id,audio_path,text,duration_s`
    /// with an optional trailing `origin` column.
    pub fn from_csv(text: &str) -> Result<Self, CorpusError> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut entries = Vec::new();
        for (i, row) in reader.deserialize::<CsvRow>().enumerate() {
            // header is line 1
            let line = row
                .as_ref()
                .err()
                .and_then(|e| e.position().map(|p| p.line() as usize))
                .unwrap_or(i + 2);
            let row = row.map_err(|e| CorpusError::Parse {
                line,
                message: e.to_string(),
            })?;
            entries.push(row.into());
        }
        Self::new(entries)
    }

    pub fn to_csv(&self) -> String {
        let with_origin = self.entries.iter().any(|e| e.origin.is_some());
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["utterance_id", "speaker_id", "audio_path", "text", "duration_s"];
        if with_origin {
            header.push("origin");
        }
        writer.write_record(&header).expect("in-memory write");
        for e in &self.entries {
            let mut rec = vec![
                e.utterance_id.clone(),
                e.speaker_id.clone(),
                e.audio_path.clone(),
                e.text.clone(),
                e.duration_s.map(|d| d.to_string()).unwrap_or_default(),
            ];
            if with_origin {
                rec.push(match e.origin {
                    Some(Origin::Target) => "target".into(),
                    Some(Origin::Base) => "base".into(),
                    None => String::new(),
                });
            }
            writer.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
    }

    /// Loads a manifest, choosing CSV for `.csv` files and JSONL otherwise.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = fs::read_to_string(path)?;
        if is_csv(path) {
            Self::from_csv(&text)
        } else {
            Self::from_jsonl(&text)
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        let text = if is_csv(path) { self.to_csv() } else { self.to_jsonl() };
        fs::write(path, text)?;
        Ok(())
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    utterance_id: String,
    speaker_id: String,
    audio_path: String,
    text: String,
    #[serde(default, deserialize_with = "csv::invalid_option")]
    duration_s: Option<f64>,
    #[serde(default, deserialize_with = "csv::invalid_option")]
    origin: Option<Origin>,
}

impl From<CsvRow> for Utterance {
    fn from(r: CsvRow) -> Self {
        Utterance {
            utterance_id: r.utterance_id,
            speaker_id: r.speaker_id,
            audio_path: r.audio_path,
            text: r.text,
            duration_s: r.duration_s,
            origin: r.origin,
        }
    }
}

/// Number of validation utterances for `n` entries: `fraction · n` rounded
/// half-up.
pub fn holdout_size(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64) + 0.5).floor() as usize
}

/// Splits off a uniformly sampled validation set. Both halves keep the
/// manifest's original order.
pub fn split_holdout(
    manifest: &UtteranceManifest,
    fraction: f64,
    seed: u64,
) -> Result<(UtteranceManifest, UtteranceManifest), CorpusError> {
    if manifest.is_empty() {
        return Err(CorpusError::Empty);
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CorpusError::FractionOutOfRange(fraction));
    }
    let n = manifest.len();
    let k = holdout_size(n, fraction).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, Stream::Corpus, 0));
    let picked: HashSet<usize> = index::sample(&mut rng, n, k).into_iter().collect();
    let (mut train, mut validation) = (Vec::with_capacity(n - k), Vec::with_capacity(k));
    for (i, e) in manifest.entries.iter().enumerate() {
        if picked.contains(&i) {
            validation.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    Ok((UtteranceManifest { entries: train }, UtteranceManifest { entries: validation }))
}

#[derive(Debug, Clone)]
pub struct MixPlan {
    pub target: UtteranceManifest,
    pub base: UtteranceManifest,
    /// Fraction of base utterances in the mixed output, in `[0, 1)`.
    pub ratio: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixOutcome {
    pub manifest: UtteranceManifest,
    pub base_count: usize,
    /// Set when the base pool was too small and entries were reused.
    pub with_replacement: bool,
}

/// Base utterances needed so that `b / (b + n_target) ≈ ratio`.
pub fn base_count(n_target: usize, ratio: f64) -> usize {
    (ratio * n_target as f64 / (1.0 - ratio) + 0.5).floor() as usize
}

/// Rehearsal mixing: every target utterance plus a seeded uniform draw of
/// base utterances, each tagged with its origin. Draws are without
/// replacement unless the base pool is too small; reused entries get a
/// `#rep<k>` suffix so ids stay unique.
pub fn mix(plan: &MixPlan) -> Result<MixOutcome, CorpusError> {
    let ratio = plan.ratio;
    if !(0.0..1.0).contains(&ratio) {
        return Err(CorpusError::RatioOutOfRange(ratio));
    }
    if plan.target.is_empty() {
        return Err(CorpusError::Empty);
    }
    if ratio == 0.0 {
        return Ok(MixOutcome {
            manifest: plan.target.clone(),
            base_count: 0,
            with_replacement: false,
        });
    }
    let b = base_count(plan.target.len(), ratio);
    let pool = plan.base.entries();
    if b > 0 && pool.is_empty() {
        return Err(CorpusError::EmptyBase(b));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, Stream::Corpus, 1));
    let with_replacement = b > pool.len();
    let drawn: Vec<usize> = if with_replacement {
        warn!("base pool has {} utterances but {b} were requested; sampling with replacement", pool.len());
        (0..b).map(|_| rng.random_range(0..pool.len())).collect()
    } else {
        let mut idx = index::sample(&mut rng, pool.len(), b).into_vec();
        idx.sort_unstable();
        idx
    };

    let mut entries: Vec<Utterance> = plan
        .target
        .entries()
        .iter()
        .cloned()
        .map(|mut e| {
            e.origin = Some(Origin::Target);
            e
        })
        .collect();
    let mut uses = vec![0usize; pool.len()];
    for i in drawn {
        let mut e = pool[i].clone();
        if uses[i] > 0 {
            e.utterance_id = format!("{}#rep{}", e.utterance_id, uses[i]);
        }
        uses[i] += 1;
        e.origin = Some(Origin::Base);
        entries.push(e);
    }
    Ok(MixOutcome {
        manifest: UtteranceManifest::new(entries)?,
        base_count: b,
        with_replacement,
    })
}

pub const DEFAULT_PATIENCE: u32 = 5;

/// Patience-based early stopping on a validation-loss stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopState {
    pub best_loss: f64,
    pub best_step: Option<u64>,
    pub patience: u32,
    pub steps_since_improvement: u32,
    pub min_delta: f64,
    pub last_step: Option<u64>,
    pub stopped: bool,
}

impl Default for EarlyStopState {
    fn default() -> Self {
        Self::new(DEFAULT_PATIENCE, 0.0)
    }
}

impl EarlyStopState {
    pub fn new(patience: u32, min_delta: f64) -> Self {
        Self {
            best_loss: f64::INFINITY,
            best_step: None,
            patience,
            steps_since_improvement: 0,
            min_delta: min_delta.max(0.0),
            last_step: None,
            stopped: false,
        }
    }

    /// Feeds one validation loss. An improvement is a loss below
    /// `best_loss − min_delta`; the stop flag is raised when the count of
    /// non-improving steps exceeds `patience`.
    pub fn update(&self, step: u64, validation_loss: f64) -> Result<(EarlyStopState, bool), CorpusError> {
        if self.stopped {
            return Err(CorpusError::AlreadyStopped);
        }
        if let Some(previous) = self.last_step {
            if step <= previous {
                return Err(CorpusError::NonMonotoneStep { previous, step });
            }
        }
        let mut next = *self;
        next.last_step = Some(step);
        if validation_loss < self.best_loss - self.min_delta {
            next.best_loss = validation_loss;
            next.best_step = Some(step);
            next.steps_since_improvement = 0;
        } else {
            next.steps_since_improvement += 1;
        }
        next.stopped = next.steps_since_improvement > next.patience;
        Ok((next, next.stopped))
    }
}
