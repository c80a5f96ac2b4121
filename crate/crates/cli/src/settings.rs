//! Config-file defaults. Flags override file values, which override the
//! built-in presets. Relative paths in the file resolve against the file's
//! directory.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use boffin_core::objectives::SurrogateFamily;
use boffin_core::space::{boffin_preset, preset_baseline_config, Configuration, SearchSpace};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::Value;

pub const PRESET: &str = "boffin-preset";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Path, `boffin-preset`, or an inline space object.
    pub space: Option<Value>,
    pub objective: Option<String>,
    pub strategy: Option<String>,
    pub budget: Option<usize>,
    pub n_init: Option<usize>,
    pub baseline_config: Option<Value>,
    pub speaker: Option<u64>,
    pub family: Option<Value>,
    pub command: Option<String>,
    pub strategies: Option<Vec<String>>,
    pub speakers: Option<usize>,
    pub seeds: Option<usize>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
        let mut cfg: FileConfig =
            serde_json::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Some(out) = cfg.out.take() {
            cfg.out = Some(cfg.base_dir.join(out));
        }
        Ok(cfg)
    }

    fn resolve(&self, p: &str) -> PathBuf {
        self.base_dir.join(p)
    }
}

/// A value given on the command line (a path or the preset keyword) or in
/// the config file (additionally allowed inline).
pub enum Source<'a> {
    Flag(&'a str),
    File(&'a Value, &'a FileConfig),
}

pub fn pick<'a>(flag: Option<&'a str>, file: Option<&'a Value>, cfg: &'a FileConfig) -> Option<Source<'a>> {
    flag.map(Source::Flag).or(file.map(|v| Source::File(v, cfg)))
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid {what} {}", path.display()))
}

fn load<T: DeserializeOwned>(src: Source<'_>, what: &str, preset: impl FnOnce() -> T) -> Result<T> {
    match src {
        Source::Flag(s) if s == PRESET => Ok(preset()),
        Source::Flag(s) => read_json(Path::new(s), what),
        Source::File(Value::String(s), _) if s == PRESET => Ok(preset()),
        Source::File(Value::String(s), cfg) => read_json(&cfg.resolve(s), what),
        Source::File(v @ Value::Object(_), _) => {
            serde_json::from_value(v.clone()).with_context(|| format!("invalid inline {what} in config file"))
        }
        Source::File(_, _) => bail!("{what} in config file must be a path or an object"),
    }
}

pub fn load_space(src: Option<Source<'_>>) -> Result<SearchSpace> {
    match src {
        None => Ok(boffin_preset()),
        Some(s) => load(s, "search space", boffin_preset),
    }
}

pub fn load_baseline(src: Option<Source<'_>>) -> Result<Option<Configuration>> {
    src.map(|s| load(s, "baseline config", preset_baseline_config)).transpose()
}

pub fn load_family(flag: Option<&Path>, cfg: &FileConfig) -> Result<SurrogateFamily> {
    let family = match (flag, &cfg.family) {
        (Some(p), _) => read_json(p, "surrogate family")?,
        (None, Some(v)) => load(Source::File(v, cfg), "surrogate family", SurrogateFamily::default)?,
        (None, None) => SurrogateFamily::default(),
    };
    family.validate().map_err(|e| anyhow::anyhow!("invalid surrogate family: {e}"))?;
    Ok(family)
}
