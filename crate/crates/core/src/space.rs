//! Tunable parameter spaces and their encoding onto the unit hypercube.
//!
//! Every configuration lives in two coordinate systems: the native one the
//! objective sees (learning rates, batch sizes, labels) and the unit cube
//! `[0, 1]^d` the surrogate and acquisition work in. Continuous and integer
//! parameters are interpolated linearly or logarithmically; integers are
//! relaxed to reals inside the cube and rounded on decode. Categorical
//! parameters with `k` choices occupy `k` equal buckets and encode to the
//! bucket center.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpaceError {
    #[error("parameter `{0}`: {1}")]
    InvalidSpec(String, String),
    #[error("duplicate parameter name `{0}`")]
    DuplicateName(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("missing value for parameter `{0}`")]
    MissingParameter(String),
    #[error("value for `{name}` out of bounds: {value}")]
    OutOfBounds { name: String, value: String },
    #[error("value for `{name}` has the wrong type: expected {expected}")]
    WrongType { name: String, expected: &'static str },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unit coordinate {0} outside [0, 1]")]
    CoordinateOutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamKind {
    Continuous { low: f64, high: f64, scale: Scale },
    Integer { low: i64, high: i64, scale: Scale },
    Categorical { choices: Vec<String> },
}

/// One tunable hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec", into = "RawSpec")]
pub struct ParameterSpec {
    name: String,
    kind: ParamKind,
}

impl ParameterSpec {
    pub fn continuous(name: &str, low: f64, high: f64, scale: Scale) -> Result<Self, SpaceError> {
        Self::new(name, ParamKind::Continuous { low, high, scale })
    }

    pub fn integer(name: &str, low: i64, high: i64, scale: Scale) -> Result<Self, SpaceError> {
        Self::new(name, ParamKind::Integer { low, high, scale })
    }

    pub fn categorical<S: AsRef<str>>(name: &str, choices: &[S]) -> Result<Self, SpaceError> {
        let choices = choices.iter().map(|c| c.as_ref().to_string()).collect();
        Self::new(name, ParamKind::Categorical { choices })
    }

    pub fn new(name: &str, kind: ParamKind) -> Result<Self, SpaceError> {
        let bad = |msg: &str| Err(SpaceError::InvalidSpec(name.to_string(), msg.to_string()));
        if name.is_empty() {
            return bad("empty name");
        }
        match &kind {
            ParamKind::Continuous { low, high, scale } => {
                if !low.is_finite() || !high.is_finite() {
                    return bad("bounds must be finite");
                }
                if low >= high {
                    return bad("continuous bounds require low < high");
                }
                if *scale == Scale::Log && *low <= 0.0 {
                    return bad("log scale requires low > 0");
                }
            }
            ParamKind::Integer { low, high, scale } => {
                if low > high {
                    return bad("integer bounds require low <= high");
                }
                if *scale == Scale::Log && *low <= 0 {
                    return bad("log scale requires low > 0");
                }
            }
            ParamKind::Categorical { choices } => {
                if choices.is_empty() {
                    return bad("categorical needs at least one choice");
                }
                let mut seen = HashSet::new();
                if !choices.iter().all(|c| seen.insert(c.as_str())) {
                    return bad("categorical choices must be distinct");
                }
            }
        }
        Ok(Self {
            name: name.to_string(),
            kind,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> &ParamKind {
        &self.kind
    }

    pub fn is_discrete(&self) -> bool {
        !matches!(self.kind, ParamKind::Continuous { .. })
    }

    /// Checks a value against this parameter, coercing integral reals for
    /// integer parameters and integers for continuous ones.
    pub fn coerce(&self, value: &ParamValue) -> Result<ParamValue, SpaceError> {
        let out_of_bounds = || SpaceError::OutOfBounds {
            name: self.name.clone(),
            value: value.to_string(),
        };
        match (&self.kind, value) {
            (ParamKind::Continuous { low, high, .. }, ParamValue::Real(_) | ParamValue::Int(_)) => {
                let v = value.as_f64().unwrap();
                if v.is_finite() && *low <= v && v <= *high {
                    Ok(ParamValue::Real(v))
                } else {
                    Err(out_of_bounds())
                }
            }
            (ParamKind::Integer { low, high, .. }, ParamValue::Int(v)) => {
                if low <= v && v <= high {
                    Ok(ParamValue::Int(*v))
                } else {
                    Err(out_of_bounds())
                }
            }
            (ParamKind::Integer { .. }, ParamValue::Real(v)) if v.fract() == 0.0 && v.abs() < 9e15 => {
                self.coerce(&ParamValue::Int(*v as i64))
            }
            (ParamKind::Categorical { choices }, ParamValue::Label(l)) => {
                if choices.contains(l) {
                    Ok(value.clone())
                } else {
                    Err(out_of_bounds())
                }
            }
            (kind, _) => Err(SpaceError::WrongType {
                name: self.name.clone(),
                expected: match kind {
                    ParamKind::Continuous { .. } => "a real number",
                    ParamKind::Integer { .. } => "an integer",
                    ParamKind::Categorical { .. } => "a string label",
                },
            }),
        }
    }

    fn encode_value(&self, value: &ParamValue) -> Result<f64, SpaceError> {
        let value = self.coerce(value)?;
        Ok(match (&self.kind, &value) {
            (ParamKind::Continuous { low, high, scale }, ParamValue::Real(v)) => {
                interpolate_to_unit(*v, *low, *high, *scale)
            }
            (ParamKind::Integer { low, high, scale }, ParamValue::Int(v)) => {
                if low == high {
                    0.5
                } else {
                    interpolate_to_unit(*v as f64, *low as f64, *high as f64, *scale)
                }
            }
            (ParamKind::Categorical { choices }, ParamValue::Label(l)) => {
                let idx = choices.iter().position(|c| c == l).unwrap();
                (idx as f64 + 0.5) / choices.len() as f64
            }
            _ => unreachable!("coerce returns the kind's own value type"),
        })
    }

    fn decode_coord(&self, u: f64) -> ParamValue {
        match &self.kind {
            ParamKind::Continuous { low, high, scale } => {
                ParamValue::Real(quantize(interpolate_from_unit(u, *low, *high, *scale)).clamp(*low, *high))
            }
            ParamKind::Integer { low, high, scale } => {
                let v = interpolate_from_unit(u, *low as f64, *high as f64, *scale).round() as i64;
                ParamValue::Int(v.clamp(*low, *high))
            }
            ParamKind::Categorical { choices } => {
                let k = choices.len();
                let idx = ((u * k as f64).floor() as usize).min(k - 1);
                ParamValue::Label(choices[idx].clone())
            }
        }
    }
}

/// Significant decimal digits kept by [`quantize`].
const DECODE_DIGITS: i32 = 12;

/// Rounds to [`DECODE_DIGITS`] significant digits. Encoding a quantized value
/// and decoding it again lands back on the same double, which makes
/// `decode(encode(c)) == c` exact for every decoded configuration.
fn quantize(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let exponent = DECODE_DIGITS - 1 - v.abs().log10().floor() as i32;
    if exponent >= 0 {
        let s = 10f64.powi(exponent);
        (v * s).round() / s
    } else {
        let s = 10f64.powi(-exponent);
        (v / s).round() * s
    }
}

fn interpolate_to_unit(v: f64, low: f64, high: f64, scale: Scale) -> f64 {
    let u = match scale {
        Scale::Linear => (v - low) / (high - low),
        Scale::Log => (v.ln() - low.ln()) / (high.ln() - low.ln()),
    };
    u.clamp(0.0, 1.0)
}

fn interpolate_from_unit(u: f64, low: f64, high: f64, scale: Scale) -> f64 {
    match scale {
        Scale::Linear => low + u * (high - low),
        Scale::Log => (low.ln() + u * (high.ln() - low.ln())).exp(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSpec {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    low: Option<serde_json::Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    high: Option<serde_json::Number>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<Scale>,
}

impl TryFrom<RawSpec> for ParameterSpec {
    type Error = SpaceError;

    fn try_from(raw: RawSpec) -> Result<Self, SpaceError> {
        let invalid = |msg: &str| SpaceError::InvalidSpec(raw.name.clone(), msg.to_string());
        let scale = raw.scale.unwrap_or_default();
        match raw.kind.as_str() {
            "continuous" => {
                let low = raw.low.as_ref().and_then(|n| n.as_f64()).ok_or_else(|| invalid("missing `low`"))?;
                let high = raw.high.as_ref().and_then(|n| n.as_f64()).ok_or_else(|| invalid("missing `high`"))?;
                ParameterSpec::continuous(&raw.name, low, high, scale)
            }
            "integer" => {
                let as_int = |n: &Option<serde_json::Number>, field: &str| {
                    n.as_ref()
                        .and_then(|n| n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)))
                        .ok_or_else(|| invalid(&format!("missing or non-integer `{field}`")))
                };
                let low = as_int(&raw.low, "low")?;
                let high = as_int(&raw.high, "high")?;
                ParameterSpec::integer(&raw.name, low, high, scale)
            }
            "categorical" => {
                if raw.scale == Some(Scale::Log) {
                    return Err(invalid("log scale is not allowed for categorical parameters"));
                }
                let choices = raw.choices.clone().ok_or_else(|| invalid("missing `choices`"))?;
                ParameterSpec::categorical(&raw.name, &choices)
            }
            other => Err(invalid(&format!("unknown kind `{other}`"))),
        }
    }
}

impl From<ParameterSpec> for RawSpec {
    fn from(spec: ParameterSpec) -> Self {
        let num = |v: f64| serde_json::Number::from_f64(v);
        match spec.kind {
            ParamKind::Continuous { low, high, scale } => RawSpec {
                name: spec.name,
                kind: "continuous".into(),
                low: num(low),
                high: num(high),
                choices: None,
                scale: Some(scale),
            },
            ParamKind::Integer { low, high, scale } => RawSpec {
                name: spec.name,
                kind: "integer".into(),
                low: Some(low.into()),
                high: Some(high.into()),
                choices: None,
                scale: Some(scale),
            },
            ParamKind::Categorical { choices } => RawSpec {
                name: spec.name,
                kind: "categorical".into(),
                low: None,
                high: None,
                choices: Some(choices),
                scale: None,
            },
        }
    }
}

/// A single parameter value in native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Label(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Real(v) => Some(*v),
            ParamValue::Label(_) => None,
        }
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            ParamValue::Label(l) => Some(l),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Real(v) => write!(f, "{v}"),
            ParamValue::Label(l) => write!(f, "{l}"),
        }
    }
}

/// Name → value assignment for every parameter of a space.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(BTreeMap<String, ParamValue>);

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: ParamValue) -> Self {
        self.0.insert(name.to_string(), value);
        self
    }

    pub fn insert(&mut self, name: &str, value: ParamValue) {
        self.0.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    /// Numeric value of a continuous or integer parameter.
    pub fn get_f64(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(ParamValue::as_f64)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamValue)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(String, ParamValue)> for Configuration {
    fn from_iter<I: IntoIterator<Item = (String, ParamValue)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Point in `[0, 1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn new(coords: Vec<f64>) -> Result<Self, SpaceError> {
        if let Some(&bad) = coords.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(SpaceError::CoordinateOutOfRange(bad));
        }
        Ok(Self(coords))
    }

    /// Clamps every coordinate into `[0, 1]`; NaN maps to 0.
    pub fn clamped(coords: Vec<f64>) -> Self {
        Self(
            coords
                .into_iter()
                .map(|c| if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) })
                .collect(),
        )
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Ordered list of parameters; the order fixes the coordinate order of encodings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpace")]
pub struct SearchSpace {
    params: Vec<ParameterSpec>,
}

#[derive(Deserialize)]
struct RawSpace {
    params: Vec<ParameterSpec>,
}

impl TryFrom<RawSpace> for SearchSpace {
    type Error = SpaceError;

    fn try_from(raw: RawSpace) -> Result<Self, SpaceError> {
        SearchSpace::new(raw.params)
    }
}

impl SearchSpace {
    pub fn new(params: Vec<ParameterSpec>) -> Result<Self, SpaceError> {
        let mut seen = HashSet::new();
        for p in &params {
            if !seen.insert(p.name.clone()) {
                return Err(SpaceError::DuplicateName(p.name.clone()));
            }
        }
        Ok(Self { params })
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("search space serializes")
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParameterSpec] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&ParameterSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Validates `config` and returns it with values coerced to each
    /// parameter's native type.
    pub fn validate(&self, config: &Configuration) -> Result<Configuration, SpaceError> {
        if let Some((name, _)) = config.iter().find(|(n, _)| self.param(n).is_none()) {
            return Err(SpaceError::UnknownParameter(name.clone()));
        }
        self.params
            .iter()
            .map(|p| {
                let v = config
                    .get(&p.name)
                    .ok_or_else(|| SpaceError::MissingParameter(p.name.clone()))?;
                Ok((p.name.clone(), p.coerce(v)?))
            })
            .collect()
    }

    pub fn encode(&self, config: &Configuration) -> Result<UnitVector, SpaceError> {
        if let Some((name, _)) = config.iter().find(|(n, _)| self.param(n).is_none()) {
            return Err(SpaceError::UnknownParameter(name.clone()));
        }
        let coords = self
            .params
            .iter()
            .map(|p| {
                let v = config
                    .get(&p.name)
                    .ok_or_else(|| SpaceError::MissingParameter(p.name.clone()))?;
                p.encode_value(v)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(UnitVector(coords))
    }

    pub fn decode(&self, u: &UnitVector) -> Result<Configuration, SpaceError> {
        self.decode_slice(u.as_slice())
    }

    /// Decodes raw coordinates; values outside `[0, 1]` are clamped.
    pub fn decode_slice(&self, u: &[f64]) -> Result<Configuration, SpaceError> {
        if u.len() != self.dim() {
            return Err(SpaceError::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        Ok(self
            .params
            .iter()
            .zip(u)
            .map(|(p, &c)| {
                let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
                (p.name.clone(), p.decode_coord(c))
            })
            .collect())
    }

    /// Maps a relaxed point onto the nearest feasible point in encoded
    /// coordinates: `encode(decode(u))`.
    pub fn snap(&self, u: &[f64]) -> Result<Vec<f64>, SpaceError> {
        let config = self.decode_slice(u)?;
        Ok(self.encode(&config)?.into_inner())
    }

    /// Draws `n` points uniformly in the unit cube and decodes them.
    /// Draws are sequential, so a shorter request is a prefix of a longer one.
    pub fn sample(&self, rng_seed: u64, n: usize) -> Vec<Configuration> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        (0..n)
            .map(|_| {
                let u: Vec<f64> = (0..self.dim()).map(|_| rng.random::<f64>()).collect();
                self.decode_slice(&u).expect("sampled dimension matches")
            })
            .collect()
    }
}

/// Default upper bound for `base_epoch` in the preset space.
pub const PRESET_MAX_EPOCH: i64 = 100;

/// The nine-parameter adaptation space: learning dynamics, regularization,
/// corpus mixing and starting checkpoint.
///
/// Bounds are defaults, not measured values. `batch_size` and `base_epoch`
/// are integers; everything else is continuous.
pub fn boffin_preset() -> SearchSpace {
    boffin_preset_with_max_epoch(PRESET_MAX_EPOCH)
}

pub fn boffin_preset_with_max_epoch(max_epoch: i64) -> SearchSpace {
    use Scale::{Linear, Log};
    let params = vec![
        ParameterSpec::continuous("learning_rate", 1e-6, 1e-2, Log),
        ParameterSpec::integer("batch_size", 8, 64, Linear),
        ParameterSpec::continuous("decay_factor", 0.1, 1.0, Linear),
        ParameterSpec::continuous("grad_clip_threshold", 0.01, 10.0, Log),
        ParameterSpec::continuous("dropout", 0.0, 0.9, Linear),
        ParameterSpec::continuous("zoneout_cell", 0.0, 0.9, Linear),
        ParameterSpec::continuous("zoneout_output", 0.0, 0.9, Linear),
        ParameterSpec::continuous("mixing_ratio", 0.0, 1.0, Linear),
        ParameterSpec::integer("base_epoch", 1, max_epoch.max(1), Linear),
    ];
    SearchSpace::new(params.into_iter().collect::<Result<_, _>>().expect("preset specs are valid"))
        .expect("preset names are unique")
}

/// The fixed, speaker-independent configuration used by the baseline
/// strategy: base-model training settings, no rehearsal data, and the
/// final base checkpoint.
pub fn preset_baseline_config() -> Configuration {
    Configuration::new()
        .with("learning_rate", ParamValue::Real(1e-3))
        .with("batch_size", ParamValue::Int(32))
        .with("decay_factor", ParamValue::Real(0.5))
        .with("grad_clip_threshold", ParamValue::Real(1.0))
        .with("dropout", ParamValue::Real(0.5))
        .with("zoneout_cell", ParamValue::Real(0.1))
        .with("zoneout_output", ParamValue::Real(0.1))
        .with("mixing_ratio", ParamValue::Real(0.0))
        .with("base_epoch", ParamValue::Int(PRESET_MAX_EPOCH))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(spec: ParameterSpec) -> SearchSpace {
        SearchSpace::new(vec![spec]).unwrap()
    }

    fn mixed_space() -> SearchSpace {
        SearchSpace::new(vec![
            ParameterSpec::continuous("x", -2.0, 3.0, Scale::Linear).unwrap(),
            ParameterSpec::continuous("lr", 1e-5, 1e-1, Scale::Log).unwrap(),
            ParameterSpec::integer("n", 1, 9, Scale::Linear).unwrap(),
            ParameterSpec::integer("m", 2, 512, Scale::Log).unwrap(),
            ParameterSpec::categorical("opt", &["sgd", "adam", "rmsprop"]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn encode_lower_bound() {
        let s = one(ParameterSpec::continuous("x", 0.0, 10.0, Scale::Linear).unwrap());
        let c = Configuration::new().with("x", ParamValue::Real(0.0));
        assert_eq!(s.encode(&c).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn encode_log_midpoint() {
        let s = one(ParameterSpec::continuous("lr", 1e-5, 1e-1, Scale::Log).unwrap());
        let c = Configuration::new().with("lr", ParamValue::Real(1e-3));
        assert!((s.encode(&c).unwrap().as_slice()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn encode_categorical_bucket_center() {
        let s = one(ParameterSpec::categorical("c", &["a", "b"]).unwrap());
        let c = Configuration::new().with("c", ParamValue::Label("b".into()));
        assert_eq!(s.encode(&c).unwrap().as_slice(), &[0.75]);
    }

    #[test]
    fn encode_errors() {
        let s = one(ParameterSpec::continuous("x", 0.0, 10.0, Scale::Linear).unwrap());
        let c = Configuration::new().with("y", ParamValue::Real(1.0));
        assert_eq!(s.encode(&c), Err(SpaceError::UnknownParameter("y".into())));
        let c = Configuration::new().with("x", ParamValue::Real(11.0));
        assert!(matches!(s.encode(&c), Err(SpaceError::OutOfBounds { .. })));
        let c = Configuration::new().with("x", ParamValue::Label("no".into()));
        assert!(matches!(s.encode(&c), Err(SpaceError::WrongType { .. })));
    }

    #[test]
    fn decode_integer_midpoint() {
        let s = one(ParameterSpec::integer("n", 1, 9, Scale::Linear).unwrap());
        let c = s.decode(&UnitVector::new(vec![0.5]).unwrap()).unwrap();
        assert_eq!(c.get("n"), Some(&ParamValue::Int(5)));
    }

    #[test]
    fn decode_categorical_top_bucket() {
        let s = one(ParameterSpec::categorical("c", &["a", "b", "c"]).unwrap());
        for u in [0.999, 1.0] {
            let c = s.decode(&UnitVector::new(vec![u]).unwrap()).unwrap();
            assert_eq!(c.get("c").unwrap().as_label(), Some("c"));
        }
    }

    #[test]
    fn decode_dimension_mismatch() {
        let s = mixed_space();
        assert_eq!(
            s.decode_slice(&[0.5]),
            Err(SpaceError::DimensionMismatch { expected: 5, got: 1 })
        );
    }

    #[test]
    fn parameter_invariants_rejected() {
        assert!(ParameterSpec::continuous("x", 1.0, 1.0, Scale::Linear).is_err());
        assert!(ParameterSpec::integer("n", 3, 3, Scale::Linear).is_ok());
        assert!(ParameterSpec::integer("n", 4, 3, Scale::Linear).is_err());
        assert!(ParameterSpec::continuous("x", 0.0, 1.0, Scale::Log).is_err());
        assert!(ParameterSpec::categorical::<&str>("c", &[]).is_err());
        assert!(ParameterSpec::categorical("c", &["a", "a"]).is_err());
        let p = ParameterSpec::continuous("x", 0.0, 1.0, Scale::Linear).unwrap();
        assert_eq!(
            SearchSpace::new(vec![p.clone(), p]),
            Err(SpaceError::DuplicateName("x".into()))
        );
    }

    #[test]
    fn sample_empty_and_deterministic() {
        let s = mixed_space();
        assert!(s.sample(3, 0).is_empty());
        assert_eq!(s.sample(3, 50), s.sample(3, 50));
        assert_ne!(s.sample(3, 5), s.sample(4, 5));
        assert_eq!(s.sample(3, 5)[..], s.sample(3, 20)[..5]);
    }

    #[test]
    fn sample_uniform_mean() {
        let s = one(ParameterSpec::continuous("x", 0.0, 1.0, Scale::Linear).unwrap());
        let xs: Vec<f64> = s.sample(11, 10_000).iter().map(|c| c.get_f64("x").unwrap()).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn sample_passes_ks_test() {
        // One-sample Kolmogorov-Smirnov against U(0,1) on every encoded axis.
        let s = mixed_space();
        let n = 4000;
        let configs = s.sample(99, n);
        let cont = one(ParameterSpec::continuous("x", -2.0, 3.0, Scale::Linear).unwrap());
        let lr = one(ParameterSpec::continuous("lr", 1e-5, 1e-1, Scale::Log).unwrap());
        for (axis, sub) in [("x", &cont), ("lr", &lr)] {
            let mut u: Vec<f64> = configs
                .iter()
                .map(|c| {
                    let single = Configuration::new().with(axis, c.get(axis).unwrap().clone());
                    sub.encode(&single).unwrap().as_slice()[0]
                })
                .collect();
            u.sort_by(f64::total_cmp);
            let d = u
                .iter()
                .enumerate()
                .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
                .fold(0.0, f64::max);
            // 1% critical value: 1.63 / sqrt(n).
            assert!(d < 1.63 / (n as f64).sqrt(), "axis {axis}: D = {d}");
        }
    }

    #[test]
    fn preset_shape() {
        let s = boffin_preset();
        assert_eq!(s.dim(), 9);
        match s.param("mixing_ratio").unwrap().kind() {
            ParamKind::Continuous { low, high, .. } => assert_eq!((*low, *high), (0.0, 1.0)),
            other => panic!("unexpected kind {other:?}"),
        }
        let base = preset_baseline_config();
        assert_eq!(s.validate(&base).unwrap(), base);
        for c in s.sample(5, 200) {
            assert_eq!(s.decode(&s.encode(&c).unwrap()).unwrap(), c);
        }
    }

    #[test]
    fn json_round_trip_keeps_order() {
        let s = mixed_space();
        let text = s.to_json();
        let back = SearchSpace::from_json(&text).unwrap();
        assert_eq!(back, s);
        let names: Vec<_> = back.params().iter().map(|p| p.name()).collect();
        assert_eq!(names, ["x", "lr", "n", "m", "opt"]);
    }

    #[test]
    fn json_rejects_invalid_parameters() {
        let bad = r#"{"params":[{"name":"x","kind":"continuous","low":1,"high":0}]}"#;
        assert!(SearchSpace::from_json(bad).is_err());
        let dup = r#"{"params":[{"name":"a","kind":"categorical","choices":["p"]},
                                {"name":"a","kind":"categorical","choices":["q"]}]}"#;
        assert!(SearchSpace::from_json(dup).is_err());
        let ok = r#"{"params":[{"name":"n","kind":"integer","low":1,"high":4,"scale":"log"}]}"#;
        assert_eq!(SearchSpace::from_json(ok).unwrap().dim(), 1);
    }

    proptest! {
        #[test]
        fn decode_always_valid(u in proptest::collection::vec(prop_oneof![Just(0.0), Just(1.0), 0.0f64..=1.0], 5)) {
            let s = mixed_space();
            let c = s.decode_slice(&u).unwrap();
            prop_assert!(s.validate(&c).is_ok());
        }

        #[test]
        fn encode_decode_identity(u in proptest::collection::vec(0.0f64..=1.0, 5)) {
            let s = mixed_space();
            let c = s.decode_slice(&u).unwrap();
            let back = s.decode(&s.encode(&c).unwrap()).unwrap();
            prop_assert_eq!(c, back);
        }
    }
}
