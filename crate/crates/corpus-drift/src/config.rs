//! Layered run configuration: flag > config file > built-in default.
//!
//! The file is TOML; `[section] key = v` and `"section.key" = v` are the same
//! setting. Every key can also be given as `--section.key VALUE` on the
//! command line. Relative `input.paths` and `lang.stopwords` in a file
//! resolve against the file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use corpus_drift_core::saturation::FitConfig;
use corpus_drift_core::similarity::Method;
use serde::{Deserialize, Serialize};

use crate::analyze::AnalysisConfig;
use crate::embedder::{Backend, EmbedderConfig};
use crate::ingest::{IngestOptions, YearWindow};

pub const CONFIG_ENV: &str = "CORPUS_DRIFT_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Str,
    OptStr,
    Int,
    OptInt,
    Float,
    OptFloat,
    FloatList,
    PathList,
    Years,
    Backend,
    Method,
}

pub struct KeySpec {
    pub key: &'static str,
    pub kind: Kind,
    pub default: &'static str,
    /// Short flag name, when the key has one besides its dotted form.
    pub flag: Option<&'static str>,
    pub help: &'static str,
}

const fn spec(
    key: &'static str,
    kind: Kind,
    default: &'static str,
    flag: Option<&'static str>,
    help: &'static str,
) -> KeySpec {
    KeySpec { key, kind, default, flag, help }
}

pub static KEYS: &[KeySpec] = &[
    spec("input.paths", Kind::PathList, "", Some("input"), "WET files (plain or gzip) or .txt/.lst lists of them"),
    spec("output.dir", Kind::Str, "corpus-drift-out", Some("out"), "directory for stage artifacts"),
    spec("ingest.domain", Kind::Str, "wikipedia.", Some("domain"), "substring the lowercased host must contain"),
    spec("ingest.years", Kind::Years, "2013..2025", Some("years"), "inclusive year window MIN..MAX"),
    spec("ingest.year_override", Kind::OptInt, "", None, "assign every record this year instead of its WARC-Date"),
    spec("lang.max_words", Kind::Int, "2000", None, "words examined per document"),
    spec("lang.threshold", Kind::Float, "0.15", None, "minimum stopword ratio for English"),
    spec("lang.stopwords", Kind::OptStr, "", None, "stopword list file (default: built-in list)"),
    spec("embed.backend", Kind::Backend, "hash", Some("backend"), "hash|remote"),
    spec("embed.endpoint", Kind::OptStr, "", Some("endpoint"), "sidecar base URL"),
    spec("embed.dimension", Kind::Int, "1024", None, "embedding dimension"),
    spec("embed.batch_size", Kind::Int, "64", None, "texts per sidecar request"),
    spec("embed.timeout_secs", Kind::Float, "60", None, "per-request timeout"),
    spec("embed.retries", Kind::Int, "3", None, "retries per sidecar request"),
    spec("embed.max_in_flight", Kind::Int, "1", None, "concurrent sidecar requests"),
    spec("embed.hash_seed", Kind::Int, "6840335469299048485", None, "feature-hash seed"),
    spec("similarity.method", Kind::Method, "exact", Some("method"), "exact|sampled"),
    spec("similarity.pairs", Kind::Int, "100000", Some("pairs"), "pair budget for the sampled method"),
    spec("similarity.seed", Kind::OptInt, "", Some("seed"), "sampling seed (required for sampled)"),
    spec("similarity.top_k", Kind::Int, "5", None, "covariance eigenvalues to report"),
    spec("fit.learning_rate", Kind::Float, "0.001", None, "initial step size"),
    spec("fit.max_iterations", Kind::Int, "200000", None, "iteration cap"),
    spec("fit.grad_tolerance", Kind::Float, "1e-10", None, "projected-gradient tolerance"),
    spec("fit.init_a", Kind::OptFloat, "", None, "starting amplitude (default: max(q) - min(q))"),
    spec("fit.init_b", Kind::Float, "0.1", None, "starting rate"),
    spec("fit.h0", Kind::OptFloat, "", None, "baseline similarity (default: first-year observation)"),
    spec("fit.y0", Kind::OptFloat, "", None, "start year (default: first observed year)"),
    spec("fit.levels", Kind::FloatList, "0.90,0.95,0.99", Some("levels"), "saturation levels"),
    spec("report.horizon_years", Kind::Float, "35", None, "years of forecast drawn past the last observation"),
    spec("run.workers", Kind::Int, "1", Some("workers"), "worker threads"),
];

pub fn key_spec(key: &str) -> Option<&'static KeySpec> {
    KEYS.iter().find(|s| s.key == key)
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("{key} ({origin}): {reason}")]
    BadValue { key: String, origin: Source, reason: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Default,
    File,
    Flag,
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "config file",
            Source::Flag => "flag",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Str(String),
    Int(i64),
    Float(f64),
    List(Vec<String>),
    Floats(Vec<f64>),
    Years(i32, i32),
    Unset,
}

impl Value {
    fn to_json(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            Value::Str(s) => json!(s),
            Value::Int(i) => json!(i),
            Value::Float(x) => json!(x),
            Value::List(v) => json!(v),
            Value::Floats(v) => json!(v),
            Value::Years(a, b) => json!(format!("{a}..{b}")),
            Value::Unset => serde_json::Value::Null,
        }
    }
}

fn parse_years(s: &str) -> Option<(i32, i32)> {
    let (a, b) = s.trim().split_once("..")?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

/// Parses a flag-style string.
pub fn parse_text(kind: Kind, text: &str) -> Result<Value, String> {
    let text = text.trim();
    let int = |t: &str| t.parse::<i64>().map_err(|_| format!("expected an integer, got {t:?}"));
    let float = |t: &str| t.parse::<f64>().map_err(|_| format!("expected a number, got {t:?}"));
    Ok(match kind {
        Kind::Str => Value::Str(text.to_string()),
        Kind::OptStr if text.is_empty() => Value::Unset,
        Kind::OptStr => Value::Str(text.to_string()),
        Kind::Int => Value::Int(int(text)?),
        Kind::OptInt if text.is_empty() => Value::Unset,
        Kind::OptInt => Value::Int(int(text)?),
        Kind::Float => Value::Float(float(text)?),
        Kind::OptFloat if text.is_empty() => Value::Unset,
        Kind::OptFloat => Value::Float(float(text)?),
        Kind::FloatList if text.is_empty() => Value::Floats(Vec::new()),
        Kind::FloatList => Value::Floats(text.split(',').map(|t| float(t.trim())).collect::<Result<_, _>>()?),
        Kind::PathList if text.is_empty() => Value::List(Vec::new()),
        Kind::PathList => Value::List(vec![text.to_string()]),
        Kind::Years => {
            let (a, b) = parse_years(text).ok_or_else(|| format!("expected MIN..MAX, got {text:?}"))?;
            Value::Years(a, b)
        }
        Kind::Backend => match text {
            "hash" | "remote" => Value::Str(text.to_string()),
            _ => return Err(format!("expected hash or remote, got {text:?}")),
        },
        Kind::Method => match text {
            "exact" | "sampled" => Value::Str(text.to_string()),
            _ => return Err(format!("expected exact or sampled, got {text:?}")),
        },
    })
}

/// Converts a TOML value; strings go through [`parse_text`].
pub fn parse_toml(kind: Kind, value: &toml::Value) -> Result<Value, String> {
    use toml::Value as T;
    match (kind, value) {
        (_, T::String(s)) if kind != Kind::PathList => parse_text(kind, s),
        (Kind::PathList, T::String(s)) => Ok(Value::List(vec![s.clone()])),
        (Kind::PathList, T::Array(items)) => items
            .iter()
            .map(|i| i.as_str().map(str::to_string).ok_or_else(|| "expected an array of strings".to_string()))
            .collect::<Result<_, _>>()
            .map(Value::List),
        (Kind::Int | Kind::OptInt, T::Integer(i)) => Ok(Value::Int(*i)),
        (Kind::Float | Kind::OptFloat, T::Float(x)) => Ok(Value::Float(*x)),
        (Kind::Float | Kind::OptFloat, T::Integer(i)) => Ok(Value::Float(*i as f64)),
        (Kind::FloatList, T::Array(items)) => items
            .iter()
            .map(|i| match i {
                T::Float(x) => Ok(*x),
                T::Integer(n) => Ok(*n as f64),
                _ => Err("expected an array of numbers".to_string()),
            })
            .collect::<Result<_, _>>()
            .map(Value::Floats),
        (Kind::Years, T::Array(items)) if items.len() == 2 => match (items[0].as_integer(), items[1].as_integer()) {
            (Some(a), Some(b)) => Ok(Value::Years(a as i32, b as i32)),
            _ => Err("expected [MIN, MAX]".into()),
        },
        _ => Err(format!("unexpected value {value}")),
    }
}

fn relative_to(config_file: &Path, entry: &str) -> String {
    let p = Path::new(entry);
    match config_file.parent() {
        Some(dir) if p.is_relative() && !dir.as_os_str().is_empty() => dir.join(p).display().to_string(),
        _ => entry.to_string(),
    }
}

/// Flattens nested tables into dotted keys.
pub fn flatten_toml(table: &toml::Table) -> BTreeMap<String, toml::Value> {
    fn walk(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, toml::Value>) {
        for (k, v) in table {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            match v {
                toml::Value::Table(t) => walk(&key, t, out),
                other => {
                    out.insert(key, other.clone());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    walk("", table, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setting {
    pub value: Value,
    pub source: Source,
}

/// Every known key with its resolved value and where it came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Layered {
    pub settings: BTreeMap<String, Setting>,
    pub config_path: Option<PathBuf>,
}

impl Layered {
    pub fn defaults() -> Self {
        let settings = KEYS
            .iter()
            .map(|s| {
                let value = parse_text(s.kind, s.default).expect("built-in default parses");
                (s.key.to_string(), Setting { value, source: Source::Default })
            })
            .collect();
        Self { settings, config_path: None }
    }

    pub fn apply_toml_str(&mut self, text: &str, path: &Path) -> Result<(), ConfigError> {
        let table: toml::Table =
            toml::from_str(text).map_err(|source| ConfigError::Toml { path: path.to_path_buf(), source })?;
        for (key, raw) in flatten_toml(&table) {
            let spec = key_spec(&key).ok_or_else(|| ConfigError::UnknownKey(key.clone()))?;
            let value = parse_toml(spec.kind, &raw).map_err(|reason| ConfigError::BadValue {
                key: key.clone(),
                origin: Source::File,
                reason,
            })?;
            let value = match (key.as_str(), value) {
                ("input.paths", Value::List(paths)) => {
                    Value::List(paths.iter().map(|p| relative_to(path, p)).collect())
                }
                ("lang.stopwords", Value::Str(p)) => Value::Str(relative_to(path, &p)),
                (_, value) => value,
            };
            self.settings.insert(key, Setting { value, source: Source::File });
        }
        self.config_path = Some(path.to_path_buf());
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        self.apply_toml_str(&text, path)
    }

    /// Applies one flag. Repeated path flags accumulate.
    pub fn apply_flag(&mut self, key: &str, values: &[String]) -> Result<(), ConfigError> {
        let spec = key_spec(key).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))?;
        let bad = |reason| ConfigError::BadValue { key: key.to_string(), origin: Source::Flag, reason };
        let value = match spec.kind {
            Kind::PathList => Value::List(values.to_vec()),
            _ => {
                let last = values.last().map(String::as_str).unwrap_or("");
                parse_text(spec.kind, last).map_err(bad)?
            }
        };
        self.settings.insert(key.to_string(), Setting { value, source: Source::Flag });
        Ok(())
    }

    /// Config file from `explicit`, else `$CORPUS_DRIFT_CONFIG`, then flags.
    pub fn resolve(explicit: Option<&Path>, flags: &[(String, Vec<String>)]) -> Result<Self, ConfigError> {
        let env = std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
        Self::resolve_with_env(explicit, env.as_deref(), flags)
    }

    pub fn resolve_with_env(
        explicit: Option<&Path>,
        env: Option<&Path>,
        flags: &[(String, Vec<String>)],
    ) -> Result<Self, ConfigError> {
        let mut layered = Self::defaults();
        if let Some(path) = explicit.or(env) {
            layered.apply_file(path)?;
        }
        for (key, values) in flags {
            layered.apply_flag(key, values)?;
        }
        Ok(layered)
    }

    fn get(&self, key: &str) -> &Value {
        &self.settings.get(key).unwrap_or_else(|| panic!("unregistered key {key}")).value
    }

    fn bad(&self, key: &str, reason: impl Into<String>) -> ConfigError {
        let source = self.settings.get(key).map(|s| s.source).unwrap_or(Source::Default);
        ConfigError::BadValue { key: key.to_string(), origin: source, reason: reason.into() }
    }

    fn str(&self, key: &str) -> Option<String> {
        match self.get(key) {
            Value::Str(s) => Some(s.clone()),
            _ => None,
        }
    }

    fn int(&self, key: &str) -> Option<i64> {
        match self.get(key) {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    fn count(&self, key: &str) -> Result<usize, ConfigError> {
        let v = self.int(key).ok_or_else(|| self.bad(key, "missing"))?;
        usize::try_from(v).map_err(|_| self.bad(key, format!("must be non-negative, got {v}")))
    }

    fn u64(&self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.int(key)
            .map(|v| u64::try_from(v).map_err(|_| self.bad(key, format!("must be non-negative, got {v}"))))
            .transpose()
    }

    fn float(&self, key: &str) -> f64 {
        match self.get(key) {
            Value::Float(x) => *x,
            Value::Int(i) => *i as f64,
            _ => f64::NAN,
        }
    }

    fn opt_float(&self, key: &str) -> Option<f64> {
        match self.get(key) {
            Value::Unset => None,
            _ => Some(self.float(key)),
        }
    }

    /// `{key: {value, source}}` for the report's config snapshot.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (key, setting) in &self.settings {
            map.insert(key.clone(), serde_json::json!({ "value": setting.value.to_json(), "source": setting.source }));
        }
        if let Some(path) = &self.config_path {
            map.insert("config_file".into(), serde_json::json!(path.display().to_string()));
        }
        serde_json::Value::Object(map)
    }

    pub fn to_config(&self) -> Result<PipelineConfig, ConfigError> {
        let inputs = match self.get("input.paths") {
            Value::List(v) => v.iter().map(PathBuf::from).collect(),
            _ => Vec::new(),
        };
        let (min, max) = match self.get("ingest.years") {
            Value::Years(a, b) => (*a, *b),
            _ => unreachable!("years kind"),
        };
        if min > max {
            return Err(self.bad("ingest.years", format!("{min}..{max} is empty")));
        }
        let year_override = self
            .int("ingest.year_override")
            .map(|y| i32::try_from(y).map_err(|_| self.bad("ingest.year_override", "out of range")))
            .transpose()?;
        let backend = match self.str("embed.backend").as_deref() {
            Some("remote") => Backend::Remote,
            _ => Backend::Hash,
        };
        let timeout = self.float("embed.timeout_secs");
        if !(timeout > 0.0 && timeout.is_finite()) {
            return Err(self.bad("embed.timeout_secs", "must be positive"));
        }
        let embedder = EmbedderConfig {
            backend,
            dimension: self.count("embed.dimension")?,
            endpoint_url: self.str("embed.endpoint"),
            batch_size: self.count("embed.batch_size")?,
            timeout: Duration::from_secs_f64(timeout),
            retries: u32::try_from(self.count("embed.retries")?).map_err(|_| self.bad("embed.retries", "too large"))?,
            max_in_flight: self.count("embed.max_in_flight")?,
            hash_seed: self.u64("embed.hash_seed")?.unwrap_or(0),
        };
        let method = match self.str("similarity.method").as_deref() {
            Some("sampled") => Method::Sampled,
            _ => Method::Exact,
        };
        let workers = self.count("run.workers")?;
        let analysis = AnalysisConfig {
            method,
            pairs: self.u64("similarity.pairs")?.unwrap_or(0),
            seed: self.u64("similarity.seed")?,
            workers,
            top_k: self.count("similarity.top_k")?,
        };
        let fit = FitConfig {
            learning_rate: self.float("fit.learning_rate"),
            max_iterations: self.u64("fit.max_iterations")?.unwrap_or(0),
            grad_tolerance: self.float("fit.grad_tolerance"),
            init_a: self.opt_float("fit.init_a"),
            init_b: self.float("fit.init_b"),
            h0: self.opt_float("fit.h0"),
            y0: self.opt_float("fit.y0"),
        };
        let levels = match self.get("fit.levels") {
            Value::Floats(v) => v.clone(),
            _ => Vec::new(),
        };
        let config = PipelineConfig {
            inputs,
            out_dir: PathBuf::from(self.str("output.dir").unwrap_or_default()),
            ingest: IngestOptions {
                domain_pattern: self.str("ingest.domain").unwrap_or_default(),
                window: YearWindow { min, max },
                year_override,
            },
            lang_max_words: self.count("lang.max_words")?,
            lang_threshold: self.float("lang.threshold"),
            stopwords: self.str("lang.stopwords").map(PathBuf::from),
            embedder,
            analysis,
            fit,
            levels,
            horizon_years: self.float("report.horizon_years"),
            workers,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub ingest: IngestOptions,
    pub lang_max_words: usize,
    pub lang_threshold: f64,
    pub stopwords: Option<PathBuf>,
    pub embedder: EmbedderConfig,
    pub analysis: AnalysisConfig,
    pub fit: FitConfig,
    pub levels: Vec<f64>,
    pub horizon_years: f64,
    pub workers: usize,
}

impl PipelineConfig {
    /// Checks that hold for every stage. Input presence is checked by the
    /// stages that read inputs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.analysis.method == Method::Sampled && self.analysis.seed.is_none() {
            return invalid("similarity.method = sampled requires similarity.seed (--seed)".into());
        }
        if self.analysis.method == Method::Sampled && self.analysis.pairs < 2 {
            return invalid(format!("similarity.pairs must be >= 2, got {}", self.analysis.pairs));
        }
        if self.workers == 0 {
            return invalid("run.workers must be >= 1".into());
        }
        if self.out_dir.as_os_str().is_empty() {
            return invalid("output.dir must be set".into());
        }
        if self.embedder.backend == Backend::Remote && self.embedder.endpoint_url.is_none() {
            return invalid("embed.backend = remote requires embed.endpoint (--endpoint)".into());
        }
        self.embedder.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.lang_threshold > 0.0 && self.lang_threshold <= 1.0) {
            return invalid(format!("lang.threshold must lie in (0, 1], got {}", self.lang_threshold));
        }
        if self.lang_max_words == 0 {
            return invalid("lang.max_words must be >= 1".into());
        }
        if self.levels.iter().any(|x| !(*x > 0.0 && *x < 1.0)) || self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return invalid(format!("fit.levels must be ascending fractions in (0, 1), got {:?}", self.levels));
        }
        if self.horizon_years.is_nan() || self.horizon_years < 0.0 {
            return invalid("report.horizon_years must be >= 0".into());
        }
        Ok(())
    }

    pub fn require_inputs(&self) -> Result<(), ConfigError> {
        if self.inputs.is_empty() {
            return Err(ConfigError::Invalid("at least one input path is required (--input)".into()));
        }
        Ok(())
    }
}
