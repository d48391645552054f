//! Service configuration from a plain `key = value` file.

use std::path::{Path, PathBuf};

use heteroglossia_core::distance::Metric;
use heteroglossia_core::Timestamp;
use thiserror::Error;

pub const CONFIG_ENV: &str = "HG_CONFIG";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("config key {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("config is missing required key {0}")]
    Missing(&'static str),
    #[error("embeddings: {0}")]
    Embeddings(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockKind {
    System,
    /// Time moves only through the admin endpoint; for simulations.
    Manual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub time_lock_seconds: f64,
    pub min_idea_words: usize,
    pub per_character_quota: u32,
    pub copy_overlap_tokens: usize,
    pub duplicate_distance_threshold: f64,
    pub embedding_path: Option<PathBuf>,
    pub sidecar_path: Option<PathBuf>,
    pub case_folding: bool,
    /// `None` enables every metric whose vectors are configured.
    pub distance_metrics: Option<Vec<Metric>>,
    pub listen_address: String,
    pub data_dir: PathBuf,
    pub writer_key: String,
    pub clock: ClockKind,
    pub clock_start: Timestamp,
    pub fsync: bool,
    pub snapshot_every: u64,
}

impl Config {
    /// Defaults with the given writer key and data directory.
    pub fn new(writer_key: impl Into<String>, data_dir: impl Into<PathBuf>) -> Self {
        Config {
            time_lock_seconds: 30.0,
            min_idea_words: 50,
            per_character_quota: 3,
            copy_overlap_tokens: 15,
            duplicate_distance_threshold: 0.05,
            embedding_path: None,
            sidecar_path: None,
            case_folding: true,
            distance_metrics: None,
            listen_address: "127.0.0.1:8080".into(),
            data_dir: data_dir.into(),
            writer_key: writer_key.into(),
            clock: ClockKind::System,
            clock_start: Timestamp::parse_iso8601("2020-01-01T00:00:00.000Z").expect("valid literal"),
            fsync: true,
            snapshot_every: 1000,
        }
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Config::new("", "data");
        cfg.data_dir = base_dir.join("data");
        let mut seen_key = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
                line: idx + 1,
                message: "expected key = value".into(),
            })?;
            let key = key.trim();
            let value = unquote(value.trim());
            let invalid = |message: String| ConfigError::Invalid {
                key: key.to_string(),
                message,
            };
            let path = |v: &str| {
                let p = PathBuf::from(v);
                if p.is_absolute() {
                    p
                } else {
                    base_dir.join(p)
                }
            };
            match key {
                "time_lock_seconds" => cfg.time_lock_seconds = number(value).map_err(invalid)?,
                "min_idea_words" => cfg.min_idea_words = integer(value).map_err(invalid)?,
                "per_character_quota" => cfg.per_character_quota = integer(value).map_err(invalid)?,
                "copy_overlap_tokens" => cfg.copy_overlap_tokens = integer(value).map_err(invalid)?,
                "duplicate_distance_threshold" => cfg.duplicate_distance_threshold = number(value).map_err(invalid)?,
                "embedding_path" => cfg.embedding_path = (!value.is_empty()).then(|| path(value)),
                "sidecar_path" => cfg.sidecar_path = (!value.is_empty()).then(|| path(value)),
                "case_folding" => cfg.case_folding = boolean(value).map_err(invalid)?,
                "distance_metrics" => cfg.distance_metrics = metrics(value).map_err(invalid)?,
                "listen_address" => cfg.listen_address = value.to_string(),
                "data_dir" => cfg.data_dir = path(value),
                "writer_key" => {
                    cfg.writer_key = value.to_string();
                    seen_key = true;
                }
                "clock" => {
                    cfg.clock = match value {
                        "system" => ClockKind::System,
                        "manual" => ClockKind::Manual,
                        other => return Err(invalid(format!("expected system or manual, got {other:?}"))),
                    }
                }
                "clock_start" => cfg.clock_start = Timestamp::parse_iso8601(value).map_err(|e| invalid(e.to_string()))?,
                "fsync" => cfg.fsync = boolean(value).map_err(invalid)?,
                "snapshot_every" => cfg.snapshot_every = integer(value).map_err(invalid)?,
                other => {
                    return Err(ConfigError::Syntax {
                        line: idx + 1,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        if !seen_key {
            return Err(ConfigError::Missing("writer_key"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Config::parse(&text, base)
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, message: &str| ConfigError::Invalid {
            key: key.into(),
            message: message.into(),
        };
        if !(self.time_lock_seconds > 0.0 && self.time_lock_seconds.is_finite()) {
            return Err(invalid("time_lock_seconds", "must be > 0"));
        }
        if self.min_idea_words == 0 {
            return Err(invalid("min_idea_words", "must be > 0"));
        }
        if self.per_character_quota == 0 {
            return Err(invalid("per_character_quota", "must be > 0"));
        }
        if self.copy_overlap_tokens == 0 {
            return Err(invalid("copy_overlap_tokens", "must be > 0"));
        }
        if !(self.duplicate_distance_threshold > 0.0) {
            return Err(invalid("duplicate_distance_threshold", "must be > 0"));
        }
        if self.snapshot_every == 0 {
            return Err(invalid("snapshot_every", "must be > 0"));
        }
        if self.writer_key.is_empty() {
            return Err(invalid("writer_key", "must not be empty"));
        }
        if let Some(metrics) = &self.distance_metrics {
            if metrics.iter().any(|m| m.needs_embeddings()) && self.embedding_path.is_none() {
                return Err(ConfigError::Missing("embedding_path"));
            }
            if metrics.contains(&Metric::Sidecar) && self.sidecar_path.is_none() {
                return Err(ConfigError::Missing("sidecar_path"));
            }
        }
        Ok(())
    }

    pub fn time_lock_ms(&self) -> i64 {
        (self.time_lock_seconds * 1000.0).round() as i64
    }
}

/// `--config` wins over `HG_CONFIG`.
pub fn resolve_config_path(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(v)
}

fn number(v: &str) -> Result<f64, String> {
    v.parse::<f64>().map_err(|e| format!("{v:?}: {e}"))
}

fn integer<T: std::str::FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
}

fn boolean(v: &str) -> Result<bool, String> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

fn metrics(v: &str) -> Result<Option<Vec<Metric>>, String> {
    if v == "auto" {
        return Ok(None);
    }
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Metric>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}
