//! Simulation profiles (`key = value` text) and idea corpora.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution as _, Exp};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ProfileError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("profile line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("profile key {key}: {message}")]
    Invalid { key: String, message: String },
    #[error("profile is missing required key {0}")]
    Missing(&'static str),
}

/// Seconds drawn per event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Delay {
    Constant { seconds: f64 },
    Uniform { low: f64, high: f64 },
    Exponential { rate: f64 },
}

impl Delay {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Delay::Constant { seconds } => seconds,
            Delay::Uniform { low, high } if high > low => rng.random_range(low..high),
            Delay::Uniform { low, .. } => low,
            Delay::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
        }
    }

    pub fn parse(text: &str) -> Result<Delay, String> {
        let text = text.trim();
        let (name, args) = match text.split_once('(') {
            Some((name, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| format!("missing closing parenthesis in {text:?}"))?;
                let args = inner
                    .split(',')
                    .map(|a| a.trim().parse::<f64>().map_err(|_| format!("{a:?} is not a number")))
                    .collect::<Result<Vec<_>, _>>()?;
                (name.trim().to_ascii_lowercase(), args)
            }
            None => {
                let seconds = text.parse::<f64>().map_err(|_| format!("{text:?} is not a delay"))?;
                ("constant".to_string(), vec![seconds])
            }
        };
        let delay = match (name.as_str(), args.as_slice()) {
            ("constant", [s]) => Delay::Constant { seconds: *s },
            ("uniform", [a, b]) => Delay::Uniform { low: *a, high: *b },
            ("exponential", [rate]) => Delay::Exponential { rate: *rate },
            _ => {
                return Err(format!(
                    "expected constant(s), uniform(a, b) or exponential(rate), got {text:?}"
                ))
            }
        };
        let ok = match delay {
            Delay::Constant { seconds } => seconds >= 0.0 && seconds.is_finite(),
            Delay::Uniform { low, high } => low >= 0.0 && high >= low && high.is_finite(),
            Delay::Exponential { rate } => rate > 0.0 && rate.is_finite(),
        };
        if !ok {
            return Err(format!("{text:?} has out-of-range parameters"));
        }
        Ok(delay)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Strategy {
    #[serde(rename = "ROLE_PLAY")]
    RolePlay,
    #[serde(rename = "NO_ROLE")]
    NoRole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimProfile {
    pub n_workers: usize,
    /// Seconds between consecutive worker arrivals.
    pub arrival: Delay,
    pub read_time: Delay,
    pub idea_source: PathBuf,
    /// Chance that a slot's first attempt waits out the time lock.
    pub compliance: f64,
    pub seed: u64,
    /// Corpus lines shorter than this are skipped; match the service setting.
    pub min_idea_words: usize,
    pub writer_key: String,
    /// One task per entry, over a team of that many characters.
    pub team_sizes: Vec<usize>,
    pub quota: u32,
    pub strategy: Strategy,
    /// Wait before an idle worker asks for work again.
    pub retry_seconds: f64,
    /// Simulated time advances in whole ticks; events in one tick overlap.
    pub tick_ms: i64,
    pub histogram_bucket_seconds: f64,
    /// Cancel tasks still open this long after launch.
    pub cancel_after_seconds: Option<f64>,
    /// Give up after this much simulated time.
    pub horizon_seconds: f64,
}

impl SimProfile {
    pub fn new(idea_source: impl Into<PathBuf>, writer_key: impl Into<String>) -> Self {
        SimProfile {
            n_workers: 9,
            arrival: Delay::Constant { seconds: 0.0 },
            read_time: Delay::Constant { seconds: 0.0 },
            idea_source: idea_source.into(),
            compliance: 1.0,
            seed: 0,
            min_idea_words: 50,
            writer_key: writer_key.into(),
            team_sizes: vec![3],
            quota: 3,
            strategy: Strategy::RolePlay,
            retry_seconds: 10.0,
            tick_ms: 1000,
            histogram_bucket_seconds: 60.0,
            cancel_after_seconds: None,
            horizon_seconds: 7.0 * 24.0 * 3600.0,
        }
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ProfileError> {
        let mut p = SimProfile::new("", "");
        let mut seen_source = false;
        let mut seen_key = false;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ProfileError::Syntax {
                line: idx + 1,
                message: "expected key = value".into(),
            })?;
            let key = key.trim();
            let value = value.trim();
            let value = value
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(value);
            let invalid = |message: String| ProfileError::Invalid {
                key: key.to_string(),
                message,
            };
            match key {
                "n_workers" => p.n_workers = parse_num(value).map_err(invalid)?,
                "arrival" => p.arrival = Delay::parse(value).map_err(invalid)?,
                "read_time" => p.read_time = Delay::parse(value).map_err(invalid)?,
                "idea_source" => {
                    let path = PathBuf::from(value);
                    p.idea_source = if path.is_absolute() { path } else { base_dir.join(path) };
                    seen_source = true;
                }
                "compliance" => p.compliance = parse_num(value).map_err(invalid)?,
                "seed" => p.seed = parse_num(value).map_err(invalid)?,
                "min_idea_words" => p.min_idea_words = parse_num(value).map_err(invalid)?,
                "writer_key" => {
                    p.writer_key = value.to_string();
                    seen_key = true;
                }
                "team_sizes" => {
                    p.team_sizes = value
                        .split(',')
                        .map(|v| parse_num(v.trim()))
                        .collect::<Result<_, _>>()
                        .map_err(invalid)?
                }
                "quota" => p.quota = parse_num(value).map_err(invalid)?,
                "strategy" => {
                    p.strategy = match value.to_ascii_uppercase().as_str() {
                        "ROLE_PLAY" => Strategy::RolePlay,
                        "NO_ROLE" => Strategy::NoRole,
                        other => return Err(invalid(format!("expected ROLE_PLAY or NO_ROLE, got {other:?}"))),
                    }
                }
                "retry_seconds" => p.retry_seconds = parse_num(value).map_err(invalid)?,
                "tick_ms" => p.tick_ms = parse_num(value).map_err(invalid)?,
                "histogram_bucket_seconds" => p.histogram_bucket_seconds = parse_num(value).map_err(invalid)?,
                "cancel_after_seconds" => {
                    p.cancel_after_seconds = match value {
                        "" | "never" => None,
                        v => Some(parse_num(v).map_err(invalid)?),
                    }
                }
                "horizon_seconds" => p.horizon_seconds = parse_num(value).map_err(invalid)?,
                other => {
                    return Err(ProfileError::Syntax {
                        line: idx + 1,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        if !seen_source {
            return Err(ProfileError::Missing("idea_source"));
        }
        if !seen_key {
            return Err(ProfileError::Missing("writer_key"));
        }
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, ProfileError> {
        let text = std::fs::read_to_string(path).map_err(|e| ProfileError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        SimProfile::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ProfileError> {
        let invalid = |key: &str, message: &str| ProfileError::Invalid {
            key: key.into(),
            message: message.into(),
        };
        if !(0.0..=1.0).contains(&self.compliance) {
            return Err(invalid("compliance", "must be a probability in [0, 1]"));
        }
        if self.team_sizes.is_empty() || self.team_sizes.contains(&0) {
            return Err(invalid("team_sizes", "every team needs at least one character"));
        }
        if self.quota == 0 {
            return Err(invalid("quota", "must be > 0"));
        }
        if self.tick_ms <= 0 {
            return Err(invalid("tick_ms", "must be > 0"));
        }
        if !(self.retry_seconds > 0.0) {
            return Err(invalid("retry_seconds", "must be > 0"));
        }
        if !(self.histogram_bucket_seconds > 0.0) {
            return Err(invalid("histogram_bucket_seconds", "must be > 0"));
        }
        if !(self.horizon_seconds > 0.0) {
            return Err(invalid("horizon_seconds", "must be > 0"));
        }
        // each worker fills at most one slot per task
        if self.n_workers < self.max_task_slots() {
            return Err(invalid("n_workers", "must be at least the slot count of the largest task"));
        }
        Ok(())
    }

    pub fn max_task_slots(&self) -> usize {
        self.team_sizes.iter().max().copied().unwrap_or(0) * self.quota as usize
    }

    pub fn total_slots(&self) -> usize {
        self.team_sizes.iter().sum::<usize>() * self.quota as usize
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse::<T>().map_err(|_| format!("{v:?} is not a valid number"))
}

/// Loads one idea per line, keeping those long enough to pass the word gate.
pub fn load_corpus(path: &Path, min_words: usize) -> Result<Vec<String>, ProfileError> {
    let text = std::fs::read_to_string(path).map_err(|e| ProfileError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| l.split_whitespace().count() >= min_words)
        .map(str::to_string)
        .collect())
}
