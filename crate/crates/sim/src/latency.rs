//! Latency figures computed on the client side from what the service
//! reported: task creation times and accepted-submission timestamps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Same shape as the service's per-task latency report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Latency {
    pub first_idea_ms: i64,
    pub per_character_coverage_ms: Option<i64>,
    pub last_idea_ms: i64,
}

/// `ideas` are `(role name, ms since task creation)`; `roles` lists every
/// character of the task, empty for role-less tasks.
pub fn task_latency(roles: &[String], ideas: &[(Option<String>, i64)]) -> Option<Latency> {
    let first = ideas.iter().map(|i| i.1).min()?;
    let last = ideas.iter().map(|i| i.1).max()?;
    let mut earliest: BTreeMap<&str, i64> = BTreeMap::new();
    for (role, ms) in ideas {
        if let Some(r) = role {
            let e = earliest.entry(r.as_str()).or_insert(*ms);
            *e = (*e).min(*ms);
        }
    }
    let coverage = if roles.is_empty() || roles.iter().any(|r| !earliest.contains_key(r.as_str())) {
        None
    } else {
        roles.iter().map(|r| earliest[r.as_str()]).max()
    };
    Some(Latency {
        first_idea_ms: first,
        per_character_coverage_ms: coverage,
        last_idea_ms: last,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub median_s: Option<f64>,
    pub mean_s: Option<f64>,
    /// Sample standard deviation; absent below two values.
    pub sd_s: Option<f64>,
}

pub fn summarize(ms: &[i64]) -> Summary {
    let n = ms.len();
    if n == 0 {
        return Summary {
            n,
            median_s: None,
            mean_s: None,
            sd_s: None,
        };
    }
    let mut s: Vec<f64> = ms.iter().map(|&v| v as f64 / 1000.0).collect();
    s.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    };
    let mean = s.iter().sum::<f64>() / n as f64;
    let sd = (n > 1).then(|| (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    Summary {
        n,
        median_s: Some(median),
        mean_s: Some(mean),
        sd_s: sd,
    }
}

/// Counts per bucket of `width_s` seconds, from zero through the bucket of
/// the largest value. Empty buckets are kept.
pub fn histogram(ms: &[i64], width_s: f64) -> Vec<(f64, f64, usize)> {
    let width_ms = width_s * 1000.0;
    let Some(&max) = ms.iter().max() else {
        return Vec::new();
    };
    let buckets = (max as f64 / width_ms).floor() as usize + 1;
    let mut counts = vec![0usize; buckets];
    for &v in ms {
        counts[(v.max(0) as f64 / width_ms).floor() as usize] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (i as f64 * width_s, (i + 1) as f64 * width_s, c))
        .collect()
}
