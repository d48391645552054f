//! Correlation, paired tests, effect sizes and Likert aggregation.
//!
//! The Student-t distribution is evaluated through the regularized incomplete
//! beta function (Lentz continued fraction) with a Lanczos log-gamma; no
//! statistics crate is involved.

pub mod report;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("every pair is tied")]
    AllTied,
    #[error("paired differences are constant")]
    DegenerateDifferences,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("item {item} has no {aspect} ratings")]
    MissingRatings { item: String, aspect: Aspect },
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("story {0} is not rated under both conditions")]
    UnpairedStory(String),
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min {
        return Err(StatsError::TooFew { needed: min, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    let ss: f64 = x.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (x.len() as f64 - 1.0)).sqrt()
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 3)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Number of tied pairs within runs of equal values of a sorted sequence.
fn tied_pairs<T: PartialEq>(sorted: &[T]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` by `f64::total_cmp` and returns the number of inversions removed.
fn merge_sort_count(v: &mut [f64], buf: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = merge_sort_count(&mut v[..mid], buf) + merge_sort_count(&mut v[mid..], buf);
    buf.clear();
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            swaps += (mid - i) as u64;
            buf.push(v[j]);
            j += 1;
        } else {
            buf.push(v[i]);
            i += 1;
        }
    }
    buf.extend_from_slice(&v[i..mid]);
    buf.extend_from_slice(&v[j..n]);
    v.copy_from_slice(buf);
    swaps
}

/// Kendall's tau-b with tie correction, in O(n log n) (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 3)?;
    let n = x.len() as u64;
    let mut pairs: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ties_x = tied_pairs(&xs);
    let ties_xy = tied_pairs(&pairs);

    let mut ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = Vec::with_capacity(ys.len());
    let swaps = merge_sort_count(&mut ys, &mut buf);
    let ties_y = tied_pairs(&ys);

    let total = n * (n - 1) / 2;
    let denom = ((total - ties_x) as f64) * ((total - ties_y) as f64);
    if denom == 0.0 {
        return Err(StatsError::AllTied);
    }
    let numerator = total as i64 - ties_x as i64 - ties_y as i64 + ties_xy as i64 - 2 * swaps as i64;
    Ok((numerator as f64 / denom.sqrt()).clamp(-1.0, 1.0))
}

// ---------------------------------------------------------------------------
// special functions

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

/// `P(|T| >= |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    regularized_incomplete_beta(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let tail = 0.5 * student_t_two_tailed(t, df);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Quantile of Student's t for `p` in (0, 1), by bisection on the CDF.
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    if p < 0.5 {
        return -student_t_quantile(1.0 - p, df);
    }
    let mut hi = 1.0;
    while student_t_cdf(hi, df) < p {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if student_t_cdf(mid, df) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// paired tests

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTTest {
    pub t: f64,
    pub df: f64,
    pub p_two_tailed: f64,
}

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>, StatsError> {
    check_pair(a, b, 2)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if sample_sd(&d) == 0.0 {
        return Err(StatsError::DegenerateDifferences);
    }
    Ok(d)
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest, StatsError> {
    let d = differences(a, b)?;
    let n = d.len() as f64;
    let t = mean(&d) / (sample_sd(&d) / n.sqrt());
    let df = n - 1.0;
    Ok(PairedTTest {
        t,
        df,
        p_two_tailed: student_t_two_tailed(t, df),
    })
}

/// Paired Cohen's d: mean difference over the SD of the differences.
pub fn cohens_d_paired(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    let d = differences(a, b)?;
    Ok(mean(&d) / sample_sd(&d))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

/// Two-sided 95% t interval for the mean.
pub fn ci95_mean(x: &[f64]) -> Result<ConfidenceInterval, StatsError> {
    if x.len() < 2 {
        return Err(StatsError::TooFew { needed: 2, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let sd = sample_sd(x);
    if sd == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let n = x.len() as f64;
    let m = mean(x);
    let half = student_t_quantile(0.975, n - 1.0) * sd / n.sqrt();
    Ok(ConfidenceInterval {
        mean: m,
        low: m - half,
        high: m + half,
    })
}

// ---------------------------------------------------------------------------
// Likert ratings

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Condition {
    Role,
    NoRole,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Role => "ROLE",
            Condition::NoRole => "NO_ROLE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "ROLE" => Some(Condition::Role),
            "NO_ROLE" | "NOROLE" => Some(Condition::NoRole),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Aspect {
    Relevance,
    Legitimate,
    Creative,
    Interesting,
    WillingToRead,
    Surprising,
}

impl Aspect {
    pub const ALL: [Aspect; 6] = [
        Aspect::Relevance,
        Aspect::Legitimate,
        Aspect::Creative,
        Aspect::Interesting,
        Aspect::WillingToRead,
        Aspect::Surprising,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Aspect::Relevance => "RELEVANCE",
            Aspect::Legitimate => "LEGITIMATE",
            Aspect::Creative => "CREATIVE",
            Aspect::Interesting => "INTERESTING",
            Aspect::WillingToRead => "WILLING_TO_READ",
            Aspect::Surprising => "SURPRISING",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.trim().to_ascii_uppercase().replace(['-', ' '], "_");
        Aspect::ALL.into_iter().find(|a| a.as_str() == norm)
    }
}

impl std::fmt::Display for Aspect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub item_id: String,
    pub story_id: String,
    pub condition: Condition,
    pub aspect: Aspect,
    pub rater_id: String,
    /// 1..=5
    pub score: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Item,
    Story,
}

/// Mean ratings for one aspect and condition, keyed by item or story id.
///
/// At item level each item's ratings are averaged across raters; at story
/// level the item means of a story are averaged.
pub fn aggregate_likert(
    records: &[RatingRecord],
    aspect: Aspect,
    condition: Condition,
    level: Level,
) -> Result<BTreeMap<String, f64>, StatsError> {
    let mut items: BTreeMap<&str, (&str, Vec<f64>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.condition == condition) {
        let entry = items.entry(&r.item_id).or_insert((&r.story_id, Vec::new()));
        if r.aspect == aspect {
            entry.1.push(f64::from(r.score));
        }
    }
    let mut item_means = BTreeMap::new();
    let mut stories: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (item, (story, scores)) in items {
        if scores.is_empty() {
            return Err(StatsError::MissingRatings {
                item: item.to_string(),
                aspect,
            });
        }
        let m = mean(&scores);
        item_means.insert(item.to_string(), m);
        stories.entry(story).or_default().push(m);
    }
    Ok(match level {
        Level::Item => item_means,
        Level::Story => stories.into_iter().map(|(s, v)| (s.to_string(), mean(&v))).collect(),
    })
}
