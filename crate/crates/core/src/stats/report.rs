//! Study report: per-aspect condition means with CIs, paired tests and
//! effect sizes at story level, and distance/relevance correlations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{
    aggregate_likert, ci95_mean, cohens_d_paired, kendall_tau, paired_t_test, pearson, Aspect, Condition,
    Level, RatingRecord, StatsError,
};

pub const RATINGS_HEADER: [&str; 6] = ["item_id", "story_id", "condition", "aspect", "rater_id", "score"];
pub const DISTANCES_HEADER: [&str; 3] = ["item_id", "metric", "distance"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub item_id: String,
    pub metric: String,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub n: usize,
    pub mean: f64,
    pub ci95_low: Option<f64>,
    pub ci95_high: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AspectReport {
    pub aspect: Aspect,
    pub role: ConditionSummary,
    pub no_role: ConditionSummary,
    /// Paired over stories, `no_role - role`.
    pub t: Option<f64>,
    pub df: Option<f64>,
    pub p_two_tailed: Option<f64>,
    pub cohens_d: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCorrelation {
    pub metric: String,
    pub n: usize,
    pub pearson_rho: Option<f64>,
    pub kendall_tau: Option<f64>,
    /// A useful distance should move against relevance on both coefficients.
    pub negative_as_expected: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub stories: usize,
    pub aspects: Vec<AspectReport>,
    pub correlations: Vec<MetricCorrelation>,
}

fn csv_reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<(), StatsError> {
    let header = rdr.headers().map_err(|e| StatsError::ParseError {
        line: 1,
        message: e.to_string(),
    })?;
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(StatsError::ParseError {
            line: 1,
            message: format!("expected header {}, got {}", expected.join(","), got.join(",")),
        });
    }
    Ok(())
}

fn rows<R: Read>(rdr: &mut csv::Reader<R>) -> impl Iterator<Item = Result<(u64, csv::StringRecord), StatsError>> + '_ {
    rdr.records().map(|r| {
        let r = r.map_err(|e| StatsError::ParseError {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        Ok((r.position().map_or(0, |p| p.line()), r))
    })
}

pub fn parse_ratings<R: Read>(input: R) -> Result<Vec<RatingRecord>, StatsError> {
    let mut rdr = csv_reader(input);
    check_header(&mut rdr, &RATINGS_HEADER)?;
    let mut out = Vec::new();
    for row in rows(&mut rdr) {
        let (line, r) = row?;
        let bad = |message: String| StatsError::ParseError { line, message };
        let condition = Condition::parse(&r[2]).ok_or_else(|| bad(format!("unknown condition {:?}", &r[2])))?;
        let aspect = Aspect::parse(&r[3]).ok_or_else(|| bad(format!("unknown aspect {:?}", &r[3])))?;
        let score: u8 = r[5].parse().map_err(|_| bad(format!("score {:?} is not an integer", &r[5])))?;
        if !(1..=5).contains(&score) {
            return Err(bad(format!("score {score} outside 1..5")));
        }
        out.push(RatingRecord {
            item_id: r[0].to_string(),
            story_id: r[1].to_string(),
            condition,
            aspect,
            rater_id: r[4].to_string(),
            score,
        });
    }
    Ok(out)
}

pub fn parse_distances<R: Read>(input: R) -> Result<Vec<DistanceRecord>, StatsError> {
    let mut rdr = csv_reader(input);
    check_header(&mut rdr, &DISTANCES_HEADER)?;
    let mut out = Vec::new();
    for row in rows(&mut rdr) {
        let (line, r) = row?;
        let distance: f64 = r[2].parse().map_err(|_| StatsError::ParseError {
            line,
            message: format!("distance {:?} is not a number", &r[2]),
        })?;
        if !distance.is_finite() {
            return Err(StatsError::ParseError {
                line,
                message: "distance must be finite".into(),
            });
        }
        out.push(DistanceRecord {
            item_id: r[0].to_string(),
            metric: r[1].to_string(),
            distance,
        });
    }
    Ok(out)
}

fn summarize(values: &[f64]) -> ConditionSummary {
    let ci = ci95_mean(values).ok();
    ConditionSummary {
        n: values.len(),
        mean: super::mean(values),
        ci95_low: ci.map(|c| c.low),
        ci95_high: ci.map(|c| c.high),
    }
}

pub fn build_study_report(ratings: &[RatingRecord], distances: &[DistanceRecord]) -> Result<StudyReport, StatsError> {
    let present: BTreeSet<Aspect> = ratings.iter().map(|r| r.aspect).collect();
    let mut aspects = Vec::new();
    let mut stories = 0;
    for aspect in Aspect::ALL.into_iter().filter(|a| present.contains(a)) {
        let subset: Vec<RatingRecord> = ratings.iter().filter(|r| r.aspect == aspect).cloned().collect();
        let role = aggregate_likert(&subset, aspect, Condition::Role, Level::Story)?;
        let no_role = aggregate_likert(&subset, aspect, Condition::NoRole, Level::Story)?;
        if let Some(s) = role
            .keys()
            .find(|s| !no_role.contains_key(*s))
            .or_else(|| no_role.keys().find(|s| !role.contains_key(*s)))
        {
            return Err(StatsError::UnpairedStory(s.clone()));
        }
        if role.is_empty() {
            return Err(StatsError::UnpairedStory(String::new()));
        }
        stories = stories.max(role.len());
        // BTreeMaps share keys, so values line up story by story.
        let role_means: Vec<f64> = role.values().copied().collect();
        let no_role_means: Vec<f64> = no_role.values().copied().collect();
        let test = paired_t_test(&no_role_means, &role_means).ok();
        aspects.push(AspectReport {
            aspect,
            role: summarize(&role_means),
            no_role: summarize(&no_role_means),
            t: test.map(|t| t.t),
            df: test.map(|t| t.df),
            p_two_tailed: test.map(|t| t.p_two_tailed),
            cohens_d: cohens_d_paired(&no_role_means, &role_means).ok(),
        });
    }
    if aspects.is_empty() {
        return Err(StatsError::UnpairedStory(String::new()));
    }

    let relevance: Vec<RatingRecord> = ratings
        .iter()
        .filter(|r| r.aspect == Aspect::Relevance)
        .cloned()
        .collect();
    let mut relevance_by_item = BTreeMap::new();
    if !relevance.is_empty() {
        for cond in [Condition::Role, Condition::NoRole] {
            relevance_by_item.extend(aggregate_likert(&relevance, Aspect::Relevance, cond, Level::Item)?);
        }
    }
    let mut by_metric: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    for d in distances {
        by_metric.entry(&d.metric).or_default().insert(&d.item_id, d.distance);
    }
    let correlations = by_metric
        .into_iter()
        .map(|(metric, items)| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = items
                .iter()
                .filter_map(|(item, d)| relevance_by_item.get(*item).map(|r| (*d, *r)))
                .unzip();
            let rho = pearson(&xs, &ys).ok();
            let tau = kendall_tau(&xs, &ys).ok();
            MetricCorrelation {
                metric: metric.to_string(),
                n: xs.len(),
                pearson_rho: rho,
                kendall_tau: tau,
                negative_as_expected: matches!((rho, tau), (Some(r), Some(t)) if r < 0.0 && t < 0.0),
            }
        })
        .collect();

    Ok(StudyReport {
        stories,
        aspects,
        correlations,
    })
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

fn full(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

impl StudyReport {
    /// Aligned plain-text tables.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Ratings by aspect (story-level means, N = {})", self.stories);
        let _ = writeln!(
            out,
            "{:<16} {:>9} {:>23} {:>9} {:>23} {:>10} {:>4} {:>10} {:>10}",
            "aspect", "role", "role 95% CI", "no-role", "no-role 95% CI", "t", "df", "p", "d"
        );
        for a in &self.aspects {
            let ci = |s: &ConditionSummary| match (s.ci95_low, s.ci95_high) {
                (Some(l), Some(h)) => format!("[{l:.3}, {h:.3}]"),
                _ => "NA".to_string(),
            };
            let flag = match a.p_two_tailed {
                Some(p) if p < 0.01 => "**",
                Some(p) if p < 0.05 => "*",
                _ => "",
            };
            let _ = writeln!(
                out,
                "{:<16} {:>9.3} {:>23} {:>9.3} {:>23} {:>10} {:>4} {:>10} {:>10}",
                a.aspect.as_str(),
                a.role.mean,
                ci(&a.role),
                a.no_role.mean,
                ci(&a.no_role),
                num(a.t).chars().take(10).collect::<String>(),
                a.df.map_or("NA".into(), |d| format!("{d}")),
                format!("{}{flag}", num(a.p_two_tailed).chars().take(8).collect::<String>()),
                num(a.cohens_d).chars().take(10).collect::<String>(),
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "Distance vs. relevance (item level; expected negative)");
        let _ = writeln!(out, "{:<20} {:>5} {:>12} {:>12} {:>10}", "metric", "n", "pearson", "kendall", "negative");
        for c in &self.correlations {
            let _ = writeln!(
                out,
                "{:<20} {:>5} {:>12} {:>12} {:>10}",
                c.metric,
                c.n,
                num(c.pearson_rho),
                num(c.kendall_tau),
                if c.negative_as_expected { "yes" } else { "no" }
            );
        }
        out
    }

    /// Machine-readable rows at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "section,name,condition,n,mean,ci95_low,ci95_high,t,df,p_two_tailed,cohens_d,pearson_rho,kendall_tau,negative_as_expected\n",
        );
        for a in &self.aspects {
            for (cond, s) in [(Condition::Role, &a.role), (Condition::NoRole, &a.no_role)] {
                let _ = writeln!(
                    out,
                    "likert,{},{},{},{:?},{},{},,,,,,,",
                    a.aspect.as_str(),
                    cond.as_str(),
                    s.n,
                    s.mean,
                    full(s.ci95_low),
                    full(s.ci95_high)
                );
            }
            let _ = writeln!(
                out,
                "paired,{},,{},,,,{},{},{},{},,,",
                a.aspect.as_str(),
                a.role.n,
                full(a.t),
                full(a.df),
                full(a.p_two_tailed),
                full(a.cohens_d)
            );
        }
        for c in &self.correlations {
            let _ = writeln!(
                out,
                "correlation,{},,{},,,,,,,,{},{},{}",
                c.metric,
                c.n,
                full(c.pearson_rho),
                full(c.kendall_tau),
                c.negative_as_expected
            );
        }
        out
    }
}
