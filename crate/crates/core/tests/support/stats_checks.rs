use heteroglossia_core::stats::{
    ci95_mean, cohens_d_paired, kendall_tau, paired_t_test, pearson, student_t_quantile, student_t_two_tailed,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracle;
use super::Check;

/// Continuous data, Likert-like integers with heavy ties, or a mix.
fn sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    match rng.random_range(0..3) {
        0 => (0..n).map(|_| rng.random_range(-5.0..5.0)).collect(),
        1 => (0..n).map(|_| rng.random_range(1..=5) as f64).collect(),
        _ => (0..n).map(|_| (rng.random_range(2.0..10.0f64) * 2.0).round() / 2.0).collect(),
    }
}

fn agree(what: &str, case: usize, lib: Option<f64>, reference: Option<f64>, tol: f64) -> Result<(), String> {
    match (lib, reference) {
        (None, None) => Ok(()),
        (Some(a), Some(b)) if (a - b).abs() <= tol => Ok(()),
        _ => Err(format!("case {case}: {what} library {lib:?} vs oracle {reference:?}")),
    }
}

/// Compares every statistic against the oracle on `cases` random datasets of
/// size at most 14.
pub fn check_statistics(seed: u64, cases: usize, tol: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_err = 0.0f64;
    let mut track = |a: Option<f64>, b: Option<f64>| {
        if let (Some(a), Some(b)) = (a, b) {
            max_err = max_err.max((a - b).abs());
        }
    };
    for case in 0..cases {
        let n = rng.random_range(3..=14);
        let x = sample(&mut rng, n);
        let y = if rng.random_bool(0.2) {
            // correlated partner
            x.iter().map(|v| 0.7 * v + rng.random_range(-1.0..1.0)).collect()
        } else {
            sample(&mut rng, n)
        };

        let p_lib = pearson(&x, &y).ok();
        let p_ref = oracle::pearson(&x, &y);
        agree("pearson", case, p_lib, p_ref, tol)?;
        track(p_lib, p_ref);

        let k_lib = kendall_tau(&x, &y).ok();
        let k_ref = oracle::kendall_tau_b(&x, &y);
        agree("kendall_tau", case, k_lib, k_ref, tol)?;
        track(k_lib, k_ref);

        let t_lib = paired_t_test(&x, &y).ok();
        let t_ref = oracle::paired_t(&x, &y);
        agree("paired t", case, t_lib.map(|r| r.t), t_ref.map(|r| r.0), tol)?;
        agree("paired df", case, t_lib.map(|r| r.df), t_ref.map(|r| r.1 as f64), 0.0)?;
        agree("paired p", case, t_lib.map(|r| r.p_two_tailed), t_ref.map(|r| r.2), tol)?;
        track(t_lib.map(|r| r.t), t_ref.map(|r| r.0));
        track(t_lib.map(|r| r.p_two_tailed), t_ref.map(|r| r.2));

        let d_lib = cohens_d_paired(&x, &y).ok();
        let d_ref = oracle::cohens_d(&x, &y);
        agree("cohens_d", case, d_lib, d_ref, tol)?;
        track(d_lib, d_ref);

        let c_lib = ci95_mean(&x).ok();
        let c_ref = oracle::ci95(&x);
        agree("ci95 low", case, c_lib.map(|c| c.low), c_ref.map(|c| c.1), tol)?;
        agree("ci95 high", case, c_lib.map(|c| c.high), c_ref.map(|c| c.2), tol)?;
        track(c_lib.map(|c| c.low), c_ref.map(|c| c.1));
        track(c_lib.map(|c| c.high), c_ref.map(|c| c.2));
    }
    Ok(format!("{cases} datasets, max abs error {max_err:.2e}"))
}

/// Tail probabilities and quantiles over a grid of t values and df 1..=30.
pub fn check_t_distribution(tol: f64) -> Check {
    let mut max_err = 0.0f64;
    for df in 1..=30u32 {
        for i in 0..=60 {
            let t = i as f64 * 0.25;
            let lib = student_t_two_tailed(t, df as f64);
            let reference = oracle::t_two_tailed(t, df);
            let err = (lib - reference).abs();
            if err > tol {
                return Err(format!("p(|T|>{t}; df={df}) library {lib} vs oracle {reference}"));
            }
            max_err = max_err.max(err);
        }
        let q_lib = student_t_quantile(0.975, df as f64);
        let q_ref = oracle::t_quantile(0.975, df);
        if (q_lib - q_ref).abs() > tol {
            return Err(format!("t quantile df={df}: library {q_lib} vs oracle {q_ref}"));
        }
        max_err = max_err.max((q_lib - q_ref).abs());
    }
    Ok(format!("30 df x 61 t values, max abs error {max_err:.2e}"))
}

fn close_opt(what: &str, got: Option<f64>, want: Option<f64>, tol: f64) -> Result<f64, String> {
    match (got, want) {
        (Some(a), Some(b)) if (a - b).abs() <= tol => Ok((a - b).abs()),
        (None, None) => Ok(0.0),
        _ => Err(format!("{what}: report {got:?} vs golden {want:?}")),
    }
}

/// Builds the study report from the bundled fixture and compares every number
/// with the golden report generated alongside it.
pub fn check_golden_report(fixtures: &std::path::Path, tol: f64) -> Check {
    use heteroglossia_core::stats::report::{build_study_report, parse_distances, parse_ratings, StudyReport};

    let open = |name: &str| std::fs::File::open(fixtures.join(name)).map_err(|e| format!("{name}: {e}"));
    let ratings = parse_ratings(open("ratings.csv")?).map_err(|e| e.to_string())?;
    let distances = parse_distances(open("distances.csv")?).map_err(|e| e.to_string())?;
    let golden: StudyReport = serde_json::from_reader(open("study_golden.json")?).map_err(|e| e.to_string())?;
    let report = build_study_report(&ratings, &distances).map_err(|e| e.to_string())?;

    if report.stories != golden.stories || report.aspects.len() != golden.aspects.len() {
        return Err(format!("shape: {} stories/{} aspects vs {}/{}", report.stories, report.aspects.len(), golden.stories, golden.aspects.len()));
    }
    let mut max_err = 0.0f64;
    for (r, g) in report.aspects.iter().zip(&golden.aspects) {
        if r.aspect != g.aspect || r.role.n != g.role.n || r.no_role.n != g.no_role.n {
            return Err(format!("aspect row {:?} vs {:?}", r.aspect, g.aspect));
        }
        let name = r.aspect.as_str();
        for (what, got, want) in [
            ("role mean", Some(r.role.mean), Some(g.role.mean)),
            ("role ci low", r.role.ci95_low, g.role.ci95_low),
            ("role ci high", r.role.ci95_high, g.role.ci95_high),
            ("no-role mean", Some(r.no_role.mean), Some(g.no_role.mean)),
            ("no-role ci low", r.no_role.ci95_low, g.no_role.ci95_low),
            ("no-role ci high", r.no_role.ci95_high, g.no_role.ci95_high),
            ("t", r.t, g.t),
            ("df", r.df, g.df),
            ("p", r.p_two_tailed, g.p_two_tailed),
            ("d", r.cohens_d, g.cohens_d),
        ] {
            max_err = max_err.max(close_opt(&format!("{name} {what}"), got, want, tol)?);
        }
    }
    if report.correlations.len() != golden.correlations.len() {
        return Err("correlation row count".into());
    }
    for (r, g) in report.correlations.iter().zip(&golden.correlations) {
        if r.metric != g.metric || r.n != g.n || r.negative_as_expected != g.negative_as_expected {
            return Err(format!("correlation row {} vs {}", r.metric, g.metric));
        }
        max_err = max_err.max(close_opt(&format!("{} pearson", r.metric), r.pearson_rho, g.pearson_rho, tol)?);
        max_err = max_err.max(close_opt(&format!("{} kendall", r.metric), r.kendall_tau, g.kendall_tau, tol)?);
    }
    Ok(format!(
        "{} aspects, {} metrics, max abs error {max_err:.2e}",
        report.aspects.len(),
        report.correlations.len()
    ))
}
