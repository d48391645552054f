//! Python bindings: reward, distances and study statistics.

use std::fs::File;
use std::sync::Arc;

use heteroglossia_core::distance::{self, DistanceError, DistanceScorer, Metric, TextRef};
use heteroglossia_core::stats::report::{build_study_report, parse_distances, parse_ratings};
use heteroglossia_core::stats::{self, StatsError};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn distance_err(e: DistanceError) -> PyErr {
    match e {
        DistanceError::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn stats_err(e: StatsError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Reward in cents for a prompt of the given word count.
#[pyfunction]
fn compute_reward(prompt_word_count: u64) -> u64 {
    heteroglossia_core::compute_reward(prompt_word_count)
}

#[pyfunction]
fn cosine_distance(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
    distance::cosine_distance(&u, &v).map_err(distance_err)
}

#[pyfunction]
fn split_sentences(text: &str) -> Vec<String> {
    distance::split_sentences(text)
}

/// Distance scorer over a word-vector file and an optional sidecar of document vectors.
#[pyclass(frozen)]
struct Scorer {
    inner: DistanceScorer,
}

#[pymethods]
impl Scorer {
    #[new]
    #[pyo3(signature = (embeddings=None, case_folding=false, sidecar=None))]
    fn new(embeddings: Option<&str>, case_folding: bool, sidecar: Option<&str>) -> PyResult<Self> {
        let store = embeddings
            .map(|p| distance::load_embeddings(p, case_folding).map(Arc::new))
            .transpose()
            .map_err(distance_err)?;
        let side = sidecar
            .map(|p| distance::load_sidecar(p).map(Arc::new))
            .transpose()
            .map_err(distance_err)?;
        Ok(Scorer { inner: DistanceScorer::new(store, side) })
    }

    /// Metric names this scorer can compute.
    fn metrics(&self) -> Vec<&'static str> {
        self.inner.metrics().iter().map(|m| m.name()).collect()
    }

    /// Distance between two texts; ids are only consulted by the sidecar metric.
    #[pyo3(signature = (a, b, metric="word_sum", a_id="", b_id=""))]
    fn distance(&self, a: &str, b: &str, metric: &str, a_id: &str, b_id: &str) -> PyResult<f64> {
        let metric: Metric = metric
            .parse()
            .map_err(|_| PyValueError::new_err(format!("unknown metric {metric:?}")))?;
        self.inner
            .distance(metric, TextRef { id: a_id, body: a }, TextRef { id: b_id, body: b })
            .map_err(distance_err)
    }
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    stats::pearson(&x, &y).map_err(stats_err)
}

#[pyfunction]
fn kendall_tau(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    stats::kendall_tau(&x, &y).map_err(stats_err)
}

/// Returns `(t, df, p_two_tailed)`.
#[pyfunction]
fn paired_t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = stats::paired_t_test(&a, &b).map_err(stats_err)?;
    Ok((r.t, r.df, r.p_two_tailed))
}

#[pyfunction]
fn cohens_d_paired(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    stats::cohens_d_paired(&a, &b).map_err(stats_err)
}

#[pyfunction]
fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    stats::student_t_two_tailed(t, df)
}

/// Study report from ratings and distances CSV files, as a dict plus its text rendering.
#[pyfunction]
fn study_report<'py>(py: Python<'py>, ratings: &str, distances: &str) -> PyResult<(Bound<'py, PyAny>, String)> {
    let open = |p: &str| File::open(p).map_err(|e| PyOSError::new_err(format!("{p}: {e}")));
    let ratings = parse_ratings(open(ratings)?).map_err(stats_err)?;
    let distances = parse_distances(open(distances)?).map_err(stats_err)?;
    let report = build_study_report(&ratings, &distances).map_err(stats_err)?;
    let json = serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let dict = py.import("json")?.call_method1("loads", (json,))?;
    Ok((dict, report.to_text()))
}

#[pymodule]
fn heteroglossia(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(compute_reward, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_distance, m)?)?;
    m.add_function(wrap_pyfunction!(split_sentences, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(paired_t_test, m)?)?;
    m.add_function(wrap_pyfunction!(cohens_d_paired, m)?)?;
    m.add_function(wrap_pyfunction!(student_t_two_tailed, m)?)?;
    m.add_function(wrap_pyfunction!(study_report, m)?)?;
    m.add_class::<Scorer>()?;
    Ok(())
}
