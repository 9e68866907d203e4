//! Python bindings: synthetic cohorts, feature matrices, model training and
//! prediction, SHAP rankings, explanation agreement and the full pipeline.

use std::collections::BTreeMap;
use std::path::PathBuf;

use nutrisk::cli::{self, RunConfig};
use nutrisk::consistency::{self, RankingList};
use nutrisk::domain::{ingest_cohort, write_cohort, Cohort, IngestSchema};
use nutrisk::evalharness::{train_on, SplitKind};
use nutrisk::featureng::{build_feature_matrix, FeatureConfig, FeatureMatrix};
use nutrisk::models::{Family, Hyperparams, ModelSpec, TrainedModel};
use nutrisk::stats::{self, Alternative};
use nutrisk::synthcohort::{generate_cohort, SyntheticCohortSpec};
use nutrisk::xai::{self, Method, ModelView};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: nutrisk::Error) -> PyErr {
    if e.is_data_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_family(name: &str) -> PyResult<Family> {
    Family::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown model family {name:?}")))
}

fn parse_method(name: &str) -> PyResult<Method> {
    Method::parse(name).ok_or_else(|| PyValueError::new_err(format!("unknown method {name:?}")))
}

/// Subjects, meals, body composition and monthly assessments.
#[pyclass(name = "Cohort", module = "nutrisk", frozen)]
struct PyCohort(Cohort);

#[pymethods]
impl PyCohort {
    /// Seeded synthetic cohort with the default generator settings.
    #[staticmethod]
    #[pyo3(signature = (seed = 42, subjects = None))]
    fn synthetic(py: Python<'_>, seed: u64, subjects: Option<usize>) -> PyResult<Self> {
        let mut spec = SyntheticCohortSpec::default();
        if let Some(n) = subjects {
            spec.n_subjects = n;
        }
        py.detach(|| generate_cohort(&spec, seed)).map(|s| PyCohort(s.cohort)).map_err(py_err)
    }

    /// Reads the CSV tables of a data directory.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        ingest_cohort(&dir, &IngestSchema::default()).map(|(c, _)| PyCohort(c)).map_err(py_err)
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        write_cohort(&self.0, &dir, &IngestSchema::default()).map_err(py_err)
    }

    #[getter]
    fn n_subjects(&self) -> usize {
        self.0.n_subjects()
    }

    fn subject_ids(&self) -> Vec<String> {
        self.0.profiles().map(|p| p.subject_id.as_str().to_string()).collect()
    }

    #[pyo3(signature = (with_body = true))]
    fn feature_matrix(&self, with_body: bool) -> PyResult<PyFeatureMatrix> {
        build_feature_matrix(&self.0, with_body, &FeatureConfig::default()).map(PyFeatureMatrix).map_err(py_err)
    }
}

/// Weekly feature rows with labels (1.0 = Risk) and subject ids.
#[pyclass(name = "FeatureMatrix", module = "nutrisk", frozen)]
struct PyFeatureMatrix(FeatureMatrix);

#[pymethods]
impl PyFeatureMatrix {
    #[getter]
    fn columns(&self) -> Vec<String> {
        self.0.column_names()
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<f64>> {
        self.0.rows.clone()
    }

    #[getter]
    fn labels(&self) -> Vec<f64> {
        self.0.y()
    }

    #[getter]
    fn subjects(&self) -> Vec<String> {
        self.0.subjects.iter().map(|s| s.as_str().to_string()).collect()
    }

    /// `(normal, risk)` row counts.
    fn class_counts(&self) -> (usize, usize) {
        self.0.class_counts()
    }

    fn __len__(&self) -> usize {
        self.0.n_rows()
    }
}

/// A trained classifier together with its preprocessing plan.
#[pyclass(name = "Model", module = "nutrisk", frozen)]
struct PyModel(TrainedModel);

#[pymethods]
impl PyModel {
    /// Trains on every row of `fm` with default hyperparameters.
    #[staticmethod]
    #[pyo3(signature = (fm, family = "forest", seed = 42))]
    fn train(py: Python<'_>, fm: &PyFeatureMatrix, family: &str, seed: u64) -> PyResult<Self> {
        let spec = ModelSpec::new(Hyperparams::default_for(parse_family(family)?), seed);
        let all: Vec<usize> = (0..fm.0.n_rows()).collect();
        py.detach(|| train_on(&fm.0, &all, &spec, None)).map(PyModel).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        cli::load_model(&path).map(PyModel).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        cli::persist_model(&self.0, &path).map_err(py_err)
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.0.family().as_str()
    }

    /// P(Risk) for rows in feature-matrix layout.
    fn predict_proba(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.0.predict_proba_raw_features(&rows).map_err(py_err)
    }

    /// Global SHAP ranking over the rows of `fm`: `[(feature, mean |phi|), ...]`.
    fn shap_ranking(&self, py: Python<'_>, fm: &PyFeatureMatrix) -> PyResult<Vec<(String, f64)>> {
        py.detach(|| {
            let view = ModelView::new(&self.0, &fm.0.columns, &fm.0.rows)?;
            xai::shap_global_ranking(&view)
        })
        .map(|r| r.entries.into_iter().map(|e| (e.feature, e.score)).collect())
        .map_err(py_err)
    }
}

/// Outcome of a statistical test.
#[pyclass(name = "TestResult", module = "nutrisk", frozen, get_all)]
struct PyTestResult {
    test: String,
    statistic: f64,
    p_value: f64,
    df: Vec<f64>,
    significant: bool,
}

#[pymethods]
impl PyTestResult {
    fn __repr__(&self) -> String {
        format!("TestResult(test={:?}, statistic={}, p_value={})", self.test, self.statistic, self.p_value)
    }
}

impl From<stats::TestResult> for PyTestResult {
    fn from(r: stats::TestResult) -> Self {
        PyTestResult { test: r.test, statistic: r.statistic, p_value: r.p_value, df: r.df, significant: r.significant }
    }
}

fn test_result(r: nutrisk::Result<stats::TestResult>) -> PyResult<PyTestResult> {
    r.map(Into::into).map_err(py_err)
}

#[pyfunction]
fn shapiro_wilk(x: Vec<f64>) -> PyResult<PyTestResult> {
    test_result(stats::shapiro_wilk(&x))
}

#[pyfunction]
fn welch_t(x: Vec<f64>, y: Vec<f64>) -> PyResult<PyTestResult> {
    test_result(stats::welch_t(&x, &y))
}

#[pyfunction]
#[pyo3(signature = (x, y, alternative = "two-sided"))]
fn wilcoxon_ranksum(x: Vec<f64>, y: Vec<f64>, alternative: &str) -> PyResult<PyTestResult> {
    let alt = match alternative {
        "two-sided" => Alternative::TwoSided,
        "less" => Alternative::Less,
        "greater" => Alternative::Greater,
        other => return Err(PyValueError::new_err(format!("unknown alternative {other:?}"))),
    };
    test_result(stats::wilcoxon_ranksum(&x, &y, alt))
}

#[pyfunction]
fn anova_oneway(groups: Vec<Vec<f64>>) -> PyResult<PyTestResult> {
    let refs: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
    test_result(stats::anova_oneway(&refs))
}

/// Shapiro-Wilk on both samples, then Welch's t or the rank-sum test.
#[pyfunction]
fn compare_pipelines(x: Vec<f64>, y: Vec<f64>) -> PyResult<PyTestResult> {
    test_result(stats::compare_pipelines(&x, &y))
}

/// `(exact, non_exact)` top-K agreement of two full rankings.
#[pyfunction]
#[pyo3(signature = (a, b, k, method_a = "shap", method_b = "lime"))]
fn topk_agreement(a: Vec<String>, b: Vec<String>, k: usize, method_a: &str, method_b: &str) -> PyResult<(usize, usize)> {
    let a = RankingList { method: parse_method(method_a)?, features: a, truncated: false };
    let b = RankingList { method: parse_method(method_b)?, features: b, truncated: false };
    consistency::topk_agreement_lists(&a, &b, k).map_err(py_err)
}

/// Agreement table (CSV text) for a rankings JSON file.
#[pyfunction]
#[pyo3(signature = (rankings, ks = vec![1, 3, 5]))]
fn agree(rankings: PathBuf, ks: Vec<usize>) -> PyResult<String> {
    cli::cmd_agree(&rankings, &ks).map_err(py_err)
}

/// Runs the full pipeline from a TOML config (empty for defaults) and returns
/// the median accuracy per `variant/family/scheme`.
#[pyfunction]
#[pyo3(signature = (out_dir, config = "", seed = None))]
fn run_pipeline(py: Python<'_>, out_dir: PathBuf, config: &str, seed: Option<u64>) -> PyResult<BTreeMap<String, f64>> {
    let mut cfg = RunConfig::from_toml(config).map_err(py_err)?;
    cfg.out_dir = out_dir;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let bundle = py.detach(|| cli::run_pipeline(&cfg)).map_err(py_err)?;
    Ok(bundle
        .evaluations
        .iter()
        .map(|e| {
            let scheme = match e.kind() {
                SplitKind::Holdout => "holdout",
                SplitKind::Loso => "loso",
            };
            (format!("{}/{}/{scheme}", e.variant, e.family), e.report.median_accuracy())
        })
        .collect())
}

#[pymodule]
#[pyo3(name = "nutrisk")]
fn nutrisk_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCohort>()?;
    m.add_class::<PyFeatureMatrix>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTestResult>()?;
    m.add_function(wrap_pyfunction!(shapiro_wilk, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t, m)?)?;
    m.add_function(wrap_pyfunction!(wilcoxon_ranksum, m)?)?;
    m.add_function(wrap_pyfunction!(anova_oneway, m)?)?;
    m.add_function(wrap_pyfunction!(compare_pipelines, m)?)?;
    m.add_function(wrap_pyfunction!(topk_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(agree, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
