//! Python bindings for the middo pipeline.
//!
//! Exposes the corpus types plus the pure computations (thresholds, neighbor
//! search, reply parsing, prompt building, selection, report math) and a
//! deterministic end-to-end loop over the mock backend. Everything loads as
//! the `_middo` extension module.

use std::collections::BTreeMap;
use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;

use middo::config::PipelineConfig;
use middo::corpus::{load_dataset, save_dataset, CorpusFormat, Dataset, Sample};
use middo::pipeline::{run_loop, RunContext};
use middo::{refinery, report, selector, signals};

fn to_py_err(e: middo::Error) -> PyErr {
    match e {
        middo::Error::Config(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    match value {
        serde_json::Value::Null => Ok(py.None()),
        serde_json::Value::Bool(b) => b.into_py_any(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py_any(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py_any(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py_any(py)
            }
        }
        serde_json::Value::String(s) => s.into_py_any(py),
        serde_json::Value::Array(items) => {
            let converted: Vec<Py<PyAny>> =
                items.iter().map(|v| json_to_py(py, v)).collect::<PyResult<_>>()?;
            PyList::new(py, converted)?.into_py_any(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_py_any(py)
        }
    }
}

fn serialize_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let json = serde_json::to_value(value)
        .map_err(|e| PyRuntimeError::new_err(format!("serialization failed: {e}")))?;
    json_to_py(py, &json)
}

fn parse_format(path: &str, format: Option<&str>) -> PyResult<CorpusFormat> {
    match format.unwrap_or("auto") {
        "jsonl" => Ok(CorpusFormat::Jsonl),
        "json" => Ok(CorpusFormat::JsonArray),
        "auto" => Ok(if path.ends_with(".json") {
            CorpusFormat::JsonArray
        } else {
            CorpusFormat::Jsonl
        }),
        other => Err(PyValueError::new_err(format!(
            "unknown format {other:?}, expected \"auto\", \"jsonl\", or \"json\""
        ))),
    }
}

/// One instruction-tuning record: instruction, optional context, response.
#[pyclass(name = "Sample", module = "_middo", from_py_object)]
#[derive(Clone)]
struct PySample {
    inner: Sample,
}

#[pymethods]
impl PySample {
    #[new]
    #[pyo3(signature = (instruction, response, context = None))]
    fn new(instruction: String, response: String, context: Option<String>) -> Self {
        PySample { inner: Sample::original(instruction, context, response) }
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn instruction(&self) -> &str {
        &self.inner.instruction
    }

    #[getter]
    fn context(&self) -> Option<&str> {
        self.inner.context.as_deref()
    }

    #[getter]
    fn response(&self) -> &str {
        &self.inner.response
    }

    #[getter]
    fn origin_iteration(&self) -> u32 {
        self.inner.origin_iteration
    }

    /// `(parent_id, transform_kind, created_in_iteration)` for regenerated
    /// samples, `None` for originals.
    #[getter]
    fn lineage(&self) -> Option<(String, String, u32)> {
        self.inner.lineage.as_ref().map(|l| {
            (l.parent_id.clone(), l.transform_kind.as_str().to_string(), l.created_in_iteration)
        })
    }

    /// The prompt a model sees: the instruction, plus the context on its own
    /// line when present.
    fn prompt_text(&self) -> String {
        self.inner.prompt_text()
    }

    fn __repr__(&self) -> String {
        format!("Sample(id={:?}, instruction={:?})", self.inner.id, self.inner.instruction)
    }
}

/// An ordered corpus of samples at one loop iteration.
#[pyclass(name = "Dataset", module = "_middo")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (samples, iteration = 0))]
    fn new(samples: Vec<PySample>, iteration: u32) -> PyResult<Self> {
        let inner = Dataset::new(samples.into_iter().map(|s| s.inner).collect(), iteration)
            .map_err(to_py_err)?;
        Ok(PyDataset { inner })
    }

    /// Reads a dataset file. `format` is `"auto"` (by extension), `"jsonl"`,
    /// or `"json"` for a JSON array.
    #[staticmethod]
    #[pyo3(signature = (path, format = None))]
    fn load(path: &str, format: Option<&str>) -> PyResult<Self> {
        let inner =
            load_dataset(Path::new(path), parse_format(path, format)?).map_err(to_py_err)?;
        Ok(PyDataset { inner })
    }

    /// Writes canonical JSONL and returns the file's sha256 hex digest.
    #[pyo3(signature = (path, strip_metadata = false))]
    fn save(&self, path: &str, strip_metadata: bool) -> PyResult<String> {
        save_dataset(Path::new(path), &self.inner, strip_metadata).map_err(to_py_err)
    }

    #[getter]
    fn iteration(&self) -> u32 {
        self.inner.iteration
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids().map(str::to_string).collect()
    }

    fn sample(&self, id: &str) -> Option<PySample> {
        self.inner.get(id).map(|s| PySample { inner: s.clone() })
    }

    fn samples(&self) -> Vec<PySample> {
        self.inner.samples.iter().map(|s| PySample { inner: s.clone() }).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(iteration={}, samples={})", self.inner.iteration, self.inner.len())
    }
}

/// The selection cut `mean + m * std_dev` over a score distribution.
#[pyfunction]
fn dynamic_threshold(values: Vec<f64>, m: f64) -> PyResult<f64> {
    selector::dynamic_threshold(&values, m).map_err(to_py_err)
}

/// Distribution summary behind one threshold decision, as a dict with keys
/// `n`, `mean`, `std_dev`, `m`, and `threshold`.
#[pyfunction]
fn signal_stats(py: Python<'_>, values: Vec<f64>, m: f64) -> PyResult<Py<PyAny>> {
    let stats = selector::signal_stats(&values, m).map_err(to_py_err)?;
    serialize_to_py(py, &stats)
}

/// Mean negative log-likelihood over per-token logprobs.
#[pyfunction]
fn compute_loss(token_logprobs: Vec<f64>) -> PyResult<f64> {
    signals::compute_loss(&token_logprobs).map_err(to_py_err)
}

/// Exact nearest neighbors by cosine similarity over unit vectors, as
/// `{id: [(neighbor_id, similarity), ...]}` in non-increasing similarity
/// order with ties broken by ascending id.
#[pyfunction]
#[pyo3(signature = (embeddings, k = 2))]
fn k_nearest(
    embeddings: BTreeMap<String, Vec<f64>>,
    k: usize,
) -> PyResult<BTreeMap<String, Vec<(String, f64)>>> {
    let neighbors = signals::k_nearest(&embeddings, k).map_err(to_py_err)?;
    Ok(neighbors
        .into_iter()
        .map(|(id, list)| (id, list.into_iter().map(|nb| (nb.id, nb.similarity)).collect()))
        .collect())
}

/// Mean cosine similarity to each sample's k nearest neighbors; low scores
/// mark thinly covered regions.
#[pyfunction]
#[pyo3(signature = (embeddings, k = 2))]
fn diversity_scores(
    embeddings: BTreeMap<String, Vec<f64>>,
    k: usize,
) -> PyResult<BTreeMap<String, f64>> {
    let scores = signals::diversity_scores(&embeddings, k).map_err(to_py_err)?;
    Ok(scores.into_iter().map(|(id, signal)| (id, signal.score)).collect())
}

/// The first decimal number in a judge reply, which must lie in [0, 10].
#[pyfunction]
fn parse_judge_reply(reply: &str) -> PyResult<f64> {
    signals::parse_judge_reply(reply).map_err(to_py_err)
}

/// The rewritten prompt after the last `Step 4 #Final Rewritten Prompt#:`
/// marker line of a four-step rewrite reply.
#[pyfunction]
fn parse_four_step_reply(reply: &str) -> PyResult<String> {
    refinery::parse_four_step_reply(reply).map_err(to_py_err)
}

/// The synthesized prompt after the first `#New Prompt#:` marker line of an
/// extension reply.
#[pyfunction]
fn parse_new_prompt_reply(reply: &str) -> PyResult<String> {
    refinery::parse_new_prompt_reply(reply).map_err(to_py_err)
}

/// Rewrite request that simplifies an overly hard sample.
#[pyfunction]
fn build_simplify_prompt(sample: PySample) -> String {
    refinery::build_simplify_prompt(&sample.inner)
}

/// Rewrite request that lifts a low-quality sample.
#[pyfunction]
fn build_quality_prompt(sample: PySample) -> String {
    refinery::build_quality_prompt(&sample.inner)
}

/// Synthesis request for one brand-new prompt from a core prompt and exactly
/// two hint prompts.
#[pyfunction]
fn build_extension_prompt(core: &str, hints: Vec<String>) -> PyResult<String> {
    let refs: Vec<&str> = hints.iter().map(String::as_str).collect();
    refinery::build_extension_prompt(core, &refs).map_err(to_py_err)
}

/// Ids whose loss exceeds the cut both before and after training, from
/// `{id: (loss_pre, loss_post)}`.
#[pyfunction]
fn select_complex(losses: BTreeMap<String, (f64, f64)>, m: f64) -> PyResult<Vec<String>> {
    let map: BTreeMap<String, signals::LossSignal> = losses
        .into_iter()
        .map(|(id, (pre, post))| {
            (id.clone(), signals::LossSignal { id, loss_pre: pre, loss_post: post })
        })
        .collect();
    let selection = selector::select_complex(&map, m).map_err(to_py_err)?;
    Ok(selection.ids.into_iter().collect())
}

/// Ids whose neighborhood similarity falls strictly below the cut.
#[pyfunction]
fn select_sparse(scores: BTreeMap<String, f64>, m: f64) -> PyResult<Vec<String>> {
    let map: BTreeMap<String, signals::DiversitySignal> = scores
        .into_iter()
        .map(|(id, score)| {
            (id.clone(), signals::DiversitySignal { id, neighbor_ids: Vec::new(), score })
        })
        .collect();
    let selection = selector::select_sparse(&map, m).map_err(to_py_err)?;
    Ok(selection.ids.into_iter().collect())
}

/// Ids whose mean judge score falls strictly below the cut.
#[pyfunction]
fn select_low_quality(scores: BTreeMap<String, f64>, m: f64) -> PyResult<Vec<String>> {
    let map: BTreeMap<String, signals::QualitySignal> = scores
        .into_iter()
        .map(|(id, mean)| {
            (id.clone(), signals::QualitySignal { id, sub_scores: [mean; 6], mean })
        })
        .collect();
    let selection = selector::select_low_quality(&map, m).map_err(to_py_err)?;
    Ok(selection.ids.into_iter().collect())
}

/// Histograms two loss distributions over a shared range and reports the
/// percentage reduction of the maximum, as nested dicts.
#[pyfunction]
#[pyo3(signature = (before, after, bins = 40))]
fn loss_report(py: Python<'_>, before: Vec<f64>, after: Vec<f64>, bins: usize) -> PyResult<Py<PyAny>> {
    let report = report::loss_report(&before, &after, bins).map_err(to_py_err)?;
    serialize_to_py(py, &report)
}

/// Runs the full closed loop over the deterministic in-process backend and
/// returns one manifest dict per completed iteration. Identical inputs
/// produce byte-identical run directories.
#[pyfunction]
#[pyo3(signature = (input_path, run_dir, iterations = 3, k = 2, seed_tag = None))]
fn run_mock_loop(
    py: Python<'_>,
    input_path: &str,
    run_dir: &str,
    iterations: u32,
    k: usize,
    seed_tag: Option<String>,
) -> PyResult<Py<PyAny>> {
    let mut config = PipelineConfig::default();
    config.run.iterations = iterations;
    config.selection.k = k;
    if let Some(tag) = seed_tag {
        config.run.seed_tag = tag;
    }
    let ctx = RunContext::new(config, Path::new(run_dir), true).map_err(to_py_err)?;
    let initial =
        load_dataset(Path::new(input_path), parse_format(input_path, None)?).map_err(to_py_err)?;
    let manifests = run_loop(&ctx, &initial).map_err(to_py_err)?;
    serialize_to_py(py, &manifests)
}

#[pymodule]
fn _middo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PySample>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(dynamic_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(signal_stats, m)?)?;
    m.add_function(wrap_pyfunction!(compute_loss, m)?)?;
    m.add_function(wrap_pyfunction!(k_nearest, m)?)?;
    m.add_function(wrap_pyfunction!(diversity_scores, m)?)?;
    m.add_function(wrap_pyfunction!(parse_judge_reply, m)?)?;
    m.add_function(wrap_pyfunction!(parse_four_step_reply, m)?)?;
    m.add_function(wrap_pyfunction!(parse_new_prompt_reply, m)?)?;
    m.add_function(wrap_pyfunction!(build_simplify_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(build_quality_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(build_extension_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(select_complex, m)?)?;
    m.add_function(wrap_pyfunction!(select_sparse, m)?)?;
    m.add_function(wrap_pyfunction!(select_low_quality, m)?)?;
    m.add_function(wrap_pyfunction!(loss_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_mock_loop, m)?)?;
    Ok(())
}
