//! Python bindings: verifier sessions, the declaration index, sketch
//! scoring, curation rules, workflow runs and benchmark reports.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use leanflow::agent::{AgentBackend, ProblemInput, PromptVariant, ScriptedBackend};
use leanflow::bench::{compute_metrics, emit_report, load_run, ReportFormat};
use leanflow::config::Config;
use leanflow::curation::{apply_rules, EvalRecord};
use leanflow::sketch::{self, RewardInputs};
use leanflow::tools::embed::{Embedder, HashEmbedder};
use leanflow::tools::{self as tools, ParsedBlock};
use leanflow::verifier::{self, StatementHeader, VerifierConfig, VerifyResult};
use leanflow::workflow::{run_workflow as run_wf, AgentRoles};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Converts any serializable value into plain Python objects.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(runtime_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Outcome of one submission.
#[pyclass(name = "VerifyResult", frozen, get_all)]
struct PyVerifyResult {
    ok: bool,
    messages: Vec<String>,
    elapsed: f64,
    uses_banned_tactic: bool,
}

#[pymethods]
impl PyVerifyResult {
    fn __repr__(&self) -> String {
        format!("VerifyResult(ok={}, messages={:?})", self.ok, self.messages)
    }
}

impl From<VerifyResult> for PyVerifyResult {
    fn from(r: VerifyResult) -> Self {
        PyVerifyResult {
            ok: r.ok,
            messages: r.messages.iter().map(|m| m.render()).collect(),
            elapsed: r.elapsed,
            uses_banned_tactic: r.uses_banned_tactic,
        }
    }
}

/// An incremental verification session on the built-in toy checker.
#[pyclass(name = "VerifierSession")]
struct PySession {
    inner: Mutex<verifier::VerifierSession>,
}

impl PySession {
    fn with<R>(&self, f: impl FnOnce(&mut verifier::VerifierSession) -> R) -> R {
        f(&mut self.inner.lock().expect("session lock"))
    }
}

#[pymethods]
impl PySession {
    #[new]
    #[pyo3(signature = (goal_statement, imports = String::new(), options = String::new()))]
    fn new(goal_statement: String, imports: String, options: String) -> PyResult<Self> {
        let header = StatementHeader {
            imports,
            options,
            goal_statement,
        };
        let session = verifier::VerifierSession::open(header, &VerifierConfig::toy()).map_err(value_err)?;
        Ok(PySession {
            inner: Mutex::new(session),
        })
    }

    fn submit_lemma(&self, source: &str) -> PyResult<PyVerifyResult> {
        self.with(|s| s.submit_lemma(source)).map(Into::into).map_err(value_err)
    }

    fn submit_final(&self, source: &str) -> PyResult<PyVerifyResult> {
        self.with(|s| s.submit_final(source)).map(Into::into).map_err(value_err)
    }

    fn verify_document(&self, source: &str) -> PyResult<PyVerifyResult> {
        self.with(|s| s.verify_document(source)).map(Into::into).map_err(value_err)
    }

    /// Accepted lemmas as (name, source) pairs in submission order.
    fn cache(&self) -> Vec<(String, String)> {
        self.with(|s| s.cache().iter().map(|r| (r.name.clone(), r.source.clone())).collect())
    }

    fn assembled_document(&self) -> Option<String> {
        self.with(|s| s.assembled_document())
    }

    #[getter]
    fn closed(&self) -> bool {
        self.with(|s| s.is_closed())
    }
}

/// A loaded declaration index with the hashing query embedder.
#[pyclass(name = "SearchIndex", frozen)]
struct PyIndex {
    index: tools::index::SearchIndex,
    embedder: HashEmbedder,
}

#[pymethods]
impl PyIndex {
    #[staticmethod]
    #[pyo3(signature = (path, commit_pin = None))]
    fn load(path: PathBuf, commit_pin: Option<&str>) -> PyResult<Self> {
        let index = match commit_pin {
            Some(pin) => tools::index::SearchIndex::load_pinned(&path, pin),
            None => tools::index::SearchIndex::load(&path),
        }
        .map_err(value_err)?;
        let embedder = HashEmbedder::new(index.dimension);
        Ok(PyIndex { index, embedder })
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.index.dimension
    }

    #[getter]
    fn commit_pin(&self) -> String {
        self.index.commit_pin.clone()
    }

    fn __len__(&self) -> usize {
        self.index.len()
    }

    /// Top-k (name, kind, score) for a query vector.
    fn search(&self, query: Vec<f32>, k: usize) -> PyResult<Vec<(String, String, f64)>> {
        let hits = self.index.search(&query, k).map_err(value_err)?;
        Ok(hits
            .iter()
            .map(|h| (h.entry.name.clone(), h.entry.kind.to_string(), h.score))
            .collect())
    }

    /// Top-k for a text query embedded with the hashing embedder.
    fn search_text(&self, query: &str, k: usize) -> PyResult<Vec<(String, String, f64)>> {
        let v = self.embedder.embed(query).map_err(value_err)?;
        self.search(v, k)
    }
}

/// Sketch reward: +1 or -1.
#[pyfunction]
fn fuse_reward(n_lemmas: usize, s_fl: f64, s_nl: f64) -> i8 {
    sketch::fuse_reward(RewardInputs { n_lemmas, s_fl, s_nl })
}

/// Rubric score from its components, rounded to one decimal.
#[pyfunction]
fn fuse_score(alignment: f64, value: f64, utilization: f64) -> f64 {
    sketch::fuse_score(alignment, value, utilization)
}

#[pyfunction]
fn round_half_even(x: f64, digits: usize) -> f64 {
    sketch::round_half_even(x, digits)
}

/// Parses a judge's rubric JSON; None when it is unreadable.
#[pyfunction]
fn parse_rubric_verdict<'py>(py: Python<'py>, text: &str, utilization: f64) -> PyResult<Option<Bound<'py, PyAny>>> {
    sketch::parse_rubric_verdict(text, utilization)
        .map(|v| to_py(py, &v))
        .transpose()
}

/// True when the sketch's main body only invokes a wrapper lemma.
#[pyfunction]
fn detect_delegation(source: &str) -> bool {
    sketch::detect_delegation(&sketch::parse_sketch(source))
}

#[pyfunction]
#[pyo3(signature = (source, banned = None))]
fn scan_banned_tactics(source: &str, banned: Option<Vec<String>>) -> bool {
    let banned = banned.unwrap_or_else(|| VerifierConfig::toy().banned_tokens);
    verifier::scan_banned_tactics(source, &banned)
}

/// Tool-call blocks in a turn, as dicts; malformed blocks carry `error`.
#[pyfunction]
fn parse_tool_calls<'py>(py: Python<'py>, text: &str) -> PyResult<Vec<Bound<'py, PyAny>>> {
    tools::parse_tool_calls(text)
        .iter()
        .map(|b| match b {
            ParsedBlock::Call(c) => to_py(py, c),
            ParsedBlock::Malformed { id, reason } => {
                let d = PyDict::new(py);
                d.set_item("id", id)?;
                d.set_item("error", reason)?;
                Ok(d.into_any())
            }
        })
        .collect()
}

/// Curation decision for per-variant solve counts.
#[pyfunction]
#[pyo3(signature = (direct, sketch_conditioned = 0, summary_conditioned = 0, budget = (4, 8)))]
fn curation_decision<'py>(
    py: Python<'py>,
    direct: usize,
    sketch_conditioned: usize,
    summary_conditioned: usize,
    budget: (usize, usize),
) -> PyResult<Bound<'py, PyAny>> {
    let rec = EvalRecord {
        problem_id: String::new(),
        per_variant: [
            (PromptVariant::Direct, direct),
            (PromptVariant::SketchConditioned, sketch_conditioned),
            (PromptVariant::SummaryConditioned, summary_conditioned),
        ]
        .into_iter()
        .collect(),
        budget,
        errors: Vec::new(),
    };
    to_py(py, &apply_rules(&rec))
}

/// Runs the decomposition workflow on one statement. Roles come from a
/// scripted fixture (`script`) or a config file (`config`).
#[pyfunction]
#[pyo3(signature = (statement, script = None, config = None, max_depth = None))]
fn run_workflow<'py>(
    py: Python<'py>,
    statement: String,
    script: Option<PathBuf>,
    config: Option<PathBuf>,
    max_depth: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = match &config {
        Some(p) => Config::load(p).map_err(value_err)?,
        None => Config::default(),
    };
    let roles = match &script {
        Some(p) => {
            let b: Arc<dyn AgentBackend> = Arc::new(ScriptedBackend::from_file(p).map_err(value_err)?);
            AgentRoles::uniform(b)
        }
        None => cfg.roles().map_err(value_err)?,
    };
    let mut wf = cfg.workflow.clone();
    if let Some(d) = max_depth {
        wf.max_depth = d;
    }
    let env = cfg.prover_env().map_err(value_err)?;
    let header = StatementHeader::new(statement);
    let problem = ProblemInput::new(header.goal_name(), header);
    let r = py
        .detach(|| run_wf(&problem, &roles, &wf, &env))
        .map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("solved", r.solved)?;
    d.set_item("final_document", r.final_document)?;
    d.set_item("restarts_used", r.restarts_used)?;
    d.set_item("trajectories_used", r.trajectories_used)?;
    d.set_item("max_depth", r.tree.max_depth())?;
    d.set_item("error", r.error)?;
    Ok(d.into_any())
}

/// Report for a finished run directory: text, json or csv.
#[pyfunction]
#[pyo3(signature = (run_dir, format = "text"))]
fn report(run_dir: PathBuf, format: &str) -> PyResult<String> {
    let format: ReportFormat = format.parse().map_err(value_err)?;
    let (_, records) = load_run(&run_dir).map_err(value_err)?;
    Ok(emit_report(&compute_metrics(&records), format))
}

#[pymodule(name = "leanflow")]
fn leanflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySession>()?;
    m.add_class::<PyVerifyResult>()?;
    m.add_class::<PyIndex>()?;
    m.add_function(wrap_pyfunction!(fuse_reward, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_score, m)?)?;
    m.add_function(wrap_pyfunction!(round_half_even, m)?)?;
    m.add_function(wrap_pyfunction!(parse_rubric_verdict, m)?)?;
    m.add_function(wrap_pyfunction!(detect_delegation, m)?)?;
    m.add_function(wrap_pyfunction!(scan_banned_tactics, m)?)?;
    m.add_function(wrap_pyfunction!(parse_tool_calls, m)?)?;
    m.add_function(wrap_pyfunction!(curation_decision, m)?)?;
    m.add_function(wrap_pyfunction!(run_workflow, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
