//! Benchmark runs: problem sets, resumable result logs and solve-rate reports.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_light_inference, AgentBackend, Outcome, ProblemInput, PromptVariant, ProverEnv};
use crate::curation::{apply_rules, evaluate_candidate, CandidateProblem, DecisionLogEntry};
use crate::verifier::StatementHeader;
use crate::workflow::{run_workflow, write_atomic, AgentRoles, WorkflowConfig};

pub const RESULTS_FILE: &str = "results.jsonl";
pub const RESULTS_SCHEMA: &str = "leanflow-results";
pub const RESULTS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("duplicate problem id '{0}'")]
    DuplicateId(String),
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("results file {path} belongs to a different run: {message}")]
    ResumeMismatch { path: PathBuf, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchProblem {
    pub id: String,
    /// Theorem with a `sorry` proof.
    pub statement: String,
    #[serde(default)]
    pub imports: String,
    #[serde(default)]
    pub options: String,
    #[serde(default)]
    pub nl_statement: Option<String>,
    #[serde(default)]
    pub nl_proof: Option<String>,
}

impl BenchProblem {
    pub fn header(&self) -> StatementHeader {
        StatementHeader {
            imports: self.imports.clone(),
            options: self.options.clone(),
            goal_statement: self.statement.clone(),
        }
    }

    /// Problem from a Lean file: `import` lines, then option and `open`
    /// lines, then the theorem.
    pub fn from_lean(id: impl Into<String>, text: &str) -> Self {
        let (mut imports, mut options, mut statement) = (String::new(), String::new(), String::new());
        for line in text.lines() {
            let t = line.trim_start();
            let target = if !statement.is_empty() {
                &mut statement
            } else if t.starts_with("import ") {
                &mut imports
            } else if t.starts_with("set_option ") || t.starts_with("open ") || t.is_empty() {
                &mut options
            } else {
                &mut statement
            };
            target.push_str(line);
            target.push('\n');
        }
        BenchProblem {
            id: id.into(),
            statement: statement.trim().to_string(),
            imports: imports.trim().to_string(),
            options: options.trim().to_string(),
            nl_statement: None,
            nl_proof: None,
        }
    }

    pub fn input(&self) -> ProblemInput {
        let mut p = ProblemInput::new(self.id.clone(), self.header());
        p.nl_proof = self.nl_proof.clone();
        p
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProblemSet {
    pub name: String,
    pub problems: Vec<BenchProblem>,
    #[serde(default)]
    pub lean_version_tag: Option<String>,
}

/// Optional first line of a problem file.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SetMetadata {
    problem_set: String,
    #[serde(default)]
    lean_version: Option<String>,
}

/// Reads a JSON-lines problem set. Returns the set and any warnings.
pub fn load_problems(path: impl AsRef<Path>) -> Result<(ProblemSet, Vec<String>), BenchError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_problems(&name, &text)
}

pub fn parse_problems(default_name: &str, text: &str) -> Result<(ProblemSet, Vec<String>), BenchError> {
    let mut set = ProblemSet {
        name: default_name.to_string(),
        ..Default::default()
    };
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if std::mem::take(&mut first) {
            if let Ok(meta) = serde_json::from_str::<SetMetadata>(line) {
                set.name = meta.problem_set;
                set.lean_version_tag = meta.lean_version;
                continue;
            }
        }
        let p: BenchProblem = serde_json::from_str(line).map_err(|e| BenchError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if p.id.trim().is_empty() {
            return Err(BenchError::Format {
                line: i + 1,
                message: "empty problem id".into(),
            });
        }
        if !seen.insert(p.id.clone()) {
            return Err(BenchError::DuplicateId(p.id));
        }
        set.problems.push(p);
    }
    if set.problems.is_empty() {
        warnings.push(format!("problem set '{}' is empty", set.name));
    }
    Ok((set, warnings))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "agent")]
    AgentOnly,
    #[serde(rename = "workflow")]
    FullWorkflow,
    #[serde(rename = "curate")]
    Curate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// Pass@N×M for agent-only runs and curation.
    pub light_inference: (usize, usize),
    pub workflow: WorkflowConfig,
    pub out_dir: PathBuf,
    pub resume: bool,
    pub workers: usize,
    pub write_proofs: bool,
}

impl RunConfig {
    pub fn new(mode: Mode, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            mode,
            light_inference: (4, 8),
            workflow: WorkflowConfig::default(),
            out_dir: out_dir.into(),
            resume: false,
            workers: 1,
            write_proofs: true,
        }
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.workers == 0 {
            return Err(BenchError::Config("workers must be at least 1".into()));
        }
        match self.mode {
            Mode::AgentOnly | Mode::Curate if self.light_inference.0 == 0 || self.light_inference.1 == 0 => {
                Err(BenchError::Config("light inference needs N and M of at least 1".into()))
            }
            Mode::FullWorkflow => self.workflow.validate().map_err(|e| BenchError::Config(e.to_string())),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultsHeader {
    pub schema: String,
    pub version: u32,
    pub problem_set: String,
    pub mode: Mode,
    #[serde(default)]
    pub lean_version: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub solved: bool,
    /// Wall time to the solve; `None` when unsolved.
    pub solve_seconds: Option<f64>,
    pub trajectories_used: usize,
    pub restarts_used: usize,
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curation: Option<DecisionLogEntry>,
}

impl ProblemRecord {
    fn failed(id: &str, error: String) -> Self {
        ProblemRecord {
            id: id.to_string(),
            solved: false,
            solve_seconds: None,
            trajectories_used: 0,
            restarts_used: 0,
            error: Some(error),
            curation: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// One record per problem, in problem-set order.
    pub records: Vec<ProblemRecord>,
    pub metrics: Metrics,
    /// Ids skipped because a previous run finished them.
    pub resumed: Vec<String>,
}

/// Parses a results log. A torn final line is ignored.
pub fn read_results(path: impl AsRef<Path>) -> Result<(Option<ResultsHeader>, Vec<ProblemRecord>), BenchError> {
    let text = std::fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        if i == 0 {
            if let Ok(h) = serde_json::from_str::<ResultsHeader>(line) {
                if h.schema == RESULTS_SCHEMA {
                    header = Some(h);
                    continue;
                }
            }
        }
        match serde_json::from_str::<ProblemRecord>(line) {
            Ok(r) => records.push(r),
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
            Err(e) => {
                return Err(BenchError::Format {
                    line: i + 1,
                    message: e.to_string(),
                })
            }
        }
    }
    Ok((header, records))
}

/// Results directory as read by `report`.
pub fn load_run(dir: impl AsRef<Path>) -> Result<(Option<ResultsHeader>, Vec<ProblemRecord>), BenchError> {
    read_results(dir.as_ref().join(RESULTS_FILE))
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

struct Dispatch<'a> {
    set: &'a ProblemSet,
    config: &'a RunConfig,
    roles: &'a AgentRoles,
    env: &'a ProverEnv,
}

impl Dispatch<'_> {
    fn run(&self, p: &BenchProblem) -> ProblemRecord {
        let start = Instant::now();
        match self.config.mode {
            Mode::AgentOnly => self.agent(p, start),
            Mode::FullWorkflow => self.workflow(p),
            Mode::Curate => self.curate(p),
        }
    }

    fn save_proof(&self, p: &BenchProblem, doc: &str) -> Option<String> {
        if !self.config.write_proofs {
            return None;
        }
        let path = self
            .config
            .out_dir
            .join("proofs")
            .join(format!("{}.lean", file_stem_for(&p.id)));
        write_atomic(&path, doc.as_bytes())
            .err()
            .map(|e| format!("cannot save proof: {e}"))
    }

    fn agent(&self, p: &BenchProblem, start: Instant) -> ProblemRecord {
        let (n, m) = self.config.light_inference;
        let mut input = p.input();
        input.nl_proof = None;
        let li = match run_light_inference(&input, self.roles.lean_prover.as_ref(), self.env, n, m) {
            Ok(li) => li,
            Err(e) => return ProblemRecord::failed(&p.id, e.to_string()),
        };
        let secs = start.elapsed().as_secs_f64();
        let mut error = None;
        if let Some(doc) = li.best.as_ref().and_then(|t| t.final_proof.as_deref()) {
            error = self.save_proof(p, doc);
        } else if li.all.iter().all(|t| t.outcome == Outcome::BackendError) {
            error = li.all.iter().find_map(|t| t.error.clone());
        }
        ProblemRecord {
            id: p.id.clone(),
            solved: li.solved(),
            solve_seconds: li.solved().then_some(secs),
            trajectories_used: li.all.len(),
            restarts_used: 0,
            error,
            curation: None,
        }
    }

    fn workflow(&self, p: &BenchProblem) -> ProblemRecord {
        let r = match run_workflow(&p.input(), self.roles, &self.config.workflow, self.env) {
            Ok(r) => r,
            Err(e) => return ProblemRecord::failed(&p.id, e.to_string()),
        };
        let mut error = r.error.clone();
        if let Some(doc) = &r.final_document {
            error = error.or(self.save_proof(p, doc));
        }
        let tree_path = self
            .config
            .out_dir
            .join("trees")
            .join(format!("{}.json", file_stem_for(&p.id)));
        let trees = serde_json::json!({"earlier_passes": r.earlier_passes, "last": r.tree});
        if let Err(e) = write_atomic(&tree_path, trees.to_string().as_bytes()) {
            error.get_or_insert(format!("cannot save search tree: {e}"));
        }
        ProblemRecord {
            id: p.id.clone(),
            solved: r.solved,
            solve_seconds: r.solved.then_some(r.elapsed_s),
            trajectories_used: r.trajectories_used,
            restarts_used: r.restarts_used,
            error,
            curation: None,
        }
    }

    fn curate(&self, p: &BenchProblem) -> ProblemRecord {
        let mut cand = CandidateProblem::new(p.id.clone(), p.header());
        cand.source_tag = self.set.name.clone();
        if p.nl_proof.is_some() {
            cand.nl_proof = p.nl_proof.clone();
            cand.prompt_variants = BTreeSet::from([PromptVariant::Direct, PromptVariant::SketchConditioned]);
        }
        let start = Instant::now();
        let rec = match evaluate_candidate(
            &cand,
            self.roles.lean_prover.as_ref(),
            self.env,
            self.config.light_inference,
        ) {
            Ok(r) => r,
            Err(e) => return ProblemRecord::failed(&p.id, e.to_string()),
        };
        let d = apply_rules(&rec);
        let solved = rec.per_variant.values().any(|&c| c > 0);
        ProblemRecord {
            id: p.id.clone(),
            solved,
            solve_seconds: solved.then(|| start.elapsed().as_secs_f64()),
            trajectories_used: 0,
            restarts_used: 0,
            error: (!rec.errors.is_empty()).then(|| rec.errors.join("; ")),
            curation: Some(DecisionLogEntry {
                problem_id: p.id.clone(),
                action: Some(d.action),
                reason: Some(d.reason),
                counts: rec.per_variant,
                error: None,
            }),
        }
    }
}

/// Runs every problem of `set` and appends one record per problem to
/// `results.jsonl` in the output directory as soon as it finishes. With
/// `resume`, problems already recorded there are skipped.
pub fn run_benchmark(
    set: &ProblemSet,
    config: &RunConfig,
    roles: &AgentRoles,
    env: &ProverEnv,
) -> Result<RunResult, BenchError> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join(RESULTS_FILE);
    let header = ResultsHeader {
        schema: RESULTS_SCHEMA.into(),
        version: RESULTS_VERSION,
        problem_set: set.name.clone(),
        mode: config.mode,
        lean_version: set.lean_version_tag.clone(),
    };
    let mut done: BTreeMap<String, ProblemRecord> = BTreeMap::new();
    if config.resume && path.exists() {
        let (old_header, old) = read_results(&path)?;
        if let Some(h) = &old_header {
            if h.problem_set != header.problem_set || h.mode != header.mode {
                return Err(BenchError::ResumeMismatch {
                    path,
                    message: format!("recorded {} / {:?}", h.problem_set, h.mode),
                });
            }
        }
        let ids: HashSet<&str> = set.problems.iter().map(|p| p.id.as_str()).collect();
        done = old
            .into_iter()
            .filter(|r| ids.contains(r.id.as_str()))
            .map(|r| (r.id.clone(), r))
            .collect();
    }
    // Rewrite the log so a torn line from a crash never precedes new records.
    let mut body = serde_json::to_string(&header).expect("header serializes") + "\n";
    for r in set.problems.iter().filter_map(|p| done.get(&p.id)) {
        body += &(serde_json::to_string(r).expect("record serializes") + "\n");
    }
    write_atomic(&path, body.as_bytes())?;
    let writer = Mutex::new(std::fs::OpenOptions::new().append(true).open(&path)?);

    let todo: Vec<&BenchProblem> = set.problems.iter().filter(|p| !done.contains_key(&p.id)).collect();
    let dispatch = Dispatch { set, config, roles, env };
    let next = AtomicUsize::new(0);
    let fresh: Mutex<BTreeMap<String, ProblemRecord>> = Mutex::new(BTreeMap::new());
    let write_error: Mutex<Option<std::io::Error>> = Mutex::new(None);
    std::thread::scope(|s| {
        for _ in 0..config.workers.min(todo.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(p) = todo.get(i) else { break };
                let record = dispatch.run(p);
                let line = serde_json::to_string(&record).expect("record serializes");
                {
                    let mut f = writer.lock().expect("writer lock");
                    if let Err(e) = writeln!(f, "{line}").and_then(|_| f.flush()) {
                        write_error.lock().expect("error lock").get_or_insert(e);
                    }
                }
                fresh.lock().expect("records lock").insert(record.id.clone(), record);
            });
        }
    });
    if let Some(e) = write_error.into_inner().expect("error lock") {
        return Err(e.into());
    }
    let resumed: Vec<String> = set
        .problems
        .iter()
        .filter(|p| done.contains_key(&p.id))
        .map(|p| p.id.clone())
        .collect();
    let mut fresh = fresh.into_inner().expect("records lock");
    let records: Vec<ProblemRecord> = set
        .problems
        .iter()
        .filter_map(|p| done.remove(&p.id).or_else(|| fresh.remove(&p.id)))
        .collect();
    let metrics = compute_metrics(&records);
    Ok(RunResult {
        records,
        metrics,
        resumed,
    })
}

/// Convenience wrapper with one backend for every role.
pub fn run_benchmark_uniform(
    set: &ProblemSet,
    config: &RunConfig,
    backend: Arc<dyn AgentBackend>,
    env: &ProverEnv,
) -> Result<RunResult, BenchError> {
    run_benchmark(set, config, &AgentRoles::uniform(backend), env)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub solved_count: usize,
    pub total: usize,
    pub solve_rate: f64,
    /// Solved problems by wall-clock hour, counting partial hours as whole.
    pub hour_histogram: BTreeMap<u64, usize>,
}

/// Hour bucket of a solve time: `ceil(seconds / 3600)`, at least 1.
pub fn hour_bucket(seconds: f64) -> u64 {
    ((seconds.max(0.0) / 3600.0).ceil() as u64).max(1)
}

pub fn compute_metrics(records: &[ProblemRecord]) -> Metrics {
    let solved: Vec<&ProblemRecord> = records.iter().filter(|r| r.solved).collect();
    let mut hour_histogram = BTreeMap::new();
    for r in &solved {
        *hour_histogram.entry(hour_bucket(r.solve_seconds.unwrap_or(0.0))).or_insert(0) += 1;
    }
    let total = records.len();
    Metrics {
        solved_count: solved.len(),
        total,
        solve_rate: if total == 0 { 0.0 } else { solved.len() as f64 / total as f64 },
        hour_histogram,
    }
}

/// `x` rounded to `digits` significant figures, without exponent notation.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.prec$}", prec = digits.saturating_sub(1));
    }
    let magnitude = x.abs().log10().floor() as i64;
    let mut decimals = digits as i64 - 1 - magnitude;
    // Rounding can carry into a new leading digit (99.96 -> 100.0).
    let rounded: f64 = format!("{x:.prec$}", prec = decimals.max(0) as usize).parse().unwrap_or(x);
    if rounded != 0.0 && rounded.abs().log10().floor() as i64 > magnitude {
        decimals -= 1;
    }
    format!("{x:.prec$}", prec = decimals.max(0) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format '{other}'")),
        }
    }
}

pub fn emit_report(metrics: &Metrics, format: ReportFormat) -> String {
    let pct = format_sig(metrics.solve_rate * 100.0, 3);
    match format {
        ReportFormat::Text => {
            let mut s = format!("solved {}/{} ({pct}%)\n", metrics.solved_count, metrics.total);
            for (h, c) in &metrics.hour_histogram {
                let _ = writeln!(s, "  <= {h}h: {c}");
            }
            s
        }
        ReportFormat::Json => {
            let hist: BTreeMap<String, usize> =
                metrics.hour_histogram.iter().map(|(h, c)| (h.to_string(), *c)).collect();
            serde_json::to_string_pretty(&serde_json::json!({
                "solved_count": metrics.solved_count,
                "total": metrics.total,
                "solve_rate": metrics.solve_rate,
                "solve_rate_percent": pct,
                "hour_histogram": hist,
            }))
            .expect("report serializes")
                + "\n"
        }
        ReportFormat::Csv => {
            let mut s = String::from("hour,count\n");
            for (h, c) in &metrics.hour_histogram {
                let _ = writeln!(s, "{h},{c}");
            }
            s
        }
    }
}
