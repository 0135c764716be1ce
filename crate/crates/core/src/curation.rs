//! RL dataset curation: evaluate candidates under light inference, keep the
//! ones of useful difficulty, and label trajectory rewards.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_light_inference, AgentBackend, Outcome, ProblemInput, PromptVariant, ProverEnv, Trajectory};
use crate::verifier::{StatementHeader, VerifierConfig, VerifierSession};

/// More solves than this in any variant makes a problem too easy.
pub const TOO_EASY_ABOVE: usize = 3;

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("corpus line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("duplicate problem id '{0}'")]
    DuplicateId(String),
    #[error("problem '{id}': {message}")]
    Problem { id: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateProblem {
    pub id: String,
    pub header: StatementHeader,
    #[serde(default = "direct_only")]
    pub prompt_variants: BTreeSet<PromptVariant>,
    #[serde(default)]
    pub source_tag: String,
    /// Informal proof for the sketch-conditioned variant.
    #[serde(default)]
    pub nl_proof: Option<String>,
    /// Prior-attempt summary for the summary-conditioned variant.
    #[serde(default)]
    pub summary: Option<String>,
}

fn direct_only() -> BTreeSet<PromptVariant> {
    BTreeSet::from([PromptVariant::Direct])
}

impl CandidateProblem {
    pub fn new(id: impl Into<String>, header: StatementHeader) -> Self {
        CandidateProblem {
            id: id.into(),
            header,
            prompt_variants: direct_only(),
            source_tag: String::new(),
            nl_proof: None,
            summary: None,
        }
    }

    /// Prover input for one prompt variant.
    pub fn input(&self, variant: PromptVariant) -> Result<ProblemInput, String> {
        let mut p = ProblemInput::new(self.id.clone(), self.header.clone());
        match variant {
            PromptVariant::Direct => {}
            PromptVariant::SketchConditioned => {
                p.nl_proof = Some(self.nl_proof.clone().ok_or("sketch-conditioned variant needs nl_proof")?);
            }
            PromptVariant::SummaryConditioned => {
                p.summary = Some(self.summary.clone().ok_or("summary-conditioned variant needs summary")?);
            }
        }
        Ok(p)
    }
}

/// Reads a JSON-lines corpus. Blank lines are skipped.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<CandidateProblem>, CurationError> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

pub fn parse_corpus(text: &str) -> Result<Vec<CandidateProblem>, CurationError> {
    let mut out: Vec<CandidateProblem> = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: CandidateProblem = serde_json::from_str(line).map_err(|e| CurationError::Format {
            line: i + 1,
            message: e.to_string(),
        })?;
        if !p.prompt_variants.contains(&PromptVariant::Direct) {
            return Err(CurationError::Format {
                line: i + 1,
                message: "prompt_variants must include Direct".into(),
            });
        }
        if !seen.insert(p.id.clone()) {
            return Err(CurationError::DuplicateId(p.id));
        }
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub problem_id: String,
    /// Chains (out of N) that solved, per variant.
    pub per_variant: BTreeMap<PromptVariant, usize>,
    pub budget: (usize, usize),
    /// Backend failures met while evaluating; failed chains count as
    /// unsolved.
    #[serde(default)]
    pub errors: Vec<String>,
}

impl EvalRecord {
    pub fn count(&self, v: PromptVariant) -> usize {
        self.per_variant.get(&v).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Keep,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    TooEasy,
    Unsolvable,
    Retained,
    PromotedToDirect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationDecision {
    pub problem_id: String,
    pub action: Action,
    pub kept_variants: BTreeSet<PromptVariant>,
    pub reason: Reason,
}

/// Solve counts of every variant under Pass@N×M.
pub fn evaluate_candidate(
    problem: &CandidateProblem,
    prover: &dyn AgentBackend,
    env: &ProverEnv,
    budget: (usize, usize),
) -> Result<EvalRecord, CurationError> {
    let mut per_variant = BTreeMap::new();
    let mut errors = Vec::new();
    for &v in &problem.prompt_variants {
        let input = problem.input(v).map_err(|message| CurationError::Problem {
            id: problem.id.clone(),
            message,
        })?;
        let li = run_light_inference(&input, prover, env, budget.0, budget.1).map_err(|e| CurationError::Problem {
            id: problem.id.clone(),
            message: e.to_string(),
        })?;
        errors.extend(
            li.all
                .iter()
                .filter(|t| t.outcome == Outcome::BackendError)
                .filter_map(|t| t.error.as_ref().map(|e| format!("{v:?} chain {}: {e}", t.chain))),
        );
        per_variant.insert(v, li.solving_chains());
    }
    Ok(EvalRecord {
        problem_id: problem.id.clone(),
        per_variant,
        budget,
        errors,
    })
}

/// Keep/drop decision for one evaluated problem.
pub fn apply_rules(record: &EvalRecord) -> CurationDecision {
    let decision = |action, kept_variants, reason| CurationDecision {
        problem_id: record.problem_id.clone(),
        action,
        kept_variants,
        reason,
    };
    if record.per_variant.values().any(|&c| c > TOO_EASY_ABOVE) {
        return decision(Action::Drop, BTreeSet::new(), Reason::TooEasy);
    }
    if record.per_variant.values().all(|&c| c == 0) {
        return decision(Action::Drop, BTreeSet::new(), Reason::Unsolvable);
    }
    if record.count(PromptVariant::Direct) == 0 && record.count(PromptVariant::SummaryConditioned) > 0 {
        return decision(
            Action::Keep,
            BTreeSet::from([PromptVariant::Direct]),
            Reason::PromotedToDirect,
        );
    }
    let kept = record
        .per_variant
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(&v, _)| v)
        .collect();
    decision(Action::Keep, kept, Reason::Retained)
}

/// +1 for a solved trajectory with a proof, -1 otherwise.
pub fn label_reward(trajectory: &Trajectory) -> i8 {
    if trajectory.outcome == Outcome::Solved && trajectory.final_proof.is_some() {
        1
    } else {
        -1
    }
}

/// Re-checks a trajectory's final proof in a fresh session.
pub fn replay_verifies(trajectory: &Trajectory, header: &StatementHeader, config: &VerifierConfig) -> bool {
    let Some(doc) = &trajectory.final_proof else {
        return false;
    };
    let body = doc.strip_prefix(header.prelude().as_str()).unwrap_or(doc);
    VerifierSession::open(header.clone(), config)
        .and_then(|mut s| s.verify_document(body))
        .is_ok_and(|r| r.ok)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionLogEntry {
    pub problem_id: String,
    pub action: Option<Action>,
    pub reason: Option<Reason>,
    pub counts: BTreeMap<PromptVariant, usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationOutput {
    /// Kept problems restricted to their kept variants.
    pub curated: Vec<CandidateProblem>,
    /// One entry per input problem, in corpus order.
    pub log: Vec<DecisionLogEntry>,
    /// How solves were counted.
    pub counting: String,
}

/// Evaluates the corpus with up to `workers` problems at a time. Problems
/// that fail to evaluate are logged and skipped. With `log_path`, log entries
/// are appended as JSON lines in corpus order.
pub fn run_curation(
    corpus: &[CandidateProblem],
    prover: &dyn AgentBackend,
    env: &ProverEnv,
    budget: (usize, usize),
    workers: usize,
    log_path: Option<&Path>,
) -> Result<CurationOutput, CurationError> {
    let next = AtomicUsize::new(0);
    let results: Mutex<BTreeMap<usize, Result<EvalRecord, CurationError>>> = Mutex::new(BTreeMap::new());
    std::thread::scope(|s| {
        for _ in 0..workers.max(1).min(corpus.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(p) = corpus.get(i) else { break };
                let r = evaluate_candidate(p, prover, env, budget);
                results.lock().expect("results").insert(i, r);
            });
        }
    });
    let mut log_file = match log_path {
        Some(p) => Some(std::fs::OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let mut out = CurationOutput {
        curated: Vec::new(),
        log: Vec::new(),
        counting: format!("solves counted per variant over {} chains; a chain counts once", budget.0),
    };
    for (i, r) in results.into_inner().expect("results") {
        let p = &corpus[i];
        let entry = match r {
            Ok(rec) => {
                let d = apply_rules(&rec);
                if d.action == Action::Keep {
                    let mut kept = p.clone();
                    kept.prompt_variants = d.kept_variants.clone();
                    out.curated.push(kept);
                }
                DecisionLogEntry {
                    problem_id: p.id.clone(),
                    action: Some(d.action),
                    reason: Some(d.reason),
                    counts: rec.per_variant,
                    error: (!rec.errors.is_empty()).then(|| rec.errors.join("; ")),
                }
            }
            Err(e) => DecisionLogEntry {
                problem_id: p.id.clone(),
                action: None,
                reason: None,
                counts: BTreeMap::new(),
                error: Some(e.to_string()),
            },
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&entry).expect("log entry serializes"))?;
        }
        out.log.push(entry);
    }
    Ok(out)
}
