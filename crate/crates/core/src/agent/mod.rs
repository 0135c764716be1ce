//! The multi-turn prover loop, self-summarization and the Pass@N×M
//! light-inference scheduler.

pub mod backend;
pub mod scripted;
pub mod tokens;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lean_text::split_declarations;
use crate::prompts::{self, render};
use crate::tools::{parse_tool_calls, ParsedBlock, ToolCall, ToolHub, ToolKind, ToolStatus};
use crate::verifier::{StatementHeader, VerifierConfig, VerifierError, VerifierSession};
pub use backend::{AgentBackend, BackendError, ChatMessage, ChatRole, HttpChatBackend, RetryPolicy};
pub use scripted::{Script, ScriptRule, ScriptedBackend, ScriptedCall};
pub use tokens::{count_tokens, DefaultTokenizer, ScaledTokenizer, Tokenizer};

pub const DEFAULT_MAX_TOKENS: usize = 65_536;
pub const DEFAULT_MAX_TOOL_CALLS: usize = 28;
pub const DEFAULT_SUMMARY_CAP: usize = 2048;

const NUDGE: &str = "No tool call was found in your last message. Call verify_lemma or verify_final to make progress.";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryBudget {
    pub max_tokens: usize,
    pub max_tool_calls: usize,
    /// Seconds per verifier call.
    pub per_call_timeout_s: f64,
}

impl Default for TrajectoryBudget {
    fn default() -> Self {
        TrajectoryBudget {
            max_tokens: DEFAULT_MAX_TOKENS,
            max_tool_calls: DEFAULT_MAX_TOOL_CALLS,
            per_call_timeout_s: 120.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptVariant {
    Direct,
    SketchConditioned,
    SummaryConditioned,
}

/// What a single trajectory is asked to prove.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInput {
    pub id: String,
    pub header: StatementHeader,
    #[serde(default)]
    pub nl_proof: Option<String>,
    #[serde(default)]
    pub summary: Option<String>,
}

impl ProblemInput {
    pub fn new(id: impl Into<String>, header: StatementHeader) -> Self {
        ProblemInput {
            id: id.into(),
            header,
            nl_proof: None,
            summary: None,
        }
    }

    /// The prompt format implied by the optional inputs.
    pub fn variant(&self) -> PromptVariant {
        if self.summary.as_deref().is_some_and(|s| !s.is_empty()) {
            PromptVariant::SummaryConditioned
        } else if self.nl_proof.as_deref().is_some_and(|s| !s.is_empty()) {
            PromptVariant::SketchConditioned
        } else {
            PromptVariant::Direct
        }
    }

    pub fn prompt(&self, budget: &TrajectoryBudget) -> String {
        let max_calls = budget.max_tool_calls.to_string();
        let max_tokens = budget.max_tokens.to_string();
        let guide = render(
            prompts::TOOL_GUIDE,
            &[("max_tool_calls", &max_calls), ("max_tokens", &max_tokens)],
        )
        .expect("tool guide template");
        let stmt = self.header.goal_statement.trim();
        let (template, extra) = match self.variant() {
            PromptVariant::Direct => (prompts::PROVER_DIRECT, ("", "")),
            PromptVariant::SketchConditioned => {
                (prompts::PROVER_SKETCH, ("nl_proof", self.nl_proof.as_deref().unwrap_or("")))
            }
            PromptVariant::SummaryConditioned => {
                (prompts::PROVER_SUMMARY, ("summary", self.summary.as_deref().unwrap_or("")))
            }
        };
        let mut vars = vec![("formal_statement", stmt), ("tool_guide", guide.as_str())];
        if !extra.0.is_empty() {
            vars.push(extra);
        }
        render(template, &vars).expect("prover template")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TurnRole {
    System,
    Agent,
    ToolResultBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: TurnRole,
    pub text: String,
    pub token_count: usize,
    #[serde(default)]
    pub calls: Vec<ToolCall>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Solved,
    BudgetExhausted,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem_id: String,
    pub variant: PromptVariant,
    pub chain: usize,
    pub round: usize,
    /// Summary this trajectory was conditioned on.
    pub summary_in: Option<String>,
    pub turns: Vec<Turn>,
    pub tokens_used: usize,
    pub tool_calls_used: usize,
    pub outcome: Outcome,
    pub final_proof: Option<String>,
    /// The accepted `verify_final` source on its own.
    pub final_source: Option<String>,
    /// Sources of lemmas proved during the trajectory, in order.
    pub proved_lemmas: Vec<String>,
    pub error: Option<String>,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub source_trajectory: (usize, usize),
    pub text: String,
    pub token_count: usize,
}

impl Summary {
    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }
}

/// Everything a trajectory needs besides the backend and the problem.
#[derive(Clone)]
pub struct ProverEnv {
    pub verifier: VerifierConfig,
    pub hub: ToolHub,
    pub tokenizer: Arc<dyn Tokenizer>,
    pub budget: TrajectoryBudget,
    pub retry: RetryPolicy,
    pub summary_cap: usize,
    /// Sources submitted to every new session before the agent runs, one
    /// declaration at a time.
    pub preload: Vec<String>,
}

impl Default for ProverEnv {
    fn default() -> Self {
        ProverEnv {
            verifier: VerifierConfig::toy(),
            hub: ToolHub::default(),
            tokenizer: Arc::new(DefaultTokenizer),
            budget: TrajectoryBudget::default(),
            retry: RetryPolicy::default(),
            summary_cap: DEFAULT_SUMMARY_CAP,
            preload: Vec::new(),
        }
    }
}

impl std::fmt::Debug for ProverEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ProverEnv")
            .field("verifier", &self.verifier)
            .field("hub", &self.hub)
            .field("budget", &self.budget)
            .field("retry", &self.retry)
            .field("summary_cap", &self.summary_cap)
            .field("preload", &self.preload.len())
            .finish()
    }
}

impl ProverEnv {
    /// A fresh session for `header` with the preloaded lemmas cached.
    pub fn open_session(&self, header: &StatementHeader) -> Result<VerifierSession, VerifierError> {
        let mut cfg = self.verifier.clone();
        cfg.timeout_s = cfg.timeout_s.min(self.budget.per_call_timeout_s);
        let mut session = VerifierSession::open(header.clone(), &cfg)?;
        for src in &self.preload {
            for decl in split_declarations(src) {
                let r = session.submit_lemma(&decl.text)?;
                if !r.ok {
                    return Err(VerifierError::InvalidSource(format!(
                        "preloaded lemma failed to verify: {}",
                        r.render()
                    )));
                }
            }
        }
        Ok(session)
    }
}

fn turn_to_message(t: &Turn) -> ChatMessage {
    match t.role {
        TurnRole::Agent => ChatMessage::assistant(t.text.clone()),
        TurnRole::System | TurnRole::ToolResultBlock => ChatMessage::user(t.text.clone()),
    }
}

struct Recorder<'a> {
    tokenizer: &'a dyn Tokenizer,
    max_tokens: usize,
    turns: Vec<Turn>,
    messages: Vec<ChatMessage>,
    tokens_used: usize,
}

impl Recorder<'_> {
    /// Appends the turn if it fits the token budget.
    fn push(&mut self, role: TurnRole, text: String, calls: Vec<ToolCall>) -> bool {
        let n = self.tokenizer.count(&text);
        if self.tokens_used + n > self.max_tokens {
            return false;
        }
        self.tokens_used += n;
        let turn = Turn {
            role,
            text,
            token_count: n,
            calls,
        };
        self.messages.push(turn_to_message(&turn));
        self.turns.push(turn);
        true
    }
}

/// Runs one trajectory in `session` until a final proof verifies, the
/// budget runs out or the backend fails.
pub fn run_trajectory(
    problem: &ProblemInput,
    backend: &dyn AgentBackend,
    session: &mut VerifierSession,
    env: &ProverEnv,
) -> Trajectory {
    let start = Instant::now();
    let budget = env.budget;
    let mut rec = Recorder {
        tokenizer: env.tokenizer.as_ref(),
        max_tokens: budget.max_tokens,
        turns: Vec::new(),
        messages: Vec::new(),
        tokens_used: 0,
    };
    let mut tool_calls_used = 0;
    let mut final_proof = None;
    let mut error = None;
    let initial_cache = session.cache().len();
    let outcome = 'run: {
        if !rec.push(TurnRole::System, problem.prompt(&budget), Vec::new()) {
            break 'run Outcome::BudgetExhausted;
        }
        loop {
            let reply = match env.retry.generate(backend, &rec.messages) {
                Ok(r) => r,
                Err(e) => {
                    error = Some(e.to_string());
                    break 'run Outcome::BackendError;
                }
            };
            let blocks = parse_tool_calls(&reply);
            let calls: Vec<ToolCall> = blocks
                .iter()
                .filter_map(|b| match b {
                    ParsedBlock::Call(c) => Some(c.clone()),
                    ParsedBlock::Malformed { .. } => None,
                })
                .collect();
            if !calls.is_empty() && tool_calls_used >= budget.max_tool_calls {
                break 'run Outcome::BudgetExhausted;
            }
            if !rec.push(TurnRole::Agent, reply, calls) {
                break 'run Outcome::BudgetExhausted;
            }
            if blocks.is_empty() {
                if !rec.push(TurnRole::System, NUDGE.to_string(), Vec::new()) {
                    break 'run Outcome::BudgetExhausted;
                }
                continue;
            }
            for block in blocks {
                let (result, solved) = match block {
                    ParsedBlock::Malformed { .. } => (block.error_result().expect("malformed"), false),
                    ParsedBlock::Call(call) => {
                        if tool_calls_used >= budget.max_tool_calls {
                            break 'run Outcome::BudgetExhausted;
                        }
                        tool_calls_used += 1;
                        let r = env.hub.dispatch(&call, session);
                        let solved = call.tool == ToolKind::VerifyFinal && r.status == ToolStatus::Ok;
                        (r, solved)
                    }
                };
                if solved {
                    final_proof = session.assembled_document();
                }
                if !rec.push(TurnRole::ToolResultBlock, result.to_block(), Vec::new()) && !solved {
                    break 'run Outcome::BudgetExhausted;
                }
                if solved {
                    break 'run Outcome::Solved;
                }
            }
        }
    };
    Trajectory {
        problem_id: problem.id.clone(),
        variant: problem.variant(),
        chain: 0,
        round: 1,
        summary_in: problem.summary.clone(),
        turns: rec.turns,
        tokens_used: rec.tokens_used,
        tool_calls_used,
        outcome,
        final_proof,
        final_source: session.final_source().map(str::to_string),
        proved_lemmas: session.cache()[initial_cache..]
            .iter()
            .map(|r| r.source.clone())
            .collect(),
        error,
        elapsed_s: start.elapsed().as_secs_f64(),
    }
}

fn strategies(t: &Trajectory) -> Vec<String> {
    t.turns
        .iter()
        .filter(|turn| turn.role == TurnRole::Agent)
        .filter_map(|turn| {
            let prose: String = turn
                .text
                .split("<<tool>>")
                .next()
                .unwrap_or("")
                .lines()
                .map(str::trim)
                .find(|l| !l.is_empty())?
                .chars()
                .take(200)
                .collect();
            Some(prose)
        })
        .collect()
}

fn last_errors(t: &Trajectory, n: usize) -> Vec<String> {
    let errs: Vec<String> = t
        .turns
        .iter()
        .filter(|turn| turn.role == TurnRole::ToolResultBlock && !turn.text.contains("status: ok"))
        .map(|turn| turn.text.chars().take(600).collect())
        .collect();
    errs[errs.len().saturating_sub(n)..].to_vec()
}

/// The condensed transcript a summary is generated from.
pub fn condense(problem: &ProblemInput, t: &Trajectory) -> String {
    let bullet = |items: &[String]| {
        if items.is_empty() {
            "(none)".to_string()
        } else {
            items.iter().map(|s| format!("- {s}")).collect::<Vec<_>>().join("\n")
        }
    };
    render(
        prompts::SUMMARIZE,
        &[
            ("formal_statement", problem.header.goal_statement.trim()),
            ("proved", &bullet(&t.proved_lemmas)),
            ("errors", &bullet(&last_errors(t, 3))),
            ("strategies", &bullet(&strategies(t))),
        ],
    )
    .expect("summarize template")
}

/// Condenses an unfinished trajectory with one backend call. A transport
/// failure yields an empty summary.
pub fn summarize(
    problem: &ProblemInput,
    trajectory: &Trajectory,
    backend: &dyn AgentBackend,
    env: &ProverEnv,
) -> Result<Summary, AgentError> {
    if trajectory.outcome == Outcome::Solved {
        return Err(AgentError::Usage("cannot summarize a solved trajectory".into()));
    }
    if trajectory.turns.is_empty() {
        return Err(AgentError::Usage("cannot summarize an empty trajectory".into()));
    }
    let id = (trajectory.chain, trajectory.round);
    let condensed = condense(problem, trajectory);
    let text = match env.retry.generate(backend, &[ChatMessage::user(condensed.clone())]) {
        Ok(t) if !t.trim().is_empty() => t,
        Ok(_) => condensed,
        Err(_) => {
            return Ok(Summary {
                source_trajectory: id,
                text: String::new(),
                token_count: 0,
            })
        }
    };
    let text = tokens::truncate_to_tokens(env.tokenizer.as_ref(), text.trim(), env.summary_cap).to_string();
    Ok(Summary {
        source_trajectory: id,
        token_count: env.tokenizer.count(&text),
        text,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightInference {
    /// First solved trajectory by completion time.
    pub best: Option<Trajectory>,
    /// All trajectories ordered by (chain, round).
    pub all: Vec<Trajectory>,
}

impl LightInference {
    pub fn solved(&self) -> bool {
        self.best.is_some()
    }

    /// Number of chains that solved.
    pub fn solving_chains(&self) -> usize {
        self.all.iter().filter(|t| t.outcome == Outcome::Solved).count()
    }
}

fn failed_open(problem: &ProblemInput, chain: usize, round: usize, e: &VerifierError) -> Trajectory {
    Trajectory {
        problem_id: problem.id.clone(),
        variant: problem.variant(),
        chain,
        round,
        summary_in: problem.summary.clone(),
        turns: Vec::new(),
        tokens_used: 0,
        tool_calls_used: 0,
        outcome: Outcome::BackendError,
        final_proof: None,
        final_source: None,
        proved_lemmas: Vec::new(),
        error: Some(e.to_string()),
        elapsed_s: 0.0,
    }
}

/// Pass@N×M: `n` independent chains run concurrently; each chain runs up to
/// `m` trajectories, each conditioned on the summary of the previous one,
/// and stops at its first solve.
pub fn run_light_inference(
    problem: &ProblemInput,
    backend: &dyn AgentBackend,
    env: &ProverEnv,
    n: usize,
    m: usize,
) -> Result<LightInference, AgentError> {
    if n == 0 || m == 0 {
        return Err(AgentError::Usage("N and M must be at least 1".into()));
    }
    let clock = AtomicUsize::new(0);
    let finished: Mutex<Vec<(usize, Trajectory)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for chain in 0..n {
            let clock = &clock;
            let finished = &finished;
            scope.spawn(move || {
                let mut input = problem.clone();
                for round in 1..=m {
                    let mut t = match env.open_session(&input.header) {
                        Ok(mut session) => run_trajectory(&input, backend, &mut session, env),
                        Err(e) => failed_open(&input, chain, round, &e),
                    };
                    t.chain = chain;
                    t.round = round;
                    let done = t.outcome == Outcome::Solved;
                    let summary = if !done && round < m && !t.turns.is_empty() {
                        summarize(&input, &t, backend, env).ok().map(|s| s.text)
                    } else {
                        None
                    };
                    let seq = clock.fetch_add(1, Ordering::SeqCst);
                    finished.lock().expect("results lock").push((seq, t));
                    if done {
                        break;
                    }
                    input.summary = Some(summary.unwrap_or_default());
                }
            });
        }
    });
    let mut done = finished.into_inner().expect("results lock");
    let best = done
        .iter()
        .filter(|(_, t)| t.outcome == Outcome::Solved)
        .min_by_key(|(seq, _)| *seq)
        .map(|(_, t)| t.clone());
    done.sort_by_key(|(_, t)| (t.chain, t.round));
    Ok(LightInference {
        best,
        all: done.into_iter().map(|(_, t)| t).collect(),
    })
}
