//! Hierarchical proof search: informal proof, lemma sketch, per-lemma
//! proving, recursive decomposition, refinement on disproof and a restart
//! seeded with the lemmas proved so far.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_light_inference, AgentBackend, ChatMessage, Outcome, ProblemInput, ProverEnv};
use crate::lean_text::{
    canonical_tokens, contains_token, decl_parts, first_lean_block, mentions_identifier, rename_identifiers,
    split_declarations,
};
use crate::prompts::{self, render};
use crate::sketch::{detect_delegation, judge_lemmas, parse_sketch, structural_check, Correctness, Sketch};
use crate::verifier::toy::{decide, parse_decls, Budget};
use crate::verifier::{BackendKind, StatementHeader, VerifierError, VerifierSession};

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("invalid workflow configuration: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("wall clock limit exceeded")]
    WallClockExceeded,
    #[error("sketch rejected: {0}")]
    SketchRejected(String),
    #[error("assembled proof failed verification: {0}")]
    AssemblyVerificationFailed(String),
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error("snapshot write failed: {0}")]
    Snapshot(#[from] std::io::Error),
}

/// The four model roles. Any of them may share a backend.
#[derive(Clone)]
pub struct AgentRoles {
    pub nl_prover: Arc<dyn AgentBackend>,
    pub sketcher: Arc<dyn AgentBackend>,
    pub lean_prover: Arc<dyn AgentBackend>,
    pub judge: Arc<dyn AgentBackend>,
}

impl AgentRoles {
    pub fn uniform(backend: Arc<dyn AgentBackend>) -> Self {
        AgentRoles {
            nl_prover: backend.clone(),
            sketcher: backend.clone(),
            lean_prover: backend.clone(),
            judge: backend,
        }
    }
}

impl std::fmt::Debug for AgentRoles {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentRoles")
            .field("nl_prover", &self.nl_prover.name())
            .field("sketcher", &self.sketcher.name())
            .field("lean_prover", &self.lean_prover.name())
            .field("judge", &self.judge.name())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkflowConfig {
    pub max_depth: usize,
    /// Pass@N×M budget per lemma.
    pub lemma_budget: (usize, usize),
    pub parallel_width: usize,
    pub wall_clock_limit_s: Option<f64>,
    pub restart_enabled: bool,
    /// Re-sketches allowed per node after a disproved child.
    pub refine_limit: usize,
    /// Sketch requests per decomposition before giving up.
    pub sketch_attempts: usize,
    /// Screen sketch lemmas with the judge before proving them.
    pub judge_lemmas: bool,
    /// Where to write the tree after every transition.
    pub snapshot_path: Option<PathBuf>,
}

impl Default for WorkflowConfig {
    fn default() -> Self {
        WorkflowConfig {
            max_depth: 4,
            lemma_budget: (3, 3),
            parallel_width: 8,
            wall_clock_limit_s: None,
            restart_enabled: true,
            refine_limit: 3,
            sketch_attempts: 3,
            judge_lemmas: true,
            snapshot_path: None,
        }
    }
}

impl WorkflowConfig {
    pub fn validate(&self) -> Result<(), WorkflowError> {
        if self.max_depth == 0 {
            return Err(WorkflowError::Config("max_depth must be at least 1".into()));
        }
        if self.lemma_budget.0 == 0 || self.lemma_budget.1 == 0 {
            return Err(WorkflowError::Config("lemma budget N and M must be at least 1".into()));
        }
        if self.parallel_width == 0 || self.sketch_attempts == 0 {
            return Err(WorkflowError::Config(
                "parallel_width and sketch_attempts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeState {
    Open,
    Proving,
    Proved,
    Disproved,
    Decomposed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub id: usize,
    /// Declaration name the node is proved under.
    pub name: String,
    /// Signature without proof.
    pub statement: String,
    pub depth: usize,
    /// Depth counted across restarts.
    pub cumulative_depth: usize,
    pub state: NodeState,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Own declarations proving the node, set once it is solved.
    pub proof_source: Option<String>,
    pub attempts_used: usize,
    pub elapsed_s: f64,
    /// Accepted sketch, for decomposed nodes.
    pub sketch: Option<String>,
    /// Disproof evidence or failure reason.
    pub note: Option<String>,
    /// Replaced by a refined sketch of the parent.
    pub discarded: bool,
    pub refines_used: usize,
    /// Proof supplied inline by the sketch.
    #[serde(skip)]
    inline_proof: Option<String>,
}

impl SearchNode {
    pub fn is_solved(&self) -> bool {
        self.proof_source.is_some() && matches!(self.state, NodeState::Proved | NodeState::Decomposed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTree {
    pub pass: usize,
    pub nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: usize) -> Option<&SearchNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    fn node_mut(&mut self, id: usize) -> &mut SearchNode {
        self.nodes.iter_mut().find(|n| n.id == id).expect("node id")
    }

    pub fn max_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn max_cumulative_depth(&self) -> usize {
        self.nodes.iter().map(|n| n.cumulative_depth).max().unwrap_or(0)
    }

    pub fn trajectories_used(&self) -> usize {
        self.nodes.iter().map(|n| n.attempts_used).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub name: String,
    pub statement: String,
    /// Declarations proving the entry, given the entries before it.
    pub source: String,
    pub node: usize,
    pub pass: usize,
}

/// Proved lemmas of one problem, in the order they were proved.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ProvenLemmaPool {
    pub entries: Vec<PoolEntry>,
    /// Names of duplicate lemmas mapped to the entry proving them.
    pub aliases: BTreeMap<String, String>,
}

/// Binders and goal as tokens; the declaration name is ignored.
pub fn statement_key(statement: &str) -> Vec<String> {
    let p = decl_parts(statement);
    let mut key = canonical_tokens(&p.binders);
    key.push(":".into());
    key.extend(canonical_tokens(&p.goal));
    key
}

impl ProvenLemmaPool {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn find(&self, statement: &str) -> Option<&PoolEntry> {
        let key = statement_key(statement);
        self.entries.iter().find(|e| statement_key(&e.statement) == key)
    }

    /// Adds an entry unless its statement is already present; returns the
    /// name that proves it.
    pub fn insert(&mut self, entry: PoolEntry) -> String {
        if let Some(e) = self.find(&entry.statement) {
            let name = e.name.clone();
            if name != entry.name {
                self.aliases.insert(entry.name, name.clone());
            }
            return name;
        }
        let name = entry.name.clone();
        self.entries.push(entry);
        name
    }

    pub fn sources(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.source.clone()).collect()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Rewrites references to duplicate lemmas.
    pub fn resolve(&self, text: &str) -> String {
        if self.aliases.is_empty() {
            return text.to_string();
        }
        rename_identifiers(text, &self.aliases)
    }

    /// Entries `text` depends on, directly or through other entries, in
    /// pool order.
    pub fn closure(&self, text: &str) -> Vec<&PoolEntry> {
        let mut needed = vec![false; self.entries.len()];
        let mut frontier = vec![text.to_string()];
        while let Some(t) = frontier.pop() {
            for (i, e) in self.entries.iter().enumerate() {
                if !needed[i] && mentions_identifier(&t, &e.name) {
                    needed[i] = true;
                    frontier.push(e.source.clone());
                }
            }
        }
        self.entries.iter().zip(needed).filter(|(_, n)| *n).map(|(e, _)| e).collect()
    }

    /// The pool as sketcher context.
    pub fn render(&self) -> String {
        if self.entries.is_empty() {
            return String::new();
        }
        let stmts: Vec<&str> = self.entries.iter().map(|e| e.statement.as_str()).collect();
        format!(
            "Already proved lemmas (cite them by name):\n```lean\n{}\n```\n\n",
            stmts.join("\n")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowResult {
    pub problem_id: String,
    pub solved: bool,
    pub final_document: Option<String>,
    /// Tree of the last pass.
    pub tree: SearchTree,
    /// Trees of earlier passes.
    pub earlier_passes: Vec<SearchTree>,
    pub pool: ProvenLemmaPool,
    pub restarts_used: usize,
    pub trajectories_used: usize,
    pub error: Option<String>,
    pub elapsed_s: f64,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    pass: usize,
    nodes: &'a [SearchNode],
    pool: &'a ProvenLemmaPool,
    config: &'a WorkflowConfig,
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().expect("semaphore");
            while *free == 0 {
                free = self.cv.wait(free).expect("semaphore");
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().expect("semaphore") += 1;
        self.cv.notify_one();
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttemptOutcome {
    /// Own declarations of the proof, ending with the lemma itself.
    Proved(String),
    Disproved(String),
    Unresolved(String),
}

enum NodeResult {
    Solved,
    Disproved(String),
    Failed,
}

struct State {
    tree: SearchTree,
    pool: ProvenLemmaPool,
    /// Statements known false, with evidence.
    disproved: BTreeMap<Vec<String>, String>,
    names: BTreeSet<String>,
    next_id: usize,
    snapshot_error: Option<String>,
}

struct Engine<'a> {
    roles: &'a AgentRoles,
    config: &'a WorkflowConfig,
    env: &'a ProverEnv,
    header: &'a StatementHeader,
    root_nl_proof: Option<&'a str>,
    deadline: Option<Instant>,
    permits: &'a Semaphore,
    state: Mutex<State>,
    /// Role backend failures, reported when the problem stays unsolved.
    backend_errors: Mutex<Vec<String>>,
}

fn node(id: usize, name: &str, statement: &str, depth: usize, offset: usize, parent: Option<usize>) -> SearchNode {
    SearchNode {
        id,
        name: name.to_string(),
        statement: statement.to_string(),
        depth,
        cumulative_depth: depth + offset,
        state: NodeState::Open,
        parent,
        children: Vec::new(),
        proof_source: None,
        attempts_used: 0,
        elapsed_s: 0.0,
        sketch: None,
        note: None,
        discarded: false,
        refines_used: 0,
        inline_proof: None,
    }
}

fn lemma_header(root: &StatementHeader, statement: &str) -> StatementHeader {
    let mut h = root.clone();
    h.goal_statement = format!("{statement} := by sorry");
    h
}

/// The declaration's name replaced by `name`.
fn rename_decl(text: &str, name: &str) -> String {
    match decl_parts(text).name {
        Some(old) if old != name => {
            rename_identifiers(text, &BTreeMap::from([(old, name.to_string())]))
        }
        _ => text.to_string(),
    }
}

/// Brute-force disproof of a toy statement.
pub fn toy_disproof(statement: &str) -> Option<String> {
    let decls = parse_decls(&format!("{statement} := by sorry")).ok()?;
    let d = decls.first()?;
    let mut budget = Budget::new(crate::verifier::toy::check::DEFAULT_STEP_LIMIT, None);
    let ev = decide(&d.full_type(), &mut budget).ok()?;
    if ev.holds {
        return None;
    }
    let mut msg = format!("'{}' is false", d.name);
    if !ev.counterexample.is_empty() {
        let cx: Vec<String> = ev.counterexample.iter().map(|(v, x)| format!("{v} := {x}")).collect();
        msg.push_str(&format!(" (counterexample: {})", cx.join(", ")));
    }
    Some(msg)
}

/// Statement of the negation of a lemma, closed over its binders.
pub fn negation_statement(statement: &str, name: &str) -> String {
    let p = decl_parts(statement);
    if p.binders.is_empty() {
        format!("theorem {name} : ¬ ({})", p.goal)
    } else {
        format!("theorem {name} : ¬ (∀ {}, {})", p.binders, p.goal)
    }
}

impl Engine<'_> {
    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("workflow state")
    }

    fn expired(&self) -> bool {
        self.deadline.is_some_and(|d| Instant::now() >= d)
    }

    /// Applies `f` to a node and persists the tree.
    fn update(&self, id: usize, f: impl FnOnce(&mut SearchNode)) {
        let mut st = self.lock();
        f(st.tree.node_mut(id));
        self.persist(&mut st);
    }

    fn persist(&self, st: &mut State) {
        let Some(path) = &self.config.snapshot_path else { return };
        let snap = Snapshot {
            pass: st.tree.pass,
            nodes: &st.tree.nodes,
            pool: &st.pool,
            config: self.config,
        };
        let bytes = serde_json::to_vec_pretty(&snap).expect("snapshot serializes");
        if let Err(e) = write_atomic(path, &bytes) {
            st.snapshot_error = Some(e.to_string());
        }
    }

    fn pool_env(&self) -> ProverEnv {
        let mut env = self.env.clone();
        let st = self.lock();
        env.preload.extend(st.pool.sources());
        env
    }

    fn fail(&self, id: usize, reason: impl Into<String>) -> NodeResult {
        let reason = reason.into();
        self.update(id, |n| {
            n.state = NodeState::Failed;
            n.note = Some(reason);
        });
        NodeResult::Failed
    }

    /// Verifies a node's own declarations against header plus pool and adds
    /// them to the pool.
    fn admit(&self, id: usize, decls: &str) -> Result<(), String> {
        let (name, statement) = {
            let st = self.lock();
            let n = st.tree.node(id).expect("node");
            (n.name.clone(), n.statement.clone())
        };
        let env = self.pool_env();
        let resolved = self.lock().pool.resolve(decls);
        let mut session = env.open_session(self.header).map_err(|e| e.to_string())?;
        for d in split_declarations(&resolved) {
            let r = session.submit_lemma(&d.text).map_err(|e| e.to_string())?;
            if !r.ok {
                return Err(format!("re-verification failed: {}", r.render()));
            }
        }
        let mut st = self.lock();
        let pass = st.tree.pass;
        st.pool.insert(PoolEntry {
            name,
            statement,
            source: resolved.clone(),
            node: id,
            pass,
        });
        let n = st.tree.node_mut(id);
        n.proof_source = Some(resolved);
        self.persist(&mut st);
        Ok(())
    }

    fn solve(&self, id: usize) -> NodeResult {
        let start = Instant::now();
        let out = self.solve_inner(id);
        self.update(id, |n| n.elapsed_s = start.elapsed().as_secs_f64());
        out
    }

    fn solve_inner(&self, id: usize) -> NodeResult {
        if self.expired() {
            return self.fail(id, WorkflowError::WallClockExceeded.to_string());
        }
        let (name, statement, depth, inline) = {
            let st = self.lock();
            let n = st.tree.node(id).expect("node");
            (n.name.clone(), n.statement.clone(), n.depth, n.inline_proof.clone())
        };
        if depth == 0 {
            return self.decompose_and_solve(id);
        }
        {
            let mut st = self.lock();
            let key = statement_key(&statement);
            if let Some(e) = st.pool.find(&statement).cloned() {
                if e.name != name {
                    st.pool.aliases.insert(name.clone(), e.name.clone());
                }
                let n = st.tree.node_mut(id);
                n.state = NodeState::Proved;
                n.proof_source = Some(e.source);
                n.note = Some(format!("reused '{}' from the proved-lemma pool", e.name));
                self.persist(&mut st);
                return NodeResult::Solved;
            }
            if let Some(ev) = st.disproved.get(&key).cloned() {
                let n = st.tree.node_mut(id);
                n.state = NodeState::Disproved;
                n.note = Some(ev.clone());
                self.persist(&mut st);
                return NodeResult::Disproved(ev);
            }
        }
        if let Some(src) = inline {
            if self.admit(id, &rename_decl(&src, &name)).is_ok() {
                self.update(id, |n| n.state = NodeState::Proved);
                return NodeResult::Solved;
            }
        }
        self.update(id, |n| n.state = NodeState::Proving);
        match self.attempt(id) {
            AttemptOutcome::Proved(decls) => match self.admit(id, &decls) {
                Ok(()) => {
                    self.update(id, |n| n.state = NodeState::Proved);
                    NodeResult::Solved
                }
                Err(e) => self.fail(id, e),
            },
            AttemptOutcome::Disproved(ev) => {
                let mut st = self.lock();
                st.disproved.insert(statement_key(&statement), ev.clone());
                let n = st.tree.node_mut(id);
                n.state = NodeState::Disproved;
                n.note = Some(ev.clone());
                self.persist(&mut st);
                NodeResult::Disproved(ev)
            }
            AttemptOutcome::Unresolved(why) => {
                if depth >= self.config.max_depth {
                    return self.fail(id, format!("unresolved at maximum depth {}: {why}", self.config.max_depth));
                }
                self.update(id, |n| n.state = NodeState::Open);
                self.decompose_and_solve(id)
            }
        }
    }

    /// Prove-or-disprove under the lemma budget.
    fn attempt(&self, id: usize) -> AttemptOutcome {
        let (name, statement) = {
            let st = self.lock();
            let n = st.tree.node(id).expect("node");
            (n.name.clone(), n.statement.clone())
        };
        if self.expired() {
            return AttemptOutcome::Unresolved(WorkflowError::WallClockExceeded.to_string());
        }
        let env = self.pool_env();
        let toy = env.verifier.kind == BackendKind::Toy;
        if toy {
            if let Some(ev) = toy_disproof(&statement) {
                return AttemptOutcome::Disproved(ev);
            }
        }
        let (n, m) = self.config.lemma_budget;
        let problem = ProblemInput::new(name.clone(), lemma_header(self.header, &statement));
        let neg_name = format!("{name}_negation");
        let negation = ProblemInput::new(
            neg_name.clone(),
            lemma_header(self.header, &negation_statement(&statement, &neg_name)),
        );
        let prover = self.roles.lean_prover.as_ref();
        let (proof, disproof) = self.permits.run(|| {
            std::thread::scope(|s| {
                let neg = (!toy).then(|| s.spawn(|| run_light_inference(&negation, prover, &env, n, m)));
                let pos = run_light_inference(&problem, prover, &env, n, m);
                (pos, neg.map(|h| h.join().expect("disproof thread panicked")))
            })
        });
        let mut used = 0;
        let mut outcome = AttemptOutcome::Unresolved("light inference found no proof".into());
        if let Some(Ok(d)) = &disproof {
            used += d.all.len();
            if d.solved() {
                outcome = AttemptOutcome::Disproved(format!("'{name}' is false: its negation was proved"));
            }
        }
        match proof {
            Ok(li) => {
                used += li.all.len();
                if li.all.iter().all(|t| t.outcome == Outcome::BackendError) {
                    if let Some(e) = li.all.iter().find_map(|t| t.error.clone()) {
                        self.backend_failed(format!("{}: {e}", prover.name()));
                    }
                }
                if let Some(best) = li.best {
                    outcome = AttemptOutcome::Proved(self.own_decls(id, &name, &best.proved_lemmas, best.final_source.as_deref()));
                }
            }
            Err(e) => outcome = AttemptOutcome::Unresolved(e.to_string()),
        }
        self.update(id, |node| node.attempts_used += used);
        outcome
    }

    /// A trajectory's new declarations with helpers given unique names and
    /// the final one named after the node.
    fn own_decls(&self, id: usize, name: &str, helpers: &[String], final_source: Option<&str>) -> String {
        let mut decls: Vec<String> = helpers.to_vec();
        decls.extend(split_declarations(final_source.unwrap_or("")).into_iter().map(|d| d.text));
        let Some(last) = decls.pop() else {
            return String::new();
        };
        let mut map = BTreeMap::new();
        {
            let mut st = self.lock();
            for d in &decls {
                if let Some(h) = decl_parts(d).name {
                    let fresh = format!("{h}_n{id}");
                    st.names.insert(fresh.clone());
                    map.insert(h, fresh);
                }
            }
        }
        if let Some(old) = decl_parts(&last).name {
            map.insert(old, name.to_string());
        }
        decls.push(last);
        decls
            .iter()
            .map(|d| rename_identifiers(d, &map))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    fn ask(&self, backend: &dyn AgentBackend, prompt: String) -> Result<String, String> {
        self.env
            .retry
            .generate(backend, &[ChatMessage::user(prompt)])
            .map_err(|e| self.backend_failed(format!("{}: {e}", backend.name())))
    }

    fn backend_failed(&self, message: String) -> String {
        self.backend_errors.lock().expect("backend errors").push(message.clone());
        message
    }

    /// Asks for an informal proof and a sketch of the node, re-asking on
    /// structural failures.
    fn sketch_for(&self, id: usize, feedback: &str) -> Result<Sketch, WorkflowError> {
        let (statement, depth) = {
            let st = self.lock();
            let n = st.tree.node(id).expect("node");
            (n.statement.clone(), n.depth)
        };
        let pool_text = self.lock().pool.render();
        let nl_proof = match (depth, self.root_nl_proof) {
            (0, Some(p)) if feedback.is_empty() => p.to_string(),
            _ => {
                let prompt = render(prompts::NL_PROVER, &[("formal_statement", &statement), ("context", &pool_text)])
                    .expect("nl prover template");
                self.ask(self.roles.nl_prover.as_ref(), prompt)
                    .map_err(WorkflowError::SketchRejected)?
            }
        };
        let header = if depth == 0 {
            self.header.clone()
        } else {
            lemma_header(self.header, &statement)
        };
        let mut note = feedback.to_string();
        let mut last_reason = String::from("no sketch produced");
        for _ in 0..self.config.sketch_attempts {
            if self.expired() {
                return Err(WorkflowError::WallClockExceeded);
            }
            let fb = if note.is_empty() {
                String::new()
            } else {
                format!("Feedback on the previous sketch:\n{note}\n")
            };
            let prompt = render(
                prompts::SKETCHER,
                &[
                    ("formal_statement", &statement),
                    ("nl_proof", &nl_proof),
                    ("pool", &pool_text),
                    ("feedback", &fb),
                ],
            )
            .expect("sketcher template");
            let reply = self
                .ask(self.roles.sketcher.as_ref(), prompt)
                .map_err(WorkflowError::SketchRejected)?;
            let text = self.avoid_pool_names(first_lean_block(&reply).unwrap_or(&reply), id);
            let sketch = parse_sketch(&text);
            let reason = if !sketch.is_well_formed() {
                Some(sketch.diagnostics.join("; "))
            } else if contains_token(&sketch.main_body, "sorry") {
                Some("the main proof must not use sorry".to_string())
            } else if detect_delegation(&sketch) {
                Some("the main proof only delegates to a lemma with the same goal".to_string())
            } else {
                let env = self.pool_env();
                let mut session = env.open_session(&header)?;
                match structural_check(&sketch, &mut session)? {
                    0 => None,
                    _ => Some("the sketch does not check with its lemmas admitted".to_string()),
                }
            };
            match reason {
                None => return Ok(sketch),
                Some(r) => {
                    last_reason = r.clone();
                    note = if feedback.is_empty() { r } else { format!("{feedback}\n{r}") };
                }
            }
        }
        Err(WorkflowError::SketchRejected(last_reason))
    }

    // Sketch lemmas are checked with the pool preloaded, so a lemma reusing a
    // pool name would clash with it.
    fn avoid_pool_names(&self, text: &str, id: usize) -> String {
        let taken: BTreeSet<String> = {
            let st = self.lock();
            st.pool
                .sources()
                .iter()
                .flat_map(|s| split_declarations(s))
                .filter_map(|d| d.name)
                .chain(st.pool.aliases.keys().cloned())
                .collect()
        };
        let map: BTreeMap<String, String> = split_declarations(text)
            .into_iter()
            .filter_map(|d| d.name)
            .filter(|n| taken.contains(n))
            .map(|n| (n.clone(), format!("{n}_k{id}")))
            .collect();
        if map.is_empty() {
            text.to_string()
        } else {
            rename_identifiers(text, &map)
        }
    }

    /// Creates child nodes for a sketch's lemmas; returns the sketch with
    /// lemmas renamed to their node names.
    fn expand(&self, id: usize, sketch: &Sketch) -> (Vec<usize>, String) {
        let mut st = self.lock();
        let (depth, offset) = {
            let n = st.tree.node(id).expect("node");
            (n.depth, n.cumulative_depth - n.depth)
        };
        let mut map = BTreeMap::new();
        let mut ids = Vec::new();
        for l in &sketch.lemmas {
            let cid = st.next_id;
            st.next_id += 1;
            let mut name = l.name.clone();
            if st.names.contains(&name) {
                name = format!("{}_n{cid}", l.name);
            }
            st.names.insert(name.clone());
            map.insert(l.name.clone(), name.clone());
            ids.push((cid, name, l));
        }
        let mut child_ids = Vec::new();
        for (cid, name, l) in ids {
            let statement = rename_identifiers(&l.statement_text, &map);
            let mut child = node(cid, &name, &statement, depth + 1, offset, Some(id));
            if !l.admitted {
                child.inline_proof = Some(rename_identifiers(&l.source, &map));
            }
            st.tree.nodes.push(child);
            child_ids.push(cid);
        }
        let main = rename_identifiers(&sketch.main_source, &map);
        let n = st.tree.node_mut(id);
        n.children = child_ids.clone();
        n.state = NodeState::Decomposed;
        n.sketch = Some(rename_identifiers(&sketch.raw_source, &map));
        self.persist(&mut st);
        (child_ids, main)
    }

    fn judge_feedback(&self, sketch: &Sketch) -> Option<String> {
        if !self.config.judge_lemmas || sketch.lemmas.is_empty() {
            return None;
        }
        let verdicts = judge_lemmas(sketch, self.roles.judge.as_ref(), &self.env.retry)
            .map_err(|e| self.backend_failed(format!("{}: {e}", self.roles.judge.name())))
            .ok()?;
        let bad: Vec<String> = sketch
            .lemmas
            .iter()
            .zip(&verdicts)
            .filter(|(_, v)| v.correctness == Correctness::Incorrect)
            .map(|(l, v)| format!("lemma '{}' was judged incorrect: {}", l.name, v.reason))
            .collect();
        (!bad.is_empty()).then(|| bad.join("\n"))
    }

    fn decompose_and_solve(&self, id: usize) -> NodeResult {
        let mut feedback = String::new();
        let mut refines = 0;
        loop {
            let sketch = match self.sketch_for(id, &feedback) {
                Ok(s) => s,
                Err(e) => return self.fail(id, e.to_string()),
            };
            if let Some(fb) = self.judge_feedback(&sketch) {
                if refines >= self.config.refine_limit {
                    return self.fail(id, format!("refine limit reached: {fb}"));
                }
                refines += 1;
                self.update(id, |n| n.refines_used = refines);
                feedback = fb;
                continue;
            }
            let (children, main) = self.expand(id, &sketch);
            let results: Vec<NodeResult> = std::thread::scope(|s| {
                let handles: Vec<_> = children.iter().map(|&c| s.spawn(move || self.solve(c))).collect();
                handles.into_iter().map(|h| h.join().expect("node thread panicked")).collect()
            });
            let evidence: Vec<String> = results
                .iter()
                .filter_map(|r| match r {
                    NodeResult::Disproved(ev) => Some(ev.clone()),
                    _ => None,
                })
                .collect();
            if !evidence.is_empty() {
                if refines >= self.config.refine_limit {
                    return self.fail(id, format!("refine limit reached: {}", evidence.join("; ")));
                }
                refines += 1;
                {
                    let mut st = self.lock();
                    for &c in &children {
                        let n = st.tree.node_mut(c);
                        if !n.is_solved() {
                            n.discarded = true;
                            if !matches!(n.state, NodeState::Disproved | NodeState::Failed) {
                                n.state = NodeState::Failed;
                            }
                        }
                    }
                    st.tree.node_mut(id).refines_used = refines;
                    self.persist(&mut st);
                }
                feedback = evidence.join("\n");
                continue;
            }
            if results.iter().any(|r| matches!(r, NodeResult::Failed)) {
                return self.fail(id, "a sub-lemma could not be proved");
            }
            return self.close_decomposed(id, &main);
        }
    }

    fn close_decomposed(&self, id: usize, main: &str) -> NodeResult {
        let (name, depth) = {
            let st = self.lock();
            let n = st.tree.node(id).expect("node");
            (n.name.clone(), n.depth)
        };
        let decl = rename_decl(main, &name);
        if depth == 0 {
            let resolved = self.lock().pool.resolve(&decl);
            self.update(id, |n| n.proof_source = Some(resolved));
            return NodeResult::Solved;
        }
        match self.admit(id, &decl) {
            Ok(()) => NodeResult::Solved,
            Err(e) => self.fail(id, e),
        }
    }
}

/// Stitches the pool entries the root needs and the root's own proof into
/// one document and checks it in a fresh session.
pub fn assemble_proof(
    tree: &SearchTree,
    pool: &ProvenLemmaPool,
    header: &StatementHeader,
    env: &ProverEnv,
) -> Result<String, WorkflowError> {
    let root = tree.root();
    let Some(root_src) = root.proof_source.as_deref().filter(|_| root.is_solved()) else {
        return Err(WorkflowError::Usage("the root of the tree is not solved".into()));
    };
    let unsolved: Vec<&str> = tree
        .nodes
        .iter()
        .filter(|n| !n.discarded && n.parent.is_some() && !n.is_solved())
        .map(|n| n.name.as_str())
        .collect();
    if !unsolved.is_empty() {
        return Err(WorkflowError::Usage(format!("unsolved nodes: {}", unsolved.join(", "))));
    }
    let mut body: Vec<String> = pool.closure(root_src).into_iter().map(|e| e.source.clone()).collect();
    body.push(pool.resolve(root_src));
    let body = body.join("\n\n");
    let mut session = VerifierSession::open(header.clone(), &env.verifier)?;
    let r = session
        .submit_final(&body)
        .map_err(|e| WorkflowError::AssemblyVerificationFailed(e.to_string()))?;
    if !r.ok {
        return Err(WorkflowError::AssemblyVerificationFailed(r.render()));
    }
    Ok(session.assembled_document().expect("completed session"))
}

/// Runs the search, restarting once with the proved-lemma pool if the first
/// pass fails and restarts are enabled.
pub fn run_workflow(
    problem: &ProblemInput,
    roles: &AgentRoles,
    config: &WorkflowConfig,
    env: &ProverEnv,
) -> Result<WorkflowResult, WorkflowError> {
    let passes = if config.restart_enabled { 2 } else { 1 };
    search(problem, roles, config, env, ProvenLemmaPool::default(), 0, passes)
}

/// A fresh search whose context holds every lemma in `pool`, counted as the
/// first restart.
pub fn restart_with_pool(
    problem: &ProblemInput,
    pool: &ProvenLemmaPool,
    roles: &AgentRoles,
    config: &WorkflowConfig,
    env: &ProverEnv,
) -> Result<WorkflowResult, WorkflowError> {
    let mut r = search(problem, roles, config, env, pool.clone(), 1, 1)?;
    r.restarts_used = 1;
    Ok(r)
}

fn search(
    problem: &ProblemInput,
    roles: &AgentRoles,
    config: &WorkflowConfig,
    env: &ProverEnv,
    mut pool: ProvenLemmaPool,
    first_pass: usize,
    passes: usize,
) -> Result<WorkflowResult, WorkflowError> {
    config.validate()?;
    problem.header.validate()?;
    let start = Instant::now();
    let deadline = config
        .wall_clock_limit_s
        .map(|s| start + std::time::Duration::from_secs_f64(s));
    let permits = Semaphore::new(config.parallel_width);
    // Helper names embed node ids, so ids must not repeat across passes.
    let mut next_id = pool.entries.iter().map(|e| e.node + 1).max().unwrap_or(0);
    let mut trees = Vec::new();
    let mut error = None;
    let mut backend_errors: Vec<String> = Vec::new();
    let mut final_document = None;
    for pass in first_pass..first_pass + passes {
        let root_name = problem.header.goal_name();
        let mut names: BTreeSet<String> = pool.names().map(str::to_string).collect();
        names.extend(pool.aliases.keys().cloned());
        names.insert(root_name.clone());
        let root = node(next_id, &root_name, &problem.header.goal_signature(), 0, pass * config.max_depth, None);
        let engine = Engine {
            roles,
            config,
            env,
            header: &problem.header,
            root_nl_proof: problem.nl_proof.as_deref(),
            deadline,
            permits: &permits,
            state: Mutex::new(State {
                tree: SearchTree {
                    pass,
                    nodes: vec![root],
                },
                pool: std::mem::take(&mut pool),
                disproved: BTreeMap::new(),
                names,
                next_id: next_id + 1,
                snapshot_error: None,
            }),
            backend_errors: Mutex::new(Vec::new()),
        };
        let outcome = engine.solve(next_id);
        backend_errors.extend(engine.backend_errors.into_inner().expect("backend errors"));
        let st = engine.state.into_inner().expect("workflow state");
        next_id = st.next_id;
        pool = st.pool;
        if let Some(e) = st.snapshot_error {
            error = Some(format!("snapshot write failed: {e}"));
        }
        let tree = st.tree;
        if matches!(outcome, NodeResult::Solved) {
            match assemble_proof(&tree, &pool, &problem.header, env) {
                Ok(doc) => final_document = Some(doc),
                Err(e) => error = Some(e.to_string()),
            }
            trees.push(tree);
            break;
        }
        let timed_out = deadline.is_some_and(|d| Instant::now() >= d);
        trees.push(tree);
        if timed_out {
            error = Some(WorkflowError::WallClockExceeded.to_string());
            break;
        }
    }
    if final_document.is_none() && error.is_none() {
        if let Some(first) = backend_errors.first() {
            error = Some(format!("{} backend failure(s), first: {first}", backend_errors.len()));
        }
    }
    let tree = trees.pop().expect("at least one pass");
    let trajectories_used = tree.trajectories_used() + trees.iter().map(SearchTree::trajectories_used).sum::<usize>();
    Ok(WorkflowResult {
        problem_id: problem.id.clone(),
        solved: final_document.is_some(),
        final_document,
        restarts_used: trees.len(),
        earlier_passes: trees,
        tree,
        pool,
        trajectories_used,
        error,
        elapsed_s: start.elapsed().as_secs_f64(),
    })
}
