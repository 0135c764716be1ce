//! Lemma-incremental verification sessions.
//!
//! A [`VerifierSession`] holds a statement header and an append-only cache of
//! proved lemmas. Every submission is checked against header plus cache, and
//! only successful lemmas enter the cache. Two backends implement the
//! [`VerifierBackend`] contract: an in-process toy checker and an adapter for
//! an external Lean REPL process.

pub mod repl;
pub mod toy;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lean_text::{self, split_declarations};

pub use repl::{LeanReplBackend, ReplConfig, ReplFieldMap};
pub use toy::{toy_verify, ToyBackend};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Severity {
    Error,
    Warning,
    Info,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub severity: Severity,
    /// 1-based (line, column).
    pub position: Option<(usize, usize)>,
    pub text: String,
}

impl Message {
    pub fn error(text: impl Into<String>) -> Self {
        Message {
            severity: Severity::Error,
            position: None,
            text: text.into(),
        }
    }

    pub fn at(mut self, line: usize, column: usize) -> Self {
        self.position = Some((line, column));
        self
    }

    pub fn render(&self) -> String {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
            Severity::Info => "info",
        };
        match self.position {
            Some((l, c)) => format!("{l}:{c}: {sev}: {}", self.text),
            None => format!("{sev}: {}", self.text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatementHeader {
    pub imports: String,
    pub options: String,
    /// The target theorem with a placeholder proof.
    pub goal_statement: String,
}

impl StatementHeader {
    pub fn new(goal_statement: impl Into<String>) -> Self {
        StatementHeader {
            imports: String::new(),
            options: String::new(),
            goal_statement: goal_statement.into(),
        }
    }

    /// Checks that the goal is exactly one top-level theorem declaration.
    pub fn validate(&self) -> Result<(), VerifierError> {
        if self.goal_statement.trim().is_empty() {
            return Err(VerifierError::InvalidHeader("goal statement is empty".into()));
        }
        let decls = split_declarations(&self.goal_statement);
        if decls.len() != 1 {
            return Err(VerifierError::InvalidHeader(format!(
                "goal statement must contain exactly one declaration, found {}",
                decls.len()
            )));
        }
        let parts = decls[0].parts();
        if !matches!(parts.keyword.as_str(), "theorem" | "lemma") || parts.goal.is_empty() {
            return Err(VerifierError::InvalidHeader(
                "goal statement is not a theorem with a stated goal".into(),
            ));
        }
        Ok(())
    }

    /// The goal theorem's name.
    pub fn goal_name(&self) -> String {
        lean_text::decl_parts(&self.goal_statement)
            .name
            .unwrap_or_else(|| "main".into())
    }

    /// Binders and goal of the target theorem, without its proof.
    pub fn goal_signature(&self) -> String {
        lean_text::decl_parts(&self.goal_statement).signature
    }

    /// The goal proposition text (after the top-level colon).
    pub fn goal_text(&self) -> String {
        lean_text::decl_parts(&self.goal_statement).goal
    }

    /// Import and option lines as a document prefix.
    pub fn prelude(&self) -> String {
        let mut out = String::new();
        for block in [&self.imports, &self.options] {
            let b = block.trim();
            if !b.is_empty() {
                out.push_str(b);
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LemmaStatus {
    Proved,
    SorryAdmitted,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaRecord {
    pub name: String,
    pub source: String,
    pub status: LemmaStatus,
    pub diagnostics: Vec<Message>,
    /// Seconds.
    pub elapsed: f64,
    pub sequence_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyResult {
    pub ok: bool,
    pub messages: Vec<Message>,
    /// Seconds.
    pub elapsed: f64,
    pub uses_banned_tactic: bool,
}

impl VerifyResult {
    fn rejected(message: Message, banned: bool) -> Self {
        VerifyResult {
            ok: false,
            messages: vec![message],
            elapsed: 0.0,
            uses_banned_tactic: banned,
        }
    }

    pub fn timed_out(&self) -> bool {
        self.messages.iter().any(|m| m.text.starts_with("timeout"))
    }

    /// Multi-line rendering used in tool results.
    pub fn render(&self) -> String {
        let mut out = String::from(if self.ok { "ok" } else { "failed" });
        for m in &self.messages {
            out.push('\n');
            out.push_str(&m.render());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Toy,
    LeanRepl,
}

#[derive(Debug, Error)]
pub enum VerifierError {
    #[error("verifier backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("invalid statement header: {0}")]
    InvalidHeader(String),
    #[error("session is closed")]
    SessionClosed,
    #[error("a lemma named '{0}' is already cached")]
    DuplicateName(String),
    #[error("declared goal does not match the header: expected `{expected}`, found `{found}`")]
    GoalMismatch { expected: String, found: String },
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("invalid submission: {0}")]
    InvalidSource(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
}

/// Verification status of one declaration in a checked source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeclOutcome {
    pub name: String,
    pub status: LemmaStatus,
}

#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    pub timeout: Duration,
}

/// Opaque backend state that becomes current after [`VerifierBackend::commit`].
#[derive(Debug, Clone)]
pub enum Checkpoint {
    Toy(Vec<toy::Fact>),
    Repl(i64),
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub messages: Vec<Message>,
    pub decls: Vec<DeclOutcome>,
    pub timed_out: bool,
    pub checkpoint: Checkpoint,
}

impl CheckOutcome {
    pub fn has_errors(&self) -> bool {
        self.timed_out || self.messages.iter().any(|m| m.severity == Severity::Error)
    }
}

/// A verification engine that checks source text against its current
/// context and can advance that context.
pub trait VerifierBackend: Send {
    fn kind(&self) -> BackendKind;
    fn initialize(&mut self, header: &StatementHeader) -> Result<(), VerifierError>;
    /// Checks `source` against the current context without changing it.
    fn check(&mut self, source: &str, opts: CheckOptions) -> Result<CheckOutcome, VerifierError>;
    /// Makes a checkpoint from a previous `check` the current context.
    fn commit(&mut self, checkpoint: Checkpoint) -> Result<(), VerifierError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub repl: Option<ReplConfig>,
    /// Per-submission wall-clock limit in seconds.
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
    #[serde(default = "default_banned")]
    pub banned_tokens: Vec<String>,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_banned() -> Vec<String> {
    vec!["native_decide".into()]
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig::toy()
    }
}

impl VerifierConfig {
    pub fn toy() -> Self {
        VerifierConfig {
            kind: BackendKind::Toy,
            repl: None,
            timeout_s: default_timeout(),
            banned_tokens: default_banned(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_s.max(0.0))
    }

    pub fn make_backend(&self) -> Result<Box<dyn VerifierBackend>, VerifierError> {
        match self.kind {
            BackendKind::Toy => Ok(Box::new(ToyBackend::new())),
            BackendKind::LeanRepl => {
                let cfg = self.repl.clone().ok_or_else(|| {
                    VerifierError::BackendUnavailable("no Lean REPL command configured".into())
                })?;
                Ok(Box::new(LeanReplBackend::new(cfg)))
            }
        }
    }
}

/// True iff `source` contains one of `banned` as a token outside comments
/// and string literals.
pub fn scan_banned_tactics(source: &str, banned: &[String]) -> bool {
    let toks = lean_text::tokenize(source);
    toks.iter().any(|t| banned.iter().any(|b| *b == t.text))
}

/// [`scan_banned_tactics`] with the default list.
pub fn uses_native_decide(source: &str) -> bool {
    scan_banned_tactics(source, &default_banned())
}

/// A running verification context for one statement.
pub struct VerifierSession {
    header: StatementHeader,
    cache: Vec<LemmaRecord>,
    backend: Box<dyn VerifierBackend>,
    config: VerifierConfig,
    closed: bool,
    final_source: Option<String>,
    next_index: usize,
}

impl std::fmt::Debug for VerifierSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VerifierSession")
            .field("header", &self.header)
            .field("cache", &self.cache)
            .field("closed", &self.closed)
            .finish()
    }
}

fn secs(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

impl VerifierSession {
    pub fn open(header: StatementHeader, config: &VerifierConfig) -> Result<Self, VerifierError> {
        header.validate()?;
        let backend = config.make_backend()?;
        Self::with_backend(header, backend, config.clone())
    }

    pub fn with_backend(
        header: StatementHeader,
        mut backend: Box<dyn VerifierBackend>,
        config: VerifierConfig,
    ) -> Result<Self, VerifierError> {
        header.validate()?;
        backend.initialize(&header)?;
        Ok(VerifierSession {
            header,
            cache: Vec::new(),
            backend,
            config,
            closed: false,
            final_source: None,
            next_index: 0,
        })
    }

    pub fn header(&self) -> &StatementHeader {
        &self.header
    }

    pub fn cache(&self) -> &[LemmaRecord] {
        &self.cache
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// True once a final theorem has been accepted.
    pub fn is_complete(&self) -> bool {
        self.final_source.is_some()
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    /// The header and the cached lemmas, in the order the backend sees them.
    pub fn context(&self) -> (StatementHeader, Vec<LemmaRecord>) {
        (self.header.clone(), self.cache.clone())
    }

    fn screen(&self, source: &str) -> Option<VerifyResult> {
        if scan_banned_tactics(source, &self.config.banned_tokens) {
            return Some(VerifyResult::rejected(
                Message::error("source uses a banned tactic"),
                true,
            ));
        }
        if lean_text::contains_token(source, "sorry") {
            return Some(VerifyResult::rejected(
                Message::error("declaration uses 'sorry'"),
                false,
            ));
        }
        None
    }

    fn opts(&self) -> CheckOptions {
        CheckOptions {
            timeout: self.config.timeout(),
        }
    }

    fn result_from(outcome: &CheckOutcome, start: Instant) -> VerifyResult {
        let mut messages = outcome.messages.clone();
        if outcome.timed_out && !messages.iter().any(|m| m.text.starts_with("timeout")) {
            messages.push(Message::error("timeout: per-submission limit exceeded"));
        }
        VerifyResult {
            ok: !outcome.has_errors()
                && outcome.decls.iter().all(|d| d.status == LemmaStatus::Proved),
            messages,
            elapsed: secs(start),
            uses_banned_tactic: false,
        }
    }

    /// Verifies one lemma against header plus cache; on success it is
    /// appended to the cache.
    pub fn submit_lemma(&mut self, source: &str) -> Result<VerifyResult, VerifierError> {
        if self.closed {
            return Err(VerifierError::SessionClosed);
        }
        let decls = split_declarations(source);
        if decls.len() != 1 {
            return Err(VerifierError::InvalidSource(format!(
                "expected a single declaration, found {}",
                decls.len()
            )));
        }
        let name = decls[0]
            .name
            .clone()
            .ok_or_else(|| VerifierError::InvalidSource("declaration has no name".into()))?;
        if self.cache.iter().any(|r| r.name == name) {
            return Err(VerifierError::DuplicateName(name));
        }
        if let Some(r) = self.screen(source) {
            return Ok(r);
        }
        let start = Instant::now();
        let outcome = self.backend.check(source, self.opts())?;
        let result = Self::result_from(&outcome, start);
        if result.ok {
            self.backend.commit(outcome.checkpoint)?;
            self.cache.push(LemmaRecord {
                name,
                source: source.trim().to_string(),
                status: LemmaStatus::Proved,
                diagnostics: result.messages.clone(),
                elapsed: result.elapsed,
                sequence_index: self.next_index,
            });
            self.next_index += 1;
        }
        Ok(result)
    }

    /// Verifies the final theorem (optionally preceded by helper
    /// declarations). The last declaration must state the header's goal.
    pub fn submit_final(&mut self, source: &str) -> Result<VerifyResult, VerifierError> {
        if self.closed {
            return Err(VerifierError::SessionClosed);
        }
        self.check_goal(source)?;
        if let Some(r) = self.screen(source) {
            return Ok(r);
        }
        let start = Instant::now();
        let outcome = self.backend.check(source, self.opts())?;
        let result = Self::result_from(&outcome, start);
        if result.ok {
            self.final_source = Some(source.trim().to_string());
            self.closed = true;
        }
        Ok(result)
    }

    /// Fails with `GoalMismatch` unless the last declaration of `source`
    /// states the header's goal (names are ignored).
    pub fn check_goal(&self, source: &str) -> Result<(), VerifierError> {
        let decls = split_declarations(source);
        let last = decls.last().ok_or_else(|| {
            VerifierError::InvalidSource("no declaration in final source".into())
        })?;
        let expected = self.header.goal_signature();
        let found = last.parts().signature;
        let strip = |s: &str| {
            let p = lean_text::decl_parts(s);
            let body = match p.binders.is_empty() {
                true => p.goal,
                false => format!("{} : {}", p.binders, p.goal),
            };
            lean_text::canonical_tokens(&body)
        };
        if strip(&expected) != strip(&found) {
            return Err(VerifierError::GoalMismatch { expected, found });
        }
        Ok(())
    }

    /// Checks a sketch against the current context with placeholder proofs
    /// admitted. The context is not changed.
    pub fn check_sketch(&mut self, source: &str) -> Result<(VerifyResult, Vec<DeclOutcome>), VerifierError> {
        if self.closed {
            return Err(VerifierError::SessionClosed);
        }
        if scan_banned_tactics(source, &self.config.banned_tokens) {
            return Ok((
                VerifyResult::rejected(Message::error("source uses a banned tactic"), true),
                Vec::new(),
            ));
        }
        let start = Instant::now();
        let outcome = self.backend.check(source, self.opts())?;
        let ok = !outcome.has_errors()
            && outcome.decls.iter().all(|d| d.status != LemmaStatus::Failed);
        let mut result = Self::result_from(&outcome, start);
        result.ok = ok && !outcome.decls.is_empty();
        if outcome.decls.is_empty() {
            result.messages.push(Message::error("no declarations"));
        }
        Ok((result, outcome.decls))
    }

    /// Checks a complete self-contained document against the current context
    /// without changing it. Its last declaration must state the goal.
    pub fn verify_document(&mut self, source: &str) -> Result<VerifyResult, VerifierError> {
        if self.closed {
            return Err(VerifierError::SessionClosed);
        }
        self.check_goal(source)?;
        if let Some(r) = self.screen(source) {
            return Ok(r);
        }
        let start = Instant::now();
        let outcome = self.backend.check(source, self.opts())?;
        Ok(Self::result_from(&outcome, start))
    }

    /// The accepted final source, once the session is complete.
    pub fn final_source(&self) -> Option<&str> {
        self.final_source.as_deref()
    }

    /// Header, cached lemmas and final theorem as one document.
    pub fn assembled_document(&self) -> Option<String> {
        let fin = self.final_source.as_ref()?;
        let mut doc = self.header.prelude();
        if !doc.is_empty() {
            doc.push('\n');
        }
        for r in &self.cache {
            doc.push_str(&r.source);
            doc.push_str("\n\n");
        }
        doc.push_str(fin);
        doc.push('\n');
        Some(doc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionId(pub u64);

impl std::fmt::Display for SessionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Owns sessions by id.
#[derive(Default, Debug)]
pub struct SessionRegistry {
    sessions: HashMap<SessionId, VerifierSession>,
    next: u64,
}

impl SessionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open_session(
        &mut self,
        header: StatementHeader,
        config: &VerifierConfig,
    ) -> Result<SessionId, VerifierError> {
        let session = VerifierSession::open(header, config)?;
        Ok(self.insert(session))
    }

    pub fn insert(&mut self, session: VerifierSession) -> SessionId {
        self.next += 1;
        let id = SessionId(self.next);
        self.sessions.insert(id, session);
        id
    }

    pub fn get(&mut self, id: SessionId) -> Result<&mut VerifierSession, VerifierError> {
        self.sessions
            .get_mut(&id)
            .ok_or(VerifierError::UnknownSession(id.0))
    }

    pub fn submit_lemma(&mut self, id: SessionId, source: &str) -> Result<VerifyResult, VerifierError> {
        self.get(id)?.submit_lemma(source)
    }

    pub fn submit_final(&mut self, id: SessionId, source: &str) -> Result<VerifyResult, VerifierError> {
        self.get(id)?.submit_final(source)
    }

    pub fn session_context(
        &mut self,
        id: SessionId,
    ) -> Result<(StatementHeader, Vec<LemmaRecord>), VerifierError> {
        Ok(self.get(id)?.context())
    }

    pub fn remove(&mut self, id: SessionId) -> Option<VerifierSession> {
        self.sessions.remove(&id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> StatementHeader {
        StatementHeader {
            imports: "import Toy".into(),
            options: String::new(),
            goal_statement: "theorem main : 2 + 3 = 5 ∧ 5 = 2 + 3 := by sorry".into(),
        }
    }

    #[test]
    fn fresh_session_has_empty_cache() {
        let s = VerifierSession::open(header(), &VerifierConfig::toy()).unwrap();
        assert!(s.context().1.is_empty());
    }

    #[test]
    fn empty_goal_is_invalid() {
        let r = VerifierSession::open(StatementHeader::new(""), &VerifierConfig::toy());
        assert!(matches!(r, Err(VerifierError::InvalidHeader(_))));
    }

    #[test]
    fn repl_without_command_is_unavailable() {
        let cfg = VerifierConfig {
            kind: BackendKind::LeanRepl,
            ..VerifierConfig::toy()
        };
        assert!(matches!(
            VerifierSession::open(header(), &cfg),
            Err(VerifierError::BackendUnavailable(_))
        ));
    }

    #[test]
    fn lemmas_accumulate_and_final_assembles() {
        let mut s = VerifierSession::open(header(), &VerifierConfig::toy()).unwrap();
        assert!(s.submit_lemma("lemma l1 : 2 + 3 = 5 := by eval").unwrap().ok);
        assert!(s
            .submit_lemma("lemma l2 (h : 2 + 3 = 5) : 5 = 2 + 3 := by eval")
            .unwrap()
            .ok);
        assert!(matches!(
            s.submit_lemma("lemma l1 : 1 = 1 := by eval"),
            Err(VerifierError::DuplicateName(_))
        ));
        let r = s
            .submit_final("theorem main : 2 + 3 = 5 ∧ 5 = 2 + 3 := ⟨l1, l2 l1⟩")
            .unwrap();
        assert!(r.ok, "{r:?}");
        assert!(s.is_complete());
        let doc = s.assembled_document().unwrap();
        assert!(doc.starts_with("import Toy\n"));
        let mut fresh = VerifierSession::open(header(), &VerifierConfig::toy()).unwrap();
        assert!(fresh.verify_document(&doc).unwrap().ok);
        assert!(matches!(
            s.submit_lemma("lemma l3 : 1 = 1 := by eval"),
            Err(VerifierError::SessionClosed)
        ));
    }

    #[test]
    fn final_goal_must_match() {
        let mut s = VerifierSession::open(header(), &VerifierConfig::toy()).unwrap();
        assert!(matches!(
            s.submit_final("theorem main : 1 = 1 := by eval"),
            Err(VerifierError::GoalMismatch { .. })
        ));
        let r = s
            .submit_final("theorem main : 2 + 3 = 5 ∧ 5 = 2 + 3 := ⟨l1, l2 l1⟩")
            .unwrap();
        assert!(!r.ok);
        assert!(r.messages[0].text.contains("'l1'"));
    }

    #[test]
    fn banned_tokens_screened_outside_comments() {
        let banned = default_banned();
        assert!(scan_banned_tactics("by native_decide", &banned));
        assert!(!scan_banned_tactics("-- native_decide in a comment", &banned));
        assert!(!scan_banned_tactics("by decide", &banned));
        assert!(!scan_banned_tactics("/- native_decide -/ \"native_decide\"", &banned));
        let mut s = VerifierSession::open(header(), &VerifierConfig::toy()).unwrap();
        let r = s.submit_lemma("lemma l : 1 = 1 := by native_decide").unwrap();
        assert!(!r.ok && r.uses_banned_tactic);
    }

    #[test]
    fn registry_reports_unknown_session() {
        let mut reg = SessionRegistry::new();
        assert!(matches!(
            reg.session_context(SessionId(7)),
            Err(VerifierError::UnknownSession(7))
        ));
        let id = reg.open_session(header(), &VerifierConfig::toy()).unwrap();
        assert!(reg.session_context(id).unwrap().1.is_empty());
    }
}
