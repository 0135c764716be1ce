//! Adapter for an external Lean REPL process speaking JSON over stdio.
//!
//! Each request is `{cmd, env}`; each response carries a new environment id
//! and a message list. The backend pins the environment id of the last
//! committed submission. After a timeout the process is killed; the next
//! check respawns it and replays the header and all committed sources.

use std::collections::HashMap;
use std::io::{BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{
    BackendKind, CheckOptions, CheckOutcome, Checkpoint, DeclOutcome, LemmaStatus, Message, Severity,
    StatementHeader, VerifierBackend, VerifierError,
};
use crate::lean_text::split_declarations;

/// JSON field names used by the REPL; versions differ.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReplFieldMap {
    pub cmd: String,
    pub env: String,
    pub messages: String,
    pub severity: String,
    pub pos: String,
    pub line: String,
    pub column: String,
    pub data: String,
    /// Top-level error field of a rejected request.
    pub error: String,
}

impl Default for ReplFieldMap {
    fn default() -> Self {
        ReplFieldMap {
            cmd: "cmd".into(),
            env: "env".into(),
            messages: "messages".into(),
            severity: "severity".into(),
            pos: "pos".into(),
            line: "line".into(),
            column: "column".into(),
            data: "data".into(),
            error: "message".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplConfig {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    #[serde(default)]
    pub working_dir: Option<String>,
    #[serde(default)]
    pub fields: ReplFieldMap,
    /// Column numbering of the REPL's positions (Lean reports 0-based).
    #[serde(default)]
    pub column_base: usize,
    /// Limit for the header command, which loads imports.
    #[serde(default = "default_startup")]
    pub startup_timeout_s: f64,
}

fn default_startup() -> f64 {
    600.0
}

impl ReplConfig {
    pub fn new(command: impl Into<String>) -> Self {
        ReplConfig {
            command: command.into(),
            args: Vec::new(),
            working_dir: None,
            fields: ReplFieldMap::default(),
            column_base: 0,
            startup_timeout_s: default_startup(),
        }
    }
}

struct ReplProcess {
    child: Child,
    stdin: ChildStdin,
    rx: Receiver<Result<Value, String>>,
}

impl Drop for ReplProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

enum Reply {
    Value(Value),
    TimedOut,
}

pub struct LeanReplBackend {
    config: ReplConfig,
    process: Option<ReplProcess>,
    header: Option<StatementHeader>,
    pinned: Option<i64>,
    committed: Vec<String>,
    pending: HashMap<i64, String>,
}

impl LeanReplBackend {
    pub fn new(config: ReplConfig) -> Self {
        LeanReplBackend {
            config,
            process: None,
            header: None,
            pinned: None,
            committed: Vec::new(),
            pending: HashMap::new(),
        }
    }

    fn spawn(&self) -> Result<ReplProcess, VerifierError> {
        let mut cmd = Command::new(&self.config.command);
        cmd.args(&self.config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null());
        if let Some(dir) = &self.config.working_dir {
            cmd.current_dir(dir);
        }
        let mut child = cmd.spawn().map_err(|e| {
            VerifierError::BackendUnavailable(format!("failed to start '{}': {e}", self.config.command))
        })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let stream = serde_json::Deserializer::from_reader(BufReader::new(stdout)).into_iter::<Value>();
            for item in stream {
                let msg = item.map_err(|e| e.to_string());
                let stop = msg.is_err();
                if tx.send(msg).is_err() || stop {
                    break;
                }
            }
        });
        Ok(ReplProcess { child, stdin, rx })
    }

    fn request(&mut self, source: &str, env: Option<i64>, timeout: Duration) -> Result<Reply, VerifierError> {
        let f = &self.config.fields;
        let mut obj = Map::new();
        obj.insert(f.cmd.clone(), Value::String(source.to_string()));
        if let Some(e) = env {
            obj.insert(f.env.clone(), Value::from(e));
        }
        let line = Value::Object(obj).to_string();
        let proc = self
            .process
            .as_mut()
            .ok_or_else(|| VerifierError::BackendUnavailable("REPL process not running".into()))?;
        proc.stdin
            .write_all(format!("{line}\n\n").as_bytes())
            .and_then(|_| proc.stdin.flush())
            .map_err(|e| VerifierError::BackendUnavailable(format!("REPL write failed: {e}")))?;
        match proc.rx.recv_timeout(timeout) {
            Ok(Ok(v)) => Ok(Reply::Value(v)),
            Ok(Err(e)) => {
                self.process = None;
                Err(VerifierError::Protocol(format!("malformed REPL output: {e}")))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.process = None;
                Ok(Reply::TimedOut)
            }
            Err(RecvTimeoutError::Disconnected) => {
                self.process = None;
                Err(VerifierError::BackendUnavailable("REPL process exited".into()))
            }
        }
    }

    fn env_of(&self, v: &Value) -> Option<i64> {
        v.get(&self.config.fields.env).and_then(Value::as_i64)
    }

    // Starts the process and replays the header and committed sources.
    fn ensure_running(&mut self) -> Result<(), VerifierError> {
        if self.process.is_some() {
            return Ok(());
        }
        let header = self
            .header
            .clone()
            .ok_or_else(|| VerifierError::BackendUnavailable("backend not initialized".into()))?;
        self.process = Some(self.spawn()?);
        self.pinned = None;
        self.pending.clear();
        let startup = Duration::from_secs_f64(self.config.startup_timeout_s);
        let prelude = header.prelude();
        if !prelude.trim().is_empty() {
            let reply = self.request(&prelude, None, startup)?;
            self.pinned = Some(self.expect_clean(reply, "header")?);
        }
        for src in self.committed.clone() {
            let reply = self.request(&src, self.pinned, startup)?;
            self.pinned = Some(self.expect_clean(reply, "replay")?);
        }
        Ok(())
    }

    fn expect_clean(&self, reply: Reply, what: &str) -> Result<i64, VerifierError> {
        let v = match reply {
            Reply::Value(v) => v,
            Reply::TimedOut => {
                return Err(VerifierError::BackendUnavailable(format!("{what} command timed out")))
            }
        };
        let msgs = self.messages_of(&v);
        if let Some(m) = msgs.iter().find(|m| m.severity == Severity::Error) {
            return Err(VerifierError::BackendUnavailable(format!("{what} command failed: {}", m.text)));
        }
        self.env_of(&v)
            .ok_or_else(|| VerifierError::Protocol(format!("{what} response has no environment id")))
    }

    fn messages_of(&self, v: &Value) -> Vec<Message> {
        let f = &self.config.fields;
        let mut out = Vec::new();
        if let Some(err) = v.get(&f.error).and_then(Value::as_str) {
            if v.get(&f.env).is_none() {
                out.push(Message::error(err.to_string()));
            }
        }
        for m in v.get(&f.messages).and_then(Value::as_array).into_iter().flatten() {
            let severity = match m.get(&f.severity).and_then(Value::as_str) {
                Some("error") => Severity::Error,
                Some("warning") => Severity::Warning,
                _ => Severity::Info,
            };
            let position = m.get(&f.pos).and_then(|p| {
                let line = p.get(&f.line)?.as_u64()? as usize;
                let col = p.get(&f.column)?.as_u64()? as usize;
                Some((line.max(1), col + 1 - self.config.column_base.min(1)))
            });
            let text = m.get(&f.data).and_then(Value::as_str).unwrap_or("").to_string();
            out.push(Message {
                severity,
                position,
                text,
            });
        }
        out
    }
}

/// Assigns each message to the declaration whose lines contain it.
fn classify(source: &str, messages: &[Message]) -> Vec<DeclOutcome> {
    let decls = split_declarations(source);
    let mut outcomes = Vec::new();
    for (i, d) in decls.iter().enumerate() {
        let first = d.line;
        let last = decls.get(i + 1).map(|n| n.line - 1).unwrap_or(usize::MAX);
        let mine = messages
            .iter()
            .filter(|m| m.position.is_some_and(|(l, _)| l >= first && l <= last));
        let mut status = LemmaStatus::Proved;
        for m in mine {
            if m.severity == Severity::Error {
                status = LemmaStatus::Failed;
                break;
            }
            if m.severity == Severity::Warning && m.text.contains("sorry") {
                status = LemmaStatus::SorryAdmitted;
            }
        }
        outcomes.push(DeclOutcome {
            name: d.name.clone().unwrap_or_default(),
            status,
        });
    }
    // unpositioned errors fail everything
    if messages
        .iter()
        .any(|m| m.severity == Severity::Error && m.position.is_none())
    {
        for o in &mut outcomes {
            o.status = LemmaStatus::Failed;
        }
    }
    outcomes
}

impl VerifierBackend for LeanReplBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::LeanRepl
    }

    fn initialize(&mut self, header: &StatementHeader) -> Result<(), VerifierError> {
        self.header = Some(header.clone());
        self.committed.clear();
        self.process = None;
        self.ensure_running()
    }

    fn check(&mut self, source: &str, opts: CheckOptions) -> Result<CheckOutcome, VerifierError> {
        self.ensure_running()?;
        let base = self.pinned;
        match self.request(source, base, opts.timeout)? {
            Reply::TimedOut => Ok(CheckOutcome {
                messages: vec![Message::error(format!(
                    "timeout: no response within {:.1} s",
                    opts.timeout.as_secs_f64()
                ))],
                decls: Vec::new(),
                timed_out: true,
                checkpoint: Checkpoint::Repl(base.unwrap_or(-1)),
            }),
            Reply::Value(v) => {
                let messages = self.messages_of(&v);
                let decls = classify(source, &messages);
                let env = self.env_of(&v).unwrap_or(-1);
                if env >= 0 {
                    self.pending.insert(env, source.to_string());
                }
                Ok(CheckOutcome {
                    messages,
                    decls,
                    timed_out: false,
                    checkpoint: Checkpoint::Repl(env),
                })
            }
        }
    }

    fn commit(&mut self, checkpoint: Checkpoint) -> Result<(), VerifierError> {
        match checkpoint {
            Checkpoint::Repl(env) => {
                let src = self.pending.remove(&env).ok_or_else(|| {
                    VerifierError::Protocol(format!("unknown environment id {env}"))
                })?;
                self.committed.push(src);
                self.pinned = Some(env);
                self.pending.clear();
                Ok(())
            }
            Checkpoint::Toy(_) => Err(VerifierError::Protocol(
                "REPL backend received a toy checkpoint".into(),
            )),
        }
    }
}
