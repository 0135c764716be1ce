//! Tool calls embedded in agent turns and their dispatch.
//!
//! A call block in an agent turn is a `<<tool>>` line, a one-line JSON
//! envelope `{"id", "tool", "args"}` and a `<</tool>>` line. Results are
//! written back as `<<result id=...>>` blocks.

pub mod embed;
pub mod exec;
pub mod index;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::verifier::{VerifierError, VerifierSession};
pub use embed::{Embedder, HashEmbedder, HttpEmbedder};
pub use exec::{ExecLimits, ScriptExecutor};
pub use index::{DeclKind, IndexEntry, IndexError, SearchIndex};

pub const OPEN_TAG: &str = "<<tool>>";
pub const CLOSE_TAG: &str = "<</tool>>";
pub const DEFAULT_PAYLOAD_CAP: usize = 8 * 1024;
pub const DEFAULT_SEARCH_K: usize = 5;
const TRUNCATION_MARK: &str = "\n[output truncated]";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ToolError {
    #[error("unknown tool '{0}'")]
    UnknownTool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolKind {
    VerifyLemma,
    VerifyFinal,
    SearchDecls,
    ExecScript,
}

impl ToolKind {
    pub const ALL: [ToolKind; 4] = [
        ToolKind::VerifyLemma,
        ToolKind::VerifyFinal,
        ToolKind::SearchDecls,
        ToolKind::ExecScript,
    ];

    pub fn wire_name(self) -> &'static str {
        match self {
            ToolKind::VerifyLemma => "verify_lemma",
            ToolKind::VerifyFinal => "verify_final",
            ToolKind::SearchDecls => "search_decls",
            ToolKind::ExecScript => "exec_script",
        }
    }

    pub fn required_args(self) -> &'static [&'static str] {
        match self {
            ToolKind::SearchDecls => &["query"],
            _ => &["source"],
        }
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

impl FromStr for ToolKind {
    type Err = ToolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ToolKind::ALL
            .into_iter()
            .find(|k| k.wire_name() == s)
            .ok_or_else(|| ToolError::UnknownTool(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub tool: ToolKind,
    pub args: BTreeMap<String, String>,
}

impl ToolCall {
    pub fn new(id: impl Into<String>, tool: ToolKind, args: &[(&str, &str)]) -> Self {
        ToolCall {
            id: id.into(),
            tool,
            args: args.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    pub fn arg(&self, key: &str) -> Option<&str> {
        self.args.get(key).map(String::as_str)
    }

    /// The call as a wire block (three lines, no trailing newline).
    pub fn to_block(&self) -> String {
        let args: Map<String, Value> = self
            .args
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        let mut env = Map::new();
        env.insert("id".into(), Value::String(self.id.clone()));
        env.insert("tool".into(), Value::String(self.tool.wire_name().into()));
        env.insert("args".into(), Value::Object(args));
        format!("{OPEN_TAG}\n{}\n{CLOSE_TAG}", Value::Object(env))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolStatus {
    Ok,
    Error,
    Timeout,
}

impl fmt::Display for ToolStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToolStatus::Ok => "ok",
            ToolStatus::Error => "error",
            ToolStatus::Timeout => "timeout",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolResult {
    pub id: String,
    pub status: ToolStatus,
    pub payload: String,
    pub truncated: bool,
}

impl ToolResult {
    pub fn new(id: impl Into<String>, status: ToolStatus, payload: impl Into<String>) -> Self {
        ToolResult {
            id: id.into(),
            status,
            payload: payload.into(),
            truncated: false,
        }
    }

    /// Shortens the payload to at most `cap` bytes on a character boundary.
    pub fn capped(mut self, cap: usize) -> Self {
        let (payload, cut) = truncate_payload(&self.payload, cap);
        self.payload = payload;
        self.truncated |= cut;
        self
    }

    pub fn to_block(&self) -> String {
        format!(
            "<<result id={}>>\nstatus: {}{}\n{}\n<</result>>",
            self.id,
            self.status,
            if self.truncated { " (truncated)" } else { "" },
            self.payload
        )
    }
}

fn floor_boundary(s: &str, mut i: usize) -> usize {
    i = i.min(s.len());
    while !s.is_char_boundary(i) {
        i -= 1;
    }
    i
}

/// Returns the payload cut to at most `cap` bytes and whether it was cut.
pub fn truncate_payload(text: &str, cap: usize) -> (String, bool) {
    if text.len() <= cap {
        return (text.to_string(), false);
    }
    if cap < TRUNCATION_MARK.len() {
        return (text[..floor_boundary(text, cap)].to_string(), true);
    }
    let keep = floor_boundary(text, cap - TRUNCATION_MARK.len());
    (format!("{}{TRUNCATION_MARK}", &text[..keep]), true)
}

/// One call block found in an agent turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedBlock {
    Call(ToolCall),
    Malformed { id: String, reason: String },
}

impl ParsedBlock {
    /// The synthetic error result for a malformed block.
    pub fn error_result(&self) -> Option<ToolResult> {
        match self {
            ParsedBlock::Call(_) => None,
            ParsedBlock::Malformed { id, reason } => Some(ToolResult::new(
                id.clone(),
                ToolStatus::Error,
                format!("malformed tool call: {reason}"),
            )),
        }
    }
}

fn parse_envelope(line: &str) -> Result<ToolCall, (Option<String>, String)> {
    let v: Value = serde_json::from_str(line).map_err(|e| (None, format!("invalid JSON: {e}")))?;
    let obj = v.as_object().ok_or((None, "envelope is not a JSON object".into()))?;
    let id = obj.get("id").and_then(Value::as_str).map(str::to_string);
    let id_ref = || id.clone();
    let id_val = id.clone().ok_or((None, "missing string field 'id'".into()))?;
    let tool_name = obj
        .get("tool")
        .and_then(Value::as_str)
        .ok_or_else(|| (id_ref(), "missing string field 'tool'".into()))?;
    let tool: ToolKind = tool_name.parse().map_err(|e: ToolError| (id_ref(), e.to_string()))?;
    let mut args = BTreeMap::new();
    match obj.get("args") {
        None | Some(Value::Null) => {}
        Some(Value::Object(m)) => {
            for (k, v) in m {
                let s = match v {
                    Value::String(s) => s.clone(),
                    other => other.to_string(),
                };
                args.insert(k.clone(), s);
            }
        }
        Some(_) => return Err((id_ref(), "'args' is not an object".into())),
    }
    for req in tool.required_args() {
        if !args.contains_key(*req) {
            return Err((id_ref(), format!("{tool} requires argument '{req}'")));
        }
    }
    Ok(ToolCall { id: id_val, tool, args })
}

/// Extracts call blocks in order of appearance. Never fails: malformed
/// blocks are returned as [`ParsedBlock::Malformed`].
pub fn parse_tool_calls(text: &str) -> Vec<ParsedBlock> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].trim() != OPEN_TAG {
            i += 1;
            continue;
        }
        let n = out.len() + 1;
        let anon = || format!("malformed-{n}");
        let envelope = lines.get(i + 1).copied();
        let closed = lines.get(i + 2).is_some_and(|l| l.trim() == CLOSE_TAG);
        match (envelope, closed) {
            (Some(env), true) => {
                out.push(match parse_envelope(env.trim()) {
                    Ok(call) => ParsedBlock::Call(call),
                    Err((id, reason)) => ParsedBlock::Malformed {
                        id: id.unwrap_or_else(anon),
                        reason,
                    },
                });
                i += 3;
            }
            _ => {
                let id = envelope
                    .and_then(|e| serde_json::from_str::<Value>(e.trim()).ok())
                    .and_then(|v| v.get("id").and_then(Value::as_str).map(str::to_string));
                out.push(ParsedBlock::Malformed {
                    id: id.unwrap_or_else(anon),
                    reason: format!("block is not a single JSON line followed by {CLOSE_TAG}"),
                });
                i += 1;
            }
        }
    }
    out
}

/// Only the well-formed calls of a turn.
pub fn well_formed_calls(text: &str) -> Vec<ToolCall> {
    parse_tool_calls(text)
        .into_iter()
        .filter_map(|b| match b {
            ParsedBlock::Call(c) => Some(c),
            ParsedBlock::Malformed { .. } => None,
        })
        .collect()
}

/// Serializes calls back into wire blocks separated by newlines.
pub fn serialize_tool_calls(calls: &[ToolCall]) -> String {
    calls.iter().map(ToolCall::to_block).collect::<Vec<_>>().join("\n")
}

/// Routes tool calls to the verifier session, the search index or the
/// script executor.
#[derive(Clone)]
pub struct ToolHub {
    pub index: Option<Arc<SearchIndex>>,
    pub embedder: Option<Arc<dyn Embedder>>,
    pub executor: Option<ScriptExecutor>,
    pub payload_cap: usize,
    pub default_k: usize,
}

impl Default for ToolHub {
    fn default() -> Self {
        ToolHub {
            index: None,
            embedder: None,
            executor: None,
            payload_cap: DEFAULT_PAYLOAD_CAP,
            default_k: DEFAULT_SEARCH_K,
        }
    }
}

impl fmt::Debug for ToolHub {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolHub")
            .field("index_entries", &self.index.as_ref().map(|i| i.len()))
            .field("embedder", &self.embedder.as_ref().map(|e| e.dimension()))
            .field("executor", &self.executor)
            .field("payload_cap", &self.payload_cap)
            .finish()
    }
}

fn verifier_error(id: &str, e: VerifierError) -> ToolResult {
    ToolResult::new(id, ToolStatus::Error, e.to_string())
}

impl ToolHub {
    pub fn with_index(mut self, index: SearchIndex, embedder: Arc<dyn Embedder>) -> Self {
        self.index = Some(Arc::new(index));
        self.embedder = Some(embedder);
        self
    }

    pub fn with_executor(mut self, executor: ScriptExecutor) -> Self {
        self.executor = Some(executor);
        self
    }

    /// Executes one call. The result payload is capped.
    pub fn dispatch(&self, call: &ToolCall, session: &mut VerifierSession) -> ToolResult {
        let id = call.id.as_str();
        let result = match call.tool {
            ToolKind::VerifyLemma | ToolKind::VerifyFinal => {
                let source = call.arg("source").unwrap_or_default();
                let r = if call.tool == ToolKind::VerifyLemma {
                    session.submit_lemma(source)
                } else {
                    session.submit_final(source)
                };
                match r {
                    Ok(v) => {
                        let status = if v.ok {
                            ToolStatus::Ok
                        } else if v.timed_out() {
                            ToolStatus::Timeout
                        } else {
                            ToolStatus::Error
                        };
                        ToolResult::new(id, status, v.render())
                    }
                    Err(e) => verifier_error(id, e),
                }
            }
            ToolKind::SearchDecls => self.search(call),
            ToolKind::ExecScript => match &self.executor {
                Some(ex) => ex.run(id, call.arg("source").unwrap_or_default()),
                None => ToolResult::new(id, ToolStatus::Error, "no script executor configured"),
            },
        };
        result.capped(self.payload_cap)
    }

    fn search(&self, call: &ToolCall) -> ToolResult {
        let id = call.id.as_str();
        let (Some(index), Some(embedder)) = (&self.index, &self.embedder) else {
            return ToolResult::new(id, ToolStatus::Error, "no search index loaded (declaration index missing)");
        };
        let k = match call.arg("k").map(str::parse::<usize>) {
            None => self.default_k,
            Some(Ok(k)) if k >= 1 => k,
            Some(_) => return ToolResult::new(id, ToolStatus::Error, "argument 'k' must be a positive integer"),
        };
        let query = match embedder.embed(call.arg("query").unwrap_or_default()) {
            Ok(q) => q,
            Err(e) => return ToolResult::new(id, ToolStatus::Error, e.to_string()),
        };
        match index.search(&query, k) {
            Ok(hits) => {
                let lines: Vec<String> = hits
                    .iter()
                    .map(|h| format!("{} ({}) score={:.4}\n  {}", h.entry.name, h.entry.kind, h.score, h.entry.statement))
                    .collect();
                ToolResult::new(id, ToolStatus::Ok, lines.join("\n"))
            }
            Err(e) => ToolResult::new(id, ToolStatus::Error, e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verifier::{StatementHeader, VerifierConfig};

    #[test]
    fn parses_blocks_in_order() {
        assert!(parse_tool_calls("no calls here").is_empty());
        let text = "thinking...\n<<tool>>\n{\"id\":\"c1\",\"tool\":\"search_decls\",\"args\":{\"query\":\"Cauchy-Schwarz\",\"k\":5}}\n<</tool>>\nmore\n<<tool>>\n{\"id\":\"c2\",\"tool\":\"verify_lemma\",\"args\":{}}\n<</tool>>\n";
        let blocks = parse_tool_calls(text);
        assert_eq!(blocks.len(), 2);
        assert_eq!(
            blocks[0],
            ParsedBlock::Call(ToolCall::new(
                "c1",
                ToolKind::SearchDecls,
                &[("query", "Cauchy-Schwarz"), ("k", "5")]
            ))
        );
        match &blocks[1] {
            ParsedBlock::Malformed { id, reason } => {
                assert_eq!(id, "c2");
                assert!(reason.contains("source"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_tool_and_unterminated_blocks_are_malformed() {
        let blocks = parse_tool_calls("<<tool>>\n{\"id\":\"x\",\"tool\":\"rm_rf\",\"args\":{}}\n<</tool>>\n<<tool>>\n{\"id\":\"y\"");
        assert_eq!(blocks.len(), 2);
        assert!(blocks.iter().all(|b| matches!(b, ParsedBlock::Malformed { .. })));
        assert_eq!(blocks[0].error_result().unwrap().status, ToolStatus::Error);
    }

    #[test]
    fn truncation_respects_cap_and_char_boundaries() {
        let text = "é".repeat(100);
        let (t, cut) = truncate_payload(&text, 51);
        assert!(cut && t.len() <= 51);
        let (t, cut) = truncate_payload("short", 51);
        assert!(!cut && t == "short");
        let (t, _) = truncate_payload(&text, 5);
        assert!(t.len() <= 5);
    }

    #[test]
    fn dispatch_routes_to_subsystems() {
        let header = StatementHeader::new("theorem main : 2 + 3 = 5 := by sorry");
        let mut session = VerifierSession::open(header, &VerifierConfig::toy()).unwrap();
        let hub = ToolHub::default();
        let r = hub.dispatch(
            &ToolCall::new("a", ToolKind::VerifyLemma, &[("source", "lemma l : 4 + 1 = 5 := by eval")]),
            &mut session,
        );
        assert_eq!(r.status, ToolStatus::Ok);
        assert!(r.payload.contains("ok"));
        let r = hub.dispatch(&ToolCall::new("b", ToolKind::SearchDecls, &[("query", "x")]), &mut session);
        assert_eq!(r.status, ToolStatus::Error);
        assert!(r.payload.contains("index"));
        let r = hub.dispatch(&ToolCall::new("c", ToolKind::ExecScript, &[("source", "print(1)")]), &mut session);
        assert_eq!(r.status, ToolStatus::Error);
    }
}
