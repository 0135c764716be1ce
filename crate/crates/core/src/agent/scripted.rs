//! Deterministic backend driven by a rule fixture.
//!
//! A fixture is JSON:
//!
//! ```json
//! {"name": "solver",
//!  "rules": [{"turn": 1, "contains": "2 + 3",
//!             "calls": [{"tool": "verify_final", "source": "{{statement}} := by eval"}]}],
//!  "default": "I give up."}
//! ```
//!
//! The first rule whose conditions all hold supplies the reply. `turn` is
//! the 1-based index of the reply within the conversation, `contains` and
//! `absent` test the first message, `last_contains` the last one. `fail`
//! answers with a retryable transport error, `fatal` with a non-retryable
//! one. Replies and call arguments may use `{{statement}}` (the target's
//! signature), `{{goal}}` (its proposition), `{{name}}`, `{{block}}` (the
//! first Lean code block of the first message) and `{{turn}}`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::backend::{AgentBackend, BackendError, ChatMessage, ChatRole};
use crate::lean_text::{decl_parts, first_lean_block};
use crate::tools::{ToolCall, ToolKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCall {
    pub tool: ToolKind,
    #[serde(flatten)]
    pub args: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptRule {
    pub turn: Option<usize>,
    pub contains: Option<String>,
    pub absent: Option<String>,
    pub last_contains: Option<String>,
    pub reply: String,
    pub calls: Vec<ScriptedCall>,
    /// Answer with a transport error instead of text.
    pub fail: bool,
    /// Answer with a non-retryable error.
    pub fatal: bool,
    /// How many times the rule may fire; unlimited when absent.
    pub max_uses: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default: Option<String>,
    /// Fail with a transport error when no rule matches.
    #[serde(default)]
    pub fail_default: bool,
}

#[derive(Debug)]
pub struct ScriptedBackend {
    script: Script,
    uses: Mutex<Vec<usize>>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        let n = script.rules.len();
        ScriptedBackend {
            script,
            uses: Mutex::new(vec![0; n]),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(text)?))
    }

    pub fn from_file(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        Ok(Self::from_json(&std::fs::read_to_string(path)?)?)
    }

    /// A backend that always answers with `reply`.
    pub fn constant(name: &str, reply: &str) -> Self {
        Self::new(Script {
            name: name.into(),
            rules: Vec::new(),
            default: Some(reply.into()),
            fail_default: false,
        })
    }

    /// A backend whose every call fails with a transport error.
    pub fn unreachable(name: &str) -> Self {
        Self::new(Script {
            name: name.into(),
            fail_default: true,
            ..Script::default()
        })
    }

    pub fn script(&self) -> &Script {
        &self.script
    }
}

struct Vars {
    statement: String,
    goal: String,
    name: String,
    block: String,
    turn: usize,
}

impl Vars {
    fn of(messages: &[ChatMessage]) -> Self {
        let first = messages.first().map(|m| m.content.as_str()).unwrap_or("");
        let block = first_lean_block(first).unwrap_or("").to_string();
        let parts = decl_parts(&block);
        Vars {
            statement: parts.signature,
            goal: parts.goal,
            name: parts.name.unwrap_or_default(),
            block,
            turn: messages.iter().filter(|m| m.role == ChatRole::Assistant).count() + 1,
        }
    }

    fn apply(&self, text: &str) -> String {
        text.replace("{{statement}}", &self.statement)
            .replace("{{goal}}", &self.goal)
            .replace("{{name}}", &self.name)
            .replace("{{block}}", &self.block)
            .replace("{{turn}}", &self.turn.to_string())
    }
}

fn matches(rule: &ScriptRule, messages: &[ChatMessage], turn: usize) -> bool {
    let first = messages.first().map(|m| m.content.as_str()).unwrap_or("");
    let last = messages.last().map(|m| m.content.as_str()).unwrap_or("");
    rule.turn.is_none_or(|t| t == turn)
        && rule.contains.as_deref().is_none_or(|s| first.contains(s))
        && rule.absent.as_deref().is_none_or(|s| !first.contains(s))
        && rule.last_contains.as_deref().is_none_or(|s| last.contains(s))
}

impl AgentBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.script.name
    }

    fn generate(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let vars = Vars::of(messages);
        let chosen = {
            let mut uses = self.uses.lock().expect("script lock");
            let mut chosen = None;
            for (i, rule) in self.script.rules.iter().enumerate() {
                if rule.max_uses.is_some_and(|m| uses[i] >= m) || !matches(rule, messages, vars.turn) {
                    continue;
                }
                uses[i] += 1;
                chosen = Some(rule);
                break;
            }
            chosen
        };
        let Some(rule) = chosen else {
            if self.script.fail_default {
                return Err(BackendError::Transport(format!("{}: scripted outage", self.script.name)));
            }
            return self
                .script
                .default
                .as_deref()
                .map(|d| vars.apply(d))
                .ok_or_else(|| BackendError::Fatal(format!("{}: no scripted reply for turn {}", self.script.name, vars.turn)));
        };
        if rule.fail {
            return Err(BackendError::Transport(format!("{}: scripted outage", self.script.name)));
        }
        if rule.fatal {
            return Err(BackendError::Fatal(format!("{}: scripted refusal", self.script.name)));
        }
        let mut text = vars.apply(&rule.reply);
        for (i, c) in rule.calls.iter().enumerate() {
            let args: BTreeMap<String, String> = c.args.iter().map(|(k, v)| (k.clone(), vars.apply(v))).collect();
            let call = ToolCall {
                id: format!("t{}c{}", vars.turn, i + 1),
                tool: c.tool,
                args,
            };
            if !text.is_empty() {
                text.push('\n');
            }
            text.push_str(&call.to_block());
        }
        Ok(text)
    }
}
