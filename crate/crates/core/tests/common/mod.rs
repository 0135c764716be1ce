//! Backends and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use leanflow::agent::{AgentBackend, BackendError, ChatMessage, ProblemInput, ProverEnv, RetryPolicy, ScriptedBackend};
use leanflow::lean_text::{decl_parts, first_lean_block};
use leanflow::tools::{ToolCall, ToolKind};
use leanflow::verifier::StatementHeader;
use leanflow::workflow::AgentRoles;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub const JUDGE_OK: &str = r#"{"correctness": "Correct", "reason": "checked", "proof_sketch": "evaluate"}"#;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn quick_env() -> ProverEnv {
    ProverEnv {
        retry: RetryPolicy::immediate(1),
        ..ProverEnv::default()
    }
}

fn first(messages: &[ChatMessage]) -> &str {
    messages.first().map(|m| m.content.as_str()).unwrap_or("")
}

/// Top-level conjuncts of a goal written without parentheses around `∧`.
pub fn conjuncts(goal: &str) -> Vec<String> {
    goal.split(" ∧ ").map(|s| s.trim().to_string()).collect()
}

/// Plays every role for goals that are conjunctions of closed facts: the
/// prover only closes single facts, the sketcher splits off the first
/// conjunct, the judge accepts everything.
pub struct ConjBackend;

impl AgentBackend for ConjBackend {
    fn name(&self) -> &str {
        "conj"
    }

    fn generate(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let text = first(messages);
        if text.contains("Mathematically Correct") {
            return Ok(JUDGE_OK.into());
        }
        let parts = decl_parts(first_lean_block(text).unwrap_or(""));
        let conj = conjuncts(&parts.goal);
        if text.contains("Turn the informal proof") {
            if conj.len() < 2 {
                return Ok("Nothing to split.".into());
            }
            let base = parts.name.unwrap_or_else(|| "main".into());
            return Ok(format!(
                "```lean\nlemma {base}_h : {} := by sorry\nlemma {base}_t : {} := by sorry\n{} := by\n  exact ⟨{base}_h, {base}_t⟩\n```",
                conj[0],
                conj[1..].join(" ∧ "),
                parts.signature
            ));
        }
        if text.contains("Prove the following theorem") {
            if conj.len() != 1 {
                return Err(BackendError::Fatal("conjunctions are left to decomposition".into()));
            }
            let src = format!("{} := by eval", parts.signature);
            return Ok(ToolCall::new("c1", ToolKind::VerifyFinal, &[("source", &src)]).to_block());
        }
        Ok("Check each conjunct by computation.".into())
    }
}

/// Replies adversarially whatever the prompt.
#[derive(Clone, Copy, Debug)]
pub enum Adversary {
    /// Very long replies.
    Verbose,
    /// Many failing calls per reply.
    CallSpam,
    /// Broken call blocks mixed with valid ones.
    Malformed,
    /// Alternates long text and call bursts.
    Mixed,
}

impl AgentBackend for Adversary {
    fn name(&self) -> &str {
        "adversary"
    }

    fn generate(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let turn = messages.len();
        let spam = |n: usize| -> String {
            (0..n)
                .map(|i| {
                    let src = format!("lemma x{turn}_{i} : 1 = 2 := by eval");
                    ToolCall::new(format!("c{turn}_{i}"), ToolKind::VerifyLemma, &[("source", &src)]).to_block()
                })
                .collect::<Vec<_>>()
                .join("\n")
        };
        let verbose = |words: usize| "lorem ipsum dolor ".repeat(words / 3);
        Ok(match self {
            Adversary::Verbose => verbose(12_000),
            Adversary::CallSpam => spam(12),
            Adversary::Malformed => format!(
                "<<tool>>\n{{\"id\": \"bad\", \"tool\": \"nope\"}}\n<</tool>>\n<<tool>>\nnot json\n<</tool>>\n{}",
                spam(3)
            ),
            Adversary::Mixed => {
                if turn % 2 == 0 {
                    format!("{}\n{}", verbose(3_000), spam(5))
                } else {
                    spam(9)
                }
            }
        })
    }
}

pub fn uniform(backend: impl AgentBackend + 'static) -> AgentRoles {
    AgentRoles::uniform(Arc::new(backend))
}

pub fn scripted_roles(script: &str) -> AgentRoles {
    uniform(ScriptedBackend::from_file(fixture(&format!("workflows/{script}.json"))).unwrap())
}

pub fn scenario_problem(name: &str) -> ProblemInput {
    let stmt = std::fs::read_to_string(fixture(&format!("workflows/{name}.lean"))).unwrap();
    ProblemInput::new(name, StatementHeader::new(stmt.trim()))
}

/// A true closed fact without `∧`.
pub fn random_fact(rng: &mut StdRng) -> String {
    let a: i64 = rng.random_range(0..20);
    let b: i64 = rng.random_range(0..20);
    match rng.random_range(0..5) {
        0 => format!("{a} + {b} = {}", a + b),
        1 => format!("{a} * {b} = {}", a * b),
        2 => format!("{a} < {}", a + b + 1),
        3 => format!("(∀ n ∈ [0, {a}], n * n ≤ {})", a * a),
        _ => format!("(∃ n ∈ [0, {}], n + {a} = {})", b + 1, a + b),
    }
}

/// Conjunctions of 2 to 5 true facts, solved by [`ConjBackend`].
pub fn conj_problems(count: usize, seed: u64) -> Vec<ProblemInput> {
    let mut rng = StdRng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let k = 2 + i % 4;
            let goal: Vec<String> = (0..k).map(|_| random_fact(&mut rng)).collect();
            let stmt = format!("theorem p{i} : {} := by sorry", goal.join(" ∧ "));
            ProblemInput::new(format!("p{i}"), StatementHeader::new(stmt))
        })
        .collect()
}
