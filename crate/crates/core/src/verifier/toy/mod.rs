//! Deterministic in-process verifier over a small Lean-like language.

pub mod check;
pub mod syntax;

use std::time::Instant;

pub use check::{alpha_eq, decide, Budget, DeclStatus, Evaluation, Fact};
pub use syntax::{parse_decls, parse_prop, Decl, ParseError, Prop};

use super::{
    BackendKind, CheckOptions, CheckOutcome, Checkpoint, DeclOutcome, LemmaStatus, Message, Severity,
    StatementHeader, VerifierBackend, VerifierError, VerifyResult,
};
use check::{check_decl, DEFAULT_STEP_LIMIT, TIMEOUT_MARKER};

/// Toy backend: the context is a list of proved facts.
#[derive(Debug, Default, Clone)]
pub struct ToyBackend {
    facts: Vec<Fact>,
    step_limit: u64,
}

impl ToyBackend {
    pub fn new() -> Self {
        ToyBackend {
            facts: Vec::new(),
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }

    pub fn with_step_limit(step_limit: u64) -> Self {
        ToyBackend {
            facts: Vec::new(),
            step_limit,
        }
    }
}

/// Checks every declaration of `source` in order against `context`; later
/// declarations may cite earlier ones.
pub fn check_source(
    source: &str,
    context: &[Fact],
    budget: &mut Budget,
) -> (Vec<Message>, Vec<DeclOutcome>, Vec<Fact>, bool) {
    let decls = match parse_decls(source) {
        Ok(d) => d,
        Err(e) => {
            let mut m = Message::error(format!("parse error: {}", e.message));
            if let Some(p) = e.pos {
                m = m.at(p.line, p.column);
            }
            return (vec![m], Vec::new(), Vec::new(), false);
        }
    };
    let mut facts = context.to_vec();
    let mut added = Vec::new();
    let mut messages = Vec::new();
    let mut outcomes = Vec::new();
    let mut timed_out = false;
    for d in decls {
        if facts.iter().any(|f| f.name == d.name) {
            messages.push(
                Message::error(format!("'{}' has already been declared", d.name)).at(d.pos.line, d.pos.column),
            );
            outcomes.push(DeclOutcome {
                name: d.name.clone(),
                status: LemmaStatus::Failed,
            });
            continue;
        }
        let status = match check_decl(&d, &facts, budget) {
            Ok(DeclStatus::Proved) => LemmaStatus::Proved,
            Ok(DeclStatus::SorryAdmitted) => {
                messages.push(Message {
                    severity: Severity::Warning,
                    position: Some((d.pos.line, d.pos.column)),
                    text: "declaration uses 'sorry'".into(),
                });
                LemmaStatus::SorryAdmitted
            }
            Err(e) => {
                if e.message == TIMEOUT_MARKER {
                    timed_out = true;
                }
                messages.push(Message::error(e.message).at(e.pos.line, e.pos.column));
                LemmaStatus::Failed
            }
        };
        outcomes.push(DeclOutcome {
            name: d.name.clone(),
            status,
        });
        // failed declarations stay out of scope for later ones
        if status != LemmaStatus::Failed {
            let fact = Fact {
                prop: d.full_type(),
                name: d.name,
            };
            facts.push(fact.clone());
            added.push(fact);
        }
    }
    (messages, outcomes, added, timed_out)
}

impl VerifierBackend for ToyBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Toy
    }

    fn initialize(&mut self, header: &StatementHeader) -> Result<(), VerifierError> {
        let decls = parse_decls(&header.goal_statement)
            .map_err(|e| VerifierError::InvalidHeader(format!("goal statement: {e}")))?;
        if decls.len() != 1 {
            return Err(VerifierError::InvalidHeader(
                "goal statement must be a single declaration".into(),
            ));
        }
        self.facts.clear();
        Ok(())
    }

    fn check(&mut self, source: &str, opts: CheckOptions) -> Result<CheckOutcome, VerifierError> {
        let mut budget = Budget::new(self.step_limit, Some(Instant::now() + opts.timeout));
        let (messages, decls, added, timed_out) = check_source(source, &self.facts, &mut budget);
        let mut next = self.facts.clone();
        next.extend(added);
        Ok(CheckOutcome {
            messages,
            decls,
            timed_out,
            checkpoint: Checkpoint::Toy(next),
        })
    }

    fn commit(&mut self, checkpoint: Checkpoint) -> Result<(), VerifierError> {
        match checkpoint {
            Checkpoint::Toy(facts) => {
                self.facts = facts;
                Ok(())
            }
            Checkpoint::Repl(_) => Err(VerifierError::Protocol(
                "toy backend received a REPL checkpoint".into(),
            )),
        }
    }
}

/// Checks a claim with a tactic script against context lemmas taken as
/// already proved.
pub fn toy_verify(statement: &str, proof: &str, context: &[String]) -> Result<VerifyResult, ParseError> {
    let start = Instant::now();
    let mut facts = Vec::new();
    for src in context {
        for d in parse_decls(src)? {
            facts.push(Fact {
                prop: d.full_type(),
                name: d.name,
            });
        }
    }
    parse_prop(statement)?;
    let body: Vec<String> = proof.lines().map(|l| format!("  {}", l.trim())).collect();
    let source = format!("theorem toy_goal : {statement} := by\n{}", body.join("\n"));
    // surface grammar errors as errors rather than failed results
    parse_decls(&source)?;
    let mut budget = Budget::new(DEFAULT_STEP_LIMIT, None);
    let (messages, decls, _, _) = check_source(&source, &facts, &mut budget);
    let ok = decls.iter().all(|d| d.status == LemmaStatus::Proved)
        && !messages.iter().any(|m| m.severity == Severity::Error);
    Ok(VerifyResult {
        ok,
        messages,
        elapsed: start.elapsed().as_secs_f64(),
        uses_banned_tactic: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direct_evaluation() {
        assert!(toy_verify("1 + 1 = 2", "eval", &[]).unwrap().ok);
        assert!(!toy_verify("1 + 1 = 3", "eval", &[]).unwrap().ok);
    }

    #[test]
    fn conjunction_from_context() {
        let ctx = vec![
            "lemma p : 1 < 2 := by eval".to_string(),
            "lemma q : 3 = 3 := by eval".to_string(),
        ];
        assert!(toy_verify("1 < 2 ∧ 3 = 3", "exact ⟨p, q⟩", &ctx).unwrap().ok);
        let r = toy_verify("1 < 2 ∧ 3 = 3", "exact ⟨p, q⟩", &ctx[..1]).unwrap();
        assert!(!r.ok);
        assert!(r.messages[0].text.contains("'q'"));
    }

    #[test]
    fn truncated_natural_subtraction() {
        assert!(toy_verify("(2 : ℕ) - (3 : ℕ) = 0", "eval", &[]).unwrap().ok);
        assert!(!toy_verify("2 - 3 = 0", "eval", &[]).unwrap().ok);
    }

    #[test]
    fn grammar_errors_are_parse_errors() {
        assert!(toy_verify("1 + = 2", "eval", &[]).is_err());
        assert!(toy_verify("1 + 1 = 2", "simp [foo]", &[]).is_err());
    }

    #[test]
    fn modus_ponens_step() {
        let ctx = vec!["lemma f (h : 1 = 1) : 2 = 2 := by eval".to_string(), "lemma a : 1 = 1 := by eval".to_string()];
        assert!(toy_verify("2 = 2", "exact f a", &ctx).unwrap().ok);
    }
}
