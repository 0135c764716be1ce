//! The Lean REPL adapter driven by a fake REPL process.

use std::path::PathBuf;

use leanflow::verifier::repl::ReplConfig;
use leanflow::verifier::{BackendKind, StatementHeader, VerifierConfig, VerifierError, VerifierSession};

fn config(timeout_s: f64) -> VerifierConfig {
    let script = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/fake_repl.py");
    let mut repl = ReplConfig::new("python3");
    repl.args = vec![script.to_string_lossy().into_owned()];
    repl.startup_timeout_s = 10.0;
    VerifierConfig {
        kind: BackendKind::LeanRepl,
        repl: Some(repl),
        timeout_s,
        ..VerifierConfig::toy()
    }
}

fn header() -> StatementHeader {
    StatementHeader {
        imports: "import Mathlib".into(),
        options: String::new(),
        goal_statement: "theorem main_goal (n : Nat) : n + 0 = n := by sorry".into(),
    }
}

#[test]
fn lemmas_and_final_through_repl() {
    let mut s = VerifierSession::open(header(), &config(10.0)).unwrap();
    assert!(s.submit_lemma("lemma a : 1 = 1 := by rfl").unwrap().ok);
    let bad = s.submit_lemma("lemma b : 1 = 2 := by\n  FAIL").unwrap();
    assert!(!bad.ok);
    assert_eq!(bad.messages[0].position.map(|p| p.0), Some(2));
    assert_eq!(s.cache().len(), 1);
    let r = s.submit_final("theorem main_goal (n : Nat) : n + 0 = n := by simp").unwrap();
    assert!(r.ok);
    let doc = s.assembled_document().unwrap();
    assert!(doc.starts_with("import Mathlib"));
    assert!(doc.contains("lemma a"));
}

#[test]
fn timeout_respawns_and_replays() {
    let mut s = VerifierSession::open(header(), &config(1.0)).unwrap();
    assert!(s.submit_lemma("lemma a : 1 = 1 := by rfl").unwrap().ok);
    let slow = s.submit_lemma("lemma slow : 2 = 2 := by\n  SLEEP").unwrap();
    assert!(!slow.ok);
    assert!(slow.messages.iter().any(|m| m.text.starts_with("timeout")));
    // the process was killed; the next check restarts it with the cache replayed
    assert!(s.submit_lemma("lemma c : 3 = 3 := by rfl").unwrap().ok);
    assert_eq!(s.cache().iter().map(|r| r.name.as_str()).collect::<Vec<_>>(), ["a", "c"]);
}

#[test]
fn crashed_process_is_reported() {
    let mut s = VerifierSession::open(header(), &config(5.0)).unwrap();
    let r = s.submit_lemma("lemma boom : 1 = 1 := by\n  CRASH");
    assert!(matches!(r, Err(VerifierError::BackendUnavailable(_))));
}

#[test]
fn missing_repl_command() {
    let mut cfg = config(5.0);
    cfg.repl.as_mut().unwrap().command = "/nonexistent/repl".into();
    assert!(matches!(
        VerifierSession::open(header(), &cfg),
        Err(VerifierError::BackendUnavailable(_))
    ));
}
