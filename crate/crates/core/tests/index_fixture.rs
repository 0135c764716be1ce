//! The checked-in declaration index fixture, loaded the way a run loads it.

mod common;

use common::fixture;
use leanflow::config::{Config, IndexConfig};
use leanflow::tools::index::{DeclKind, IndexError, SearchIndex};
use leanflow::tools::{ToolCall, ToolKind, ToolStatus};
use leanflow::verifier::{StatementHeader, VerifierConfig, VerifierSession};

fn load() -> SearchIndex {
    SearchIndex::load_pinned(fixture("mini.lfidx"), "v4.22.0").unwrap()
}

#[test]
fn header_entries_and_kinds() {
    let ix = load();
    assert_eq!((ix.dimension, ix.commit_pin.as_str(), ix.len()), (4, "v4.22.0", 6));
    let kind = |n: &str| ix.entries.iter().find(|e| e.name == n).unwrap().kind;
    assert_eq!(kind("Nat.add_comm"), DeclKind::Theorem);
    assert_eq!(kind("Nat.succ_le"), DeclKind::Lemma);
    assert_eq!(kind("Nat.factorial"), DeclKind::Def);
    let add = ix.entries.iter().find(|e| e.name == "Nat.add_comm").unwrap();
    assert_eq!(add.statement, "theorem Nat.add_comm (n m : Nat) : n + m = m + n");
}

#[test]
fn drifted_vector_is_renormalized() {
    let ix = load();
    let le = ix.entries.iter().find(|e| e.name == "Nat.le_refl").unwrap();
    assert!((le.vector[0] - 0.8).abs() < 1e-6 && (le.vector[2] - 0.6).abs() < 1e-6);
}

#[test]
fn ranking_with_ties_by_name() {
    let ix = load();
    let hits = ix.search(&[1.0, 0.0, 0.0, 0.0], 6).unwrap();
    let names: Vec<&str> = hits.iter().map(|h| h.entry.name.as_str()).collect();
    assert_eq!(
        names,
        ["Nat.add_comm", "Nat.le_refl", "Nat.mul_comm", "Nat.dvd_refl", "Nat.factorial", "Nat.succ_le"]
    );
    let scores: Vec<f64> = hits.iter().map(|h| h.score).collect();
    for (got, want) in scores.iter().zip([1.0, 0.8, 0.6, 0.0, 0.0, 0.0]) {
        assert!((got - want).abs() < 1e-6, "{scores:?}");
    }
    assert_eq!(ix.search(&[0.0, 0.0, 0.0, 1.0], 1).unwrap()[0].entry.name, "Nat.dvd_refl");
    assert!(matches!(ix.search(&[1.0, 0.0], 1), Err(IndexError::DimensionMismatch { .. })));
}

#[test]
fn pin_mismatch_is_reported() {
    let err = SearchIndex::load_pinned(fixture("mini.lfidx"), "v4.9.0").unwrap_err();
    assert!(matches!(err, IndexError::PinMismatch { .. }), "{err}");
    let cfg = IndexConfig {
        path: fixture("mini.lfidx"),
        commit_pin: Some("v4.9.0".into()),
        embedder: None,
    };
    assert!(cfg.load().is_err());
}

#[test]
fn config_loads_index_relative_to_its_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(fixture("mini.lfidx"), dir.path().join("decls.lfidx")).unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(&path, r#"{"index": {"path": "decls.lfidx", "commit_pin": "v4.22.0"}}"#).unwrap();
    let cfg = Config::load(&path).unwrap();
    let hub = cfg.hub().unwrap();
    let call = ToolCall::new("s", ToolKind::SearchDecls, &[("query", "add comm"), ("k", "3")]);
    let mut session = VerifierSession::open(
        StatementHeader::new("theorem t : 1 = 1 := by sorry"),
        &VerifierConfig::toy(),
    )
    .unwrap();
    let r = hub.dispatch(&call, &mut session);
    assert_eq!(r.status, ToolStatus::Ok, "{}", r.payload);
    assert_eq!(r.payload.lines().filter(|l| l.contains("score=")).count(), 3);
}
