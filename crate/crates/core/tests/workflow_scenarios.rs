//! Recursive decomposition search on scripted scenarios and generated
//! conjunction problems.

mod common;

use common::*;
use leanflow::agent::{ProblemInput, ProverEnv};
use leanflow::lean_text::split_declarations;
use leanflow::verifier::VerifierSession;
use leanflow::workflow::{
    restart_with_pool, run_workflow, NodeState, SearchTree, WorkflowConfig, WorkflowResult,
};

fn verifies_fresh(p: &ProblemInput, doc: &str) -> bool {
    let mut s = VerifierSession::open(p.header.clone(), &quick_env().verifier).unwrap();
    s.verify_document(doc).unwrap().ok
}

fn trees(r: &WorkflowResult) -> impl Iterator<Item = &SearchTree> {
    r.earlier_passes.iter().chain(std::iter::once(&r.tree))
}

/// Structural invariants every finished run must satisfy.
fn check_invariants(p: &ProblemInput, r: &WorkflowResult, cfg: &WorkflowConfig) {
    let (n, m) = cfg.lemma_budget;
    for t in trees(r) {
        assert!(t.max_depth() <= cfg.max_depth, "{}: depth {}", p.id, t.max_depth());
        assert!(t.max_cumulative_depth() <= 2 * cfg.max_depth);
        for node in &t.nodes {
            assert!(
                matches!(
                    node.state,
                    NodeState::Proved | NodeState::Disproved | NodeState::Failed | NodeState::Decomposed
                ),
                "{}: node {} left in {:?}",
                p.id,
                node.name,
                node.state
            );
            if node.state == NodeState::Decomposed {
                assert!(!node.children.is_empty(), "decomposed node without children");
            }
            assert!(node.attempts_used <= n * m);
        }
    }
    assert_eq!(r.trajectories_used, trees(r).map(SearchTree::trajectories_used).sum::<usize>());
    // every pool entry re-verifies against the header and the entries before it
    let env = quick_env();
    for (i, entry) in r.pool.entries.iter().enumerate() {
        let mut e: ProverEnv = env.clone();
        e.preload = r.pool.entries[..i].iter().map(|x| x.source.clone()).collect();
        let mut s = e.open_session(&p.header).unwrap();
        for d in split_declarations(&entry.source) {
            assert!(s.submit_lemma(&d.text).unwrap().ok, "pool entry {} does not re-verify", entry.name);
        }
    }
    if r.solved {
        assert!(verifies_fresh(p, r.final_document.as_deref().unwrap()), "{}", p.id);
    }
}

#[test]
fn refine_after_disproof() {
    let p = scenario_problem("refine");
    let cfg = WorkflowConfig::default();
    let r = run_workflow(&p, &scripted_roles("refine"), &cfg, &quick_env()).unwrap();
    assert!(r.solved, "{:?}", r.error);
    check_invariants(&p, &r, &cfg);
    assert_eq!(r.restarts_used, 0);
    assert_eq!(r.tree.root().refines_used, 1);
    let bad = r.tree.nodes.iter().find(|n| n.name == "bad").unwrap();
    assert_eq!(bad.state, NodeState::Disproved);
    assert!(bad.discarded);
    let doc = r.final_document.unwrap();
    assert!(!doc.contains("2 + 2 = 5"));
}

#[test]
fn depth_three_recursion() {
    let p = scenario_problem("depth3");
    let cfg = WorkflowConfig::default();
    let r = run_workflow(&p, &scripted_roles("depth3"), &cfg, &quick_env()).unwrap();
    assert!(r.solved, "{:?}", r.error);
    check_invariants(&p, &r, &cfg);
    assert_eq!(r.tree.max_depth(), 3);
    let decomposed: Vec<&str> = r
        .tree
        .nodes
        .iter()
        .filter(|n| n.state == NodeState::Decomposed)
        .map(|n| n.name.as_str())
        .collect();
    assert_eq!(decomposed, ["main", "d1b", "d2b"]);
}

#[test]
fn depth_limit_stops_recursion() {
    let p = scenario_problem("depth3");
    let cfg = WorkflowConfig {
        max_depth: 2,
        restart_enabled: false,
        ..WorkflowConfig::default()
    };
    let r = run_workflow(&p, &scripted_roles("depth3"), &cfg, &quick_env()).unwrap();
    assert!(!r.solved);
    check_invariants(&p, &r, &cfg);
    let d2b = r.tree.nodes.iter().find(|n| n.name == "d2b").unwrap();
    assert_eq!((d2b.depth, d2b.state), (2, NodeState::Failed));
}

#[test]
fn solved_only_after_restart() {
    let p = scenario_problem("restart");
    let cfg = WorkflowConfig::default();
    let r = run_workflow(&p, &scripted_roles("restart"), &cfg, &quick_env()).unwrap();
    assert!(r.solved, "{:?}", r.error);
    check_invariants(&p, &r, &cfg);
    assert_eq!(r.restarts_used, 1);
    assert_eq!(r.earlier_passes.len(), 1);
    assert_eq!(r.earlier_passes[0].root().state, NodeState::Failed);
    // the lemma proved in the first pass is reused, not proved again
    let reused = r.tree.nodes.iter().find(|n| n.name.starts_with("p1")).unwrap();
    assert_eq!(reused.attempts_used, 0);
    assert_eq!(r.pool.find("lemma p1 : 2 + 2 = 4").unwrap().pass, 0);
    assert!(r.tree.nodes.iter().all(|n| n.cumulative_depth == n.depth + cfg.max_depth));
}

#[test]
fn restart_disabled_leaves_problem_unsolved() {
    let p = scenario_problem("restart");
    let cfg = WorkflowConfig {
        restart_enabled: false,
        ..WorkflowConfig::default()
    };
    let r = run_workflow(&p, &scripted_roles("restart"), &cfg, &quick_env()).unwrap();
    assert!(!r.solved);
    assert_eq!(r.restarts_used, 0);
    check_invariants(&p, &r, &cfg);
}

#[test]
fn explicit_restart_with_pool() {
    let p = scenario_problem("restart");
    let cfg = WorkflowConfig {
        restart_enabled: false,
        ..WorkflowConfig::default()
    };
    let roles = scripted_roles("restart");
    let first = run_workflow(&p, &roles, &cfg, &quick_env()).unwrap();
    assert!(!first.solved);
    let second = restart_with_pool(&p, &first.pool, &roles, &cfg, &quick_env()).unwrap();
    assert!(second.solved, "{:?}", second.error);
    assert_eq!(second.restarts_used, 1);
    assert!(second.pool.len() >= first.pool.len());
    assert!(verifies_fresh(&p, second.final_document.as_deref().unwrap()));
}

#[test]
fn generated_conjunctions() {
    let cfg = WorkflowConfig::default();
    for p in conj_problems(8, 7) {
        let r = run_workflow(&p, &uniform(ConjBackend), &cfg, &quick_env()).unwrap();
        assert!(r.solved, "{}: {:?}", p.id, r.error);
        check_invariants(&p, &r, &cfg);
    }
}

#[test]
fn wall_clock_limit_is_enforced() {
    let p = scenario_problem("depth3");
    let cfg = WorkflowConfig {
        wall_clock_limit_s: Some(0.0),
        ..WorkflowConfig::default()
    };
    match run_workflow(&p, &scripted_roles("depth3"), &cfg, &quick_env()) {
        Ok(r) => assert!(!r.solved),
        Err(e) => assert!(e.to_string().contains("wall"), "{e}"),
    }
}

#[test]
fn snapshot_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tree.json");
    let cfg = WorkflowConfig {
        snapshot_path: Some(path.clone()),
        ..WorkflowConfig::default()
    };
    let p = scenario_problem("depth3");
    let r = run_workflow(&p, &scripted_roles("depth3"), &cfg, &quick_env()).unwrap();
    assert!(r.solved);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert!(v.is_object() || v.is_array());
}

