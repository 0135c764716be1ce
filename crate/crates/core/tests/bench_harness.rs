//! Benchmark runner: persistence, resume, isolation, metrics and the CLI.

mod common;

use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use common::*;
use leanflow::agent::{AgentBackend, BackendError, ChatMessage, ScriptedBackend};
use leanflow::bench::{
    compute_metrics, emit_report, hour_bucket, load_run, parse_problems, run_benchmark, run_benchmark_uniform,
    BenchError, BenchProblem, Mode, ProblemRecord, ProblemSet, ReportFormat, ResultsHeader, RunConfig, RESULTS_FILE,
};
use leanflow::workflow::AgentRoles;
use proptest::prelude::*;

fn problem(id: &str, goal: &str) -> BenchProblem {
    BenchProblem {
        id: id.into(),
        statement: format!("theorem {id} : {goal} := by sorry"),
        imports: String::new(),
        options: String::new(),
        nl_statement: None,
        nl_proof: None,
    }
}

fn toy_set() -> ProblemSet {
    ProblemSet {
        name: "toy".into(),
        problems: vec![
            problem("a", "2 + 2 = 4"),
            problem("b", "1 = 2"),
            problem("c", "(∀ n ∈ [0, 5], n * n ≤ 25)"),
        ],
        lean_version_tag: Some("v4.22.0".into()),
    }
}

fn agent_config(out: &Path) -> RunConfig {
    let mut rc = RunConfig::new(Mode::AgentOnly, out);
    rc.light_inference = (2, 2);
    rc
}

/// The comparable part of a record; wall times differ between runs.
fn key(r: &ProblemRecord) -> (String, bool, usize, usize, Option<String>) {
    (r.id.clone(), r.solved, r.trajectories_used, r.restarts_used, r.error.clone())
}

/// Counts conversations it is asked to continue, delegating to another backend.
struct Counting<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: AgentBackend> AgentBackend for Counting<B> {
    fn name(&self) -> &str {
        "counting"
    }

    fn generate(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(messages)
    }
}

/// Fails for statements mentioning `poison`, otherwise delegates.
struct Poisoned {
    poison: &'static str,
}

impl AgentBackend for Poisoned {
    fn name(&self) -> &str {
        "poisoned"
    }

    fn generate(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        if messages[0].content.contains(self.poison) {
            return Err(BackendError::Fatal("service refused".into()));
        }
        ConjBackend.generate(messages)
    }
}

#[test]
fn two_of_three_solved_and_logged() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_benchmark(&toy_set(), &agent_config(dir.path()), &uniform(ConjBackend), &quick_env()).unwrap();
    let ids: Vec<_> = r.records.iter().map(|r| r.id.as_str()).collect();
    assert_eq!(ids, ["a", "b", "c"]);
    assert_eq!(r.records.iter().map(|r| r.solved).collect::<Vec<_>>(), [true, false, true]);
    assert_eq!((r.metrics.solved_count, r.metrics.total), (2, 3));
    assert_eq!(r.records[1].trajectories_used, 4);
    for rec in &r.records {
        assert_eq!(rec.solve_seconds.is_some(), rec.solved);
    }
    let (header, logged) = load_run(dir.path()).unwrap();
    let header = header.unwrap();
    assert_eq!((header.problem_set.as_str(), header.mode), ("toy", Mode::AgentOnly));
    assert_eq!(header.lean_version.as_deref(), Some("v4.22.0"));
    assert_eq!(logged.len(), 3);
    assert!(dir.path().join("proofs/a.lean").exists());
    assert!(!dir.path().join("proofs/b.lean").exists());
    assert!(emit_report(&r.metrics, ReportFormat::Text).contains("2/3"));
}

#[test]
fn resume_does_no_new_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut rc = agent_config(dir.path());
    let first = run_benchmark(&toy_set(), &rc, &uniform(ConjBackend), &quick_env()).unwrap();
    rc.resume = true;
    let counting = Arc::new(Counting {
        inner: ConjBackend,
        calls: AtomicUsize::new(0),
    });
    let again = run_benchmark(&toy_set(), &rc, &AgentRoles::uniform(counting.clone()), &quick_env()).unwrap();
    assert_eq!(counting.calls.load(Ordering::SeqCst), 0);
    assert_eq!(again.resumed, ["a", "b", "c"]);
    assert_eq!(again.records, first.records);
}

#[test]
fn crash_resume_matches_uninterrupted_run() {
    let set = ProblemSet {
        name: "conj".into(),
        problems: conj_problems(6, 11)
            .into_iter()
            .map(|p| BenchProblem {
                id: p.id.clone(),
                statement: p.header.goal_statement.clone(),
                imports: String::new(),
                options: String::new(),
                nl_statement: None,
                nl_proof: None,
            })
            .collect(),
        lean_version_tag: None,
    };
    let full_dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::new(Mode::FullWorkflow, full_dir.path());
    let full = run_benchmark(&set, &cfg, &uniform(ConjBackend), &quick_env()).unwrap();
    assert_eq!(full.metrics.solved_count, 6);
    let log = std::fs::read_to_string(full_dir.path().join(RESULTS_FILE)).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    for cut in 0..=lines.len() {
        let dir = tempfile::tempdir().unwrap();
        // keep `cut` complete lines and half of the next one, as a kill would
        let mut partial: String = lines[..cut].iter().map(|l| format!("{l}\n")).collect();
        if let Some(next) = lines.get(cut) {
            partial.push_str(&next[..next.len() / 2]);
        }
        std::fs::write(dir.path().join(RESULTS_FILE), partial).unwrap();
        let mut rc = RunConfig::new(Mode::FullWorkflow, dir.path());
        rc.resume = true;
        let resumed = run_benchmark(&set, &rc, &uniform(ConjBackend), &quick_env()).unwrap();
        let a: Vec<_> = full.records.iter().map(key).collect();
        let b: Vec<_> = resumed.records.iter().map(key).collect();
        assert_eq!(a, b, "cut after {cut} lines");
        let (_, logged) = load_run(dir.path()).unwrap();
        assert_eq!(logged.len(), set.problems.len());
    }
}

#[test]
fn unreachable_backend_marks_every_record() {
    for mode in [Mode::AgentOnly, Mode::FullWorkflow, Mode::Curate] {
        let dir = tempfile::tempdir().unwrap();
        let mut rc = agent_config(dir.path());
        rc.mode = mode;
        let backend = Arc::new(ScriptedBackend::unreachable("down"));
        let r = run_benchmark_uniform(&toy_set(), &rc, backend, &quick_env()).unwrap();
        assert_eq!(r.records.len(), 3);
        for rec in &r.records {
            assert!(!rec.solved, "{mode:?} {}", rec.id);
            assert!(rec.error.is_some(), "{mode:?} {} has no error", rec.id);
        }
    }
}

#[test]
fn one_failing_problem_leaves_others_alone() {
    for mode in [Mode::AgentOnly, Mode::FullWorkflow] {
        let healthy_dir = tempfile::tempdir().unwrap();
        let mut rc = agent_config(healthy_dir.path());
        rc.mode = mode;
        let healthy = run_benchmark(&toy_set(), &rc, &uniform(ConjBackend), &quick_env()).unwrap();
        let sick_dir = tempfile::tempdir().unwrap();
        rc.out_dir = sick_dir.path().to_path_buf();
        rc.workers = 3;
        let sick = run_benchmark(&toy_set(), &rc, &uniform(Poisoned { poison: "2 + 2 = 4" }), &quick_env()).unwrap();
        assert!(!sick.records[0].solved);
        assert_eq!(key(&sick.records[1]), key(&healthy.records[1]), "{mode:?}");
        assert_eq!(key(&sick.records[2]), key(&healthy.records[2]), "{mode:?}");
    }
}

#[test]
fn parallel_workers_match_sequential() {
    let set = ProblemSet {
        name: "many".into(),
        problems: (0..12).map(|i| problem(&format!("q{i}"), &format!("{i} + {i} = {}", 2 * i))).collect(),
        lean_version_tag: None,
    };
    let run = |workers| {
        let dir = tempfile::tempdir().unwrap();
        let mut rc = agent_config(dir.path());
        rc.workers = workers;
        let r = run_benchmark(&set, &rc, &uniform(ConjBackend), &quick_env()).unwrap();
        let (_, logged) = load_run(dir.path()).unwrap();
        assert_eq!(logged.len(), 12);
        r.records.iter().map(key).collect::<Vec<_>>()
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn resume_rejects_a_different_run() {
    let dir = tempfile::tempdir().unwrap();
    run_benchmark(&toy_set(), &agent_config(dir.path()), &uniform(ConjBackend), &quick_env()).unwrap();
    let mut rc = agent_config(dir.path());
    rc.resume = true;
    rc.mode = Mode::Curate;
    let err = run_benchmark(&toy_set(), &rc, &uniform(ConjBackend), &quick_env()).unwrap_err();
    assert!(matches!(err, BenchError::ResumeMismatch { .. }), "{err}");
}

#[test]
fn problem_sets_reject_duplicates_and_read_metadata() {
    let text = r#"{"problem_set": "demo", "lean_version": "v4.22.0"}
{"id": "x", "statement": "theorem x : 1 = 1 := by sorry"}
{"id": "y", "statement": "theorem y : 2 = 2 := by sorry"}
"#;
    let (set, warnings) = parse_problems("file", text).unwrap();
    assert_eq!(set.name, "demo");
    assert_eq!(set.lean_version_tag.as_deref(), Some("v4.22.0"));
    assert_eq!(set.problems.len(), 2);
    assert!(warnings.is_empty());
    let dup = format!("{text}{{\"id\": \"x\", \"statement\": \"theorem x : 3 = 3 := by sorry\"}}\n");
    assert!(matches!(parse_problems("file", &dup), Err(BenchError::DuplicateId(_))));
}

#[test]
fn records_and_reports_round_trip_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let r = run_benchmark(&toy_set(), &agent_config(dir.path()), &uniform(ConjBackend), &quick_env()).unwrap();
    for rec in &r.records {
        let back: ProblemRecord = serde_json::from_str(&serde_json::to_string(rec).unwrap()).unwrap();
        assert_eq!(&back, rec);
    }
    let header: ResultsHeader =
        serde_json::from_str(std::fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap().lines().next().unwrap())
            .unwrap();
    assert_eq!(header.mode, Mode::AgentOnly);
    let json: serde_json::Value = serde_json::from_str(&emit_report(&r.metrics, ReportFormat::Json)).unwrap();
    assert_eq!(json["solved_count"], 2);
    assert_eq!(json["total"], 3);
    let csv = emit_report(&r.metrics, ReportFormat::Csv);
    assert!(csv.starts_with("hour,count"));
}

fn records_strategy() -> impl Strategy<Value = Vec<ProblemRecord>> {
    prop::collection::vec(prop::option::of(0.0f64..200_000.0), 0..300).prop_map(|times| {
        times
            .into_iter()
            .enumerate()
            .map(|(i, t)| ProblemRecord {
                id: format!("p{i}"),
                solved: t.is_some(),
                solve_seconds: t,
                trajectories_used: 1,
                restarts_used: 0,
                error: None,
                curation: None,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn metrics_are_consistent(records in records_strategy()) {
        let m = compute_metrics(&records);
        let solved = records.iter().filter(|r| r.solved).count();
        prop_assert_eq!(m.solved_count, solved);
        prop_assert_eq!(m.total, records.len());
        prop_assert!((0.0..=1.0).contains(&m.solve_rate));
        prop_assert_eq!((m.solve_rate * m.total as f64).round() as usize, solved);
        prop_assert_eq!(m.hour_histogram.values().sum::<usize>(), solved);
        for r in records.iter().filter(|r| r.solved) {
            let s = r.solve_seconds.unwrap();
            let b = hour_bucket(s);
            prop_assert!(b >= 1 && (b as f64) >= s / 3600.0 && (b == 1 || ((b - 1) as f64) < s / 3600.0));
        }
    }
}

#[test]
fn half_hour_lands_in_first_bucket() {
    assert_eq!(hour_bucket(1800.0), 1);
    assert_eq!(hour_bucket(3600.0), 1);
    assert_eq!(hour_bucket(3601.0), 2);
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_leanflow"))
}

#[test]
fn cli_prove_bench_report_and_search() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli()
        .args(["prove", fixture("workflows/depth3.lean").to_str().unwrap(), "--script"])
        .arg(fixture("workflows/depth3.json"))
        .arg("--out")
        .arg(dir.path().join("prove"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rec: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rec["solved"], true);

    let set_path = dir.path().join("set.jsonl");
    let lines: Vec<String> = toy_set().problems.iter().map(|p| serde_json::to_string(p).unwrap()).collect();
    std::fs::write(&set_path, lines.join("\n")).unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"backends": {"default": {"kind": "scripted", "script": {"name": "s", "rules": [{"calls": [{"tool": "verify_final", "source": "{{statement}} := by eval"}]}]}}},
            "budgets": {"light_inference": [1, 1]}}"#,
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let out = cli()
        .args(["bench", set_path.to_str().unwrap(), "--mode", "agent", "--config"])
        .arg(&config)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("solved 2/3"));

    let out = cli().args(["report", run_dir.to_str().unwrap(), "--format", "csv"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("hour,count"));

    let out = cli()
        .args(["index", "search", "add comm", "-k", "2", "--index"])
        .arg(fixture("mini.lfidx"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 2);

    let out = cli().args(["prove", "x.lean", "--budget", "0x3"]).output().unwrap();
    assert!(!out.status.success());
}
