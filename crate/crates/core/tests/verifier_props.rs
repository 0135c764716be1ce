//! Session invariants of the toy verifier under random submission sequences.

mod common;

use common::random_fact;
use leanflow::verifier::{scan_banned_tactics, StatementHeader, VerifierConfig, VerifierSession};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

const GOAL: &str = "theorem goal : 3 + 4 = 7 := by sorry";

fn session() -> VerifierSession {
    VerifierSession::open(StatementHeader::new(GOAL), &VerifierConfig::toy()).unwrap()
}

/// A mix of valid, false, sorry, banned and citing lemmas.
fn submissions(seed: u64) -> Vec<String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::new();
    for i in 0..rng.random_range(1..15) {
        let fact = random_fact(&mut rng);
        out.push(match rng.random_range(0..6) {
            0 => format!("lemma l{i} : {fact} := by sorry"),
            1 => format!("lemma l{i} : {} = 0 := by eval", rng.random_range(1..9)),
            2 => format!("lemma l{i} : {fact} := by native_decide"),
            3 if i > 0 => {
                let j = rng.random_range(0..i);
                format!("lemma l{i} : 1 + 1 = 2 := by\n  have h := l{j}\n  eval")
            }
            _ => format!("lemma l{i} : {fact} := by eval"),
        });
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cache_is_append_only(seed in any::<u64>()) {
        let mut s = session();
        for src in submissions(seed) {
            let before = s.cache().to_vec();
            let r = s.submit_lemma(&src);
            let after = s.cache();
            match r {
                Ok(v) if v.ok => {
                    prop_assert_eq!(after.len(), before.len() + 1);
                    prop_assert_eq!(&after[..before.len()], before.as_slice());
                    prop_assert_eq!(after.last().unwrap().sequence_index, before.len());
                }
                _ => prop_assert_eq!(after, before.as_slice()),
            }
        }
    }

    #[test]
    fn replay_is_deterministic(seed in any::<u64>()) {
        let run = || {
            let mut s = session();
            let results: Vec<_> = submissions(seed)
                .iter()
                .map(|src| s.submit_lemma(src).map(|mut r| { r.elapsed = 0.0; r }).map_err(|e| e.to_string()))
                .collect();
            let cache: Vec<_> = s.cache().iter().map(|r| (r.name.clone(), r.source.clone(), r.status)).collect();
            (results, cache)
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn citation_needs_the_lemma_in_context(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let fact = random_fact(&mut rng);
        let user = format!("lemma user : {fact} := by exact base");
        let mut with = session();
        let base = format!("lemma base : {fact} := by eval");
        prop_assert!(with.submit_lemma(&base).unwrap().ok);
        prop_assert!(with.submit_lemma(&user).unwrap().ok);
        let mut without = session();
        prop_assert!(!without.submit_lemma(&user).unwrap().ok);
        // a rejected lemma is not citable either
        let mut rejected = session();
        prop_assert!(!rejected.submit_lemma("lemma base : 1 = 2 := by eval").unwrap().ok);
        prop_assert!(!rejected.submit_lemma("lemma user : 1 = 2 := by exact base").unwrap().ok);
    }

    #[test]
    fn banned_sources_never_pass(seed in any::<u64>(), in_comment in any::<bool>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let fact = random_fact(&mut rng);
        let src = if in_comment {
            format!("lemma b : {fact} := by\n  -- native_decide\n  eval")
        } else {
            format!("lemma b : {fact} := by native_decide")
        };
        let banned = scan_banned_tactics(&src, &["native_decide".to_string()]);
        prop_assert_eq!(banned, !in_comment);
        let r = session().submit_lemma(&src).unwrap();
        prop_assert!(!(r.ok && banned));
        let fin = format!("theorem goal : 3 + 4 = 7 := by {}", if in_comment { "eval -- native_decide" } else { "native_decide" });
        let r = session().submit_final(&fin).unwrap();
        prop_assert_eq!(r.ok, in_comment);
    }
}

#[test]
fn context_lists_cache_in_submission_order() {
    let mut s = session();
    for (i, f) in ["1 + 1 = 2", "2 * 3 = 6", "4 < 5"].iter().enumerate() {
        assert!(s.submit_lemma(&format!("lemma c{i} : {f} := by eval")).unwrap().ok);
    }
    let (header, cache) = s.context();
    assert_eq!(header.goal_statement, GOAL);
    let names: Vec<_> = cache.iter().map(|r| r.name.as_str()).collect();
    assert_eq!(names, ["c0", "c1", "c2"]);
}

#[test]
fn duplicate_names_are_rejected() {
    let mut s = session();
    assert!(s.submit_lemma("lemma d : 1 = 1 := by eval").unwrap().ok);
    assert!(s.submit_lemma("lemma d : 2 = 2 := by eval").is_err());
    assert_eq!(s.cache().len(), 1);
}
