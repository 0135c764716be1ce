"""Smoke test for the leanflow extension module. Run after `maturin develop`."""

from pathlib import Path

import leanflow

FIXTURES = Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"


def main() -> None:
    s = leanflow.VerifierSession("theorem t : 1 + 1 = 2 ∧ 2 + 2 = 4 := by sorry")
    assert s.submit_lemma("lemma a : 1 + 1 = 2 := by eval").ok
    assert not s.submit_lemma("lemma b : 2 + 2 = 5 := by eval").ok
    assert not s.submit_lemma("lemma c : 2 + 2 = 4 := by sorry").ok
    assert s.submit_lemma("lemma b : 2 + 2 = 4 := by eval").ok
    assert [name for name, _ in s.cache()] == ["a", "b"]
    assert s.submit_final("theorem t : 1 + 1 = 2 ∧ 2 + 2 = 4 := by\n  exact ⟨a, b⟩").ok
    assert s.closed and "lemma a" in s.assembled_document()

    ix = leanflow.SearchIndex.load(str(FIXTURES / "mini.lfidx"), "v4.22.0")
    assert (len(ix), ix.dimension) == (6, 4)
    hits = ix.search([1.0, 0.0, 0.0, 0.0], 3)
    assert [h[0] for h in hits] == ["Nat.add_comm", "Nat.le_refl", "Nat.mul_comm"]
    assert len(ix.search_text("add comm", 2)) == 2
    try:
        leanflow.SearchIndex.load(str(FIXTURES / "mini.lfidx"), "v4.9.0")
        raise AssertionError("pin mismatch accepted")
    except ValueError:
        pass

    assert leanflow.fuse_reward(3, 0.0, 0.7) == 1
    assert leanflow.fuse_reward(2, 0.0, 1.0) == -1
    assert leanflow.round_half_even(0.25, 1) == 0.2
    verdict = leanflow.parse_rubric_verdict(
        '{"evaluation_status": "PASSED", "rubric_and_scoring": {"scores": {"alignment": 8, "value": 6}}}', 1.0
    )
    assert verdict is not None and verdict["final_score"] == leanflow.fuse_score(8, 6, 1.0)
    assert leanflow.parse_rubric_verdict("no json here", 1.0) is None

    assert leanflow.scan_banned_tactics("theorem x : 1 = 1 := by native_decide")
    assert not leanflow.scan_banned_tactics("theorem x : 1 = 1 := by rfl")
    turn = (
        '<<tool>>\n{"id": "1", "tool": "verify_lemma", "args": {"source": "lemma a : 1 = 1 := by rfl"}}\n<</tool>>\n'
        '<<tool>>\n{"id": "2", "tool": "verify_lemma", "args": {}}\n<</tool>>'
    )
    good, bad = leanflow.parse_tool_calls(turn)
    assert good["id"] == "1" and "error" not in good
    assert bad["id"] == "2" and "source" in bad["error"]

    assert leanflow.curation_decision(4)["reason"] == "TooEasy"
    assert leanflow.curation_decision(0)["reason"] == "Unsolvable"
    assert leanflow.curation_decision(2)["action"] == "Keep"

    statement = (FIXTURES / "workflows" / "depth3.lean").read_text().strip()
    r = leanflow.run_workflow(statement, script=str(FIXTURES / "workflows" / "depth3.json"))
    assert r["solved"] and r["error"] is None, r
    print("smoke test passed")


if __name__ == "__main__":
    main()
