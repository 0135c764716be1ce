//! Lemma-style sketches: parsing, structural checks, judge verdicts and the
//! sketch reward.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::{AgentBackend, BackendError, ChatMessage, RetryPolicy};
use crate::lean_text::{
    self, alpha_normalized_tokens, count_token, mask_comments_and_strings, mentions_identifier,
    split_declarations, tokenize, TokenKind,
};
use crate::prompts::{self, render};
use crate::verifier::{StatementHeader, VerifierError, VerifierSession};

/// Rubric score given to vetoed sketches.
pub const VETO_SCORE: f64 = -10.0;
pub const MIN_LEMMAS: usize = 3;
pub const NL_THRESHOLD: f64 = 0.7;
pub const UNPARSEABLE_VERDICT: &str = "unparseable verdict";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchLemma {
    pub name: String,
    /// Signature up to the proof (`lemma name binders : goal`).
    pub statement_text: String,
    pub admitted: bool,
    /// Full declaration text.
    pub source: String,
    pub doc: Option<String>,
}

impl SketchLemma {
    pub fn goal(&self) -> String {
        lean_text::decl_parts(&self.statement_text).goal
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sketch {
    pub header: StatementHeader,
    pub lemmas: Vec<SketchLemma>,
    /// Proof of the main theorem (text after `:=`).
    pub main_body: String,
    /// Full main theorem declaration.
    pub main_source: String,
    pub raw_source: String,
    pub diagnostics: Vec<String>,
}

impl Sketch {
    pub fn lemma(&self, name: &str) -> Option<&SketchLemma> {
        self.lemmas.iter().find(|l| l.name == name)
    }

    /// Lemmas cited by the main body, in declaration order.
    pub fn used_lemmas(&self) -> BTreeSet<String> {
        self.lemmas
            .iter()
            .filter(|l| mentions_identifier(&self.main_body, &l.name))
            .map(|l| l.name.clone())
            .collect()
    }

    pub fn is_well_formed(&self) -> bool {
        self.diagnostics.is_empty()
    }

    /// The sketch with the given lemma proofs substituted for its
    /// placeholders. Lemmas without a replacement are kept as they are.
    pub fn with_proofs(&self, proofs: &[(String, String)]) -> String {
        let mut out = Vec::new();
        for l in &self.lemmas {
            match proofs.iter().find(|(n, _)| *n == l.name) {
                Some((_, src)) => out.push(src.trim().to_string()),
                None => out.push(l.source.clone()),
            }
        }
        out.push(self.main_source.clone());
        out.join("\n\n")
    }
}

fn empty_sketch(source: &str, diagnostic: &str) -> Sketch {
    Sketch {
        header: StatementHeader::new(""),
        lemmas: Vec::new(),
        main_body: String::new(),
        main_source: String::new(),
        raw_source: source.to_string(),
        diagnostics: vec![diagnostic.to_string()],
    }
}

/// Splits a sketch into its lemmas and main theorem. The main theorem is the
/// last `theorem` declaration, or the last declaration if none uses that
/// keyword. Problems are reported in `diagnostics`; parsing never fails.
pub fn parse_sketch(source: &str) -> Sketch {
    let decls = split_declarations(source);
    if decls.is_empty() {
        return empty_sketch(source, "no declarations found");
    }
    let main_idx = decls
        .iter()
        .rposition(|d| d.keyword == "theorem")
        .unwrap_or(decls.len() - 1);
    let main = &decls[main_idx];
    let parts = main.parts();
    let mut diagnostics = Vec::new();
    if main_idx != decls.len() - 1 {
        diagnostics.push("main theorem is not the last declaration".to_string());
    }
    let Some(body) = parts.body.clone() else {
        return empty_sketch(source, "main theorem has no proof body");
    };
    let mut lemmas: Vec<SketchLemma> = Vec::new();
    for (i, d) in decls.iter().enumerate() {
        if i == main_idx {
            continue;
        }
        let p = d.parts();
        let Some(name) = p.name.clone() else {
            diagnostics.push(format!("unnamed declaration at line {}", d.line));
            continue;
        };
        let markers = count_token(p.body.as_deref().unwrap_or(""), "sorry");
        if markers > 1 {
            diagnostics.push(format!("lemma '{name}' has {markers} placeholder markers"));
        }
        if lemmas.iter().any(|l| l.name == name) {
            diagnostics.push(format!("duplicate lemma name '{name}'"));
            continue;
        }
        lemmas.push(SketchLemma {
            name,
            statement_text: p.signature,
            admitted: markers > 0,
            source: d.text.clone(),
            doc: d.doc.clone(),
        });
    }
    let prelude: String = source[..decls[0].offset]
        .lines()
        .filter(|l| l.trim_start().starts_with("import "))
        .collect::<Vec<_>>()
        .join("\n");
    let mut header = StatementHeader::new(format!("{} := by sorry", parts.signature));
    header.imports = prelude;
    Sketch {
        header,
        lemmas,
        main_body: body,
        main_source: main.text.clone(),
        raw_source: source.to_string(),
        diagnostics,
    }
}

/// Reduced fraction in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub num: usize,
    pub den: usize,
}

impl Fraction {
    pub fn value(self) -> f64 {
        if self.den == 0 {
            0.0
        } else {
            self.num as f64 / self.den as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub s_fl: i8,
    pub n_lemmas: usize,
    pub used_lemma_names: BTreeSet<String>,
    pub utilization: Fraction,
    pub delegation_detected: bool,
}

/// Used valid lemmas over valid lemmas (0 when nothing is valid).
pub fn utilization(used: &BTreeSet<String>, valid: &BTreeSet<String>) -> Fraction {
    Fraction {
        num: used.intersection(valid).count(),
        den: valid.len(),
    }
}

/// 0 when the sketch, with placeholders admitted, checks against the
/// session's context and proves the session's goal; -1 otherwise.
pub fn structural_check(sketch: &Sketch, session: &mut VerifierSession) -> Result<i8, VerifierError> {
    if !sketch.is_well_formed() {
        return Ok(-1);
    }
    if session.check_goal(&sketch.main_source).is_err() {
        return Ok(-1);
    }
    let source = sketch.with_proofs(&[]);
    match session.check_sketch(&source) {
        Ok((r, _)) => Ok(if r.ok { 0 } else { -1 }),
        Err(e @ VerifierError::BackendUnavailable(_)) => Err(e),
        Err(_) => Ok(-1),
    }
}

/// Structural diagnostics; `valid` defaults to every lemma.
pub fn structural_report(sketch: &Sketch, s_fl: i8, valid: Option<&BTreeSet<String>>) -> StructuralReport {
    let used = sketch.used_lemmas();
    let all: BTreeSet<String> = sketch.lemmas.iter().map(|l| l.name.clone()).collect();
    StructuralReport {
        s_fl,
        n_lemmas: sketch.lemmas.len(),
        utilization: utilization(&used, valid.unwrap_or(&all)),
        used_lemma_names: used,
        delegation_detected: detect_delegation(sketch),
    }
}

// One tactic step of the main body, comments removed.
fn body_steps(body: &str) -> Vec<String> {
    let masked = mask_comments_and_strings(body);
    let text = masked.trim();
    let text = match text.strip_prefix("by") {
        Some(rest) if rest.starts_with(char::is_whitespace) || rest.is_empty() => rest,
        _ => return vec![format!("exact {text}")],
    };
    text.split(['\n', ';'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

// A term built only from names and parentheses: an opaque application.
fn is_plain_application(term: &str) -> bool {
    let toks = tokenize(term);
    !toks.is_empty()
        && toks
            .iter()
            .all(|t| t.kind == TokenKind::Ident || matches!(t.text.as_str(), "(" | ")" | "@" | "_"))
}

fn application_head(term: &str) -> Option<String> {
    tokenize(term)
        .into_iter()
        .find(|t| t.kind == TokenKind::Ident)
        .map(|t| t.text)
}

// `have name : T := term` or `have name := term`; returns the term.
fn have_term(step: &str) -> Option<&str> {
    let rest = step.strip_prefix("have")?;
    if !rest.starts_with(char::is_whitespace) {
        return None;
    }
    let toks = tokenize(rest);
    let mut depth = 0i32;
    for t in &toks {
        match t.text.as_str() {
            "(" | "[" | "{" | "⟨" => depth += 1,
            ")" | "]" | "}" | "⟩" => depth -= 1,
            ":=" if depth == 0 => return Some(rest[t.offset + 2..].trim()),
            _ => {}
        }
    }
    None
}

/// True when some lemma states the main goal and the main body does nothing
/// except pass lemmas to it (directly or through `have`).
pub fn detect_delegation(sketch: &Sketch) -> bool {
    let main_goal = alpha_normalized_tokens(&lean_text::decl_parts(&sketch.main_source).goal);
    if main_goal.is_empty() {
        return false;
    }
    let wrappers: Vec<&str> = sketch
        .lemmas
        .iter()
        .filter(|l| alpha_normalized_tokens(&l.goal()) == main_goal)
        .map(|l| l.name.as_str())
        .collect();
    if wrappers.is_empty() {
        return false;
    }
    let mut invoked = false;
    for step in body_steps(&sketch.main_body) {
        let term = if let Some(t) = have_term(&step) {
            t
        } else if let Some(t) = step.strip_prefix("exact ") {
            t.trim()
        } else {
            return false;
        };
        if !is_plain_application(term) {
            return false;
        }
        if application_head(term).is_some_and(|h| wrappers.contains(&h.as_str())) {
            invoked = true;
        }
    }
    invoked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Correctness {
    Correct,
    Incorrect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaVerdict {
    pub correctness: Correctness,
    pub reason: String,
    pub proof_sketch: String,
}

impl LemmaVerdict {
    pub fn unparseable() -> Self {
        LemmaVerdict {
            correctness: Correctness::Incorrect,
            reason: UNPARSEABLE_VERDICT.into(),
            proof_sketch: String::new(),
        }
    }
}

/// First JSON object embedded in `text`.
pub fn extract_json_object(text: &str) -> Option<Value> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(v @ Value::Object(_))) = stream.next() {
            return Some(v);
        }
    }
    None
}

pub fn parse_lemma_verdict(text: &str) -> Option<LemmaVerdict> {
    let v = extract_json_object(text)?;
    let correctness = match v.get("correctness")?.as_str()? {
        "Correct" => Correctness::Correct,
        "Incorrect" => Correctness::Incorrect,
        _ => return None,
    };
    let field = |k: &str| v.get(k).and_then(Value::as_str).unwrap_or("").to_string();
    Some(LemmaVerdict {
        correctness,
        reason: field("reason"),
        proof_sketch: field("proof_sketch"),
    })
}

/// Asks the judge whether one lemma is true. An unreadable verdict is asked
/// for once more and then counts as `Incorrect`.
pub fn judge_lemma(
    lemma: &SketchLemma,
    sketch: &Sketch,
    judge: &dyn AgentBackend,
    retry: &RetryPolicy,
) -> Result<LemmaVerdict, BackendError> {
    let prompt = render(
        prompts::LEMMA_VERIFICATION,
        &[
            ("sketch", &sketch.raw_source),
            ("formal_statement", &lemma.statement_text),
            ("doc_string", lemma.doc.as_deref().unwrap_or("")),
        ],
    )
    .expect("lemma verification template");
    let msgs = [ChatMessage::user(prompt)];
    for _ in 0..2 {
        if let Some(v) = parse_lemma_verdict(&retry.generate(judge, &msgs)?) {
            return Ok(v);
        }
    }
    Ok(LemmaVerdict::unparseable())
}

/// Judges every lemma concurrently; results follow `sketch.lemmas`.
pub fn judge_lemmas(
    sketch: &Sketch,
    judge: &dyn AgentBackend,
    retry: &RetryPolicy,
) -> Result<Vec<LemmaVerdict>, BackendError> {
    std::thread::scope(|s| {
        let handles: Vec<_> = sketch
            .lemmas
            .iter()
            .map(|l| s.spawn(move || judge_lemma(l, sketch, judge, retry)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("judge thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RubricStatus {
    Vetoed,
    Passed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VetoType {
    FatalMisalignment,
    ProofByDelegation,
    InvalidLemma,
}

impl VetoType {
    fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "FATAL_MISALIGNMENT" => Some(VetoType::FatalMisalignment),
            "PROOF_BY_DELEGATION" => Some(VetoType::ProofByDelegation),
            "INVALID_LEMMA" => Some(VetoType::InvalidLemma),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricVerdict {
    pub status: RubricStatus,
    pub alignment: f64,
    pub value: f64,
    pub utilization_factor: f64,
    pub final_score: f64,
    pub veto_type: Option<VetoType>,
    /// The judge's own final score, when it reported one.
    pub judge_final_score: Option<f64>,
    /// Names of lemmas the judge marked invalid.
    pub invalid_lemmas: Vec<String>,
    pub reason: String,
}

impl RubricVerdict {
    pub fn vetoed(veto_type: Option<VetoType>, reason: impl Into<String>) -> Self {
        RubricVerdict {
            status: RubricStatus::Vetoed,
            alignment: 0.0,
            value: 0.0,
            utilization_factor: 0.0,
            final_score: VETO_SCORE,
            veto_type,
            judge_final_score: None,
            invalid_lemmas: Vec::new(),
            reason: reason.into(),
        }
    }

    pub fn passed(alignment: f64, value: f64, utilization_factor: f64) -> Self {
        RubricVerdict {
            status: RubricStatus::Passed,
            alignment,
            value,
            utilization_factor,
            final_score: fuse_score(alignment, value, utilization_factor),
            veto_type: None,
            judge_final_score: None,
            invalid_lemmas: Vec::new(),
            reason: String::new(),
        }
    }

    /// True if the judge's arithmetic disagreed with the recomputed score.
    pub fn overridden(&self) -> bool {
        self.judge_final_score.is_some_and(|j| j != self.final_score)
    }
}

/// Rounds to `digits` decimals the way Python's `round` does: the exact
/// binary value is rounded, ties to even.
pub fn round_half_even(x: f64, digits: usize) -> f64 {
    if !x.is_finite() {
        return x;
    }
    // Every finite double has a terminating decimal expansion; 1100 places
    // always cover it.
    let exact = format!("{:.1100}", x.abs());
    let (int_part, frac) = exact.split_once('.').expect("fixed-point format");
    let keep = &frac[..digits];
    let first_dropped = frac.as_bytes()[digits];
    let rest_nonzero = frac[digits + 1..].bytes().any(|b| b != b'0');
    let mut digits_str: Vec<u8> = format!("{int_part}{keep}").into_bytes();
    let last_odd = digits_str.last().is_some_and(|d| (d - b'0') % 2 == 1);
    let round_up = first_dropped > b'5' || (first_dropped == b'5' && (rest_nonzero || last_odd));
    if round_up {
        let mut i = digits_str.len();
        loop {
            if i == 0 {
                digits_str.insert(0, b'1');
                break;
            }
            i -= 1;
            if digits_str[i] == b'9' {
                digits_str[i] = b'0';
            } else {
                digits_str[i] += 1;
                break;
            }
        }
    }
    let s = String::from_utf8(digits_str).expect("ascii digits");
    let (ip, fp) = s.split_at(s.len() - digits);
    let v: f64 = format!("{ip}.{fp}0").parse().expect("decimal literal");
    if x.is_sign_negative() {
        -v
    } else {
        v
    }
}

/// `round((alignment * 0.4 + value * 0.6) * utilization, 1)`.
pub fn fuse_score(alignment: f64, value: f64, utilization: f64) -> f64 {
    let weighted = (alignment * 0.4) + (value * 0.6);
    round_half_even(weighted * utilization, 1)
}

fn number(v: Option<&Value>) -> Option<f64> {
    match v? {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

/// Reads a rubric verdict in the judge's JSON shape. The final score is
/// recomputed from the components with `utilization` in place of the
/// judge's factor.
pub fn parse_rubric_verdict(text: &str, utilization: f64) -> Option<RubricVerdict> {
    let v = extract_json_object(text)?;
    let status = v.get("evaluation_status")?.as_str()?.trim().to_ascii_uppercase();
    let invalid: Vec<String> = v
        .get("lemma_diagnostics")
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .filter_map(|d| d.get("lemma_name").and_then(Value::as_str).map(str::to_string))
                .collect()
        })
        .unwrap_or_default();
    let judge_final = number(v.get("final_score"));
    match status.as_str() {
        "VETOED" => {
            let reason = v.get("veto_reason");
            let veto_type = reason
                .and_then(|r| r.get("type"))
                .and_then(Value::as_str)
                .and_then(VetoType::parse);
            let analysis = reason
                .and_then(|r| r.get("analysis"))
                .and_then(Value::as_str)
                .unwrap_or("");
            let mut out = RubricVerdict::vetoed(veto_type, analysis);
            out.judge_final_score = judge_final;
            out.invalid_lemmas = invalid;
            Some(out)
        }
        "PASSED" => {
            let scores = v.get("rubric_and_scoring")?.get("scores")?;
            let a = number(scores.get("alignment"))?;
            let val = number(scores.get("value"))?;
            if !(0.0..=10.0).contains(&a) || !(0.0..=10.0).contains(&val) {
                return None;
            }
            let mut out = RubricVerdict::passed(a, val, utilization);
            out.judge_final_score = judge_final;
            out.invalid_lemmas = invalid;
            Some(out)
        }
        _ => None,
    }
}

/// Rubric verdict for a sketch. Any incorrect lemma vetoes without asking
/// the judge; an unreadable judge answer vetoes as well.
pub fn judge_sketch(
    formal_statement: &str,
    nl_proof: &str,
    sketch: &Sketch,
    lemma_verdicts: &[LemmaVerdict],
    judge: &dyn AgentBackend,
    retry: &RetryPolicy,
) -> Result<RubricVerdict, BackendError> {
    if let Some((l, v)) = sketch
        .lemmas
        .iter()
        .zip(lemma_verdicts)
        .find(|(_, v)| v.correctness == Correctness::Incorrect)
    {
        let mut out = RubricVerdict::vetoed(
            Some(VetoType::InvalidLemma),
            format!("lemma '{}' judged incorrect: {}", l.name, v.reason),
        );
        out.invalid_lemmas = vec![l.name.clone()];
        return Ok(out);
    }
    let prompt = render(
        prompts::SKETCH_RUBRIC,
        &[
            ("formal_statement", formal_statement),
            ("nl_proof", nl_proof),
            ("sketch", &sketch.raw_source),
            ("doc_string", sketch.header.goal_statement.as_str()),
        ],
    )
    .expect("rubric template");
    let reply = retry.generate(judge, &[ChatMessage::user(prompt)])?;
    let used = sketch.used_lemmas();
    let all: BTreeSet<String> = sketch.lemmas.iter().map(|l| l.name.clone()).collect();
    let Some(first) = parse_rubric_verdict(&reply, utilization(&used, &all).value()) else {
        return Ok(RubricVerdict::vetoed(None, UNPARSEABLE_VERDICT));
    };
    if first.status == RubricStatus::Vetoed || first.invalid_lemmas.is_empty() {
        return Ok(first);
    }
    // Lemmas the judge calls invalid do not count towards utilization.
    let valid: BTreeSet<String> = all
        .into_iter()
        .filter(|n| !first.invalid_lemmas.contains(n))
        .collect();
    let u = utilization(&used, &valid).value();
    Ok(parse_rubric_verdict(&reply, u).unwrap_or(first))
}

/// Rubric score scaled to [-1, 1].
pub fn normalize_nl_score(verdict: &RubricVerdict) -> f64 {
    verdict.final_score / 10.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardInputs {
    pub n_lemmas: usize,
    pub s_fl: f64,
    pub s_nl: f64,
}

/// +1 when the sketch has enough lemmas, compiles and reads well; -1
/// otherwise.
pub fn fuse_reward(inputs: RewardInputs) -> i8 {
    if inputs.n_lemmas >= MIN_LEMMAS && inputs.s_fl >= 0.0 && inputs.s_nl >= NL_THRESHOLD {
        1
    } else {
        -1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SketchEvaluation {
    pub report: StructuralReport,
    pub lemma_verdicts: Vec<LemmaVerdict>,
    pub rubric: RubricVerdict,
    pub inputs: RewardInputs,
    pub reward: i8,
}

/// Full sketch scoring: structure, lemma verdicts, rubric and reward. A
/// detected delegation vetoes without asking for a rubric.
pub fn evaluate_sketch(
    sketch: &Sketch,
    nl_proof: &str,
    session: &mut VerifierSession,
    judge: &dyn AgentBackend,
    retry: &RetryPolicy,
) -> Result<SketchEvaluation, SketchError> {
    let s_fl = structural_check(sketch, session)?;
    let lemma_verdicts = judge_lemmas(sketch, judge, retry)?;
    let valid: BTreeSet<String> = sketch
        .lemmas
        .iter()
        .zip(&lemma_verdicts)
        .filter(|(_, v)| v.correctness == Correctness::Correct)
        .map(|(l, _)| l.name.clone())
        .collect();
    let report = structural_report(sketch, s_fl, Some(&valid));
    let statement = session.header().goal_statement.clone();
    let rubric = if report.delegation_detected {
        RubricVerdict::vetoed(Some(VetoType::ProofByDelegation), "main body only invokes a wrapper lemma")
    } else {
        judge_sketch(&statement, nl_proof, sketch, &lemma_verdicts, judge, retry)?
    };
    let inputs = RewardInputs {
        n_lemmas: report.n_lemmas,
        s_fl: f64::from(s_fl),
        s_nl: normalize_nl_score(&rubric),
    };
    Ok(SketchEvaluation {
        reward: fuse_reward(inputs),
        report,
        lemma_verdicts,
        rubric,
        inputs,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum SketchError {
    #[error(transparent)]
    Verifier(#[from] VerifierError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::ScriptedBackend;
    use crate::verifier::VerifierConfig;

    const SKETCH: &str = "\
lemma l1 : 2 + 3 = 5 := by sorry
lemma l2 : 4 * 2 = 8 := by sorry
lemma l3 : 7 - 2 = 5 := by sorry
theorem main : 2 + 3 = 5 ∧ 4 * 2 = 8 ∧ 7 - 2 = 5 := by
  have a : 2 + 3 = 5 := l1
  exact ⟨a, l2, l3⟩
";

    #[test]
    fn parses_lemmas_and_usage() {
        let s = parse_sketch(SKETCH);
        assert!(s.is_well_formed(), "{:?}", s.diagnostics);
        assert_eq!(s.lemmas.len(), 3);
        assert!(s.lemmas.iter().all(|l| l.admitted));
        assert_eq!(s.used_lemmas().len(), 3);
        assert_eq!(s.header.goal_name(), "main");
    }

    #[test]
    fn empty_source_has_diagnostic() {
        let s = parse_sketch("");
        assert!(s.lemmas.is_empty());
        assert!(!s.diagnostics.is_empty());
    }

    #[test]
    fn structural_check_on_toy_backend() {
        let s = parse_sketch(SKETCH);
        let mut session = VerifierSession::open(s.header.clone(), &VerifierConfig::toy()).unwrap();
        assert_eq!(structural_check(&s, &mut session).unwrap(), 0);
        let bad = parse_sketch(&SKETCH.replace("l2, l3", "l2, l4"));
        assert_eq!(structural_check(&bad, &mut session).unwrap(), -1);
    }

    #[test]
    fn half_even_rounding_matches_python() {
        assert_eq!(round_half_even(0.25, 1), 0.2);
        assert_eq!(round_half_even(0.35, 1), 0.3); // 0.35 is below the tie in binary
        assert_eq!(round_half_even(0.75, 1), 0.8);
        assert_eq!(round_half_even(9.96, 1), 10.0);
        assert_eq!(round_half_even(-2.25, 1), -2.2);
    }

    #[test]
    fn fused_scores() {
        assert_eq!(fuse_score(8.0, 5.0, 2.0 / 3.0), 4.1);
        assert_eq!(fuse_score(10.0, 10.0, 1.0), 10.0);
    }

    #[test]
    fn recomputes_judge_arithmetic() {
        let reply = r#"Here: {"evaluation_status": "PASSED", "lemma_diagnostics": [],
          "rubric_and_scoring": {"scores": {"alignment": "8", "value": 5.0, "utilization_factor": "1.0"}},
          "final_score": "9.9"}"#;
        let v = parse_rubric_verdict(reply, 2.0 / 3.0).unwrap();
        assert_eq!(v.final_score, 4.1);
        assert!(v.overridden());
    }

    #[test]
    fn unparseable_lemma_verdict_is_incorrect() {
        let s = parse_sketch(SKETCH);
        let judge = ScriptedBackend::constant("j", "I think it is fine.");
        let v = judge_lemma(&s.lemmas[0], &s, &judge, &RetryPolicy::immediate(1)).unwrap();
        assert_eq!(v, LemmaVerdict::unparseable());
    }

    #[test]
    fn reward_predicate() {
        let r = |n, s_fl, s_nl| fuse_reward(RewardInputs { n_lemmas: n, s_fl, s_nl });
        assert_eq!(r(3, 0.0, 0.7), 1);
        assert_eq!(r(2, 0.0, 1.0), -1);
        assert_eq!(r(5, -1.0, 0.9), -1);
    }
}
