//! Prompt templates shipped as text assets.
//!
//! Templates use `{name}` placeholders; `{{` and `}}` stand for literal
//! braces.

use thiserror::Error;

/// Version tag of the template set, recorded in trajectories.
pub const TEMPLATE_VERSION: &str = "1";

pub const LEMMA_VERIFICATION: &str = include_str!("../assets/prompts/lemma_verification.txt");
pub const SKETCH_RUBRIC: &str = include_str!("../assets/prompts/sketch_rubric.txt");
pub const TOOL_GUIDE: &str = include_str!("../assets/prompts/tool_guide.txt");
pub const PROVER_DIRECT: &str = include_str!("../assets/prompts/prover_direct.txt");
pub const PROVER_SKETCH: &str = include_str!("../assets/prompts/prover_sketch.txt");
pub const PROVER_SUMMARY: &str = include_str!("../assets/prompts/prover_summary.txt");
pub const SUMMARIZE: &str = include_str!("../assets/prompts/summarize.txt");
pub const NL_PROVER: &str = include_str!("../assets/prompts/nl_prover.txt");
pub const SKETCHER: &str = include_str!("../assets/prompts/sketcher.txt");

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template placeholder '{{{0}}}' has no value")]
    Missing(String),
    #[error("unbalanced brace at byte {0}")]
    Unbalanced(usize),
}

/// Substitutes placeholders. Every placeholder must have a value; values
/// are inserted as-is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String, TemplateError> {
    let mut out = String::with_capacity(template.len() + 256);
    let bytes = template.as_bytes();
    let mut i = 0;
    let mut lit = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'{' if bytes.get(i + 1) == Some(&b'{') => {
                out.push_str(&template[lit..i]);
                out.push('{');
                i += 2;
                lit = i;
            }
            b'}' if bytes.get(i + 1) == Some(&b'}') => {
                out.push_str(&template[lit..i]);
                out.push('}');
                i += 2;
                lit = i;
            }
            b'{' => {
                let close = template[i..].find('}').ok_or(TemplateError::Unbalanced(i))? + i;
                let name = &template[i + 1..close];
                let value = vars
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| TemplateError::Missing(name.to_string()))?;
                out.push_str(&template[lit..i]);
                out.push_str(value);
                i = close + 1;
                lit = i;
            }
            b'}' => return Err(TemplateError::Unbalanced(i)),
            _ => i += 1,
        }
    }
    out.push_str(&template[lit..]);
    Ok(out)
}

/// Placeholder names used by a template, in order of first use.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    let stripped = template.replace("{{", "").replace("}}", "");
    let mut rest = stripped.as_str();
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else { break };
        let name = &rest[open + 1..open + close];
        if !names.iter().any(|n| n == name) {
            names.push(name.to_string());
        }
        rest = &rest[open + close + 1..];
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_and_placeholders() {
        let t = "{{\"a\": {x}}} {y}";
        assert_eq!(render(t, &[("x", "1"), ("y", "{z}")]).unwrap(), "{\"a\": 1} {z}");
        assert_eq!(render("{q}", &[]), Err(TemplateError::Missing("q".into())));
    }

    #[test]
    fn judge_templates_have_expected_placeholders() {
        assert_eq!(
            placeholders(LEMMA_VERIFICATION),
            ["sketch", "formal_statement", "doc_string"]
        );
        assert_eq!(
            placeholders(SKETCH_RUBRIC),
            ["formal_statement", "nl_proof", "sketch", "doc_string"]
        );
    }

    #[test]
    fn every_template_renders() {
        for t in [
            LEMMA_VERIFICATION,
            SKETCH_RUBRIC,
            TOOL_GUIDE,
            PROVER_DIRECT,
            PROVER_SKETCH,
            PROVER_SUMMARY,
            SUMMARIZE,
            NL_PROVER,
            SKETCHER,
        ] {
            let names = placeholders(t);
            let vars: Vec<(&str, &str)> = names.iter().map(|n| (n.as_str(), "X")).collect();
            let out = render(t, &vars).unwrap();
            assert!(!out.contains("{{"));
        }
        let rubric = render(
            SKETCH_RUBRIC,
            &[("formal_statement", "F"), ("nl_proof", "N"), ("sketch", "S"), ("doc_string", "D")],
        )
        .unwrap();
        assert!(rubric.contains("\"evaluation_status\": \"[VETOED or PASSED]\""));
        assert!(rubric.contains("weighted_score = (alignment * 0.4)  + (value * 0.6)"));
    }
}
