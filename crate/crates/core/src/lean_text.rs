//! Lexical utilities over Lean-style source text.
//!
//! Nothing here elaborates Lean. The functions mask comments and string
//! literals, split text into tokens with 1-based positions, carve a document
//! into top-level declarations, and compare declaration signatures at the
//! token level. The toy verifier, the session layer, the sketch parser and the
//! delegation detector all build on these.

use std::collections::{BTreeMap, HashMap};

/// Keywords that open a top-level declaration.
pub const DECL_KEYWORDS: &[&str] = &[
    "theorem",
    "lemma",
    "def",
    "example",
    "abbrev",
    "instance",
    "structure",
    "inductive",
    "class",
    "axiom",
];

/// Modifiers that may precede a declaration keyword on the same line.
const DECL_MODIFIERS: &[&str] = &["private", "protected", "noncomputable", "partial", "unsafe"];

/// Top-level commands that end the preceding declaration.
const COMMANDS: &[&str] = &[
    "import",
    "open",
    "set_option",
    "namespace",
    "section",
    "end",
    "variable",
    "universe",
    "#eval",
    "#check",
    "attribute",
];

const MULTI_SYMBOLS: &[&str] = &[
    ":=", "->", "<-", "<=", ">=", "!=", "/\\", "\\/", "..", "<;>", "=>", "::", "++", "<->",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Ident,
    Number,
    Symbol,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    /// 1-based line.
    pub line: usize,
    /// 1-based column, counted in characters.
    pub column: usize,
    /// Byte offset into the source.
    pub offset: usize,
    /// True when this is the first token on its line.
    pub line_start: bool,
}

impl Token {
    pub fn is(&self, text: &str) -> bool {
        self.text == text
    }

    pub fn end(&self) -> usize {
        self.offset + self.text.len()
    }
}

/// Replaces the contents of comments and string literals with spaces,
/// keeping byte offsets and newlines intact.
pub fn mask_comments_and_strings(src: &str) -> String {
    let bytes: Vec<(usize, char)> = src.char_indices().collect();
    let mut out = String::with_capacity(src.len());
    let mut i = 0;
    let blank = |c: char, out: &mut String| {
        if c == '\n' {
            out.push('\n');
        } else {
            for _ in 0..c.len_utf8() {
                out.push(' ');
            }
        }
    };
    let peek = |i: usize| bytes.get(i).map(|&(_, c)| c);
    while i < bytes.len() {
        let c = bytes[i].1;
        if c == '-' && peek(i + 1) == Some('-') {
            while i < bytes.len() && bytes[i].1 != '\n' {
                blank(bytes[i].1, &mut out);
                i += 1;
            }
        } else if c == '/' && peek(i + 1) == Some('-') {
            let mut depth = 0usize;
            loop {
                if i >= bytes.len() {
                    break;
                }
                let ch = bytes[i].1;
                if ch == '/' && peek(i + 1) == Some('-') {
                    depth += 1;
                    blank(ch, &mut out);
                    blank('-', &mut out);
                    i += 2;
                } else if ch == '-' && peek(i + 1) == Some('/') {
                    depth -= 1;
                    blank(ch, &mut out);
                    blank('/', &mut out);
                    i += 2;
                    if depth == 0 {
                        break;
                    }
                } else {
                    blank(ch, &mut out);
                    i += 1;
                }
            }
        } else if c == '"' {
            blank(c, &mut out);
            i += 1;
            while i < bytes.len() {
                let ch = bytes[i].1;
                if ch == '\\' && i + 1 < bytes.len() {
                    blank(ch, &mut out);
                    blank(bytes[i + 1].1, &mut out);
                    i += 2;
                    continue;
                }
                blank(ch, &mut out);
                i += 1;
                if ch == '"' {
                    break;
                }
            }
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '\''
}

/// Tokenizes source text after masking comments and strings.
pub fn tokenize(src: &str) -> Vec<Token> {
    let masked = mask_comments_and_strings(src);
    let chars: Vec<(usize, char)> = masked.char_indices().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;
    let mut at_line_start = true;
    while i < chars.len() {
        let (offset, c) = chars[i];
        if c == '\n' {
            line += 1;
            col = 1;
            at_line_start = true;
            i += 1;
            continue;
        }
        if c.is_whitespace() {
            col += 1;
            i += 1;
            continue;
        }
        let start_col = col;
        let start = i;
        let kind;
        if is_ident_start(c) || (c == '#' && chars.get(i + 1).is_some_and(|&(_, n)| is_ident_start(n))) {
            i += 1;
            loop {
                match chars.get(i) {
                    Some(&(_, n)) if is_ident_continue(n) => i += 1,
                    Some(&(_, '.')) if chars.get(i + 1).is_some_and(|&(_, n)| is_ident_continue(n)) => {
                        i += 1
                    }
                    _ => break,
                }
            }
            kind = TokenKind::Ident;
        } else if c.is_ascii_digit() {
            while chars.get(i).is_some_and(|&(_, n)| n.is_ascii_digit()) {
                i += 1;
            }
            if chars.get(i).is_some_and(|&(_, n)| n == '.')
                && chars.get(i + 1).is_some_and(|&(_, n)| n.is_ascii_digit())
            {
                i += 1;
                while chars.get(i).is_some_and(|&(_, n)| n.is_ascii_digit()) {
                    i += 1;
                }
            }
            kind = TokenKind::Number;
        } else {
            let rest = &masked[offset..];
            let sym_len = MULTI_SYMBOLS
                .iter()
                .filter(|s| rest.starts_with(**s))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(1);
            i += sym_len;
            kind = TokenKind::Symbol;
        }
        let end = chars.get(i).map(|&(o, _)| o).unwrap_or(masked.len());
        let n_chars = i - start;
        tokens.push(Token {
            kind,
            text: src[offset..end].to_string(),
            line,
            column: start_col,
            offset,
            line_start: at_line_start,
        });
        at_line_start = false;
        col += n_chars;
    }
    tokens
}

/// Maps ASCII spellings onto their unicode forms so that token comparison is
/// insensitive to the notation variant.
pub fn canonical_symbol(text: &str) -> &str {
    match text {
        "->" => "→",
        "<=" => "≤",
        ">=" => "≥",
        "!=" => "≠",
        "/\\" => "∧",
        "\\/" => "∨",
        "<->" => "↔",
        "forall" => "∀",
        "exists" => "∃",
        "Nat" => "ℕ",
        "Int" => "ℤ",
        "Real" => "ℝ",
        "fun" => "λ",
        other => other,
    }
}

/// Canonical token texts of a fragment (comments dropped, notation unified).
pub fn canonical_tokens(src: &str) -> Vec<String> {
    tokenize(src)
        .into_iter()
        .map(|t| canonical_symbol(&t.text).to_string())
        .collect()
}

/// Canonical tokens with variables bound by `∀`, `∃` and `λ` renamed
/// positionally, so `∀ x, P x` and `∀ y, P y` compare equal.
pub fn alpha_normalized_tokens(src: &str) -> Vec<String> {
    let toks = canonical_tokens(src);
    let mut renames: HashMap<String, String> = HashMap::new();
    let mut out = Vec::with_capacity(toks.len());
    let mut fresh = 0usize;
    let mut i = 0;
    while i < toks.len() {
        let t = &toks[i];
        if t == "∀" || t == "∃" || t == "λ" {
            out.push(t.clone());
            i += 1;
            // Binder group: identifiers, optionally parenthesised with a type,
            // up to the `,` or `=>` that opens the body.
            let mut depth = 0i32;
            let mut in_type = false;
            while i < toks.len() {
                let b = &toks[i];
                if depth == 0 && (b == "," || b == "=>") {
                    break;
                }
                match b.as_str() {
                    "(" | "[" | "{" => {
                        depth += 1;
                        in_type = false;
                        out.push(b.clone());
                    }
                    ")" | "]" | "}" => {
                        depth -= 1;
                        in_type = false;
                        out.push(b.clone());
                    }
                    ":" | "∈" => {
                        in_type = true;
                        out.push(b.clone());
                    }
                    _ if !in_type && is_identifier(b) => {
                        let name = format!("_b{fresh}");
                        fresh += 1;
                        renames.insert(b.clone(), name.clone());
                        out.push(name);
                    }
                    _ => out.push(renames.get(b).cloned().unwrap_or_else(|| b.clone())),
                }
                i += 1;
            }
            continue;
        }
        out.push(renames.get(t).cloned().unwrap_or_else(|| t.clone()));
        i += 1;
    }
    out
}

fn is_identifier(s: &str) -> bool {
    s.chars().next().is_some_and(is_ident_start)
}

/// A top-level item of a Lean-style document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Declaration {
    /// Declaration keyword (`theorem`, `lemma`, ...).
    pub keyword: String,
    pub name: Option<String>,
    /// Full declaration text without a leading doc comment, trimmed.
    pub text: String,
    /// Contents of a `/-- ... -/` doc comment directly above, if any.
    pub doc: Option<String>,
    /// Byte offset of the declaration in the document.
    pub offset: usize,
    /// 1-based line of the keyword.
    pub line: usize,
}

impl Declaration {
    pub fn parts(&self) -> DeclParts {
        decl_parts(&self.text)
    }
}

fn is_decl_head(tokens: &[Token], i: usize) -> bool {
    let mut j = i;
    if tokens[j].is("@") && tokens.get(j + 1).is_some_and(|t| t.is("[")) {
        // attribute list
        while j < tokens.len() && !tokens[j].is("]") {
            j += 1;
        }
        j += 1;
    }
    while j < tokens.len() && DECL_MODIFIERS.contains(&tokens[j].text.as_str()) {
        j += 1;
    }
    j < tokens.len() && DECL_KEYWORDS.contains(&tokens[j].text.as_str())
}

/// Splits a document into its top-level declarations. Commands such as
/// `import` or `open` terminate the preceding declaration but are not
/// returned.
pub fn split_declarations(src: &str) -> Vec<Declaration> {
    let tokens = tokenize(src);
    let starts: Vec<usize> = (0..tokens.len())
        .filter(|&i| {
            let t = &tokens[i];
            t.line_start
                && t.column == 1
                && (is_decl_head(&tokens, i) || COMMANDS.contains(&t.text.as_str()))
        })
        .collect();
    let mut decls = Vec::new();
    for (k, &si) in starts.iter().enumerate() {
        if !is_decl_head(&tokens, si) {
            continue;
        }
        let start = tokens[si].offset;
        let end = starts
            .get(k + 1)
            .map(|&ni| tokens[ni].offset)
            .unwrap_or(src.len());
        let end = trailing_doc_start(src, start, end);
        let mut kw_idx = si;
        while !DECL_KEYWORDS.contains(&tokens[kw_idx].text.as_str()) {
            kw_idx += 1;
        }
        let keyword = tokens[kw_idx].text.clone();
        let name = tokens
            .get(kw_idx + 1)
            .filter(|t| t.kind == TokenKind::Ident && keyword != "example" && t.offset < end)
            .map(|t| t.text.clone());
        decls.push(Declaration {
            keyword,
            name,
            text: src[start..end].trim_end().to_string(),
            doc: doc_comment_before(src, start),
            offset: start,
            line: tokens[si].line,
        });
    }
    decls
}

// A doc comment belonging to the next declaration must not be swallowed into
// the body of the previous one.
fn trailing_doc_start(src: &str, start: usize, end: usize) -> usize {
    let region = &src[start..end];
    let trimmed = region.trim_end();
    if trimmed.ends_with("-/") {
        if let Some(pos) = trimmed.rfind("/--") {
            let line_begin = region[..pos].rfind('\n').map(|p| p + 1).unwrap_or(0);
            if region[line_begin..pos].trim().is_empty() && pos > 0 {
                return start + line_begin;
            }
        }
    }
    end
}

fn doc_comment_before(src: &str, start: usize) -> Option<String> {
    let before = src[..start].trim_end();
    if !before.ends_with("-/") {
        return None;
    }
    let open = before.rfind("/--")?;
    let body = &before[open + 3..before.len() - 2];
    Some(body.trim().to_string())
}

/// Structural pieces of a single declaration.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeclParts {
    pub keyword: String,
    pub name: Option<String>,
    /// Text between the name and the top-level `:` (binders).
    pub binders: String,
    /// The goal: text after the top-level `:` and before `:=`.
    pub goal: String,
    /// Everything before the top-level `:=`.
    pub signature: String,
    /// Text after the top-level `:=`, if present.
    pub body: Option<String>,
}

const OPEN: &[&str] = &["(", "[", "{", "⟨", "⦃"];
const CLOSE: &[&str] = &[")", "]", "}", "⟩", "⦄"];

/// Splits one declaration into keyword, name, binders, goal and body.
pub fn decl_parts(text: &str) -> DeclParts {
    let tokens = tokenize(text);
    let mut parts = DeclParts::default();
    let Some(kw) = tokens
        .iter()
        .position(|t| DECL_KEYWORDS.contains(&t.text.as_str()))
    else {
        return parts;
    };
    parts.keyword = tokens[kw].text.clone();
    let mut i = kw + 1;
    if parts.keyword != "example" {
        if let Some(t) = tokens.get(i).filter(|t| t.kind == TokenKind::Ident) {
            parts.name = Some(t.text.clone());
            i += 1;
        }
    }
    let after_name = tokens.get(i).map(|t| t.offset).unwrap_or(text.len());
    let mut depth = 0i32;
    let mut colon: Option<usize> = None;
    let mut assign: Option<usize> = None;
    for t in &tokens[i.min(tokens.len())..] {
        let s = t.text.as_str();
        if OPEN.contains(&s) {
            depth += 1;
        } else if CLOSE.contains(&s) {
            depth -= 1;
        } else if depth == 0 && s == ":" && colon.is_none() {
            colon = Some(t.offset);
        } else if depth == 0 && s == ":=" {
            assign = Some(t.offset);
            break;
        }
    }
    let sig_end = assign.unwrap_or(text.len());
    parts.signature = text[..sig_end].trim().to_string();
    match colon {
        Some(c) if c < sig_end => {
            parts.binders = text[after_name.min(c)..c].trim().to_string();
            parts.goal = text[c + 1..sig_end].trim().to_string();
        }
        _ => {
            parts.binders = text[after_name.min(sig_end)..sig_end].trim().to_string();
        }
    }
    parts.body = assign.map(|a| text[a + 2..].trim().to_string());
    parts
}

/// Whitespace-insensitive comparison of two declaration signatures.
pub fn signatures_match(a: &str, b: &str) -> bool {
    let sa = decl_parts(a).signature;
    let sb = decl_parts(b).signature;
    !sa.is_empty() && canonical_tokens(&sa) == canonical_tokens(&sb)
}

/// True if `name` occurs as an identifier token (or as the head of a
/// projection such as `name.1`).
pub fn mentions_identifier(src: &str, name: &str) -> bool {
    tokenize(src)
        .iter()
        .any(|t| t.kind == TokenKind::Ident && ident_matches(&t.text, name))
}

fn ident_matches(token: &str, name: &str) -> bool {
    token == name || token.strip_prefix(name).is_some_and(|rest| rest.starts_with('.'))
}

/// Renames every identifier occurrence of `from` to `to`, leaving comments
/// and strings untouched.
pub fn rename_identifier(src: &str, from: &str, to: &str) -> String {
    let map = BTreeMap::from([(from.to_string(), to.to_string())]);
    rename_identifiers(src, &map)
}

/// Applies several renamings simultaneously.
pub fn rename_identifiers(src: &str, map: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(src.len());
    let mut last = 0;
    for t in tokenize(src) {
        if t.kind != TokenKind::Ident {
            continue;
        }
        if let Some((from, to)) = map.iter().find(|(from, _)| ident_matches(&t.text, from)) {
            out.push_str(&src[last..t.offset]);
            out.push_str(to);
            out.push_str(&t.text[from.len()..]);
            last = t.end();
        }
    }
    out.push_str(&src[last..]);
    out
}

/// True if the text contains `token` as a standalone token outside comments
/// and strings.
pub fn contains_token(src: &str, token: &str) -> bool {
    tokenize(src).iter().any(|t| t.text == token)
}

/// Counts occurrences of a standalone token.
pub fn count_token(src: &str, token: &str) -> usize {
    tokenize(src).iter().filter(|t| t.text == token).count()
}

/// First fenced code block tagged `lean` in a piece of prose, if any.
pub fn first_lean_block(text: &str) -> Option<&str> {
    let start = text.find("```lean")?;
    let body_start = start + "```lean".len();
    let rest = &text[body_start..];
    let end = rest.find("```")?;
    Some(rest[..end].trim_matches('\n'))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn masks_line_and_nested_block_comments() {
        let src = "a -- native_decide\n/- x /- y -/ z -/ b \"s -- t\" c";
        let masked = mask_comments_and_strings(src);
        assert_eq!(masked.len(), src.len());
        let toks: Vec<_> = tokenize(src).into_iter().map(|t| t.text).collect();
        assert_eq!(toks, vec!["a", "b", "c"]);
    }

    #[test]
    fn tokens_carry_positions() {
        let toks = tokenize("lemma foo : 1 + 1 = 2 := by\n  eval");
        assert_eq!(toks[0].line, 1);
        assert_eq!(toks[0].column, 1);
        assert!(toks[0].line_start);
        let eval = toks.iter().find(|t| t.is("eval")).unwrap();
        assert_eq!((eval.line, eval.column), (2, 3));
        assert!(eval.line_start);
        assert!(toks.iter().any(|t| t.is(":=")));
    }

    #[test]
    fn projections_lex_as_one_identifier() {
        let toks: Vec<_> = tokenize("h.1 ⟨a, b⟩ Finset.Icc").into_iter().map(|t| t.text).collect();
        assert_eq!(toks, vec!["h.1", "⟨", "a", ",", "b", "⟩", "Finset.Icc"]);
    }

    #[test]
    fn splits_top_level_declarations_and_docs() {
        let src = "import Mathlib\n\n/-- first -/\nlemma a : 1 = 1 := by\n  eval\n\ntheorem b : 2 = 2 := a\n";
        let decls = split_declarations(src);
        assert_eq!(decls.len(), 2);
        assert_eq!(decls[0].name.as_deref(), Some("a"));
        assert_eq!(decls[0].doc.as_deref(), Some("first"));
        assert_eq!(decls[0].text, "lemma a : 1 = 1 := by\n  eval");
        assert_eq!(decls[1].keyword, "theorem");
        assert_eq!(decls[1].line, 7);
    }

    #[test]
    fn decl_parts_respects_brackets() {
        let p = decl_parts("lemma main_proof (hP : P) (h : x := 1) : R := by sorry");
        assert_eq!(p.name.as_deref(), Some("main_proof"));
        assert_eq!(p.binders, "(hP : P) (h : x := 1)");
        assert_eq!(p.goal, "R");
        assert_eq!(p.body.as_deref(), Some("by sorry"));
    }

    #[test]
    fn signature_match_ignores_whitespace_and_notation() {
        assert!(signatures_match(
            "theorem t : 1 + 1 = 2 ∧ 2 ≤ 3 := by sorry",
            "theorem t :\n  1+1 = 2 /\\ 2 <= 3 := by eval"
        ));
        assert!(!signatures_match("theorem t : 1 = 1 := x", "theorem u : 1 = 1 := x"));
    }

    #[test]
    fn alpha_normalization_identifies_renamed_binders() {
        assert_eq!(
            alpha_normalized_tokens("∀ x ∈ [0, 3], x ≤ 3"),
            alpha_normalized_tokens("forall y ∈ [0, 3], y <= 3")
        );
        assert_ne!(
            alpha_normalized_tokens("∀ x, x ≤ 3"),
            alpha_normalized_tokens("∀ x, x ≤ 4")
        );
    }

    #[test]
    fn rename_touches_identifiers_only() {
        let src = "lemma L1 : P := by sorry -- L1 here\ntheorem t : Q := L1.1 L1";
        let renamed = rename_identifier(src, "L1", "n3_L1");
        assert_eq!(
            renamed,
            "lemma n3_L1 : P := by sorry -- L1 here\ntheorem t : Q := n3_L1.1 n3_L1"
        );
    }

    #[test]
    fn finds_first_lean_block() {
        let text = "Goal:\n```lean\ntheorem t : 1 = 1 := by sorry\n```\nmore";
        assert_eq!(first_lean_block(text), Some("theorem t : 1 = 1 := by sorry"));
    }
}
