//! Abstract syntax and parser for the toy proof language.
//!
//! Claims are integer (or natural-number) arithmetic comparisons combined with
//! propositional connectives and bounded quantifiers. Proofs follow Lean's
//! surface syntax closely enough that sketches and agent transcripts read the
//! same against either backend:
//!
//! ```text
//! lemma l1 : 2 + 3 = 5 := by eval
//! lemma wrap (h : 2 + 3 = 5) : 5 = 2 + 3 := by eval
//! theorem main : 2 + 3 = 5 ∧ 5 = 2 + 3 := by
//!   have a : 2 + 3 = 5 := l1
//!   exact ⟨a, wrap a⟩
//! ```

use std::fmt;

use crate::lean_text::{canonical_symbol, tokenize, Token, TokenKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumType {
    Int,
    Nat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Lit(i128),
    Var(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Ascribe(Box<Expr>, NumType),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantifier {
    Forall,
    Exists,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prop {
    True,
    False,
    Cmp(Expr, CmpOp, Expr),
    Not(Box<Prop>),
    And(Box<Prop>, Box<Prop>),
    Or(Box<Prop>, Box<Prop>),
    Imp(Box<Prop>, Box<Prop>),
    Iff(Box<Prop>, Box<Prop>),
    /// `∀ x ∈ [lo, hi], body` (bounds inclusive).
    Bounded {
        quantifier: Quantifier,
        var: String,
        lo: Expr,
        hi: Expr,
        body: Box<Prop>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pos {
    pub line: usize,
    pub column: usize,
}

impl From<&Token> for Pos {
    fn from(t: &Token) -> Self {
        Pos {
            line: t.line,
            column: t.column,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    Name(String, Pos),
    /// Anonymous constructor `⟨a, b, ...⟩` for conjunctions.
    Anon(Vec<Term>, Pos),
    /// Application `f a b`: modus ponens through `f`'s implications.
    App(Box<Term>, Vec<Term>, Pos),
    /// Nested single-tactic block such as `by eval`.
    By(Box<Tactic>, Pos),
    Sorry(Pos),
}

impl Term {
    pub fn pos(&self) -> Pos {
        match self {
            Term::Name(_, p) | Term::Anon(_, p) | Term::App(_, _, p) | Term::By(_, p) | Term::Sorry(p) => *p,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tactic {
    Have {
        name: String,
        prop: Prop,
        proof: Term,
        pos: Pos,
    },
    Exact(Term, Pos),
    /// `eval`, `decide` or `norm_num`: close the goal by evaluation.
    Eval(Pos),
    Sorry(Pos),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Proof {
    Tactics(Vec<Tactic>),
    Term(Term),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decl {
    pub keyword: String,
    pub name: String,
    pub binders: Vec<(String, Prop)>,
    pub prop: Prop,
    pub proof: Proof,
    pub pos: Pos,
    /// Byte range of the declaration in the parsed source.
    pub span: (usize, usize),
}

impl Decl {
    /// The declaration's type with hypotheses curried into implications.
    pub fn full_type(&self) -> Prop {
        self.binders
            .iter()
            .rev()
            .fold(self.prop.clone(), |acc, (_, h)| Prop::Imp(Box::new(h.clone()), Box::new(acc)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub pos: Option<Pos>,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pos {
            Some(p) => write!(f, "{}:{}: {}", p.line, p.column, self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ParseError {}

const RESERVED: &[&str] = &[
    "lemma", "theorem", "by", "have", "exact", "eval", "decide", "norm_num", "sorry", "True", "False",
    "∀", "∃", "import", "open", "set_option",
];

pub(crate) struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
    end: usize,
}

type PResult<T> = Result<T, ParseError>;

impl<'a> Parser<'a> {
    pub(crate) fn new(toks: &'a [Token]) -> Self {
        Parser {
            toks,
            pos: 0,
            end: toks.len(),
        }
    }

    fn peek(&self) -> Option<&'a Token> {
        if self.pos < self.end {
            self.toks.get(self.pos)
        } else {
            None
        }
    }

    fn peek_is(&self, s: &str) -> bool {
        self.peek().is_some_and(|t| canonical_symbol(&t.text) == s)
    }

    fn bump(&mut self) -> Option<&'a Token> {
        let t = self.peek();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn here(&self) -> Option<Pos> {
        self.peek()
            .or_else(|| self.toks.get(self.end.saturating_sub(1)))
            .map(Pos::from)
    }

    fn err<T>(&self, message: impl Into<String>) -> PResult<T> {
        Err(ParseError {
            pos: self.here(),
            message: message.into(),
        })
    }

    fn expect(&mut self, s: &str) -> PResult<&'a Token> {
        if self.peek_is(s) {
            Ok(self.bump().unwrap())
        } else {
            match self.peek() {
                Some(t) => self.err(format!("expected '{s}', found '{}'", t.text)),
                None => self.err(format!("expected '{s}', found end of input")),
            }
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Ident && !RESERVED.contains(&canonical_symbol(&t.text)) => {
                self.pos += 1;
                Ok(t.text.clone())
            }
            Some(t) => self.err(format!("expected identifier, found '{}'", t.text)),
            None => self.err("expected identifier, found end of input"),
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.end
    }

    // ---- propositions ----

    pub(crate) fn prop(&mut self) -> PResult<Prop> {
        let lhs = self.imp()?;
        if self.peek_is("↔") {
            self.bump();
            let rhs = self.imp()?;
            return Ok(Prop::Iff(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn imp(&mut self) -> PResult<Prop> {
        let lhs = self.or()?;
        if self.peek_is("→") {
            self.bump();
            let rhs = self.imp()?;
            return Ok(Prop::Imp(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> PResult<Prop> {
        let lhs = self.and()?;
        if self.peek_is("∨") {
            self.bump();
            let rhs = self.or()?;
            return Ok(Prop::Or(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> PResult<Prop> {
        let lhs = self.not()?;
        if self.peek_is("∧") {
            self.bump();
            let rhs = self.and()?;
            return Ok(Prop::And(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn not(&mut self) -> PResult<Prop> {
        if self.peek_is("¬") || self.peek_is("~") {
            self.bump();
            return Ok(Prop::Not(Box::new(self.not()?)));
        }
        if self.peek_is("∀") || self.peek_is("∃") {
            let quantifier = if self.peek_is("∀") {
                Quantifier::Forall
            } else {
                Quantifier::Exists
            };
            self.bump();
            let var = self.ident()?;
            self.expect("∈")?;
            self.expect("[")?;
            let lo = self.expr()?;
            self.expect(",")?;
            let hi = self.expr()?;
            self.expect("]")?;
            self.expect(",")?;
            let body = self.prop()?;
            return Ok(Prop::Bounded {
                quantifier,
                var,
                lo,
                hi,
                body: Box::new(body),
            });
        }
        self.atom()
    }

    fn atom(&mut self) -> PResult<Prop> {
        if self.peek_is("True") {
            self.bump();
            return Ok(Prop::True);
        }
        if self.peek_is("False") {
            self.bump();
            return Ok(Prop::False);
        }
        // A parenthesis opens either an arithmetic operand or a nested
        // proposition; try the comparison reading first.
        let save = self.pos;
        match self.comparison() {
            Ok(p) => Ok(p),
            Err(cmp_err) => {
                self.pos = save;
                if self.peek_is("(") {
                    self.bump();
                    let p = self.prop()?;
                    self.expect(")")?;
                    Ok(p)
                } else {
                    Err(cmp_err)
                }
            }
        }
    }

    fn comparison(&mut self) -> PResult<Prop> {
        let lhs = self.expr()?;
        let op = match self.peek().map(|t| canonical_symbol(&t.text)) {
            Some("=") => CmpOp::Eq,
            Some("≠") => CmpOp::Ne,
            Some("<") => CmpOp::Lt,
            Some("≤") => CmpOp::Le,
            Some(">") => CmpOp::Gt,
            Some("≥") => CmpOp::Ge,
            _ => return self.err("expected a comparison operator"),
        };
        self.bump();
        let rhs = self.expr()?;
        Ok(Prop::Cmp(lhs, op, rhs))
    }

    // ---- arithmetic ----

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.mul()?;
        loop {
            if self.peek_is("+") {
                self.bump();
                lhs = Expr::Add(Box::new(lhs), Box::new(self.mul()?));
            } else if self.peek_is("-") {
                self.bump();
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.mul()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn mul(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while self.peek_is("*") {
            self.bump();
            lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.peek_is("-") {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek() {
            Some(t) if t.kind == TokenKind::Number => {
                let v: i128 = t.text.parse().map_err(|_| ParseError {
                    pos: Some(Pos::from(t)),
                    message: format!("unsupported numeral '{}'", t.text),
                })?;
                self.bump();
                Ok(Expr::Lit(v))
            }
            Some(t) if t.is("(") => {
                self.bump();
                let e = self.expr()?;
                if self.peek_is(":") {
                    self.bump();
                    let ty = match self.bump().map(|t| canonical_symbol(&t.text)) {
                        Some("ℕ") => NumType::Nat,
                        Some("ℤ") => NumType::Int,
                        _ => return self.err("expected ℕ or ℤ after ':'"),
                    };
                    self.expect(")")?;
                    return Ok(Expr::Ascribe(Box::new(e), ty));
                }
                self.expect(")")?;
                Ok(e)
            }
            Some(t) if t.kind == TokenKind::Ident => Ok(Expr::Var(self.ident()?)),
            Some(t) => self.err(format!("unexpected '{}' in arithmetic expression", t.text)),
            None => self.err("unexpected end of input in arithmetic expression"),
        }
    }

    // ---- proofs ----

    /// Parses a term. In tactic mode a term ends at the first token that
    /// starts a new line outside brackets.
    fn term(&mut self, stop_at_newline: bool) -> PResult<Term> {
        let head = self.term_atom()?;
        let pos = head.pos();
        let mut args = Vec::new();
        while let Some(t) = self.peek() {
            if stop_at_newline && t.line_start {
                break;
            }
            if t.is(",") || t.is("⟩") || t.is(")") || t.is(";") || t.is(":=") {
                break;
            }
            args.push(self.term_atom()?);
        }
        if args.is_empty() {
            Ok(head)
        } else {
            Ok(Term::App(Box::new(head), args, pos))
        }
    }

    fn term_atom(&mut self) -> PResult<Term> {
        let Some(t) = self.peek() else {
            return self.err("expected a proof term, found end of input");
        };
        let pos = Pos::from(t);
        if t.is("⟨") {
            self.bump();
            let mut items = vec![self.term(false)?];
            while self.peek_is(",") {
                self.bump();
                items.push(self.term(false)?);
            }
            self.expect("⟩")?;
            return Ok(Term::Anon(items, pos));
        }
        if t.is("(") {
            self.bump();
            let inner = self.term(false)?;
            self.expect(")")?;
            return Ok(inner);
        }
        if t.is("sorry") {
            self.bump();
            return Ok(Term::Sorry(pos));
        }
        if t.is("by") {
            self.bump();
            let tac = self.tactic()?;
            return Ok(Term::By(Box::new(tac), pos));
        }
        if t.kind == TokenKind::Ident && !RESERVED.contains(&t.text.as_str()) {
            self.bump();
            return Ok(Term::Name(t.text.clone(), pos));
        }
        self.err(format!("unexpected '{}' in proof term", t.text))
    }

    fn tactic(&mut self) -> PResult<Tactic> {
        let Some(t) = self.peek() else {
            return self.err("expected a tactic, found end of input");
        };
        let pos = Pos::from(t);
        match t.text.as_str() {
            "have" => {
                self.bump();
                let name = self.ident()?;
                self.expect(":")?;
                let prop = self.prop()?;
                self.expect(":=")?;
                let proof = self.term(true)?;
                Ok(Tactic::Have {
                    name,
                    prop,
                    proof,
                    pos,
                })
            }
            "exact" => {
                self.bump();
                Ok(Tactic::Exact(self.term(true)?, pos))
            }
            "eval" | "decide" | "norm_num" => {
                self.bump();
                Ok(Tactic::Eval(pos))
            }
            "sorry" => {
                self.bump();
                Ok(Tactic::Sorry(pos))
            }
            other => self.err(format!("unknown tactic '{other}'")),
        }
    }

    fn tactic_block(&mut self) -> PResult<Vec<Tactic>> {
        let mut tactics = Vec::new();
        while !self.at_end() {
            if self.peek_is(";") {
                self.bump();
                continue;
            }
            tactics.push(self.tactic()?);
            if let Some(t) = self.peek() {
                if !t.line_start && !t.is(";") {
                    return self.err(format!("unexpected '{}' after tactic", t.text));
                }
            }
        }
        if tactics.is_empty() {
            return self.err("empty tactic block");
        }
        Ok(tactics)
    }

    fn decl(&mut self, src: &str) -> PResult<Decl> {
        let kw = self.bump().expect("caller checked keyword");
        let keyword = kw.text.clone();
        if keyword != "lemma" && keyword != "theorem" {
            return Err(ParseError {
                pos: Some(Pos::from(kw)),
                message: format!("'{keyword}' declarations are not supported by the toy verifier"),
            });
        }
        let pos = Pos::from(kw);
        let start = kw.offset;
        let name = self.ident()?;
        let mut binders = Vec::new();
        while self.peek_is("(") {
            self.bump();
            let h = self.ident()?;
            self.expect(":")?;
            let p = self.prop()?;
            self.expect(")")?;
            binders.push((h, p));
        }
        self.expect(":")?;
        let prop = self.prop()?;
        self.expect(":=")?;
        let proof = if self.peek_is("by") {
            self.bump();
            Proof::Tactics(self.tactic_block()?)
        } else {
            let t = self.term(false)?;
            if let Some(extra) = self.peek() {
                return Err(ParseError {
                    pos: Some(Pos::from(extra)),
                    message: format!("unexpected '{}' after proof term", extra.text),
                });
            }
            Proof::Term(t)
        };
        let end = self.toks[..self.end].last().map(|t| t.end()).unwrap_or(src.len());
        Ok(Decl {
            keyword,
            name,
            binders,
            prop,
            proof,
            pos,
            span: (start, end),
        })
    }
}

/// Parses a standalone claim.
pub fn parse_prop(src: &str) -> Result<Prop, ParseError> {
    let toks = tokenize(src);
    let mut p = Parser::new(&toks);
    let prop = p.prop()?;
    if let Some(t) = p.peek() {
        return Err(ParseError {
            pos: Some(Pos::from(t)),
            message: format!("unexpected '{}' after claim", t.text),
        });
    }
    Ok(prop)
}

/// One top-level item of a toy document.
#[derive(Debug, Clone)]
pub enum Item {
    Decl(Decl),
    /// `import`, `open` or `set_option` lines; accepted and ignored.
    Command,
}

/// Parses a document into declarations. Each top-level item is parsed
/// independently so that positions refer to the whole document.
pub fn parse_document(src: &str) -> Result<Vec<Item>, ParseError> {
    let toks = tokenize(src);
    let starts: Vec<usize> = toks
        .iter()
        .enumerate()
        .filter(|(_, t)| t.line_start && t.column == 1)
        .map(|(i, _)| i)
        .collect();
    let mut items = Vec::new();
    let mut k = 0;
    while k < starts.len() {
        let i = starts[k];
        let head = &toks[i];
        // a top-level item runs until the next column-1 item start
        let mut j = k + 1;
        while j < starts.len() && !is_item_head(&toks[starts[j]]) {
            j += 1;
        }
        let end = starts.get(j).copied().unwrap_or(toks.len());
        match head.text.as_str() {
            "import" | "open" | "set_option" => items.push(Item::Command),
            "lemma" | "theorem" | "def" | "example" => {
                let mut p = Parser {
                    toks: &toks,
                    pos: i,
                    end,
                };
                items.push(Item::Decl(p.decl(src)?));
            }
            other => {
                return Err(ParseError {
                    pos: Some(Pos::from(head)),
                    message: format!("unexpected '{other}' at top level"),
                })
            }
        }
        k = j;
    }
    Ok(items)
}

fn is_item_head(t: &Token) -> bool {
    matches!(
        t.text.as_str(),
        "import" | "open" | "set_option" | "lemma" | "theorem" | "def" | "example"
    )
}

/// Parses a document and keeps only its declarations.
pub fn parse_decls(src: &str) -> Result<Vec<Decl>, ParseError> {
    Ok(parse_document(src)?
        .into_iter()
        .filter_map(|i| match i {
            Item::Decl(d) => Some(d),
            Item::Command => None,
        })
        .collect())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(v) => write!(f, "{v}"),
            Expr::Var(x) => write!(f, "{x}"),
            Expr::Neg(e) => write!(f, "-({e})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Ascribe(e, NumType::Nat) => write!(f, "({e} : ℕ)"),
            Expr::Ascribe(e, NumType::Int) => write!(f, "({e} : ℤ)"),
        }
    }
}

impl fmt::Display for Prop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prop::True => write!(f, "True"),
            Prop::False => write!(f, "False"),
            Prop::Cmp(a, op, b) => {
                let op = match op {
                    CmpOp::Eq => "=",
                    CmpOp::Ne => "≠",
                    CmpOp::Lt => "<",
                    CmpOp::Le => "≤",
                    CmpOp::Gt => ">",
                    CmpOp::Ge => "≥",
                };
                write!(f, "{a} {op} {b}")
            }
            Prop::Not(p) => write!(f, "¬({p})"),
            Prop::And(a, b) => write!(f, "({a} ∧ {b})"),
            Prop::Or(a, b) => write!(f, "({a} ∨ {b})"),
            Prop::Imp(a, b) => write!(f, "({a} → {b})"),
            Prop::Iff(a, b) => write!(f, "({a} ↔ {b})"),
            Prop::Bounded {
                quantifier,
                var,
                lo,
                hi,
                body,
            } => {
                let q = match quantifier {
                    Quantifier::Forall => "∀",
                    Quantifier::Exists => "∃",
                };
                write!(f, "({q} {var} ∈ [{lo}, {hi}], {body})")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_precedence() {
        let p = parse_prop("1 < 2 ∧ 2 < 3 → ¬ 3 < 1 ∨ False").unwrap();
        match p {
            Prop::Imp(lhs, rhs) => {
                assert!(matches!(*lhs, Prop::And(_, _)));
                assert!(matches!(*rhs, Prop::Or(_, _)));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parenthesised_operand_versus_subformula() {
        assert!(matches!(parse_prop("(2 + 3) * 4 = 20").unwrap(), Prop::Cmp(..)));
        assert!(matches!(parse_prop("(1 = 1) ∧ (2 = 2)").unwrap(), Prop::And(..)));
        let nat = parse_prop("(2 : ℕ) - (3 : ℕ) = 0").unwrap();
        match nat {
            Prop::Cmp(Expr::Sub(a, _), CmpOp::Eq, _) => {
                assert!(matches!(*a, Expr::Ascribe(_, NumType::Nat)))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parses_bounded_quantifier() {
        let p = parse_prop("∀ x ∈ [0, 10], x * x ≥ 0").unwrap();
        assert!(matches!(
            p,
            Prop::Bounded {
                quantifier: Quantifier::Forall,
                ..
            }
        ));
    }

    #[test]
    fn parses_document_with_tactic_blocks() {
        let src = "import Toy\n\nlemma a : 1 = 1 := by eval\nlemma w (h : 1 = 1) : 2 = 2 := by sorry\ntheorem t : 1 = 1 ∧ 2 = 2 := by\n  have x : 1 = 1 := a\n  exact ⟨x, w x⟩\n";
        let decls = parse_decls(src).unwrap();
        assert_eq!(decls.len(), 3);
        assert_eq!(decls[1].binders.len(), 1);
        match &decls[2].proof {
            Proof::Tactics(t) => assert_eq!(t.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(decls[2].pos.line, 5);
    }

    #[test]
    fn rejects_trailing_junk_and_unknown_tactics() {
        assert!(parse_decls("lemma a : 1 = 1 := by frobnicate").is_err());
        assert!(parse_prop("1 = 1 1").is_err());
        let err = parse_decls("lemma a : 1 = := by eval").unwrap_err();
        assert_eq!(err.pos.unwrap().line, 1);
    }
}
