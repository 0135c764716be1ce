//! Evaluation and proof checking for the toy language.

use std::time::Instant;

use super::syntax::{CmpOp, Decl, Expr, NumType, Pos, Proof, Prop, Quantifier, Tactic, Term};

/// Upper bound on evaluation steps for a single check.
pub const DEFAULT_STEP_LIMIT: u64 = 20_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    Overflow,
    Type(String),
    Unbound(String),
    /// Step limit or deadline exhausted.
    Exhausted,
}

impl std::fmt::Display for EvalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalError::Overflow => write!(f, "arithmetic overflow"),
            EvalError::Type(m) => write!(f, "type error: {m}"),
            EvalError::Unbound(x) => write!(f, "unknown variable '{x}'"),
            EvalError::Exhausted => write!(f, "evaluation budget exhausted"),
        }
    }
}

/// Step counter with an optional wall-clock deadline.
pub struct Budget {
    remaining: u64,
    deadline: Option<Instant>,
}

impl Budget {
    pub fn new(steps: u64, deadline: Option<Instant>) -> Self {
        Budget {
            remaining: steps,
            deadline,
        }
    }

    pub fn unlimited() -> Self {
        Budget::new(u64::MAX, None)
    }

    fn tick(&mut self) -> Result<(), EvalError> {
        if self.remaining == 0 {
            return Err(EvalError::Exhausted);
        }
        self.remaining -= 1;
        if self.remaining % 4096 == 0 {
            if let Some(d) = self.deadline {
                if Instant::now() >= d {
                    return Err(EvalError::Exhausted);
                }
            }
        }
        Ok(())
    }
}

type Env = Vec<(String, i128)>;

fn lookup(env: &Env, x: &str) -> Result<i128, EvalError> {
    env.iter()
        .rev()
        .find(|(n, _)| n == x)
        .map(|(_, v)| *v)
        .ok_or_else(|| EvalError::Unbound(x.to_string()))
}

fn ascriptions(e: &Expr, acc: &mut Vec<NumType>) {
    match e {
        Expr::Lit(_) | Expr::Var(_) => {}
        Expr::Neg(a) => ascriptions(a, acc),
        Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
            ascriptions(a, acc);
            ascriptions(b, acc);
        }
        Expr::Ascribe(a, t) => {
            acc.push(*t);
            ascriptions(a, acc);
        }
    }
}

/// The numeric type a comparison elaborates to: ℕ when any operand is
/// ascribed ℕ, otherwise ℤ.
fn comparison_type(a: &Expr, b: &Expr) -> Result<NumType, EvalError> {
    let mut tys = Vec::new();
    ascriptions(a, &mut tys);
    ascriptions(b, &mut tys);
    let nat = tys.contains(&NumType::Nat);
    let int = tys.contains(&NumType::Int);
    match (nat, int) {
        (true, true) => Err(EvalError::Type("mixed ℕ and ℤ operands".into())),
        (true, false) => Ok(NumType::Nat),
        _ => Ok(NumType::Int),
    }
}

fn eval_expr(e: &Expr, ty: NumType, env: &Env, budget: &mut Budget) -> Result<i128, EvalError> {
    budget.tick()?;
    let v = match e {
        Expr::Lit(v) => *v,
        Expr::Var(x) => lookup(env, x)?,
        Expr::Neg(a) => {
            if ty == NumType::Nat {
                return Err(EvalError::Type("negation of a natural number".into()));
            }
            eval_expr(a, ty, env, budget)?
                .checked_neg()
                .ok_or(EvalError::Overflow)?
        }
        Expr::Add(a, b) => eval_expr(a, ty, env, budget)?
            .checked_add(eval_expr(b, ty, env, budget)?)
            .ok_or(EvalError::Overflow)?,
        Expr::Sub(a, b) => {
            let d = eval_expr(a, ty, env, budget)?
                .checked_sub(eval_expr(b, ty, env, budget)?)
                .ok_or(EvalError::Overflow)?;
            // truncated subtraction on ℕ
            if ty == NumType::Nat {
                d.max(0)
            } else {
                d
            }
        }
        Expr::Mul(a, b) => eval_expr(a, ty, env, budget)?
            .checked_mul(eval_expr(b, ty, env, budget)?)
            .ok_or(EvalError::Overflow)?,
        Expr::Ascribe(a, _) => eval_expr(a, ty, env, budget)?,
    };
    if ty == NumType::Nat && v < 0 {
        return Err(EvalError::Type(format!("{v} is not a natural number")));
    }
    Ok(v)
}

/// Evaluates a proposition under a variable assignment.
pub fn eval_prop(p: &Prop, env: &mut Env, budget: &mut Budget) -> Result<bool, EvalError> {
    budget.tick()?;
    Ok(match p {
        Prop::True => true,
        Prop::False => false,
        Prop::Cmp(a, op, b) => {
            let ty = comparison_type(a, b)?;
            let x = eval_expr(a, ty, env, budget)?;
            let y = eval_expr(b, ty, env, budget)?;
            match op {
                CmpOp::Eq => x == y,
                CmpOp::Ne => x != y,
                CmpOp::Lt => x < y,
                CmpOp::Le => x <= y,
                CmpOp::Gt => x > y,
                CmpOp::Ge => x >= y,
            }
        }
        Prop::Not(a) => !eval_prop(a, env, budget)?,
        Prop::And(a, b) => eval_prop(a, env, budget)? && eval_prop(b, env, budget)?,
        Prop::Or(a, b) => eval_prop(a, env, budget)? || eval_prop(b, env, budget)?,
        Prop::Imp(a, b) => !eval_prop(a, env, budget)? || eval_prop(b, env, budget)?,
        Prop::Iff(a, b) => eval_prop(a, env, budget)? == eval_prop(b, env, budget)?,
        Prop::Bounded {
            quantifier,
            var,
            lo,
            hi,
            body,
        } => {
            let lo = eval_expr(lo, NumType::Int, env, budget)?;
            let hi = eval_expr(hi, NumType::Int, env, budget)?;
            let mut result = *quantifier == Quantifier::Forall;
            let mut v = lo;
            while v <= hi {
                env.push((var.clone(), v));
                let b = eval_prop(body, env, budget);
                env.pop();
                let b = b?;
                match quantifier {
                    Quantifier::Forall if !b => {
                        result = false;
                        break;
                    }
                    Quantifier::Exists if b => {
                        result = true;
                        break;
                    }
                    _ => {}
                }
                v += 1;
            }
            result
        }
    })
}

/// Outcome of deciding a closed claim by brute force.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub holds: bool,
    /// For a false universally quantified claim, the first falsifying
    /// assignment of the outermost quantifiers.
    pub counterexample: Vec<(String, i128)>,
}

/// Decides a closed claim; when false, searches for a counterexample
/// through the leading universal quantifiers.
pub fn decide(p: &Prop, budget: &mut Budget) -> Result<Evaluation, EvalError> {
    let mut env = Vec::new();
    let holds = eval_prop(p, &mut env, budget)?;
    let mut counterexample = Vec::new();
    if !holds {
        find_witness(p, &mut env, budget, &mut counterexample)?;
    }
    Ok(Evaluation {
        holds,
        counterexample,
    })
}

fn find_witness(
    p: &Prop,
    env: &mut Env,
    budget: &mut Budget,
    out: &mut Vec<(String, i128)>,
) -> Result<bool, EvalError> {
    if let Prop::Bounded {
        quantifier: Quantifier::Forall,
        var,
        lo,
        hi,
        body,
    } = p
    {
        let lo = eval_expr(lo, NumType::Int, env, budget)?;
        let hi = eval_expr(hi, NumType::Int, env, budget)?;
        for v in lo..=hi {
            env.push((var.clone(), v));
            let holds = eval_prop(body, env, budget);
            if matches!(holds, Ok(false)) {
                out.push((var.clone(), v));
                find_witness(body, env, budget, out)?;
                env.pop();
                return Ok(true);
            }
            env.pop();
            holds?;
        }
    }
    Ok(false)
}

/// Structural equality of propositions up to renaming of bound variables.
pub fn alpha_eq(a: &Prop, b: &Prop) -> bool {
    fn expr_eq(a: &Expr, b: &Expr, m: &[(String, String)]) -> bool {
        match (a, b) {
            (Expr::Lit(x), Expr::Lit(y)) => x == y,
            (Expr::Var(x), Expr::Var(y)) => {
                match (
                    m.iter().rev().position(|(l, _)| l == x),
                    m.iter().rev().position(|(_, r)| r == y),
                ) {
                    (Some(i), Some(j)) => i == j,
                    (None, None) => x == y,
                    _ => false,
                }
            }
            (Expr::Neg(x), Expr::Neg(y)) => expr_eq(x, y, m),
            (Expr::Add(a1, a2), Expr::Add(b1, b2))
            | (Expr::Sub(a1, a2), Expr::Sub(b1, b2))
            | (Expr::Mul(a1, a2), Expr::Mul(b1, b2)) => expr_eq(a1, b1, m) && expr_eq(a2, b2, m),
            (Expr::Ascribe(x, t), Expr::Ascribe(y, u)) => t == u && expr_eq(x, y, m),
            _ => false,
        }
    }
    fn go(a: &Prop, b: &Prop, m: &mut Vec<(String, String)>) -> bool {
        match (a, b) {
            (Prop::True, Prop::True) | (Prop::False, Prop::False) => true,
            (Prop::Cmp(a1, o1, a2), Prop::Cmp(b1, o2, b2)) => {
                o1 == o2 && expr_eq(a1, b1, m) && expr_eq(a2, b2, m)
            }
            (Prop::Not(x), Prop::Not(y)) => go(x, y, m),
            (Prop::And(a1, a2), Prop::And(b1, b2))
            | (Prop::Or(a1, a2), Prop::Or(b1, b2))
            | (Prop::Imp(a1, a2), Prop::Imp(b1, b2))
            | (Prop::Iff(a1, a2), Prop::Iff(b1, b2)) => go(a1, b1, m) && go(a2, b2, m),
            (
                Prop::Bounded {
                    quantifier: q1,
                    var: v1,
                    lo: l1,
                    hi: h1,
                    body: b1,
                },
                Prop::Bounded {
                    quantifier: q2,
                    var: v2,
                    lo: l2,
                    hi: h2,
                    body: b2,
                },
            ) => {
                if q1 != q2 || !expr_eq(l1, l2, m) || !expr_eq(h1, h2, m) {
                    return false;
                }
                m.push((v1.clone(), v2.clone()));
                let r = go(b1, b2, m);
                m.pop();
                r
            }
            _ => false,
        }
    }
    go(a, b, &mut Vec::new())
}

/// A named fact available for citation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub name: String,
    pub prop: Prop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckError {
    pub pos: Pos,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeclStatus {
    Proved,
    SorryAdmitted,
}

struct Checker<'a> {
    globals: &'a [Fact],
    locals: Vec<Fact>,
    used_sorry: bool,
    budget: &'a mut Budget,
}

fn err<T>(pos: Pos, message: impl Into<String>) -> Result<T, CheckError> {
    Err(CheckError {
        pos,
        message: message.into(),
    })
}

impl Checker<'_> {
    fn resolve(&self, name: &str, pos: Pos) -> Result<Prop, CheckError> {
        if let Some(f) = self.locals.iter().rev().find(|f| f.name == name) {
            return Ok(f.prop.clone());
        }
        if let Some(f) = self.globals.iter().rev().find(|f| f.name == name) {
            return Ok(f.prop.clone());
        }
        if let Some((base, field)) = name.rsplit_once('.') {
            let base_prop = self.resolve(base, pos)?;
            return match (field, base_prop) {
                ("1" | "left", Prop::And(a, _)) => Ok(*a),
                ("2" | "right", Prop::And(_, b)) => Ok(*b),
                ("mp", Prop::Iff(a, b)) => Ok(Prop::Imp(a, b)),
                ("mpr", Prop::Iff(a, b)) => Ok(Prop::Imp(b, a)),
                (_, p) => err(pos, format!("invalid projection '.{field}' of '{base} : {p}'")),
            };
        }
        err(pos, format!("unknown identifier '{name}'"))
    }

    fn infer(&mut self, t: &Term) -> Result<Prop, CheckError> {
        match t {
            Term::Name(n, pos) => self.resolve(n, *pos),
            Term::App(f, args, _) => {
                let mut ty = self.infer(f)?;
                for a in args {
                    match ty {
                        Prop::Imp(hyp, concl) => {
                            self.check(a, &hyp)?;
                            ty = *concl;
                        }
                        other => {
                            return err(a.pos(), format!("function expected, but '{other}' is not an implication"))
                        }
                    }
                }
                Ok(ty)
            }
            Term::Anon(_, pos) | Term::By(_, pos) | Term::Sorry(pos) => {
                err(*pos, "cannot infer the type of this term without an expected type")
            }
        }
    }

    fn check(&mut self, t: &Term, expected: &Prop) -> Result<(), CheckError> {
        match t {
            Term::Sorry(_) => {
                self.used_sorry = true;
                Ok(())
            }
            Term::By(tac, _) => self.run_tactics(std::slice::from_ref(tac), expected),
            Term::Anon(items, pos) => {
                let (first, rest) = items.split_first().expect("parser yields non-empty");
                if rest.is_empty() {
                    return self.check(first, expected);
                }
                match expected {
                    Prop::And(a, b) => {
                        self.check(first, a)?;
                        let tail = Term::Anon(rest.to_vec(), rest[0].pos());
                        self.check(&tail, b)
                    }
                    Prop::Iff(a, b) if rest.len() == 1 => {
                        self.check(first, &Prop::Imp(a.clone(), b.clone()))?;
                        self.check(&rest[0], &Prop::Imp(b.clone(), a.clone()))
                    }
                    other => err(*pos, format!("anonymous constructor expects a conjunction, goal is '{other}'")),
                }
            }
            Term::Name(..) | Term::App(..) => {
                let got = self.infer(t)?;
                if alpha_eq(&got, expected) {
                    Ok(())
                } else {
                    err(t.pos(), format!("type mismatch: term has type '{got}' but is expected to have type '{expected}'"))
                }
            }
        }
    }

    fn eval_goal(&mut self, goal: &Prop, pos: Pos) -> Result<(), CheckError> {
        let claim = self
            .locals
            .iter()
            .rev()
            .fold(goal.clone(), |acc, h| Prop::Imp(Box::new(h.prop.clone()), Box::new(acc)));
        match decide(&claim, self.budget) {
            Ok(e) if e.holds => Ok(()),
            Ok(e) => {
                let mut msg = format!("eval failed: '{goal}' evaluates to False");
                if !e.counterexample.is_empty() {
                    let cx: Vec<String> = e
                        .counterexample
                        .iter()
                        .map(|(x, v)| format!("{x} := {v}"))
                        .collect();
                    msg.push_str(&format!(" (counterexample: {})", cx.join(", ")));
                }
                err(pos, msg)
            }
            Err(EvalError::Exhausted) => Err(CheckError {
                pos,
                message: TIMEOUT_MARKER.to_string(),
            }),
            Err(e) => err(pos, format!("eval failed: {e}")),
        }
    }

    fn run_tactics(&mut self, tactics: &[Tactic], goal: &Prop) -> Result<(), CheckError> {
        let depth = self.locals.len();
        let result = self.run_tactics_inner(tactics, goal);
        self.locals.truncate(depth);
        result
    }

    fn run_tactics_inner(&mut self, tactics: &[Tactic], goal: &Prop) -> Result<(), CheckError> {
        for (i, tac) in tactics.iter().enumerate() {
            let last = i + 1 == tactics.len();
            match tac {
                Tactic::Have {
                    name, prop, proof, ..
                } => {
                    self.check(proof, prop)?;
                    self.locals.push(Fact {
                        name: name.clone(),
                        prop: prop.clone(),
                    });
                    if last {
                        return err(tac_pos(tac), "unsolved goals after 'have'");
                    }
                }
                Tactic::Exact(t, pos) => {
                    self.check(t, goal)?;
                    if !last {
                        return err(*pos, "no goals remain after 'exact'");
                    }
                    return Ok(());
                }
                Tactic::Eval(pos) => {
                    self.eval_goal(goal, *pos)?;
                    if !last {
                        return err(*pos, "no goals remain after 'eval'");
                    }
                    return Ok(());
                }
                Tactic::Sorry(_) => {
                    self.used_sorry = true;
                    return Ok(());
                }
            }
        }
        err(tactics.last().map(tac_pos).unwrap_or_default(), "unsolved goals")
    }
}

fn tac_pos(t: &Tactic) -> Pos {
    match t {
        Tactic::Have { pos, .. } | Tactic::Exact(_, pos) | Tactic::Eval(pos) | Tactic::Sorry(pos) => *pos,
    }
}

/// Message text used when a check runs out of budget.
pub const TIMEOUT_MARKER: &str = "timeout: evaluation budget exhausted";

/// Checks one declaration against the available facts.
pub fn check_decl(decl: &Decl, globals: &[Fact], budget: &mut Budget) -> Result<DeclStatus, CheckError> {
    let mut checker = Checker {
        globals,
        locals: decl
            .binders
            .iter()
            .map(|(n, p)| Fact {
                name: n.clone(),
                prop: p.clone(),
            })
            .collect(),
        used_sorry: false,
        budget,
    };
    match &decl.proof {
        Proof::Tactics(tactics) => checker.run_tactics_inner(tactics, &decl.prop)?,
        Proof::Term(t) => checker.check(t, &decl.prop)?,
    }
    Ok(if checker.used_sorry {
        DeclStatus::SorryAdmitted
    } else {
        DeclStatus::Proved
    })
}

#[cfg(test)]
mod tests {
    use super::super::syntax::{parse_decls, parse_prop};
    use super::*;

    fn holds(src: &str) -> bool {
        decide(&parse_prop(src).unwrap(), &mut Budget::unlimited()).unwrap().holds
    }

    #[test]
    fn evaluates_integer_and_natural_arithmetic() {
        assert!(holds("2 + 3 = 5"));
        assert!(!holds("2 + 2 = 5"));
        assert!(holds("2 - 3 = -1"));
        assert!(holds("(2 : ℕ) - (3 : ℕ) = 0"));
        assert!(holds("(2 : ℕ) - 3 = 0"));
        assert!(holds("∀ x ∈ [0, 20], x * x ≥ x"));
        assert!(holds("∃ x ∈ [0, 20], x * x = 49"));
        assert!(!holds("∃ x ∈ [0, 6], x * x = 49"));
    }

    #[test]
    fn finds_counterexample_in_quantified_claim() {
        let p = parse_prop("∀ x ∈ [0, 10], ∀ y ∈ [0, 10], x + y ≤ 15").unwrap();
        let e = decide(&p, &mut Budget::unlimited()).unwrap();
        assert!(!e.holds);
        assert_eq!(e.counterexample, vec![("x".into(), 6), ("y".into(), 10)]);
    }

    #[test]
    fn mixed_types_are_rejected() {
        let p = parse_prop("(1 : ℕ) = (1 : ℤ)").unwrap();
        assert!(matches!(
            decide(&p, &mut Budget::unlimited()),
            Err(EvalError::Type(_))
        ));
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let p = parse_prop("∀ x ∈ [0, 100000], ∀ y ∈ [0, 100000], x + y ≥ 0").unwrap();
        let r = decide(&p, &mut Budget::new(10_000, None));
        assert_eq!(r, Err(EvalError::Exhausted));
    }

    #[test]
    fn alpha_equivalence_respects_binding() {
        let a = parse_prop("∀ x ∈ [0, 3], x ≤ 3").unwrap();
        let b = parse_prop("∀ y ∈ [0, 3], y ≤ 3").unwrap();
        let c = parse_prop("∀ y ∈ [0, 3], x ≤ 3").unwrap();
        assert!(alpha_eq(&a, &b));
        assert!(!alpha_eq(&a, &c));
    }

    fn facts(src: &str) -> Vec<Fact> {
        parse_decls(src)
            .unwrap()
            .into_iter()
            .map(|d| Fact {
                prop: d.full_type(),
                name: d.name,
            })
            .collect()
    }

    #[test]
    fn modus_ponens_and_projections() {
        let ctx = facts("lemma ab : 1 = 1 ∧ 2 = 2 := by eval\nlemma imp (h : 2 = 2) : 3 = 3 := by eval");
        let d = &parse_decls("theorem t : 3 = 3 := imp ab.2").unwrap()[0];
        assert_eq!(check_decl(d, &ctx, &mut Budget::unlimited()), Ok(DeclStatus::Proved));
        let bad = &parse_decls("theorem t : 3 = 3 := imp ab.1").unwrap()[0];
        assert!(check_decl(bad, &ctx, &mut Budget::unlimited()).is_err());
    }

    #[test]
    fn sorry_is_tracked() {
        let d = &parse_decls("lemma s : 1 = 2 := by sorry").unwrap()[0];
        assert_eq!(
            check_decl(d, &[], &mut Budget::unlimited()),
            Ok(DeclStatus::SorryAdmitted)
        );
    }

    #[test]
    fn eval_uses_local_hypotheses() {
        let d = &parse_decls("lemma h (a : 1 = 2) : 5 = 7 := by eval").unwrap()[0];
        assert_eq!(check_decl(d, &[], &mut Budget::unlimited()), Ok(DeclStatus::Proved));
    }
}
