//! Abstract syntax of counting metric first-order temporal binding logic
//! and its finite-trace evaluation.
//!
//! [`Formula`] has exactly eight constructors. `and`, `implies`, `forall`,
//! `eventually`, `always` and max-prevalence are syntactic sugar built by
//! the helper constructors below. Their non-metric variants use
//! [`Interval::UNBOUNDED`].

mod eval;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

use crate::scene::Time;
use crate::signature::{constant_sort, Func, Rel, Sort, Value};

pub use eval::{active_domain, eval_term, evaluate, evaluate_all, satisfies, Evaluator};

/// Half-open interval `[lower, upper)` over the naturals; `upper = None`
/// means infinity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Interval {
    lower: u64,
    upper: Option<u64>,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval { lower: 0, upper: None };

    pub fn new(lower: u64, upper: Option<u64>) -> Result<Self, LogicError> {
        if let Some(u) = upper {
            if lower >= u {
                return Err(LogicError::EmptyInterval { lower, upper: u });
            }
        }
        Ok(Interval { lower, upper })
    }

    pub fn lower(&self) -> u64 {
        self.lower
    }

    pub fn upper(&self) -> Option<u64> {
        self.upper
    }

    pub fn is_unbounded(&self) -> bool {
        *self == Self::UNBOUNDED
    }

    /// `lower <= d < upper` for a time difference `d`.
    pub fn contains(&self, d: Time) -> bool {
        d >= Time::from_integer(self.lower as i64) && self.upper.is_none_or(|u| d < Time::from_integer(u as i64))
    }

    /// Whether every difference `>= d` lies beyond the interval.
    pub fn exceeded_by(&self, d: Time) -> bool {
        self.upper.is_some_and(|u| d >= Time::from_integer(u as i64))
    }
}

impl Default for Interval {
    fn default() -> Self {
        Self::UNBOUNDED
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.upper {
            Some(u) => write!(f, "{}..{}", self.lower, u),
            None => write!(f, "{}..", self.lower),
        }
    }
}

/// Exact prevalence fraction `p` with `0 <= p <= 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fraction(Ratio<u64>);

impl Fraction {
    pub const ZERO: Fraction = Fraction(Ratio::new_raw(0, 1));
    pub const ONE: Fraction = Fraction(Ratio::new_raw(1, 1));

    pub fn new(numer: u64, denom: u64) -> Result<Self, LogicError> {
        if denom == 0 || numer > denom {
            return Err(LogicError::BadFraction { numer, denom });
        }
        Ok(Fraction(Ratio::new(numer, denom)))
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    /// `1 - p`
    pub fn complement(&self) -> Fraction {
        Fraction(Ratio::from_integer(1) - self.0)
    }

    /// `satisfied / total >= p`, compared without division. An empty
    /// range (`total == 0`) counts as satisfied.
    pub fn reached(&self, satisfied: u64, total: u64) -> bool {
        u128::from(satisfied) * u128::from(self.denom()) >= u128::from(self.numer()) * u128::from(total)
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

pub type Var = String;

#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Const(Value),
    Var(Var),
    Apply(Func, Vec<Term>),
}

impl Term {
    pub fn var(name: &str) -> Term {
        Term::Var(name.to_owned())
    }

    pub fn num(v: f64) -> Term {
        Term::Const(Value::num(v))
    }

    pub fn apply(f: Func, args: Vec<Term>) -> Term {
        Term::Apply(f, args)
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match self {
            Term::Const(_) => {}
            Term::Var(v) => {
                out.insert(v.clone());
            }
            Term::Apply(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    fn collect_constants(&self, out: &mut BTreeSet<Value>) {
        match self {
            Term::Const(c) => {
                out.insert(*c);
            }
            Term::Var(_) => {}
            Term::Apply(_, args) => args.iter().for_each(|a| a.collect_constants(out)),
        }
    }

    /// Replaces variables by terms.
    pub fn substitute(&self, subst: &BTreeMap<Var, Term>) -> Term {
        match self {
            Term::Const(c) => Term::Const(*c),
            Term::Var(v) => subst.get(v).cloned().unwrap_or_else(|| self.clone()),
            Term::Apply(f, args) => Term::Apply(*f, args.iter().map(|a| a.substitute(subst)).collect()),
        }
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    /// Static sort; variables are [`Sort::Any`].
    pub fn sort(&self) -> Sort {
        match self {
            Term::Const(c) => constant_sort(*c),
            Term::Var(_) => Sort::Any,
            Term::Apply(f, _) => f.result(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Formula {
    Pred(Rel, Vec<Term>),
    Not(Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Exists(Var, Box<Formula>),
    /// Evaluates the term in the current scene and binds it to the variable.
    Bind(Term, Var, Box<Formula>),
    Next(Interval, Box<Formula>),
    Until(Interval, Box<Formula>, Box<Formula>),
    MinPrevalence(Interval, Fraction, Box<Formula>),
}

impl Formula {
    pub fn truth() -> Formula {
        Formula::Pred(Rel::True, Vec::new())
    }

    pub fn falsity() -> Formula {
        Formula::not(Formula::truth())
    }

    pub fn pred(rel: Rel, args: Vec<Term>) -> Formula {
        Formula::Pred(rel, args)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(f: Formula) -> Formula {
        Formula::Not(Box::new(f))
    }

    pub fn or(a: Formula, b: Formula) -> Formula {
        Formula::Or(Box::new(a), Box::new(b))
    }

    pub fn exists(x: &str, body: Formula) -> Formula {
        Formula::Exists(x.to_owned(), Box::new(body))
    }

    pub fn bind(term: Term, x: &str, body: Formula) -> Formula {
        Formula::Bind(term, x.to_owned(), Box::new(body))
    }

    pub fn next(i: Interval, body: Formula) -> Formula {
        Formula::Next(i, Box::new(body))
    }

    pub fn until(i: Interval, lhs: Formula, rhs: Formula) -> Formula {
        Formula::Until(i, Box::new(lhs), Box::new(rhs))
    }

    pub fn min_prevalence(i: Interval, p: Fraction, body: Formula) -> Formula {
        Formula::MinPrevalence(i, p, Box::new(body))
    }

    /// `¬(¬a ∨ ¬b)`
    pub fn and(a: Formula, b: Formula) -> Formula {
        Formula::not(Formula::or(Formula::not(a), Formula::not(b)))
    }

    /// `¬a ∨ b`
    pub fn implies(a: Formula, b: Formula) -> Formula {
        Formula::or(Formula::not(a), b)
    }

    /// `¬∃x: ¬φ`
    pub fn forall(x: &str, body: Formula) -> Formula {
        Formula::not(Formula::exists(x, Formula::not(body)))
    }

    /// `⊤ U_I φ`
    pub fn eventually(i: Interval, body: Formula) -> Formula {
        Formula::until(i, Formula::truth(), body)
    }

    /// `¬◇_I ¬φ`
    pub fn always(i: Interval, body: Formula) -> Formula {
        Formula::not(Formula::eventually(i, Formula::not(body)))
    }

    /// `∇^{1-p}_I ¬φ`
    pub fn max_prevalence(i: Interval, p: Fraction, body: Formula) -> Formula {
        Formula::min_prevalence(i, p.complement(), Formula::not(body))
    }

    pub fn free_vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<Var>, out: &mut BTreeSet<Var>) {
        let mut note = |t: &Term, bound: &Vec<Var>| {
            let mut vars = BTreeSet::new();
            t.collect_vars(&mut vars);
            out.extend(vars.into_iter().filter(|v| !bound.contains(v)));
        };
        match self {
            Formula::Pred(_, args) => args.iter().for_each(|a| note(a, bound)),
            Formula::Not(a) | Formula::Next(_, a) | Formula::MinPrevalence(_, _, a) => a.collect_free(bound, out),
            Formula::Or(a, b) | Formula::Until(_, a, b) => {
                a.collect_free(bound, out);
                b.collect_free(bound, out);
            }
            Formula::Exists(x, body) => {
                bound.push(x.clone());
                body.collect_free(bound, out);
                bound.pop();
            }
            Formula::Bind(t, x, body) => {
                note(t, bound);
                bound.push(x.clone());
                body.collect_free(bound, out);
                bound.pop();
            }
        }
    }

    /// Capture-avoiding substitution of free variables. Bound variables
    /// that would capture a variable of a replacement term are renamed.
    pub fn substitute(&self, subst: &BTreeMap<Var, Term>) -> Formula {
        if subst.is_empty() {
            return self.clone();
        }
        match self {
            Formula::Pred(r, args) => Formula::Pred(*r, args.iter().map(|a| a.substitute(subst)).collect()),
            Formula::Not(a) => Formula::not(a.substitute(subst)),
            Formula::Or(a, b) => Formula::or(a.substitute(subst), b.substitute(subst)),
            Formula::Exists(x, body) => {
                let (x, body) = enter_binder(x, body, subst);
                Formula::Exists(x, Box::new(body))
            }
            Formula::Bind(t, x, body) => {
                let t = t.substitute(subst);
                let (x, body) = enter_binder(x, body, subst);
                Formula::Bind(t, x, Box::new(body))
            }
            Formula::Next(i, a) => Formula::next(*i, a.substitute(subst)),
            Formula::Until(i, a, b) => Formula::until(*i, a.substitute(subst), b.substitute(subst)),
            Formula::MinPrevalence(i, p, a) => Formula::min_prevalence(*i, *p, a.substitute(subst)),
        }
    }

    /// Every variable name occurring in the formula, bound or free.
    pub fn all_vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| match f {
            Formula::Pred(_, args) => args.iter().for_each(|a| a.collect_vars(&mut out)),
            Formula::Exists(x, _) => {
                out.insert(x.clone());
            }
            Formula::Bind(t, x, _) => {
                t.collect_vars(&mut out);
                out.insert(x.clone());
            }
            _ => {}
        });
        out
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }

    /// Constant values (numeric literals and named constants) occurring in
    /// the formula.
    pub fn constants(&self) -> BTreeSet<Value> {
        let mut out = BTreeSet::new();
        self.visit(&mut |f| {
            if let Formula::Pred(_, args) = f {
                args.iter().for_each(|a| a.collect_constants(&mut out));
            }
            if let Formula::Bind(t, _, _) = f {
                t.collect_constants(&mut out);
            }
        });
        out
    }

    /// Pre-order traversal.
    pub fn visit(&self, f: &mut impl FnMut(&Formula)) {
        f(self);
        match self {
            Formula::Pred(..) => {}
            Formula::Not(a) | Formula::Exists(_, a) | Formula::Bind(_, _, a) => a.visit(f),
            Formula::Next(_, a) | Formula::MinPrevalence(_, _, a) => a.visit(f),
            Formula::Or(a, b) | Formula::Until(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// Nesting depth; atoms have depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Formula::Pred(..) => 1,
            Formula::Not(a) | Formula::Exists(_, a) | Formula::Bind(_, _, a) => 1 + a.depth(),
            Formula::Next(_, a) | Formula::MinPrevalence(_, _, a) => 1 + a.depth(),
            Formula::Or(a, b) | Formula::Until(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Arity and sort check against the signature, plus a check that every
    /// free variable is in `bound`.
    pub fn check(&self, bound: &BTreeSet<Var>) -> Result<(), LogicError> {
        let mut scope: Vec<Var> = bound.iter().cloned().collect();
        self.check_in(&mut scope)
    }

    fn check_in(&self, scope: &mut Vec<Var>) -> Result<(), LogicError> {
        match self {
            Formula::Pred(rel, args) => {
                check_args(rel.name(), rel.params(), args, scope)?;
                if matches!(rel, Rel::Eq | Rel::Neq) {
                    let (a, b) = (args[0].sort(), args[1].sort());
                    if !a.accepts(b) {
                        return Err(LogicError::Sort {
                            symbol: rel.name().to_owned(),
                            position: 1,
                            expected: a,
                            got: b,
                        });
                    }
                }
                Ok(())
            }
            Formula::Not(a) | Formula::Next(_, a) | Formula::MinPrevalence(_, _, a) => a.check_in(scope),
            Formula::Or(a, b) | Formula::Until(_, a, b) => {
                a.check_in(scope)?;
                b.check_in(scope)
            }
            Formula::Exists(x, body) => {
                scope.push(x.clone());
                let r = body.check_in(scope);
                scope.pop();
                r
            }
            Formula::Bind(t, x, body) => {
                check_term(t, scope)?;
                scope.push(x.clone());
                let r = body.check_in(scope);
                scope.pop();
                r
            }
        }
    }
}

fn enter_binder(x: &Var, body: &Formula, subst: &BTreeMap<Var, Term>) -> (Var, Formula) {
    let mut inner = subst.clone();
    inner.remove(x);
    let inner: BTreeMap<Var, Term> = inner
        .into_iter()
        .filter(|(v, _)| body.free_vars().contains(v))
        .collect();
    if inner.is_empty() {
        return (x.clone(), body.clone());
    }
    let captured = inner.values().any(|t| t.vars().contains(x));
    if !captured {
        return (x.clone(), body.substitute(&inner));
    }
    let mut taken = body.all_vars();
    inner.values().for_each(|t| taken.extend(t.vars()));
    taken.extend(inner.keys().cloned());
    let fresh = (1..)
        .map(|n| format!("{x}_{n}"))
        .find(|c| !taken.contains(c))
        .expect("unbounded supply of names");
    let renamed = body.substitute(&BTreeMap::from([(x.clone(), Term::Var(fresh.clone()))]));
    (fresh, renamed.substitute(&inner))
}

fn check_args(symbol: &str, params: &[Sort], args: &[Term], scope: &[Var]) -> Result<(), LogicError> {
    if params.len() != args.len() {
        return Err(LogicError::Arity {
            symbol: symbol.to_owned(),
            expected: params.len(),
            got: args.len(),
        });
    }
    for (position, (param, arg)) in params.iter().zip(args).enumerate() {
        check_term(arg, scope)?;
        if !param.accepts(arg.sort()) {
            return Err(LogicError::Sort {
                symbol: symbol.to_owned(),
                position,
                expected: *param,
                got: arg.sort(),
            });
        }
    }
    Ok(())
}

fn check_term(t: &Term, scope: &[Var]) -> Result<(), LogicError> {
    match t {
        Term::Const(Value::Undefined) => Err(LogicError::UndefinedConstant),
        Term::Const(_) => Ok(()),
        Term::Var(v) if scope.contains(v) => Ok(()),
        Term::Var(v) => Err(LogicError::UnboundVariable(v.clone())),
        Term::Apply(f, args) => check_args(f.name(), f.params(), args, scope),
    }
}

/// Mapping from variables to domain values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Valuation(BTreeMap<Var, Value>);

impl Valuation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, x: &str) -> Option<Value> {
        self.0.get(x).copied()
    }

    /// `v[x ↦ d]`; other variables are unchanged.
    pub fn with(&self, x: &str, d: Value) -> Valuation {
        let mut next = self.clone();
        next.0.insert(x.to_owned(), d);
        next
    }

    pub fn vars(&self) -> BTreeSet<Var> {
        self.0.keys().cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Value)> {
        self.0.iter()
    }
}

impl FromIterator<(Var, Value)> for Valuation {
    fn from_iter<I: IntoIterator<Item = (Var, Value)>>(iter: I) -> Self {
        Valuation(iter.into_iter().collect())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LogicError {
    #[error("interval [{lower}, {upper}) is empty")]
    EmptyInterval { lower: u64, upper: u64 },
    #[error("prevalence fraction {numer}/{denom} is outside [0, 1]")]
    BadFraction { numer: u64, denom: u64 },
    #[error("symbol `{symbol}` expects {expected} argument(s), got {got}")]
    Arity {
        symbol: String,
        expected: usize,
        got: usize,
    },
    #[error("argument {position} of `{symbol}` must be {expected}, found {got}")]
    Sort {
        symbol: String,
        position: usize,
        expected: Sort,
        got: Sort,
    },
    #[error("variable `{0}` is not bound")]
    UnboundVariable(String),
    #[error("the undefined value cannot be used as a constant")]
    UndefinedConstant,
    #[error("scene index {index} out of range for a trace of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("value {0} does not exist in the trace or map")]
    Dangling(String),
    #[error("formula is not closed; free variables: {0:?}")]
    NotClosed(Vec<Var>),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_membership() {
        let i = Interval::new(2, Some(5)).unwrap();
        assert!(!i.contains(Time::new(3, 2)));
        assert!(i.contains(Time::from_integer(2)));
        assert!(i.contains(Time::new(9, 2)));
        assert!(!i.contains(Time::from_integer(5)));
        assert!(Interval::UNBOUNDED.contains(Time::from_integer(1_000_000)));
        assert!(Interval::new(3, Some(3)).is_err());
        assert!(Interval::new(4, Some(3)).is_err());
    }

    #[test]
    fn fraction_boundaries() {
        let p = Fraction::new(4, 5).unwrap();
        assert!(p.reached(4, 5));
        assert!(!p.reached(3, 5));
        assert!(p.reached(8, 10));
        assert!(p.reached(0, 0));
        assert!(Fraction::ZERO.reached(0, 7));
        assert!(Fraction::ONE.reached(7, 7));
        assert!(!Fraction::ONE.reached(6, 7));
        assert!(Fraction::new(6, 5).is_err());
        assert_eq!(Fraction::new(1, 5).unwrap().complement(), p);
    }

    #[test]
    fn derived_operators_expand_syntactically() {
        let p = Formula::pred(Rel::IsVehicle, vec![Term::var("x")]);
        assert_eq!(
            Formula::forall("x", p.clone()),
            Formula::not(Formula::exists("x", Formula::not(p.clone())))
        );
        assert_eq!(
            Formula::implies(Formula::truth(), p.clone()),
            Formula::or(Formula::not(Formula::truth()), p.clone())
        );
        assert_eq!(
            Formula::always(Interval::UNBOUNDED, p.clone()),
            Formula::not(Formula::until(
                Interval::UNBOUNDED,
                Formula::truth(),
                Formula::not(p.clone())
            ))
        );
        let p02 = Fraction::new(1, 5).unwrap();
        assert_eq!(
            Formula::max_prevalence(Interval::UNBOUNDED, p02, p.clone()),
            Formula::min_prevalence(Interval::UNBOUNDED, Fraction::new(4, 5).unwrap(), Formula::not(p))
        );
    }

    #[test]
    fn substitution_avoids_capture() {
        // ∃y: onLane(y, x)  with x ↦ y  must not become  ∃y: onLane(y, y)
        let f = Formula::exists("y", Formula::pred(Rel::OnLane, vec![Term::var("y"), Term::var("x")]));
        let g = f.substitute(&BTreeMap::from([("x".to_owned(), Term::var("y"))]));
        match &g {
            Formula::Exists(z, body) => {
                assert_ne!(z, "y");
                assert_eq!(
                    **body,
                    Formula::pred(Rel::OnLane, vec![Term::Var(z.clone()), Term::var("y")])
                );
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(g.free_vars(), BTreeSet::from(["y".to_owned()]));
        // shadowed variables are left alone
        let h = f.substitute(&BTreeMap::from([("y".to_owned(), Term::num(1.0))]));
        assert_eq!(h, f);
    }

    #[test]
    fn free_variables_and_checks() {
        let body = Formula::pred(Rel::OnLane, vec![Term::var("v"), Term::var("l")]);
        let f = Formula::exists("v", body.clone());
        assert_eq!(f.free_vars(), BTreeSet::from(["l".to_owned()]));
        assert!(matches!(
            f.check(&BTreeSet::new()),
            Err(LogicError::UnboundVariable(v)) if v == "l"
        ));
        assert!(f.check(&BTreeSet::from(["l".to_owned()])).is_ok());

        let bad = Formula::pred(
            Rel::Lt,
            vec![Term::apply(Func::Lane, vec![Term::var("v")]), Term::num(3.0)],
        );
        assert!(matches!(
            Formula::exists("v", bad).check(&BTreeSet::new()),
            Err(LogicError::Sort { .. })
        ));
        let arity = Formula::pred(Rel::OnLane, vec![Term::num(1.0)]);
        assert!(matches!(arity.check(&BTreeSet::new()), Err(LogicError::Arity { .. })));
    }
}
