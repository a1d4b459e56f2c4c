//! Elaboration of surface trees into core formulas.

use std::collections::{BTreeMap, HashMap};

use super::syntax::{ArithOp, CmpOp, DomainKw, Expr, ExprKind, RawDef, TemporalOp};
use super::{Definition, ErrorKind, Library, ParseError, Pos};
use crate::logic::{Formula, Interval, Term, Var};
use crate::signature::{constant, constant_sort, Func, Rel, Sort, Value};

pub(crate) fn sort_from_name(name: &str) -> Option<Sort> {
    Some(match name {
        "vehicle" => Sort::Vehicle,
        "pedestrian" => Sort::Pedestrian,
        "actor" => Sort::Actor,
        "lane" => Sort::Lane,
        "road" => Sort::Road,
        "number" => Sort::Number,
        "weather" => Sort::Weather,
        "daytime" => Sort::Daytime,
        "any" => Sort::Any,
        _ => return None,
    })
}

/// Resolves named definitions, elaborating raw ones on first use.
pub(crate) struct Resolver<'l> {
    pub base: &'l Library,
    pub raw: HashMap<String, RawDef>,
    pub done: BTreeMap<String, Definition>,
    visiting: Vec<String>,
}

impl<'l> Resolver<'l> {
    pub fn new(base: &'l Library, raw: Vec<RawDef>) -> Result<Self, ParseError> {
        let mut map = HashMap::new();
        for d in raw {
            if base.get(&d.name).is_some() || map.contains_key(&d.name) {
                return Err(ParseError::new(
                    d.pos,
                    ErrorKind::Duplicate,
                    format!("`{}` is defined more than once", d.name),
                ));
            }
            if Rel::from_name(&d.name).is_some() || Func::from_name(&d.name).is_some() || constant(&d.name).is_some() {
                return Err(ParseError::new(
                    d.pos,
                    ErrorKind::Duplicate,
                    format!("`{}` is a built-in symbol and cannot be redefined", d.name),
                ));
            }
            map.insert(d.name.clone(), d);
        }
        Ok(Resolver {
            base,
            raw: map,
            done: BTreeMap::new(),
            visiting: Vec::new(),
        })
    }

    fn lookup(&mut self, name: &str, pos: Pos) -> Result<Option<Definition>, ParseError> {
        if let Some(d) = self.base.get(name) {
            return Ok(Some(d.clone()));
        }
        if let Some(d) = self.done.get(name) {
            return Ok(Some(d.clone()));
        }
        if !self.raw.contains_key(name) {
            return Ok(None);
        }
        if let Some(start) = self.visiting.iter().position(|v| v == name) {
            let mut chain = self.visiting[start..].to_vec();
            chain.push(name.to_owned());
            return Err(ParseError::new(
                pos,
                ErrorKind::Cycle,
                format!("cyclic definition: {}", chain.join(" -> ")),
            ));
        }
        self.define(name)?;
        Ok(self.done.get(name).cloned())
    }

    pub fn define(&mut self, name: &str) -> Result<(), ParseError> {
        if self.done.contains_key(name) {
            return Ok(());
        }
        let raw = self.raw[name].clone();
        self.visiting.push(name.to_owned());
        let mut params = Vec::new();
        for p in &raw.params {
            let sort = sort_from_name(&p.sort)
                .ok_or_else(|| ParseError::new(p.pos, ErrorKind::Type, format!("unknown sort `{}`", p.sort)))?;
            if params.iter().any(|(n, _): &(Var, Sort)| *n == p.name) {
                return Err(ParseError::new(
                    p.pos,
                    ErrorKind::Duplicate,
                    format!("parameter `{}` declared twice", p.name),
                ));
            }
            params.push((p.name.clone(), sort));
        }
        let body = Elab {
            defs: self,
            scope: params.clone(),
        }
        .formula(&raw.body)?;
        self.visiting.pop();
        self.done.insert(
            name.to_owned(),
            Definition {
                name: name.to_owned(),
                params,
                body,
                text: raw.text,
            },
        );
        Ok(())
    }
}

enum Elaborated {
    Formula(Formula),
    Term(Term, Sort),
}

pub(crate) struct Elab<'r, 'l> {
    pub defs: &'r mut Resolver<'l>,
    pub scope: Vec<(Var, Sort)>,
}

fn err(pos: Pos, kind: ErrorKind, message: String) -> ParseError {
    ParseError::new(pos, kind, message)
}

impl Elab<'_, '_> {
    pub fn formula(&mut self, e: &Expr) -> Result<Formula, ParseError> {
        match self.elab(e)? {
            Elaborated::Formula(f) => Ok(f),
            Elaborated::Term(t, _) => Err(err(
                e.pos,
                ErrorKind::Type,
                format!("expected a formula, found the term `{t}`"),
            )),
        }
    }

    fn term(&mut self, e: &Expr) -> Result<(Term, Sort), ParseError> {
        match self.elab(e)? {
            Elaborated::Term(t, s) => Ok((t, s)),
            Elaborated::Formula(f) => Err(err(
                e.pos,
                ErrorKind::Type,
                format!("expected a term, found the formula `{f}`"),
            )),
        }
    }

    fn var_sort(&self, x: &str) -> Option<Sort> {
        self.scope.iter().rev().find(|(v, _)| v == x).map(|(_, s)| *s)
    }

    fn scoped<T>(&mut self, var: &str, sort: Sort, f: impl FnOnce(&mut Self) -> T) -> T {
        self.scope.push((var.to_owned(), sort));
        let r = f(self);
        self.scope.pop();
        r
    }

    fn check_sorts(&self, symbol: &str, params: &[Sort], args: &[(Term, Sort)], pos: &[Pos]) -> Result<(), ParseError> {
        for (k, ((_, actual), expected)) in args.iter().zip(params).enumerate() {
            if !expected.accepts(*actual) {
                return Err(err(
                    pos[k],
                    ErrorKind::Type,
                    format!("argument {} of `{symbol}` must be {expected}, found {actual}", k + 1),
                ));
            }
        }
        Ok(())
    }

    /// Applies a relation, function or definition to already-ordered
    /// arguments.
    fn apply(&mut self, name: &str, args: &[&Expr], pos: Pos, member: bool) -> Result<Elaborated, ParseError> {
        let arity_err = |expected: usize| {
            err(
                pos,
                ErrorKind::Arity,
                format!("`{name}` expects {expected} argument(s), got {}", args.len()),
            )
        };
        let positions: Vec<Pos> = args.iter().map(|a| a.pos).collect();
        if let Some(rel) = Rel::from_name(name) {
            if args.len() != rel.arity() {
                return Err(arity_err(rel.arity()));
            }
            let targs = args.iter().map(|a| self.term(a)).collect::<Result<Vec<_>, _>>()?;
            self.check_sorts(name, rel.params(), &targs, &positions)?;
            if matches!(rel, Rel::Eq | Rel::Neq) && !targs[0].1.accepts(targs[1].1) {
                return Err(err(
                    pos,
                    ErrorKind::Type,
                    format!("cannot compare {} with {}", targs[0].1, targs[1].1),
                ));
            }
            return Ok(Elaborated::Formula(Formula::pred(
                rel,
                targs.into_iter().map(|(t, _)| t).collect(),
            )));
        }
        if let Some(f) = Func::from_name(name) {
            if args.len() != f.arity() {
                return Err(arity_err(f.arity()));
            }
            let targs = args.iter().map(|a| self.term(a)).collect::<Result<Vec<_>, _>>()?;
            self.check_sorts(name, f.params(), &targs, &positions)?;
            return Ok(Elaborated::Term(
                Term::apply(f, targs.into_iter().map(|(t, _)| t).collect()),
                f.result(),
            ));
        }
        if let Some(def) = self.defs.lookup(name, pos)? {
            if args.len() != def.params.len() {
                return Err(arity_err(def.params.len()));
            }
            let targs = args.iter().map(|a| self.term(a)).collect::<Result<Vec<_>, _>>()?;
            let sorts: Vec<Sort> = def.params.iter().map(|(_, s)| *s).collect();
            self.check_sorts(name, &sorts, &targs, &positions)?;
            let subst = def
                .params
                .iter()
                .zip(targs)
                .map(|((p, _), (t, _))| (p.clone(), t))
                .collect();
            return Ok(Elaborated::Formula(def.body.substitute(&subst)));
        }
        if member {
            Err(err(
                pos,
                ErrorKind::UnknownAssociation,
                format!("unknown association `{name}`"),
            ))
        } else {
            Err(err(pos, ErrorKind::UnknownSymbol, format!("unknown symbol `{name}`")))
        }
    }

    fn elab(&mut self, e: &Expr) -> Result<Elaborated, ParseError> {
        use Elaborated::{Formula as F, Term as T};
        Ok(match &e.kind {
            ExprKind::Num(text) => {
                let v: f64 = text
                    .parse()
                    .map_err(|_| err(e.pos, ErrorKind::Syntax, format!("invalid number `{text}`")))?;
                T(Term::num(v), Sort::Number)
            }
            ExprKind::Name(x) => {
                if let Some(s) = self.var_sort(x) {
                    return Ok(T(Term::var(x), s));
                }
                if let Some(c) = constant(x) {
                    return Ok(T(Term::Const(c), constant_sort(c)));
                }
                let known = Rel::from_name(x).is_some()
                    || Func::from_name(x).is_some()
                    || self.defs.lookup(x, e.pos)?.is_some();
                if known {
                    return self.apply(x, &[], e.pos, false);
                }
                return Err(err(
                    e.pos,
                    ErrorKind::UnboundVariable,
                    format!("`{x}` is not a bound variable, constant or definition"),
                ));
            }
            ExprKind::Call(name, args) => {
                let refs: Vec<&Expr> = args.iter().collect();
                return self.apply(name, &refs, e.pos, false);
            }
            ExprKind::Member(recv, name, args) => {
                let slot = Rel::from_name(name)
                    .map(Rel::receiver)
                    .or_else(|| Func::from_name(name).map(Func::receiver))
                    .unwrap_or(0);
                let mut refs: Vec<&Expr> = args.iter().collect();
                refs.insert(slot.min(refs.len()), recv);
                return self.apply(name, &refs, e.pos, true);
            }
            ExprKind::Not(a) => F(Formula::not(self.formula(a)?)),
            ExprKind::And(a, b) => F(Formula::and(self.formula(a)?, self.formula(b)?)),
            ExprKind::Or(a, b) => F(Formula::or(self.formula(a)?, self.formula(b)?)),
            ExprKind::Implies(a, b) => F(Formula::implies(self.formula(a)?, self.formula(b)?)),
            ExprKind::Cmp(first, rest) => {
                let mut lhs = self.term(first)?;
                let mut lhs_pos = first.pos;
                let mut out: Option<Formula> = None;
                for (op, rhs_expr) in rest {
                    let rhs = self.term(rhs_expr)?;
                    let rel = match op {
                        CmpOp::Eq => Rel::Eq,
                        CmpOp::Neq => Rel::Neq,
                        CmpOp::Lt => Rel::Lt,
                        CmpOp::Gt => Rel::Gt,
                        CmpOp::Leq => Rel::Leq,
                        CmpOp::Geq => Rel::Geq,
                    };
                    let pair = [lhs.clone(), rhs.clone()];
                    self.check_sorts(rel.name(), rel.params(), &pair, &[lhs_pos, rhs_expr.pos])?;
                    if !lhs.1.accepts(rhs.1) {
                        return Err(err(
                            rhs_expr.pos,
                            ErrorKind::Type,
                            format!("cannot compare {} with {}", lhs.1, rhs.1),
                        ));
                    }
                    let atom = Formula::pred(rel, vec![lhs.0, rhs.0.clone()]);
                    out = Some(match out {
                        None => atom,
                        Some(prev) => Formula::and(prev, atom),
                    });
                    lhs = rhs;
                    lhs_pos = rhs_expr.pos;
                }
                F(out.expect("comparison chains are non-empty"))
            }
            ExprKind::Arith(op, a, b) => {
                let (ta, sa) = self.term(a)?;
                let (tb, sb) = self.term(b)?;
                let f = match op {
                    ArithOp::Add => Func::Add,
                    ArithOp::Sub => Func::Sub,
                    ArithOp::Mul => Func::Mul,
                };
                self.check_sorts(
                    f.name(),
                    f.params(),
                    &[(ta.clone(), sa), (tb.clone(), sb)],
                    &[a.pos, b.pos],
                )?;
                T(Term::apply(f, vec![ta, tb]), Sort::Number)
            }
            ExprKind::Neg(inner) => {
                if let ExprKind::Num(text) = &inner.kind {
                    let v: f64 = text
                        .parse()
                        .map_err(|_| err(inner.pos, ErrorKind::Syntax, format!("invalid number `{text}`")))?;
                    return Ok(T(Term::Const(Value::num(-v)), Sort::Number));
                }
                let (t, s) = self.term(inner)?;
                self.check_sorts("-", &[Sort::Number], &[(t.clone(), s)], &[inner.pos])?;
                T(Term::apply(Func::Mul, vec![Term::num(-1.0), t]), Sort::Number)
            }
            ExprKind::Quant {
                forall,
                var,
                domain,
                body,
            } => {
                let (guard, sort) = match domain {
                    None => (None, Sort::Any),
                    Some(DomainKw::Vehicles) => (Some(Rel::IsVehicle), Sort::Vehicle),
                    Some(DomainKw::Pedestrians) => (Some(Rel::IsPedestrian), Sort::Pedestrian),
                    Some(DomainKw::Actors) => (Some(Rel::IsActor), Sort::Actor),
                    Some(DomainKw::Lanes) => (Some(Rel::IsLane), Sort::Lane),
                    Some(DomainKw::Roads) => (Some(Rel::IsRoad), Sort::Road),
                };
                let b = self.scoped(var, sort, |s| s.formula(body))?;
                let g = guard.map(|r| Formula::pred(r, vec![Term::var(var)]));
                F(match (forall, g) {
                    (false, None) => Formula::exists(var, b),
                    (true, None) => Formula::forall(var, b),
                    (false, Some(g)) => Formula::exists(var, Formula::and(g, b)),
                    (true, Some(g)) => Formula::forall(var, Formula::implies(g, b)),
                })
            }
            ExprKind::Bind { var, term, body } => {
                let (t, sort) = self.term(term)?;
                let b = self.scoped(var, sort, |s| s.formula(body))?;
                F(Formula::bind(t, var, b))
            }
            ExprKind::Temporal {
                op,
                interval,
                fraction,
                args,
            } => {
                let i = *interval;
                let a = self.formula(&args[0])?;
                F(match op {
                    TemporalOp::Next => Formula::next(i, a),
                    TemporalOp::Until => Formula::until(i, a, self.formula(&args[1])?),
                    TemporalOp::Eventually => Formula::eventually(i, a),
                    TemporalOp::Always => Formula::always(i, a),
                    TemporalOp::MinPrev => Formula::min_prevalence(i, fraction.expect("parsed with a fraction"), a),
                    TemporalOp::MaxPrev => Formula::max_prevalence(i, fraction.expect("parsed with a fraction"), a),
                })
            }
            ExprKind::ForEgo { var, body } => {
                let b = self.scoped(var, Sort::Vehicle, |s| s.formula(body))?;
                F(for_ego(var, b))
            }
            ExprKind::False => F(Formula::falsity()),
        })
    }
}

/// `∃v: isVehicle(v) ∧ (□ isEgo(v) ∧ body)`
pub fn for_ego(var: &str, body: Formula) -> Formula {
    Formula::exists(
        var,
        Formula::and(
            Formula::pred(Rel::IsVehicle, vec![Term::var(var)]),
            Formula::and(
                Formula::always(Interval::UNBOUNDED, Formula::pred(Rel::IsEgo, vec![Term::var(var)])),
                body,
            ),
        ),
    )
}
