//! Printing of core formulas in DSL syntax. The output reparses to an equal
//! formula whenever all constants are numbers, weather or daytime values.

use std::fmt::{self, Write};

use crate::logic::{Formula, Interval, Term};
use crate::signature::{Func, Rel, Value};

// Formula contexts, loosest first.
const F_TOP: u8 = 0;
const F_OR: u8 = 1;
const F_RIGHT_OR: u8 = 2;
const F_NOT: u8 = 3;
const F_ATOM: u8 = 4;

// Term contexts, loosest first.
const T_ADD: u8 = 0;
const T_MUL: u8 = 1;
const T_NEG: u8 = 2;
const T_ATOM: u8 = 3;

fn interval_suffix(i: &Interval) -> String {
    if i.is_unbounded() {
        String::new()
    } else {
        format!("[{i}]")
    }
}

fn value(out: &mut String, v: &Value) {
    match v {
        Value::Num(n) => write!(out, "{n}").unwrap(),
        Value::Weather(w) => out.push_str(w.constant_name()),
        Value::Daytime(d) => out.push_str(d.constant_name()),
        Value::Actor(a) => write!(out, "<actor {}>", a.0).unwrap(),
        Value::Lane(l) => write!(out, "<lane {}>", l.0).unwrap(),
        Value::Road(r) => write!(out, "<road {}>", r.0).unwrap(),
        Value::Undefined => out.push_str("<undefined>"),
    }
}

fn term(out: &mut String, t: &Term, ctx: u8) {
    let own = match t {
        Term::Const(Value::Num(n)) if n.get() < 0.0 => T_NEG,
        Term::Apply(Func::Add | Func::Sub, _) => T_ADD,
        Term::Apply(Func::Mul, _) => T_MUL,
        _ => T_ATOM,
    };
    let paren = own < ctx;
    if paren {
        out.push('(');
    }
    match t {
        Term::Const(c) => value(out, c),
        Term::Var(v) => out.push_str(v),
        Term::Apply(f, args) => match f.infix() {
            Some(op) => {
                let (l, r) = if *f == Func::Mul {
                    (T_MUL, T_NEG)
                } else {
                    (T_ADD, T_MUL)
                };
                term(out, &args[0], l);
                write!(out, " {op} ").unwrap();
                term(out, &args[1], r);
            }
            None => {
                out.push_str(f.name());
                if !args.is_empty() || matches!(f, Func::TrafficDensity | Func::Weather | Func::Daytime) {
                    out.push('(');
                    for (k, a) in args.iter().enumerate() {
                        if k > 0 {
                            out.push_str(", ");
                        }
                        term(out, a, T_ADD);
                    }
                    out.push(')');
                }
            }
        },
    }
    if paren {
        out.push(')');
    }
}

fn formula(out: &mut String, f: &Formula, ctx: u8) {
    let own = match f {
        Formula::Exists(..) | Formula::Bind(..) => F_TOP,
        Formula::Or(..) => F_OR,
        Formula::Not(_) => F_NOT,
        _ => F_ATOM,
    };
    let paren = own < ctx;
    if paren {
        out.push('(');
    }
    match f {
        Formula::Pred(Rel::True, _) => out.push_str("true"),
        Formula::Pred(rel, args) => match rel.infix() {
            Some(op) => {
                term(out, &args[0], T_ADD);
                write!(out, " {op} ").unwrap();
                term(out, &args[1], T_ADD);
            }
            None => {
                out.push_str(rel.name());
                out.push('(');
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        out.push_str(", ");
                    }
                    term(out, a, T_ADD);
                }
                out.push(')');
            }
        },
        Formula::Not(a) => {
            out.push_str("not ");
            formula(out, a, F_NOT);
        }
        Formula::Or(a, b) => {
            formula(out, a, F_OR);
            out.push_str(" or ");
            formula(out, b, F_RIGHT_OR);
        }
        Formula::Exists(x, body) => {
            write!(out, "exists {x}: ").unwrap();
            formula(out, body, F_TOP);
        }
        Formula::Bind(t, x, body) => {
            write!(out, "bind {x} = ").unwrap();
            term(out, t, T_ADD);
            out.push_str(" in ");
            formula(out, body, F_TOP);
        }
        Formula::Next(i, a) => {
            write!(out, "next{}(", interval_suffix(i)).unwrap();
            formula(out, a, F_TOP);
            out.push(')');
        }
        Formula::Until(i, a, b) => {
            write!(out, "until{}(", interval_suffix(i)).unwrap();
            formula(out, a, F_TOP);
            out.push_str(", ");
            formula(out, b, F_TOP);
            out.push(')');
        }
        Formula::MinPrevalence(i, p, a) => {
            if i.is_unbounded() {
                write!(out, "min-prev[{p}](").unwrap();
            } else {
                write!(out, "min-prev[{p}, {i}](").unwrap();
            }
            formula(out, a, F_TOP);
            out.push(')');
        }
    }
    if paren {
        out.push(')');
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        formula(&mut s, self, F_TOP);
        f.write_str(&s)
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        term(&mut s, self, T_ADD);
        f.write_str(&s)
    }
}
