//! Textual formula language.
//!
//! ```text
//! file        = { definition } ;
//! definition  = "def" ident [ "(" [ param { "," param } ] ")" ] ":=" formula ";" ;
//! param       = ident ":" sort ;
//! sort        = "vehicle" | "pedestrian" | "actor" | "lane" | "road"
//!             | "number" | "weather" | "daytime" | "any" ;
//!
//! formula     = disjunction [ "implies" formula ] ;
//! disjunction = conjunction { "or" conjunction } ;
//! conjunction = unary { "and" unary } ;
//! unary       = "not" unary
//!             | ( "exists" | "forall" ) ident [ "in" domain ] ":" formula
//!             | "bind" ident "=" sum "in" formula
//!             | comparison ;
//! domain      = "Vehicles" | "Pedestrians" | "Actors" | "Lanes" | "Roads" ;
//! comparison  = sum { ( "=" | "!=" | "<" | ">" | "<=" | ">=" ) sum } ;
//! sum         = product { ( "+" | "-" ) product } ;
//! product     = negation { "*" negation } ;
//! negation    = "-" negation | postfix ;
//! postfix     = primary { "." ident [ args ] } ;
//! primary     = number | ident [ args ] | "(" formula ")" | "true" | "false"
//!             | ( "next" | "eventually" | "always" ) [ "[" interval "]" ] "(" formula ")"
//!             | "until" [ "[" interval "]" ] "(" formula "," formula ")"
//!             | ( "min-prev" | "max-prev" ) "[" fraction [ "," interval ] "]" "(" formula ")"
//!             | "for-ego" "(" ident ")" "{" formula "}" ;
//! args        = "(" [ formula { "," formula } ] ")" ;
//! interval    = natural ".." [ natural ] ;
//! fraction    = decimal | natural "/" natural ;
//! ```
//!
//! Comments run from `#` or `//` to the end of the line. A chain
//! `a <= b <= c` means `a <= b and b <= c`. In `recv.name(args)` the
//! receiver becomes the symbol's receiver argument: the first one, except
//! for `speedLimitAt` and the `distanceTo*` functions, which take
//! `(position, lane)` and receive the lane. Omitted intervals are `0..`.

mod elab;
mod print;
mod syntax;

use std::fmt;

use thiserror::Error;

use crate::logic::{Formula, LogicError, Term, Var};
use crate::signature::Sort;

pub use elab::for_ego;

/// One-based source position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Syntax,
    UnknownSymbol,
    UnknownAssociation,
    UnboundVariable,
    Arity,
    Type,
    Cycle,
    Duplicate,
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("{line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ErrorKind,
    pub message: String,
}

impl ParseError {
    fn new(pos: Pos, kind: ErrorKind, message: String) -> Self {
        ParseError {
            line: pos.line,
            column: pos.col,
            kind,
            message,
        }
    }
}

/// A named formula with typed parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Definition {
    pub name: String,
    pub params: Vec<(Var, Sort)>,
    /// Elaborated body; its free variables are among the parameters.
    pub body: Formula,
    /// Source text of the definition.
    pub text: String,
}

impl Definition {
    /// Substitutes the arguments for the parameters.
    pub fn instantiate(&self, args: &[Term]) -> Result<Formula, LogicError> {
        if args.len() != self.params.len() {
            return Err(LogicError::Arity {
                symbol: self.name.clone(),
                expected: self.params.len(),
                got: args.len(),
            });
        }
        let subst = self
            .params
            .iter()
            .zip(args)
            .map(|((p, _), t)| (p.clone(), t.clone()))
            .collect();
        Ok(self.body.substitute(&subst))
    }
}

impl fmt::Display for Definition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "def {}(", self.name)?;
        for (k, (p, s)) in self.params.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{p}: {s}")?;
        }
        write!(f, ") := {};", self.body)
    }
}

/// A set of named formula definitions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Library {
    order: Vec<String>,
    defs: std::collections::BTreeMap<String, Definition>,
}

impl Library {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses a definition file. Definitions may refer to each other in any
    /// order; cycles are rejected.
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut lib = Library::new();
        lib.extend(text)?;
        Ok(lib)
    }

    /// Adds the definitions of another file; names must not clash.
    pub fn extend(&mut self, text: &str) -> Result<(), ParseError> {
        let raw = syntax::Parser::new(text)?.definitions()?;
        let names: Vec<String> = raw.iter().map(|d| d.name.clone()).collect();
        let mut resolver = elab::Resolver::new(self, raw)?;
        for n in &names {
            resolver.define(n)?;
        }
        let done = resolver.done;
        for n in names {
            let d = done[&n].clone();
            self.order.push(n.clone());
            self.defs.insert(n, d);
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Definition> {
        self.defs.get(name)
    }

    /// Definitions in file order.
    pub fn definitions(&self) -> impl Iterator<Item = &Definition> {
        self.order.iter().map(|n| &self.defs[n])
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Parses a closed formula that may use this library's definitions.
    pub fn formula(&self, text: &str) -> Result<Formula, ParseError> {
        self.formula_with(text, &[])
    }

    /// Parses a formula whose free variables are among `params`.
    pub fn formula_with(&self, text: &str, params: &[(Var, Sort)]) -> Result<Formula, ParseError> {
        let expr = syntax::Parser::new(text)?.single()?;
        let mut resolver = elab::Resolver::new(self, Vec::new())?;
        elab::Elab {
            defs: &mut resolver,
            scope: params.to_vec(),
        }
        .formula(&expr)
    }
}

impl fmt::Display for Library {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.definitions() {
            writeln!(f, "{d}")?;
        }
        Ok(())
    }
}

/// Parses a closed formula without named definitions.
pub fn parse_formula(text: &str) -> Result<Formula, ParseError> {
    Library::new().formula(text)
}

/// Whether `name` is reserved by the formula language.
pub fn is_keyword(name: &str) -> bool {
    syntax::is_keyword(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::{Fraction, Interval};
    use crate::signature::{Func, Rel};

    fn v() -> Term {
        Term::var("v")
    }

    fn lane_of(t: Term) -> Term {
        Term::apply(Func::Lane, vec![t])
    }

    fn on_junction() -> Formula {
        Formula::pred(Rel::IsJunction, vec![Term::apply(Func::Road, vec![lane_of(v())])])
    }

    #[test]
    fn prevalence_in_ego_pattern() {
        let f = parse_formula("for-ego(v) { min-prev[0.8](v.lane.road.isJunction) }").unwrap();
        let expected = for_ego(
            "v",
            Formula::min_prevalence(Interval::UNBOUNDED, Fraction::new(4, 5).unwrap(), on_junction()),
        );
        assert_eq!(f, expected);
    }

    #[test]
    fn binding_lane_change() {
        let f = Library::new()
            .formula_with(
                "bind l = v.lane in eventually(l != v.lane)",
                &[("v".into(), Sort::Vehicle)],
            )
            .unwrap();
        let expected = Formula::bind(
            lane_of(v()),
            "l",
            Formula::eventually(
                Interval::UNBOUNDED,
                Formula::pred(Rel::Neq, vec![Term::var("l"), lane_of(v())]),
            ),
        );
        assert_eq!(f, expected);
    }

    #[test]
    fn unknown_association_has_position() {
        let e = parse_formula("exists v in Vehicles: v.undefinedField").unwrap_err();
        assert_eq!(e.kind, ErrorKind::UnknownAssociation);
        assert_eq!((e.line, e.column), (1, 25));
        assert!(e.to_string().contains("unknown association"));
    }

    #[test]
    fn sugar_expansions() {
        let a = Formula::pred(Rel::True, vec![]);
        let b = Formula::falsity();
        assert_eq!(
            parse_formula("true implies false").unwrap(),
            Formula::or(Formula::not(a.clone()), b)
        );
        let p = Formula::pred(Rel::IsVehicle, vec![Term::var("x")]);
        assert_eq!(
            parse_formula("exists x: always(isVehicle(x))").unwrap(),
            Formula::exists(
                "x",
                Formula::not(Formula::until(Interval::UNBOUNDED, a, Formula::not(p)))
            )
        );
    }

    #[test]
    fn speed_limit_receiver_is_the_lane() {
        let lib = Library::parse("def obeyedSpeedLimit(v: vehicle) := always(v.speed <= v.lane.speedLimitAt(v.pos));")
            .unwrap();
        let body = &lib.get("obeyedSpeedLimit").unwrap().body;
        let expected = Formula::always(
            Interval::UNBOUNDED,
            Formula::pred(
                Rel::Leq,
                vec![
                    Term::apply(Func::Speed, vec![v()]),
                    Term::apply(
                        Func::SpeedLimitAt,
                        vec![Term::apply(Func::Pos, vec![v()]), lane_of(v())],
                    ),
                ],
            ),
        );
        assert_eq!(*body, expected);
    }

    #[test]
    fn chained_comparison_and_negative_literals() {
        let f = parse_formula("exists p: exists v: 0 <= p.pos - v.pos <= -2 * -1").unwrap();
        let text = f.to_string();
        assert_eq!(parse_formula(&text).unwrap(), f);
        assert!(text.contains("-2 * -1"));
    }

    #[test]
    fn definitions_forward_reference_and_cycles() {
        let lib = Library::parse(
            "def a(v: vehicle) := b(v) and v.isEgo;\n\
             def b(w: vehicle) := eventually(w.speed > 3);",
        )
        .unwrap();
        assert_eq!(lib.len(), 2);
        assert!(lib.get("a").unwrap().body.free_vars().contains("v"));
        let e = Library::parse("def a() := b();\ndef b() := a();").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Cycle);
        let e = Library::parse("def a() := true;\ndef a() := true;").unwrap_err();
        assert_eq!(e.kind, ErrorKind::Duplicate);
    }

    #[test]
    fn inlining_avoids_capture() {
        let lib = Library::parse("def near(v: vehicle) := exists o in Vehicles: o != v;").unwrap();
        let f = lib.formula("exists o in Vehicles: near(o)").unwrap();
        let text = f.to_string();
        assert!(text.contains("o_1"), "{text}");
        assert!(f.is_closed());
    }

    #[test]
    fn type_errors_are_reported() {
        for bad in [
            "exists v in Vehicles: v.lane < 3",
            "exists v in Vehicles: v.lane = 3",
            "exists v in Vehicles: v.speed",
            "exists v in Vehicles: isEgo(v.lane)",
        ] {
            let e = parse_formula(bad).unwrap_err();
            assert_eq!(e.kind, ErrorKind::Type, "{bad}: {e}");
        }
        assert_eq!(parse_formula("isEgo()").unwrap_err().kind, ErrorKind::Arity);
        assert_eq!(
            parse_formula("frobnicate(1)").unwrap_err().kind,
            ErrorKind::UnknownSymbol
        );
        assert_eq!(parse_formula("x = 1").unwrap_err().kind, ErrorKind::UnboundVariable);
        assert_eq!(
            parse_formula("min-prev[3/2](true)").unwrap_err().kind,
            ErrorKind::Syntax
        );
        assert_eq!(parse_formula("next[3..3](true)").unwrap_err().kind, ErrorKind::Syntax);
    }

    #[test]
    fn printing_round_trips() {
        for text in [
            "for-ego(v) { min-prev[0.8, 2..10](v.lane.road.isJunction) }",
            "exists v: bind l = v.lane in until[1..](v.speed >= 0.5, l != v.lane or false)",
            "max-prev[1/3](weather() = HardRain) and daytime() = Sunset",
            "next[0..4](trafficDensity() > 12) implies not true",
            "forall a in Actors: exists b in Lanes: a.onLane(b) or abs(a.speed - 3) * 2 < 1 + 2 + 3",
        ] {
            let f = parse_formula(text).unwrap();
            let printed = f.to_string();
            assert_eq!(parse_formula(&printed).unwrap(), f, "{text} -> {printed}");
        }
    }
}
