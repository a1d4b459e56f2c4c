mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{random_trace, rng, small_map, FormulaGen};
use tscov::dsl::{for_ego, parse_formula, Library};
use tscov::logic::{evaluate_all, Formula, Interval, Term, Valuation};
use tscov::signature::{Func, Rel, Sort};

const TOKENS: &[&str] = &[
    "exists",
    "forall",
    "bind",
    "in",
    ":",
    "=",
    "!=",
    "<",
    "<=",
    "and",
    "or",
    "not",
    "implies",
    "(",
    ")",
    "{",
    "}",
    "[",
    "]",
    "..",
    ",",
    ".",
    "min-prev",
    "max-prev",
    "eventually",
    "always",
    "next",
    "until",
    "for-ego",
    "def",
    ":=",
    ";",
    "v",
    "x",
    "lane",
    "speed",
    "pos",
    "isEgo",
    "Vehicles",
    "0.8",
    "1/3",
    "12",
    "-",
    "+",
    "*",
    "true",
    "false",
    "#",
    "\n",
    "Clear",
    "weather()",
    "\u{e9}",
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn parser_never_panics_on_token_soup(picks in prop::collection::vec(0..TOKENS.len(), 0..40)) {
        let text: Vec<&str> = picks.iter().map(|k| TOKENS[*k]).collect();
        let text = text.join(" ");
        let _ = parse_formula(&text);
        let _ = Library::parse(&text);
    }

    #[test]
    fn parser_never_panics_on_arbitrary_text(text in "\\PC{0,80}") {
        let _ = parse_formula(&text);
        let _ = Library::parse(&text);
    }

    #[test]
    fn printed_formulas_reparse(seed in any::<u64>()) {
        let map = small_map();
        let mut r = rng(seed);
        let mut g = FormulaGen::new(&map, 3);
        g.entity_constants = false;
        let mut scope = vec![("a".to_string(), Sort::Any), ("l".to_string(), Sort::Any)];
        let body = g.formula(&mut r, &mut scope, 4);
        let phi = Formula::exists("a", Formula::exists("l", body));
        let printed = phi.to_string();
        let back = parse_formula(&printed);
        prop_assert!(back.is_ok(), "{} does not parse: {:?}", printed, back.err());
        prop_assert_eq!(back.unwrap(), phi);
    }

    /// The ego pattern equals the long form with explicit isVehicle and
    /// isEgo under the always operator.
    #[test]
    fn for_ego_matches_the_expanded_pattern(seed in any::<u64>()) {
        let map = small_map();
        let mut r = rng(seed);
        let len = r.random_range(1..=10);
        let trace = random_trace(&mut r, &map, len);
        let mut g = FormulaGen::new(&map, trace.actor_count());
        let body = g.formula(&mut r, &mut vec![("v".to_string(), Sort::Any)], 3);
        let v = || Term::var("v");
        let expanded = Formula::exists(
            "v",
            Formula::and(
                Formula::always(
                    Interval::UNBOUNDED,
                    Formula::and(Formula::pred(Rel::IsVehicle, vec![v()]), Formula::pred(Rel::IsEgo, vec![v()])),
                ),
                body.clone(),
            ),
        );
        let sugar = for_ego("v", body);
        let a = evaluate_all(&sugar, &trace, &map, &Valuation::new()).unwrap();
        let b = evaluate_all(&expanded, &trace, &map, &Valuation::new()).unwrap();
        prop_assert_eq!(a, b);
    }
}

/// The speed-limit predicate written with associations agrees with the
/// fully expanded form that quantifies the lane explicitly.
#[test]
fn obeyed_speed_limit_expanded_form() {
    let map = small_map();
    let lib = tscov::urban::library();
    let short = lib.formula("for-ego(v) { obeyedSpeedLimit(v) }").unwrap();
    let v = || Term::var("v");
    let l = || Term::var("l");
    let long = Formula::exists(
        "v",
        Formula::and(
            Formula::always(
                Interval::UNBOUNDED,
                Formula::and(
                    Formula::pred(Rel::IsVehicle, vec![v()]),
                    Formula::pred(Rel::IsEgo, vec![v()]),
                ),
            ),
            Formula::always(
                Interval::UNBOUNDED,
                Formula::exists(
                    "l",
                    Formula::and(
                        Formula::and(
                            Formula::pred(Rel::IsLane, vec![l()]),
                            Formula::pred(Rel::OnLane, vec![v(), l()]),
                        ),
                        Formula::pred(
                            Rel::Leq,
                            vec![
                                Term::apply(Func::Speed, vec![v()]),
                                Term::apply(Func::SpeedLimitAt, vec![Term::apply(Func::Pos, vec![v()]), l()]),
                            ],
                        ),
                    ),
                ),
            ),
        ),
    );
    let mut r = rng(11);
    let mut agree_true = 0;
    for _ in 0..300 {
        let len = r.random_range(1..=8);
        let trace = random_trace(&mut r, &map, len);
        let a = tscov::logic::satisfies(&trace, &map, &short).unwrap();
        let b = tscov::logic::satisfies(&trace, &map, &long).unwrap();
        assert_eq!(a, b);
        agree_true += usize::from(a);
    }
    assert!(agree_true > 0, "sampled traces never satisfy the predicate");
}
