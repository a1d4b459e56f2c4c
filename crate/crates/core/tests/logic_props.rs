mod common;

use proptest::prelude::*;
use rand::Rng;

use common::{instance, naive_closed, random_trace, rng, small_map, FormulaGen};
use tscov::logic::{evaluate_all, satisfies, Evaluator, Formula, Fraction, Interval, Term, Valuation};
use tscov::signature::{Func, Rel, SceneView, Value};

fn all_indices(phi: &Formula, trace: &tscov::scene::TemporalStructure, map: &tscov::scene::StaticMap) -> Vec<bool> {
    evaluate_all(phi, trace, map, &Valuation::new()).expect("generated formulas are well typed")
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn production_matches_reference(seed in any::<u64>()) {
        let map = small_map();
        let (trace, phi) = instance(seed, &map);
        let fast = all_indices(&phi, &trace, &map);
        for (i, got) in fast.iter().enumerate() {
            prop_assert_eq!(*got, naive_closed(&phi, &trace, &map, i), "index {} of {}", i, phi);
        }
    }

    #[test]
    fn always_is_dual_to_eventually(seed in any::<u64>()) {
        let map = small_map();
        let (trace, phi) = instance(seed, &map);
        let mut r = rng(seed ^ 0x5eed);
        let iv = if r.random_bool(0.5) { Interval::UNBOUNDED } else { Interval::new(1, Some(3)).unwrap() };
        let a = all_indices(&Formula::always(iv, phi.clone()), &trace, &map);
        let e = all_indices(&Formula::eventually(iv, Formula::not(phi)), &trace, &map);
        prop_assert!(a.iter().zip(&e).all(|(x, y)| *x == !*y));
    }

    #[test]
    fn prevalence_extremes_and_monotonicity(seed in any::<u64>(), lo in 0u64..5, hi in 0u64..5) {
        let map = small_map();
        let (trace, phi) = instance(seed, &map);
        let iv = Interval::new(0, Some(4)).unwrap();
        let zero = all_indices(&Formula::min_prevalence(iv, Fraction::ZERO, phi.clone()), &trace, &map);
        prop_assert!(zero.iter().all(|b| *b));
        // With p = 1 every qualifying index must satisfy phi: an always.
        let one = all_indices(&Formula::min_prevalence(iv, Fraction::ONE, phi.clone()), &trace, &map);
        let always = all_indices(&Formula::always(iv, phi.clone()), &trace, &map);
        prop_assert_eq!(one, always);
        let (p, q) = (lo.min(hi), lo.max(hi));
        let weak = all_indices(&Formula::min_prevalence(iv, Fraction::new(p, 4).unwrap(), phi.clone()), &trace, &map);
        let strong = all_indices(&Formula::min_prevalence(iv, Fraction::new(q, 4).unwrap(), phi), &trace, &map);
        prop_assert!(strong.iter().zip(&weak).all(|(s, w)| !*s || *w));
    }

    #[test]
    fn bind_is_an_existential_shorthand(seed in any::<u64>()) {
        let map = small_map();
        let mut r = rng(seed);
        let len = r.random_range(1..=8);
        let trace = random_trace(&mut r, &map, len);
        let mut g = FormulaGen::new(&map, trace.actor_count());
        let mut scope = vec![("b".to_string(), tscov::signature::Sort::Any)];
        let body = g.formula(&mut r, &mut scope, 3);
        let actor = Value::Actor(tscov::scene::ActorId(r.random_range(0..trace.actor_count()) as u32));
        let t = if r.random_bool(0.5) {
            Term::Const(actor)
        } else {
            Term::apply(Func::Lane, vec![Term::Const(actor)])
        };
        let bound = Formula::bind(t.clone(), "b", body.clone());
        let sugar = Formula::exists("b", Formula::and(Formula::pred(Rel::Eq, vec![Term::var("b"), t.clone()]), body));
        let a = all_indices(&bound, &trace, &map);
        let b = all_indices(&sugar, &trace, &map);
        for i in 0..trace.len() {
            let view = SceneView { trace: &trace, map: &map, index: i };
            let defined = match &t {
                Term::Apply(f, args) => f.apply(view, &[match args[0] { Term::Const(c) => c, _ => unreachable!() }]).is_defined(),
                _ => true,
            };
            if defined {
                prop_assert_eq!(a[i], b[i], "index {}", i);
            }
        }
    }

    #[test]
    fn evaluation_is_pure(seed in any::<u64>()) {
        let map = small_map();
        let (trace, phi) = instance(seed, &map);
        let ev = Evaluator::new(&phi).unwrap();
        let first = ev.satisfies(&trace, &map).unwrap();
        prop_assert_eq!(first, ev.satisfies(&trace, &map).unwrap());
        prop_assert_eq!(first, satisfies(&trace, &map, &phi).unwrap());
    }
}

#[test]
fn empty_prevalence_range_holds() {
    let map = small_map();
    let trace = random_trace(&mut rng(7), &map, 3);
    // Nothing lies 100 s or more ahead.
    let far = Interval::new(100, None).unwrap();
    let phi = Formula::min_prevalence(far, Fraction::ONE, Formula::falsity());
    assert!(satisfies(&trace, &map, &phi).unwrap());
}
