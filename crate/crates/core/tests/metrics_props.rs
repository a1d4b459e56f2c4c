mod common;

use std::collections::BTreeSet;

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use common::{expected_pair_misses, random_batch, random_tsc, rng};
use tscov::metrics::{coverage_curve, feature_pair_misses, missing_classes, scc, Tally};
use tscov::tsc::ScenarioClass;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn counts_are_consistent(seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = random_tsc(&mut r, 10);
        let (classes, _) = random_batch(&mut r, &t);
        let tally = Tally::from_classes(&classes);
        prop_assert_eq!(tally.counts.values().sum::<usize>(), classes.len());
        prop_assert_eq!(tally.segments, classes.len());
        prop_assert_eq!(tally.afo_index(t.root()).segments, classes.len());
        for k in 0..t.len() {
            let by_sic: usize = tally.counts.iter().filter(|(c, _)| c.contains(k)).map(|(_, n)| n).sum();
            prop_assert_eq!(tally.afo_index(k).segments, by_sic);
            let by_class = tally.counts.keys().filter(|c| c.contains(k)).count();
            prop_assert_eq!(tally.afo_index(k).classes, by_class);
        }
    }

    #[test]
    fn full_coverage_iff_nothing_missing(seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = random_tsc(&mut r, 10);
        let (classes, _) = random_batch(&mut r, &t);
        let observed: BTreeSet<ScenarioClass> = classes.iter().cloned().collect();
        let s = scc(&observed, &t);
        prop_assert!(s >= Ratio::zero() && s <= Ratio::one());
        let missing = missing_classes(&observed, &t, None);
        prop_assert_eq!(s == Ratio::one(), missing.classes.is_empty());
        prop_assert_eq!(missing.count.clone(), BigUint::from(missing.classes.len()));
        let expected: Vec<ScenarioClass> = t.enumerate(None).classes.into_iter().filter(|c| !observed.contains(c)).collect();
        prop_assert_eq!(missing.classes, expected);
    }

    #[test]
    fn pair_misses_are_feasible_and_complete(seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = random_tsc(&mut r, 10);
        let (classes, _) = random_batch(&mut r, &t);
        let observed: BTreeSet<ScenarioClass> = classes.iter().cloned().collect();
        prop_assert_eq!(feature_pair_misses(&observed, &t), expected_pair_misses(&t, &observed));
    }

    #[test]
    fn batch_order_only_changes_the_curve(seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = random_tsc(&mut r, 10);
        let (classes, _) = random_batch(&mut r, &t);
        let mut shuffled = classes.clone();
        shuffled.shuffle(&mut r);
        let (a, b) = (Tally::from_classes(&classes), Tally::from_classes(&shuffled));
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(scc(&a.observed(), &t), scc(&b.observed(), &t));
        prop_assert_eq!(feature_pair_misses(&a.observed(), &t), feature_pair_misses(&b.observed(), &t));
        prop_assert_eq!(missing_classes(&a.observed(), &t, None).classes, missing_classes(&b.observed(), &t, None).classes);
        for curve in [coverage_curve(&classes), coverage_curve(&shuffled)] {
            prop_assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
            prop_assert_eq!(curve.last().map_or(0, |p| p.1), a.observed().len());
        }
    }

    #[test]
    fn merging_tallies_is_associative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let t = random_tsc(&mut r, 10);
        let (classes, _) = random_batch(&mut r, &t);
        let cut1 = r.random_range(0..=classes.len());
        let cut2 = r.random_range(cut1..=classes.len());
        let parts: Vec<Tally> = [&classes[..cut1], &classes[cut1..cut2], &classes[cut2..]]
            .iter()
            .map(|p| Tally::from_classes(p))
            .collect();
        let left = parts[0].clone().merge(parts[1].clone()).merge(parts[2].clone());
        let right = parts[0].clone().merge(parts[1].clone().merge(parts[2].clone()));
        let whole = Tally::from_classes(&classes);
        prop_assert_eq!(&left, &whole);
        prop_assert_eq!(&right, &whole);
        prop_assert_eq!(Tally::from_classes_par(&classes), whole);
    }
}

#[test]
fn instance_counts_follow_the_batch() {
    let mut r = rng(5);
    let t = random_tsc(&mut r, 8);
    let all = t.enumerate(None).classes;
    let picks: Vec<ScenarioClass> = (0..40).map(|_| all.choose(&mut r).unwrap().clone()).collect();
    let tally = Tally::from_classes(&picks);
    for c in &all {
        assert_eq!(tally.sic(c), picks.iter().filter(|p| *p == c).count());
    }
}
