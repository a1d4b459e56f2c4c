use std::collections::BTreeSet;

use proptest::prelude::*;

use tscov::ingest::{self, segment_run, SegmentOptions};
use tscov::logic::satisfies;
use tscov::scene::{ActorKind, Daytime, StaticMap, Weather};
use tscov::simgen::{apply_template, generate_map, generate_run, run_id, run_rng, GenConfig, MapConfig, TEMPLATES};
use tscov::urban;

fn short(seed: u64, secs: f64) -> GenConfig {
    GenConfig {
        seed,
        duration_secs: secs,
        ..GenConfig::default()
    }
}

#[test]
fn default_duration_gives_one_tick_per_half_second() {
    let run = generate_run(&GenConfig::default(), 0).unwrap();
    assert_eq!(run.trace.len(), 600);
    assert!(run.violations.is_empty(), "{:?}", run.violations);
    assert_eq!(run.id, run_id(&GenConfig::default(), 0));
}

#[test]
fn every_template_is_valid_and_loads_cleanly() {
    for name in TEMPLATES {
        let mut cfg = short(3, 40.0);
        apply_template(&mut cfg, name).unwrap();
        cfg.validate().unwrap();
        let run = generate_run(&cfg, 0).unwrap();
        assert!(run.violations.is_empty(), "{name}: {:?}", run.violations);
        // What was written reads back identically.
        let text = ingest::save_string(&run.id, &run.trace, &run.map);
        let back = ingest::load_str(&text).unwrap();
        assert_eq!(ingest::save_string(&back.id, &back.trace, &back.map), text, "{name}");
    }
    assert!(apply_template(&mut GenConfig::default(), "no-such-template").is_err());
}

#[test]
fn no_pedestrians_means_no_crossing() {
    let lib = urban::library();
    let phi = lib.formula("pedestrian()").unwrap();
    let mut cfg = short(8, 120.0);
    apply_template(&mut cfg, "no-pedestrians").unwrap();
    for run in 0..3 {
        let r = generate_run(&cfg, run).unwrap();
        assert!(r.trace.actor_ids().all(|a| r.trace.actor_kind(a) == ActorKind::Vehicle));
        let segs = segment_run(&r, true, &SegmentOptions::default()).unwrap();
        assert!(!segs.is_empty());
        for s in segs {
            assert!(!satisfies(&s.trace, &s.map, &phi).unwrap());
        }
    }
}

#[test]
fn forced_lane_change_is_seen_as_a_lane_change() {
    let lib = urban::library();
    let phi = lib.formula("laneChange()").unwrap();
    let mut cfg = short(4, 60.0);
    apply_template(&mut cfg, "forced-lane-change").unwrap();
    let run = generate_run(&cfg, 0).unwrap();
    let segs = segment_run(&run, false, &SegmentOptions::default()).unwrap();
    assert!(segs.iter().any(|s| satisfies(&s.trace, &s.map, &phi).unwrap()));
}

#[test]
fn weather_and_daytime_cells_are_all_sampled() {
    let cfg = short(17, 2.0);
    let mut seen = BTreeSet::new();
    for run in 0..500 {
        let r = generate_run(&cfg, run).unwrap();
        let s = r.trace.scene(0);
        seen.insert((s.weather, s.daytime));
    }
    assert_eq!(seen.len(), Weather::ALL.len() * Daytime::ALL.len());
}

#[test]
fn zero_junctions_give_no_junction_roads() {
    let cfg = MapConfig {
        junctions: 0,
        ..MapConfig::default()
    };
    for seed in 0..10 {
        let m = generate_map(&cfg, &mut run_rng(seed, 0)).unwrap();
        assert!(m.spec.roads.iter().all(|r| !r.junction));
    }
}

fn check_map(cfg: &MapConfig, seed: u64) -> Result<(), TestCaseError> {
    let a = generate_map(cfg, &mut run_rng(seed, 0)).unwrap();
    let b = generate_map(cfg, &mut run_rng(seed, 0)).unwrap();
    prop_assert_eq!(&a.spec, &b.spec);
    let map = StaticMap::from_spec(&a.spec).unwrap();
    prop_assert!(tscov::scene::validate_map(&map).is_empty());
    let junctions: BTreeSet<&str> = a
        .spec
        .roads
        .iter()
        .filter(|r| r.junction)
        .map(|r| r.id.as_str())
        .collect();
    prop_assert_eq!(junctions.len(), cfg.junctions as usize);
    for lane in &a.spec.lanes {
        if junctions.contains(lane.road.as_str()) {
            prop_assert!(lane.turn.is_some());
            continue;
        }
        prop_assert!(
            lane.length >= cfg.road_length.min && lane.length <= cfg.road_length.max,
            "{} has length {}",
            lane.id,
            lane.length
        );
    }
    // Every lane leads somewhere, so the lane graph has no dead ends.
    prop_assert!(a.spec.lanes.iter().all(|l| !l.successors.is_empty()));
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn maps_are_seeded_valid_and_within_length_bounds(
        seed in any::<u64>(),
        junctions in 0u32..7,
        lo in 40.0f64..120.0,
        extra in 0.0f64..100.0,
    ) {
        let cfg = MapConfig {
            junctions,
            road_length: tscov::simgen::Range { min: lo, max: lo + extra },
            ..MapConfig::default()
        };
        check_map(&cfg, seed)?;
    }

    #[test]
    fn short_runs_are_deterministic_and_clean(seed in any::<u64>(), run in 0u64..1000) {
        let cfg = short(seed, 15.0);
        let a = generate_run(&cfg, run).unwrap();
        let b = generate_run(&cfg, run).unwrap();
        prop_assert!(a.violations.is_empty(), "{:?}", a.violations);
        prop_assert_eq!(a.trace.len(), 30);
        prop_assert_eq!(
            ingest::save_string(&a.id, &a.trace, &a.map),
            ingest::save_string(&b.id, &b.trace, &b.map)
        );
        let vehicles = a.trace.actor_ids().filter(|x| a.trace.actor_kind(*x) == ActorKind::Vehicle).count();
        prop_assert!(vehicles as u32 >= cfg.vehicles.min && vehicles as u32 <= cfg.vehicles.max);
    }
}
