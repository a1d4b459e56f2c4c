//! Data-sanity checks over a trace and its map.

use crate::logic::{evaluate_all, satisfies, Formula, Interval, Term, Valuation};
use crate::scene::{validate_map, ActorKind, LandmarkKind, Rule, StaticMap, TemporalStructure, Violation};
use crate::signature::Rel;

const EPS: f64 = 1e-9;

fn is_vehicle(x: &str) -> Formula {
    Formula::pred(Rel::IsVehicle, vec![Term::var(x)])
}

fn is_ego(x: &str) -> Formula {
    Formula::pred(Rel::IsEgo, vec![Term::var(x)])
}

/// `v.isEgo ∧ ∀v' ∈ 𝒱: v'.isEgo ⇒ v = v'`
fn sole_ego(v: &str) -> Formula {
    let w = "w";
    Formula::and(
        is_ego(v),
        Formula::forall(
            w,
            Formula::implies(
                is_vehicle(w),
                Formula::implies(is_ego(w), Formula::pred(Rel::Eq, vec![Term::var(v), Term::var(w)])),
            ),
        ),
    )
}

/// Exactly one ego vehicle in the current scene.
pub fn unique_ego_here() -> Formula {
    Formula::exists("v", Formula::and(is_vehicle("v"), sole_ego("v")))
}

/// Only one ego vehicle exists at all times and it never changes:
/// `∃v ∈ 𝒱: □(v.isEgo ∧ ∀v' ∈ 𝒱: v'.isEgo ⇒ v = v')`.
pub fn unique_ego() -> Formula {
    Formula::exists(
        "v",
        Formula::and(is_vehicle("v"), Formula::always(Interval::UNBOUNDED, sole_ego("v"))),
    )
}

/// All sanity violations of `trace` against `map`; empty iff the data is
/// well formed.
pub fn validate(trace: &TemporalStructure, map: &StaticMap) -> Vec<Violation> {
    let mut out = validate_map(map);
    let mut push = |index: usize, rule: Rule, message: String| {
        out.push(Violation {
            index: Some(index),
            rule,
            message,
        })
    };

    let per_scene =
        evaluate_all(&unique_ego_here(), trace, map, &Valuation::new()).expect("closed, well-typed formula");
    for (i, ok) in per_scene.iter().enumerate() {
        if !ok {
            let egos = trace.egos_at(i).len();
            push(i, Rule::UniqueEgo, format!("{egos} ego actors present"));
        }
    }
    if per_scene.iter().all(|ok| *ok) && !satisfies(trace, map, &unique_ego()).expect("closed, well-typed formula") {
        let first = trace.egos_at(0);
        let changed = (1..trace.len()).find(|i| trace.egos_at(*i) != first).unwrap_or(0);
        push(changed, Rule::UniqueEgo, "ego vehicle changes identity".to_owned());
    }

    for i in 0..trace.len() {
        let scene = trace.scene(i);
        for (actor, state) in scene.present() {
            let name = trace.actor_name(actor);
            if state.kind != trace.actor_kind(actor) {
                push(i, Rule::KindConstant, format!("actor `{name}` changes kind"));
            }
            if trace.is_ego(i, actor) && state.kind != ActorKind::Vehicle {
                push(i, Rule::EgoIsVehicle, format!("ego actor `{name}` is not a vehicle"));
            }
            let lane = map.lane(state.lane);
            if !(state.position >= -EPS && state.position <= lane.length + EPS) {
                push(
                    i,
                    Rule::PositionWithinLane,
                    format!(
                        "actor `{name}` at {} on lane `{}` of length {}",
                        state.position, lane.name, lane.length
                    ),
                );
            }
            if state.speed.is_nan() || state.speed < 0.0 {
                push(
                    i,
                    Rule::NonNegativeSpeed,
                    format!("actor `{name}` has speed {}", state.speed),
                );
            }
        }
        for id in scene.lights.keys() {
            let mark = map.landmark(*id);
            if mark.kind != LandmarkKind::TrafficLight {
                push(
                    i,
                    Rule::LightIsTrafficLight,
                    format!("light state given for non-light landmark `{}`", mark.name),
                );
            }
        }
    }
    out
}
