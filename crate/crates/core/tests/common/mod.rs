//! Shared helpers for the integration tests: a literal reference evaluator,
//! random traces, formulas and classifiers, and brute-force class oracles.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_rational::Ratio;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tscov::logic::{Formula, Fraction, Interval, Term};
use tscov::scene::{
    ActorId, ActorKind, Daytime, Entity, LandmarkKind, LandmarkSpec, LaneId, LaneSpec, LightState, MapSpec, RoadSpec,
    SceneEnv, SpeedZone, StaticMap, TemporalStructure, Time, TraceBuilder, Turn, Weather,
};
use tscov::signature::{Func, Rel, SceneView, Sort, Value};

/// Variables in scope with their known sort.
pub type Scope = Vec<(String, Sort)>;
use tscov::tsc::{Classifier, KindSpec, NodeDecl, ScenarioClass, Tsc};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Reference evaluator: one clause per semantic rule, no caching, no guards.

pub type Env = BTreeMap<String, Value>;

fn term(t: &Term, env: &Env, view: SceneView<'_>) -> Value {
    match t {
        Term::Const(c) => *c,
        Term::Var(x) => env[x],
        Term::Apply(f, args) => {
            let vals: Vec<Value> = args.iter().map(|a| term(a, env, view)).collect();
            f.apply(view, &vals)
        }
    }
}

fn collect_constants(phi: &Formula, out: &mut BTreeSet<Value>) {
    fn in_term(t: &Term, out: &mut BTreeSet<Value>) {
        match t {
            Term::Const(c) => {
                out.insert(*c);
            }
            Term::Var(_) => {}
            Term::Apply(_, args) => args.iter().for_each(|a| in_term(a, out)),
        }
    }
    match phi {
        Formula::Pred(_, args) => args.iter().for_each(|a| in_term(a, out)),
        Formula::Not(a) | Formula::Next(_, a) | Formula::MinPrevalence(_, _, a) | Formula::Exists(_, a) => {
            collect_constants(a, out)
        }
        Formula::Or(a, b) | Formula::Until(_, a, b) => {
            collect_constants(a, out);
            collect_constants(b, out);
        }
        Formula::Bind(t, _, a) => {
            in_term(t, out);
            collect_constants(a, out);
        }
    }
}

/// Domain: every actor, lane and road, plus the formula's constants.
pub fn domain(trace: &TemporalStructure, map: &StaticMap, phi: &Formula) -> Vec<Value> {
    let mut d: BTreeSet<Value> = BTreeSet::new();
    d.extend(trace.actor_ids().map(Value::Actor));
    d.extend(map.lane_ids().map(Value::Lane));
    d.extend(map.road_ids().map(Value::Road));
    collect_constants(phi, &mut d);
    d.into_iter().collect()
}

/// Whether `tau_j - tau_i` lies in `[lower, upper)`.
fn within(iv: &Interval, trace: &TemporalStructure, i: usize, j: usize) -> bool {
    let d = trace.time(j) - trace.time(i);
    let lo = Time::from_integer(iv.lower() as i64);
    d >= lo && iv.upper().is_none_or(|u| d < Time::from_integer(u as i64))
}

pub fn naive(phi: &Formula, trace: &TemporalStructure, map: &StaticMap, dom: &[Value], env: &Env, i: usize) -> bool {
    let view = SceneView { trace, map, index: i };
    let n = trace.len();
    match phi {
        Formula::Pred(r, args) => {
            let vals: Vec<Value> = args.iter().map(|a| term(a, env, view)).collect();
            r.holds(view, &vals)
        }
        Formula::Not(a) => !naive(a, trace, map, dom, env, i),
        Formula::Or(a, b) => naive(a, trace, map, dom, env, i) || naive(b, trace, map, dom, env, i),
        Formula::Exists(x, a) => dom.iter().any(|d| {
            let mut e = env.clone();
            e.insert(x.clone(), *d);
            naive(a, trace, map, dom, &e, i)
        }),
        Formula::Bind(t, x, a) => {
            let mut e = env.clone();
            e.insert(x.clone(), term(t, env, view));
            naive(a, trace, map, dom, &e, i)
        }
        Formula::Next(iv, a) => i + 1 < n && within(iv, trace, i, i + 1) && naive(a, trace, map, dom, env, i + 1),
        Formula::Until(iv, a, b) => (i..n).any(|j| {
            within(iv, trace, i, j)
                && naive(b, trace, map, dom, env, j)
                && (i..j).all(|k| naive(a, trace, map, dom, env, k))
        }),
        Formula::MinPrevalence(iv, p, a) => {
            let qualifying: Vec<usize> = (i..n).filter(|j| within(iv, trace, i, *j)).collect();
            let hits = qualifying
                .iter()
                .filter(|j| naive(a, trace, map, dom, env, **j))
                .count();
            // hits / total >= p, as exact rationals; no qualifying index holds
            Ratio::new(hits as u64, 1)
                >= Ratio::new(p.numer(), p.denom()) * Ratio::from_integer(qualifying.len() as u64)
        }
    }
}

pub fn naive_closed(phi: &Formula, trace: &TemporalStructure, map: &StaticMap, i: usize) -> bool {
    let dom = domain(trace, map, phi);
    naive(phi, trace, map, &dom, &Env::new(), i)
}

// ---------------------------------------------------------------------------
// Test map and random traces.

fn zone(from: f64, to: f64, limit: f64) -> SpeedZone {
    SpeedZone { from, to, limit }
}

fn lane(id: &str, road: &str, count: u32, forward: bool, turn: Option<Turn>) -> LaneSpec {
    LaneSpec {
        id: id.into(),
        road: road.into(),
        length: 100.0,
        same_direction_lane_count: count,
        forward,
        speed_limits: vec![zone(0.0, 40.0, 13.9), zone(40.0, 100.0, 8.3)],
        successors: Vec::new(),
        turn,
    }
}

/// Two-lane road `R` with one opposite lane, single-lane road `S`, and a
/// junction `J` with a left-turn and a straight connecting lane.
pub fn small_map_spec() -> MapSpec {
    let mut lanes = vec![
        lane("r1", "R", 2, true, None),
        lane("r2", "R", 2, true, None),
        lane("rb", "R", 1, false, None),
        lane("s1", "S", 1, true, None),
        lane("jl", "J", 1, true, Some(Turn::Left)),
        lane("js", "J", 1, true, Some(Turn::Straight)),
    ];
    lanes[0].successors = vec!["jl".into(), "js".into()];
    lanes[4].successors = vec!["s1".into()];
    MapSpec {
        roads: vec![
            RoadSpec {
                id: "R".into(),
                junction: false,
            },
            RoadSpec {
                id: "S".into(),
                junction: false,
            },
            RoadSpec {
                id: "J".into(),
                junction: true,
            },
        ],
        lanes,
        landmarks: vec![
            LandmarkSpec {
                id: "stop-r1".into(),
                kind: LandmarkKind::StopSign,
                lane: "r1".into(),
                position: 60.0,
            },
            LandmarkSpec {
                id: "yield-s1".into(),
                kind: LandmarkKind::YieldSign,
                lane: "s1".into(),
                position: 90.0,
            },
            LandmarkSpec {
                id: "light-r2".into(),
                kind: LandmarkKind::TrafficLight,
                lane: "r2".into(),
                position: 80.0,
            },
        ],
        crosswalks: Vec::new(),
    }
}

pub fn small_map() -> Arc<StaticMap> {
    Arc::new(StaticMap::from_spec(&small_map_spec()).expect("test map is valid"))
}

const ACTORS: [(&str, ActorKind); 4] = [
    ("v0", ActorKind::Vehicle),
    ("v1", ActorKind::Vehicle),
    ("v2", ActorKind::Vehicle),
    ("p0", ActorKind::Pedestrian),
];

/// Random trace over [`small_map`] with up to four actors and `len` scenes.
/// Time steps are multiples of half a second.
pub fn random_trace(r: &mut ChaCha8Rng, map: &StaticMap, len: usize) -> TemporalStructure {
    let lanes: Vec<String> = map.lanes.iter().map(|l| l.name.clone()).collect();
    let actors = r.random_range(1..=ACTORS.len());
    let mut b = TraceBuilder::new(map);
    for (id, kind) in &ACTORS[..actors] {
        b.declare(id, *kind);
    }
    let mut t = Time::from_integer(0);
    for _ in 0..len {
        let mut entities = Vec::new();
        for (k, (id, kind)) in ACTORS[..actors].iter().enumerate() {
            if !r.random_bool(0.85) {
                continue;
            }
            let lane = lanes.choose(r).unwrap();
            let pos = f64::from(r.random_range(0..=20u32)) * 5.0;
            let speed = *[0.0, 0.3, 2.5, 5.0, 9.0, 15.0].choose(r).unwrap();
            let mut e = match kind {
                ActorKind::Vehicle => Entity::vehicle(id, lane, pos, speed),
                ActorKind::Pedestrian => Entity::pedestrian(id, lane, pos),
            };
            if (k == 0 && r.random_bool(0.9)) || (k == 1 && r.random_bool(0.1)) {
                e = e.ego();
            }
            entities.push(e);
        }
        let light = *[LightState::Red, LightState::Yellow, LightState::Green]
            .choose(r)
            .unwrap();
        let env = SceneEnv {
            weather: *[Weather::Clear, Weather::Cloudy, Weather::HardRain].choose(r).unwrap(),
            daytime: *Daytime::ALL.choose(r).unwrap(),
            traffic_density_hint: if r.random_bool(0.3) {
                Some(r.random_range(0..20))
            } else {
                None
            },
            lights: vec![("light-r2".into(), light)],
        };
        b.push(t, env, &entities).expect("random scene is well formed");
        t += Time::new(r.random_range(1..=4), 2);
    }
    b.build().expect("non-empty trace")
}

// ---------------------------------------------------------------------------
// Random formulas.

pub struct FormulaGen<'a> {
    pub map: &'a StaticMap,
    pub actors: usize,
    /// Off: actor and lane terms are always variables, so the formula has
    /// a textual form. Requires a non-empty scope.
    pub entity_constants: bool,
    next_var: usize,
}

impl<'a> FormulaGen<'a> {
    pub fn new(map: &'a StaticMap, actors: usize) -> Self {
        FormulaGen {
            map,
            actors,
            entity_constants: true,
            next_var: 0,
        }
    }

    fn fresh(&mut self) -> String {
        self.next_var += 1;
        format!("x{}", self.next_var)
    }

    /// A variable usable where `want` is expected, with probability `p`.
    fn var_or(&self, r: &mut ChaCha8Rng, scope: &Scope, want: Sort, p: f64) -> Option<Term> {
        let fits: Vec<&String> = scope
            .iter()
            .filter(|(_, s)| *s == Sort::Any || *s == want)
            .map(|(x, _)| x)
            .collect();
        if !fits.is_empty() && r.random_bool(p) {
            Some(Term::Var((*fits.choose(r).unwrap()).clone()))
        } else {
            None
        }
    }

    fn actor(&self, r: &mut ChaCha8Rng, scope: &Scope) -> Term {
        let p = if self.entity_constants { 0.8 } else { 1.0 };
        self.var_or(r, scope, Sort::Actor, p)
            .unwrap_or_else(|| Term::Const(Value::Actor(ActorId(r.random_range(0..self.actors) as u32))))
    }

    fn lane(&self, r: &mut ChaCha8Rng, scope: &Scope, depth: usize) -> Term {
        match r.random_range(0..4) {
            0 => self.var_or(r, scope, Sort::Lane, 1.0),
            1 | 2 if depth > 0 => Some(Term::apply(Func::Lane, vec![self.actor(r, scope)])),
            _ if !self.entity_constants => self.var_or(r, scope, Sort::Lane, 1.0),
            _ => None,
        }
        .unwrap_or_else(|| Term::Const(Value::Lane(LaneId(r.random_range(0..self.map.lanes.len()) as u32))))
    }

    fn num(&self, r: &mut ChaCha8Rng, scope: &Scope, depth: usize) -> Term {
        let leaf = |r: &mut ChaCha8Rng| Term::num(*[0.0, 1.0, 2.5, 5.0, 10.0, 40.0].choose(r).unwrap());
        if depth == 0 {
            return leaf(r);
        }
        let d = depth - 1;
        match r.random_range(0..13) {
            0 => self.var_or(r, scope, Sort::Number, 1.0).unwrap_or_else(|| leaf(r)),
            1 => Term::apply(Func::Speed, vec![self.actor(r, scope)]),
            2 => Term::apply(Func::Pos, vec![self.actor(r, scope)]),
            3 => Term::apply(Func::LaneLength, vec![self.lane(r, scope, d)]),
            4 => Term::apply(Func::SpeedLimitAt, vec![self.num(r, scope, d), self.lane(r, scope, d)]),
            5 => Term::apply(Func::SameDirectionLaneCount, vec![self.lane(r, scope, d)]),
            6 => {
                let f = *[
                    Func::DistanceToStopSign,
                    Func::DistanceToYieldSign,
                    Func::DistanceToRedLight,
                ]
                .choose(r)
                .unwrap();
                Term::apply(f, vec![self.num(r, scope, d), self.lane(r, scope, d)])
            }
            7 => Term::apply(Func::TrafficDensity, vec![]),
            8 => {
                let f = *[Func::Add, Func::Sub, Func::Mul].choose(r).unwrap();
                Term::apply(f, vec![self.num(r, scope, d), self.num(r, scope, d)])
            }
            9 => Term::apply(Func::Abs, vec![self.num(r, scope, d)]),
            _ => leaf(r),
        }
    }

    fn any_term(&self, r: &mut ChaCha8Rng, scope: &Scope, depth: usize) -> Term {
        match r.random_range(0..5) {
            0 => self.actor(r, scope),
            1 => self.lane(r, scope, depth),
            2 => Term::apply(Func::Road, vec![self.lane(r, scope, depth)]),
            _ => self.num(r, scope, depth),
        }
    }

    fn atom(&self, r: &mut ChaCha8Rng, scope: &Scope) -> Formula {
        let p = |rel, args| Formula::pred(rel, args);
        match r.random_range(0..16) {
            0 => Formula::truth(),
            1 => p(Rel::IsVehicle, vec![self.any_term(r, scope, 1)]),
            2 => p(Rel::IsPedestrian, vec![self.any_term(r, scope, 1)]),
            3 => p(Rel::IsEgo, vec![self.actor(r, scope)]),
            4 => p(Rel::OnLane, vec![self.actor(r, scope), self.lane(r, scope, 1)]),
            5 => p(
                Rel::IsJunction,
                vec![Term::apply(Func::Road, vec![self.lane(r, scope, 1)])],
            ),
            6 => {
                let rel = *[Rel::IsLeftTurn, Rel::IsRightTurn, Rel::IsStraight].choose(r).unwrap();
                p(rel, vec![self.lane(r, scope, 1)])
            }
            7 => p(
                Rel::IsOncomingLane,
                vec![self.lane(r, scope, 1), self.lane(r, scope, 1)],
            ),
            8 => p(Rel::IsLane, vec![self.any_term(r, scope, 1)]),
            9 => p(Rel::IsActor, vec![self.any_term(r, scope, 1)]),
            10 => {
                let rel = *[Rel::Eq, Rel::Neq].choose(r).unwrap();
                match r.random_range(0..4) {
                    0 => p(rel, vec![self.actor(r, scope), self.actor(r, scope)]),
                    1 => p(rel, vec![self.lane(r, scope, 1), self.lane(r, scope, 1)]),
                    2 => p(
                        rel,
                        vec![
                            Term::apply(Func::Weather, vec![]),
                            Term::Const(Value::Weather(*[Weather::Clear, Weather::HardRain].choose(r).unwrap())),
                        ],
                    ),
                    _ => p(
                        rel,
                        vec![
                            Term::apply(Func::Daytime, vec![]),
                            Term::Const(Value::Daytime(Daytime::Noon)),
                        ],
                    ),
                }
            }
            _ => {
                let rel = *[Rel::Lt, Rel::Gt, Rel::Leq, Rel::Geq, Rel::Eq].choose(r).unwrap();
                p(rel, vec![self.num(r, scope, 2), self.num(r, scope, 2)])
            }
        }
    }

    fn interval(r: &mut ChaCha8Rng) -> Interval {
        if r.random_bool(0.4) {
            return Interval::UNBOUNDED;
        }
        let lo = r.random_range(0..3);
        let hi = if r.random_bool(0.3) {
            None
        } else {
            Some(lo + r.random_range(1..5))
        };
        Interval::new(lo, hi).unwrap()
    }

    fn fraction(r: &mut ChaCha8Rng) -> Fraction {
        let (n, d) = *[(0, 1), (1, 5), (1, 3), (1, 2), (2, 3), (4, 5), (1, 1)]
            .choose(r)
            .unwrap();
        Fraction::new(n, d).unwrap()
    }

    /// Random closed-over-`scope` formula with at most `depth` nested
    /// connectives above the atoms.
    pub fn formula(&mut self, r: &mut ChaCha8Rng, scope: &mut Scope, depth: usize) -> Formula {
        if depth == 0 || r.random_bool(0.15) {
            return self.atom(r, scope);
        }
        let d = depth - 1;
        match r.random_range(0..12) {
            0 => Formula::not(self.formula(r, scope, d)),
            1 => Formula::or(self.formula(r, scope, d), self.formula(r, scope, d)),
            2 => Formula::and(self.formula(r, scope, d), self.formula(r, scope, d)),
            3 | 4 => {
                let x = self.fresh();
                scope.push((x.clone(), Sort::Any));
                let body = self.formula(r, scope, d);
                scope.pop();
                if r.random_bool(0.5) {
                    Formula::exists(&x, body)
                } else {
                    Formula::forall(&x, body)
                }
            }
            5 => {
                let t = self.any_term(r, scope, 2);
                let x = self.fresh();
                scope.push((x.clone(), t.sort()));
                let body = self.formula(r, scope, d);
                scope.pop();
                Formula::bind(t, &x, body)
            }
            6 => Formula::next(Self::interval(r), self.formula(r, scope, d)),
            7 => Formula::until(Self::interval(r), self.formula(r, scope, d), self.formula(r, scope, d)),
            8 => Formula::eventually(Self::interval(r), self.formula(r, scope, d)),
            9 => Formula::always(Self::interval(r), self.formula(r, scope, d)),
            10 => Formula::min_prevalence(Self::interval(r), Self::fraction(r), self.formula(r, scope, d)),
            _ => Formula::max_prevalence(Self::interval(r), Self::fraction(r), self.formula(r, scope, d)),
        }
    }

    pub fn closed(&mut self, r: &mut ChaCha8Rng, depth: usize) -> Formula {
        self.formula(r, &mut Vec::new(), depth)
    }
}

/// One randomized evaluation instance: trace, closed formula.
pub fn instance(seed: u64, map: &StaticMap) -> (TemporalStructure, Formula) {
    let mut r = rng(seed);
    let len = r.random_range(1..=12);
    let trace = random_trace(&mut r, map, len);
    let mut g = FormulaGen::new(map, trace.actor_count());
    let phi = g.closed(&mut r, 5);
    (trace, phi)
}

// ---------------------------------------------------------------------------
// Random classifiers and brute-force class oracles.

/// Random valid classifier with `1..=max_nodes` nodes and mixed kinds.
pub fn random_tsc(r: &mut ChaCha8Rng, max_nodes: usize) -> Tsc {
    let n = r.random_range(1..=max_nodes);
    let parents: Vec<Option<usize>> = (0..n)
        .map(|k| if k == 0 { None } else { Some(r.random_range(0..k)) })
        .collect();
    let mut children = vec![0usize; n];
    for p in parents.iter().flatten() {
        children[*p] += 1;
    }
    let mut decls: Vec<NodeDecl> = (0..n)
        .map(|k| {
            let c = children[k];
            let kind = if c == 0 {
                if r.random_bool(0.8) {
                    KindSpec::Leaf
                } else {
                    KindSpec::Optional
                }
            } else {
                match r.random_range(0..4) {
                    0 => KindSpec::All,
                    1 => KindSpec::Exclusive,
                    2 => KindSpec::Optional,
                    _ => {
                        let a = r.random_range(0..=c);
                        KindSpec::Range(a, r.random_range(a..=c))
                    }
                }
            };
            let parent = parents[k].map(|p| format!("n{p}"));
            NodeDecl::new(&format!("n{k}"), parent.as_deref(), kind)
        })
        .collect();
    // Declaration order must not matter.
    for k in (1..decls.len()).rev() {
        let m = r.random_range(0..=k);
        decls.swap(k, m);
    }
    Tsc::new("random", decls).expect("generated classifier is valid")
}

/// Every node subset, checked directly against the class definition.
pub fn brute_force_classes(t: &Tsc) -> Vec<ScenarioClass> {
    let n = t.len();
    assert!(n <= 16, "brute force is for small classifiers");
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        let has = |k: usize| mask & (1 << k) != 0;
        if !has(t.root()) {
            continue;
        }
        let ok = (0..n).filter(|k| has(*k)).all(|k| {
            let node = t.node(k);
            let closed = node.parent.is_none_or(has);
            let taken = node.children.iter().filter(|c| has(**c)).count();
            closed && node.lower <= taken && taken <= node.upper
        });
        if ok {
            out.push(ScenarioClass::new((0..n).filter(|k| has(*k))));
        }
    }
    out
}

/// Random edge truth values, biased so that classification often succeeds.
pub fn random_edges(r: &mut ChaCha8Rng, t: &Tsc) -> Vec<bool> {
    if r.random_bool(0.6) {
        // Derived from a valid class: its nodes plus some noise below absent parents.
        let all = t.enumerate(Some(512)).classes;
        let c = all.choose(r).unwrap();
        (0..t.len())
            .map(|k| c.contains(k) || (t.node(k).parent.is_some_and(|p| !c.contains(p)) && r.random_bool(0.5)))
            .collect()
    } else {
        (0..t.len()).map(|_| r.random_bool(0.5)).collect()
    }
}

// ---------------------------------------------------------------------------
// Random classification batches.

/// Classes of a random batch: classified random edge vectors, sometimes
/// topped up with every class so that coverage is complete.
pub fn random_batch(r: &mut ChaCha8Rng, t: &Tsc) -> (Vec<ScenarioClass>, usize) {
    let c = Classifier::new(t).unwrap();
    let segments = r.random_range(0..60);
    let mut classes = Vec::new();
    let mut failed = 0;
    for _ in 0..segments {
        match c.classify_edges(&random_edges(r, t)) {
            Ok(class) => classes.push(class),
            Err(_) => failed += 1,
        }
    }
    if r.random_bool(0.3) {
        classes.extend(t.enumerate(None).classes);
        classes.shuffle(r);
    }
    (classes, failed)
}

/// Pairs co-occurring in no observed class but in some valid class,
/// ancestor pairs excluded, by brute force.
pub fn expected_pair_misses(t: &Tsc, observed: &BTreeSet<ScenarioClass>) -> Vec<(usize, usize)> {
    let all = brute_force_classes(t);
    let mut out = Vec::new();
    for a in 0..t.len() {
        for b in a + 1..t.len() {
            if t.is_ancestor(a, b) || t.is_ancestor(b, a) {
                continue;
            }
            let both = |c: &ScenarioClass| c.contains(a) && c.contains(b);
            if all.iter().any(both) && !observed.iter().any(both) {
                out.push((a, b));
            }
        }
    }
    out
}
