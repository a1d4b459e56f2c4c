//! The closed formula signature: relation and function symbols, their sorts,
//! and their interpretation in a scene.
//!
//! Functions are total. Applied to an argument of the wrong kind, or to an
//! actor absent from the scene, they return [`Value::Undefined`]; every
//! relation is false when one of its arguments is undefined.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};

use thiserror::Error;

use crate::scene::{
    ActorId, ActorKind, Daytime, LandmarkKind, LaneId, LightState, RoadId, StaticMap, TemporalStructure, Turn, Weather,
};

/// Bumped whenever a symbol is added, removed or changes meaning.
pub const SIGNATURE_VERSION: u32 = 1;

/// Number with total equality and ordering so it can live in valuations and
/// hash keys. `-0.0` and `0.0` compare equal.
#[derive(Clone, Copy, Debug)]
pub struct Num(f64);

impl Num {
    pub fn new(v: f64) -> Self {
        Num(if v == 0.0 { 0.0 } else { v })
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl PartialEq for Num {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for Num {}

impl PartialOrd for Num {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Num {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Hash for Num {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state)
    }
}

impl fmt::Display for Num {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A domain element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Actor(ActorId),
    Lane(LaneId),
    Road(RoadId),
    Num(Num),
    Weather(Weather),
    Daytime(Daytime),
    Undefined,
}

impl Value {
    pub fn num(v: f64) -> Self {
        Value::Num(Num::new(v))
    }

    pub fn as_num(self) -> Option<f64> {
        match self {
            Value::Num(n) => Some(n.get()),
            _ => None,
        }
    }

    pub fn is_defined(self) -> bool {
        !matches!(self, Value::Undefined)
    }
}

/// Static sorts used for type checking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sort {
    Vehicle,
    Pedestrian,
    Actor,
    Lane,
    Road,
    Number,
    Weather,
    Daytime,
    Any,
}

impl Sort {
    pub fn name(self) -> &'static str {
        match self {
            Sort::Vehicle => "vehicle",
            Sort::Pedestrian => "pedestrian",
            Sort::Actor => "actor",
            Sort::Lane => "lane",
            Sort::Road => "road",
            Sort::Number => "number",
            Sort::Weather => "weather",
            Sort::Daytime => "daytime",
            Sort::Any => "any",
        }
    }

    fn is_actor(self) -> bool {
        matches!(self, Sort::Vehicle | Sort::Pedestrian | Sort::Actor)
    }

    /// Whether a term of sort `actual` may stand where `self` is expected.
    pub fn accepts(self, actual: Sort) -> bool {
        if self == Sort::Any || actual == Sort::Any || self == actual {
            return true;
        }
        if self.is_actor() && actual.is_actor() {
            return !matches!(
                (self, actual),
                (Sort::Vehicle, Sort::Pedestrian) | (Sort::Pedestrian, Sort::Vehicle)
            );
        }
        false
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

macro_rules! symbols {
    ($(#[$meta:meta])* $enum:ident { $($variant:ident => $name:literal, [$($param:ident),*], $receiver:literal;)* }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $enum {
            $($variant,)*
        }

        impl $enum {
            pub const ALL: &'static [$enum] = &[$($enum::$variant,)*];

            pub fn name(self) -> &'static str {
                match self {
                    $($enum::$variant => $name,)*
                }
            }

            pub fn params(self) -> &'static [Sort] {
                match self {
                    $($enum::$variant => &[$(Sort::$param),*],)*
                }
            }

            /// Argument slot filled by the receiver in dotted notation.
            pub fn receiver(self) -> usize {
                match self {
                    $($enum::$variant => $receiver,)*
                }
            }

            pub fn arity(self) -> usize {
                self.params().len()
            }

            pub fn from_name(name: &str) -> Option<Self> {
                match name {
                    $($name => Some($enum::$variant),)*
                    _ => None,
                }
            }
        }
    };
}

symbols! {
    /// Relation symbols.
    Rel {
        True => "true", [], 0;
        IsVehicle => "isVehicle", [Any], 0;
        IsPedestrian => "isPedestrian", [Any], 0;
        IsActor => "isActor", [Any], 0;
        IsEgo => "isEgo", [Actor], 0;
        IsLane => "isLane", [Any], 0;
        IsRoad => "isRoad", [Any], 0;
        OnLane => "onLane", [Actor, Lane], 0;
        IsJunction => "isJunction", [Road], 0;
        IsLeftTurn => "isLeftTurn", [Lane], 0;
        IsRightTurn => "isRightTurn", [Lane], 0;
        IsStraight => "isStraight", [Lane], 0;
        IsOncomingLane => "isOncomingLane", [Lane, Lane], 0;
        Eq => "eq", [Any, Any], 0;
        Neq => "neq", [Any, Any], 0;
        Lt => "lt", [Number, Number], 0;
        Gt => "gt", [Number, Number], 0;
        Leq => "leq", [Number, Number], 0;
        Geq => "geq", [Number, Number], 0;
    }
}

symbols! {
    /// Function symbols.
    Func {
        Lane => "lane", [Actor], 0;
        Road => "road", [Lane], 0;
        Speed => "speed", [Actor], 0;
        Pos => "pos", [Actor], 0;
        LaneLength => "laneLength", [Lane], 0;
        SpeedLimitAt => "speedLimitAt", [Number, Lane], 1;
        SameDirectionLaneCount => "sameDirectionLaneCount", [Lane], 0;
        DistanceToStopSign => "distanceToStopSign", [Number, Lane], 1;
        DistanceToYieldSign => "distanceToYieldSign", [Number, Lane], 1;
        DistanceToRedLight => "distanceToRedLight", [Number, Lane], 1;
        TrafficDensity => "trafficDensity", [], 0;
        Weather => "weather", [], 0;
        Daytime => "daytime", [], 0;
        Add => "add", [Number, Number], 0;
        Sub => "sub", [Number, Number], 0;
        Mul => "mul", [Number, Number], 0;
        Abs => "abs", [Number], 0;
    }
}

impl Rel {
    /// Infix notation for comparators.
    pub fn infix(self) -> Option<&'static str> {
        Some(match self {
            Rel::Eq => "=",
            Rel::Neq => "!=",
            Rel::Lt => "<",
            Rel::Gt => ">",
            Rel::Leq => "<=",
            Rel::Geq => ">=",
            _ => return None,
        })
    }
}

impl Func {
    pub fn result(self) -> Sort {
        match self {
            Func::Lane => Sort::Lane,
            Func::Road => Sort::Road,
            Func::Weather => Sort::Weather,
            Func::Daytime => Sort::Daytime,
            _ => Sort::Number,
        }
    }

    pub fn infix(self) -> Option<&'static str> {
        Some(match self {
            Func::Add => "+",
            Func::Sub => "-",
            Func::Mul => "*",
            _ => return None,
        })
    }
}

/// Any signature symbol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Symbol {
    Rel(Rel),
    Func(Func),
}

impl Symbol {
    pub fn lookup(name: &str) -> Option<Symbol> {
        Rel::from_name(name)
            .map(Symbol::Rel)
            .or_else(|| Func::from_name(name).map(Symbol::Func))
    }

    pub fn arity(self) -> usize {
        match self {
            Symbol::Rel(r) => r.arity(),
            Symbol::Func(f) => f.arity(),
        }
    }
}

/// Named constants of the signature (besides numeric literals).
pub fn constant(name: &str) -> Option<Value> {
    Weather::ALL
        .iter()
        .find(|w| w.constant_name() == name)
        .map(|w| Value::Weather(*w))
        .or_else(|| {
            Daytime::ALL
                .iter()
                .find(|d| d.constant_name() == name)
                .map(|d| Value::Daytime(*d))
        })
}

pub fn constant_sort(value: Value) -> Sort {
    match value {
        Value::Actor(_) => Sort::Actor,
        Value::Lane(_) => Sort::Lane,
        Value::Road(_) => Sort::Road,
        Value::Num(_) => Sort::Number,
        Value::Weather(_) => Sort::Weather,
        Value::Daytime(_) => Sort::Daytime,
        Value::Undefined => Sort::Any,
    }
}

/// One scene of a trace together with the static map: the structure in
/// which atoms are interpreted.
#[derive(Clone, Copy)]
pub struct SceneView<'a> {
    pub trace: &'a TemporalStructure,
    pub map: &'a StaticMap,
    pub index: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InterpretError {
    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),
    #[error("symbol `{symbol}` expects {expected} argument(s), got {got}")]
    Arity {
        symbol: String,
        expected: usize,
        got: usize,
    },
    #[error("argument refers to a non-existent {0}")]
    Dangling(&'static str),
    #[error("scene index {index} out of range for a trace of length {len}")]
    Index { index: usize, len: usize },
}

/// Result of [`interpret`]: relations yield truth values, functions yield
/// domain values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Interpretation {
    Truth(bool),
    Value(Value),
}

/// Checked interpretation of a symbol by name.
pub fn interpret(view: SceneView<'_>, symbol: &str, args: &[Value]) -> Result<Interpretation, InterpretError> {
    let sym = Symbol::lookup(symbol).ok_or_else(|| InterpretError::UnknownSymbol(symbol.to_owned()))?;
    if args.len() != sym.arity() {
        return Err(InterpretError::Arity {
            symbol: symbol.to_owned(),
            expected: sym.arity(),
            got: args.len(),
        });
    }
    if view.index >= view.trace.len() {
        return Err(InterpretError::Index {
            index: view.index,
            len: view.trace.len(),
        });
    }
    for a in args {
        match *a {
            Value::Actor(id) if !view.trace.has_actor(id) => return Err(InterpretError::Dangling("actor")),
            Value::Lane(id) if !view.map.has_lane(id) => return Err(InterpretError::Dangling("lane")),
            Value::Road(id) if !view.map.has_road(id) => return Err(InterpretError::Dangling("road")),
            _ => {}
        }
    }
    Ok(match sym {
        Symbol::Rel(r) => Interpretation::Truth(r.holds(view, args)),
        Symbol::Func(f) => Interpretation::Value(f.apply(view, args)),
    })
}

fn num_pair(args: &[Value]) -> Option<(f64, f64)> {
    Some((args[0].as_num()?, args[1].as_num()?))
}

impl Rel {
    /// Unchecked interpretation; ids must be valid for the view.
    pub fn holds(self, view: SceneView<'_>, args: &[Value]) -> bool {
        if args.iter().any(|a| !a.is_defined()) {
            return false;
        }
        let scene = view.trace.scene(view.index);
        let map = view.map;
        match self {
            Rel::True => true,
            Rel::IsVehicle => matches!(args[0], Value::Actor(a) if view.trace.actor_kind(a) == ActorKind::Vehicle),
            Rel::IsPedestrian => {
                matches!(args[0], Value::Actor(a) if view.trace.actor_kind(a) == ActorKind::Pedestrian)
            }
            Rel::IsActor => matches!(args[0], Value::Actor(_)),
            Rel::IsEgo => matches!(args[0], Value::Actor(a) if view.trace.is_ego(view.index, a)),
            Rel::IsLane => matches!(args[0], Value::Lane(_)),
            Rel::IsRoad => matches!(args[0], Value::Road(_)),
            Rel::OnLane => match (args[0], args[1]) {
                (Value::Actor(a), Value::Lane(l)) => scene.actor(a).is_some_and(|s| s.lane == l),
                _ => false,
            },
            Rel::IsJunction => matches!(args[0], Value::Road(r) if map.road(r).is_junction),
            Rel::IsLeftTurn => matches!(args[0], Value::Lane(l) if map.lane(l).turn == Some(Turn::Left)),
            Rel::IsRightTurn => matches!(args[0], Value::Lane(l) if map.lane(l).turn == Some(Turn::Right)),
            Rel::IsStraight => matches!(args[0], Value::Lane(l) if map.lane(l).turn == Some(Turn::Straight)),
            Rel::IsOncomingLane => match (args[0], args[1]) {
                (Value::Lane(a), Value::Lane(b)) => {
                    let (a, b) = (map.lane(a), map.lane(b));
                    a.road == b.road && a.forward != b.forward
                }
                _ => false,
            },
            Rel::Eq => args[0] == args[1],
            Rel::Neq => args[0] != args[1],
            Rel::Lt => num_pair(args).is_some_and(|(a, b)| a < b),
            Rel::Gt => num_pair(args).is_some_and(|(a, b)| a > b),
            Rel::Leq => num_pair(args).is_some_and(|(a, b)| a <= b),
            Rel::Geq => num_pair(args).is_some_and(|(a, b)| a >= b),
        }
    }
}

fn distance_to(view: SceneView<'_>, args: &[Value], kind: LandmarkKind, red_only: bool) -> Value {
    let (Some(pos), Value::Lane(lane)) = (args[0].as_num(), args[1]) else {
        return Value::Undefined;
    };
    let scene = view.trace.scene(view.index);
    view.map
        .landmarks_on(lane)
        .filter(|(id, m)| {
            m.kind == kind && m.position >= pos && (!red_only || scene.lights.get(id) == Some(&LightState::Red))
        })
        .map(|(_, m)| m.position - pos)
        .next()
        .map_or(Value::Undefined, Value::num)
}

impl Func {
    /// Unchecked interpretation; ids must be valid for the view.
    pub fn apply(self, view: SceneView<'_>, args: &[Value]) -> Value {
        let scene = view.trace.scene(view.index);
        let map = view.map;
        let actor = |v: Value| match v {
            Value::Actor(a) => scene.actor(a),
            _ => None,
        };
        let lane = |v: Value| match v {
            Value::Lane(l) => Some(map.lane(l)),
            _ => None,
        };
        let arith = |f: fn(f64, f64) -> f64| num_pair(args).map_or(Value::Undefined, |(a, b)| Value::num(f(a, b)));
        match self {
            Func::Lane => actor(args[0]).map_or(Value::Undefined, |s| Value::Lane(s.lane)),
            Func::Road => lane(args[0]).map_or(Value::Undefined, |l| Value::Road(l.road)),
            Func::Speed => actor(args[0]).map_or(Value::Undefined, |s| Value::num(s.speed)),
            Func::Pos => actor(args[0]).map_or(Value::Undefined, |s| Value::num(s.position)),
            Func::LaneLength => lane(args[0]).map_or(Value::Undefined, |l| Value::num(l.length)),
            Func::SpeedLimitAt => match (args[0].as_num(), args[1]) {
                (Some(p), Value::Lane(l)) => map.speed_limit_at(l, p).map_or(Value::Undefined, Value::num),
                _ => Value::Undefined,
            },
            Func::SameDirectionLaneCount => {
                lane(args[0]).map_or(Value::Undefined, |l| Value::num(f64::from(l.same_direction_lane_count)))
            }
            Func::DistanceToStopSign => distance_to(view, args, LandmarkKind::StopSign, false),
            Func::DistanceToYieldSign => distance_to(view, args, LandmarkKind::YieldSign, false),
            Func::DistanceToRedLight => distance_to(view, args, LandmarkKind::TrafficLight, true),
            Func::TrafficDensity => {
                let count = scene
                    .traffic_density_hint
                    .unwrap_or_else(|| scene.present().filter(|(_, s)| s.kind == ActorKind::Vehicle).count() as u32);
                Value::num(f64::from(count))
            }
            Func::Weather => Value::Weather(scene.weather),
            Func::Daytime => Value::Daytime(scene.daytime),
            Func::Add => arith(|a, b| a + b),
            Func::Sub => arith(|a, b| a - b),
            Func::Mul => arith(|a, b| a * b),
            Func::Abs => args[0].as_num().map_or(Value::Undefined, |a| Value::num(a.abs())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Entity, LaneSpec, MapSpec, RoadSpec, SceneEnv, SpeedZone, Time, TraceBuilder};

    fn map() -> StaticMap {
        StaticMap::from_spec(&MapSpec {
            roads: vec![
                RoadSpec {
                    id: "R".into(),
                    junction: true,
                },
                RoadSpec {
                    id: "S".into(),
                    junction: false,
                },
            ],
            lanes: vec![
                LaneSpec {
                    id: "L".into(),
                    road: "R".into(),
                    length: 100.0,
                    same_direction_lane_count: 1,
                    forward: true,
                    speed_limits: vec![
                        SpeedZone {
                            from: 0.0,
                            to: 40.0,
                            limit: 8.3,
                        },
                        SpeedZone {
                            from: 40.0,
                            to: 100.0,
                            limit: 13.9,
                        },
                    ],
                    successors: vec![],
                    turn: None,
                },
                LaneSpec {
                    id: "M".into(),
                    road: "S".into(),
                    length: 50.0,
                    same_direction_lane_count: 2,
                    forward: true,
                    speed_limits: vec![SpeedZone {
                        from: 0.0,
                        to: 50.0,
                        limit: 13.9,
                    }],
                    successors: vec![],
                    turn: None,
                },
            ],
            ..Default::default()
        })
        .unwrap()
    }

    fn trace(map: &StaticMap) -> TemporalStructure {
        let mut b = TraceBuilder::new(map);
        b.push(
            Time::from_integer(0),
            SceneEnv::default(),
            &[Entity::vehicle("ego", "L", 42.0, 8.2).ego()],
        )
        .unwrap();
        b.build().unwrap()
    }

    /// Scans every zone; independent of the lookup in `StaticMap`.
    fn zone_oracle(zones: &[SpeedZone], p: f64) -> Option<f64> {
        let mut hit = None;
        for (i, z) in zones.iter().enumerate() {
            let last = i + 1 == zones.len();
            if p >= z.from && (p < z.to || (last && p == z.to)) {
                hit = Some(z.limit);
            }
        }
        hit
    }

    #[test]
    fn lane_lookup() {
        let m = map();
        let t = trace(&m);
        let view = SceneView {
            trace: &t,
            map: &m,
            index: 0,
        };
        let ego = Value::Actor(t.actor_id("ego").unwrap());
        assert_eq!(
            interpret(view, "lane", &[ego]).unwrap(),
            Interpretation::Value(Value::Lane(m.lane_id("L").unwrap()))
        );
        assert_eq!(
            interpret(view, "isJunction", &[Value::Road(m.road_id("R").unwrap())]).unwrap(),
            Interpretation::Truth(true)
        );
        assert_eq!(
            interpret(view, "speed", &[ego]).unwrap(),
            Interpretation::Value(Value::num(8.2))
        );
    }

    #[test]
    fn speed_limit_matches_zone_scan() {
        let m = map();
        let t = trace(&m);
        let view = SceneView {
            trace: &t,
            map: &m,
            index: 0,
        };
        let lane = m.lane_id("L").unwrap();
        for p in [0.0, 10.0, 39.999, 40.0, 42.0, 99.0, 100.0] {
            let expected = zone_oracle(&m.lane(lane).speed_zones, p).map(Value::num).unwrap();
            assert_eq!(
                interpret(view, "speedLimitAt", &[Value::num(p), Value::Lane(lane)]).unwrap(),
                Interpretation::Value(expected),
                "position {p}"
            );
        }
        assert_eq!(
            interpret(view, "speedLimitAt", &[Value::num(42.0), Value::Lane(lane)]).unwrap(),
            Interpretation::Value(Value::num(13.9))
        );
        assert_eq!(
            interpret(view, "speedLimitAt", &[Value::num(150.0), Value::Lane(lane)]).unwrap(),
            Interpretation::Value(Value::Undefined)
        );
    }

    #[test]
    fn signature_errors() {
        let m = map();
        let t = trace(&m);
        let view = SceneView {
            trace: &t,
            map: &m,
            index: 0,
        };
        assert!(matches!(
            interpret(view, "teleport", &[]),
            Err(InterpretError::UnknownSymbol(_))
        ));
        assert!(matches!(
            interpret(view, "lane", &[]),
            Err(InterpretError::Arity {
                expected: 1,
                got: 0,
                ..
            })
        ));
        assert!(matches!(
            interpret(view, "lane", &[Value::Actor(ActorId(99))]),
            Err(InterpretError::Dangling("actor"))
        ));
        assert!(matches!(
            interpret(view, "road", &[Value::Lane(LaneId(7))]),
            Err(InterpretError::Dangling("lane"))
        ));
    }

    #[test]
    fn undefined_propagates_to_false() {
        let m = map();
        let t = trace(&m);
        let view = SceneView {
            trace: &t,
            map: &m,
            index: 0,
        };
        let lane = Value::Lane(m.lane_id("L").unwrap());
        assert_eq!(Func::Speed.apply(view, &[lane]), Value::Undefined);
        assert!(!Rel::Eq.holds(view, &[Value::Undefined, Value::Undefined]));
        assert!(!Rel::Neq.holds(view, &[Value::Undefined, lane]));
        assert!(!Rel::Lt.holds(view, &[lane, Value::num(1.0)]));
    }

    #[test]
    fn interpret_is_pure() {
        let m = map();
        let t = trace(&m);
        let view = SceneView {
            trace: &t,
            map: &m,
            index: 0,
        };
        let ego = Value::Actor(ActorId(0));
        let a = interpret(view, "pos", &[ego]).unwrap();
        let b = interpret(view, "pos", &[ego]).unwrap();
        assert_eq!(a, b);
    }
}
