//! Temporal-structure data model: static map, per-scene actor states and
//! timestamped scene sequences.
//!
//! Identifiers are interned. Lanes, roads and landmarks index into the
//! [`StaticMap`]; actors index into the actor universe of a [`Recording`].
//! The universe is fixed for the whole recording, so every scene draws from
//! the same domain. An actor that is not present in a scene has no state
//! there; functions applied to it yield an undefined value.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Timestamp in seconds, kept as an exact rational.
pub type Time = Ratio<i64>;

/// Converts seconds given as `f64` to an exact [`Time`] via its shortest
/// decimal representation, so `0.1` becomes exactly `1/10`.
pub fn time_from_secs(secs: f64) -> Option<Time> {
    if !secs.is_finite() || secs < 0.0 {
        return None;
    }
    parse_decimal(&format!("{secs}"))
}

/// Parses a plain or scientific decimal literal into an exact rational.
pub fn parse_decimal(text: &str) -> Option<Ratio<i64>> {
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(pos) => (&text[..pos], text[pos + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (negative, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa),
    };
    let (int_part, frac_part) = match mantissa.split_once('.') {
        Some((i, f)) => (i, f),
        None => (mantissa, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int_part}{frac_part}");
    let mut numer: i64 = digits.trim_start_matches('0').parse().unwrap_or(0);
    if digits.trim_start_matches('0').len() > 18 {
        return None;
    }
    let scale = exponent - frac_part.len() as i32;
    let mut denom: i64 = 1;
    if scale >= 0 {
        numer = numer.checked_mul(10i64.checked_pow(scale as u32)?)?;
    } else {
        denom = 10i64.checked_pow((-scale) as u32)?;
    }
    if negative {
        numer = -numer;
    }
    Some(Ratio::new(numer, denom))
}

pub fn time_to_secs(t: Time) -> f64 {
    *t.numer() as f64 / *t.denom() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weather {
    Clear,
    Cloudy,
    Wet,
    WetCloudy,
    SoftRain,
    MidRain,
    HardRain,
}

impl Weather {
    pub const ALL: [Weather; 7] = [
        Weather::Clear,
        Weather::Cloudy,
        Weather::Wet,
        Weather::WetCloudy,
        Weather::SoftRain,
        Weather::MidRain,
        Weather::HardRain,
    ];

    /// Constant name used in formulas.
    pub fn constant_name(self) -> &'static str {
        match self {
            Weather::Clear => "Clear",
            Weather::Cloudy => "Cloudy",
            Weather::Wet => "Wet",
            Weather::WetCloudy => "WetCloudy",
            Weather::SoftRain => "SoftRain",
            Weather::MidRain => "MidRain",
            Weather::HardRain => "HardRain",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Daytime {
    Noon,
    Sunset,
}

impl Daytime {
    pub const ALL: [Daytime; 2] = [Daytime::Noon, Daytime::Sunset];

    pub fn constant_name(self) -> &'static str {
        match self {
            Daytime::Noon => "Noon",
            Daytime::Sunset => "Sunset",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorKind {
    Vehicle,
    Pedestrian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LightState {
    Red,
    Yellow,
    Green,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkKind {
    StopSign,
    YieldSign,
    TrafficLight,
}

/// Maneuver performed by a junction connecting lane, derived from the
/// entry and exit arms it links.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Turn {
    Left,
    Right,
    Straight,
}

macro_rules! index_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}

index_id!(RoadId);
index_id!(LaneId);
index_id!(LandmarkId);
index_id!(
    /// Index into the actor universe of a recording.
    ActorId
);

#[derive(Clone, Debug, PartialEq)]
pub struct Road {
    pub name: String,
    pub is_junction: bool,
}

/// Piecewise-constant speed limit over `[from, to)` meters of a lane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedZone {
    pub from: f64,
    pub to: f64,
    pub limit: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lane {
    pub name: String,
    pub road: RoadId,
    pub length: f64,
    pub same_direction_lane_count: u32,
    /// Driving direction relative to the road's reference line.
    pub forward: bool,
    pub speed_zones: Vec<SpeedZone>,
    pub successors: Vec<LaneId>,
    pub turn: Option<Turn>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub name: String,
    pub kind: LandmarkKind,
    pub lane: LaneId,
    pub position: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crosswalk {
    pub lane: LaneId,
    pub position: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("duplicate {what} identifier `{name}`")]
    Duplicate { what: &'static str, name: String },
    #[error("dangling reference: {what} `{name}` does not exist{}", at_scene(*.scene))]
    Dangling {
        what: &'static str,
        name: String,
        scene: Option<usize>,
    },
    #[error("timestamps must be strictly increasing (scene {index})")]
    TimestampRegression { index: usize },
    #[error("a temporal structure needs at least one scene")]
    Empty,
    #[error("invalid timestamp at scene {index}")]
    BadTimestamp { index: usize },
    #[error("scene {index} lists actor `{name}` twice")]
    DuplicateActor { index: usize, name: String },
    #[error("slice {start}..{end} out of range for a trace of length {len}")]
    SliceOutOfRange { start: usize, end: usize, len: usize },
}

fn at_scene(scene: Option<usize>) -> String {
    scene.map(|s| format!(" (scene {s})")).unwrap_or_default()
}

/// Road network with lanes, landmarks and crosswalks.
#[derive(Clone, Debug, Default)]
pub struct StaticMap {
    pub roads: Vec<Road>,
    pub lanes: Vec<Lane>,
    pub landmarks: Vec<Landmark>,
    pub crosswalks: Vec<Crosswalk>,
    road_index: HashMap<String, RoadId>,
    lane_index: HashMap<String, LaneId>,
    landmark_index: HashMap<String, LandmarkId>,
    /// Landmarks grouped per lane, sorted by position.
    lane_landmarks: Vec<Vec<LandmarkId>>,
}

/// Name-based description of a lane used to assemble a [`StaticMap`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneSpec {
    pub id: String,
    pub road: String,
    pub length: f64,
    pub same_direction_lane_count: u32,
    #[serde(default = "default_true")]
    pub forward: bool,
    pub speed_limits: Vec<SpeedZone>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub successors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<Turn>,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub id: String,
    #[serde(default)]
    pub junction: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSpec {
    pub id: String,
    pub kind: LandmarkKind,
    pub lane: String,
    pub position: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrosswalkSpec {
    pub lane: String,
    pub position: f64,
}

/// Name-based map description; the serialized form of a [`StaticMap`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    pub roads: Vec<RoadSpec>,
    pub lanes: Vec<LaneSpec>,
    #[serde(default)]
    pub landmarks: Vec<LandmarkSpec>,
    #[serde(default)]
    pub crosswalks: Vec<CrosswalkSpec>,
}

impl StaticMap {
    /// Resolves all names. Value-level invariants (lengths, zone coverage)
    /// are reported by [`validate_map`] instead.
    pub fn from_spec(spec: &MapSpec) -> Result<Self, ModelError> {
        let mut map = StaticMap::default();
        for road in &spec.roads {
            let id = RoadId(map.roads.len() as u32);
            if map.road_index.insert(road.id.clone(), id).is_some() {
                return Err(ModelError::Duplicate {
                    what: "road",
                    name: road.id.clone(),
                });
            }
            map.roads.push(Road {
                name: road.id.clone(),
                is_junction: road.junction,
            });
        }
        for lane in &spec.lanes {
            let id = LaneId(map.lane_index.len() as u32);
            if map.lane_index.insert(lane.id.clone(), id).is_some() {
                return Err(ModelError::Duplicate {
                    what: "lane",
                    name: lane.id.clone(),
                });
            }
        }
        for lane in &spec.lanes {
            let road = map.road_id(&lane.road).ok_or_else(|| ModelError::Dangling {
                what: "road",
                name: lane.road.clone(),
                scene: None,
            })?;
            let successors = lane
                .successors
                .iter()
                .map(|s| map.lane_ref(s, None))
                .collect::<Result<Vec<_>, _>>()?;
            map.lanes.push(Lane {
                name: lane.id.clone(),
                road,
                length: lane.length,
                same_direction_lane_count: lane.same_direction_lane_count,
                forward: lane.forward,
                speed_zones: lane.speed_limits.clone(),
                successors,
                turn: lane.turn,
            });
        }
        map.lane_landmarks = vec![Vec::new(); map.lanes.len()];
        for mark in &spec.landmarks {
            let id = LandmarkId(map.landmarks.len() as u32);
            if map.landmark_index.insert(mark.id.clone(), id).is_some() {
                return Err(ModelError::Duplicate {
                    what: "landmark",
                    name: mark.id.clone(),
                });
            }
            let lane = map.lane_ref(&mark.lane, None)?;
            map.landmarks.push(Landmark {
                name: mark.id.clone(),
                kind: mark.kind,
                lane,
                position: mark.position,
            });
            map.lane_landmarks[lane.index()].push(id);
        }
        for per_lane in &mut map.lane_landmarks {
            per_lane.sort_by(|a, b| {
                map.landmarks[a.index()]
                    .position
                    .total_cmp(&map.landmarks[b.index()].position)
            });
        }
        for cw in &spec.crosswalks {
            let lane = map.lane_ref(&cw.lane, None)?;
            map.crosswalks.push(Crosswalk {
                lane,
                position: cw.position,
            });
        }
        Ok(map)
    }

    pub fn to_spec(&self) -> MapSpec {
        MapSpec {
            roads: self
                .roads
                .iter()
                .map(|r| RoadSpec {
                    id: r.name.clone(),
                    junction: r.is_junction,
                })
                .collect(),
            lanes: self
                .lanes
                .iter()
                .map(|l| LaneSpec {
                    id: l.name.clone(),
                    road: self.road(l.road).name.clone(),
                    length: l.length,
                    same_direction_lane_count: l.same_direction_lane_count,
                    forward: l.forward,
                    speed_limits: l.speed_zones.clone(),
                    successors: l.successors.iter().map(|s| self.lane(*s).name.clone()).collect(),
                    turn: l.turn,
                })
                .collect(),
            landmarks: self
                .landmarks
                .iter()
                .map(|m| LandmarkSpec {
                    id: m.name.clone(),
                    kind: m.kind,
                    lane: self.lane(m.lane).name.clone(),
                    position: m.position,
                })
                .collect(),
            crosswalks: self
                .crosswalks
                .iter()
                .map(|c| CrosswalkSpec {
                    lane: self.lane(c.lane).name.clone(),
                    position: c.position,
                })
                .collect(),
        }
    }

    fn lane_ref(&self, name: &str, scene: Option<usize>) -> Result<LaneId, ModelError> {
        self.lane_id(name).ok_or_else(|| ModelError::Dangling {
            what: "lane",
            name: name.to_owned(),
            scene,
        })
    }

    pub fn road_id(&self, name: &str) -> Option<RoadId> {
        self.road_index.get(name).copied()
    }

    pub fn lane_id(&self, name: &str) -> Option<LaneId> {
        self.lane_index.get(name).copied()
    }

    pub fn landmark_id(&self, name: &str) -> Option<LandmarkId> {
        self.landmark_index.get(name).copied()
    }

    pub fn road(&self, id: RoadId) -> &Road {
        &self.roads[id.index()]
    }

    pub fn lane(&self, id: LaneId) -> &Lane {
        &self.lanes[id.index()]
    }

    pub fn landmark(&self, id: LandmarkId) -> &Landmark {
        &self.landmarks[id.index()]
    }

    pub fn has_lane(&self, id: LaneId) -> bool {
        id.index() < self.lanes.len()
    }

    pub fn has_road(&self, id: RoadId) -> bool {
        id.index() < self.roads.len()
    }

    pub fn lane_ids(&self) -> impl Iterator<Item = LaneId> {
        (0..self.lanes.len() as u32).map(LaneId)
    }

    pub fn road_ids(&self) -> impl Iterator<Item = RoadId> {
        (0..self.roads.len() as u32).map(RoadId)
    }

    /// Landmarks on `lane`, ordered by position.
    pub fn landmarks_on(&self, lane: LaneId) -> impl Iterator<Item = (LandmarkId, &Landmark)> {
        self.lane_landmarks[lane.index()]
            .iter()
            .map(move |id| (*id, &self.landmarks[id.index()]))
    }

    /// Speed limit of the zone containing `position`. Zones are half-open
    /// except that the last zone also contains the lane end.
    pub fn speed_limit_at(&self, lane: LaneId, position: f64) -> Option<f64> {
        let lane = self.lane(lane);
        let last = lane.speed_zones.len().checked_sub(1)?;
        lane.speed_zones
            .iter()
            .enumerate()
            .find(|(i, z)| z.from <= position && (position < z.to || (*i == last && position <= z.to)))
            .map(|(_, z)| z.limit)
    }
}

/// Named actor state, the construction-side view of one entity in a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Entity {
    pub id: String,
    pub kind: ActorKind,
    pub is_ego: bool,
    pub lane: String,
    pub position: f64,
    pub speed: f64,
}

impl Entity {
    pub fn vehicle(id: &str, lane: &str, position: f64, speed: f64) -> Self {
        Entity {
            id: id.to_owned(),
            kind: ActorKind::Vehicle,
            is_ego: false,
            lane: lane.to_owned(),
            position,
            speed,
        }
    }

    pub fn pedestrian(id: &str, lane: &str, position: f64) -> Self {
        Entity {
            id: id.to_owned(),
            kind: ActorKind::Pedestrian,
            is_ego: false,
            lane: lane.to_owned(),
            position,
            speed: 0.0,
        }
    }

    pub fn ego(mut self) -> Self {
        self.is_ego = true;
        self
    }
}

/// Interned state of one actor in one scene.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActorState {
    pub kind: ActorKind,
    pub is_ego: bool,
    pub lane: LaneId,
    pub position: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// Indexed by [`ActorId`]; `None` when the actor is absent.
    pub actors: Vec<Option<ActorState>>,
    pub weather: Weather,
    pub daytime: Daytime,
    pub traffic_density_hint: Option<u32>,
    pub lights: BTreeMap<LandmarkId, LightState>,
}

impl Scene {
    pub fn actor(&self, id: ActorId) -> Option<&ActorState> {
        self.actors.get(id.index()).and_then(Option::as_ref)
    }

    pub fn present(&self) -> impl Iterator<Item = (ActorId, &ActorState)> {
        self.actors
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|s| (ActorId(i as u32), s)))
    }
}

/// Environment attributes of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneEnv {
    pub weather: Weather,
    pub daytime: Daytime,
    pub traffic_density_hint: Option<u32>,
    pub lights: Vec<(String, LightState)>,
}

impl Default for SceneEnv {
    fn default() -> Self {
        SceneEnv {
            weather: Weather::Clear,
            daytime: Daytime::Noon,
            traffic_density_hint: None,
            lights: Vec::new(),
        }
    }
}

/// Immutable scene storage shared by all views of one recorded run.
#[derive(Debug)]
pub struct Recording {
    actor_names: Vec<String>,
    actor_kinds: Vec<ActorKind>,
    actor_index: HashMap<String, ActorId>,
    scenes: Vec<Scene>,
    times: Vec<Time>,
}

/// A finite timestamped scene sequence: a window onto a shared
/// [`Recording`], optionally with the ego role reassigned to one actor.
///
/// Cloning and slicing are cheap.
#[derive(Clone, Debug)]
pub struct TemporalStructure {
    data: Arc<Recording>,
    start: usize,
    len: usize,
    ego: Option<ActorId>,
}

/// Assembles a [`TemporalStructure`] from named entities.
pub struct TraceBuilder<'m> {
    map: &'m StaticMap,
    actor_names: Vec<String>,
    actor_kinds: Vec<ActorKind>,
    actor_index: HashMap<String, ActorId>,
    scenes: Vec<Scene>,
    times: Vec<Time>,
}

impl<'m> TraceBuilder<'m> {
    pub fn new(map: &'m StaticMap) -> Self {
        TraceBuilder {
            map,
            actor_names: Vec::new(),
            actor_kinds: Vec::new(),
            actor_index: HashMap::new(),
            scenes: Vec::new(),
            times: Vec::new(),
        }
    }

    /// Pre-registers actors so their ids follow the given order.
    pub fn declare(&mut self, id: &str, kind: ActorKind) -> ActorId {
        if let Some(existing) = self.actor_index.get(id) {
            return *existing;
        }
        let actor = ActorId(self.actor_names.len() as u32);
        self.actor_names.push(id.to_owned());
        self.actor_kinds.push(kind);
        self.actor_index.insert(id.to_owned(), actor);
        actor
    }

    pub fn push(&mut self, time: Time, env: SceneEnv, entities: &[Entity]) -> Result<&mut Self, ModelError> {
        let index = self.scenes.len();
        if let Some(last) = self.times.last() {
            if time <= *last {
                return Err(ModelError::TimestampRegression { index });
            }
        }
        if time < Time::from_integer(0) {
            return Err(ModelError::BadTimestamp { index });
        }
        let mut states: Vec<(ActorId, ActorState)> = Vec::with_capacity(entities.len());
        for e in entities {
            let lane = self.map.lane_ref(&e.lane, Some(index))?;
            let actor = self.declare(&e.id, e.kind);
            if states.iter().any(|(a, _)| *a == actor) {
                return Err(ModelError::DuplicateActor {
                    index,
                    name: e.id.clone(),
                });
            }
            states.push((
                actor,
                ActorState {
                    kind: e.kind,
                    is_ego: e.is_ego,
                    lane,
                    position: e.position,
                    speed: e.speed,
                },
            ));
        }
        let mut lights = BTreeMap::new();
        for (name, state) in &env.lights {
            let id = self.map.landmark_id(name).ok_or_else(|| ModelError::Dangling {
                what: "landmark",
                name: name.clone(),
                scene: Some(index),
            })?;
            lights.insert(id, *state);
        }
        let mut actors = vec![None; self.actor_names.len()];
        for (a, s) in states {
            actors[a.index()] = Some(s);
        }
        self.scenes.push(Scene {
            actors,
            weather: env.weather,
            daytime: env.daytime,
            traffic_density_hint: env.traffic_density_hint,
            lights,
        });
        self.times.push(time);
        Ok(self)
    }

    pub fn build(self) -> Result<TemporalStructure, ModelError> {
        if self.scenes.is_empty() {
            return Err(ModelError::Empty);
        }
        let universe = self.actor_names.len();
        let mut scenes = self.scenes;
        for s in &mut scenes {
            s.actors.resize(universe, None);
        }
        let len = scenes.len();
        Ok(TemporalStructure {
            data: Arc::new(Recording {
                actor_names: self.actor_names,
                actor_kinds: self.actor_kinds,
                actor_index: self.actor_index,
                scenes,
                times: self.times,
            }),
            start: 0,
            len,
            ego: None,
        })
    }
}

impl TemporalStructure {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn time(&self, i: usize) -> Time {
        self.data.times[self.start + i]
    }

    pub fn scene(&self, i: usize) -> &Scene {
        &self.data.scenes[self.start + i]
    }

    pub fn scenes(&self) -> &[Scene] {
        &self.data.scenes[self.start..self.start + self.len]
    }

    pub fn times(&self) -> &[Time] {
        &self.data.times[self.start..self.start + self.len]
    }

    /// Position of this window inside the underlying recording.
    pub fn span(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    pub fn actor_count(&self) -> usize {
        self.data.actor_names.len()
    }

    pub fn actor_ids(&self) -> impl Iterator<Item = ActorId> {
        (0..self.data.actor_names.len() as u32).map(ActorId)
    }

    pub fn actor_name(&self, id: ActorId) -> &str {
        &self.data.actor_names[id.index()]
    }

    pub fn actor_id(&self, name: &str) -> Option<ActorId> {
        self.data.actor_index.get(name).copied()
    }

    /// Kind under which the actor was first declared.
    pub fn actor_kind(&self, id: ActorId) -> ActorKind {
        self.data.actor_kinds[id.index()]
    }

    pub fn has_actor(&self, id: ActorId) -> bool {
        id.index() < self.data.actor_names.len()
    }

    pub fn ego_override(&self) -> Option<ActorId> {
        self.ego
    }

    /// Ego flag of `actor` in scene `i`, honoring a reassigned ego.
    pub fn is_ego(&self, i: usize, actor: ActorId) -> bool {
        match self.scene(i).actor(actor) {
            None => false,
            Some(state) => match self.ego {
                Some(ego) => ego == actor,
                None => state.is_ego,
            },
        }
    }

    pub fn egos_at(&self, i: usize) -> Vec<ActorId> {
        self.scene(i)
            .present()
            .filter(|(a, _)| self.is_ego(i, *a))
            .map(|(a, _)| a)
            .collect()
    }

    /// Sub-window `range` (relative to this window).
    pub fn slice(&self, range: Range<usize>) -> Result<TemporalStructure, ModelError> {
        if range.start >= range.end || range.end > self.len {
            return Err(ModelError::SliceOutOfRange {
                start: range.start,
                end: range.end,
                len: self.len,
            });
        }
        Ok(TemporalStructure {
            data: Arc::clone(&self.data),
            start: self.start + range.start,
            len: range.end - range.start,
            ego: self.ego,
        })
    }

    /// Same scenes with the ego role given to `actor` only.
    pub fn with_ego(&self, actor: ActorId) -> TemporalStructure {
        TemporalStructure {
            ego: Some(actor),
            ..self.clone()
        }
    }

    /// Named entity list of scene `i` (ego flags as seen through this view).
    pub fn entities(&self, i: usize, map: &StaticMap) -> Vec<Entity> {
        self.scene(i)
            .present()
            .map(|(a, s)| Entity {
                id: self.actor_name(a).to_owned(),
                kind: s.kind,
                is_ego: self.is_ego(i, a),
                lane: map.lane(s.lane).name.clone(),
                position: s.position,
                speed: s.speed,
            })
            .collect()
    }
}

/// A contiguous part of a recorded run, seen from one ego vehicle.
#[derive(Clone, Debug)]
pub struct Segment {
    pub trace: TemporalStructure,
    pub map: Arc<StaticMap>,
    pub run_id: String,
    pub ego: String,
    /// Road the ego drives on throughout the segment.
    pub road: String,
    /// Position of the first scene in the source run.
    pub start: usize,
}

/// Which data-sanity rule a [`Violation`] breaks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    UniqueEgo,
    EgoIsVehicle,
    PositionWithinLane,
    KindConstant,
    LaneLengthPositive,
    SpeedZonesCover,
    LandmarkWithinLane,
    LightIsTrafficLight,
    NonNegativeSpeed,
    DanglingReference,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok();
        let name = s.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
        f.write_str(name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Scene index relative to the validated window; `None` for map rules.
    pub index: Option<usize>,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(f, "scene {i}: {}: {}", self.rule, self.message),
            None => write!(f, "map: {}: {}", self.rule, self.message),
        }
    }
}

const EPS: f64 = 1e-9;

/// Map-level invariants: positive lane lengths and gap-free,
/// non-overlapping speed zones over `[0, length]`.
pub fn validate_map(map: &StaticMap) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |rule, message: String| {
        out.push(Violation {
            index: None,
            rule,
            message,
        })
    };
    for lane in &map.lanes {
        if lane.length.is_nan() || lane.length <= 0.0 {
            push(
                Rule::LaneLengthPositive,
                format!("lane `{}` has length {}", lane.name, lane.length),
            );
            continue;
        }
        let zones = &lane.speed_zones;
        let mut cursor = 0.0;
        let mut ok = !zones.is_empty();
        for z in zones {
            if (z.from - cursor).abs() > EPS || z.to.is_nan() || z.to <= z.from || z.limit.is_nan() || z.limit <= 0.0 {
                ok = false;
                break;
            }
            cursor = z.to;
        }
        if !ok || (cursor - lane.length).abs() > EPS {
            push(
                Rule::SpeedZonesCover,
                format!("speed zones of lane `{}` do not tile [0, {}]", lane.name, lane.length),
            );
        }
    }
    for mark in &map.landmarks {
        let lane = map.lane(mark.lane);
        if mark.position < 0.0 || mark.position > lane.length + EPS {
            push(
                Rule::LandmarkWithinLane,
                format!(
                    "landmark `{}` at {} outside lane `{}`",
                    mark.name, mark.position, lane.name
                ),
            );
        }
    }
    out
}
