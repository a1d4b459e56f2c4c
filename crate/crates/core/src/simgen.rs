//! Seeded synthetic maps and traffic.
//!
//! Maps are junction graphs: every junction has three or four arms, roads
//! join arms with one or two lanes per direction, and each junction holds a
//! connecting lane from every incoming lane to every other arm. Vehicles
//! move along lanes in one dimension with simple car following, stop at red
//! lights and stop signs, yield at yield signs and before left turns, and
//! change lanes now and then. Pedestrians cross the road at crosswalks.
//!
//! Every run draws from its own ChaCha stream selected by `(seed, run)`, so
//! runs can be generated in any order or in parallel with identical output.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, EntityRecord, IngestError, Run, Tick};
use crate::scene::{
    time_from_secs, time_to_secs, ActorKind, CrosswalkSpec, Daytime, LandmarkKind, LandmarkSpec, LaneSpec, LightState,
    MapSpec, RoadSpec, SpeedZone, Time, Turn, Weather,
};

pub const MAX_VEHICLES: u32 = 200;
pub const MAX_PEDESTRIANS: u32 = 30;

const URBAN_LIMIT: f64 = 13.9;
const SLOW_ZONE_LIMIT: f64 = 8.3;
const JUNCTION_LIMIT: f64 = 5.0;
const ACCEL: f64 = 2.0;
const HEADWAY: f64 = 1.5;
const STANDSTILL_GAP: f64 = 7.0;
const LIGHT_CYCLE: f64 = 28.0;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("generated run does not load: {0}")]
    Ingest(#[from] IngestError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
}

impl<T: PartialOrd + Copy> Range<T> {
    fn check(&self, what: &str) -> Result<(), GenError> {
        if self.min > self.max {
            return Err(GenError::Config(format!("{what}: min exceeds max")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Zero gives a ring of roads without junctions.
    pub junctions: u32,
    pub four_way_share: f64,
    pub multi_lane_share: f64,
    pub road_length: Range<f64>,
    /// Chance that a junction is signalized.
    pub light_probability: f64,
    /// Chances for a stop or yield sign on an unsignalized single-lane arm.
    pub stop_probability: f64,
    pub yield_probability: f64,
    pub slow_zone_probability: f64,
    pub crosswalk_probability: f64,
    pub junction_crosswalk_probability: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            junctions: 4,
            four_way_share: 0.5,
            multi_lane_share: 0.5,
            road_length: Range { min: 80.0, max: 160.0 },
            light_probability: 0.4,
            stop_probability: 0.35,
            yield_probability: 0.35,
            slow_zone_probability: 0.2,
            crosswalk_probability: 0.4,
            junction_crosswalk_probability: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorConfig {
    /// Spontaneous lane changes per second on multi-lane roads.
    pub lane_change_rate: f64,
    /// Share of vehicles that overtake slower leaders.
    pub overtaker_share: f64,
    /// Share of vehicles driving well below the limit.
    pub slow_share: f64,
    pub pedestrian_idle_secs: Range<f64>,
    pub crossing_secs_per_lane: f64,
    /// Forces the ego to change lanes at the first chance after this time.
    pub ego_lane_change_at: Option<f64>,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        BehaviorConfig {
            lane_change_rate: 0.03,
            overtaker_share: 0.05,
            slow_share: 0.2,
            pedestrian_idle_secs: Range { min: 5.0, max: 40.0 },
            crossing_secs_per_lane: 3.0,
            ego_lane_change_at: None,
        }
    }
}

/// Scripted scenes replacing the random setup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Random,
    /// Ego stops at a stop sign, waits for a crossing car, turns left at a
    /// T-junction and stops for a pedestrian on its destination crosswalk.
    JunctionLeftTurn,
    /// Ego passes a slow car on a two-lane road and returns to its lane.
    Overtaking,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub duration_secs: f64,
    pub tick_secs: f64,
    pub vehicles: Range<u32>,
    pub pedestrians: Range<u32>,
    pub scenario: Scenario,
    pub map: MapConfig,
    pub behavior: BehaviorConfig,
    pub weather: BTreeMap<Weather, f64>,
    pub daytime: BTreeMap<Daytime, f64>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 1,
            duration_secs: 300.0,
            tick_secs: 0.5,
            vehicles: Range { min: 3, max: 20 },
            pedestrians: Range { min: 0, max: 12 },
            scenario: Scenario::Random,
            map: MapConfig::default(),
            behavior: BehaviorConfig::default(),
            weather: Weather::ALL.iter().map(|w| (*w, 1.0)).collect(),
            daytime: Daytime::ALL.iter().map(|d| (*d, 1.0)).collect(),
        }
    }
}

impl GenConfig {
    pub fn from_toml(text: &str) -> Result<GenConfig, GenError> {
        let cfg: GenConfig = toml::from_str(text).map_err(|e| GenError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Config(m.to_owned()));
        if !(self.duration_secs > 0.0 && self.duration_secs.is_finite()) {
            return bad("duration_secs must be positive");
        }
        if time_from_secs(self.tick_secs).is_none_or(|t| t <= Time::from_integer(0)) {
            return bad("tick_secs must be a positive decimal");
        }
        self.vehicles.check("vehicles")?;
        self.pedestrians.check("pedestrians")?;
        if self.vehicles.min == 0 {
            return bad("at least one vehicle is needed");
        }
        if self.vehicles.max > MAX_VEHICLES {
            return bad("at most 200 vehicles");
        }
        if self.pedestrians.max > MAX_PEDESTRIANS {
            return bad("at most 30 pedestrians");
        }
        let m = &self.map;
        m.road_length.check("road_length")?;
        if m.road_length.min < 40.0 {
            return bad("roads must be at least 40 m long");
        }
        for (name, p) in [
            ("four_way_share", m.four_way_share),
            ("multi_lane_share", m.multi_lane_share),
            ("light_probability", m.light_probability),
            ("stop_probability", m.stop_probability),
            ("yield_probability", m.yield_probability),
            ("slow_zone_probability", m.slow_zone_probability),
            ("crosswalk_probability", m.crosswalk_probability),
            ("junction_crosswalk_probability", m.junction_crosswalk_probability),
            ("overtaker_share", self.behavior.overtaker_share),
            ("slow_share", self.behavior.slow_share),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(GenError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if m.stop_probability + m.yield_probability > 1.0 {
            return bad("stop_probability + yield_probability exceeds 1");
        }
        if m.junctions > 64 {
            return bad("at most 64 junctions");
        }
        let b = &self.behavior;
        b.pedestrian_idle_secs.check("pedestrian_idle_secs")?;
        if b.lane_change_rate < 0.0 || b.crossing_secs_per_lane <= 0.0 || b.pedestrian_idle_secs.min < 0.0 {
            return bad("behavior rates and durations must be positive");
        }
        for (what, total) in [
            ("weather", self.weather.values().sum::<f64>()),
            ("daytime", self.daytime.values().sum::<f64>()),
        ] {
            if total <= 0.0 || !total.is_finite() {
                return Err(GenError::Config(format!("{what} weights must have a positive sum")));
            }
        }
        if self.weather.values().chain(self.daytime.values()).any(|w| *w < 0.0) {
            return bad("weights must not be negative");
        }
        Ok(())
    }
}

/// Named configuration overrides.
pub const TEMPLATES: &[&str] = &[
    "base",
    "junction-left-turn-with-oncoming-and-pedestrian",
    "forced-lane-change",
    "overtaking",
    "no-pedestrians",
    "dense-traffic",
    "rainy-sunset",
];

/// Applies the overrides of a named template.
pub fn apply_template(cfg: &mut GenConfig, name: &str) -> Result<(), GenError> {
    match name {
        "base" => {}
        "junction-left-turn-with-oncoming-and-pedestrian" => {
            cfg.scenario = Scenario::JunctionLeftTurn;
            cfg.duration_secs = 30.0;
            cfg.weather = [(Weather::Clear, 1.0)].into();
            cfg.daytime = [(Daytime::Noon, 1.0)].into();
        }
        "forced-lane-change" => {
            cfg.map.junctions = 0;
            cfg.map.multi_lane_share = 1.0;
            cfg.behavior.ego_lane_change_at = Some(3.0);
            cfg.duration_secs = cfg.duration_secs.min(60.0);
        }
        "overtaking" => {
            cfg.scenario = Scenario::Overtaking;
            cfg.duration_secs = 30.0;
        }
        "no-pedestrians" => {
            cfg.pedestrians = Range { min: 0, max: 0 };
        }
        "dense-traffic" => {
            cfg.vehicles = Range { min: 13, max: 20 };
        }
        "rainy-sunset" => {
            cfg.weather = [(Weather::MidRain, 1.0), (Weather::HardRain, 1.0)].into();
            cfg.daytime = [(Daytime::Sunset, 1.0)].into();
        }
        other => return Err(GenError::UnknownTemplate(other.to_owned())),
    }
    Ok(())
}

/// Random stream of one run.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Control {
    None,
    Stop,
    Yield,
    /// Index into the signal table.
    Light(usize),
}

#[derive(Clone, Debug)]
struct Signal {
    landmark: String,
    group: u32,
    offset: f64,
}

impl Signal {
    fn state(&self, t: f64) -> LightState {
        let phase = (t + self.offset + f64::from(self.group) * LIGHT_CYCLE / 2.0).rem_euclid(LIGHT_CYCLE);
        if phase < 12.0 {
            LightState::Green
        } else if phase < 14.0 {
            LightState::Yellow
        } else {
            LightState::Red
        }
    }
}

#[derive(Clone, Debug)]
struct NetLane {
    length: f64,
    zones: Vec<SpeedZone>,
    successors: Vec<usize>,
    /// Same-direction lanes of the same road, for lane changes.
    neighbors: Vec<usize>,
    /// Junction this lane lies in.
    junction: Option<usize>,
    /// Junction this lane leads into, with its control.
    leads_to: Option<(usize, Control)>,
    turn: Option<Turn>,
}

impl NetLane {
    fn limit_at(&self, pos: f64) -> f64 {
        self.zones
            .iter()
            .find(|z| z.from <= pos && pos < z.to)
            .or(self.zones.last())
            .map_or(URBAN_LIMIT, |z| z.limit)
    }
}

/// Places where pedestrians cross: lanes in crossing order with the
/// crossing position on each.
type Crossing = Vec<(usize, f64)>;

/// A generated map with the traffic-control data the simulator needs.
#[derive(Clone, Debug)]
pub struct GeneratedMap {
    pub spec: MapSpec,
    lanes: Vec<NetLane>,
    signals: Vec<Signal>,
    crossings: Vec<Crossing>,
}

impl GeneratedMap {
    fn lane_index(&self, name: &str) -> usize {
        self.spec.lanes.iter().position(|l| l.id == name).expect("lane exists")
    }
}

/// Assembles lanes, landmarks and crosswalks while keeping the simulator's
/// view in sync with the map description.
#[derive(Default)]
struct MapBuilder {
    spec: MapSpec,
    lanes: Vec<NetLane>,
    signals: Vec<Signal>,
    crossings: Vec<Crossing>,
}

impl MapBuilder {
    fn road(&mut self, id: String, junction: bool) {
        self.spec.roads.push(RoadSpec { id, junction });
    }

    #[allow(clippy::too_many_arguments)]
    fn lane(
        &mut self,
        id: String,
        road: &str,
        length: f64,
        count: u32,
        forward: bool,
        zones: Vec<SpeedZone>,
        junction: Option<usize>,
        turn: Option<Turn>,
    ) -> usize {
        self.spec.lanes.push(LaneSpec {
            id,
            road: road.to_owned(),
            length,
            same_direction_lane_count: count,
            forward,
            speed_limits: zones.clone(),
            successors: Vec::new(),
            turn,
        });
        self.lanes.push(NetLane {
            length,
            zones,
            successors: Vec::new(),
            neighbors: Vec::new(),
            junction,
            leads_to: None,
            turn,
        });
        self.lanes.len() - 1
    }

    fn connect(&mut self, from: usize, to: usize) {
        self.lanes[from].successors.push(to);
        let name = self.spec.lanes[to].id.clone();
        self.spec.lanes[from].successors.push(name);
    }

    fn landmark(&mut self, lane: usize, kind: LandmarkKind) -> String {
        let prefix = match kind {
            LandmarkKind::StopSign => "stop",
            LandmarkKind::YieldSign => "yield",
            LandmarkKind::TrafficLight => "light",
        };
        let name = format!("{prefix}-{}", self.spec.lanes[lane].id);
        self.spec.landmarks.push(LandmarkSpec {
            id: name.clone(),
            kind,
            lane: self.spec.lanes[lane].id.clone(),
            position: self.lanes[lane].length - 1.0,
        });
        name
    }

    fn crossing(&mut self, sites: Crossing) {
        for (lane, pos) in &sites {
            self.spec.crosswalks.push(CrosswalkSpec {
                lane: self.spec.lanes[*lane].id.clone(),
                position: *pos,
            });
        }
        self.crossings.push(sites);
    }

    fn finish(self) -> GeneratedMap {
        GeneratedMap {
            spec: self.spec,
            lanes: self.lanes,
            signals: self.signals,
            crossings: self.crossings,
        }
    }
}

fn arm_angle(slot: u32) -> u32 {
    slot * 90
}

/// Turn from entering through arm `a` to leaving through arm `b`.
fn turn_between(a: u32, b: u32) -> Turn {
    let heading_in = (arm_angle(a) + 180) % 360;
    match (arm_angle(b) + 360 - heading_in) % 360 {
        0 => Turn::Straight,
        90 => Turn::Left,
        _ => Turn::Right,
    }
}

fn turn_length(turn: Turn) -> f64 {
    match turn {
        Turn::Right => 28.0,
        Turn::Straight => 34.0,
        Turn::Left => 40.0,
    }
}

fn zones(rng: &mut ChaCha8Rng, length: f64, slow_p: f64) -> Vec<SpeedZone> {
    if rng.random_bool(slow_p) {
        let a = (length * rng.random_range(0.2..0.4)).round();
        let b = (length * rng.random_range(0.6..0.8)).round();
        vec![
            SpeedZone {
                from: 0.0,
                to: a,
                limit: URBAN_LIMIT,
            },
            SpeedZone {
                from: a,
                to: b,
                limit: SLOW_ZONE_LIMIT,
            },
            SpeedZone {
                from: b,
                to: length,
                limit: URBAN_LIMIT,
            },
        ]
    } else {
        vec![SpeedZone {
            from: 0.0,
            to: length,
            limit: URBAN_LIMIT,
        }]
    }
}

/// One road between two junction arms; lanes run forward from `a` to `b`.
struct RoadPlan {
    a: Option<(usize, u32)>,
    b: Option<(usize, u32)>,
    per_direction: u32,
    forward: Vec<usize>,
    backward: Vec<usize>,
    length: f64,
}

fn build_road(mb: &mut MapBuilder, rng: &mut ChaCha8Rng, cfg: &MapConfig, index: usize, plan: &mut RoadPlan) {
    let name = format!("r{index}");
    mb.road(name.clone(), false);
    let length = rng
        .random_range(cfg.road_length.min..=cfg.road_length.max)
        .round()
        .clamp(cfg.road_length.min, cfg.road_length.max);
    plan.length = length;
    let n = plan.per_direction;
    for k in 0..n {
        let z = zones(rng, length, cfg.slow_zone_probability);
        plan.forward
            .push(mb.lane(format!("{name}-f{k}"), &name, length, n, true, z, None, None));
    }
    for k in 0..n {
        let z = zones(rng, length, cfg.slow_zone_probability);
        plan.backward
            .push(mb.lane(format!("{name}-b{k}"), &name, length, n, false, z, None, None));
    }
    for group in [plan.forward.clone(), plan.backward.clone()] {
        for &l in &group {
            mb.lanes[l].neighbors = group.iter().copied().filter(|x| *x != l).collect();
        }
    }
    if rng.random_bool(cfg.crosswalk_probability) {
        let x = (length * rng.random_range(0.3..0.7)).round();
        let mut site: Crossing = plan.forward.iter().map(|l| (*l, x)).collect();
        site.extend(plan.backward.iter().rev().map(|l| (*l, length - x)));
        mb.crossing(site);
    }
}

/// Lanes of road `r` entering (or leaving) junction arm `end`.
fn lanes_at(plan: &RoadPlan, end: (usize, u32), entering: bool) -> Vec<usize> {
    // Forward lanes end at `b` and start at `a`.
    let mut out = Vec::new();
    if plan.b == Some(end) {
        out.extend(if entering { &plan.forward } else { &plan.backward });
    }
    if plan.a == Some(end) {
        out.extend(if entering { &plan.backward } else { &plan.forward });
    }
    out
}

/// Draws a map for `cfg`.
pub fn generate_map(cfg: &MapConfig, rng: &mut ChaCha8Rng) -> Result<GeneratedMap, GenError> {
    let mut mb = MapBuilder::default();
    if cfg.junctions == 0 {
        ring_map(&mut mb, cfg, rng);
        return Ok(mb.finish());
    }
    let j = cfg.junctions as usize;
    let mut degree: Vec<u32> = (0..j)
        .map(|_| if rng.random_bool(cfg.four_way_share) { 4 } else { 3 })
        .collect();
    if degree.iter().sum::<u32>() % 2 == 1 {
        degree[0] = 7 - degree[0];
    }
    // Free arms per junction; a T-junction uses arms 0, 1 and 2.
    let mut free: Vec<Vec<u32>> = degree.iter().map(|d| (0..*d).collect()).collect();
    let mut pairs: Vec<((usize, u32), (usize, u32))> = Vec::new();
    if j > 1 {
        for i in 0..j {
            let next = (i + 1) % j;
            let ka = rng.random_range(0..free[i].len());
            let a = free[i].remove(ka);
            let kb = rng.random_range(0..free[next].len());
            let b = free[next].remove(kb);
            pairs.push(((i, a), (next, b)));
        }
    }
    let mut rest: Vec<(usize, u32)> = free
        .iter()
        .enumerate()
        .flat_map(|(i, arms)| arms.iter().map(move |a| (i, *a)))
        .collect();
    // Fisher-Yates through the seeded stream.
    for k in (1..rest.len()).rev() {
        let m = rng.random_range(0..=k);
        rest.swap(k, m);
    }
    for chunk in rest.chunks(2) {
        pairs.push((chunk[0], chunk[1]));
    }
    let mut plans: Vec<RoadPlan> = Vec::new();
    for (k, (a, b)) in pairs.into_iter().enumerate() {
        let mut plan = RoadPlan {
            a: Some(a),
            b: Some(b),
            per_direction: if rng.random_bool(cfg.multi_lane_share) { 2 } else { 1 },
            forward: Vec::new(),
            backward: Vec::new(),
            length: 0.0,
        };
        build_road(&mut mb, rng, cfg, k, &mut plan);
        plans.push(plan);
    }
    for (ji, deg) in degree.iter().enumerate() {
        build_junction(&mut mb, rng, cfg, ji, *deg, &plans);
    }
    Ok(mb.finish())
}

fn build_junction(
    mb: &mut MapBuilder,
    rng: &mut ChaCha8Rng,
    cfg: &MapConfig,
    ji: usize,
    degree: u32,
    plans: &[RoadPlan],
) {
    let road = format!("j{ji}");
    mb.road(road.clone(), true);
    let signalized = rng.random_bool(cfg.light_probability);
    let offset = rng.random_range(0.0..LIGHT_CYCLE).round();
    let arms: Vec<u32> = (0..degree).collect();
    let mut exits_into: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for &a in &arms {
        for plan in plans {
            let incoming = lanes_at(plan, (ji, a), true);
            for (k, &lane) in incoming.iter().enumerate() {
                let control = if signalized {
                    let name = mb.landmark(lane, LandmarkKind::TrafficLight);
                    mb.signals.push(Signal {
                        landmark: name,
                        group: a % 2,
                        offset,
                    });
                    Control::Light(mb.signals.len() - 1)
                } else if plan.per_direction == 1 {
                    let x: f64 = rng.random();
                    if x < cfg.stop_probability {
                        mb.landmark(lane, LandmarkKind::StopSign);
                        Control::Stop
                    } else if x < cfg.stop_probability + cfg.yield_probability {
                        mb.landmark(lane, LandmarkKind::YieldSign);
                        Control::Yield
                    } else {
                        Control::None
                    }
                } else {
                    Control::None
                };
                mb.lanes[lane].leads_to = Some((ji, control));
                for &b in arms.iter().filter(|b| **b != a) {
                    let turn = turn_between(a, b);
                    let length = turn_length(turn);
                    let name = format!("{road}-{}-{b}", mb.spec.lanes[lane].id);
                    let zone = vec![SpeedZone {
                        from: 0.0,
                        to: length,
                        limit: JUNCTION_LIMIT,
                    }];
                    let conn = mb.lane(name, &road, length, 1, true, zone, Some(ji), Some(turn));
                    mb.connect(lane, conn);
                    for p in plans {
                        let out = lanes_at(p, (ji, b), false);
                        if !out.is_empty() {
                            let target = out[k.min(out.len() - 1)];
                            mb.connect(conn, target);
                            break;
                        }
                    }
                    exits_into.entry(b).or_default().push(conn);
                }
            }
        }
    }
    for (_, conns) in exits_into {
        if rng.random_bool(cfg.junction_crosswalk_probability) {
            let site: Crossing = conns.iter().map(|c| (*c, mb.lanes[*c].length - 4.0)).collect();
            mb.crossing(site);
        }
    }
}

/// Four roads joined end to end into a loop.
fn ring_map(mb: &mut MapBuilder, cfg: &MapConfig, rng: &mut ChaCha8Rng) {
    let mut plans = Vec::new();
    for k in 0..4 {
        let mut plan = RoadPlan {
            a: None,
            b: None,
            per_direction: if rng.random_bool(cfg.multi_lane_share) { 2 } else { 1 },
            forward: Vec::new(),
            backward: Vec::new(),
            length: 0.0,
        };
        build_road(mb, rng, cfg, k, &mut plan);
        plans.push(plan);
    }
    for k in 0..4 {
        let next = &plans[(k + 1) % 4];
        let here = &plans[k];
        for (i, &l) in here.forward.iter().enumerate() {
            let t = next.forward[i.min(next.forward.len() - 1)];
            mb.connect(l, t);
        }
        for (i, &l) in next.backward.iter().enumerate() {
            let t = here.backward[i.min(here.backward.len() - 1)];
            mb.connect(l, t);
        }
    }
}

#[derive(Clone, Debug)]
struct Vehicle {
    lane: usize,
    pos: f64,
    speed: f64,
    /// Desired fraction of the speed limit.
    factor: f64,
    next: Option<usize>,
    /// Fixed route; random choices once exhausted.
    route: Vec<usize>,
    stopped_here: bool,
    waited: f64,
    cooldown: f64,
    overtaker: bool,
    /// Lane to return to and the vehicle being passed.
    passing: Option<(usize, usize)>,
}

#[derive(Clone, Debug)]
enum Walker {
    Idle { until: f64 },
    Crossing { site: usize, start: f64, per_lane: f64 },
}

struct Setup {
    vehicles: Vec<Vehicle>,
    walkers: Vec<Walker>,
    weather: Weather,
    daytime: Daytime,
    /// No spontaneous behavior besides the scripted one.
    scripted: bool,
}

fn weighted<T: Copy + Ord>(rng: &mut ChaCha8Rng, weights: &BTreeMap<T, f64>) -> T {
    let total: f64 = weights.values().sum();
    let mut x = rng.random_range(0.0..total);
    for (k, w) in weights {
        if x < *w {
            return *k;
        }
        x -= w;
    }
    *weights.keys().next_back().expect("weights are not empty")
}

fn vehicle(lane: usize, pos: f64, speed: f64, factor: f64) -> Vehicle {
    Vehicle {
        lane,
        pos,
        speed,
        factor,
        next: None,
        route: Vec::new(),
        stopped_here: false,
        waited: 0.0,
        cooldown: 0.0,
        overtaker: false,
        passing: None,
    }
}

fn random_setup(cfg: &GenConfig, map: &GeneratedMap, rng: &mut ChaCha8Rng) -> Result<Setup, GenError> {
    let weather = weighted(rng, &cfg.weather);
    let daytime = weighted(rng, &cfg.daytime);
    let n = rng.random_range(cfg.vehicles.min..=cfg.vehicles.max) as usize;
    let peds = rng.random_range(cfg.pedestrians.min..=cfg.pedestrians.max) as usize;
    let roads: Vec<usize> = (0..map.lanes.len())
        .filter(|l| map.lanes[*l].junction.is_none())
        .collect();
    let mut taken: Vec<(usize, f64)> = Vec::new();
    let mut vehicles = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = None;
        for _ in 0..1000 {
            let lane = *roads.choose(rng).expect("map has roads");
            let len = map.lanes[lane].length;
            let pos = rng.random_range(5.0..len - 25.0).round();
            if taken.iter().all(|(l, p)| *l != lane || (p - pos).abs() >= 12.0) {
                placed = Some((lane, pos));
                break;
            }
        }
        let (lane, pos) =
            placed.ok_or_else(|| GenError::Infeasible(format!("no room for {n} vehicles on this map")))?;
        taken.push((lane, pos));
        let factor = if rng.random_bool(cfg.behavior.slow_share) {
            rng.random_range(0.4..0.6)
        } else {
            rng.random_range(0.8..1.0)
        };
        let mut v = vehicle(lane, pos, 0.0, factor);
        v.overtaker = rng.random_bool(cfg.behavior.overtaker_share);
        vehicles.push(v);
    }
    let idle = cfg.behavior.pedestrian_idle_secs;
    let walkers = (0..peds)
        .map(|_| Walker::Idle {
            until: rng.random_range(0.0..=idle.max),
        })
        .collect();
    Ok(Setup {
        vehicles,
        walkers,
        weather,
        daytime,
        scripted: false,
    })
}

/// T-junction with arms east (0), north (1) and west (2), single-lane roads
/// ending at the junction, and a stop sign on the northern arm.
fn left_turn_map() -> GeneratedMap {
    let mut mb = MapBuilder::default();
    let mut plans = Vec::new();
    for arm in 0..3u32 {
        let name = format!("r{arm}");
        mb.road(name.clone(), false);
        let zone = vec![SpeedZone {
            from: 0.0,
            to: 60.0,
            limit: URBAN_LIMIT,
        }];
        let f = mb.lane(format!("{name}-f0"), &name, 60.0, 1, true, zone.clone(), None, None);
        let b = mb.lane(format!("{name}-b0"), &name, 60.0, 1, false, zone, None, None);
        plans.push(RoadPlan {
            a: None,
            b: Some((0, arm)),
            per_direction: 1,
            forward: vec![f],
            backward: vec![b],
            length: 60.0,
        });
    }
    mb.road("j0".into(), true);
    for a in 0..3u32 {
        let lane = plans[a as usize].forward[0];
        let control = if a == 1 {
            mb.landmark(lane, LandmarkKind::StopSign);
            Control::Stop
        } else {
            Control::None
        };
        mb.lanes[lane].leads_to = Some((0, control));
        for b in (0..3u32).filter(|b| *b != a) {
            let turn = turn_between(a, b);
            let length = turn_length(turn);
            let zone = vec![SpeedZone {
                from: 0.0,
                to: length,
                limit: JUNCTION_LIMIT,
            }];
            let name = format!("j0-{}-{b}", mb.spec.lanes[lane].id);
            let conn = mb.lane(name, "j0", length, 1, true, zone, Some(0), Some(turn));
            mb.connect(lane, conn);
            mb.connect(conn, plans[b as usize].backward[0]);
        }
    }
    let mut gm = mb.finish();
    let target = gm.lane_index("j0-r1-f0-0");
    let pos = gm.lanes[target].length - 4.0;
    gm.spec.crosswalks.push(CrosswalkSpec {
        lane: gm.spec.lanes[target].id.clone(),
        position: pos,
    });
    gm.crossings.push(vec![(target, pos)]);
    gm
}

fn left_turn_setup(map: &GeneratedMap) -> Setup {
    let ego_lane = map.lane_index("r1-f0");
    let turn = map.lane_index("j0-r1-f0-0");
    let mut ego = vehicle(ego_lane, 30.0, 8.0, 0.9);
    ego.route = vec![turn, map.lane_index("r0-b0")];
    let car_lane = map.lane_index("r0-f0");
    let mut car = vehicle(car_lane, 4.0, 10.0, 0.9);
    car.route = vec![map.lane_index("j0-r0-f0-2"), map.lane_index("r2-b0")];
    Setup {
        vehicles: vec![ego, car],
        walkers: vec![Walker::Idle { until: 12.0 }],
        weather: Weather::Clear,
        daytime: Daytime::Noon,
        scripted: true,
    }
}

fn overtaking_setup(cfg: &GenConfig, map: &GeneratedMap, rng: &mut ChaCha8Rng) -> Setup {
    let lane = map.lane_index("r0-f0");
    let mut ego = vehicle(lane, 5.0, 10.0, 0.95);
    ego.overtaker = true;
    let slow = vehicle(lane, 30.0, 5.0, 0.4);
    Setup {
        vehicles: vec![ego, slow],
        walkers: Vec::new(),
        weather: weighted(rng, &cfg.weather),
        daytime: weighted(rng, &cfg.daytime),
        scripted: true,
    }
}

fn straight_ring(length: f64) -> GeneratedMap {
    let cfg = MapConfig {
        multi_lane_share: 1.0,
        road_length: Range {
            min: length,
            max: length,
        },
        slow_zone_probability: 0.0,
        crosswalk_probability: 0.0,
        ..MapConfig::default()
    };
    let mut mb = MapBuilder::default();
    ring_map(&mut mb, &cfg, &mut run_rng(0, 0));
    mb.finish()
}

/// Snapshot lookup of who stands where.
struct Occupancy {
    /// Per lane: (position, speed, vehicle index or `None` for pedestrians).
    by_lane: Vec<Vec<(f64, f64, Option<usize>)>>,
    /// Vehicles per junction: (lane, speed).
    in_junction: Vec<Vec<(usize, f64)>>,
}

impl Occupancy {
    fn build(map: &GeneratedMap, vehicles: &[Vehicle], walkers: &[(usize, f64)]) -> Occupancy {
        let mut by_lane = vec![Vec::new(); map.lanes.len()];
        let junctions = map.lanes.iter().filter_map(|l| l.junction).max().map_or(0, |m| m + 1);
        let mut in_junction = vec![Vec::new(); junctions];
        for (k, v) in vehicles.iter().enumerate() {
            by_lane[v.lane].push((v.pos, v.speed, Some(k)));
            if let Some(j) = map.lanes[v.lane].junction {
                in_junction[j].push((v.lane, v.speed));
            }
        }
        for (lane, pos) in walkers {
            by_lane[*lane].push((*pos, 0.0, None));
        }
        Occupancy { by_lane, in_junction }
    }

    /// Nearest occupant strictly ahead of `pos` on `lane` (excluding `me`).
    fn ahead(&self, lane: usize, pos: f64, me: Option<usize>) -> Option<(f64, f64, Option<usize>)> {
        self.by_lane[lane]
            .iter()
            .filter(|(p, _, who)| *p > pos || (*p == pos && who.is_some() && *who > me))
            .filter(|(_, _, who)| who.is_none() || *who != me)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .copied()
    }

    fn free_around(&self, lane: usize, pos: f64, back: f64, front: f64) -> bool {
        self.by_lane[lane]
            .iter()
            .all(|(p, _, _)| *p < pos - back || *p > pos + front)
    }
}

fn pick_next(lane: &NetLane, v: &mut Vehicle, rng: &mut ChaCha8Rng) -> Option<usize> {
    if let Some(r) = v.route.first().copied() {
        if lane.successors.contains(&r) {
            v.route.remove(0);
            return Some(r);
        }
    }
    lane.successors.choose(rng).copied()
}

fn walker_position(map: &GeneratedMap, w: &Walker, t: f64) -> Option<(usize, f64)> {
    match w {
        Walker::Idle { .. } => None,
        Walker::Crossing { site, start, per_lane } => {
            let k = ((t - start) / per_lane).floor() as usize;
            map.crossings[*site].get(k).copied()
        }
    }
}

fn round3(x: f64) -> f64 {
    let r = (x * 1000.0).round() / 1000.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Runs the traffic model on `map` and returns the tick records.
fn simulate(cfg: &GenConfig, map: &GeneratedMap, mut setup: Setup, rng: &mut ChaCha8Rng) -> Vec<Tick> {
    let tick = time_from_secs(cfg.tick_secs).expect("validated tick");
    let dt = time_to_secs(tick);
    let ticks = (cfg.duration_secs / dt).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(ticks);
    let vehicles = &mut setup.vehicles;
    for v in vehicles.iter_mut() {
        let mut plan = std::mem::take(&mut v.route);
        std::mem::swap(&mut v.route, &mut plan);
        v.next = pick_next(&map.lanes[v.lane], v, rng);
    }
    let walkers = &mut setup.walkers;
    let per_lane = cfg.behavior.crossing_secs_per_lane;
    let idle = cfg.behavior.pedestrian_idle_secs;
    for k in 0..ticks {
        let t = time_to_secs(tick * Time::from_integer(k as i64));
        // Pedestrians start and finish crossings at tick boundaries.
        for w in walkers.iter_mut() {
            match w {
                Walker::Idle { until } if *until <= t && !map.crossings.is_empty() => {
                    let site = rng.random_range(0..map.crossings.len());
                    let per_lane = if setup.scripted { 8.0 } else { per_lane };
                    *w = Walker::Crossing {
                        site,
                        start: t,
                        per_lane,
                    };
                }
                Walker::Crossing { site, start, per_lane }
                    if t - *start >= *per_lane * map.crossings[*site].len() as f64 =>
                {
                    let until = if setup.scripted {
                        f64::INFINITY
                    } else {
                        t + rng.random_range(idle.min..=idle.max)
                    };
                    *w = Walker::Idle { until };
                }
                _ => {}
            }
        }
        let placed: Vec<Option<(usize, f64)>> = walkers.iter().map(|w| walker_position(map, w, t)).collect();
        let lights: BTreeMap<String, LightState> =
            map.signals.iter().map(|s| (s.landmark.clone(), s.state(t))).collect();
        let mut entities: Vec<EntityRecord> = vehicles
            .iter()
            .enumerate()
            .map(|(i, v)| EntityRecord {
                id: format!("v{i}"),
                kind: ActorKind::Vehicle,
                is_ego: i == 0,
                lane: map.spec.lanes[v.lane].id.clone(),
                s: round3(v.pos),
                speed: round3(v.speed),
            })
            .collect();
        for (i, p) in placed.iter().enumerate() {
            if let Some((lane, pos)) = p {
                entities.push(EntityRecord {
                    id: format!("p{i}"),
                    kind: ActorKind::Pedestrian,
                    is_ego: false,
                    lane: map.spec.lanes[*lane].id.clone(),
                    s: round3(*pos),
                    speed: 1.4,
                });
            }
        }
        out.push(Tick {
            t: time_to_secs(tick * Time::from_integer(k as i64)),
            weather: setup.weather,
            daytime: setup.daytime,
            traffic_density: None,
            entities,
            lights,
        });
        // Positions were emitted rounded; continue from the same values.
        for v in vehicles.iter_mut() {
            v.pos = round3(v.pos);
            v.speed = round3(v.speed);
        }
        let walking: Vec<(usize, f64)> = placed.into_iter().flatten().collect();
        let occ = Occupancy::build(map, vehicles, &walking);
        let snapshot = vehicles.clone();
        for (i, v) in vehicles.iter_mut().enumerate() {
            step_vehicle(cfg, map, &occ, &snapshot, i, v, t, dt, setup.scripted, rng);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn step_vehicle(
    cfg: &GenConfig,
    map: &GeneratedMap,
    occ: &Occupancy,
    snapshot: &[Vehicle],
    i: usize,
    v: &mut Vehicle,
    t: f64,
    dt: f64,
    scripted: bool,
    rng: &mut ChaCha8Rng,
) {
    let lane = &map.lanes[v.lane];
    let to_end = lane.length - v.pos;
    let mut target = lane.limit_at(v.pos) * v.factor;
    let follow = |gap: f64| ((gap - STANDSTILL_GAP) / HEADWAY).max(0.0);

    let leader = occ.ahead(v.lane, v.pos, Some(i));
    match leader {
        Some((p, _, _)) => target = target.min(follow(p - v.pos)),
        None => {
            if let Some(next) = v.next {
                if let Some((p, _, _)) = occ.ahead(next, -1.0, Some(i)) {
                    target = target.min(follow(to_end + p));
                }
            }
        }
    }

    if let Some((junction, control)) = lane.leads_to {
        let stop_line = follow(to_end + STANDSTILL_GAP - 1.0);
        match control {
            Control::Light(s) if to_end < 30.0 => {
                let state = map.signals[s].state(t);
                // Too close to stop on yellow: keep going.
                let committed = state == LightState::Yellow && to_end < v.speed * dt * 2.0;
                if state != LightState::Green && !committed {
                    target = target.min(stop_line);
                }
            }
            Control::Stop if to_end < 30.0 && !v.stopped_here => {
                target = target.min(stop_line);
                if v.speed < 0.1 && to_end < 4.0 {
                    v.waited += dt;
                    if v.waited >= 2.0 {
                        v.stopped_here = true;
                    }
                }
            }
            Control::Yield if to_end < 30.0 => {
                target = target.min(4.0);
                if to_end < 15.0 && !occ.in_junction[junction].is_empty() && v.waited < 6.0 {
                    target = target.min(stop_line);
                    if v.speed < 0.1 {
                        v.waited += dt;
                    }
                }
            }
            _ => {}
        }
    }

    // Left turns wait near the entry while others move through the junction.
    if let (Some(j), Some(Turn::Left)) = (lane.junction, lane.turn) {
        if v.pos < 3.0 && v.waited < 8.0 {
            let busy = occ.in_junction[j].iter().any(|(l, s)| *l != v.lane && *s > 0.5);
            if busy {
                target = target.min(((2.0 - v.pos) / dt).max(0.0));
                if v.speed < 0.1 {
                    v.waited += dt;
                }
            }
        }
    }

    v.cooldown -= dt;
    if lane.junction.is_none() && !lane.neighbors.is_empty() && v.pos > 10.0 && to_end > 30.0 && v.cooldown <= 0.0 {
        let mut change_to = None;
        if let Some((origin, passed)) = v.passing {
            let other = &snapshot[passed];
            if other.lane == origin && v.pos - other.pos > 10.0 && occ.free_around(origin, v.pos, 10.0, 15.0) {
                change_to = Some(origin);
                v.passing = None;
            } else if other.lane != origin {
                v.passing = None;
            }
        } else if v.overtaker {
            if let Some((p, s, Some(who))) = leader {
                let desired = lane.limit_at(v.pos) * v.factor;
                if p - v.pos < 25.0 && s < desired - 1.5 {
                    if let Some(n) = lane
                        .neighbors
                        .iter()
                        .copied()
                        .find(|n| occ.free_around(*n, v.pos, 10.0, 15.0))
                    {
                        change_to = Some(n);
                        v.passing = Some((v.lane, who));
                    }
                }
            }
        }
        let forced = i == 0 && cfg.behavior.ego_lane_change_at.is_some_and(|at| t >= at);
        if change_to.is_none()
            && (forced || (!scripted && rng.random_bool((cfg.behavior.lane_change_rate * dt).min(1.0))))
        {
            change_to = lane
                .neighbors
                .iter()
                .copied()
                .find(|n| occ.free_around(*n, v.pos, 10.0, 15.0));
            if forced && change_to.is_some() {
                // Only once.
                v.cooldown = f64::INFINITY;
            }
        }
        if let Some(n) = change_to {
            v.lane = n;
            v.cooldown = v.cooldown.max(3.0);
            v.next = pick_next(&map.lanes[n], v, rng);
        }
    }

    let speed = if target > v.speed {
        target.min(v.speed + ACCEL * dt)
    } else {
        target
    };
    v.speed = speed;
    v.pos += speed * dt;
    let length = map.lanes[v.lane].length;
    if v.pos >= length {
        match v.next {
            Some(next) => {
                v.pos -= length;
                v.lane = next;
                v.stopped_here = false;
                v.waited = 0.0;
                v.passing = None;
                v.next = pick_next(&map.lanes[next], v, rng);
                v.pos = v.pos.min(map.lanes[next].length);
            }
            None => {
                v.pos = length;
                v.speed = 0.0;
            }
        }
    }
}

/// Generates run number `run` of a batch.
pub fn generate_run(cfg: &GenConfig, run: u64) -> Result<Run, GenError> {
    cfg.validate()?;
    let mut rng = run_rng(cfg.seed, run);
    let (map, setup) = match cfg.scenario {
        Scenario::Random => {
            let map = generate_map(&cfg.map, &mut rng)?;
            let setup = random_setup(cfg, &map, &mut rng)?;
            (map, setup)
        }
        Scenario::JunctionLeftTurn => {
            let map = left_turn_map();
            let setup = left_turn_setup(&map);
            (map, setup)
        }
        Scenario::Overtaking => {
            let map = straight_ring(250.0);
            let setup = overtaking_setup(cfg, &map, &mut rng);
            (map, setup)
        }
    };
    let ticks = simulate(cfg, &map, setup, &mut rng);
    Ok(ingest::build_run(&run_id(cfg, run), &map.spec, &ticks)?)
}

pub fn run_id(cfg: &GenConfig, run: u64) -> String {
    format!("seed{}-run{run:04}", cfg.seed)
}
