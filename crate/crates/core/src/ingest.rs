//! Run files and segmentation.
//!
//! A run file is newline-delimited JSON in UTF-8. The first line is a header
//! object carrying the schema tag, the run id and the static map; every
//! following non-empty line is one tick:
//!
//! ```text
//! {"schema":"tscov-run/1","run_id":"r0","map":{"roads":[...],"lanes":[...],...}}
//! {"t":0.0,"weather":"clear","daytime":"noon","entities":[{"id":"ego","kind":"vehicle","is_ego":true,"lane":"l1","s":3.5,"speed":8.0}],"lights":{"tl1":"red"}}
//! ```
//!
//! `t` is in seconds and must increase strictly. `traffic_density` and
//! `lights` are optional.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sanity;
use crate::scene::{
    time_from_secs, time_to_secs, ActorId, ActorKind, Daytime, Entity, LightState, MapSpec, ModelError, RoadId,
    SceneEnv, Segment, StaticMap, TemporalStructure, TraceBuilder, Violation, Weather,
};

pub const SCHEMA: &str = "tscov-run/1";

/// Segments with fewer scenes are dropped by default, so segments of ten or
/// fewer scenes never reach classification.
pub const DEFAULT_MIN_SCENES: usize = 11;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("run file is empty")]
    MissingHeader,
    #[error("unsupported schema `{found}` (expected `{SCHEMA}`)")]
    Schema { found: String },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("tick {tick}: {source}")]
    Tick {
        tick: usize,
        #[source]
        source: ModelError,
    },
    #[error("map: {0}")]
    Map(#[source] ModelError),
    #[error("run has no ticks")]
    NoTicks,
}

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("ego `{ego}` is absent at scene {index}")]
    EgoAbsent { ego: String, index: usize },
    #[error("window length must be positive")]
    EmptyWindow,
}

#[derive(Serialize, Deserialize)]
struct Header {
    schema: String,
    run_id: String,
    map: MapSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityRecord {
    pub id: String,
    pub kind: ActorKind,
    #[serde(default)]
    pub is_ego: bool,
    pub lane: String,
    pub s: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tick {
    pub t: f64,
    pub weather: Weather,
    pub daytime: Daytime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic_density: Option<u32>,
    pub entities: Vec<EntityRecord>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub lights: BTreeMap<String, LightState>,
}

/// A loaded run with the data-sanity violations found in it.
#[derive(Clone, Debug)]
pub struct Run {
    pub id: String,
    pub map: Arc<StaticMap>,
    pub trace: TemporalStructure,
    pub violations: Vec<Violation>,
}

impl Run {
    /// Builds a run from in-memory parts and validates it.
    pub fn new(id: &str, map: Arc<StaticMap>, trace: TemporalStructure) -> Run {
        let violations = sanity::validate(&trace, &map);
        Run {
            id: id.to_owned(),
            map,
            trace,
            violations,
        }
    }
}

pub fn load_path(path: &Path) -> Result<Run, IngestError> {
    let file = std::fs::File::open(path)?;
    load(std::io::BufReader::new(file))
}

pub fn load_str(text: &str) -> Result<Run, IngestError> {
    load(text.as_bytes())
}

pub fn load(reader: impl BufRead) -> Result<Run, IngestError> {
    let mut lines = reader.lines().enumerate().filter_map(|(k, l)| match l {
        Ok(l) if l.trim().is_empty() => None,
        other => Some((k + 1, other)),
    });
    let (line, header) = lines.next().ok_or(IngestError::MissingHeader)?;
    let header = header?;
    let value: serde_json::Value = serde_json::from_str(&header).map_err(|e| malformed(line, e))?;
    match value.get("schema").and_then(|s| s.as_str()) {
        Some(SCHEMA) => {}
        Some(other) => {
            return Err(IngestError::Schema {
                found: other.to_owned(),
            })
        }
        None => return Err(IngestError::Schema { found: String::new() }),
    }
    let header: Header = serde_json::from_value(value).map_err(|e| malformed(line, e))?;
    let map = StaticMap::from_spec(&header.map).map_err(IngestError::Map)?;
    let mut builder = TraceBuilder::new(&map);
    let mut tick = 0;
    for (line, text) in lines {
        let text = text?;
        let record: Tick = serde_json::from_str(&text).map_err(|e| malformed(line, e))?;
        push_tick(&mut builder, tick, &record)?;
        tick += 1;
    }
    if tick == 0 {
        return Err(IngestError::NoTicks);
    }
    let trace = builder.build().map_err(|source| IngestError::Tick { tick, source })?;
    Ok(Run::new(&header.run_id, Arc::new(map), trace))
}

/// Builds a run from in-memory records.
pub fn build_run(run_id: &str, map: &MapSpec, ticks: &[Tick]) -> Result<Run, IngestError> {
    let map = StaticMap::from_spec(map).map_err(IngestError::Map)?;
    let mut builder = TraceBuilder::new(&map);
    for (k, t) in ticks.iter().enumerate() {
        push_tick(&mut builder, k, t)?;
    }
    if ticks.is_empty() {
        return Err(IngestError::NoTicks);
    }
    let trace = builder.build().map_err(|source| IngestError::Tick {
        tick: ticks.len(),
        source,
    })?;
    Ok(Run::new(run_id, Arc::new(map), trace))
}

fn malformed(line: usize, e: serde_json::Error) -> IngestError {
    IngestError::Malformed {
        line,
        message: e.to_string(),
    }
}

fn push_tick(builder: &mut TraceBuilder<'_>, tick: usize, record: &Tick) -> Result<(), IngestError> {
    let err = |source| IngestError::Tick { tick, source };
    let time = time_from_secs(record.t).ok_or(err(ModelError::BadTimestamp { index: tick }))?;
    let entities: Vec<Entity> = record
        .entities
        .iter()
        .map(|e| Entity {
            id: e.id.clone(),
            kind: e.kind,
            is_ego: e.is_ego,
            lane: e.lane.clone(),
            position: e.s,
            speed: e.speed,
        })
        .collect();
    let env = SceneEnv {
        weather: record.weather,
        daytime: record.daytime,
        traffic_density_hint: record.traffic_density,
        lights: record.lights.iter().map(|(k, v)| (k.clone(), *v)).collect(),
    };
    builder.push(time, env, &entities).map_err(err)?;
    Ok(())
}

/// Tick records of a trace, with ego flags as seen through the view.
pub fn ticks(trace: &TemporalStructure, map: &StaticMap) -> Vec<Tick> {
    (0..trace.len())
        .map(|i| {
            let scene = trace.scene(i);
            Tick {
                t: time_to_secs(trace.time(i)),
                weather: scene.weather,
                daytime: scene.daytime,
                traffic_density: scene.traffic_density_hint,
                entities: trace
                    .entities(i, map)
                    .into_iter()
                    .map(|e| EntityRecord {
                        id: e.id,
                        kind: e.kind,
                        is_ego: e.is_ego,
                        lane: e.lane,
                        s: e.position,
                        speed: e.speed,
                    })
                    .collect(),
                lights: scene
                    .lights
                    .iter()
                    .map(|(id, s)| (map.landmark(*id).name.clone(), *s))
                    .collect(),
            }
        })
        .collect()
}

/// Writes the canonical form of a run.
pub fn save(run_id: &str, trace: &TemporalStructure, map: &StaticMap, mut out: impl Write) -> Result<(), IngestError> {
    let header = Header {
        schema: SCHEMA.to_owned(),
        run_id: run_id.to_owned(),
        map: map.to_spec(),
    };
    let json = |e: serde_json::Error| IngestError::Io(e.into());
    serde_json::to_writer(&mut out, &header).map_err(json)?;
    out.write_all(b"\n")?;
    for t in ticks(trace, map) {
        serde_json::to_writer(&mut out, &t).map_err(json)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_string(run_id: &str, trace: &TemporalStructure, map: &StaticMap) -> String {
    let mut buf = Vec::new();
    save(run_id, trace, map, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// How a run is cut into segments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Maximal runs of consecutive scenes in which the ego stays on one road.
    ByRoad,
    /// Consecutive non-overlapping windows of a fixed number of scenes.
    Window(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SegmentOptions {
    pub strategy: Strategy,
    /// Segments with fewer scenes are dropped.
    pub min_scenes: usize,
    /// Treat scenes without the ego as cuts instead of failing.
    pub skip_absent: bool,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        SegmentOptions {
            strategy: Strategy::ByRoad,
            min_scenes: DEFAULT_MIN_SCENES,
            skip_absent: false,
        }
    }
}

/// The vehicle flagged as ego in the first scene.
pub fn flagged_ego(trace: &TemporalStructure) -> Option<ActorId> {
    trace.egos_at(0).into_iter().next()
}

/// Cuts `trace` into segments seen from `ego`. Each scene belongs to the
/// run of its own road, so the scene where the road changes starts the next
/// segment.
pub fn segment(
    run_id: &str,
    trace: &TemporalStructure,
    map: &Arc<StaticMap>,
    ego: ActorId,
    options: &SegmentOptions,
) -> Result<Vec<Segment>, SegmentError> {
    let ego_name = trace.actor_name(ego).to_owned();
    let mut roads: Vec<Option<RoadId>> = Vec::with_capacity(trace.len());
    for i in 0..trace.len() {
        match trace.scene(i).actor(ego) {
            Some(s) => roads.push(Some(map.lane(s.lane).road)),
            None if options.skip_absent => roads.push(None),
            None => {
                return Err(SegmentError::EgoAbsent {
                    ego: ego_name,
                    index: i,
                })
            }
        }
    }
    let ranges: Vec<(usize, usize)> = match options.strategy {
        Strategy::ByRoad => {
            let mut out = Vec::new();
            let mut start = 0;
            for i in 1..=roads.len() {
                if i == roads.len() || roads[i] != roads[start] {
                    if roads[start].is_some() {
                        out.push((start, i));
                    }
                    start = i;
                }
            }
            out
        }
        Strategy::Window(len) => {
            if len == 0 {
                return Err(SegmentError::EmptyWindow);
            }
            let mut out = Vec::new();
            let mut start = 0;
            while start < roads.len() {
                // Windows also stop at absences.
                let mut end = start;
                while end < roads.len() && end - start < len && roads[end].is_some() {
                    end += 1;
                }
                if end > start {
                    out.push((start, end));
                    start = end;
                } else {
                    start += 1;
                }
            }
            out
        }
    };
    let mut segments = Vec::new();
    for (start, end) in ranges {
        if end - start < options.min_scenes.max(1) {
            continue;
        }
        let road = dominant(&roads[start..end]);
        segments.push(Segment {
            trace: trace.slice(start..end).expect("range inside trace"),
            map: Arc::clone(map),
            run_id: run_id.to_owned(),
            ego: ego_name.clone(),
            road: map.road(road).name.clone(),
            start,
        });
    }
    Ok(segments)
}

/// Most frequent road; the earliest wins ties.
fn dominant(roads: &[Option<RoadId>]) -> RoadId {
    let mut counts: BTreeMap<RoadId, (usize, usize)> = BTreeMap::new();
    for (k, r) in roads.iter().enumerate() {
        if let Some(r) = r {
            let e = counts.entry(*r).or_insert((0, k));
            e.0 += 1;
        }
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(r, _)| r)
        .expect("segment has an ego road")
}

/// One view per vehicle of the run, each with that vehicle as the only ego.
pub fn multi_ego_expand(trace: &TemporalStructure) -> Vec<(ActorId, TemporalStructure)> {
    trace
        .actor_ids()
        .filter(|a| trace.actor_kind(*a) == ActorKind::Vehicle)
        .map(|a| (a, trace.with_ego(a)))
        .collect()
}

/// Segments of a run: from the flagged ego only, or from every vehicle.
pub fn segment_run(run: &Run, all_vehicles: bool, options: &SegmentOptions) -> Result<Vec<Segment>, SegmentError> {
    if all_vehicles {
        let opts = SegmentOptions {
            skip_absent: true,
            ..*options
        };
        let mut out = Vec::new();
        for (ego, view) in multi_ego_expand(&run.trace) {
            out.extend(segment(&run.id, &view, &run.map, ego, &opts)?);
        }
        Ok(out)
    } else {
        match flagged_ego(&run.trace) {
            Some(ego) => segment(&run.id, &run.trace, &run.map, ego, options),
            None => Err(SegmentError::EgoAbsent {
                ego: "<flagged ego>".into(),
                index: 0,
            }),
        }
    }
}

/// Per-run segmentation figures.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub run_id: String,
    pub scenes: usize,
    pub duration_secs: f64,
    pub vehicles: usize,
    pub pedestrians: usize,
    pub segments: usize,
    pub mean_segment_scenes: f64,
}

pub fn run_stats(run: &Run, segments: &[Segment]) -> RunStats {
    let t = &run.trace;
    let vehicles = t.actor_ids().filter(|a| t.actor_kind(*a) == ActorKind::Vehicle).count();
    let scenes_in_segments: usize = segments.iter().map(|s| s.trace.len()).sum();
    RunStats {
        run_id: run.id.clone(),
        scenes: t.len(),
        duration_secs: time_to_secs(t.time(t.len() - 1) - t.time(0)),
        vehicles,
        pedestrians: t.actor_count() - vehicles,
        segments: segments.len(),
        mean_segment_scenes: if segments.is_empty() {
            0.0
        } else {
            scenes_in_segments as f64 / segments.len() as f64
        },
    }
}
