//! Coverage metrics over classified segments.
//!
//! Everything here is a fold over the per-segment classes. Counts add and
//! class sets union, so partial results from parallel workers merge to the
//! sequential answer.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::ControlFlow;

use num_bigint::BigUint;
use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::tsc::{Classification, ScenarioClass, Tsc};

/// Default cap on listed missing classes.
pub const DEFAULT_MISSING_CAP: usize = 10_000;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("class {0:?} is not a valid class of the classifier")]
    InvalidClass(Vec<String>),
    #[error("report output: {0}")]
    Output(String),
}

/// Scenario class coverage: observed classes over possible classes.
pub fn scc(observed: &BTreeSet<ScenarioClass>, tsc: &Tsc) -> Ratio<BigUint> {
    Ratio::new(BigUint::from(observed.len()), tsc.size())
}

pub fn ratio_to_f64(r: &Ratio<BigUint>) -> f64 {
    // Scale down huge operands to keep precision without overflow.
    let (n, d) = (r.numer(), r.denom());
    let shift = d.bits().saturating_sub(1000);
    let n = (n >> shift).to_f64().unwrap_or(f64::INFINITY);
    let d = (d >> shift).to_f64().unwrap_or(f64::INFINITY);
    n / d
}

/// Absolute feature occurrence of one node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Afo {
    /// Segments whose class contains the node.
    pub segments: usize,
    /// Observed classes that contain the node.
    pub classes: usize,
}

/// Counts of classified segments per class.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tally {
    pub counts: BTreeMap<ScenarioClass, usize>,
    pub segments: usize,
}

impl Tally {
    pub fn new() -> Self {
        Tally::default()
    }

    pub fn add(&mut self, class: &ScenarioClass) {
        *self.counts.entry(class.clone()).or_insert(0) += 1;
        self.segments += 1;
    }

    pub fn merge(mut self, other: Tally) -> Tally {
        for (c, n) in other.counts {
            *self.counts.entry(c).or_insert(0) += n;
        }
        self.segments += other.segments;
        self
    }

    pub fn from_classes(classes: &[ScenarioClass]) -> Tally {
        let mut t = Tally::new();
        for c in classes {
            t.add(c);
        }
        t
    }

    /// Same result as [`Tally::from_classes`], folded in parallel.
    pub fn from_classes_par(classes: &[ScenarioClass]) -> Tally {
        classes
            .par_iter()
            .fold(Tally::new, |mut t, c| {
                t.add(c);
                t
            })
            .reduce(Tally::new, Tally::merge)
    }

    pub fn observed(&self) -> BTreeSet<ScenarioClass> {
        self.counts.keys().cloned().collect()
    }

    /// Scenario instance count of `class`.
    pub fn sic(&self, class: &ScenarioClass) -> usize {
        self.counts.get(class).copied().unwrap_or(0)
    }

    pub fn afo(&self, tsc: &Tsc, node: &str) -> Result<Afo, MetricsError> {
        let k = tsc
            .index_of(node)
            .ok_or_else(|| MetricsError::UnknownNode(node.to_owned()))?;
        Ok(self.afo_index(k))
    }

    pub fn afo_index(&self, k: usize) -> Afo {
        let mut afo = Afo {
            segments: 0,
            classes: 0,
        };
        for (c, n) in &self.counts {
            if c.contains(k) {
                afo.segments += n;
                afo.classes += 1;
            }
        }
        afo
    }

    /// Segment counts per subset of `parent`'s children, keyed by the
    /// included children. Lists every subset the bounds allow (zero counts
    /// included) once any segment contains the parent; lists only observed
    /// subsets when the parent has more than 16 children.
    pub fn combination_breakdown(&self, tsc: &Tsc, parent: &str) -> Result<Vec<(Vec<usize>, usize)>, MetricsError> {
        let p = tsc
            .index_of(parent)
            .ok_or_else(|| MetricsError::UnknownNode(parent.to_owned()))?;
        let node = tsc.node(p);
        let mut buckets: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for (c, n) in &self.counts {
            if c.contains(p) {
                let key: Vec<usize> = node.children.iter().copied().filter(|q| c.contains(*q)).collect();
                *buckets.entry(key).or_insert(0) += n;
            }
        }
        if buckets.is_empty() {
            return Ok(Vec::new());
        }
        let m = node.children.len();
        if m <= 16 {
            for mask in 0u32..(1 << m) {
                let size = mask.count_ones() as usize;
                if size < node.lower || size > node.upper {
                    continue;
                }
                let key: Vec<usize> = (0..m)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| node.children[i])
                    .collect();
                buckets.entry(key).or_insert(0);
            }
        }
        let mut out: Vec<(Vec<usize>, usize)> = buckets.into_iter().collect();
        out.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(out)
    }
}

/// Running number of distinct classes after each segment, as
/// `(segments processed, distinct classes)`.
pub fn coverage_curve(classes: &[ScenarioClass]) -> Vec<(usize, usize)> {
    let mut seen = BTreeSet::new();
    classes
        .iter()
        .enumerate()
        .map(|(k, c)| {
            seen.insert(c);
            (k + 1, seen.len())
        })
        .collect()
}

/// Classes of `tsc` that were not observed, in enumeration order, at most
/// `cap` of them.
pub fn missing_classes(observed: &BTreeSet<ScenarioClass>, tsc: &Tsc, cap: Option<usize>) -> Missing {
    let mut classes = Vec::new();
    let mut truncated = false;
    tsc.for_each_class(|c| {
        if observed.contains(c) {
            return ControlFlow::Continue(());
        }
        if cap.is_some_and(|cap| classes.len() >= cap) {
            truncated = true;
            return ControlFlow::Break(());
        }
        classes.push(c.clone());
        ControlFlow::Continue(())
    });
    let observed_valid = observed.iter().filter(|c| tsc.is_valid_class(c)).count();
    let count = tsc.size() - BigUint::from(observed_valid);
    Missing {
        classes,
        truncated,
        count,
    }
}

#[derive(Clone, Debug)]
pub struct Missing {
    pub classes: Vec<ScenarioClass>,
    pub truncated: bool,
    /// Total number of missing classes, listed or not.
    pub count: BigUint,
}

/// Number of classes containing every node in `forced`.
pub fn size_containing(tsc: &Tsc, forced: &[usize]) -> BigUint {
    let mut needed = vec![false; tsc.len()];
    for &f in forced {
        needed[f] = true;
        for a in tsc.ancestors(f) {
            needed[a] = true;
        }
    }
    forced_size(tsc, tsc.root(), &needed)
}

fn forced_size(tsc: &Tsc, q: usize, needed: &[bool]) -> BigUint {
    let n = tsc.node(q);
    // by_count[j]: weighted count of child subsets with j members that
    // include every needed child
    let mut by_count = vec![BigUint::zero(); n.children.len() + 1];
    by_count[0] = BigUint::from(1u32);
    for (done, &c) in n.children.iter().enumerate() {
        let s = if needed[c] {
            forced_size(tsc, c, needed)
        } else {
            tsc.node_size(c)
        };
        for j in (0..=done + 1).rev() {
            let with = if j > 0 { &by_count[j - 1] * &s } else { BigUint::zero() };
            by_count[j] = if needed[c] { with } else { &by_count[j] + with };
        }
    }
    by_count[n.lower..=n.upper].iter().sum()
}

/// Whether some class contains both `a` and `b`.
pub fn pair_feasible(tsc: &Tsc, a: usize, b: usize) -> bool {
    !size_containing(tsc, &[a, b]).is_zero()
}

/// Unordered node pairs `(a, b)` with `a < b` that occur together in some
/// possible class but in no observed class. Pairs where one node is an
/// ancestor of the other are left out: they co-occur exactly when the
/// descendant occurs.
pub fn feature_pair_misses(observed: &BTreeSet<ScenarioClass>, tsc: &Tsc) -> Vec<(usize, usize)> {
    let n = tsc.len();
    let mut seen = vec![false; n * n];
    for c in observed {
        let nodes: Vec<usize> = c.nodes().iter().copied().filter(|k| *k < n).collect();
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                seen[a * n + b] = true;
            }
        }
    }
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if seen[a * n + b] || tsc.is_ancestor(a, b) || tsc.is_ancestor(b, a) {
                continue;
            }
            if pair_feasible(tsc, a, b) {
                out.push((a, b));
            }
        }
    }
    out
}

fn big_number<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
    match v.to_u64() {
        Some(x) => s.serialize_u64(x),
        None => s.serialize_str(&v.to_string()),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SccValue {
    #[serde(serialize_with = "big_number")]
    pub numer: BigUint,
    #[serde(serialize_with = "big_number")]
    pub denom: BigUint,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NodeOccurrence {
    pub node: String,
    pub label: String,
    pub segments: usize,
    pub classes: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ClassCount {
    pub nodes: Vec<String>,
    pub segments: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MissingReport {
    #[serde(serialize_with = "big_number")]
    pub count: BigUint,
    pub truncated: bool,
    pub classes: Vec<Vec<String>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Breakdown {
    pub parent: String,
    pub buckets: Vec<ClassCount>,
}

/// Coverage result of one classifier or projection.
#[derive(Clone, Debug, Serialize)]
pub struct CoverageReport {
    pub tsc: String,
    pub projection: String,
    pub segments: usize,
    pub classified: usize,
    pub failed: usize,
    #[serde(serialize_with = "big_number")]
    pub possible_classes: BigUint,
    pub observed_classes: usize,
    pub scc: SccValue,
    pub feature_occurrence: Vec<NodeOccurrence>,
    pub class_counts: Vec<ClassCount>,
    pub missing: MissingReport,
    pub missing_pairs: Vec<[String; 2]>,
    pub breakdowns: Vec<Breakdown>,
    pub curve: Vec<(usize, usize)>,
}

#[derive(Clone, Debug)]
pub struct ReportOptions {
    pub missing_cap: Option<usize>,
    pub pairs: bool,
    /// Nodes to break down by child combination.
    pub breakdowns: Vec<String>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            missing_cap: Some(DEFAULT_MISSING_CAP),
            pairs: true,
            breakdowns: Vec::new(),
        }
    }
}

impl CoverageReport {
    /// Builds the report from classification results in processing order.
    pub fn build(
        tsc: &Tsc,
        projection: &str,
        results: &Classification,
        options: &ReportOptions,
    ) -> Result<CoverageReport, MetricsError> {
        let classes = results.classes();
        for c in &results.observed {
            if !tsc.is_valid_class(c) {
                return Err(MetricsError::InvalidClass(
                    c.nodes().iter().map(|k| k.to_string()).collect(),
                ));
            }
        }
        let tally = Tally::from_classes(&classes);
        let observed = tally.observed();
        let size = tsc.size();
        let scc = scc(&observed, tsc);
        let ids = |nodes: &mut dyn Iterator<Item = usize>| nodes.map(|k| tsc.node(k).id.clone()).collect::<Vec<_>>();

        let feature_occurrence = tsc
            .nodes()
            .iter()
            .enumerate()
            .map(|(k, n)| {
                let a = tally.afo_index(k);
                NodeOccurrence {
                    node: n.id.clone(),
                    label: n.label.clone(),
                    segments: a.segments,
                    classes: a.classes,
                }
            })
            .collect();

        let mut class_counts: Vec<ClassCount> = tally
            .counts
            .iter()
            .map(|(c, n)| ClassCount {
                nodes: ids(&mut c.nodes().iter().copied()),
                segments: *n,
            })
            .collect();
        class_counts.sort_by(|a, b| b.segments.cmp(&a.segments).then_with(|| a.nodes.cmp(&b.nodes)));

        let missing = missing_classes(&observed, tsc, options.missing_cap);
        let missing = MissingReport {
            count: missing.count,
            truncated: missing.truncated,
            classes: missing
                .classes
                .iter()
                .map(|c| ids(&mut c.nodes().iter().copied()))
                .collect(),
        };

        let missing_pairs = if options.pairs {
            feature_pair_misses(&observed, tsc)
                .into_iter()
                .map(|(a, b)| [tsc.node(a).id.clone(), tsc.node(b).id.clone()])
                .collect()
        } else {
            Vec::new()
        };

        let mut breakdowns = Vec::new();
        for parent in &options.breakdowns {
            let buckets = tally
                .combination_breakdown(tsc, parent)?
                .into_iter()
                .map(|(subset, n)| ClassCount {
                    nodes: ids(&mut subset.into_iter()),
                    segments: n,
                })
                .collect();
            breakdowns.push(Breakdown {
                parent: parent.clone(),
                buckets,
            });
        }

        Ok(CoverageReport {
            tsc: tsc.name.clone(),
            projection: projection.to_owned(),
            segments: results.results.len(),
            classified: classes.len(),
            failed: results.error_count(),
            possible_classes: size,
            observed_classes: observed.len(),
            scc: SccValue {
                value: ratio_to_f64(&scc),
                numer: scc.numer().clone(),
                denom: scc.denom().clone(),
            },
            feature_occurrence,
            class_counts,
            missing,
            missing_pairs,
            breakdowns,
            curve: coverage_curve(&classes),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `segments,observed_classes`, one row per segment.
    pub fn curve_csv(&self) -> Result<String, MetricsError> {
        csv_rows(
            &["segments", "observed_classes"],
            self.curve.iter().map(|(a, b)| vec![a.to_string(), b.to_string()]),
        )
    }

    /// `rank,segments,nodes`, most frequent class first.
    pub fn class_csv(&self) -> Result<String, MetricsError> {
        csv_rows(
            &["rank", "segments", "nodes"],
            self.class_counts
                .iter()
                .enumerate()
                .map(|(k, c)| vec![(k + 1).to_string(), c.segments.to_string(), c.nodes.join(";")]),
        )
    }

    /// `node,label,segments,classes`.
    pub fn occurrence_csv(&self) -> Result<String, MetricsError> {
        csv_rows(
            &["node", "label", "segments", "classes"],
            self.feature_occurrence.iter().map(|o| {
                vec![
                    o.node.clone(),
                    o.label.clone(),
                    o.segments.to_string(),
                    o.classes.to_string(),
                ]
            }),
        )
    }

    /// `parent,children,segments`, one row per bucket of every breakdown.
    pub fn breakdown_csv(&self) -> Result<String, MetricsError> {
        csv_rows(
            &["parent", "children", "segments"],
            self.breakdowns.iter().flat_map(|b| {
                b.buckets
                    .iter()
                    .map(move |c| vec![b.parent.clone(), c.nodes.join(";"), c.segments.to_string()])
            }),
        )
    }
}

fn csv_rows(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<String, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| MetricsError::Output(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| MetricsError::Output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| MetricsError::Output(e.to_string()))
}
