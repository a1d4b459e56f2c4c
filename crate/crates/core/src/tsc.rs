//! Tree-based scenario classifiers.
//!
//! A classifier is a tree of feature nodes. Every non-root node carries the
//! condition of the edge from its parent, and every node bounds how many of
//! its children a class may contain. A scenario class is a node subset that
//! contains the root, is closed under parents and respects all bounds.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::ControlFlow;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::dsl::{Library, ParseError};
use crate::logic::{Evaluator, Formula, LogicError};
use crate::scene::{Segment, StaticMap, TemporalStructure};
use crate::signature::Rel;

/// Child-count bounds of a node as written in classifier files.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KindSpec {
    /// All children.
    All,
    /// Exactly one child.
    Exclusive,
    /// Any number of children.
    Optional,
    /// No children.
    Leaf,
    /// Between `a` and `b` children.
    Range(usize, usize),
}

impl KindSpec {
    pub fn parse(text: &str) -> Option<KindSpec> {
        Some(match text.trim() {
            "all" => KindSpec::All,
            "exclusive" => KindSpec::Exclusive,
            "optional" => KindSpec::Optional,
            "leaf" => KindSpec::Leaf,
            other => {
                let (a, b) = other.split_once("..")?;
                KindSpec::Range(a.trim().parse().ok()?, b.trim().parse().ok()?)
            }
        })
    }

    fn bounds(self, children: usize) -> (usize, usize) {
        match self {
            KindSpec::All => (children, children),
            KindSpec::Exclusive => (1, 1),
            KindSpec::Optional => (0, children),
            KindSpec::Leaf => (0, 0),
            KindSpec::Range(a, b) => (a, b),
        }
    }
}

/// Node kind derived from the bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Leaf,
    All,
    Exclusive,
    Optional,
    Bounded(usize, usize),
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeKind::Leaf => f.write_str("leaf"),
            NodeKind::All => f.write_str("all"),
            NodeKind::Exclusive => f.write_str("exclusive"),
            NodeKind::Optional => f.write_str("optional"),
            NodeKind::Bounded(a, b) => write!(f, "{a}..{b}"),
        }
    }
}

/// Declaration of one node, used to build a [`Tsc`].
#[derive(Clone, Debug)]
pub struct NodeDecl {
    pub id: String,
    pub label: String,
    pub parent: Option<String>,
    pub kind: KindSpec,
    /// Condition of the edge from the parent; ignored for the root.
    pub condition: Formula,
}

impl NodeDecl {
    pub fn new(id: &str, parent: Option<&str>, kind: KindSpec) -> Self {
        NodeDecl {
            id: id.to_owned(),
            label: id.to_owned(),
            parent: parent.map(str::to_owned),
            kind,
            condition: Formula::truth(),
        }
    }

    pub fn label(mut self, label: &str) -> Self {
        self.label = label.to_owned();
        self
    }

    pub fn condition(mut self, condition: Formula) -> Self {
        self.condition = condition;
        self
    }
}

#[derive(Clone, Debug)]
pub struct TscNode {
    pub id: String,
    pub label: String,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub lower: usize,
    pub upper: usize,
    pub condition: Formula,
}

/// A named, ancestor-closed node subset.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Projection {
    pub name: String,
    pub nodes: BTreeSet<String>,
}

#[derive(Debug, Error)]
pub enum TscError {
    #[error("node `{0}` is declared more than once")]
    DuplicateNode(String),
    #[error("node `{node}` refers to unknown parent `{parent}`")]
    UnknownParent { node: String, parent: String },
    #[error("classifier has no root node")]
    NoRoot,
    #[error("classifier has more than one root: `{0}` and `{1}`")]
    MultipleRoots(String, String),
    #[error("node `{0}` is part of a parent cycle")]
    Cycle(String),
    #[error("node `{node}` has bounds {lower}..{upper} but {children} children")]
    Bounds {
        node: String,
        lower: usize,
        upper: usize,
        children: usize,
    },
    #[error("edge condition of node `{node}` is not closed (free variables {vars:?})")]
    OpenCondition { node: String, vars: Vec<String> },
    #[error("edge condition of node `{node}`: {source}")]
    Condition {
        node: String,
        #[source]
        source: ParseError,
    },
    #[error("edge condition of node `{node}`: {source}")]
    Logic {
        node: String,
        #[source]
        source: LogicError,
    },
    #[error("invalid kind `{kind}` for node `{node}`")]
    Kind { node: String, kind: String },
    #[error("node `{0}` is declared as a leaf but has children")]
    LeafWithChildren(String),
    #[error("classifier file: {0}")]
    File(String),
    #[error("projection `{name}`: {message}")]
    Projection { name: String, message: String },
    #[error("unknown projection `{0}`")]
    UnknownProjection(String),
}

/// A scenario class: the node indices it contains.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ScenarioClass(BTreeSet<usize>);

impl ScenarioClass {
    pub fn new(nodes: impl IntoIterator<Item = usize>) -> Self {
        ScenarioClass(nodes.into_iter().collect())
    }

    pub fn contains(&self, node: usize) -> bool {
        self.0.contains(&node)
    }

    pub fn nodes(&self) -> &BTreeSet<usize> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Tree-based scenario classifier.
#[derive(Clone, Debug)]
pub struct Tsc {
    pub name: String,
    nodes: Vec<TscNode>,
    index: BTreeMap<String, usize>,
    projections: Vec<Projection>,
}

impl Tsc {
    /// Builds and validates a classifier. Node order is kept; children are
    /// ordered by declaration.
    pub fn new(name: &str, decls: Vec<NodeDecl>) -> Result<Tsc, TscError> {
        let mut index = BTreeMap::new();
        for (k, d) in decls.iter().enumerate() {
            if index.insert(d.id.clone(), k).is_some() {
                return Err(TscError::DuplicateNode(d.id.clone()));
            }
        }
        let mut root = None;
        let mut parents = Vec::with_capacity(decls.len());
        for d in &decls {
            let parent = match &d.parent {
                None => {
                    if let Some(r) = root {
                        let first: &NodeDecl = &decls[r];
                        return Err(TscError::MultipleRoots(first.id.clone(), d.id.clone()));
                    }
                    root = Some(index[&d.id]);
                    None
                }
                Some(p) => Some(*index.get(p).ok_or_else(|| TscError::UnknownParent {
                    node: d.id.clone(),
                    parent: p.clone(),
                })?),
            };
            parents.push(parent);
        }
        let root = root.ok_or(TscError::NoRoot)?;
        // Every node must reach the root.
        for (k, d) in decls.iter().enumerate() {
            let mut at = k;
            for _ in 0..=decls.len() {
                match parents[at] {
                    None => break,
                    Some(p) => at = p,
                }
            }
            if at != root {
                return Err(TscError::Cycle(d.id.clone()));
            }
        }
        let mut children = vec![Vec::new(); decls.len()];
        for (k, p) in parents.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(k);
            }
        }
        let mut nodes: Vec<TscNode> = Vec::with_capacity(decls.len());
        for (k, d) in decls.into_iter().enumerate() {
            let (lower, upper) = d.kind.bounds(children[k].len());
            nodes.push(TscNode {
                id: d.id,
                label: d.label,
                parent: parents[k],
                children: std::mem::take(&mut children[k]),
                lower,
                upper,
                condition: if parents[k].is_none() {
                    Formula::truth()
                } else {
                    d.condition
                },
            });
        }
        // Put the root first so that index 0 is always the root.
        if root != 0 {
            let order: Vec<usize> = std::iter::once(root)
                .chain((0..nodes.len()).filter(|k| *k != root))
                .collect();
            nodes = reorder(nodes, &order);
            index = nodes.iter().enumerate().map(|(k, n)| (n.id.clone(), k)).collect();
        }
        let tsc = Tsc {
            name: name.to_owned(),
            nodes,
            index,
            projections: Vec::new(),
        };
        tsc.validate()?;
        Ok(tsc)
    }

    fn validate(&self) -> Result<(), TscError> {
        for n in &self.nodes {
            if !(n.lower <= n.upper && n.upper <= n.children.len()) {
                return Err(TscError::Bounds {
                    node: n.id.clone(),
                    lower: n.lower,
                    upper: n.upper,
                    children: n.children.len(),
                });
            }
            let free = n.condition.free_vars();
            if !free.is_empty() {
                return Err(TscError::OpenCondition {
                    node: n.id.clone(),
                    vars: free.into_iter().collect(),
                });
            }
            n.condition.check(&BTreeSet::new()).map_err(|source| TscError::Logic {
                node: n.id.clone(),
                source,
            })?;
        }
        Ok(())
    }

    /// Reads a classifier document; edge conditions are formulas that may use
    /// the definitions in `lib`.
    pub fn from_toml(text: &str, lib: &Library) -> Result<Tsc, TscError> {
        let doc: FileDoc = toml::from_str(text).map_err(|e| TscError::File(e.to_string()))?;
        let has_children: BTreeSet<&str> = doc.node.iter().filter_map(|n| n.parent.as_deref()).collect();
        let mut decls = Vec::with_capacity(doc.node.len());
        for n in &doc.node {
            let kind = match &n.kind {
                None => KindSpec::Leaf,
                Some(k) => KindSpec::parse(k).ok_or_else(|| TscError::Kind {
                    node: n.id.clone(),
                    kind: k.clone(),
                })?,
            };
            if kind == KindSpec::Leaf && has_children.contains(n.id.as_str()) {
                return Err(TscError::LeafWithChildren(n.id.clone()));
            }
            let condition = match &n.condition {
                None => Formula::truth(),
                Some(text) => lib.formula(text).map_err(|source| TscError::Condition {
                    node: n.id.clone(),
                    source,
                })?,
            };
            decls.push(NodeDecl {
                id: n.id.clone(),
                label: n.label.clone().unwrap_or_else(|| n.id.clone()),
                parent: n.parent.clone(),
                kind,
                condition,
            });
        }
        let mut tsc = Tsc::new(&doc.name, decls)?;
        for p in &doc.projection {
            let nodes = tsc.resolve_projection(&p.name, &p.full, &p.partial)?;
            tsc.projections.push(Projection {
                name: p.name.clone(),
                nodes,
            });
        }
        Ok(tsc)
    }

    /// Node set made of the given complete subtrees and single nodes, plus
    /// all their ancestors.
    pub fn resolve_projection(
        &self,
        name: &str,
        full: &[String],
        partial: &[String],
    ) -> Result<BTreeSet<String>, TscError> {
        let mut set = BTreeSet::new();
        let lookup = |id: &String| {
            self.index_of(id).ok_or_else(|| TscError::Projection {
                name: name.to_owned(),
                message: format!("unknown node `{id}`"),
            })
        };
        for id in full {
            let k = lookup(id)?;
            set.extend(self.subtree(k));
        }
        for id in partial {
            set.insert(lookup(id)?);
        }
        for k in set.clone() {
            set.extend(self.ancestors(k));
        }
        Ok(set.into_iter().map(|k| self.nodes[k].id.clone()).collect())
    }

    pub fn add_projection(&mut self, projection: Projection) -> Result<(), TscError> {
        self.project(&projection.nodes).map_err(|e| TscError::Projection {
            name: projection.name.clone(),
            message: e.to_string(),
        })?;
        self.projections.push(projection);
        Ok(())
    }

    pub fn projections(&self) -> &[Projection] {
        &self.projections
    }

    pub fn projection(&self, name: &str) -> Option<&Projection> {
        self.projections.iter().find(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn nodes(&self) -> &[TscNode] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> &TscNode {
        &self.nodes[k]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn kind(&self, k: usize) -> NodeKind {
        let n = &self.nodes[k];
        let c = n.children.len();
        match (n.lower, n.upper) {
            (0, 0) if c == 0 => NodeKind::Leaf,
            (l, u) if l == c && u == c => NodeKind::All,
            (1, 1) => NodeKind::Exclusive,
            (0, u) if u == c => NodeKind::Optional,
            (l, u) => NodeKind::Bounded(l, u),
        }
    }

    /// `k` and all its descendants, in pre-order.
    pub fn subtree(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![k];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    /// Proper ancestors of `k`, nearest first.
    pub fn ancestors(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut at = self.nodes[k].parent;
        while let Some(p) = at {
            out.push(p);
            at = self.nodes[p].parent;
        }
        out
    }

    /// Whether `a` is a proper ancestor of `b`.
    pub fn is_ancestor(&self, a: usize, b: usize) -> bool {
        self.ancestors(b).contains(&a)
    }

    /// Node ids of a class, in node order.
    pub fn class_ids<'a>(&'a self, class: &ScenarioClass) -> Vec<&'a str> {
        class.0.iter().map(|k| self.nodes[*k].id.as_str()).collect()
    }

    pub fn class_from_ids<S: AsRef<str>>(&self, ids: &[S]) -> Option<ScenarioClass> {
        ids.iter()
            .map(|id| self.index_of(id.as_ref()))
            .collect::<Option<BTreeSet<_>>>()
            .map(ScenarioClass)
    }

    /// Whether `class` contains the root, is closed under parents and
    /// respects every bound.
    pub fn is_valid_class(&self, class: &ScenarioClass) -> bool {
        if !class.contains(self.root()) {
            return false;
        }
        class.0.iter().all(|k| {
            let n = match self.nodes.get(*k) {
                Some(n) => n,
                None => return false,
            };
            let parent_ok = n.parent.is_none_or(|p| class.contains(p));
            let taken = n.children.iter().filter(|c| class.contains(**c)).count();
            parent_ok && n.lower <= taken && taken <= n.upper
        })
    }

    /// Number of scenario classes: the sum over admissible child subsets of
    /// the product of the children's sizes.
    pub fn size(&self) -> BigUint {
        self.node_size(self.root())
    }

    pub fn node_size(&self, k: usize) -> BigUint {
        let n = &self.nodes[k];
        // by_count[j]: sum over child subsets of size j of the product of sizes
        let mut by_count = vec![BigUint::zero(); n.children.len() + 1];
        by_count[0] = BigUint::one();
        for (done, c) in n.children.iter().enumerate() {
            let s = self.node_size(*c);
            for j in (1..=done + 1).rev() {
                let add = &by_count[j - 1] * &s;
                by_count[j] += add;
            }
        }
        by_count[n.lower..=n.upper].iter().sum()
    }

    /// Calls `f` with every scenario class, in a deterministic order, until
    /// it breaks.
    pub fn for_each_class(&self, mut f: impl FnMut(&ScenarioClass) -> ControlFlow<()>) {
        let mut acc = Vec::new();
        let _ = self.walk(self.root(), &mut acc, &mut |nodes: &mut Vec<usize>| {
            f(&ScenarioClass(nodes.iter().copied().collect()))
        });
    }

    fn walk(
        &self,
        q: usize,
        acc: &mut Vec<usize>,
        k: &mut dyn FnMut(&mut Vec<usize>) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        let mark = acc.len();
        acc.push(q);
        let n = &self.nodes[q];
        for size in n.lower..=n.upper {
            let mut combo: Vec<usize> = (0..size).collect();
            loop {
                let picked: Vec<usize> = combo.iter().map(|i| n.children[*i]).collect();
                self.walk_list(&picked, acc, k)?;
                if !next_combination(&mut combo, n.children.len()) {
                    break;
                }
            }
        }
        acc.truncate(mark);
        ControlFlow::Continue(())
    }

    fn walk_list(
        &self,
        list: &[usize],
        acc: &mut Vec<usize>,
        k: &mut dyn FnMut(&mut Vec<usize>) -> ControlFlow<()>,
    ) -> ControlFlow<()> {
        match list.split_first() {
            None => k(acc),
            Some((first, rest)) => self.walk(*first, acc, &mut |acc: &mut Vec<usize>| self.walk_list(rest, acc, k)),
        }
    }

    /// All scenario classes, or the first `cap` of them.
    pub fn enumerate(&self, cap: Option<usize>) -> Enumeration {
        let mut classes = Vec::new();
        let mut truncated = false;
        self.for_each_class(|c| {
            if cap.is_some_and(|cap| classes.len() >= cap) {
                truncated = true;
                return ControlFlow::Break(());
            }
            classes.push(c.clone());
            ControlFlow::Continue(())
        });
        Enumeration { classes, truncated }
    }

    /// Sub-classifier induced by an ancestor-closed node set containing the
    /// root. Bounds are clamped to the remaining children:
    /// `upper' = min(upper, |children'|)`, `lower' = min(lower, upper')`.
    pub fn project(&self, ids: &BTreeSet<String>) -> Result<Tsc, TscError> {
        let keep: BTreeSet<usize> = ids
            .iter()
            .map(|id| {
                self.index_of(id).ok_or_else(|| TscError::Projection {
                    name: self.name.clone(),
                    message: format!("unknown node `{id}`"),
                })
            })
            .collect::<Result<_, _>>()?;
        if !keep.contains(&self.root()) {
            return Err(TscError::Projection {
                name: self.name.clone(),
                message: "node set does not contain the root".into(),
            });
        }
        for k in &keep {
            if let Some(p) = self.nodes[*k].parent {
                if !keep.contains(&p) {
                    return Err(TscError::Projection {
                        name: self.name.clone(),
                        message: format!(
                            "node set is not closed under parents: `{}` lacks `{}`",
                            self.nodes[*k].id, self.nodes[p].id
                        ),
                    });
                }
            }
        }
        let order: Vec<usize> = (0..self.nodes.len()).filter(|k| keep.contains(k)).collect();
        let remap: BTreeMap<usize, usize> = order.iter().enumerate().map(|(new, old)| (*old, new)).collect();
        let nodes: Vec<TscNode> = order
            .iter()
            .map(|old| {
                let n = &self.nodes[*old];
                let children: Vec<usize> = n.children.iter().filter_map(|c| remap.get(c).copied()).collect();
                let upper = n.upper.min(children.len());
                TscNode {
                    id: n.id.clone(),
                    label: n.label.clone(),
                    parent: n.parent.map(|p| remap[&p]),
                    lower: n.lower.min(upper),
                    upper,
                    children,
                    condition: n.condition.clone(),
                }
            })
            .collect();
        let index = nodes.iter().enumerate().map(|(k, n)| (n.id.clone(), k)).collect();
        Ok(Tsc {
            name: self.name.clone(),
            nodes,
            index,
            projections: Vec::new(),
        })
    }

    /// Projection by name; `"full"` is the identity unless the file
    /// defines it.
    pub fn project_named(&self, name: &str) -> Result<Tsc, TscError> {
        match self.projection(name) {
            Some(p) => {
                let mut t = self.project(&p.nodes)?;
                t.name = format!("{}/{}", self.name, p.name);
                Ok(t)
            }
            None if name == "full" => Ok(self.clone()),
            None => Err(TscError::UnknownProjection(name.to_owned())),
        }
    }
}

fn reorder(nodes: Vec<TscNode>, order: &[usize]) -> Vec<TscNode> {
    let pos: BTreeMap<usize, usize> = order.iter().enumerate().map(|(new, old)| (*old, new)).collect();
    let mut slots: Vec<Option<TscNode>> = nodes.into_iter().map(Some).collect();
    order
        .iter()
        .map(|old| {
            let mut n = slots[*old].take().expect("order is a permutation");
            n.parent = n.parent.map(|p| pos[&p]);
            n.children = n.children.iter().map(|c| pos[c]).collect();
            n
        })
        .collect()
}

/// Advances `combo` (strictly increasing indices below `n`) to the next
/// combination in lexicographic order.
fn next_combination(combo: &mut [usize], n: usize) -> bool {
    let k = combo.len();
    for i in (0..k).rev() {
        if combo[i] < n - k + i {
            combo[i] += 1;
            for j in i + 1..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[derive(Clone, Debug)]
pub struct Enumeration {
    pub classes: Vec<ScenarioClass>,
    /// Set when the cap stopped the enumeration early.
    pub truncated: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileDoc {
    name: String,
    #[serde(default)]
    node: Vec<FileNode>,
    #[serde(default)]
    projection: Vec<FileProjection>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileNode {
    id: String,
    label: Option<String>,
    parent: Option<String>,
    kind: Option<String>,
    condition: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FileProjection {
    name: String,
    #[serde(default)]
    full: Vec<String>,
    #[serde(default)]
    partial: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClassifyError {
    #[error("node `{node}` has {satisfied} satisfied children, outside its bounds {lower}..{upper}")]
    Bounds {
        node: String,
        satisfied: usize,
        lower: usize,
        upper: usize,
    },
    #[error("evaluation failed: {0}")]
    Eval(#[from] LogicError),
}

/// Evaluates classifier edges against segments.
pub struct Classifier<'t> {
    tsc: &'t Tsc,
    /// Compiled edge conditions; `None` for always-true edges.
    edges: Vec<Option<Evaluator>>,
    lazy: bool,
    tie_break: bool,
}

impl<'t> Classifier<'t> {
    pub fn new(tsc: &'t Tsc) -> Result<Self, TscError> {
        let edges = tsc
            .nodes
            .iter()
            .map(|n| {
                if matches!(&n.condition, Formula::Pred(Rel::True, _)) {
                    Ok(None)
                } else {
                    Evaluator::new(&n.condition)
                        .map(Some)
                        .map_err(|source| TscError::Logic {
                            node: n.id.clone(),
                            source,
                        })
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Classifier {
            tsc,
            edges,
            lazy: false,
            tie_break: false,
        })
    }

    pub fn tsc(&self) -> &'t Tsc {
        self.tsc
    }

    /// Only evaluate edges below nodes already in the class.
    pub fn lazy(mut self, on: bool) -> Self {
        self.lazy = on;
        self
    }

    /// When a node has more satisfied children than its upper bound, keep
    /// the first declared ones instead of failing.
    pub fn tie_break(mut self, on: bool) -> Self {
        self.tie_break = on;
        self
    }

    fn edge(&self, k: usize, trace: &TemporalStructure, map: &StaticMap) -> Result<bool, LogicError> {
        match &self.edges[k] {
            None => Ok(true),
            Some(ev) => ev.satisfies(trace, map),
        }
    }

    /// Truth value of every edge condition on the segment, evaluated at
    /// index 0 with the empty valuation.
    pub fn edge_values(&self, trace: &TemporalStructure, map: &StaticMap) -> Result<Vec<bool>, LogicError> {
        (0..self.tsc.len()).map(|k| self.edge(k, trace, map)).collect()
    }

    pub fn classify(&self, trace: &TemporalStructure, map: &StaticMap) -> Result<ScenarioClass, ClassifyError> {
        if self.lazy {
            let mut err = None;
            let class = self.fixed_point(|k| match self.edge(k, trace, map) {
                Ok(b) => b,
                Err(e) => {
                    err.get_or_insert(e);
                    false
                }
            });
            if let Some(e) = err {
                return Err(e.into());
            }
            class
        } else {
            let sat = self.edge_values(trace, map)?;
            self.fixed_point(|k| sat[k])
        }
    }

    /// Class for given edge values.
    pub fn classify_edges(&self, satisfied: &[bool]) -> Result<ScenarioClass, ClassifyError> {
        self.fixed_point(|k| satisfied[k])
    }

    /// Grows the class from the root along satisfied edges and checks the
    /// bounds of every node reached.
    fn fixed_point(&self, mut sat: impl FnMut(usize) -> bool) -> Result<ScenarioClass, ClassifyError> {
        let mut class = BTreeSet::new();
        let mut stack = vec![self.tsc.root()];
        while let Some(q) = stack.pop() {
            class.insert(q);
            let n = &self.tsc.nodes[q];
            let mut taken: Vec<usize> = n.children.iter().copied().filter(|c| sat(*c)).collect();
            if self.tie_break && taken.len() > n.upper {
                taken.truncate(n.upper);
            }
            if taken.len() < n.lower || taken.len() > n.upper {
                return Err(ClassifyError::Bounds {
                    node: n.id.clone(),
                    satisfied: taken.len(),
                    lower: n.lower,
                    upper: n.upper,
                });
            }
            stack.extend(taken.into_iter().rev());
        }
        Ok(ScenarioClass(class))
    }

    /// Classifies every segment in parallel. Results keep the input order.
    pub fn classify_all(&self, segments: &[Segment]) -> Classification {
        let results: Vec<Result<ScenarioClass, ClassifyError>> =
            segments.par_iter().map(|s| self.classify(&s.trace, &s.map)).collect();
        Classification::from_results(results)
    }
}

/// Per-segment classification results and the set of observed classes.
#[derive(Clone, Debug)]
pub struct Classification {
    pub results: Vec<Result<ScenarioClass, ClassifyError>>,
    pub observed: BTreeSet<ScenarioClass>,
}

impl Classification {
    pub fn from_results(results: Vec<Result<ScenarioClass, ClassifyError>>) -> Self {
        let observed = results.iter().filter_map(|r| r.as_ref().ok()).cloned().collect();
        Classification { results, observed }
    }

    /// Successfully classified segments' classes, in input order.
    pub fn classes(&self) -> Vec<ScenarioClass> {
        self.results.iter().filter_map(|r| r.as_ref().ok()).cloned().collect()
    }

    pub fn error_count(&self) -> usize {
        self.results.iter().filter(|r| r.is_err()).count()
    }

    /// Restricts classes of `full` to the nodes of its projection `part`.
    /// A restricted class that breaks a bound of `part` becomes an error.
    pub fn project(&self, full: &Tsc, part: &Tsc) -> Classification {
        let results = self
            .results
            .iter()
            .map(|r| {
                let class = r.as_ref().map_err(Clone::clone)?;
                let ids: Vec<&str> = full
                    .class_ids(class)
                    .into_iter()
                    .filter(|id| part.index_of(id).is_some())
                    .collect();
                let cut = part.class_from_ids(&ids).expect("ids come from the projection");
                match part.bound_violation(&cut) {
                    Some(e) => Err(e),
                    None => Ok(cut),
                }
            })
            .collect();
        Classification::from_results(results)
    }
}

impl Tsc {
    /// First node of an ancestor-closed class whose taken children break
    /// its bounds.
    fn bound_violation(&self, class: &ScenarioClass) -> Option<ClassifyError> {
        class.0.iter().find_map(|k| {
            let n = &self.nodes[*k];
            let taken = n.children.iter().filter(|c| class.contains(**c)).count();
            (taken < n.lower || taken > n.upper).then(|| ClassifyError::Bounds {
                node: n.id.clone(),
                satisfied: taken,
                lower: n.lower,
                upper: n.upper,
            })
        })
    }
}
