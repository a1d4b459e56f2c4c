//! Production evaluator.
//!
//! A formula is compiled once into an arena with numbered variable slots and
//! can then be run against any number of traces. Within one run, results of
//! temporal subformulas are memoized per (node, index, values of the node's
//! free variables). Existential quantifiers of the shape
//! `∃x: G(x) ∧ ψ`, where `G` is a kind test, only range over the elements
//! satisfying `G`.

use std::collections::{BTreeSet, HashMap};

use rustc_hash::FxBuildHasher;

use super::{Formula, Fraction, Interval, LogicError, Term, Valuation, Var};
use crate::scene::{ActorKind, StaticMap, TemporalStructure, Time};
use crate::signature::{Func, Rel, SceneView, Value};

/// Quantifier domain of `phi` over `trace`: every actor of the trace's
/// universe, every lane and road of the map, and every constant occurring
/// in `phi`. The domain is the same at every index.
pub fn active_domain(trace: &TemporalStructure, map: &StaticMap, phi: &Formula) -> Vec<Value> {
    let mut out: BTreeSet<Value> = trace.actor_ids().map(Value::Actor).collect();
    out.extend(map.lane_ids().map(Value::Lane));
    out.extend(map.road_ids().map(Value::Road));
    out.extend(phi.constants());
    out.into_iter().collect()
}

/// Evaluates `term` at scene `index` under `valuation`.
pub fn eval_term(
    term: &Term,
    valuation: &Valuation,
    trace: &TemporalStructure,
    map: &StaticMap,
    index: usize,
) -> Result<Value, LogicError> {
    check_index(trace, index)?;
    let view = SceneView { trace, map, index };
    eval_term_rec(term, valuation, view)
}

fn eval_term_rec(term: &Term, valuation: &Valuation, view: SceneView<'_>) -> Result<Value, LogicError> {
    Ok(match term {
        Term::Const(c) => {
            check_value(*c, view.trace, view.map)?;
            *c
        }
        Term::Var(x) => {
            let v = valuation.get(x).ok_or_else(|| LogicError::UnboundVariable(x.clone()))?;
            check_value(v, view.trace, view.map)?;
            v
        }
        Term::Apply(f, args) => {
            if args.len() != f.arity() {
                return Err(LogicError::Arity {
                    symbol: f.name().to_owned(),
                    expected: f.arity(),
                    got: args.len(),
                });
            }
            let vals = args
                .iter()
                .map(|a| eval_term_rec(a, valuation, view))
                .collect::<Result<Vec<_>, _>>()?;
            f.apply(view, &vals)
        }
    })
}

/// `(trace, valuation, index) ⊨ phi`.
pub fn evaluate(
    phi: &Formula,
    trace: &TemporalStructure,
    map: &StaticMap,
    valuation: &Valuation,
    index: usize,
) -> Result<bool, LogicError> {
    let vars: Vec<Var> = valuation.vars().into_iter().collect();
    Evaluator::with_params(phi, &vars)?.eval(trace, map, valuation, index)
}

/// Truth value of `phi` at every index, sharing one cache.
pub fn evaluate_all(
    phi: &Formula,
    trace: &TemporalStructure,
    map: &StaticMap,
    valuation: &Valuation,
) -> Result<Vec<bool>, LogicError> {
    let vars: Vec<Var> = valuation.vars().into_iter().collect();
    Evaluator::with_params(phi, &vars)?.eval_all(trace, map, valuation)
}

/// `trace ⊨ phi` for a closed formula: evaluation at index 0 with the empty
/// valuation.
pub fn satisfies(trace: &TemporalStructure, map: &StaticMap, phi: &Formula) -> Result<bool, LogicError> {
    Evaluator::new(phi)?.satisfies(trace, map)
}

fn check_index(trace: &TemporalStructure, index: usize) -> Result<(), LogicError> {
    if index >= trace.len() {
        return Err(LogicError::IndexOutOfRange {
            index,
            len: trace.len(),
        });
    }
    Ok(())
}

fn check_value(v: Value, trace: &TemporalStructure, map: &StaticMap) -> Result<(), LogicError> {
    let ok = match v {
        Value::Actor(a) => trace.has_actor(a),
        Value::Lane(l) => map.has_lane(l),
        Value::Road(r) => map.has_road(r),
        _ => true,
    };
    if ok {
        Ok(())
    } else {
        Err(LogicError::Dangling(format!("{v:?}")))
    }
}

type NodeId = u32;
type Slot = u16;

/// Memo keys hold at most this many free-variable values; nodes with more
/// free variables are not cached.
const MEMO_WIDTH: usize = 4;

#[derive(Debug)]
enum CTerm {
    Const(Value),
    Slot(Slot),
    Apply(Func, Box<[CTerm]>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Guard {
    None,
    Vehicle,
    Pedestrian,
    Actor,
    Lane,
    Road,
}

#[derive(Debug)]
enum Node {
    Pred(Rel, Box<[CTerm]>),
    Not(NodeId),
    Or(NodeId, NodeId),
    Exists { slot: Slot, guard: Guard, body: NodeId },
    Bind { term: CTerm, slot: Slot, body: NodeId },
    Next(Interval, NodeId),
    Until(Interval, NodeId, NodeId),
    MinPrev(Interval, Fraction, NodeId),
}

/// A type-checked formula compiled for repeated evaluation.
#[derive(Debug)]
pub struct Evaluator {
    nodes: Vec<Node>,
    /// Free slots of temporal nodes, when few enough to key the cache.
    memo_slots: Vec<Option<Box<[Slot]>>>,
    root: NodeId,
    params: Vec<Var>,
    slot_count: usize,
    constants: Vec<Value>,
}

impl Evaluator {
    /// Compiles a closed formula.
    pub fn new(phi: &Formula) -> Result<Self, LogicError> {
        let free = phi.free_vars();
        if !free.is_empty() {
            return Err(LogicError::NotClosed(free.into_iter().collect()));
        }
        Self::with_params(phi, &[])
    }

    /// Compiles a formula whose free variables are among `params`.
    pub fn with_params(phi: &Formula, params: &[Var]) -> Result<Self, LogicError> {
        phi.check(&params.iter().cloned().collect())?;
        let mut c = Compiler {
            nodes: Vec::new(),
            free: Vec::new(),
            scope: params.iter().enumerate().map(|(i, v)| (v.clone(), i as Slot)).collect(),
            next_slot: params.len() as Slot,
        };
        let root = c.formula(phi);
        let memo_slots = c
            .free
            .into_iter()
            .zip(&c.nodes)
            .map(|(free, node)| match node {
                Node::Next(..) | Node::Until(..) | Node::MinPrev(..) if free.len() <= MEMO_WIDTH => {
                    Some(free.into_iter().collect::<Vec<_>>().into_boxed_slice())
                }
                _ => None,
            })
            .collect();
        Ok(Evaluator {
            nodes: c.nodes,
            memo_slots,
            root,
            params: params.to_vec(),
            slot_count: c.next_slot as usize,
            constants: phi.constants().into_iter().collect(),
        })
    }

    pub fn eval(
        &self,
        trace: &TemporalStructure,
        map: &StaticMap,
        valuation: &Valuation,
        index: usize,
    ) -> Result<bool, LogicError> {
        check_index(trace, index)?;
        let mut run = self.start(trace, map, valuation)?;
        Ok(run.node(self.root, index))
    }

    pub fn satisfies(&self, trace: &TemporalStructure, map: &StaticMap) -> Result<bool, LogicError> {
        self.eval(trace, map, &Valuation::new(), 0)
    }

    pub fn eval_all(
        &self,
        trace: &TemporalStructure,
        map: &StaticMap,
        valuation: &Valuation,
    ) -> Result<Vec<bool>, LogicError> {
        let mut run = self.start(trace, map, valuation)?;
        Ok((0..trace.len()).map(|i| run.node(self.root, i)).collect())
    }

    fn start<'a>(
        &'a self,
        trace: &'a TemporalStructure,
        map: &'a StaticMap,
        valuation: &Valuation,
    ) -> Result<Run<'a>, LogicError> {
        for c in &self.constants {
            check_value(*c, trace, map)?;
        }
        let mut env = vec![Value::Undefined; self.slot_count];
        for (slot, name) in self.params.iter().enumerate() {
            let v = valuation
                .get(name)
                .ok_or_else(|| LogicError::UnboundVariable(name.clone()))?;
            check_value(v, trace, map)?;
            env[slot] = v;
        }
        Ok(Run {
            ev: self,
            trace,
            map,
            domains: Domains::new(trace, map, &self.constants),
            env,
            memo: HashMap::default(),
            times: trace.times(),
        })
    }
}

struct Compiler {
    nodes: Vec<Node>,
    free: Vec<BTreeSet<Slot>>,
    scope: Vec<(Var, Slot)>,
    next_slot: Slot,
}

impl Compiler {
    fn push(&mut self, node: Node, free: BTreeSet<Slot>) -> NodeId {
        self.nodes.push(node);
        self.free.push(free);
        (self.nodes.len() - 1) as NodeId
    }

    fn lookup(&self, x: &str) -> Slot {
        self.scope
            .iter()
            .rev()
            .find(|(v, _)| v == x)
            .map(|(_, s)| *s)
            .expect("variables are checked before compilation")
    }

    fn term(&self, t: &Term, free: &mut BTreeSet<Slot>) -> CTerm {
        match t {
            Term::Const(c) => CTerm::Const(*c),
            Term::Var(x) => {
                let s = self.lookup(x);
                free.insert(s);
                CTerm::Slot(s)
            }
            Term::Apply(f, args) => CTerm::Apply(*f, args.iter().map(|a| self.term(a, free)).collect()),
        }
    }

    fn free_of(&self, id: NodeId) -> BTreeSet<Slot> {
        self.free[id as usize].clone()
    }

    fn bind_slot(&mut self, x: &str) -> Slot {
        let s = self.next_slot;
        self.next_slot += 1;
        self.scope.push((x.to_owned(), s));
        s
    }

    fn formula(&mut self, phi: &Formula) -> NodeId {
        match phi {
            Formula::Pred(rel, args) => {
                let mut free = BTreeSet::new();
                let args = args.iter().map(|a| self.term(a, &mut free)).collect();
                self.push(Node::Pred(*rel, args), free)
            }
            Formula::Not(inner) => match inner.as_ref() {
                Formula::Not(a) => self.formula(a),
                _ => {
                    let a = self.formula(inner);
                    let free = self.free_of(a);
                    self.push(Node::Not(a), free)
                }
            },
            Formula::Or(a, b) => {
                let (a, b) = (self.formula(a), self.formula(b));
                let free = &self.free_of(a) | &self.free_of(b);
                self.push(Node::Or(a, b), free)
            }
            Formula::Exists(x, body) => {
                let (guard, body) = split_guard(x, body);
                let slot = self.bind_slot(x);
                let b = match guard {
                    Guard::None => self.formula(body),
                    // `body` is the `rest` of `¬(¬G(x) ∨ rest)`; the node evaluates `¬rest`.
                    _ => self.formula(&Formula::not(body.clone())),
                };
                self.scope.pop();
                let mut free = self.free_of(b);
                free.remove(&slot);
                self.push(Node::Exists { slot, guard, body: b }, free)
            }
            Formula::Bind(t, x, body) => {
                let mut free = BTreeSet::new();
                let term = self.term(t, &mut free);
                let slot = self.bind_slot(x);
                let b = self.formula(body);
                self.scope.pop();
                let mut inner = self.free_of(b);
                inner.remove(&slot);
                free.extend(inner);
                self.push(Node::Bind { term, slot, body: b }, free)
            }
            Formula::Next(i, a) => {
                let a = self.formula(a);
                let free = self.free_of(a);
                self.push(Node::Next(*i, a), free)
            }
            Formula::Until(i, a, b) => {
                let (a, b) = (self.formula(a), self.formula(b));
                let free = &self.free_of(a) | &self.free_of(b);
                self.push(Node::Until(*i, a, b), free)
            }
            Formula::MinPrevalence(i, p, a) => {
                let a = self.formula(a);
                let free = self.free_of(a);
                self.push(Node::MinPrev(*i, *p, a), free)
            }
        }
    }
}

/// Recognizes `¬(¬G(x) ∨ rest)` and returns `(G, rest)`.
fn split_guard<'f>(x: &str, body: &'f Formula) -> (Guard, &'f Formula) {
    if let Formula::Not(inner) = body {
        if let Formula::Or(lhs, rest) = inner.as_ref() {
            if let Formula::Not(g) = lhs.as_ref() {
                if let Formula::Pred(rel, args) = g.as_ref() {
                    if let [Term::Var(y)] = args.as_slice() {
                        if y == x {
                            let guard = match rel {
                                Rel::IsVehicle => Guard::Vehicle,
                                Rel::IsPedestrian => Guard::Pedestrian,
                                Rel::IsActor => Guard::Actor,
                                Rel::IsLane => Guard::Lane,
                                Rel::IsRoad => Guard::Road,
                                _ => Guard::None,
                            };
                            if guard != Guard::None {
                                return (guard, rest);
                            }
                        }
                    }
                }
            }
        }
    }
    (Guard::None, body)
}

struct Domains {
    all: Vec<Value>,
    vehicles: Vec<Value>,
    pedestrians: Vec<Value>,
    actors: Vec<Value>,
    lanes: Vec<Value>,
    roads: Vec<Value>,
}

impl Domains {
    fn new(trace: &TemporalStructure, map: &StaticMap, constants: &[Value]) -> Self {
        let actors: Vec<Value> = trace.actor_ids().map(Value::Actor).collect();
        let of_kind = |k: ActorKind| {
            trace
                .actor_ids()
                .filter(|a| trace.actor_kind(*a) == k)
                .map(Value::Actor)
                .collect::<Vec<_>>()
        };
        let lanes: Vec<Value> = map.lane_ids().map(Value::Lane).collect();
        let roads: Vec<Value> = map.road_ids().map(Value::Road).collect();
        let mut all: BTreeSet<Value> = actors.iter().chain(&lanes).chain(&roads).copied().collect();
        all.extend(constants.iter().copied());
        Domains {
            all: all.into_iter().collect(),
            vehicles: of_kind(ActorKind::Vehicle),
            pedestrians: of_kind(ActorKind::Pedestrian),
            actors,
            lanes,
            roads,
        }
    }

    fn get(&self, g: Guard) -> &[Value] {
        match g {
            Guard::None => &self.all,
            Guard::Vehicle => &self.vehicles,
            Guard::Pedestrian => &self.pedestrians,
            Guard::Actor => &self.actors,
            Guard::Lane => &self.lanes,
            Guard::Road => &self.roads,
        }
    }
}

type MemoKey = (NodeId, u32, [Value; MEMO_WIDTH]);

struct Run<'a> {
    ev: &'a Evaluator,
    trace: &'a TemporalStructure,
    map: &'a StaticMap,
    domains: Domains,
    env: Vec<Value>,
    memo: HashMap<MemoKey, bool, FxBuildHasher>,
    times: &'a [Time],
}

impl Run<'_> {
    fn view(&self, index: usize) -> SceneView<'_> {
        SceneView {
            trace: self.trace,
            map: self.map,
            index,
        }
    }

    fn term(&self, t: &CTerm, i: usize) -> Value {
        match t {
            CTerm::Const(c) => *c,
            CTerm::Slot(s) => self.env[*s as usize],
            CTerm::Apply(f, args) => {
                let mut buf = [Value::Undefined; 2];
                for (k, a) in args.iter().enumerate() {
                    buf[k] = self.term(a, i);
                }
                f.apply(self.view(i), &buf[..args.len()])
            }
        }
    }

    fn key(&self, id: NodeId, i: usize) -> Option<MemoKey> {
        let slots = self.ev.memo_slots[id as usize].as_ref()?;
        let mut vals = [Value::Undefined; MEMO_WIDTH];
        for (k, s) in slots.iter().enumerate() {
            vals[k] = self.env[*s as usize];
        }
        Some((id, i as u32, vals))
    }

    fn diff(&self, j: usize, i: usize) -> Time {
        self.times[j] - self.times[i]
    }

    fn node(&mut self, id: NodeId, i: usize) -> bool {
        match &self.ev.nodes[id as usize] {
            Node::Pred(rel, args) => {
                let mut buf = [Value::Undefined; 2];
                for (k, a) in args.iter().enumerate() {
                    buf[k] = self.term(a, i);
                }
                rel.holds(self.view(i), &buf[..args.len()])
            }
            Node::Not(a) => !self.node(*a, i),
            Node::Or(a, b) => {
                let (a, b) = (*a, *b);
                self.node(a, i) || self.node(b, i)
            }
            &Node::Exists { slot, guard, body } => {
                let saved = self.env[slot as usize];
                let mut found = false;
                for k in 0..self.domains.get(guard).len() {
                    self.env[slot as usize] = self.domains.get(guard)[k];
                    if self.node(body, i) {
                        found = true;
                        break;
                    }
                }
                self.env[slot as usize] = saved;
                found
            }
            Node::Bind { term, slot, body } => {
                let (slot, body) = (*slot, *body);
                let v = self.term(term, i);
                let saved = std::mem::replace(&mut self.env[slot as usize], v);
                let r = self.node(body, i);
                self.env[slot as usize] = saved;
                r
            }
            Node::Next(..) | Node::Until(..) | Node::MinPrev(..) => self.temporal(id, i),
        }
    }

    fn temporal(&mut self, id: NodeId, i: usize) -> bool {
        let key = self.key(id, i);
        if let Some(k) = &key {
            if let Some(r) = self.memo.get(k) {
                return *r;
            }
        }
        let r = match self.ev.nodes[id as usize] {
            Node::Next(iv, a) => i + 1 < self.trace.len() && iv.contains(self.diff(i + 1, i)) && self.node(a, i + 1),
            Node::Until(iv, a, b) if iv.is_unbounded() && key.is_some() => return self.until_unbounded(id, a, b, i),
            Node::Until(iv, a, b) => self.until(iv, a, b, i),
            Node::MinPrev(iv, p, a) => self.min_prev(iv, p, a, i),
            _ => unreachable!("temporal() is only called on temporal nodes"),
        };
        if let Some(k) = key {
            self.memo.insert(k, r);
        }
        r
    }

    fn until(&mut self, iv: Interval, a: NodeId, b: NodeId, i: usize) -> bool {
        let unbounded = iv.is_unbounded();
        for j in i..self.trace.len() {
            if !unbounded {
                let d = self.diff(j, i);
                if iv.exceeded_by(d) {
                    return false;
                }
                if iv.contains(d) && self.node(b, j) {
                    return true;
                }
            } else if self.node(b, j) {
                return true;
            }
            if !self.node(a, j) {
                return false;
            }
        }
        false
    }

    /// Unbounded until with a cache key: every start index passed over
    /// shares the result, so all of them are recorded.
    fn until_unbounded(&mut self, id: NodeId, a: NodeId, b: NodeId, i: usize) -> bool {
        let n = self.trace.len();
        let mut j = i;
        let result = loop {
            if j >= n {
                break false;
            }
            if j > i {
                if let Some(r) = self.key(id, j).and_then(|k| self.memo.get(&k).copied()) {
                    break r;
                }
            }
            if self.node(b, j) {
                break true;
            }
            if !self.node(a, j) {
                break false;
            }
            j += 1;
        };
        for k in i..=j.min(n - 1) {
            if let Some(key) = self.key(id, k) {
                self.memo.insert(key, result);
            }
        }
        result
    }

    fn min_prev(&mut self, iv: Interval, p: Fraction, a: NodeId, i: usize) -> bool {
        let n = self.trace.len();
        let (lo, hi) = if iv.is_unbounded() {
            (i, n)
        } else {
            let lower = Time::from_integer(iv.lower() as i64);
            let lo = i + self.times[i..].partition_point(|t| *t - self.times[i] < lower);
            let hi = match iv.upper() {
                None => n,
                Some(u) => {
                    let upper = Time::from_integer(u as i64);
                    i + self.times[i..].partition_point(|t| *t - self.times[i] < upper)
                }
            };
            (lo, hi.max(lo))
        };
        let total = (hi - lo) as u64;
        // Smallest satisfied count that reaches p.
        let need = (u128::from(p.numer()) * u128::from(total)).div_ceil(u128::from(p.denom())) as u64;
        if need == 0 {
            return true;
        }
        let mut sat = 0u64;
        for j in lo..hi {
            if self.node(a, j) {
                sat += 1;
                if sat >= need {
                    return true;
                }
            }
            if sat + ((hi - j - 1) as u64) < need {
                return false;
            }
        }
        false
    }
}
