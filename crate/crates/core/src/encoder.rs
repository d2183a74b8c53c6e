//! Compiles d-separation/d-connection relations, model-space restrictions,
//! and background knowledge into CNF over the edge variables.
//!
//! For every conditioning/intervention context, walk-segment variables state
//! that a connecting walk of an exact length with given terminal marks exists
//! between a pair of nodes. Length-1 segments are edges guarded by the
//! intervention set; longer segments decompose at the node adjacent to their
//! source: an inner node entered and left through arrowheads is a collider
//! and must be conditioned on, any other combination must not be. A relation
//! variable is then the disjunction of all segment variables between its
//! endpoints up to the length bound, and gets asserted with the relation's
//! polarity.
//!
//! Segment definitions are emitted on demand: asserting a relation defines
//! only the segments its disjunction can reach, which keeps the working
//! formula far smaller than the full per-context grid without changing its
//! models over the edge variables.

use crate::cnf::{
    add_equiv_disjunction, CnfFormula, Literal, PathKind, PropVar, VarKey, VarRole, VarTable,
};
use crate::graph::{
    max_path_length, GraphError, Mark, MixedGraph, NodeId, NodeSet, Relation, TestSpec,
};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("constraint references node index {0} outside the universe")]
    UnknownNode(u32),
    #[error("unsupported path constraint: {0}")]
    UnsupportedPath(String),
    #[error("graph has {got} nodes, encoder universe has {expected}")]
    WrongUniverse { expected: usize, got: usize },
}

/// Walk-segment key within one (C, J) context. Keys are per ordered pair:
/// a segment variable's walks may revisit any node except the segment's own
/// target, so the orientation carries meaning and endpoints are never
/// swapped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct SegKey {
    x: NodeId,
    y: NodeId,
    len: u32,
    kind: PathKind,
}

fn seg(x: NodeId, y: NodeId, len: u32, mx: Mark, my: Mark) -> SegKey {
    let kind = match (mx, my) {
        (Mark::Tail, Mark::Head) => PathKind::TailHead,
        (Mark::Head, Mark::Tail) => PathKind::HeadTail,
        (Mark::Head, Mark::Head) => PathKind::HeadHead,
        (Mark::Tail, Mark::Tail) => PathKind::TailTail,
    };
    SegKey { x, y, len, kind }
}

fn terminal_marks(kind: PathKind) -> (Mark, Mark) {
    match kind {
        PathKind::TailHead => (Mark::Tail, Mark::Head),
        PathKind::HeadTail => (Mark::Head, Mark::Tail),
        PathKind::HeadHead => (Mark::Head, Mark::Head),
        PathKind::TailTail => (Mark::Tail, Mark::Tail),
    }
}

/// Decomposition of a segment of length >= 2 at the inner node adjacent to
/// its source. Each term pairs a length-1 segment with a suffix segment
/// toward the same target; the inner node's collider status against `c`
/// restricts the mark combinations. Inner nodes never equal the target (a
/// walk reaching the target early is a shorter segment).
fn decompose(n: usize, key: SegKey, c: NodeSet) -> Vec<(SegKey, SegKey)> {
    debug_assert!(key.len >= 2);
    let (mx, my) = terminal_marks(key.kind);
    let (x, y) = (key.x, key.y);
    let mut terms = Vec::new();
    for zi in 0..n as u32 {
        let z = NodeId(zi);
        if z == x || z == y {
            continue;
        }
        // first-edge options compatible with the mark at the source
        let firsts: &[(SegKey, Mark)] = &match mx {
            Mark::Tail => [(seg(x, z, 1, Mark::Tail, Mark::Head), Mark::Head)].to_vec(),
            Mark::Head => [
                (seg(x, z, 1, Mark::Head, Mark::Tail), Mark::Tail),
                (seg(x, z, 1, Mark::Head, Mark::Head), Mark::Head),
            ]
            .to_vec(),
        };
        for &(first, mark_at_z) in firsts {
            if c.contains(z) {
                // collider: both marks at z must be arrowheads
                if mark_at_z == Mark::Head {
                    terms.push((first, seg(z, y, key.len - 1, Mark::Head, my)));
                }
            } else {
                // non-collider: at least one mark at z must be a tail
                terms.push((first, seg(z, y, key.len - 1, Mark::Tail, my)));
                if mark_at_z == Mark::Tail {
                    terms.push((first, seg(z, y, key.len - 1, Mark::Head, my)));
                }
            }
        }
    }
    terms
}

/// Keys defined per length: all four shapes for every ordered pair.
fn keys_at_len(n: usize, len: u32) -> Vec<SegKey> {
    let mut keys = Vec::new();
    for xi in 0..n as u32 {
        for yi in 0..n as u32 {
            if xi != yi {
                for kind in [
                    PathKind::TailHead,
                    PathKind::HeadTail,
                    PathKind::HeadHead,
                    PathKind::TailTail,
                ] {
                    keys.push(SegKey { x: NodeId(xi), y: NodeId(yi), len, kind });
                }
            }
        }
    }
    keys
}

/// Per-context memo of segments known false from the intervention guards
/// alone (terms over them are dropped before any variable is allocated).
#[derive(Debug, Default)]
struct ContextState {
    false_memo: HashMap<SegKey, bool>,
}

/// Record of one compiled equivalence, kept so witness assignments can give
/// auxiliary and derived variables their defined values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DefRecord {
    lhs: Literal,
    terms: Vec<Vec<Literal>>,
    /// Parallel to `terms`: the auxiliary standing for a multi-literal term.
    auxes: Vec<Option<PropVar>>,
}

type RelKey = (NodeId, NodeId, NodeSet, NodeSet);

/// Background knowledge item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackgroundConstraint {
    DirectedEdge { x: NodeId, y: NodeId, present: bool },
    BidirectedEdge { x: NodeId, y: NodeId, present: bool },
    /// A directed path from `x` to `y` exists / does not exist.
    Ancestral { x: NodeId, y: NodeId, present: bool },
    /// A connecting walk (no conditioning, no intervention) from `x` to `y`
    /// through the given waypoints in order, of total length at most
    /// `max_len` (default: the walk-length bound), exists / does not exist.
    Path { x: NodeId, y: NodeId, waypoints: Vec<NodeId>, max_len: Option<u32>, present: bool },
}

/// Structural query over edge, ancestral and connection variables.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryExpr {
    DirEdge(NodeId, NodeId),
    BiEdge(NodeId, NodeId),
    Ancestral(NodeId, NodeId),
    Connected(TestSpec),
    /// A connecting walk through the waypoints in order exists (no
    /// conditioning, no intervention), within the length bound.
    Path { x: NodeId, y: NodeId, waypoints: Vec<NodeId>, max_len: Option<u32> },
    /// Exactly this graph: listed edges present, all others absent.
    ExactGraph(MixedGraph),
    Not(Box<QueryExpr>),
    And(Vec<QueryExpr>),
    Or(Vec<QueryExpr>),
}

/// Owns the working formula and variable table and performs all compilation.
#[derive(Debug)]
pub struct Encoder {
    n: usize,
    names: Vec<String>,
    pub table: VarTable,
    pub formula: CnfFormula,
    contexts: HashMap<(NodeSet, NodeSet), ContextState>,
    relations: HashMap<RelKey, u32>,
    asserted: HashSet<(RelKey, bool)>,
    defs: Vec<DefRecord>,
    sufficiency_done: bool,
    acyclicity_done: bool,
}

impl Encoder {
    /// Creates an encoder over the node universe, allocating edge variables
    /// eagerly (directed pairs in lexicographic order, then bidirected) so
    /// their ids are stable.
    pub fn new(names: Vec<String>) -> Encoder {
        let n = names.len();
        let mut table = VarTable::new();
        for x in 0..n as u32 {
            for y in 0..n as u32 {
                if x != y {
                    table.fresh_var(VarKey::DirEdge(NodeId(x), NodeId(y)));
                }
            }
        }
        for x in 0..n as u32 {
            for y in x + 1..n as u32 {
                table.fresh_var(VarKey::BiEdge(NodeId(x), NodeId(y)));
            }
        }
        let mut formula = CnfFormula::new();
        formula.ensure_var(PropVar(table.var_count().max(1)));
        Encoder {
            n,
            names,
            table,
            formula,
            contexts: HashMap::new(),
            relations: HashMap::new(),
            asserted: HashSet::new(),
            defs: Vec::new(),
            sufficiency_done: false,
            acyclicity_done: false,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn check_node(&self, v: NodeId) -> Result<(), EncodeError> {
        if v.index() < self.n {
            Ok(())
        } else {
            Err(EncodeError::UnknownNode(v.0))
        }
    }

    pub fn edge_var(&self, x: NodeId, y: NodeId) -> PropVar {
        self.table
            .lookup(&VarKey::DirEdge(x, y))
            .expect("edge variables are allocated eagerly")
    }

    pub fn bi_var(&self, x: NodeId, y: NodeId) -> PropVar {
        let (a, b) = if x < y { (x, y) } else { (y, x) };
        self.table
            .lookup(&VarKey::BiEdge(a, b))
            .expect("edge variables are allocated eagerly")
    }

    /// All directed then bidirected edge variables, in allocation order.
    pub fn edge_vars(&self) -> Vec<PropVar> {
        (1..=self.edge_var_count()).map(PropVar).collect()
    }

    pub fn edge_var_count(&self) -> u32 {
        (self.n * (self.n - 1) + self.n * (self.n - 1) / 2) as u32
    }

    /// Compiles `lhs <=> OR of conjunction terms` and records the definition.
    fn define(&mut self, lhs: Literal, terms: Vec<Vec<Literal>>) {
        let before_aux = self.table.var_count();
        add_equiv_disjunction(&mut self.formula, &mut self.table, lhs, &terms);
        // auxiliaries were allocated in term order for multi-literal terms
        let mut next_aux = before_aux + 1;
        let auxes: Vec<Option<PropVar>> = terms
            .iter()
            .map(|t| {
                if t.len() > 1 {
                    let v = PropVar(next_aux);
                    next_aux += 1;
                    Some(v)
                } else {
                    None
                }
            })
            .collect();
        debug_assert_eq!(next_aux - 1, self.table.var_count());
        debug_assert!(auxes
            .iter()
            .flatten()
            .all(|v| self.table.role(*v) == VarRole::Aux));
        self.formula.ensure_var(PropVar(self.table.var_count().max(1)));
        self.defs.push(DefRecord { lhs, terms, auxes });
    }

    /// Whether the segment is false for structural reasons (intervention
    /// guards cutting its length-1 bases), independent of the edge variables.
    fn seg_false(&mut self, key: SegKey, c: NodeSet, j: NodeSet) -> bool {
        let state = self.contexts.entry((c, j)).or_default();
        if let Some(&known) = state.false_memo.get(&key) {
            return known;
        }
        let value = if key.len == 1 {
            match key.kind {
                PathKind::TailTail => true,
                PathKind::TailHead => j.contains(key.y),
                PathKind::HeadTail => j.contains(key.x),
                PathKind::HeadHead => j.contains(key.x) || j.contains(key.y),
            }
        } else {
            decompose(self.n, key, c)
                .into_iter()
                .all(|(a, b)| self.seg_false(a, c, j) || self.seg_false(b, c, j))
        };
        self.contexts.get_mut(&(c, j)).unwrap().false_memo.insert(key, value);
        value
    }

    /// Returns the segment's variable, emitting its defining equivalence on
    /// first use. Definitions pull in only the segments their terms can
    /// reach; structurally false segments compile to a forcing unit clause.
    fn define_seg(&mut self, key: SegKey, c: NodeSet, j: NodeSet) -> PropVar {
        let var_key = VarKey::Path { x: key.x, y: key.y, len: key.len, kind: key.kind, c, j };
        if let Some(v) = self.table.lookup(&var_key) {
            return v;
        }
        if self.seg_false(key, c, j) {
            let v = self.table.fresh_var(var_key);
            self.define(Literal::pos(v), vec![]);
            return v;
        }
        if key.len == 1 {
            let edge_lit = match key.kind {
                PathKind::TailHead => Literal::pos(self.edge_var(key.x, key.y)),
                PathKind::HeadTail => Literal::pos(self.edge_var(key.y, key.x)),
                PathKind::HeadHead => Literal::pos(self.bi_var(key.x, key.y)),
                PathKind::TailTail => unreachable!("length-1 tail-tail is always false"),
            };
            let v = self.table.fresh_var(var_key);
            self.define(Literal::pos(v), vec![vec![edge_lit]]);
            return v;
        }
        let pairs: Vec<(SegKey, SegKey)> = decompose(self.n, key, c)
            .into_iter()
            .filter(|&(a, b)| !self.seg_false(a, c, j) && !self.seg_false(b, c, j))
            .collect();
        let terms: Vec<Vec<Literal>> = pairs
            .into_iter()
            .map(|(a, b)| {
                vec![
                    Literal::pos(self.define_seg(a, c, j)),
                    Literal::pos(self.define_seg(b, c, j)),
                ]
            })
            .collect();
        debug_assert!(!terms.is_empty(), "non-false segment must keep a term");
        let v = self.table.fresh_var(var_key);
        self.define(Literal::pos(v), terms);
        v
    }

    /// Defines the segment variables of the context `(c, j)` for all pairs,
    /// shapes and lengths up to `l_max`. Segments already defined are never
    /// re-emitted; a second identical call adds zero clauses.
    pub fn encode_context(&mut self, c: NodeSet, j: NodeSet, l_max: u32) {
        debug_assert!(l_max >= 1);
        for len in 1..=l_max {
            for key in keys_at_len(self.n, len) {
                self.define_seg(key, c, j);
            }
        }
    }

    fn relation_key(spec: &TestSpec) -> RelKey {
        spec.canonical_key()
    }

    /// Defines (once) the variable stating that the test's endpoints are
    /// d-connected, as the disjunction of all segment variables between them
    /// up to the walk-length bound of the test.
    pub fn define_relation_var(&mut self, spec: &TestSpec) -> Result<PropVar, EncodeError> {
        self.check_node(spec.x)?;
        self.check_node(spec.y)?;
        let all = NodeSet::full(self.n);
        if !spec.conditioning.union(spec.intervention).is_subset_of(all) {
            return Err(EncodeError::UnknownNode(
                spec.conditioning.union(spec.intervention).minus(all).iter().next().unwrap().0,
            ));
        }
        let key = Self::relation_key(spec);
        let var = self.table.fresh_var(VarKey::Relation {
            x: key.0,
            y: key.1,
            c: key.2,
            j: key.3,
        });
        if self.relations.contains_key(&key) {
            return Ok(var);
        }
        let l_max = max_path_length(self.n, spec) as u32;
        let (c, j) = (spec.conditioning, spec.intervention);
        let mut disjuncts: Vec<Vec<Literal>> = Vec::new();
        for len in 1..=l_max {
            for raw in [
                seg(key.0, key.1, len, Mark::Tail, Mark::Head),
                seg(key.0, key.1, len, Mark::Head, Mark::Tail),
                seg(key.0, key.1, len, Mark::Head, Mark::Head),
                seg(key.0, key.1, len, Mark::Tail, Mark::Tail),
            ] {
                // false shapes still get their (unit-forced) variable so the
                // relation's walk shapes are all addressable, but they do not
                // bloat the disjunction
                let seg_var = self.define_seg(raw, c, j);
                if !self.seg_false(raw, c, j) {
                    disjuncts.push(vec![Literal::pos(seg_var)]);
                }
            }
        }
        self.define(Literal::pos(var), disjuncts);
        self.relations.insert(key, l_max);
        Ok(var)
    }

    /// Encodes the relation and asserts its polarity. Asserting the same
    /// relation twice adds nothing; asserting the opposite polarity adds one
    /// unit clause (and makes the formula unsatisfiable).
    pub fn assert_relation(&mut self, r: &Relation) -> Result<(), EncodeError> {
        let var = self.define_relation_var(&r.spec)?;
        let key = Self::relation_key(&r.spec);
        if self.asserted.insert((key, r.connected)) {
            self.formula.add_clause(vec![Literal::with_sign(var, r.connected)]);
        }
        Ok(())
    }

    /// No latent confounders: a unit clause against every bidirected edge.
    pub fn constrain_sufficiency(&mut self) {
        if self.sufficiency_done {
            return;
        }
        self.sufficiency_done = true;
        for x in 0..self.n as u32 {
            for y in x + 1..self.n as u32 {
                let v = self.bi_var(NodeId(x), NodeId(y));
                self.formula.add_clause(vec![Literal::neg(v)]);
            }
        }
    }

    /// Acyclicity: for every pair, a directed path from `x` to `y` and one
    /// from `y` to `x` cannot both exist. Directed-path existence for an
    /// ordered pair is d-connection with an empty conditioning set while
    /// intervening on the source.
    pub fn constrain_acyclicity(&mut self) -> Result<(), EncodeError> {
        if self.acyclicity_done {
            return Ok(());
        }
        self.acyclicity_done = true;
        for x in 0..self.n as u32 {
            for y in x + 1..self.n as u32 {
                let fwd = self.ancestral_var(NodeId(x), NodeId(y))?;
                let bwd = self.ancestral_var(NodeId(y), NodeId(x))?;
                self.formula.add_clause(vec![Literal::neg(fwd), Literal::neg(bwd)]);
            }
        }
        Ok(())
    }

    /// Variable for "a directed path from `x` to `y` exists".
    pub fn ancestral_var(&mut self, x: NodeId, y: NodeId) -> Result<PropVar, EncodeError> {
        let spec = TestSpec::new(x, y, NodeSet::EMPTY, NodeSet::singleton(x))?;
        self.define_relation_var(&spec)
    }

    pub fn add_background(&mut self, k: &BackgroundConstraint) -> Result<(), EncodeError> {
        match k {
            BackgroundConstraint::DirectedEdge { x, y, present } => {
                self.check_node(*x)?;
                self.check_node(*y)?;
                if x == y {
                    return Err(EncodeError::Graph(GraphError::SelfLoop(x.0)));
                }
                let v = self.edge_var(*x, *y);
                self.formula.add_clause(vec![Literal::with_sign(v, *present)]);
            }
            BackgroundConstraint::BidirectedEdge { x, y, present } => {
                self.check_node(*x)?;
                self.check_node(*y)?;
                if x == y {
                    return Err(EncodeError::Graph(GraphError::SelfLoop(x.0)));
                }
                let v = self.bi_var(*x, *y);
                self.formula.add_clause(vec![Literal::with_sign(v, *present)]);
            }
            BackgroundConstraint::Ancestral { x, y, present } => {
                let v = self.ancestral_var(*x, *y)?;
                self.formula.add_clause(vec![Literal::with_sign(v, *present)]);
            }
            BackgroundConstraint::Path { x, y, waypoints, max_len, present } => {
                let lit = self.path_constraint_lit(*x, *y, waypoints, *max_len)?;
                let root = Literal::with_sign(lit.var, *present == !lit.negated);
                self.formula.add_clause(vec![root]);
            }
        }
        Ok(())
    }

    /// Compiles "a connecting walk from `x` to `y` through `waypoints` in
    /// order, of total length <= `max_len`, exists in the unconditioned,
    /// unmanipulated graph" to a literal. Waypoints restrict which inner node
    /// each sub-segment may pass through; with an empty conditioning set the
    /// waypoints themselves must be traversed as non-colliders.
    fn path_constraint_lit(
        &mut self,
        x: NodeId,
        y: NodeId,
        waypoints: &[NodeId],
        max_len: Option<u32>,
    ) -> Result<Literal, EncodeError> {
        self.check_node(x)?;
        self.check_node(y)?;
        for w in waypoints {
            self.check_node(*w)?;
        }
        let spec = TestSpec::new(x, y, NodeSet::EMPTY, NodeSet::EMPTY)?;
        let bound = max_path_length(self.n, &spec) as u32;
        let l_max = max_len.unwrap_or(bound);
        let k = waypoints.len() as u32;
        if k + 1 > l_max {
            return Err(EncodeError::UnsupportedPath(format!(
                "{} waypoints need walks of at least {} edges, bound is {}",
                k,
                k + 1,
                l_max
            )));
        }
        if waypoints.len() > 4 {
            return Err(EncodeError::UnsupportedPath(
                "at most 4 waypoints are supported".into(),
            ));
        }
        let points: Vec<NodeId> =
            std::iter::once(x).chain(waypoints.iter().copied()).chain(std::iter::once(y)).collect();
        for pair in points.windows(2) {
            if pair[0] == pair[1] {
                return Err(EncodeError::UnsupportedPath(
                    "consecutive waypoints must be distinct".into(),
                ));
            }
        }
        let (c, j) = (NodeSet::EMPTY, NodeSet::EMPTY);

        // every split of a total length <= l_max into k+1 positive parts
        let mut compositions: Vec<Vec<u32>> = Vec::new();
        let parts = k as usize + 1;
        let mut cur = vec![1u32; parts];
        loop {
            if cur.iter().sum::<u32>() <= l_max {
                compositions.push(cur.clone());
            }
            // odometer over part lengths, each in 1..=l_max - k
            let mut i = 0;
            loop {
                if i == parts {
                    break;
                }
                cur[i] += 1;
                if cur[i] <= l_max - k {
                    break;
                }
                cur[i] = 1;
                i += 1;
            }
            if i == parts {
                break;
            }
        }

        let mut terms: Vec<Vec<Literal>> = Vec::new();
        for comp in &compositions {
            // terminal marks per segment: outer ends free, junction pairs may
            // not both be arrowheads (waypoints are unconditioned inner nodes)
            let marks = [Mark::Tail, Mark::Head];
            let mut choice = vec![0usize; 2 * parts];
            'outer: loop {
                let mut junction_ok = true;
                for i in 0..parts - 1 {
                    let end_prev = marks[choice[2 * i + 1]];
                    let start_next = marks[choice[2 * i + 2]];
                    if end_prev == Mark::Head && start_next == Mark::Head {
                        junction_ok = false;
                        break;
                    }
                }
                if junction_ok {
                    let mut raws = Vec::with_capacity(parts);
                    let mut ok = true;
                    for i in 0..parts {
                        let raw = seg(
                            points[i],
                            points[i + 1],
                            comp[i],
                            marks[choice[2 * i]],
                            marks[choice[2 * i + 1]],
                        );
                        if self.seg_false(raw, c, j) {
                            ok = false;
                            break;
                        }
                        raws.push(raw);
                    }
                    if ok {
                        let lits: Vec<Literal> = raws
                            .into_iter()
                            .map(|raw| Literal::pos(self.define_seg(raw, c, j)))
                            .collect();
                        if !terms.contains(&lits) {
                            terms.push(lits);
                        }
                    }
                }
                // advance the mark choice odometer
                let mut i = 0;
                loop {
                    if i == choice.len() {
                        break 'outer;
                    }
                    choice[i] += 1;
                    if choice[i] < 2 {
                        break;
                    }
                    choice[i] = 0;
                    i += 1;
                }
            }
        }
        let root = self.table.fresh_derived();
        self.define(Literal::pos(root), terms);
        Ok(Literal::pos(root))
    }

    /// Compiles a structural query to a literal over the working formula.
    pub fn compile_query(&mut self, q: &QueryExpr) -> Result<Literal, EncodeError> {
        match q {
            QueryExpr::DirEdge(x, y) => {
                self.check_node(*x)?;
                self.check_node(*y)?;
                Ok(Literal::pos(self.edge_var(*x, *y)))
            }
            QueryExpr::BiEdge(x, y) => {
                self.check_node(*x)?;
                self.check_node(*y)?;
                Ok(Literal::pos(self.bi_var(*x, *y)))
            }
            QueryExpr::Ancestral(x, y) => Ok(Literal::pos(self.ancestral_var(*x, *y)?)),
            QueryExpr::Connected(spec) => Ok(Literal::pos(self.define_relation_var(spec)?)),
            QueryExpr::Path { x, y, waypoints, max_len } => {
                self.path_constraint_lit(*x, *y, waypoints, *max_len)
            }
            QueryExpr::ExactGraph(g) => {
                if g.n_nodes() != self.n {
                    return Err(EncodeError::WrongUniverse {
                        expected: self.n,
                        got: g.n_nodes(),
                    });
                }
                let mut term = Vec::new();
                for x in 0..self.n as u32 {
                    for y in 0..self.n as u32 {
                        if x != y {
                            let v = self.edge_var(NodeId(x), NodeId(y));
                            term.push(Literal::with_sign(
                                v,
                                g.has_directed(NodeId(x), NodeId(y)),
                            ));
                        }
                    }
                }
                for x in 0..self.n as u32 {
                    for y in x + 1..self.n as u32 {
                        let v = self.bi_var(NodeId(x), NodeId(y));
                        term.push(Literal::with_sign(
                            v,
                            g.has_bidirected(NodeId(x), NodeId(y)),
                        ));
                    }
                }
                let root = self.table.fresh_derived();
                self.define(Literal::pos(root), vec![term]);
                Ok(Literal::pos(root))
            }
            QueryExpr::Not(inner) => Ok(!self.compile_query(inner)?),
            QueryExpr::And(items) => {
                let lits: Vec<Literal> = items
                    .iter()
                    .map(|i| self.compile_query(i))
                    .collect::<Result<_, _>>()?;
                if lits.len() == 1 {
                    return Ok(lits[0]);
                }
                let root = self.table.fresh_derived();
                self.define(Literal::pos(root), vec![lits]);
                Ok(Literal::pos(root))
            }
            QueryExpr::Or(items) => {
                let lits: Vec<Literal> = items
                    .iter()
                    .map(|i| self.compile_query(i))
                    .collect::<Result<_, _>>()?;
                if lits.len() == 1 {
                    return Ok(lits[0]);
                }
                let root = self.table.fresh_derived();
                self.define(Literal::pos(root), lits.into_iter().map(|l| vec![l]).collect());
                Ok(Literal::pos(root))
            }
        }
    }

    /// The truth assignment induced by a concrete graph: edge variables from
    /// the graph, segment and relation variables by their defining semantics,
    /// auxiliary and derived variables by their recorded definitions.
    pub fn assignment_of(&self, g: &MixedGraph) -> Result<Vec<bool>, EncodeError> {
        if g.n_nodes() != self.n {
            return Err(EncodeError::WrongUniverse { expected: self.n, got: g.n_nodes() });
        }
        let mut assignment = vec![false; self.table.var_count() as usize];
        for x in 0..self.n as u32 {
            for y in 0..self.n as u32 {
                if x != y {
                    assignment[self.edge_var(NodeId(x), NodeId(y)).index()] =
                        g.has_directed(NodeId(x), NodeId(y));
                }
            }
        }
        for x in 0..self.n as u32 {
            for y in x + 1..self.n as u32 {
                assignment[self.bi_var(NodeId(x), NodeId(y)).index()] =
                    g.has_bidirected(NodeId(x), NodeId(y));
            }
        }
        // segment values by semantics, memoized per context
        let mut memo: HashMap<(NodeSet, NodeSet), HashMap<SegKey, bool>> = HashMap::new();
        for (key, var) in self.table.entries() {
            if let VarKey::Path { x, y, len, kind, c, j } = *key {
                let seg_key = SegKey { x, y, len, kind };
                let value =
                    eval_seg(self.n, g, seg_key, c, j, memo.entry((c, j)).or_default());
                assignment[var.index()] = value;
            }
        }
        for (&(x, y, c, j), &l_max) in self.relations.iter() {
            let ctx = memo.entry((c, j)).or_default();
            let mut connected = false;
            'scan: for len in 1..=l_max {
                for raw in [
                    seg(x, y, len, Mark::Tail, Mark::Head),
                    seg(x, y, len, Mark::Head, Mark::Tail),
                    seg(x, y, len, Mark::Head, Mark::Head),
                    seg(x, y, len, Mark::Tail, Mark::Tail),
                ] {
                    if eval_seg(self.n, g, raw, c, j, ctx) {
                        connected = true;
                        break 'scan;
                    }
                }
            }
            let var = self
                .table
                .lookup(&VarKey::Relation { x, y, c, j })
                .expect("defined relation has a variable");
            assignment[var.index()] = connected;
        }
        // definitions in creation order: auxiliaries first, then derived roots
        for def in &self.defs {
            let mut any = false;
            for (term, aux) in def.terms.iter().zip(&def.auxes) {
                let value = term.iter().all(|l| l.eval(&assignment));
                if let Some(aux) = aux {
                    assignment[aux.index()] = value;
                }
                any |= value;
            }
            if self.table.role(def.lhs.var) == VarRole::Derived {
                assignment[def.lhs.var.index()] = any != def.lhs.negated;
            }
        }
        Ok(assignment)
    }

    pub fn context_count(&self) -> usize {
        self.contexts.len()
    }

    /// Serializes formula, table and bookkeeping into a plain data object.
    pub fn save(&self) -> SavedEngine {
        let mut contexts: Vec<(u64, u64)> =
            self.contexts.keys().map(|&(c, j)| (c.0, j.0)).collect();
        contexts.sort_unstable();
        let mut relations: Vec<(u32, u32, u64, u64, u32)> = self
            .relations
            .iter()
            .map(|(&(x, y, c, j), &l)| (x.0, y.0, c.0, j.0, l))
            .collect();
        relations.sort_unstable();
        let mut asserted: Vec<(u32, u32, u64, u64, bool)> = self
            .asserted
            .iter()
            .map(|&((x, y, c, j), p)| (x.0, y.0, c.0, j.0, p))
            .collect();
        asserted.sort_unstable();
        SavedEngine {
            version: 1,
            names: self.names.clone(),
            entries: self.table.to_entries(),
            derived_count: self.table.derived_count(),
            clauses: self
                .formula
                .clauses()
                .iter()
                .map(|c| c.iter().map(|l| l.to_dimacs()).collect())
                .collect(),
            contexts,
            relations,
            asserted,
            defs: self.defs.clone(),
            sufficiency_done: self.sufficiency_done,
            acyclicity_done: self.acyclicity_done,
        }
    }

    pub fn restore(saved: SavedEngine) -> Result<Encoder, EncodeError> {
        let n = saved.names.len();
        let table = VarTable::from_entries(saved.entries, saved.derived_count);
        let mut formula = CnfFormula::new();
        formula.ensure_var(PropVar(table.var_count().max(1)));
        for clause in saved.clauses {
            formula.add_clause(clause.into_iter().map(Literal::from_dimacs).collect());
        }
        let mut contexts = HashMap::new();
        for (c, j) in saved.contexts {
            contexts.insert((NodeSet(c), NodeSet(j)), ContextState::default());
        }
        let relations = saved
            .relations
            .into_iter()
            .map(|(x, y, c, j, l)| ((NodeId(x), NodeId(y), NodeSet(c), NodeSet(j)), l))
            .collect();
        let asserted = saved
            .asserted
            .into_iter()
            .map(|(x, y, c, j, p)| ((NodeId(x), NodeId(y), NodeSet(c), NodeSet(j)), p))
            .collect();
        Ok(Encoder {
            n,
            names: saved.names,
            table,
            formula,
            contexts,
            relations,
            asserted,
            defs: saved.defs,
            sufficiency_done: saved.sufficiency_done,
            acyclicity_done: saved.acyclicity_done,
        })
    }
}

/// Semantic segment evaluation on a concrete graph: the same decomposition
/// as emission, run as a boolean recursion with memoization.
fn eval_seg(
    n: usize,
    g: &MixedGraph,
    key: SegKey,
    c: NodeSet,
    j: NodeSet,
    memo: &mut HashMap<SegKey, bool>,
) -> bool {
    if let Some(&v) = memo.get(&key) {
        return v;
    }
    let value = if key.len == 1 {
        match key.kind {
            PathKind::TailTail => false,
            PathKind::TailHead => !j.contains(key.y) && g.has_directed(key.x, key.y),
            PathKind::HeadTail => !j.contains(key.x) && g.has_directed(key.y, key.x),
            PathKind::HeadHead => {
                !j.contains(key.x) && !j.contains(key.y) && g.has_bidirected(key.x, key.y)
            }
        }
    } else {
        decompose(n, key, c)
            .into_iter()
            .any(|(a, b)| eval_seg(n, g, a, c, j, memo) && eval_seg(n, g, b, c, j, memo))
    };
    memo.insert(key, value);
    value
}

/// Serialized encoder state, enough to rebuild the working formula and keep
/// extending it (for queries against a finished run).
#[derive(Debug, Serialize, Deserialize)]
pub struct SavedEngine {
    pub version: u32,
    pub names: Vec<String>,
    pub entries: Vec<(VarKey, u32, bool)>,
    pub derived_count: u32,
    pub clauses: Vec<Vec<i32>>,
    pub contexts: Vec<(u64, u64)>,
    pub relations: Vec<(u32, u32, u64, u64, u32)>,
    pub asserted: Vec<(u32, u32, u64, u64, bool)>,
    pub defs: Vec<DefRecord>,
    pub sufficiency_done: bool,
    pub acyclicity_done: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sat::{backbone, CdclSolver, SatBackend, SolveStatus};

    fn feed(enc: &Encoder) -> CdclSolver {
        let mut s = CdclSolver::new();
        s.ensure_vars(enc.table.var_count());
        for c in enc.formula.clauses() {
            s.add_clause(c);
        }
        s
    }

    fn two_node_spec(c: &[u32], j: &[u32], connected: bool) -> Relation {
        Relation {
            spec: TestSpec::new(
                NodeId(0),
                NodeId(1),
                c.iter().map(|&v| NodeId(v)).collect(),
                j.iter().map(|&v| NodeId(v)).collect(),
            )
            .unwrap(),
            connected,
        }
    }

    #[test]
    fn separation_on_two_nodes_forbids_every_edge() {
        let mut enc = Encoder::new(vec!["x".into(), "y".into()]);
        enc.assert_relation(&two_node_spec(&[], &[], false)).unwrap();
        let mut s = feed(&enc);
        let bb = backbone(&mut s, &enc.edge_vars()).unwrap();
        for v in enc.edge_vars() {
            assert_eq!(bb.fixed.get(&v), Some(&false), "edge var {v:?}");
        }
    }

    #[test]
    fn connection_under_source_intervention_implies_the_directed_edge() {
        let mut enc = Encoder::new(vec!["x".into(), "y".into()]);
        enc.assert_relation(&two_node_spec(&[], &[0], true)).unwrap();
        let mut s = feed(&enc);
        let bb = backbone(&mut s, &enc.edge_vars()).unwrap();
        let fwd = enc.edge_var(NodeId(0), NodeId(1));
        assert_eq!(bb.fixed.get(&fwd), Some(&true));
        // the other two edges stay free
        assert!(bb.free.contains(&enc.edge_var(NodeId(1), NodeId(0))));
        assert!(bb.free.contains(&enc.bi_var(NodeId(0), NodeId(1))));
        // cross-check against the 8 two-node graphs
        for bits in 0..8u32 {
            let mut g = MixedGraph::unnamed(2);
            if bits & 1 != 0 {
                g.add_directed(NodeId(0), NodeId(1)).unwrap();
            }
            if bits & 2 != 0 {
                g.add_directed(NodeId(1), NodeId(0)).unwrap();
            }
            if bits & 4 != 0 {
                g.add_bidirected(NodeId(0), NodeId(1)).unwrap();
            }
            let a = enc.assignment_of(&g).unwrap();
            assert_eq!(enc.formula.eval(&a), bits & 1 != 0, "graph bits {bits}");
        }
    }

    #[test]
    fn double_intervention_forces_all_segments_false() {
        let mut enc = Encoder::new(vec!["x".into(), "y".into()]);
        let spec = two_node_spec(&[], &[0, 1], false).spec;
        enc.define_relation_var(&spec).unwrap();
        let c = NodeSet::EMPTY;
        let j = NodeSet(0b11);
        for kind in [PathKind::TailHead, PathKind::HeadTail, PathKind::HeadHead] {
            let key = VarKey::Path { x: NodeId(0), y: NodeId(1), len: 1, kind, c, j };
            let var = enc.table.lookup(&key).expect("segment var exists");
            let mut s = feed(&enc);
            let out = s.solve_under(&[Literal::pos(var)]).unwrap();
            assert_eq!(out.status, SolveStatus::Unsatisfiable, "{kind:?}");
        }
    }

    #[test]
    fn length_one_segment_forces_its_edge() {
        let mut enc = Encoder::new(vec!["x".into(), "y".into()]);
        enc.encode_context(NodeSet::EMPTY, NodeSet::EMPTY, 1);
        let key = VarKey::Path {
            x: NodeId(0),
            y: NodeId(1),
            len: 1,
            kind: PathKind::TailHead,
            c: NodeSet::EMPTY,
            j: NodeSet::EMPTY,
        };
        let var = enc.table.lookup(&key).unwrap();
        let mut s = feed(&enc);
        let edge = enc.edge_var(NodeId(0), NodeId(1));
        let out = s
            .solve_under(&[Literal::pos(var), Literal::neg(edge)])
            .unwrap();
        assert_eq!(out.status, SolveStatus::Unsatisfiable);
    }

    #[test]
    fn encode_context_is_idempotent() {
        let mut enc = Encoder::new(vec!["a".into(), "b".into(), "c".into()]);
        enc.encode_context(NodeSet::singleton(NodeId(2)), NodeSet::EMPTY, 2);
        let clauses = enc.formula.len();
        let vars = enc.table.var_count();
        enc.encode_context(NodeSet::singleton(NodeId(2)), NodeSet::EMPTY, 2);
        assert_eq!(enc.formula.len(), clauses);
        assert_eq!(enc.table.var_count(), vars);
    }

    #[test]
    fn reasserting_a_relation_adds_at_most_one_unit() {
        let mut enc = Encoder::new(vec!["x".into(), "y".into()]);
        let rel = two_node_spec(&[], &[], false);
        enc.assert_relation(&rel).unwrap();
        let clauses = enc.formula.len();
        enc.assert_relation(&rel).unwrap();
        assert_eq!(enc.formula.len(), clauses);
        enc.assert_relation(&two_node_spec(&[], &[], true)).unwrap();
        assert_eq!(enc.formula.len(), clauses + 1);
        let mut s = feed(&enc);
        assert_eq!(s.solve_under(&[]).unwrap().status, SolveStatus::Unsatisfiable);
    }

    #[test]
    fn sufficiency_adds_one_unit_per_pair() {
        let mut enc = Encoder::new(vec!["a".into(), "b".into(), "c".into()]);
        enc.constrain_sufficiency();
        assert_eq!(enc.formula.len(), 3);
        enc.constrain_sufficiency();
        assert_eq!(enc.formula.len(), 3);
    }

    #[test]
    fn acyclicity_rejects_two_cycles() {
        let mut enc = Encoder::new(vec!["x".into(), "y".into()]);
        enc.constrain_acyclicity().unwrap();
        let mut cyclic = MixedGraph::unnamed(2);
        cyclic.add_directed(NodeId(0), NodeId(1)).unwrap();
        cyclic.add_directed(NodeId(1), NodeId(0)).unwrap();
        let a = enc.assignment_of(&cyclic).unwrap();
        assert!(!enc.formula.eval(&a));

        let mut dag = MixedGraph::unnamed(2);
        dag.add_directed(NodeId(0), NodeId(1)).unwrap();
        let a = enc.assignment_of(&dag).unwrap();
        assert!(enc.formula.eval(&a));
    }

    #[test]
    fn background_edge_and_ancestral_constraints() {
        let mut enc = Encoder::new(vec!["x".into(), "y".into()]);
        enc.add_background(&BackgroundConstraint::DirectedEdge {
            x: NodeId(0),
            y: NodeId(1),
            present: true,
        })
        .unwrap();
        let mut s = feed(&enc);
        let bb = backbone(&mut s, &enc.edge_vars()).unwrap();
        assert_eq!(bb.fixed.get(&enc.edge_var(NodeId(0), NodeId(1))), Some(&true));

        // ancestral-absent plus a connection under source intervention is
        // contradictory
        let mut enc = Encoder::new(vec!["x".into(), "y".into()]);
        enc.add_background(&BackgroundConstraint::Ancestral {
            x: NodeId(0),
            y: NodeId(1),
            present: false,
        })
        .unwrap();
        enc.assert_relation(&two_node_spec(&[], &[0], true)).unwrap();
        let mut s = feed(&enc);
        assert_eq!(s.solve_under(&[]).unwrap().status, SolveStatus::Unsatisfiable);
    }

    #[test]
    fn witness_assignment_satisfies_own_oracle_formula() {
        use crate::graph::{oracle_relations, Experiment};
        // the four-node example graph with its full passive oracle
        let mut g = MixedGraph::new(
            ["x", "y", "z", "w"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        g.add_directed(NodeId(0), NodeId(2)).unwrap();
        g.add_directed(NodeId(1), NodeId(2)).unwrap();
        g.add_directed(NodeId(2), NodeId(3)).unwrap();
        let rels =
            oracle_relations(&g, &[Experiment::passive(g.all_nodes())], None).unwrap();
        let mut enc = Encoder::new(g.names().to_vec());
        for r in &rels {
            enc.assert_relation(r).unwrap();
        }
        let a = enc.assignment_of(&g).unwrap();
        assert!(
            enc.formula.eval(&a),
            "violated: {:?}",
            enc.formula.first_violated(&a)
        );
    }

    #[test]
    fn soundness_exhaustive_on_three_nodes_sample_specs() {
        // every graph on 3 nodes, a few contexts; the full sweep runs in the
        // acceptance suite
        let specs = [
            TestSpec::new(NodeId(0), NodeId(1), NodeSet::EMPTY, NodeSet::EMPTY).unwrap(),
            TestSpec::new(NodeId(0), NodeId(1), NodeSet::singleton(NodeId(2)), NodeSet::EMPTY)
                .unwrap(),
            TestSpec::new(NodeId(0), NodeId(2), NodeSet::EMPTY, NodeSet::singleton(NodeId(0)))
                .unwrap(),
            TestSpec::new(
                NodeId(1),
                NodeId(2),
                NodeSet::singleton(NodeId(0)),
                NodeSet(0b110),
            )
            .unwrap(),
        ];
        for spec in specs {
            let mut enc = Encoder::new(vec!["a".into(), "b".into(), "c".into()]);
            let var = enc.define_relation_var(&spec).unwrap();
            for g in crate::bruteforce::enumerate_graphs(3).unwrap() {
                let a = enc.assignment_of(&g).unwrap();
                assert!(enc.formula.eval(&a), "definitions violated on {g:?}");
                let oracle = g.d_connected(&spec).unwrap();
                assert_eq!(a[var.index()], oracle, "spec {spec:?} graph {g:?}");
            }
        }
    }

    #[test]
    fn demand_driven_definitions_stay_small() {
        // one relation pulls in far fewer segments than the full grid
        let names: Vec<String> = (0..8).map(|i| format!("n{i}")).collect();
        let mut enc = Encoder::new(names.clone());
        let spec =
            TestSpec::new(NodeId(0), NodeId(1), NodeSet::EMPTY, NodeSet::EMPTY).unwrap();
        enc.define_relation_var(&spec).unwrap();
        let lean = enc.table.var_count();
        let mut full = Encoder::new(names);
        full.encode_context(NodeSet::EMPTY, NodeSet::EMPTY, 12);
        assert!(lean * 3 < full.table.var_count(), "{lean} vs {}", full.table.var_count());
    }
}
