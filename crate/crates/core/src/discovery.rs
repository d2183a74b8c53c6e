//! The discovery loop: enumerate candidate tests by conditioning-set size,
//! prune tests whose outcome is already implied, encode the remaining oracle
//! answers, and read edge and ancestral statuses off the backbone of the
//! working formula. Also the post-run query engine over that formula.

use crate::cnf::{Literal, PropVar};
use crate::encoder::{BackgroundConstraint, EncodeError, Encoder, QueryExpr, SavedEngine};
use crate::graph::{
    Experiment, GraphError, MixedGraph, NodeId, NodeSet, Relation, TestSpec,
};
use crate::sat::{
    backbone, BackboneError, CdclSolver, ExternalSolver, SatBackend, SolveError, SolveStatus,
    SolverStats,
};
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Present,
    Absent,
    Unknown,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Present => "present",
            Status::Absent => "absent",
            Status::Unknown => "unknown",
        }
    }

    pub fn is_determined(self) -> bool {
        self != Status::Unknown
    }
}

/// Status of every candidate directed edge, bidirected edge, and (when
/// tracked) ancestral relation. Statuses only ever move from unknown to a
/// determinate value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSolution {
    n: usize,
    directed: Vec<Status>,
    bidirected: Vec<Status>,
    ancestral: Option<Vec<Status>>,
}

impl EdgeSolution {
    pub fn all_unknown(n: usize, track_ancestral: bool) -> EdgeSolution {
        EdgeSolution {
            n,
            directed: vec![Status::Unknown; n * n],
            bidirected: vec![Status::Unknown; n * (n - 1) / 2],
            ancestral: track_ancestral.then(|| vec![Status::Unknown; n * n]),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn tracks_ancestral(&self) -> bool {
        self.ancestral.is_some()
    }

    fn bi_index(&self, x: NodeId, y: NodeId) -> usize {
        let (a, b) = if x < y { (x.index(), y.index()) } else { (y.index(), x.index()) };
        // row-major upper triangle
        a * self.n - a * (a + 1) / 2 + (b - a - 1)
    }

    pub fn directed(&self, x: NodeId, y: NodeId) -> Status {
        self.directed[x.index() * self.n + y.index()]
    }

    pub fn bidirected(&self, x: NodeId, y: NodeId) -> Status {
        self.bidirected[self.bi_index(x, y)]
    }

    pub fn ancestral(&self, x: NodeId, y: NodeId) -> Status {
        self.ancestral.as_ref().expect("ancestral tracking enabled")
            [x.index() * self.n + y.index()]
    }

    pub fn set_directed(&mut self, x: NodeId, y: NodeId, s: Status) {
        let slot = &mut self.directed[x.index() * self.n + y.index()];
        debug_assert!(*slot == Status::Unknown || *slot == s, "status flip");
        *slot = s;
    }

    pub fn set_bidirected(&mut self, x: NodeId, y: NodeId, s: Status) {
        let idx = self.bi_index(x, y);
        let slot = &mut self.bidirected[idx];
        debug_assert!(*slot == Status::Unknown || *slot == s, "status flip");
        *slot = s;
    }

    pub fn set_ancestral(&mut self, x: NodeId, y: NodeId, s: Status) {
        let n = self.n;
        let slot = &mut self.ancestral.as_mut().expect("ancestral tracking enabled")
            [x.index() * n + y.index()];
        debug_assert!(*slot == Status::Unknown || *slot == s, "status flip");
        *slot = s;
    }

    pub fn fully_determined(&self) -> bool {
        self.ordered_pairs().all(|(x, y)| self.directed(x, y).is_determined())
            && self.unordered_pairs().all(|(x, y)| self.bidirected(x, y).is_determined())
            && (self.ancestral.is_none()
                || self.ordered_pairs().all(|(x, y)| self.ancestral(x, y).is_determined()))
    }

    pub fn ordered_pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> {
        let n = self.n as u32;
        (0..n).flat_map(move |x| {
            (0..n).filter(move |&y| y != x).map(move |y| (NodeId(x), NodeId(y)))
        })
    }

    pub fn unordered_pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> {
        let n = self.n as u32;
        (0..n).flat_map(move |x| (x + 1..n).map(move |y| (NodeId(x), NodeId(y))))
    }

    /// Determined and total item counts.
    pub fn determined_counts(&self) -> (usize, usize) {
        let mut determined = 0;
        let mut total = 0;
        let mut tally = |s: Status| {
            total += 1;
            if s.is_determined() {
                determined += 1;
            }
        };
        for (x, y) in self.ordered_pairs() {
            tally(self.directed(x, y));
        }
        for (x, y) in self.unordered_pairs() {
            tally(self.bidirected(x, y));
        }
        if self.ancestral.is_some() {
            for (x, y) in self.ordered_pairs() {
                tally(self.ancestral(x, y));
            }
        }
        (determined, total)
    }

    /// The graph with only determined-present edges.
    pub fn lower_graph(&self) -> MixedGraph {
        let mut g = MixedGraph::unnamed(self.n);
        for (x, y) in self.ordered_pairs() {
            if self.directed(x, y) == Status::Present {
                g.add_directed(x, y).unwrap();
            }
        }
        for (x, y) in self.unordered_pairs() {
            if self.bidirected(x, y) == Status::Present {
                g.add_bidirected(x, y).unwrap();
            }
        }
        g
    }

    /// The graph with determined-present and all undetermined edges.
    pub fn upper_graph(&self) -> MixedGraph {
        let mut g = MixedGraph::unnamed(self.n);
        for (x, y) in self.ordered_pairs() {
            if self.directed(x, y) != Status::Absent {
                g.add_directed(x, y).unwrap();
            }
        }
        for (x, y) in self.unordered_pairs() {
            if self.bidirected(x, y) != Status::Absent {
                g.add_bidirected(x, y).unwrap();
            }
        }
        g
    }

    /// True when every determinate status matches the graph (soundness).
    pub fn consistent_with(&self, g: &MixedGraph) -> bool {
        for (x, y) in self.ordered_pairs() {
            match self.directed(x, y) {
                Status::Present if !g.has_directed(x, y) => return false,
                Status::Absent if g.has_directed(x, y) => return false,
                _ => {}
            }
        }
        for (x, y) in self.unordered_pairs() {
            match self.bidirected(x, y) {
                Status::Present if !g.has_bidirected(x, y) => return false,
                Status::Absent if g.has_bidirected(x, y) => return false,
                _ => {}
            }
        }
        if self.ancestral.is_some() {
            for (x, y) in self.ordered_pairs() {
                let truth = g.directed_reachable(x).contains(y);
                match self.ancestral(x, y) {
                    Status::Present if !truth => return false,
                    Status::Absent if truth => return false,
                    _ => {}
                }
            }
        }
        true
    }

    /// True when `self` never contradicts `other` and determines at most what
    /// `other` determines.
    pub fn refined_by(&self, other: &EdgeSolution) -> bool {
        let compatible = |a: Status, b: Status| a == Status::Unknown || a == b;
        self.ordered_pairs().all(|(x, y)| compatible(self.directed(x, y), other.directed(x, y)))
            && self
                .unordered_pairs()
                .all(|(x, y)| compatible(self.bidirected(x, y), other.bidirected(x, y)))
            && (self.ancestral.is_none()
                || other.ancestral.is_none()
                || self
                    .ordered_pairs()
                    .all(|(x, y)| compatible(self.ancestral(x, y), other.ancestral(x, y))))
    }
}

/// Model-space restrictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assumptions {
    pub acyclic: bool,
    pub no_latents: bool,
}

impl Assumptions {
    pub fn satisfied_by(&self, g: &MixedGraph) -> bool {
        (!self.acyclic || g.is_acyclic()) && (!self.no_latents || !g.has_any_bidirected())
    }
}

/// Which solver executes the run.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum BackendSpec {
    #[default]
    Embedded,
    External(PathBuf),
}

impl BackendSpec {
    pub fn build(&self) -> Box<dyn SatBackend> {
        match self {
            BackendSpec::Embedded => Box::new(CdclSolver::new()),
            BackendSpec::External(path) => Box::new(ExternalSolver::new(path.clone())),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DiscoveryConfig {
    /// Largest conditioning-set size to test; default `|V| - 2`.
    pub max_c: Option<usize>,
    pub assumptions: Assumptions,
    pub background: Vec<BackgroundConstraint>,
    pub track_ancestral: bool,
    pub backend: BackendSpec,
    pub time_budget: Option<Duration>,
}

/// Where oracle answers come from: forward d-separation computation on a
/// ground-truth graph, or a fixed list of relations (tests absent from the
/// list are skipped; the result then reflects only the supplied relations).
#[derive(Debug, Clone)]
pub enum OracleSource {
    GraphOracle { graph: MixedGraph, experiments: Vec<Experiment> },
    FixedRelations { names: Vec<String>, relations: Vec<Relation> },
}

impl OracleSource {
    pub fn names(&self) -> &[String] {
        match self {
            OracleSource::GraphOracle { graph, .. } => graph.names(),
            OracleSource::FixedRelations { names, .. } => names,
        }
    }

    fn validate(&self) -> Result<(), DiscoveryError> {
        match self {
            OracleSource::GraphOracle { graph, experiments } => {
                for e in experiments {
                    if !e.observed.is_subset_of(graph.all_nodes()) {
                        return Err(DiscoveryError::Config(
                            "experiment mentions nodes outside the graph".into(),
                        ));
                    }
                }
                Ok(())
            }
            OracleSource::FixedRelations { names, relations } => {
                let all = NodeSet::full(names.len());
                for r in relations {
                    let used = r
                        .spec
                        .conditioning
                        .union(r.spec.intervention)
                        .union(NodeSet::singleton(r.spec.x))
                        .union(NodeSet::singleton(r.spec.y));
                    if !used.is_subset_of(all) {
                        return Err(DiscoveryError::Config(
                            "relation mentions nodes outside the universe".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    /// The experiment list driving candidate enumeration. Fixed-relation mode
    /// synthesizes one experiment over the whole universe per distinct
    /// intervention set appearing in the list.
    fn experiments(&self) -> Vec<Experiment> {
        match self {
            OracleSource::GraphOracle { experiments, .. } => experiments.clone(),
            OracleSource::FixedRelations { names, relations } => {
                let all = NodeSet::full(names.len());
                let mut seen = HashSet::new();
                let mut out = Vec::new();
                for r in relations {
                    if seen.insert(r.spec.intervention) {
                        out.push(Experiment::new(all, r.spec.intervention));
                    }
                }
                out
            }
        }
    }
}

type RelKey = (NodeId, NodeId, NodeSet, NodeSet);

enum OracleImpl<'a> {
    Graph(&'a MixedGraph),
    /// Both polarities are kept so a directly contradictory input list is
    /// still encoded and reported unsatisfiable.
    Fixed(HashMap<RelKey, Vec<bool>>),
}

impl OracleImpl<'_> {
    fn answers(&self, spec: &TestSpec) -> Result<Vec<bool>, GraphError> {
        match self {
            OracleImpl::Graph(g) => Ok(vec![g.d_connected(spec)?]),
            OracleImpl::Fixed(map) => {
                Ok(map.get(&spec.canonical_key()).cloned().unwrap_or_default())
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("the constraints are contradictory (unsatisfiable encoding): {0}")]
    Contradiction(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<BackboneError> for DiscoveryError {
    fn from(e: BackboneError) -> DiscoveryError {
        match e {
            BackboneError::Unsat => {
                DiscoveryError::Contradiction("working formula is unsatisfiable".into())
            }
            BackboneError::Solve(e) => DiscoveryError::Solve(e),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DiscoveryStats {
    pub tests_considered: usize,
    pub tests_pruned: usize,
    pub tests_dropped: usize,
    pub tests_skipped: usize,
    pub relations_encoded: usize,
    pub backbone_sweeps: usize,
    pub solver: SolverStats,
}

/// Enumerates candidate tests of conditioning-set size `c`: every unordered
/// pair and every size-`c` conditioning subset that occur together in one
/// experiment, with that experiment's intervention set. Tests coinciding
/// across experiments are enumerated once, in deterministic order.
pub fn enumerate_candidates(
    experiments: &[Experiment],
    c: usize,
    _n: usize,
) -> Vec<TestSpec> {
    let mut seen: HashSet<RelKey> = HashSet::new();
    let mut out = Vec::new();
    for exp in experiments {
        let nodes: Vec<NodeId> = exp.observed.iter().collect();
        for (i, &x) in nodes.iter().enumerate() {
            for &y in &nodes[i + 1..] {
                let rest: Vec<NodeId> =
                    nodes.iter().copied().filter(|&v| v != x && v != y).collect();
                let mut subsets = Vec::new();
                crate::graph::subsets_of_size(&rest, c, &mut subsets);
                for cond in subsets {
                    let spec = TestSpec::new(x, y, cond, exp.intervened).unwrap();
                    if seen.insert(spec.canonical_key()) {
                        out.push(spec);
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct PruneOptions {
    /// Drop tests whose conditioning set contains a node that cannot lie on
    /// any connecting walk between the endpoints in the maximal graph. Safe
    /// with a graph-backed oracle (the equivalent smaller test was already
    /// processed); disabled in fixed-relation mode where that smaller test
    /// may be unavailable.
    pub waypoint_filter: bool,
}

/// Splits candidates into relations already determined by the current
/// solution and tests still worth running. With `G1` carrying only the
/// determined-present edges and `G2` additionally every undetermined edge,
/// a connection in `G1` holds in every solution and a separation in `G2`
/// holds in every solution; edge removal only ever separates.
pub fn prune_tests(
    s: &EdgeSolution,
    candidates: &[TestSpec],
    opts: PruneOptions,
) -> (Vec<Relation>, Vec<TestSpec>, usize) {
    let g1 = s.lower_graph();
    let g2 = s.upper_graph();
    let mut determined = Vec::new();
    let mut open = Vec::new();
    let mut dropped = 0;
    let mut reach_cache: HashMap<(NodeId, NodeSet), NodeSet> = HashMap::new();
    for &t in candidates {
        if g1.d_connected(&t).expect("candidate in universe") {
            determined.push(Relation { spec: t, connected: true });
        } else if !g2.d_connected(&t).expect("candidate in universe") {
            determined.push(Relation { spec: t, connected: false });
        } else if opts.waypoint_filter && !t.conditioning.is_empty() {
            let gm = g2.manipulate(t.intervention).expect("candidate in universe");
            let mut reach = |v: NodeId| {
                *reach_cache
                    .entry((v, t.intervention))
                    .or_insert_with(|| gm.reachable_ignoring_marks(v))
            };
            let (rx, ry) = (reach(t.x), reach(t.y));
            let useless =
                t.conditioning.iter().any(|z| !rx.contains(z) || !ry.contains(z));
            if useless {
                dropped += 1;
            } else {
                open.push(t);
            }
        } else {
            open.push(t);
        }
    }
    (determined, open, dropped)
}

/// The working formula plus its solver; survives the run for queries.
pub struct DiscoveryEngine {
    enc: Encoder,
    backend: Box<dyn SatBackend>,
    fed_clauses: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryVerdict {
    AlwaysTrue,
    AlwaysFalse,
    Contingent,
}

impl QueryVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryVerdict::AlwaysTrue => "always-true",
            QueryVerdict::AlwaysFalse => "always-false",
            QueryVerdict::Contingent => "contingent",
        }
    }
}

impl DiscoveryEngine {
    pub fn new(names: Vec<String>, backend: Box<dyn SatBackend>) -> DiscoveryEngine {
        DiscoveryEngine { enc: Encoder::new(names), backend, fed_clauses: 0 }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.enc
    }

    pub fn encoder_mut(&mut self) -> &mut Encoder {
        &mut self.enc
    }

    pub fn solver_stats(&self) -> SolverStats {
        self.backend.stats()
    }

    /// Pushes clauses added to the formula since the last flush into the
    /// solver.
    fn flush(&mut self) {
        self.backend.ensure_vars(self.enc.table.var_count());
        let clauses = self.enc.formula.clauses();
        for clause in &clauses[self.fed_clauses..] {
            self.backend.add_clause(clause);
        }
        self.fed_clauses = clauses.len();
    }

    fn backbone_over(
        &mut self,
        candidates: &[PropVar],
    ) -> Result<crate::sat::BackboneResult, DiscoveryError> {
        debug_assert!(
            candidates
                .iter()
                .all(|&v| self.enc.table.role(v) != crate::cnf::VarRole::Aux),
            "auxiliary variables are never backbone candidates"
        );
        self.flush();
        Ok(backbone(self.backend.as_mut(), candidates)?)
    }

    /// Classifies a structural query against the model set of the formula.
    pub fn query(&mut self, q: &QueryExpr) -> Result<QueryVerdict, DiscoveryError> {
        let lit = self.enc.compile_query(q)?;
        self.flush();
        let holds = self.backend.solve_under(&[lit])?.status;
        let fails = self.backend.solve_under(&[!lit])?.status;
        match (holds, fails) {
            (SolveStatus::Satisfiable, SolveStatus::Satisfiable) => Ok(QueryVerdict::Contingent),
            (SolveStatus::Satisfiable, SolveStatus::Unsatisfiable) => {
                Ok(QueryVerdict::AlwaysTrue)
            }
            (SolveStatus::Unsatisfiable, SolveStatus::Satisfiable) => {
                Ok(QueryVerdict::AlwaysFalse)
            }
            (SolveStatus::Unsatisfiable, SolveStatus::Unsatisfiable) => Err(
                DiscoveryError::Contradiction("formula has no models left".into()),
            ),
        }
    }

    /// Serializes the formula, variable table and context bookkeeping.
    pub fn save(&self) -> SavedEngine {
        self.enc.save()
    }

    /// Rebuilds an engine from a saved state, refeeding the solver.
    pub fn load(saved: SavedEngine, backend: BackendSpec) -> Result<DiscoveryEngine, EncodeError> {
        let enc = Encoder::restore(saved)?;
        let mut engine = DiscoveryEngine { enc, backend: backend.build(), fed_clauses: 0 };
        engine.flush();
        Ok(engine)
    }
}

/// Everything a run produces: the statuses, the live engine for queries, and
/// counters.
pub struct DiscoveryOutput {
    pub solution: EdgeSolution,
    pub engine: DiscoveryEngine,
    pub stats: DiscoveryStats,
}

enum ItemRef {
    Dir(NodeId, NodeId),
    Bi(NodeId, NodeId),
    Anc(NodeId, NodeId),
}

/// Runs the discovery loop over conditioning-set sizes `0..=max_c`.
///
/// Each level enumerates its candidate tests, prunes the ones whose outcome
/// every remaining solution shares, obtains oracle answers for the open
/// tests, encodes them, and recomputes the backbone over the still-unknown
/// edge (and ancestral) variables; fixed polarities become statuses and
/// persistent unit clauses. Stops early once everything is determined.
/// An unsatisfiable formula aborts with a contradiction report.
pub fn run(oracle: &OracleSource, cfg: &DiscoveryConfig) -> Result<DiscoveryOutput, DiscoveryError> {
    let names = oracle.names().to_vec();
    let n = names.len();
    if n == 0 {
        return Err(DiscoveryError::Config("empty node universe".into()));
    }
    oracle.validate()?;
    let cap = match cfg.max_c {
        Some(c) if n < 2 || c > n - 2 => {
            return Err(DiscoveryError::Config(format!(
                "max_c {c} exceeds |V| - 2 = {}",
                n.saturating_sub(2)
            )))
        }
        Some(c) => c,
        None => n.saturating_sub(2),
    };

    let mut engine = DiscoveryEngine::new(names, cfg.backend.build());
    if let Some(budget) = cfg.time_budget {
        engine.backend.set_deadline(Some(Instant::now() + budget));
    }
    let mut stats = DiscoveryStats::default();
    let mut solution = EdgeSolution::all_unknown(n, cfg.track_ancestral);
    if n < 2 {
        return Ok(DiscoveryOutput { solution, engine, stats });
    }

    if cfg.assumptions.no_latents {
        engine.enc.constrain_sufficiency();
    }
    if cfg.assumptions.acyclic {
        engine.enc.constrain_acyclicity()?;
    }
    for k in &cfg.background {
        engine.enc.add_background(k)?;
    }

    // candidate variables for the backbone, in a fixed order
    let mut items: Vec<(PropVar, ItemRef)> = Vec::new();
    for (x, y) in solution.ordered_pairs() {
        items.push((engine.enc.edge_var(x, y), ItemRef::Dir(x, y)));
    }
    for (x, y) in solution.unordered_pairs() {
        items.push((engine.enc.bi_var(x, y), ItemRef::Bi(x, y)));
    }
    if cfg.track_ancestral {
        for (x, y) in solution.ordered_pairs() {
            items.push((engine.enc.ancestral_var(x, y)?, ItemRef::Anc(x, y)));
        }
    }

    let experiments = oracle.experiments();
    let oracle_impl = match oracle {
        OracleSource::GraphOracle { graph, .. } => OracleImpl::Graph(graph),
        OracleSource::FixedRelations { relations, .. } => {
            let mut map: HashMap<RelKey, Vec<bool>> = HashMap::new();
            for r in relations {
                let answers = map.entry(r.spec.canonical_key()).or_default();
                if !answers.contains(&r.connected) {
                    answers.push(r.connected);
                }
            }
            OracleImpl::Fixed(map)
        }
    };
    let prune_opts =
        PruneOptions { waypoint_filter: matches!(oracle_impl, OracleImpl::Graph(_)) };

    let mut dirty = !engine.enc.formula.is_empty();
    for c in 0..=cap {
        let candidates = enumerate_candidates(&experiments, c, n);
        stats.tests_considered += candidates.len();
        let (determined, open, dropped) = prune_tests(&solution, &candidates, prune_opts);
        stats.tests_pruned += determined.len();
        stats.tests_dropped += dropped;

        if let OracleImpl::Fixed(_) = oracle_impl {
            // a supplied answer that disagrees with a pruned determination is
            // a contradiction; encode it so the conflict is reported
            for d in &determined {
                for answer in oracle_impl.answers(&d.spec)? {
                    if answer != d.connected {
                        engine
                            .enc
                            .assert_relation(&Relation { spec: d.spec, connected: answer })?;
                        engine.enc.assert_relation(d)?;
                        stats.relations_encoded += 1;
                        dirty = true;
                    }
                }
            }
        }

        for spec in open {
            let answers = oracle_impl.answers(&spec)?;
            if answers.is_empty() {
                stats.tests_skipped += 1;
                continue;
            }
            for connected in answers {
                engine.enc.assert_relation(&Relation { spec, connected })?;
                stats.relations_encoded += 1;
                dirty = true;
            }
        }

        if dirty {
            let unknown: Vec<PropVar> = items
                .iter()
                .filter(|(_, item)| match item {
                    ItemRef::Dir(x, y) => solution.directed(*x, *y) == Status::Unknown,
                    ItemRef::Bi(x, y) => solution.bidirected(*x, *y) == Status::Unknown,
                    ItemRef::Anc(x, y) => solution.ancestral(*x, *y) == Status::Unknown,
                })
                .map(|(v, _)| *v)
                .collect();
            let bb = engine.backbone_over(&unknown).map_err(|e| match e {
                DiscoveryError::Contradiction(_) => DiscoveryError::Contradiction(format!(
                    "input relations admit no graph (detected at conditioning size {c})"
                )),
                other => other,
            })?;
            stats.backbone_sweeps += 1;
            for (&var, &polarity) in &bb.fixed {
                let status = if polarity { Status::Present } else { Status::Absent };
                match items.iter().find(|(v, _)| *v == var).map(|(_, i)| i) {
                    Some(ItemRef::Dir(x, y)) => solution.set_directed(*x, *y, status),
                    Some(ItemRef::Bi(x, y)) => solution.set_bidirected(*x, *y, status),
                    Some(ItemRef::Anc(x, y)) => solution.set_ancestral(*x, *y, status),
                    None => unreachable!("backbone var outside candidate set"),
                }
                // a backbone polarity holds in every model, so pinning it
                // keeps the model set intact and shrinks later sweeps
                engine.enc.formula.add_clause(vec![Literal::with_sign(var, polarity)]);
            }
            dirty = false;
        }
        if solution.fully_determined() {
            break;
        }
    }
    stats.solver = engine.solver_stats();
    // the budget covers the run only, not later queries on the engine
    engine.backend.set_deadline(None);
    Ok(DiscoveryOutput { solution, engine, stats })
}

/// Counts candidate tests that are neither implied by the solution nor
/// settled by the formula's backbone; zero means every answerable relation
/// has been determined.
pub fn open_relations_after(
    out: &mut DiscoveryOutput,
    experiments: &[Experiment],
) -> Result<usize, DiscoveryError> {
    let n = out.solution.n_nodes();
    let mut open_count = 0;
    for c in 0..=n.saturating_sub(2) {
        let candidates = enumerate_candidates(experiments, c, n);
        let (_, open, _) =
            prune_tests(&out.solution, &candidates, PruneOptions { waypoint_filter: false });
        for spec in open {
            let var = out.engine.enc.define_relation_var(&spec)?;
            out.engine.flush();
            let holds = out.engine.backend.solve_under(&[Literal::pos(var)])?.status;
            let fails = out.engine.backend.solve_under(&[Literal::neg(var)])?.status;
            if holds == SolveStatus::Satisfiable && fails == SolveStatus::Satisfiable {
                open_count += 1;
            }
        }
    }
    Ok(open_count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bruteforce::consensus;
    use crate::graph::oracle_relations;

    fn fig1a() -> MixedGraph {
        let mut g = MixedGraph::new(
            ["x", "y", "z", "w"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        g.add_directed(NodeId(0), NodeId(2)).unwrap();
        g.add_directed(NodeId(1), NodeId(2)).unwrap();
        g.add_directed(NodeId(2), NodeId(3)).unwrap();
        g
    }

    fn spec(x: u32, y: u32, c: &[u32], j: &[u32]) -> TestSpec {
        TestSpec::new(
            NodeId(x),
            NodeId(y),
            c.iter().map(|&v| NodeId(v)).collect(),
            j.iter().map(|&v| NodeId(v)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn empty_truth_on_two_nodes_is_all_absent() {
        let g = MixedGraph::unnamed(2);
        let oracle = OracleSource::GraphOracle {
            experiments: vec![Experiment::passive(g.all_nodes())],
            graph: g,
        };
        let out = run(&oracle, &DiscoveryConfig::default()).unwrap();
        assert_eq!(out.solution.directed(NodeId(0), NodeId(1)), Status::Absent);
        assert_eq!(out.solution.directed(NodeId(1), NodeId(0)), Status::Absent);
        assert_eq!(out.solution.bidirected(NodeId(0), NodeId(1)), Status::Absent);
    }

    #[test]
    fn contradictory_fixed_relations_report_a_conflict() {
        let relations = vec![
            Relation { spec: spec(0, 1, &[], &[]), connected: false },
            Relation { spec: spec(0, 1, &[], &[]), connected: true },
        ];
        let oracle = OracleSource::FixedRelations {
            names: vec!["x".into(), "y".into()],
            relations,
        };
        let err = match run(&oracle, &DiscoveryConfig::default()) {
            Err(e) => e,
            Ok(_) => panic!("contradictory input must not produce a solution"),
        };
        assert!(matches!(err, DiscoveryError::Contradiction(_)), "{err}");
    }

    #[test]
    fn example_graph_under_both_assumptions_is_fully_identified() {
        let g = fig1a();
        let oracle = OracleSource::GraphOracle {
            experiments: vec![Experiment::passive(g.all_nodes())],
            graph: g.clone(),
        };
        let cfg = DiscoveryConfig {
            assumptions: Assumptions { acyclic: true, no_latents: true },
            track_ancestral: true,
            ..Default::default()
        };
        let out = run(&oracle, &cfg).unwrap();
        for (x, y) in out.solution.ordered_pairs() {
            let expected =
                if g.has_directed(x, y) { Status::Present } else { Status::Absent };
            assert_eq!(out.solution.directed(x, y), expected, "dir {x} {y}");
        }
        for (x, y) in out.solution.unordered_pairs() {
            assert_eq!(out.solution.bidirected(x, y), Status::Absent);
        }
        // agree with the exhaustive consensus under the same restrictions
        let rels =
            oracle_relations(&g, &[Experiment::passive(g.all_nodes())], None).unwrap();
        let cons = consensus(
            &rels,
            4,
            Assumptions { acyclic: true, no_latents: true },
            true,
        )
        .unwrap();
        assert_eq!(out.solution, cons);
    }

    #[test]
    fn example_graph_full_space_matches_consensus() {
        let g = fig1a();
        let exps = vec![Experiment::passive(g.all_nodes())];
        let oracle =
            OracleSource::GraphOracle { experiments: exps.clone(), graph: g.clone() };
        let cfg = DiscoveryConfig { track_ancestral: true, ..Default::default() };
        let out = run(&oracle, &cfg).unwrap();
        let rels = oracle_relations(&g, &exps, None).unwrap();
        let cons = consensus(&rels, 4, Assumptions::default(), true).unwrap();
        assert_eq!(out.solution, cons);
        assert!(out.solution.consistent_with(&g));
    }

    #[test]
    fn feedback_cycle_is_discovered_from_interventions() {
        // ground truth x -> y and y -> x; three experiments over both nodes:
        // passive, intervene on x, intervene on y. The connection surviving
        // each single intervention forces the edge out of the intervened
        // node, so both directed edges are determined present; an extra
        // confounder stays indistinguishable.
        let mut g = MixedGraph::unnamed(2);
        g.add_directed(NodeId(0), NodeId(1)).unwrap();
        g.add_directed(NodeId(1), NodeId(0)).unwrap();
        let all = g.all_nodes();
        let experiments = vec![
            Experiment::passive(all),
            Experiment::new(all, NodeSet::singleton(NodeId(0))),
            Experiment::new(all, NodeSet::singleton(NodeId(1))),
        ];
        let oracle = OracleSource::GraphOracle {
            graph: g.clone(),
            experiments: experiments.clone(),
        };
        let out = run(&oracle, &DiscoveryConfig::default()).unwrap();
        assert_eq!(out.solution.directed(NodeId(0), NodeId(1)), Status::Present);
        assert_eq!(out.solution.directed(NodeId(1), NodeId(0)), Status::Present);
        assert_eq!(out.solution.bidirected(NodeId(0), NodeId(1)), Status::Unknown);
        let rels = oracle_relations(&g, &experiments, None).unwrap();
        let expected = consensus(&rels, 2, Assumptions::default(), false).unwrap();
        assert_eq!(out.solution, expected);
    }

    #[test]
    fn pruning_determines_double_intervention_separation() {
        let s = EdgeSolution::all_unknown(2, false);
        let cands = vec![spec(0, 1, &[], &[0, 1])];
        let (determined, open, _) =
            prune_tests(&s, &cands, PruneOptions { waypoint_filter: true });
        assert!(open.is_empty());
        assert_eq!(determined.len(), 1);
        assert!(!determined[0].connected);
    }

    #[test]
    fn pruning_leaves_marginal_test_open_when_unknown() {
        let s = EdgeSolution::all_unknown(2, false);
        let cands = vec![spec(0, 1, &[], &[])];
        let (determined, open, _) =
            prune_tests(&s, &cands, PruneOptions { waypoint_filter: true });
        assert!(determined.is_empty());
        assert_eq!(open.len(), 1);
    }

    #[test]
    fn fully_determined_solution_prunes_everything() {
        let g = fig1a();
        let mut s = EdgeSolution::all_unknown(4, false);
        for (x, y) in s.ordered_pairs() {
            s.set_directed(
                x,
                y,
                if g.has_directed(x, y) { Status::Present } else { Status::Absent },
            );
        }
        for (x, y) in s.unordered_pairs() {
            s.set_bidirected(x, y, Status::Absent);
        }
        let exps = vec![Experiment::passive(g.all_nodes())];
        for c in 0..=2 {
            let cands = enumerate_candidates(&exps, c, 4);
            let (_, open, _) =
                prune_tests(&s, &cands, PruneOptions { waypoint_filter: true });
            assert!(open.is_empty(), "open at c={c}");
        }
    }

    #[test]
    fn candidate_enumeration_counts_and_dedup() {
        let all = NodeSet::full(4);
        let exp = Experiment::passive(all);
        assert_eq!(enumerate_candidates(&[exp], 0, 4).len(), 6);
        assert_eq!(enumerate_candidates(&[exp], 1, 4).len(), 12);
        assert_eq!(enumerate_candidates(&[exp, exp], 1, 4).len(), 12);
    }

    #[test]
    fn chain_queries_distinguish_collider_from_reversed_chain() {
        // passively observed chain x -> y -> z over the full model space
        let mut g = MixedGraph::new(
            ["x", "y", "z"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        g.add_directed(NodeId(0), NodeId(1)).unwrap();
        g.add_directed(NodeId(1), NodeId(2)).unwrap();
        let oracle = OracleSource::GraphOracle {
            experiments: vec![Experiment::passive(g.all_nodes())],
            graph: g,
        };
        let mut out = run(&oracle, &DiscoveryConfig::default()).unwrap();

        let mut collider = MixedGraph::new(
            ["x", "y", "z"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        collider.add_directed(NodeId(0), NodeId(1)).unwrap();
        collider.add_directed(NodeId(2), NodeId(1)).unwrap();
        let verdict =
            out.engine.query(&QueryExpr::ExactGraph(collider)).unwrap();
        assert_eq!(verdict, QueryVerdict::AlwaysFalse);

        let mut reversed = MixedGraph::new(
            ["x", "y", "z"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        reversed.add_directed(NodeId(1), NodeId(0)).unwrap();
        reversed.add_directed(NodeId(2), NodeId(1)).unwrap();
        let verdict =
            out.engine.query(&QueryExpr::ExactGraph(reversed)).unwrap();
        assert_eq!(verdict, QueryVerdict::Contingent);

        // a tautology is always true
        let e = QueryExpr::DirEdge(NodeId(0), NodeId(1));
        let verdict = out
            .engine
            .query(&QueryExpr::Or(vec![e.clone(), QueryExpr::Not(Box::new(e))]))
            .unwrap();
        assert_eq!(verdict, QueryVerdict::AlwaysTrue);
    }

    #[test]
    fn assumptions_only_runs_still_determine_statuses() {
        // no relations at all: assuming no latents still settles bidirected
        let oracle = OracleSource::FixedRelations {
            names: vec!["a".into(), "b".into(), "c".into()],
            relations: vec![],
        };
        let cfg = DiscoveryConfig {
            assumptions: Assumptions { acyclic: false, no_latents: true },
            ..Default::default()
        };
        let out = run(&oracle, &cfg).unwrap();
        for (x, y) in out.solution.unordered_pairs() {
            assert_eq!(out.solution.bidirected(x, y), Status::Absent);
        }
        for (x, y) in out.solution.ordered_pairs() {
            assert_eq!(out.solution.directed(x, y), Status::Unknown);
        }
    }

    #[test]
    fn save_and_load_round_trips_queries() {
        let mut g = MixedGraph::new(
            ["x", "y", "z"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        g.add_directed(NodeId(0), NodeId(1)).unwrap();
        g.add_directed(NodeId(1), NodeId(2)).unwrap();
        let oracle = OracleSource::GraphOracle {
            experiments: vec![Experiment::passive(g.all_nodes())],
            graph: g,
        };
        let out = run(&oracle, &DiscoveryConfig::default()).unwrap();
        let saved = out.engine.save();
        let text = serde_json::to_string(&saved).unwrap();
        let back: SavedEngine = serde_json::from_str(&text).unwrap();
        let mut engine = DiscoveryEngine::load(back, BackendSpec::Embedded).unwrap();
        let verdict = engine
            .query(&QueryExpr::Connected(spec(0, 2, &[1], &[])))
            .unwrap();
        assert_eq!(verdict, QueryVerdict::AlwaysFalse);
        let verdict = engine
            .query(&QueryExpr::Connected(spec(0, 2, &[], &[])))
            .unwrap();
        assert_eq!(verdict, QueryVerdict::AlwaysTrue);
        // an interventional context the original run never encoded: the
        // restored engine must extend the formula correctly. The fork
        // x <- y -> z survives intervening on y, the chain does not.
        let verdict = engine
            .query(&QueryExpr::Connected(spec(0, 2, &[], &[1])))
            .unwrap();
        assert_eq!(verdict, QueryVerdict::Contingent);
    }

    #[test]
    fn completeness_check_reports_zero_open_relations() {
        let g = fig1a();
        let exps = vec![Experiment::passive(g.all_nodes())];
        let oracle =
            OracleSource::GraphOracle { experiments: exps.clone(), graph: g };
        let mut out = run(&oracle, &DiscoveryConfig::default()).unwrap();
        assert_eq!(open_relations_after(&mut out, &exps).unwrap(), 0);
    }
}
