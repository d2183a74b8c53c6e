//! Mixed causal graphs (directed + bidirected edges, cycles allowed), the
//! interventional d-separation oracle, and random instance generation.
//!
//! Intervening on a set `J` is modelled by deleting every edge that carries an
//! arrowhead at a member of `J`; d-connection is then decided on the
//! manipulated graph by reachability over (node, incoming-mark) states, since
//! edges may be reused by a connecting walk.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Node sets are stored as 64-bit masks.
pub const MAX_NODES: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown node index {0}")]
    UnknownNode(u32),
    #[error("unknown node name `{0}`")]
    UnknownName(String),
    #[error("duplicate node name `{0}`")]
    DuplicateName(String),
    #[error("invalid node name `{0}`")]
    InvalidName(String),
    #[error("self-loops are not allowed (node {0})")]
    SelfLoop(u32),
    #[error("graphs support at most {MAX_NODES} nodes, got {0}")]
    TooManyNodes(usize),
    #[error("endpoint may not appear in the conditioning set")]
    EndpointInConditioning,
    #[error("test endpoints must be distinct")]
    EqualEndpoints,
}

/// Index of a node within a graph's node list.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A set of nodes, packed into a bitmask.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default,
)]
pub struct NodeSet(pub u64);

impl NodeSet {
    pub const EMPTY: NodeSet = NodeSet(0);

    pub fn singleton(v: NodeId) -> NodeSet {
        NodeSet(1 << v.0)
    }

    pub fn full(n: usize) -> NodeSet {
        debug_assert!(n <= MAX_NODES);
        if n == 64 {
            NodeSet(u64::MAX)
        } else {
            NodeSet((1u64 << n) - 1)
        }
    }

    #[inline]
    pub fn contains(self, v: NodeId) -> bool {
        self.0 >> v.0 & 1 == 1
    }

    #[inline]
    pub fn insert(&mut self, v: NodeId) {
        self.0 |= 1 << v.0;
    }

    #[inline]
    pub fn remove(&mut self, v: NodeId) {
        self.0 &= !(1 << v.0);
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    #[inline]
    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    #[inline]
    pub fn union(self, other: NodeSet) -> NodeSet {
        NodeSet(self.0 | other.0)
    }

    #[inline]
    pub fn intersect(self, other: NodeSet) -> NodeSet {
        NodeSet(self.0 & other.0)
    }

    #[inline]
    pub fn minus(self, other: NodeSet) -> NodeSet {
        NodeSet(self.0 & !other.0)
    }

    #[inline]
    pub fn is_subset_of(self, other: NodeSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Iterates members in increasing index order.
    pub fn iter(self) -> impl Iterator<Item = NodeId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let v = bits.trailing_zeros();
                bits &= bits - 1;
                Some(NodeId(v))
            }
        })
    }
}

impl FromIterator<NodeId> for NodeSet {
    fn from_iter<I: IntoIterator<Item = NodeId>>(iter: I) -> Self {
        let mut s = NodeSet::EMPTY;
        for v in iter {
            s.insert(v);
        }
        s
    }
}

/// Incoming mark of the edge by which a walk arrives at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mark {
    Tail,
    Head,
}

/// A directed mixed graph over named nodes. Any combination of `x -> y`,
/// `y -> x` and `x <-> y` may be present between a pair; self-loops are not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedGraph {
    names: Vec<String>,
    /// `directed[x]` holds the mask of `y` with an edge `x -> y`.
    directed: Vec<u64>,
    /// Symmetric: `bidirected[x]` holds the mask of `y` with `x <-> y`.
    bidirected: Vec<u64>,
}

pub fn valid_node_name(name: &str) -> bool {
    !name.is_empty()
        && name != "-"
        && !name.contains(|c: char| c.is_whitespace())
        && !name.contains('|')
        && !name.contains(':')
        && !name.contains('#')
        && name != "->"
        && name != "<->"
}

impl MixedGraph {
    pub fn new(names: Vec<String>) -> Result<MixedGraph, GraphError> {
        if names.len() > MAX_NODES {
            return Err(GraphError::TooManyNodes(names.len()));
        }
        for (i, name) in names.iter().enumerate() {
            if !valid_node_name(name) {
                return Err(GraphError::InvalidName(name.clone()));
            }
            if names[..i].contains(name) {
                return Err(GraphError::DuplicateName(name.clone()));
            }
        }
        let n = names.len();
        Ok(MixedGraph {
            names,
            directed: vec![0; n],
            bidirected: vec![0; n],
        })
    }

    /// A graph over `n` nodes named `v0..v{n-1}`.
    pub fn unnamed(n: usize) -> MixedGraph {
        MixedGraph::new((0..n).map(|i| format!("v{i}")).collect()).expect("generated names")
    }

    pub fn n_nodes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, v: NodeId) -> &str {
        &self.names[v.index()]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.names.iter().position(|n| n == name).map(|i| NodeId(i as u32))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (0..self.names.len() as u32).map(NodeId)
    }

    pub fn all_nodes(&self) -> NodeSet {
        NodeSet::full(self.n_nodes())
    }

    fn check_node(&self, v: NodeId) -> Result<(), GraphError> {
        if v.index() < self.names.len() {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(v.0))
        }
    }

    pub fn add_directed(&mut self, x: NodeId, y: NodeId) -> Result<(), GraphError> {
        self.check_node(x)?;
        self.check_node(y)?;
        if x == y {
            return Err(GraphError::SelfLoop(x.0));
        }
        self.directed[x.index()] |= 1 << y.0;
        Ok(())
    }

    pub fn add_bidirected(&mut self, x: NodeId, y: NodeId) -> Result<(), GraphError> {
        self.check_node(x)?;
        self.check_node(y)?;
        if x == y {
            return Err(GraphError::SelfLoop(x.0));
        }
        self.bidirected[x.index()] |= 1 << y.0;
        self.bidirected[y.index()] |= 1 << x.0;
        Ok(())
    }

    pub fn remove_directed(&mut self, x: NodeId, y: NodeId) {
        self.directed[x.index()] &= !(1 << y.0);
    }

    pub fn remove_bidirected(&mut self, x: NodeId, y: NodeId) {
        self.bidirected[x.index()] &= !(1 << y.0);
        self.bidirected[y.index()] &= !(1 << x.0);
    }

    #[inline]
    pub fn has_directed(&self, x: NodeId, y: NodeId) -> bool {
        self.directed[x.index()] >> y.0 & 1 == 1
    }

    #[inline]
    pub fn has_bidirected(&self, x: NodeId, y: NodeId) -> bool {
        self.bidirected[x.index()] >> y.0 & 1 == 1
    }

    pub fn children(&self, x: NodeId) -> NodeSet {
        NodeSet(self.directed[x.index()])
    }

    pub fn parents(&self, x: NodeId) -> NodeSet {
        let mut mask = 0;
        for u in 0..self.n_nodes() {
            if self.directed[u] >> x.0 & 1 == 1 {
                mask |= 1 << u;
            }
        }
        NodeSet(mask)
    }

    pub fn spouses(&self, x: NodeId) -> NodeSet {
        NodeSet(self.bidirected[x.index()])
    }

    /// Ordered pairs `(x, y)` with `x -> y`, in index order.
    pub fn directed_edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for x in self.nodes() {
            for y in NodeSet(self.directed[x.index()]).iter() {
                out.push((x, y));
            }
        }
        out
    }

    /// Unordered pairs `{x, y}` with `x <-> y`, reported as `x < y`.
    pub fn bidirected_edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for x in self.nodes() {
            for y in NodeSet(self.bidirected[x.index()]).iter() {
                if x < y {
                    out.push((x, y));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.directed_edges().len() + self.bidirected_edges().len()
    }

    pub fn has_any_bidirected(&self) -> bool {
        self.bidirected.iter().any(|&m| m != 0)
    }

    /// True when the directed part contains no directed cycle.
    pub fn is_acyclic(&self) -> bool {
        // Kahn-style elimination on the directed part.
        let n = self.n_nodes();
        let mut indeg = vec![0usize; n];
        for x in 0..n {
            for y in NodeSet(self.directed[x]).iter() {
                indeg[y.index()] += 1;
            }
        }
        let mut queue: Vec<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
        let mut removed = 0;
        while let Some(v) = queue.pop() {
            removed += 1;
            for y in NodeSet(self.directed[v]).iter() {
                indeg[y.index()] -= 1;
                if indeg[y.index()] == 0 {
                    queue.push(y.index());
                }
            }
        }
        removed == n
    }

    /// Nodes reachable from `x` by a directed path of one or more edges.
    pub fn directed_reachable(&self, x: NodeId) -> NodeSet {
        let mut seen = NodeSet::EMPTY;
        let mut stack: Vec<NodeId> = NodeSet(self.directed[x.index()]).iter().collect();
        while let Some(v) = stack.pop() {
            if seen.contains(v) {
                continue;
            }
            seen.insert(v);
            stack.extend(NodeSet(self.directed[v.index()]).iter());
        }
        seen
    }

    /// Nodes connected to `x` by any walk, ignoring marks and blocking.
    pub fn reachable_ignoring_marks(&self, x: NodeId) -> NodeSet {
        let n = self.n_nodes();
        let mut adj = vec![0u64; n];
        for v in 0..n {
            adj[v] |= self.directed[v] | self.bidirected[v];
            for y in NodeSet(self.directed[v]).iter() {
                adj[y.index()] |= 1 << v;
            }
        }
        let mut seen = NodeSet::singleton(x);
        let mut stack = vec![x];
        while let Some(v) = stack.pop() {
            for u in NodeSet(adj[v.index()]).iter() {
                if !seen.contains(u) {
                    seen.insert(u);
                    stack.push(u);
                }
            }
        }
        seen
    }

    /// Returns the graph manipulated by intervening on `j`: every edge with an
    /// arrowhead at a member of `j` is removed (`x -> y` when `y` is in `j`,
    /// `x <-> y` when either endpoint is), edges out of `j` nodes are kept.
    pub fn manipulate(&self, j: NodeSet) -> Result<MixedGraph, GraphError> {
        if !j.is_subset_of(self.all_nodes()) {
            return Err(GraphError::UnknownNode(
                j.minus(self.all_nodes()).iter().next().unwrap().0,
            ));
        }
        let mut g = self.clone();
        for x in 0..self.n_nodes() {
            g.directed[x] &= !j.0;
            if j.contains(NodeId(x as u32)) {
                g.bidirected[x] = 0;
            } else {
                g.bidirected[x] &= !j.0;
            }
        }
        Ok(g)
    }

    /// Edges incident to `v` as `(neighbor, mark at v, mark at neighbor)`.
    pub(crate) fn incident(&self, v: NodeId) -> Vec<(NodeId, Mark, Mark)> {
        let mut out = Vec::new();
        for u in NodeSet(self.directed[v.index()]).iter() {
            out.push((u, Mark::Tail, Mark::Head)); // v -> u
        }
        for u in self.nodes() {
            if self.directed[u.index()] >> v.0 & 1 == 1 {
                out.push((u, Mark::Head, Mark::Tail)); // u -> v
            }
        }
        for u in NodeSet(self.bidirected[v.index()]).iter() {
            out.push((u, Mark::Head, Mark::Head)); // v <-> u
        }
        out
    }

    /// Decides whether `t.x` and `t.y` are d-connected given `t.conditioning`
    /// in the experiment intervening on `t.intervention`.
    ///
    /// Works on the manipulated graph. A walk may reuse edges, so this is
    /// reachability over (node, incoming mark) states: a state whose incoming
    /// and outgoing marks are both arrowheads traverses its node as a collider
    /// and requires the node in `C`; any other combination traverses it as a
    /// non-collider and requires the node outside `C`. Endpoints are
    /// unconstrained.
    pub fn d_connected(&self, t: &TestSpec) -> Result<bool, GraphError> {
        self.check_node(t.x)?;
        self.check_node(t.y)?;
        if !t.conditioning.union(t.intervention).is_subset_of(self.all_nodes()) {
            return Err(GraphError::UnknownNode(
                t.conditioning
                    .union(t.intervention)
                    .minus(self.all_nodes())
                    .iter()
                    .next()
                    .unwrap()
                    .0,
            ));
        }
        let g = self.manipulate(t.intervention)?;
        Ok(g.d_connected_in_place(t.x, t.y, t.conditioning))
    }

    /// Reachability core; assumes the graph is already manipulated.
    fn d_connected_in_place(&self, x: NodeId, y: NodeId, c: NodeSet) -> bool {
        let mut visited_tail = NodeSet::EMPTY;
        let mut visited_head = NodeSet::EMPTY;
        let mut stack: Vec<(NodeId, Mark)> = Vec::new();
        let mut visit = |stack: &mut Vec<(NodeId, Mark)>, v: NodeId, m: Mark| {
            let set = match m {
                Mark::Tail => &mut visited_tail,
                Mark::Head => &mut visited_head,
            };
            if !set.contains(v) {
                set.insert(v);
                stack.push((v, m));
            }
        };
        for (u, _mx, mu) in self.incident(x) {
            visit(&mut stack, u, mu);
        }
        while let Some((v, incoming)) = stack.pop() {
            if v == y {
                return true;
            }
            for (u, mv, mu) in self.incident(v) {
                let collider = incoming == Mark::Head && mv == Mark::Head;
                let open = if collider { c.contains(v) } else { !c.contains(v) };
                if open {
                    visit(&mut stack, u, mu);
                }
            }
        }
        visited_tail.contains(y) || visited_head.contains(y)
    }
}

/// One data set: the nodes present in it and the subset that was randomized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Experiment {
    /// All nodes appearing in the data set (including intervened ones).
    pub observed: NodeSet,
    /// The randomized subset; empty for passive observation.
    pub intervened: NodeSet,
}

impl Experiment {
    pub fn new(observed: NodeSet, intervened: NodeSet) -> Experiment {
        debug_assert!(intervened.is_subset_of(observed));
        Experiment { observed, intervened }
    }

    pub fn passive(observed: NodeSet) -> Experiment {
        Experiment { observed, intervened: NodeSet::EMPTY }
    }

    /// The passively observed part.
    pub fn passively_observed(&self) -> NodeSet {
        self.observed.minus(self.intervened)
    }
}

/// A single d-separation / d-connection statement shape: endpoints, a
/// conditioning set and an intervention set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestSpec {
    pub x: NodeId,
    pub y: NodeId,
    pub conditioning: NodeSet,
    pub intervention: NodeSet,
}

impl TestSpec {
    pub fn new(
        x: NodeId,
        y: NodeId,
        conditioning: NodeSet,
        intervention: NodeSet,
    ) -> Result<TestSpec, GraphError> {
        if x == y {
            return Err(GraphError::EqualEndpoints);
        }
        if conditioning.contains(x) || conditioning.contains(y) {
            return Err(GraphError::EndpointInConditioning);
        }
        Ok(TestSpec { x, y, conditioning, intervention })
    }

    /// Key with endpoints in canonical order; d-connection is symmetric.
    pub fn canonical_key(&self) -> (NodeId, NodeId, NodeSet, NodeSet) {
        let (a, b) = if self.x <= self.y { (self.x, self.y) } else { (self.y, self.x) };
        (a, b, self.conditioning, self.intervention)
    }

    /// True when the conditioning and intervention sets overlap. Such tests
    /// are well defined (the shared node blocks every walk through it) but
    /// some harnesses exclude them for comparability.
    pub fn cj_overlap(&self) -> bool {
        !self.conditioning.intersect(self.intervention).is_empty()
    }
}

/// A d-separation (`connected = false`) or d-connection (`connected = true`)
/// statement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub spec: TestSpec,
    pub connected: bool,
}

/// Upper bound on the length of connecting walks worth considering for a
/// test: on a minimal d-connecting walk each node of `C`, `J` and the two
/// endpoints appears at most once and every other node at most twice, so
/// `2|V| - |C u J u {x,y}| - 1` edges suffice. With three or more nodes the
/// global cap `2|V| - 4` also applies (a walk with an empty conditioning set
/// has no colliders and therefore at most `|V| - 1` edges).
pub fn max_path_length(n_nodes: usize, t: &TestSpec) -> usize {
    debug_assert!(n_nodes >= 2);
    let anchored = t
        .conditioning
        .union(t.intervention)
        .union(NodeSet::singleton(t.x))
        .union(NodeSet::singleton(t.y))
        .len();
    let per_relation = 2 * n_nodes - anchored - 1;
    if n_nodes >= 3 {
        per_relation.min(2 * n_nodes - 4)
    } else {
        per_relation
    }
}

/// Draws each candidate edge independently with probability `edge_prob`.
///
/// Draw order is fixed so seeds are portable: all ordered pairs `(x, y)`,
/// `x != y`, in lexicographic index order for directed edges, then all
/// unordered pairs `x < y` in lexicographic order for bidirected edges.
pub fn random_graph<R: Rng>(n: usize, edge_prob: f64, rng: &mut R) -> MixedGraph {
    let mut g = MixedGraph::unnamed(n);
    for x in 0..n {
        for y in 0..n {
            if x != y && rng.gen::<f64>() < edge_prob {
                g.add_directed(NodeId(x as u32), NodeId(y as u32)).unwrap();
            }
        }
    }
    for x in 0..n {
        for y in x + 1..n {
            if rng.gen::<f64>() < edge_prob {
                g.add_bidirected(NodeId(x as u32), NodeId(y as u32)).unwrap();
            }
        }
    }
    g
}

/// Draws `k` experiments; per experiment every node is independently
/// intervened, passively observed, or left out, each with probability 1/3.
pub fn random_experiments<R: Rng>(n: usize, k: usize, rng: &mut R) -> Vec<Experiment> {
    (0..k)
        .map(|_| {
            let mut observed = NodeSet::EMPTY;
            let mut intervened = NodeSet::EMPTY;
            for v in 0..n {
                match rng.gen_range(0..3) {
                    0 => {
                        observed.insert(NodeId(v as u32));
                        intervened.insert(NodeId(v as u32));
                    }
                    1 => observed.insert(NodeId(v as u32)),
                    _ => {}
                }
            }
            Experiment::new(observed, intervened)
        })
        .collect()
}

/// Enumerates, for every experiment, every pair `{x, y}` of its nodes and
/// every conditioning set `C` of its remaining nodes with `|C| <= max_c`
/// (default: unrestricted), and answers each with the d-separation oracle.
/// Tests that coincide across experiments (same pair, `C` and `J`) are
/// emitted once, in deterministic order.
pub fn oracle_relations(
    g: &MixedGraph,
    experiments: &[Experiment],
    max_c: Option<usize>,
) -> Result<Vec<Relation>, GraphError> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for exp in experiments {
        if !exp.observed.is_subset_of(g.all_nodes()) {
            return Err(GraphError::UnknownNode(
                exp.observed.minus(g.all_nodes()).iter().next().unwrap().0,
            ));
        }
        let nodes: Vec<NodeId> = exp.observed.iter().collect();
        let cap = max_c.unwrap_or(nodes.len().saturating_sub(2));
        for (i, &x) in nodes.iter().enumerate() {
            for &y in &nodes[i + 1..] {
                let rest: Vec<NodeId> = nodes
                    .iter()
                    .copied()
                    .filter(|&v| v != x && v != y)
                    .collect();
                for c in subsets_up_to(&rest, cap.min(rest.len())) {
                    let spec = TestSpec::new(x, y, c, exp.intervened)?;
                    if seen.insert(spec.canonical_key()) {
                        let connected = g.d_connected(&spec)?;
                        out.push(Relation { spec, connected });
                    }
                }
            }
        }
    }
    Ok(out)
}

/// All subsets of `items` of size 0..=cap, by size then lexicographic order.
pub fn subsets_up_to(items: &[NodeId], cap: usize) -> Vec<NodeSet> {
    let mut out = Vec::new();
    for size in 0..=cap.min(items.len()) {
        subsets_of_size(items, size, &mut out);
    }
    out
}

/// All subsets of `items` of exactly `size` members, lexicographic by the
/// chosen index sequence.
pub fn subsets_of_size(items: &[NodeId], size: usize, out: &mut Vec<NodeSet>) {
    if size > items.len() {
        return;
    }
    if size == 0 {
        out.push(NodeSet::EMPTY);
        return;
    }
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        // advance to the next combination
        let mut i = size;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + items.len() - size {
                break;
            }
        }
        idx[i] += 1;
        for k in i + 1..size {
            idx[k] = idx[k - 1] + 1;
        }
    }
}
