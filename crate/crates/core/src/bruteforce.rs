//! Independent verification oracles: explicit bounded walk enumeration for
//! d-connection, and exhaustive mixed-graph enumeration for consensus
//! statuses. Exponential; not for production-sized inputs.

use crate::discovery::{Assumptions, EdgeSolution, Status};
use crate::graph::{GraphError, Mark, MixedGraph, NodeId, NodeSet, Relation, TestSpec};
use rayon::prelude::*;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BruteforceError {
    #[error("exhaustive enumeration is capped at 4 nodes, got {0}")]
    TooLarge(usize),
    #[error("no graph is consistent with the given relations")]
    Contradiction,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Decides d-connection by searching for a connecting walk of at most
/// `l_cap` edges in the manipulated graph, applying the collider rule to
/// every inner node of the walk literally. Search states (node, incoming
/// mark, remaining budget) are memoized.
pub fn walks_dconnect(
    g: &MixedGraph,
    t: &TestSpec,
    l_cap: usize,
) -> Result<bool, GraphError> {
    debug_assert!(l_cap >= 1);
    let m = g.manipulate(t.intervention)?;
    let mut search = WalkSearch {
        memo: vec![None; m.n_nodes() * 2 * l_cap],
        m: &m,
        y: t.y,
        c: t.conditioning,
        l_cap,
    };
    for (u, _mx, mu) in m.incident(t.x) {
        if search.reaches(u, mu, l_cap - 1) {
            return Ok(true);
        }
    }
    Ok(false)
}

struct WalkSearch<'a> {
    m: &'a MixedGraph,
    y: NodeId,
    c: NodeSet,
    l_cap: usize,
    /// memo[node][mark][remaining]: can a valid walk suffix reach the target?
    memo: Vec<Option<bool>>,
}

impl WalkSearch<'_> {
    fn slot(&self, v: NodeId, mark: Mark, rem: usize) -> usize {
        (v.index() * 2 + usize::from(mark == Mark::Head)) * self.l_cap + rem
    }

    fn reaches(&mut self, v: NodeId, mark: Mark, remaining: usize) -> bool {
        if v == self.y {
            return true;
        }
        if remaining == 0 {
            return false;
        }
        let slot = self.slot(v, mark, remaining - 1);
        if let Some(known) = self.memo[slot] {
            return known;
        }
        // answer pessimistically while exploring so cycles terminate; a cut
        // cycle never carries the only witness because some acyclic suffix
        // of any witness walk is also a witness
        self.memo[slot] = Some(false);
        let mut found = false;
        for (u, mv, mu) in self.m.incident(v) {
            let collider = mark == Mark::Head && mv == Mark::Head;
            let open = if collider { self.c.contains(v) } else { !self.c.contains(v) };
            if open && self.reaches(u, mu, remaining - 1) {
                found = true;
                break;
            }
        }
        self.memo[slot] = Some(found);
        found
    }
}

/// Number of candidate edge slots at `n` nodes.
pub fn edge_slots(n: usize) -> usize {
    n * (n - 1) + n * (n - 1) / 2
}

/// The graph for one enumeration index. Bit layout: directed pairs `(x, y)`
/// in lexicographic order, then bidirected pairs `x < y`.
pub fn graph_from_bits(n: usize, bits: u64) -> MixedGraph {
    let mut g = MixedGraph::unnamed(n);
    let mut k = 0;
    for x in 0..n as u32 {
        for y in 0..n as u32 {
            if x != y {
                if bits >> k & 1 == 1 {
                    g.add_directed(NodeId(x), NodeId(y)).unwrap();
                }
                k += 1;
            }
        }
    }
    for x in 0..n as u32 {
        for y in x + 1..n as u32 {
            if bits >> k & 1 == 1 {
                g.add_bidirected(NodeId(x), NodeId(y)).unwrap();
            }
            k += 1;
        }
    }
    g
}

/// Streams every mixed graph over `n` nodes exactly once, in bit order.
pub fn enumerate_graphs(
    n: usize,
) -> Result<impl Iterator<Item = MixedGraph>, BruteforceError> {
    if n > 4 {
        return Err(BruteforceError::TooLarge(n));
    }
    let total: u64 = 1 << edge_slots(n);
    Ok((0..total).map(move |bits| graph_from_bits(n, bits)))
}

/// The indices a graph's statuses occupy in the consensus masks.
struct ItemLayout {
    n: usize,
    track_ancestral: bool,
}

impl ItemLayout {
    fn count(&self) -> usize {
        let dir = self.n * (self.n - 1);
        let bi = self.n * (self.n - 1) / 2;
        dir + bi + if self.track_ancestral { dir } else { 0 }
    }

    /// Per-item polarity mask of one graph.
    fn observe(&self, g: &MixedGraph) -> u128 {
        let mut mask = 0u128;
        let mut k = 0;
        for x in 0..self.n as u32 {
            for y in 0..self.n as u32 {
                if x != y {
                    if g.has_directed(NodeId(x), NodeId(y)) {
                        mask |= 1 << k;
                    }
                    k += 1;
                }
            }
        }
        for x in 0..self.n as u32 {
            for y in x + 1..self.n as u32 {
                if g.has_bidirected(NodeId(x), NodeId(y)) {
                    mask |= 1 << k;
                }
                k += 1;
            }
        }
        if self.track_ancestral {
            for x in 0..self.n as u32 {
                let reach = g.directed_reachable(NodeId(x));
                for y in 0..self.n as u32 {
                    if x != y {
                        if reach.contains(NodeId(y)) {
                            mask |= 1 << k;
                        }
                        k += 1;
                    }
                }
            }
        }
        mask
    }

    fn solution(&self, seen_present: u128, seen_absent: u128) -> EdgeSolution {
        let mut sol = EdgeSolution::all_unknown(self.n, self.track_ancestral);
        let status = |k: usize| match (seen_present >> k & 1 == 1, seen_absent >> k & 1 == 1) {
            (true, false) => Status::Present,
            (false, true) => Status::Absent,
            _ => Status::Unknown,
        };
        let mut k = 0;
        for x in 0..self.n as u32 {
            for y in 0..self.n as u32 {
                if x != y {
                    sol.set_directed(NodeId(x), NodeId(y), status(k));
                    k += 1;
                }
            }
        }
        for x in 0..self.n as u32 {
            for y in x + 1..self.n as u32 {
                sol.set_bidirected(NodeId(x), NodeId(y), status(k));
                k += 1;
            }
        }
        if self.track_ancestral {
            for x in 0..self.n as u32 {
                for y in 0..self.n as u32 {
                    if x != y {
                        sol.set_ancestral(NodeId(x), NodeId(y), status(k));
                        k += 1;
                    }
                }
            }
        }
        sol
    }
}

/// Status consensus over every graph consistent with the relations and the
/// model-space assumptions: a status is determinate exactly when all
/// surviving graphs agree on it. Errors when no graph survives.
pub fn consensus(
    relations: &[Relation],
    n: usize,
    assumptions: Assumptions,
    track_ancestral: bool,
) -> Result<EdgeSolution, BruteforceError> {
    if n > 4 {
        return Err(BruteforceError::TooLarge(n));
    }
    let layout = ItemLayout { n, track_ancestral };
    let all_items: u128 = if layout.count() == 0 { 0 } else { (1 << layout.count()) - 1 };
    let total: u64 = 1 << edge_slots(n);
    let chunk: u64 = 1 << 12;
    let n_chunks = total.div_ceil(chunk);

    let aggregate = Mutex::new((0u128, 0u128, 0u64));
    let saturated = AtomicBool::new(false);
    (0..n_chunks).into_par_iter().for_each(|ci| {
        if saturated.load(Ordering::Relaxed) {
            return;
        }
        let mut seen_present = 0u128;
        let mut seen_absent = 0u128;
        let mut survivors = 0u64;
        for bits in ci * chunk..((ci + 1) * chunk).min(total) {
            let g = graph_from_bits(n, bits);
            if !assumptions.satisfied_by(&g) {
                continue;
            }
            if relations
                .iter()
                .any(|r| g.d_connected(&r.spec).expect("relation in universe") != r.connected)
            {
                continue;
            }
            survivors += 1;
            let mask = layout.observe(&g);
            seen_present |= mask;
            seen_absent |= !mask & all_items;
        }
        let mut agg = aggregate.lock().unwrap();
        agg.0 |= seen_present;
        agg.1 |= seen_absent;
        agg.2 += survivors;
        // once every item has been seen at both polarities nothing can change
        if agg.2 > 0 && (agg.0 & agg.1) == all_items {
            saturated.store(true, Ordering::Relaxed);
        }
    });
    let (seen_present, seen_absent, survivors) = *aggregate.lock().unwrap();
    if survivors == 0 {
        return Err(BruteforceError::Contradiction);
    }
    Ok(layout.solution(seen_present, seen_absent))
}
