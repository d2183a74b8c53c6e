//! Simulation harness: random problem instances, runtime scaling over the
//! node count, identifiability as a function of the conditioning cap, and
//! the cost of running in the general model space when the truth is more
//! restricted. The harness always scores against ground truth and checks
//! that no determinate status is ever wrong.

use crate::discovery::{
    run, Assumptions, DiscoveryConfig, DiscoveryError, DiscoveryStats, EdgeSolution,
    OracleSource, Status,
};
use crate::graph::{random_experiments, random_graph, Experiment, MixedGraph};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("assumptions are not satisfied by the ground truth")]
    IncompatibleAssumptions,
    #[error("a determinate status contradicts the ground truth")]
    FalseStatus,
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
}

/// Ground-truth class an instance is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Restriction {
    None,
    Acyclic,
    NoLatents,
    Both,
}

impl Restriction {
    pub const ALL: [Restriction; 4] =
        [Restriction::None, Restriction::Acyclic, Restriction::NoLatents, Restriction::Both];

    pub fn as_str(self) -> &'static str {
        match self {
            Restriction::None => "none",
            Restriction::Acyclic => "acyclic",
            Restriction::NoLatents => "no-latents",
            Restriction::Both => "both",
        }
    }

    fn wants_acyclic(self) -> bool {
        matches!(self, Restriction::Acyclic | Restriction::Both)
    }

    fn wants_no_latents(self) -> bool {
        matches!(self, Restriction::NoLatents | Restriction::Both)
    }

    /// The assumption sets guaranteed valid for truths of this class.
    pub fn valid_assumption_sets(self) -> Vec<Assumptions> {
        let mut sets = vec![Assumptions::default()];
        if self.wants_acyclic() {
            sets.push(Assumptions { acyclic: true, no_latents: false });
        }
        if self.wants_no_latents() {
            sets.push(Assumptions { acyclic: false, no_latents: true });
        }
        if self.wants_acyclic() && self.wants_no_latents() {
            sets.push(Assumptions { acyclic: true, no_latents: true });
        }
        sets
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InstanceSpec {
    pub n: usize,
    pub edge_prob: f64,
    pub n_experiments: usize,
    pub seed: u64,
    pub restriction: Restriction,
}

/// Splitmix-style mixing so per-instance seeds derive deterministically from
/// a master seed and instance coordinates.
pub fn derive_seed(master: u64, a: u64, b: u64) -> u64 {
    let mut z = master
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws a ground truth and its experiments. Acyclic truths keep only the
/// directed edges respecting a random node order; latent-free truths drop
/// the bidirected draws.
pub fn generate_instance(spec: &InstanceSpec) -> (MixedGraph, Vec<Experiment>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<u32> = (0..spec.n as u32).collect();
    order.shuffle(&mut rng);
    let mut rank = vec![0usize; spec.n];
    for (pos, &v) in order.iter().enumerate() {
        rank[v as usize] = pos;
    }
    let mut g = random_graph(spec.n, spec.edge_prob, &mut rng);
    if spec.restriction.wants_acyclic() {
        for (x, y) in g.directed_edges() {
            if rank[x.index()] >= rank[y.index()] {
                g.remove_directed(x, y);
            }
        }
    }
    if spec.restriction.wants_no_latents() {
        for (x, y) in g.bidirected_edges() {
            g.remove_bidirected(x, y);
        }
    }
    let experiments = random_experiments(spec.n, spec.n_experiments, &mut rng);
    (g, experiments)
}

/// Identification categories, in reporting order.
pub const CATEGORIES: [&str; 6] = [
    "directed-present",
    "directed-absent",
    "bidirected-present",
    "bidirected-absent",
    "ancestral-present",
    "ancestral-absent",
];

/// Identified/true counts per category.
#[derive(Debug, Clone, Copy, Default)]
pub struct CategoryCounts {
    pub identified: [usize; 6],
    pub total: [usize; 6],
}

impl CategoryCounts {
    pub fn add(&mut self, other: &CategoryCounts) {
        for k in 0..6 {
            self.identified[k] += other.identified[k];
            self.total[k] += other.total[k];
        }
    }

    pub fn proportion(&self, k: usize) -> Option<f64> {
        (self.total[k] > 0).then(|| self.identified[k] as f64 / self.total[k] as f64)
    }

    /// Pooled proportion over every category with data.
    pub fn overall(&self) -> Option<f64> {
        let id: usize = self.identified.iter().sum();
        let total: usize = self.total.iter().sum();
        (total > 0).then(|| id as f64 / total as f64)
    }
}

/// Scores a solution against ground truth. Denominators are the true counts
/// per category; an item counts as identified when its status is determinate
/// (determinate statuses are checked to be correct, never merely assumed).
pub fn score(sol: &EdgeSolution, truth: &MixedGraph) -> Result<CategoryCounts, ExperimentError> {
    if !sol.consistent_with(truth) {
        return Err(ExperimentError::FalseStatus);
    }
    let mut counts = CategoryCounts::default();
    let mut tally = |truth_present: bool, status: Status, base: usize| {
        let k = if truth_present { base } else { base + 1 };
        counts.total[k] += 1;
        if status.is_determined() {
            counts.identified[k] += 1;
        }
    };
    for (x, y) in sol.ordered_pairs() {
        tally(truth.has_directed(x, y), sol.directed(x, y), 0);
    }
    for (x, y) in sol.unordered_pairs() {
        tally(truth.has_bidirected(x, y), sol.bidirected(x, y), 2);
    }
    if sol.tracks_ancestral() {
        for (x, y) in sol.ordered_pairs() {
            let reach = truth.directed_reachable(x).contains(y);
            tally(reach, sol.ancestral(x, y), 4);
        }
    }
    Ok(counts)
}

/// One discovery run against a known truth, with the harness-level guardrail
/// that the assumptions actually hold in the truth.
pub fn run_instance(
    graph: &MixedGraph,
    experiments: &[Experiment],
    assumptions: Assumptions,
    max_c: Option<usize>,
    track_ancestral: bool,
    time_budget: Option<Duration>,
) -> Result<(EdgeSolution, Duration, DiscoveryStats), ExperimentError> {
    if !assumptions.satisfied_by(graph) {
        return Err(ExperimentError::IncompatibleAssumptions);
    }
    let oracle = OracleSource::GraphOracle {
        graph: graph.clone(),
        experiments: experiments.to_vec(),
    };
    let cfg = DiscoveryConfig {
        max_c,
        assumptions,
        track_ancestral,
        time_budget,
        ..Default::default()
    };
    let started = Instant::now();
    let out = run(&oracle, &cfg)?;
    let elapsed = started.elapsed();
    if !out.solution.consistent_with(graph) {
        return Err(ExperimentError::FalseStatus);
    }
    Ok((out.solution, elapsed, out.stats))
}

#[derive(Debug, Clone)]
pub struct ScalingRow {
    pub n: usize,
    pub completed: usize,
    pub timeouts: usize,
    pub median: Option<Duration>,
    pub max: Option<Duration>,
}

fn median_of(mut times: Vec<Duration>) -> Option<Duration> {
    if times.is_empty() {
        return None;
    }
    times.sort_unstable();
    Some(times[times.len() / 2])
}

/// Median runtimes per node count. The instance stream per `n` depends only
/// on the master seed, so capped and uncapped variants see identical inputs.
/// Per-instance timeouts are recorded, not fatal.
pub fn run_scaling(
    n_range: std::ops::RangeInclusive<usize>,
    instances_per_n: usize,
    max_c: Option<usize>,
    seed: u64,
    timeout: Option<Duration>,
) -> Result<Vec<ScalingRow>, ExperimentError> {
    let mut rows = Vec::new();
    for n in n_range {
        let mut times = Vec::new();
        let mut timeouts = 0usize;
        for i in 0..instances_per_n {
            let spec = InstanceSpec {
                n,
                edge_prob: 0.2,
                n_experiments: 10,
                seed: derive_seed(seed, n as u64, i as u64),
                restriction: Restriction::None,
            };
            let (g, exps) = generate_instance(&spec);
            match run_instance(&g, &exps, Assumptions::default(), max_c, false, timeout) {
                Ok((_, elapsed, _)) => times.push(elapsed),
                Err(ExperimentError::Discovery(DiscoveryError::Solve(
                    crate::sat::SolveError::Timeout,
                ))) => timeouts += 1,
                Err(e) => return Err(e),
            }
        }
        rows.push(ScalingRow {
            n,
            completed: times.len(),
            timeouts,
            median: median_of(times.clone()),
            max: times.iter().max().copied(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct IdentifiabilityRow {
    pub max_c: usize,
    pub counts: CategoryCounts,
}

/// Identified proportions per category as the conditioning cap grows, pooled
/// over one fixed instance stream at `n` nodes.
pub fn run_identifiability(
    n: usize,
    instances: usize,
    seed: u64,
    timeout: Option<Duration>,
) -> Result<Vec<IdentifiabilityRow>, ExperimentError> {
    let mut rows = Vec::new();
    for cap in 0..=n.saturating_sub(2) {
        let mut pooled = CategoryCounts::default();
        for i in 0..instances {
            let spec = InstanceSpec {
                n,
                edge_prob: 0.2,
                n_experiments: 10,
                seed: derive_seed(seed, 1000 + n as u64, i as u64),
                restriction: Restriction::None,
            };
            let (g, exps) = generate_instance(&spec);
            let (sol, _, _) =
                run_instance(&g, &exps, Assumptions::default(), Some(cap), true, timeout)?;
            pooled.add(&score(&sol, &g)?);
        }
        rows.push(IdentifiabilityRow { max_c: cap, counts: pooled });
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct AssumptionRow {
    pub restriction: Restriction,
    pub assumptions: Assumptions,
    pub counts: CategoryCounts,
    pub determined: usize,
    pub items: usize,
}

/// For each ground-truth class, runs discovery under every assumption set
/// valid for that class and reports pooled identification counts.
pub fn run_assumption_comparison(
    n: usize,
    instances_per_class: usize,
    seed: u64,
    timeout: Option<Duration>,
) -> Result<Vec<AssumptionRow>, ExperimentError> {
    let mut rows = Vec::new();
    for (ci, &restriction) in Restriction::ALL.iter().enumerate() {
        for assumptions in restriction.valid_assumption_sets() {
            let mut pooled = CategoryCounts::default();
            let mut determined = 0usize;
            let mut items = 0usize;
            for i in 0..instances_per_class {
                let spec = InstanceSpec {
                    n,
                    edge_prob: 0.2,
                    n_experiments: 10,
                    seed: derive_seed(seed, 2000 + ci as u64, i as u64),
                    restriction,
                };
                let (g, exps) = generate_instance(&spec);
                let (sol, _, _) =
                    run_instance(&g, &exps, assumptions, None, true, timeout)?;
                pooled.add(&score(&sol, &g)?);
                let (d, t) = sol.determined_counts();
                determined += d;
                items += t;
            }
            rows.push(AssumptionRow { restriction, assumptions, counts: pooled, determined, items });
        }
    }
    Ok(rows)
}

/// Tab-separated rendering for external plotting.
pub fn scaling_tsv(rows: &[ScalingRow]) -> String {
    let mut out = String::from("n\tcompleted\ttimeouts\tmedian_ms\tmax_ms\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.n,
            r.completed,
            r.timeouts,
            r.median.map_or_else(|| "-".into(), |d| format!("{:.1}", d.as_secs_f64() * 1e3)),
            r.max.map_or_else(|| "-".into(), |d| format!("{:.1}", d.as_secs_f64() * 1e3)),
        ));
    }
    out
}

pub fn identifiability_tsv(rows: &[IdentifiabilityRow]) -> String {
    let mut out = String::from("max_c");
    for c in CATEGORIES {
        out.push_str(&format!("\t{c}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.max_c.to_string());
        for k in 0..6 {
            match r.counts.proportion(k) {
                Some(p) => out.push_str(&format!("\t{p:.4}")),
                None => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn assumptions_tsv(rows: &[AssumptionRow]) -> String {
    let mut out = String::from("truth_class\tassume_acyclic\tassume_no_latents\tdetermined\titems");
    for c in CATEGORIES {
        out.push_str(&format!("\t{c}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}",
            r.restriction.as_str(),
            r.assumptions.acyclic,
            r.assumptions.no_latents,
            r.determined,
            r.items
        ));
        for k in 0..6 {
            match r.counts.proportion(k) {
                Some(p) => out.push_str(&format!("\t{p:.4}")),
                None => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeId;

    #[test]
    fn restricted_generation_respects_its_class() {
        for (i, &restriction) in Restriction::ALL.iter().enumerate() {
            let spec = InstanceSpec {
                n: 6,
                edge_prob: 0.4,
                n_experiments: 5,
                seed: 100 + i as u64,
                restriction,
            };
            let (g, exps) = generate_instance(&spec);
            assert_eq!(exps.len(), 5);
            if restriction.wants_acyclic() {
                assert!(g.is_acyclic());
            }
            if restriction.wants_no_latents() {
                assert!(!g.has_any_bidirected());
            }
        }
    }

    #[test]
    fn generation_is_deterministic_under_seed() {
        let spec = InstanceSpec {
            n: 7,
            edge_prob: 0.2,
            n_experiments: 10,
            seed: 42,
            restriction: Restriction::None,
        };
        let (g1, e1) = generate_instance(&spec);
        let (g2, e2) = generate_instance(&spec);
        assert_eq!(g1, g2);
        assert_eq!(e1, e2);
    }

    #[test]
    fn incompatible_assumptions_are_rejected() {
        let mut g = MixedGraph::unnamed(2);
        g.add_directed(NodeId(0), NodeId(1)).unwrap();
        g.add_directed(NodeId(1), NodeId(0)).unwrap();
        let exps = vec![Experiment::passive(g.all_nodes())];
        let err = run_instance(
            &g,
            &exps,
            Assumptions { acyclic: true, no_latents: false },
            None,
            false,
            None,
        );
        assert!(matches!(err, Err(ExperimentError::IncompatibleAssumptions)));
    }

    #[test]
    fn scoring_small_instance() {
        let spec = InstanceSpec {
            n: 4,
            edge_prob: 0.3,
            n_experiments: 4,
            seed: 7,
            restriction: Restriction::None,
        };
        let (g, exps) = generate_instance(&spec);
        let (sol, _, _) =
            run_instance(&g, &exps, Assumptions::default(), None, true, None).unwrap();
        let counts = score(&sol, &g).unwrap();
        for k in 0..6 {
            assert!(counts.identified[k] <= counts.total[k]);
        }
        let (d, t) = sol.determined_counts();
        assert!(d <= t);
    }

    #[test]
    fn empty_truth_reaches_full_absent_identification_at_cap_zero() {
        let g = MixedGraph::unnamed(3);
        let exps = vec![Experiment::passive(g.all_nodes())];
        let (sol, _, _) =
            run_instance(&g, &exps, Assumptions::default(), Some(0), true, None).unwrap();
        let counts = score(&sol, &g).unwrap();
        // categories 1, 3, 5 are the absent ones; there are no present items
        assert_eq!(counts.proportion(1), Some(1.0));
        assert_eq!(counts.proportion(3), Some(1.0));
        assert_eq!(counts.proportion(5), Some(1.0));
        assert_eq!(counts.total[0], 0);
    }

    #[test]
    fn proportions_never_decrease_with_the_cap() {
        let spec = InstanceSpec {
            n: 4,
            edge_prob: 0.25,
            n_experiments: 6,
            seed: 11,
            restriction: Restriction::None,
        };
        let (g, exps) = generate_instance(&spec);
        let mut last: Option<usize> = None;
        for cap in 0..=2 {
            let (sol, _, _) =
                run_instance(&g, &exps, Assumptions::default(), Some(cap), true, None)
                    .unwrap();
            let (d, _) = sol.determined_counts();
            if let Some(prev) = last {
                assert!(d >= prev, "cap {cap} determined {d} < {prev}");
            }
            last = Some(d);
        }
    }
}
