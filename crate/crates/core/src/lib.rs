//! Causal structure discovery from d-separation and d-connection constraints
//! gathered across overlapping passive-observational and experimental data
//! sets. The model space is fully general: directed cycles and latent
//! confounders (bidirected edges) are both allowed. Constraints are compiled
//! into propositional formulas over edge variables and every edge and
//! ancestral status is read off the SAT backbone: present, absent, or
//! unknown; determined statuses are never wrong.

pub mod bruteforce;
pub mod cnf;
pub mod discovery;
pub mod encoder;
pub mod experiments;
pub mod graph;
pub mod sat;
pub mod text;

pub use discovery::{
    run, Assumptions, DiscoveryConfig, DiscoveryEngine, DiscoveryError, DiscoveryOutput,
    EdgeSolution, OracleSource, QueryVerdict, Status,
};
pub use encoder::{BackgroundConstraint, Encoder, QueryExpr};
pub use graph::{Experiment, MixedGraph, NodeId, NodeSet, Relation, TestSpec};
