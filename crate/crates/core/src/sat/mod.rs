//! Incremental SAT solving behind a small contract, plus backbone
//! computation. Two backends implement the contract: an embedded
//! conflict-driven solver and an external process speaking DIMACS.

mod cdcl;
mod external;

pub use cdcl::CdclSolver;
pub use external::ExternalSolver;

use crate::cnf::{Literal, PropVar};
use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Satisfiable,
    Unsatisfiable,
}

/// Total assignment indexed by variable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Model(pub Vec<bool>);

impl Model {
    #[inline]
    pub fn value(&self, v: PropVar) -> bool {
        self.0[v.index()]
    }
}

/// Outcome of one satisfiability call; the model is present iff satisfiable
/// and satisfies every clause submitted so far plus the given assumptions.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub model: Option<Model>,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("solver exceeded its time budget")]
    Timeout,
    #[error("external solver failure: {0}")]
    External(String),
}

/// Cumulative counters, for run reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub solves: u64,
    pub conflicts: u64,
    pub decisions: u64,
    pub propagations: u64,
}

/// The incremental solving contract. Clauses are permanent; assumptions hold
/// for a single call only.
pub trait SatBackend {
    /// Grows the variable universe to `var_count` ids.
    fn ensure_vars(&mut self, var_count: u32);

    /// Permanently adds a clause; learned state from earlier calls is kept.
    fn add_clause(&mut self, lits: &[Literal]);

    /// Decides satisfiability of the added clauses together with the
    /// assumption literals.
    fn solve_under(&mut self, assumptions: &[Literal]) -> Result<SolveOutcome, SolveError>;

    /// Optional wall-clock cutoff for subsequent calls.
    fn set_deadline(&mut self, _deadline: Option<Instant>) {}

    fn stats(&self) -> SolverStats;
}

/// Variables taking the same value in every model, with that polarity, and
/// the candidates that do not.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BackboneResult {
    pub fixed: BTreeMap<PropVar, bool>,
    pub free: BTreeSet<PropVar>,
}

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("formula is unsatisfiable")]
    Unsat,
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Computes the backbone restricted to `candidates`.
///
/// A variable is fixed at polarity `p` exactly when the formula is
/// unsatisfiable under the assumption of the opposite polarity. The first
/// model seeds candidate polarities and every further model prunes candidates
/// observed at both polarities, which only removes calls whose answer is
/// already known; the fixed/free partition is identical with or without the
/// refinement.
pub fn backbone(
    backend: &mut dyn SatBackend,
    candidates: &[PropVar],
) -> Result<BackboneResult, BackboneError> {
    let seed = backend.solve_under(&[])?;
    let model = match seed.status {
        SolveStatus::Unsatisfiable => return Err(BackboneError::Unsat),
        SolveStatus::Satisfiable => seed.model.expect("sat outcome carries a model"),
    };
    let mut ordered: Vec<PropVar> = candidates.to_vec();
    ordered.sort_unstable();
    ordered.dedup();

    let mut result = BackboneResult::default();
    let mut undecided: Vec<(PropVar, bool)> =
        ordered.into_iter().map(|v| (v, model.value(v))).collect();
    while let Some(&(v, p)) = undecided.first() {
        let out = backend.solve_under(&[Literal::with_sign(v, !p)])?;
        match out.status {
            SolveStatus::Unsatisfiable => {
                result.fixed.insert(v, p);
                undecided.remove(0);
            }
            SolveStatus::Satisfiable => {
                let m = out.model.expect("sat outcome carries a model");
                undecided.retain(|&(u, pu)| {
                    if m.value(u) == pu {
                        true
                    } else {
                        result.free.insert(u);
                        false
                    }
                });
            }
        }
    }
    Ok(result)
}

/// Backbone by explicit model enumeration; verification oracle for small
/// formulas only.
pub fn backbone_by_enumeration(
    formula: &crate::cnf::CnfFormula,
    candidates: &[PropVar],
) -> Option<BackboneResult> {
    let models = crate::cnf::all_models(formula);
    if models.is_empty() {
        return None;
    }
    let mut result = BackboneResult::default();
    for &v in candidates {
        let first = models[0][v.index()];
        if models.iter().all(|m| m[v.index()] == first) {
            result.fixed.insert(v, first);
        } else {
            result.free.insert(v);
        }
    }
    Some(result)
}
