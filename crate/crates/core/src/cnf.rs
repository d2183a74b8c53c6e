//! Propositional formulas in conjunctive normal form, plus the table mapping
//! semantic variables (edges, relations, walk segments) to propositional ids.

use crate::graph::{NodeId, NodeSet};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{self, Write};
use thiserror::Error;

/// A propositional variable; ids are dense, positive, and match DIMACS.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct PropVar(pub u32);

impl PropVar {
    #[inline]
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }
}

/// A possibly negated variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub var: PropVar,
    pub negated: bool,
}

impl Literal {
    pub fn pos(var: PropVar) -> Literal {
        Literal { var, negated: false }
    }

    pub fn neg(var: PropVar) -> Literal {
        Literal { var, negated: true }
    }

    pub fn with_sign(var: PropVar, value: bool) -> Literal {
        Literal { var, negated: !value }
    }

    pub fn to_dimacs(self) -> i32 {
        if self.negated {
            -(self.var.0 as i32)
        } else {
            self.var.0 as i32
        }
    }

    pub fn from_dimacs(v: i32) -> Literal {
        debug_assert!(v != 0);
        Literal { var: PropVar(v.unsigned_abs()), negated: v < 0 }
    }

    /// Truth value under a total assignment.
    #[inline]
    pub fn eval(self, assignment: &[bool]) -> bool {
        assignment[self.var.index()] ^ self.negated
    }
}

impl std::ops::Not for Literal {
    type Output = Literal;
    fn not(self) -> Literal {
        Literal { var: self.var, negated: !self.negated }
    }
}

/// Clause collection with a known variable universe.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CnfFormula {
    pub var_count: u32,
    clauses: Vec<Vec<Literal>>,
}

impl CnfFormula {
    pub fn new() -> CnfFormula {
        CnfFormula::default()
    }

    pub fn ensure_var(&mut self, v: PropVar) {
        self.var_count = self.var_count.max(v.0);
    }

    pub fn add_clause(&mut self, lits: Vec<Literal>) {
        assert!(!lits.is_empty(), "clauses must be non-empty");
        for l in &lits {
            self.ensure_var(l.var);
        }
        self.clauses.push(lits);
    }

    pub fn clauses(&self) -> &[Vec<Literal>] {
        &self.clauses
    }

    pub fn len(&self) -> usize {
        self.clauses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clauses.is_empty()
    }

    pub fn literal_count(&self) -> usize {
        self.clauses.iter().map(|c| c.len()).sum()
    }

    /// True when `assignment` (indexed by variable) satisfies every clause.
    pub fn eval(&self, assignment: &[bool]) -> bool {
        self.clauses
            .iter()
            .all(|c| c.iter().any(|l| l.eval(assignment)))
    }

    /// First clause violated by `assignment`, for diagnostics.
    pub fn first_violated(&self, assignment: &[bool]) -> Option<&[Literal]> {
        self.clauses
            .iter()
            .find(|c| !c.iter().any(|l| l.eval(assignment)))
            .map(|c| c.as_slice())
    }

    /// Writes the formula in DIMACS CNF format.
    pub fn write_dimacs<W: Write>(&self, sink: &mut W) -> io::Result<()> {
        writeln!(sink, "p cnf {} {}", self.var_count, self.clauses.len())?;
        for clause in &self.clauses {
            for lit in clause {
                write!(sink, "{} ", lit.to_dimacs())?;
            }
            writeln!(sink, "0")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DimacsError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("line {0}: {1}")]
    Malformed(usize, String),
}

/// Parses DIMACS CNF text. Comment lines and an optional header are accepted;
/// the variable count grows to cover all literals seen.
pub fn parse_dimacs(text: &str) -> Result<CnfFormula, DimacsError> {
    let mut formula = CnfFormula::new();
    let mut pending: Vec<Literal> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('c') || line.starts_with('%') {
            continue;
        }
        if line.starts_with('p') {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if let Some(v) = fields.get(2).and_then(|s| s.parse::<u32>().ok()) {
                formula.var_count = formula.var_count.max(v);
            }
            continue;
        }
        for tok in line.split_whitespace() {
            let v: i32 = tok
                .parse()
                .map_err(|_| DimacsError::Malformed(lineno + 1, format!("bad literal `{tok}`")))?;
            if v == 0 {
                if !pending.is_empty() {
                    formula.add_clause(std::mem::take(&mut pending));
                }
            } else {
                pending.push(Literal::from_dimacs(v));
            }
        }
    }
    if !pending.is_empty() {
        formula.add_clause(pending);
    }
    Ok(formula)
}

/// Terminal-mark shape of a walk-segment variable, stored per ordered pair.
///
/// All four shapes are materialized per orientation: a segment variable's
/// walks may revisit any node except the segment's own target, and that
/// asymmetry does not survive endpoint swaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathKind {
    /// Tail at the source, arrowhead at the target.
    TailHead,
    /// Arrowhead at the source, tail at the target.
    HeadTail,
    /// Arrowheads at both ends.
    HeadHead,
    /// Tails at both ends.
    TailTail,
}

/// Semantic key of a propositional variable.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarKey {
    /// Edge `x -> y`.
    DirEdge(NodeId, NodeId),
    /// Edge `x <-> y`, keyed with `x < y`.
    BiEdge(NodeId, NodeId),
    /// D-connection of `{x, y}` (`x < y`) given `c` under intervention `j`.
    Relation { x: NodeId, y: NodeId, c: NodeSet, j: NodeSet },
    /// Existence of a connecting walk of exactly `len` edges from `x` to `y`
    /// with the given terminal marks, valid for conditioning `c` and
    /// intervention `j`.
    Path { x: NodeId, y: NodeId, len: u32, kind: PathKind, c: NodeSet, j: NodeSet },
    /// Compiled constraint or query root (background knowledge, queries).
    Derived(u32),
}

/// Role tag; auxiliary variables are never backbone candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarRole {
    Edge,
    Relation,
    Path,
    Derived,
    Aux,
}

/// Bijection between semantic keys and propositional variables, plus the
/// anonymous auxiliaries introduced while compiling equivalences.
#[derive(Debug, Clone, Default)]
pub struct VarTable {
    by_key: HashMap<VarKey, PropVar>,
    keys: Vec<Option<VarKey>>,
    roles: Vec<VarRole>,
    derived_count: u32,
}

impl VarTable {
    pub fn new() -> VarTable {
        VarTable::default()
    }

    pub fn var_count(&self) -> u32 {
        self.roles.len() as u32
    }

    fn alloc(&mut self, key: Option<VarKey>, role: VarRole) -> PropVar {
        let var = PropVar(self.roles.len() as u32 + 1);
        self.keys.push(key);
        self.roles.push(role);
        var
    }

    /// Returns the variable for `key`, allocating the next id on first use.
    pub fn fresh_var(&mut self, key: VarKey) -> PropVar {
        if let Some(&v) = self.by_key.get(&key) {
            return v;
        }
        let role = match &key {
            VarKey::DirEdge(..) | VarKey::BiEdge(..) => VarRole::Edge,
            VarKey::Relation { .. } => VarRole::Relation,
            VarKey::Path { .. } => VarRole::Path,
            VarKey::Derived(..) => VarRole::Derived,
        };
        let var = self.alloc(Some(key.clone()), role);
        self.by_key.insert(key, var);
        var
    }

    pub fn lookup(&self, key: &VarKey) -> Option<PropVar> {
        self.by_key.get(key).copied()
    }

    /// Allocates an anonymous auxiliary variable.
    pub fn fresh_aux(&mut self) -> PropVar {
        self.alloc(None, VarRole::Aux)
    }

    /// Allocates a fresh derived-constraint root.
    pub fn fresh_derived(&mut self) -> PropVar {
        self.derived_count += 1;
        self.fresh_var(VarKey::Derived(self.derived_count))
    }

    pub fn role(&self, v: PropVar) -> VarRole {
        self.roles[v.index()]
    }

    pub fn key(&self, v: PropVar) -> Option<&VarKey> {
        self.keys[v.index()].as_ref()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&VarKey, PropVar)> {
        self.by_key.iter().map(|(k, &v)| (k, v))
    }

    /// Serializable view (hash maps with struct keys do not survive JSON).
    pub fn to_entries(&self) -> Vec<(VarKey, u32, bool)> {
        self.keys
            .iter()
            .enumerate()
            .map(|(i, k)| match k {
                Some(key) => (key.clone(), i as u32 + 1, false),
                None => (VarKey::Derived(0), i as u32 + 1, true),
            })
            .collect()
    }

    pub fn from_entries(entries: Vec<(VarKey, u32, bool)>, derived_count: u32) -> VarTable {
        let mut table = VarTable::new();
        for (key, id, is_aux) in entries {
            debug_assert_eq!(id as usize, table.roles.len() + 1);
            if is_aux {
                table.fresh_aux();
            } else {
                table.fresh_var(key);
            }
        }
        table.derived_count = derived_count;
        table
    }

    pub fn derived_count(&self) -> u32 {
        self.derived_count
    }
}

/// Appends clauses equivalent to `lhs <=> (term_1 | term_2 | ...)` where each
/// term is a conjunction of literals. Multi-literal terms get one auxiliary
/// variable each; both implication directions are emitted, since backbone
/// computation asserts variables in either polarity. An empty `rhs` compiles
/// to `lhs <=> false`.
pub fn add_equiv_disjunction(
    formula: &mut CnfFormula,
    table: &mut VarTable,
    lhs: Literal,
    rhs: &[Vec<Literal>],
) {
    formula.ensure_var(lhs.var);
    if rhs.is_empty() {
        formula.add_clause(vec![!lhs]);
        return;
    }
    let mut disjuncts = Vec::with_capacity(rhs.len());
    for term in rhs {
        debug_assert!(!term.is_empty(), "conjunction terms must be non-empty");
        if term.len() == 1 {
            disjuncts.push(term[0]);
        } else {
            let aux = Literal::pos(table.fresh_aux());
            // aux => each conjunct; all conjuncts => aux
            for &lit in term {
                formula.add_clause(vec![!aux, lit]);
            }
            let mut back: Vec<Literal> = term.iter().map(|&l| !l).collect();
            back.push(aux);
            formula.add_clause(back);
            disjuncts.push(aux);
        }
    }
    // lhs => some disjunct
    let mut forward = vec![!lhs];
    forward.extend(disjuncts.iter().copied());
    formula.add_clause(forward);
    // each disjunct => lhs
    for d in disjuncts {
        formula.add_clause(vec![!d, lhs]);
    }
}

/// Enumerates all satisfying assignments of `formula`, for verification only.
/// Panics above 24 variables.
pub fn all_models(formula: &CnfFormula) -> Vec<Vec<bool>> {
    let n = formula.var_count as usize;
    assert!(n <= 24, "model enumeration capped at 24 variables");
    let mut out = Vec::new();
    for bits in 0u64..(1u64 << n) {
        let assignment: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
        if formula.eval(&assignment) {
            out.push(assignment);
        }
    }
    out
}
