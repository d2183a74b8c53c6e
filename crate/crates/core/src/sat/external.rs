//! Backend that shells out to a DIMACS solver executable, used to cross-check
//! the embedded solver. Assumptions become temporary unit clauses in a fresh
//! problem file per call. The executable gets the CNF path as its only
//! argument and must answer `SAT`/`UNSAT` (or the `s SATISFIABLE` competition
//! form) on stdout, with model literals on following lines.

use super::{Model, SatBackend, SolveError, SolveOutcome, SolveStatus, SolverStats};
use crate::cnf::{CnfFormula, Literal};
use std::io::Write;
use std::path::PathBuf;
use std::process::Command;

pub struct ExternalSolver {
    program: PathBuf,
    formula: CnfFormula,
    stats: SolverStats,
}

impl ExternalSolver {
    pub fn new(program: impl Into<PathBuf>) -> ExternalSolver {
        ExternalSolver {
            program: program.into(),
            formula: CnfFormula::new(),
            stats: SolverStats::default(),
        }
    }
}

fn parse_solver_output(stdout: &str, var_count: u32) -> Result<SolveOutcome, SolveError> {
    let mut sat: Option<bool> = None;
    let mut values = vec![false; var_count as usize];
    for line in stdout.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('c') {
            continue;
        }
        let upper = line.to_ascii_uppercase();
        if upper == "UNSAT" || upper == "S UNSATISFIABLE" || upper == "UNSATISFIABLE" {
            sat = Some(false);
            continue;
        }
        if upper == "SAT" || upper == "S SATISFIABLE" || upper == "SATISFIABLE" {
            sat = Some(true);
            continue;
        }
        let body = line.strip_prefix("v ").unwrap_or(line);
        for tok in body.split_whitespace() {
            if let Ok(v) = tok.parse::<i32>() {
                if v != 0 {
                    let idx = (v.unsigned_abs() - 1) as usize;
                    if idx < values.len() {
                        values[idx] = v > 0;
                    }
                }
            }
        }
    }
    match sat {
        Some(true) => Ok(SolveOutcome {
            status: SolveStatus::Satisfiable,
            model: Some(Model(values)),
        }),
        Some(false) => Ok(SolveOutcome { status: SolveStatus::Unsatisfiable, model: None }),
        None => Err(SolveError::External(format!(
            "could not find a SAT/UNSAT verdict in solver output: {stdout:?}"
        ))),
    }
}

impl SatBackend for ExternalSolver {
    fn ensure_vars(&mut self, var_count: u32) {
        self.formula.var_count = self.formula.var_count.max(var_count);
    }

    fn add_clause(&mut self, lits: &[Literal]) {
        self.formula.add_clause(lits.to_vec());
    }

    fn solve_under(&mut self, assumptions: &[Literal]) -> Result<SolveOutcome, SolveError> {
        self.stats.solves += 1;
        let mut file = tempfile::Builder::new()
            .prefix("dsepsat")
            .suffix(".cnf")
            .tempfile()
            .map_err(|e| SolveError::External(e.to_string()))?;
        {
            let out = file.as_file_mut();
            writeln!(
                out,
                "p cnf {} {}",
                self.formula.var_count,
                self.formula.len() + assumptions.len()
            )
            .map_err(|e| SolveError::External(e.to_string()))?;
            for clause in self.formula.clauses() {
                for lit in clause {
                    write!(out, "{} ", lit.to_dimacs())
                        .map_err(|e| SolveError::External(e.to_string()))?;
                }
                writeln!(out, "0").map_err(|e| SolveError::External(e.to_string()))?;
            }
            for lit in assumptions {
                writeln!(out, "{} 0", lit.to_dimacs())
                    .map_err(|e| SolveError::External(e.to_string()))?;
            }
            out.flush().map_err(|e| SolveError::External(e.to_string()))?;
        }
        let output = Command::new(&self.program)
            .arg(file.path())
            .output()
            .map_err(|e| {
                SolveError::External(format!("failed to run {}: {e}", self.program.display()))
            })?;
        let stdout = String::from_utf8_lossy(&output.stdout);
        match parse_solver_output(&stdout, self.formula.var_count) {
            Ok(outcome) => Ok(outcome),
            Err(e) => {
                // minisat-style exit codes as a fallback verdict
                match output.status.code() {
                    Some(10) => Ok(SolveOutcome {
                        status: SolveStatus::Satisfiable,
                        model: Some(Model(vec![false; self.formula.var_count as usize])),
                    }),
                    Some(20) => {
                        Ok(SolveOutcome { status: SolveStatus::Unsatisfiable, model: None })
                    }
                    _ => Err(e),
                }
            }
        }
    }

    fn stats(&self) -> SolverStats {
        self.stats
    }
}
