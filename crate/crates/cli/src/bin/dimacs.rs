//! Minimal DIMACS CNF solver front-end: reads a problem from the file given
//! as the first argument (or stdin), prints `SAT` plus a model line or
//! `UNSAT`, and exits 10/20 accordingly. Serves as the external-process
//! backend for cross-checking the embedded solver.

use dsepsat::cnf::parse_dimacs;
use dsepsat::sat::{CdclSolver, SatBackend, SolveStatus};
use std::io::Read;

fn main() {
    let mut args = std::env::args().skip(1);
    let text = match args.next() {
        Some(path) => match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read {path}: {e}");
                std::process::exit(1);
            }
        },
        None => {
            let mut buf = String::new();
            if let Err(e) = std::io::stdin().read_to_string(&mut buf) {
                eprintln!("cannot read stdin: {e}");
                std::process::exit(1);
            }
            buf
        }
    };
    let formula = match parse_dimacs(&text) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("parse error: {e}");
            std::process::exit(1);
        }
    };
    let mut solver = CdclSolver::new();
    solver.ensure_vars(formula.var_count);
    for clause in formula.clauses() {
        solver.add_clause(clause);
    }
    match solver.solve_under(&[]) {
        Ok(out) => match out.status {
            SolveStatus::Satisfiable => {
                println!("SAT");
                let model = out.model.expect("sat outcome carries a model");
                let line: Vec<String> = model
                    .0
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        if v {
                            format!("{}", i + 1)
                        } else {
                            format!("-{}", i + 1)
                        }
                    })
                    .collect();
                println!("{} 0", line.join(" "));
                std::process::exit(10);
            }
            SolveStatus::Unsatisfiable => {
                println!("UNSAT");
                std::process::exit(20);
            }
        },
        Err(e) => {
            eprintln!("solver error: {e}");
            std::process::exit(1);
        }
    }
}
