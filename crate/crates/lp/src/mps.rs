//! Fixed-format text dump of an [`LpProblem`] for cross-checking with
//! external solvers. Columns keep their index order and numbers are written
//! with 12 significant digits.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::LpProblem;

fn num(v: f64) -> String {
    format!("{v:.11e}")
}

/// Renders `problem` in free MPS with `RANGES` for two-sided rows.
pub fn to_mps(problem: &LpProblem, name: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "NAME {name}");
    out.push_str("ROWS\n N  OBJ\n");
    for (i, row) in problem.rows().iter().enumerate() {
        let kind = if row.lower == row.upper {
            "E"
        } else if row.lower.is_finite() {
            "G"
        } else if row.upper.is_finite() {
            "L"
        } else {
            "N"
        };
        let _ = writeln!(out, " {kind}  R{i}");
    }

    let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); problem.num_cols()];
    for (i, row) in problem.rows().iter().enumerate() {
        for &(j, v) in &row.coeffs {
            by_col[j].push((i, v));
        }
    }
    out.push_str("COLUMNS\n");
    for (j, entries) in by_col.iter().enumerate() {
        let c = problem.objective()[j];
        if c != 0.0 {
            let _ = writeln!(out, "    C{j}  OBJ  {}", num(c));
        }
        for &(i, v) in entries {
            let _ = writeln!(out, "    C{j}  R{i}  {}", num(v));
        }
    }

    out.push_str("RHS\n");
    for (i, row) in problem.rows().iter().enumerate() {
        let rhs = if row.lower.is_finite() { row.lower } else { row.upper };
        if rhs.is_finite() && rhs != 0.0 {
            let _ = writeln!(out, "    RHS  R{i}  {}", num(rhs));
        }
    }

    out.push_str("RANGES\n");
    for (i, row) in problem.rows().iter().enumerate() {
        if row.lower != row.upper && row.lower.is_finite() && row.upper.is_finite() {
            let _ = writeln!(out, "    RNG  R{i}  {}", num(row.upper - row.lower));
        }
    }

    out.push_str("BOUNDS\n");
    for j in 0..problem.num_cols() {
        let (lo, hi) = problem.col_bounds(j);
        if lo == hi {
            let _ = writeln!(out, " FX BND  C{j}  {}", num(lo));
            continue;
        }
        match (lo.is_finite(), hi.is_finite()) {
            (false, false) => {
                let _ = writeln!(out, " FR BND  C{j}");
            }
            (false, true) => {
                let _ = writeln!(out, " MI BND  C{j}");
                let _ = writeln!(out, " UP BND  C{j}  {}", num(hi));
            }
            (true, _) => {
                if lo != 0.0 {
                    let _ = writeln!(out, " LO BND  C{j}  {}", num(lo));
                }
                if hi.is_finite() {
                    let _ = writeln!(out, " UP BND  C{j}  {}", num(hi));
                } else if lo != 0.0 {
                    let _ = writeln!(out, " PL BND  C{j}");
                }
            }
        }
    }
    out.push_str("ENDATA\n");
    out
}

pub fn write_mps(problem: &LpProblem, name: &str, path: &Path) -> io::Result<()> {
    std::fs::write(path, to_mps(problem, name))
}
