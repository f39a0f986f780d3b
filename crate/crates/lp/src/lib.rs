//! Linear programming kernel.
//!
//! [`LpProblem`] holds a sparse minimization problem with range rows and
//! bounded columns; [`solve_lp`] runs the bounded-variable revised simplex
//! in [`simplex`]. [`Simplex`] keeps the factorized matrix around so callers
//! that only change bounds (branch-and-bound, repeated dispatch) can
//! re-solve from a previous [`Basis`].

mod lu;
pub mod mps;
mod problem;
pub mod simplex;

pub use problem::{LpProblem, Row};
pub use simplex::{Basis, LpOptions, Simplex, VarStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Column values; meaningful as a point only when `status` is optimal.
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Final basis, usable as a warm start for a related problem.
    pub basis: Basis,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("malformed problem: {0}")]
    Malformed(String),
    #[error("simplex failed to converge after {iterations} iterations")]
    NumericalFailure { iterations: usize },
}

/// Solves `problem` from scratch with default options.
pub fn solve_lp(problem: &LpProblem) -> Result<LpSolution, LpError> {
    solve_lp_with(problem, &LpOptions::default())
}

pub fn solve_lp_with(problem: &LpProblem, options: &LpOptions) -> Result<LpSolution, LpError> {
    Simplex::new(problem, options.clone())?.solve(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    #[test]
    fn single_bounded_variable() {
        let mut lp = LpProblem::new();
        let x = lp.add_col(1.0, -INF, INF);
        lp.add_row([(x, 1.0)], 1.0, 10.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-12);
        assert!((sol.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_pair_hits_the_facet() {
        let mut lp = LpProblem::new();
        let x = lp.add_col(-1.0, 0.0, 1.0);
        let y = lp.add_col(-1.0, 0.0, 1.0);
        lp.add_row([(x, 1.0), (y, 1.0)], -INF, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective + 1.0).abs() < 1e-12);
        assert!((sol.x[0] + sol.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let mut lp = LpProblem::new();
        let x = lp.add_col(0.0, 0.0, 1.0);
        lp.add_row([(x, 1.0)], 2.0, INF);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);

        let mut lp = LpProblem::new();
        let x = lp.add_col(-1.0, 0.0, INF);
        let y = lp.add_col(0.0, 0.0, INF);
        lp.add_row([(x, 1.0), (y, -1.0)], -INF, 3.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn no_rows() {
        let mut lp = LpProblem::new();
        lp.add_col(2.0, -1.0, 4.0);
        lp.add_col(-3.0, -1.0, 4.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.x, vec![-1.0, 4.0]);
        assert_eq!(sol.objective, -14.0);
    }

    #[test]
    fn equality_rows_and_free_columns() {
        // min x + 2y, x + y = 3, x - y = 1 (x, y free)
        let mut lp = LpProblem::new();
        let x = lp.add_col(1.0, -INF, INF);
        let y = lp.add_col(2.0, -INF, INF);
        lp.add_row([(x, 1.0), (y, 1.0)], 3.0, 3.0);
        lp.add_row([(x, 1.0), (y, -1.0)], 1.0, 1.0);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 2.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn warm_start_after_bound_change() {
        let mut lp = LpProblem::new();
        let x = lp.add_col(-1.0, 0.0, 4.0);
        let y = lp.add_col(-2.0, 0.0, 4.0);
        lp.add_row([(x, 1.0), (y, 1.0)], -INF, 5.0);
        let mut s = Simplex::new(&lp, LpOptions::default()).unwrap();
        let first = s.solve(None).unwrap();
        assert!((first.objective + 9.0).abs() < 1e-12);
        s.set_col_bounds(y, 0.0, 2.0);
        let second = s.solve(Some(&first.basis)).unwrap();
        assert!((second.objective + 7.0).abs() < 1e-12);
        assert!(second.iterations <= first.iterations + 2);
    }

    #[test]
    fn contradictory_bounds_are_infeasible() {
        let mut lp = LpProblem::new();
        lp.add_col(1.0, 0.0, 1.0);
        let mut s = Simplex::new(&lp, LpOptions::default()).unwrap();
        s.set_col_bounds(0, 1.0, 0.0);
        assert_eq!(s.solve(None).unwrap().status, LpStatus::Infeasible);
    }
}
