//! Bounded-variable primal revised simplex.
//!
//! Every row `i` gets a logical variable `r_i = a_i x` carrying the row
//! bounds, so the working system is `[A | -I] (x, r) = 0` with all
//! bounds living on variables. Phase 1 minimizes the sum of basic bound
//! violations (piecewise-linear cost recomputed every iteration), which
//! lets a solve start from any basis, including a parent node's basis
//! after branching changed some bounds. The basis inverse is a sparse LU
//! plus a product-form eta file that is folded back into a fresh
//! factorization every `refactor_interval` pivots.

use crate::lu::LuFactors;
use crate::problem::Csc;
use crate::{LpError, LpProblem, LpSolution, LpStatus};

/// Solver tolerances and limits.
#[derive(Debug, Clone, PartialEq)]
pub struct LpOptions {
    /// Basic variables within this distance of a bound count as feasible.
    pub primal_tol: f64,
    /// Reduced-cost tolerance, scaled by `max(1, max |c_j|)`.
    pub dual_tol: f64,
    /// Ratio-test entries smaller than this are not pivot candidates.
    pub pivot_tol: f64,
    /// Feasibility the returned optimal point must satisfy on the original
    /// rows and columns.
    pub final_feas_tol: f64,
    /// Consecutive degenerate pivots tolerated before switching to Bland's
    /// rule (switched off again after the first non-degenerate step).
    pub bland_after: usize,
    /// Iteration cap is `iteration_factor * (rows + cols)`.
    pub iteration_factor: usize,
    /// Eta-file length that triggers refactorization.
    pub refactor_interval: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            primal_tol: 1e-9,
            dual_tol: 1e-9,
            pivot_tol: 1e-9,
            final_feas_tol: 1e-7,
            bland_after: 1000,
            iteration_factor: 50,
            refactor_interval: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarStatus {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic with no finite bound, held at zero.
    Free,
}

/// Basis statuses for the structural columns followed by one logical per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Basis {
    status: Vec<VarStatus>,
}

impl Basis {
    pub fn statuses(&self) -> &[VarStatus] {
        &self.status
    }

    pub fn num_basic(&self) -> usize {
        self.status.iter().filter(|s| **s == VarStatus::Basic).count()
    }
}

#[derive(Debug, Clone)]
struct Eta {
    pos: usize,
    pivot: f64,
    index: Vec<usize>,
    value: Vec<f64>,
}

/// Reusable solver bound to one constraint matrix. Column bounds may be
/// changed between solves, which is how branch-and-bound drives it.
#[derive(Debug, Clone)]
pub struct Simplex {
    n: usize,
    m: usize,
    csc: Csc,
    cost: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    options: LpOptions,
}

impl Simplex {
    pub fn new(problem: &LpProblem, options: LpOptions) -> Result<Self, LpError> {
        problem.validate()?;
        let n = problem.num_cols();
        let m = problem.num_rows();
        let mut lower = problem.col_lower().to_vec();
        let mut upper = problem.col_upper().to_vec();
        for row in problem.rows() {
            lower.push(row.lower);
            upper.push(row.upper);
        }
        Ok(Self {
            n,
            m,
            csc: problem.to_csc(),
            cost: problem.objective().to_vec(),
            lower,
            upper,
            options,
        })
    }

    pub fn num_cols(&self) -> usize {
        self.n
    }

    pub fn num_rows(&self) -> usize {
        self.m
    }

    pub fn col_bounds(&self, j: usize) -> (f64, f64) {
        (self.lower[j], self.upper[j])
    }

    pub fn set_col_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        assert!(j < self.n, "column index out of range");
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    pub fn set_row_bounds(&mut self, i: usize, lower: f64, upper: f64) {
        assert!(i < self.m, "row index out of range");
        self.lower[self.n + i] = lower;
        self.upper[self.n + i] = upper;
    }

    /// Solves from `warm` when it is a valid basis for this matrix, from
    /// the all-logical basis otherwise.
    pub fn solve(&self, warm: Option<&Basis>) -> Result<LpSolution, LpError> {
        for j in 0..self.n + self.m {
            if self.lower[j] > self.upper[j] {
                // Contradictory bounds: nothing to pivot on.
                return Ok(self.trivially_infeasible());
            }
        }
        let mut run = Run::new(self, warm);
        run.solve()
    }

    fn trivially_infeasible(&self) -> LpSolution {
        let x: Vec<f64> = (0..self.n)
            .map(|j| clamp_finite(0.0, self.lower[j], self.upper[j]))
            .collect();
        let mut status = vec![VarStatus::AtLower; self.n];
        status.extend(std::iter::repeat(VarStatus::Basic).take(self.m));
        LpSolution {
            status: LpStatus::Infeasible,
            objective: dot(&self.cost, &x),
            x,
            iterations: 0,
            basis: Basis { status },
        }
    }
}

fn clamp_finite(v: f64, lo: f64, hi: f64) -> f64 {
    if lo.is_finite() && v < lo {
        lo
    } else if hi.is_finite() && v > hi {
        hi
    } else {
        v
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Per-solve working state.
struct Run<'a> {
    lp: &'a Simplex,
    head: Vec<usize>,
    status: Vec<VarStatus>,
    x: Vec<f64>,
    lu: LuFactors,
    etas: Vec<Eta>,
    work: Vec<f64>,
    dual_tol: f64,
    /// Reduced costs, maintained by the dual loop.
    d: Vec<f64>,
}

enum Step {
    Continue,
    Done(LpStatus),
}

enum DualEnd {
    /// Primal feasible; optimal up to the final primal check.
    Feasible,
    Infeasible,
    /// Degeneracy or numerics: hand over to the primal method.
    Stalled,
}

impl<'a> Run<'a> {
    fn new(lp: &'a Simplex, warm: Option<&Basis>) -> Self {
        let total = lp.n + lp.m;
        let warm_ok = warm
            .map(|b| b.status.len() == total && b.num_basic() == lp.m)
            .unwrap_or(false);
        let mut status = Vec::with_capacity(total);
        if warm_ok {
            status.extend_from_slice(&warm.unwrap().status);
        } else {
            status.extend(std::iter::repeat(VarStatus::AtLower).take(lp.n));
            status.extend(std::iter::repeat(VarStatus::Basic).take(lp.m));
        }
        let head: Vec<usize> = (0..total).filter(|&j| status[j] == VarStatus::Basic).collect();
        let cmax = lp.cost.iter().fold(1.0f64, |a, c| a.max(c.abs()));
        let mut run = Run {
            lp,
            head,
            status,
            x: vec![0.0; total],
            lu: LuFactors::default(),
            etas: Vec::new(),
            work: Vec::new(),
            dual_tol: lp.options.dual_tol * cmax,
            d: vec![0.0; total],
        };
        for j in 0..total {
            if run.status[j] != VarStatus::Basic {
                run.place_nonbasic(j, run.status[j]);
            }
        }
        run
    }

    /// Puts nonbasic `j` on the bound its status names, falling back to the
    /// other bound (or zero) when that bound is infinite.
    fn place_nonbasic(&mut self, j: usize, want: VarStatus) {
        let (lo, hi) = (self.lp.lower[j], self.lp.upper[j]);
        let (st, v) = match want {
            VarStatus::AtUpper if hi.is_finite() => (VarStatus::AtUpper, hi),
            _ if lo.is_finite() => (VarStatus::AtLower, lo),
            _ if hi.is_finite() => (VarStatus::AtUpper, hi),
            _ => (VarStatus::Free, 0.0),
        };
        self.status[j] = st;
        self.x[j] = v;
    }

    fn column(&self, j: usize) -> Vec<(usize, f64)> {
        if j < self.lp.n {
            self.lp.csc.col(j).collect()
        } else {
            vec![(j - self.lp.n, -1.0)]
        }
    }

    fn refactor(&mut self) {
        self.etas.clear();
        loop {
            let cols: Vec<Vec<(usize, f64)>> = self.head.iter().map(|&j| self.column(j)).collect();
            match LuFactors::factorize(self.lp.m, &cols) {
                Ok(lu) => {
                    self.lu = lu;
                    return;
                }
                Err(singular) => {
                    // Swap the dependent columns for logicals of the rows
                    // that lost their pivot.
                    for (&pos, &row) in singular.cols.iter().zip(&singular.rows) {
                        let out = self.head[pos];
                        let logical = self.lp.n + row;
                        self.head[pos] = logical;
                        self.status[logical] = VarStatus::Basic;
                        let v = self.x[out];
                        let near_upper = self.lp.upper[out].is_finite()
                            && (!self.lp.lower[out].is_finite()
                                || (self.lp.upper[out] - v).abs() < (v - self.lp.lower[out]).abs());
                        let want = if near_upper { VarStatus::AtUpper } else { VarStatus::AtLower };
                        self.place_nonbasic(out, want);
                    }
                }
            }
        }
    }

    fn ftran(&mut self, rhs: &mut [f64]) {
        self.lu.ftran(rhs, &mut self.work);
        for eta in &self.etas {
            let xp = rhs[eta.pos] / eta.pivot;
            if xp != 0.0 {
                for (&i, &a) in eta.index.iter().zip(&eta.value) {
                    rhs[i] -= a * xp;
                }
            }
            rhs[eta.pos] = xp;
        }
    }

    fn btran(&mut self, rhs: &mut [f64]) {
        for eta in self.etas.iter().rev() {
            let mut s = rhs[eta.pos];
            for (&i, &a) in eta.index.iter().zip(&eta.value) {
                s -= a * rhs[i];
            }
            rhs[eta.pos] = s / eta.pivot;
        }
        self.lu.btran(rhs, &mut self.work);
    }

    /// Recomputes basic values from the nonbasic ones.
    fn compute_basics(&mut self) {
        let n = self.lp.n;
        let mut rhs = vec![0.0; self.lp.m];
        for j in 0..n + self.lp.m {
            if self.status[j] == VarStatus::Basic || self.x[j] == 0.0 {
                continue;
            }
            let v = self.x[j];
            if j < n {
                for (i, a) in self.lp.csc.col(j) {
                    rhs[i] -= a * v;
                }
            } else {
                rhs[j - n] += v;
            }
        }
        self.ftran(&mut rhs);
        for (p, &j) in self.head.iter().enumerate() {
            self.x[j] = rhs[p];
        }
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let tol = self.lp.options.primal_tol;
        let v = self.x[j];
        if v < self.lp.lower[j] - tol {
            -1.0
        } else if v > self.lp.upper[j] + tol {
            1.0
        } else {
            0.0
        }
    }

    fn solve(&mut self) -> Result<LpSolution, LpError> {
        let cap = self.lp.options.iteration_factor * (self.lp.n + self.lp.m).max(1);
        let mut iterations = 0usize;
        let mut degenerate = 0usize;
        let mut bland = false;
        self.refactor();
        self.compute_basics();
        if self.make_dual_feasible() {
            match self.dual_loop(&mut iterations, cap)? {
                DualEnd::Infeasible => return Ok(self.finish(LpStatus::Infeasible, iterations)),
                // Optimality is confirmed (or the job finished) by the
                // primal loop below.
                DualEnd::Feasible => {}
                DualEnd::Stalled => {
                    self.refactor();
                    self.compute_basics();
                }
            }
        }
        let mut fresh = true;

        let status = loop {
            if iterations >= cap {
                return Err(LpError::NumericalFailure { iterations });
            }
            if self.etas.len() >= self.lp.options.refactor_interval {
                self.refactor();
                self.compute_basics();
                fresh = true;
            }
            match self.iterate(bland, &mut degenerate)? {
                Step::Continue => {
                    iterations += 1;
                    fresh = false;
                    // `degenerate` counts the current run of consecutive
                    // degenerate pivots; a long run switches to Bland's rule
                    // until the objective moves again.
                    bland = degenerate >= self.lp.options.bland_after;
                }
                Step::Done(st) => {
                    if fresh {
                        break st;
                    }
                    // Confirm termination on a fresh factorization.
                    self.refactor();
                    self.compute_basics();
                    fresh = true;
                }
            }
        };
        let solution = self.finish(status, iterations);
        if solution.status == LpStatus::Optimal {
            let viol = self.max_violation(&solution.x);
            if viol > self.lp.options.final_feas_tol {
                return Err(LpError::NumericalFailure { iterations });
            }
        }
        Ok(solution)
    }

    /// Reduced costs of every variable for the current basis.
    fn compute_duals(&mut self) {
        let n = self.lp.n;
        let m = self.lp.m;
        let mut y: Vec<f64> = self
            .head
            .iter()
            .map(|&j| if j < n { self.lp.cost[j] } else { 0.0 })
            .collect();
        self.btran(&mut y);
        for j in 0..n + m {
            self.d[j] = if self.status[j] == VarStatus::Basic {
                0.0
            } else if j < n {
                self.lp.cost[j] - self.lp.csc.col(j).map(|(i, a)| y[i] * a).sum::<f64>()
            } else {
                y[j - n]
            };
        }
    }

    /// Moves boxed nonbasics to the bound their reduced cost prefers.
    /// Returns false when some nonbasic without that bound is dual
    /// infeasible, in which case the dual method does not apply.
    fn make_dual_feasible(&mut self) -> bool {
        self.compute_duals();
        let tol = self.dual_tol;
        let mut flipped = false;
        for j in 0..self.lp.n + self.lp.m {
            let (lo, hi) = (self.lp.lower[j], self.lp.upper[j]);
            if lo == hi {
                continue;
            }
            let d = self.d[j];
            match self.status[j] {
                VarStatus::Basic => {}
                VarStatus::AtLower if d < -tol => {
                    if !hi.is_finite() {
                        return false;
                    }
                    self.place_nonbasic(j, VarStatus::AtUpper);
                    flipped = true;
                }
                VarStatus::AtUpper if d > tol => {
                    if !lo.is_finite() {
                        return false;
                    }
                    self.place_nonbasic(j, VarStatus::AtLower);
                    flipped = true;
                }
                VarStatus::Free if d.abs() > tol => return false,
                _ => {}
            }
        }
        if flipped {
            self.compute_basics();
        }
        true
    }

    /// Bounded dual simplex from a dual feasible basis.
    fn dual_loop(&mut self, iterations: &mut usize, cap: usize) -> Result<DualEnd, LpError> {
        let n = self.lp.n;
        let m = self.lp.m;
        let ptol = self.lp.options.primal_tol;
        let pivot_tol = self.lp.options.pivot_tol;
        let mut fresh = true;
        let mut degenerate = 0usize;
        let mut row_alpha = vec![0.0; n + m];
        loop {
            if *iterations >= cap {
                return Err(LpError::NumericalFailure { iterations: *iterations });
            }
            if degenerate >= self.lp.options.bland_after {
                return Ok(DualEnd::Stalled);
            }
            if self.etas.len() >= self.lp.options.refactor_interval {
                self.refactor();
                self.compute_basics();
                self.compute_duals();
                fresh = true;
            }

            // Leaving row: largest primal infeasibility.
            let mut leave: Option<(usize, f64, bool)> = None;
            for p in 0..m {
                let j = self.head[p];
                let (lo, hi, v) = (self.lp.lower[j], self.lp.upper[j], self.x[j]);
                let (inf, to_lower) = if v < lo - ptol {
                    (lo - v, true)
                } else if v > hi + ptol {
                    (v - hi, false)
                } else {
                    continue;
                };
                if leave.is_none_or(|(_, best, _)| inf > best) {
                    leave = Some((p, inf, to_lower));
                }
            }
            let Some((r, _, to_lower)) = leave else {
                if fresh {
                    return Ok(DualEnd::Feasible);
                }
                self.refactor();
                self.compute_basics();
                self.compute_duals();
                fresh = true;
                continue;
            };
            let sgn = if to_lower { 1.0 } else { -1.0 };

            let mut rho = vec![0.0; m];
            rho[r] = 1.0;
            self.btran(&mut rho);

            // Pivot row and Harris ratio test on the reduced costs.
            let mut theta_max = f64::INFINITY;
            for j in 0..n + m {
                row_alpha[j] = 0.0;
                if self.status[j] == VarStatus::Basic || self.lp.lower[j] == self.lp.upper[j] {
                    continue;
                }
                let a = if j < n {
                    self.lp.csc.col(j).map(|(i, v)| rho[i] * v).sum::<f64>()
                } else {
                    -rho[j - n]
                };
                row_alpha[j] = a;
                if a.abs() <= pivot_tol {
                    continue;
                }
                let sa = sgn * a;
                let bound = match self.status[j] {
                    VarStatus::AtLower if sa < 0.0 => (self.d[j].max(0.0) + self.dual_tol) / -sa,
                    VarStatus::AtUpper if sa > 0.0 => ((-self.d[j]).max(0.0) + self.dual_tol) / sa,
                    VarStatus::Free => 0.0,
                    _ => continue,
                };
                theta_max = theta_max.min(bound);
            }
            if !theta_max.is_finite() {
                // Dual unbounded: the primal is infeasible.
                if fresh {
                    return Ok(DualEnd::Infeasible);
                }
                self.refactor();
                self.compute_basics();
                self.compute_duals();
                fresh = true;
                continue;
            }
            let mut enter: Option<(usize, f64, f64)> = None;
            for j in 0..n + m {
                let a = row_alpha[j];
                if a.abs() <= pivot_tol || self.status[j] == VarStatus::Basic {
                    continue;
                }
                let sa = sgn * a;
                let ratio = match self.status[j] {
                    VarStatus::AtLower if sa < 0.0 => self.d[j].max(0.0) / -sa,
                    VarStatus::AtUpper if sa > 0.0 => (-self.d[j]).max(0.0) / sa,
                    VarStatus::Free => 0.0,
                    _ => continue,
                };
                if ratio <= theta_max && enter.is_none_or(|(_, _, best)| a.abs() > best) {
                    enter = Some((j, ratio, a.abs()));
                }
            }
            let (q, t, _) = enter.expect("Harris pass 1 found a candidate");

            let mut alpha = vec![0.0; m];
            if q < n {
                for (i, a) in self.lp.csc.col(q) {
                    alpha[i] = a;
                }
            } else {
                alpha[q - n] = -1.0;
            }
            self.ftran(&mut alpha);
            let aq = alpha[r];
            let ar = row_alpha[q];
            if aq.abs() <= pivot_tol || (aq - ar).abs() > 1e-7 * (1.0 + ar.abs()) {
                // Row and column disagree: the factorization has drifted.
                if fresh {
                    return Ok(DualEnd::Stalled);
                }
                self.refactor();
                self.compute_basics();
                self.compute_duals();
                fresh = true;
                continue;
            }

            // Primal step: the leaving variable lands on its violated bound.
            let out = self.head[r];
            let target = if to_lower { self.lp.lower[out] } else { self.lp.upper[out] };
            let delta = (self.x[out] - target) / aq;
            self.x[q] += delta;
            for p in 0..m {
                if alpha[p] != 0.0 {
                    let j = self.head[p];
                    self.x[j] -= delta * alpha[p];
                }
            }

            // Dual step.
            let step = sgn * t;
            if step != 0.0 {
                for j in 0..n + m {
                    if row_alpha[j] != 0.0 {
                        self.d[j] += step * row_alpha[j];
                    }
                }
            }
            self.d[q] = 0.0;
            self.d[out] = step;
            if t <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }

            self.place_nonbasic(out, if to_lower { VarStatus::AtLower } else { VarStatus::AtUpper });
            self.head[r] = q;
            self.status[q] = VarStatus::Basic;
            let mut index = Vec::new();
            let mut value = Vec::new();
            for (p, &a) in alpha.iter().enumerate() {
                if p != r && a != 0.0 {
                    index.push(p);
                    value.push(a);
                }
            }
            self.etas.push(Eta {
                pos: r,
                pivot: aq,
                index,
                value,
            });
            *iterations += 1;
            fresh = false;
        }
    }

    /// Largest bound violation of the structural point `x` on columns and rows.
    fn max_violation(&self, x: &[f64]) -> f64 {
        let n = self.lp.n;
        let mut act = vec![0.0; self.lp.m];
        let mut worst: f64 = 0.0;
        for (j, &v) in x.iter().enumerate() {
            worst = worst.max(self.lp.lower[j] - v).max(v - self.lp.upper[j]);
            for (i, a) in self.lp.csc.col(j) {
                act[i] += a * v;
            }
        }
        for (i, a) in act.iter().enumerate() {
            worst = worst.max(self.lp.lower[n + i] - a).max(a - self.lp.upper[n + i]);
        }
        worst
    }

    fn iterate(&mut self, bland: bool, degenerate: &mut usize) -> Result<Step, LpError> {
        let n = self.lp.n;
        let m = self.lp.m;
        let tol = self.lp.options.primal_tol;

        // Phase-1 costs for the basics, or real costs once feasible.
        let mut cb = vec![0.0; m];
        let mut phase1 = false;
        for (p, &j) in self.head.iter().enumerate() {
            let s = self.infeasibility(j);
            if s != 0.0 {
                phase1 = true;
            }
            cb[p] = s;
        }
        if !phase1 {
            for (p, &j) in self.head.iter().enumerate() {
                cb[p] = if j < n { self.lp.cost[j] } else { 0.0 };
            }
        }
        let mut y = cb;
        self.btran(&mut y);

        // Pricing.
        let mut entering: Option<(usize, f64)> = None;
        for j in 0..n + m {
            let st = self.status[j];
            if st == VarStatus::Basic || self.lp.lower[j] == self.lp.upper[j] {
                continue;
            }
            let cj = if phase1 || j >= n { 0.0 } else { self.lp.cost[j] };
            let ya = if j < n {
                self.lp.csc.col(j).map(|(i, a)| y[i] * a).sum::<f64>()
            } else {
                -y[j - n]
            };
            let d = cj - ya;
            let eligible = match st {
                VarStatus::AtLower => d < -self.dual_tol,
                VarStatus::AtUpper => d > self.dual_tol,
                VarStatus::Free => d.abs() > self.dual_tol,
                VarStatus::Basic => false,
            };
            if !eligible {
                continue;
            }
            if bland {
                entering = Some((j, d));
                break;
            }
            if entering.map_or(true, |(_, bd)| d.abs() > bd.abs()) {
                entering = Some((j, d));
            }
        }
        let Some((q, dq)) = entering else {
            return Ok(Step::Done(if phase1 {
                LpStatus::Infeasible
            } else {
                LpStatus::Optimal
            }));
        };
        let dir = if dq < 0.0 { 1.0 } else { -1.0 };

        let mut alpha = vec![0.0; m];
        if q < n {
            for (i, a) in self.lp.csc.col(q) {
                alpha[i] = a;
            }
        } else {
            alpha[q - n] = -1.0;
        }
        self.ftran(&mut alpha);

        // Ratio test. Basic p moves at rate delta = -dir * alpha[p].
        let target = |run: &Self, p: usize| -> Option<(f64, bool)> {
            let a = alpha[p];
            if a.abs() <= run.lp.options.pivot_tol {
                return None;
            }
            let j = run.head[p];
            let delta = -dir * a;
            let (lo, hi, v) = (run.lp.lower[j], run.lp.upper[j], run.x[j]);
            if phase1 && v < lo - tol {
                (delta > 0.0).then_some((lo, false))
            } else if phase1 && v > hi + tol {
                (delta < 0.0).then_some((hi, true))
            } else if delta > 0.0 {
                hi.is_finite().then_some((hi, true))
            } else {
                lo.is_finite().then_some((lo, false))
            }
        };
        let flip = {
            let (lo, hi) = (self.lp.lower[q], self.lp.upper[q]);
            (lo.is_finite() && hi.is_finite()).then_some(hi - lo)
        };

        let mut leave: Option<(usize, f64, bool)> = None;
        if bland {
            let mut best: Option<(f64, usize, usize, bool)> = None;
            for p in 0..m {
                let Some((b, up)) = target(self, p) else { continue };
                let delta = -dir * alpha[p];
                let ratio = ((b - self.x[self.head[p]]) / delta).max(0.0);
                let better = match best {
                    None => true,
                    Some((br, bj, _, _)) => {
                        ratio < br - 1e-12 || (ratio <= br + 1e-12 && self.head[p] < bj)
                    }
                };
                if better {
                    best = Some((ratio, self.head[p], p, up));
                }
            }
            if let Some((ratio, _, p, up)) = best {
                leave = Some((p, ratio, up));
            }
        } else {
            // Harris two-pass: bound the step with relaxed bounds, then
            // take the largest pivot among the rows that block within it.
            let mut theta_max = f64::INFINITY;
            for p in 0..m {
                let Some((b, _)) = target(self, p) else { continue };
                let delta = -dir * alpha[p];
                let relaxed = if delta > 0.0 { b + tol } else { b - tol };
                let ratio = (relaxed - self.x[self.head[p]]) / delta;
                theta_max = theta_max.min(ratio.max(0.0));
            }
            if theta_max.is_finite() {
                let mut best: Option<(f64, usize, f64, bool)> = None;
                for p in 0..m {
                    let Some((b, up)) = target(self, p) else { continue };
                    let delta = -dir * alpha[p];
                    let ratio = (b - self.x[self.head[p]]) / delta;
                    if ratio <= theta_max {
                        let mag = alpha[p].abs();
                        if best.map_or(true, |(bm, _, _, _)| mag > bm) {
                            best = Some((mag, p, ratio.max(0.0), up));
                        }
                    }
                }
                if let Some((_, p, ratio, up)) = best {
                    leave = Some((p, ratio, up));
                }
            }
        }

        let use_flip = match (flip, leave) {
            (Some(range), Some((_, ratio, _))) => range <= ratio,
            (Some(_), None) => true,
            _ => false,
        };

        if !use_flip && leave.is_none() {
            if phase1 {
                // Degenerate numerics: the phase-1 direction has no blocking
                // breakpoint. Refactor and try again.
                self.refactor();
                self.compute_basics();
                *degenerate += 1;
                return Ok(Step::Continue);
            }
            return Ok(Step::Done(LpStatus::Unbounded));
        }

        let theta = if use_flip { flip.unwrap() } else { leave.unwrap().1 };
        if theta <= 1e-12 {
            *degenerate += 1;
        } else {
            *degenerate = 0;
        }
        if theta != 0.0 {
            self.x[q] += dir * theta;
            for p in 0..m {
                if alpha[p] != 0.0 {
                    let j = self.head[p];
                    self.x[j] -= dir * theta * alpha[p];
                }
            }
        }

        if use_flip {
            let st = if dir > 0.0 { VarStatus::AtUpper } else { VarStatus::AtLower };
            self.place_nonbasic(q, st);
            return Ok(Step::Continue);
        }

        let (r, _, up) = leave.unwrap();
        let out = self.head[r];
        let st = if up { VarStatus::AtUpper } else { VarStatus::AtLower };
        self.place_nonbasic(out, st);
        self.head[r] = q;
        self.status[q] = VarStatus::Basic;

        let mut index = Vec::new();
        let mut value = Vec::new();
        for (p, &a) in alpha.iter().enumerate() {
            if p != r && a != 0.0 {
                index.push(p);
                value.push(a);
            }
        }
        self.etas.push(Eta {
            pos: r,
            pivot: alpha[r],
            index,
            value,
        });
        Ok(Step::Continue)
    }

    fn finish(&mut self, status: LpStatus, iterations: usize) -> LpSolution {
        let n = self.lp.n;
        let mut x = self.x[..n].to_vec();
        if status == LpStatus::Optimal {
            // Snap columns onto bounds they sit within tolerance of.
            for (j, v) in x.iter_mut().enumerate() {
                *v = clamp_finite(*v, self.lp.lower[j], self.lp.upper[j]);
            }
        }
        LpSolution {
            status,
            objective: dot(&self.lp.cost, &x),
            x,
            iterations,
            basis: Basis {
                status: self.status.clone(),
            },
        }
    }
}
