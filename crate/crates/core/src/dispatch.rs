//! Economic dispatch for a fixed commitment schedule.

use std::cell::Cell;
use std::io::Write;

use serde::{Deserialize, Serialize};
use warmuc_lp::{Basis, LpError, LpOptions, LpProblem, LpStatus, Simplex};

use crate::formulation::{build, Commitment, Layout, RowKind, UcModel};
use crate::instance::UcInstance;
use crate::schedule::{check_dimensions, generator_violations, DimensionMismatch, Schedule, Violation};

/// Continuous operating point for one schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    /// `p[i][t]` in MW.
    pub p: Vec<Vec<f64>>,
    pub charge: Vec<f64>,
    pub discharge: Vec<f64>,
    pub soc: Vec<f64>,
    pub curtail: Vec<f64>,
}

/// Why a schedule cannot be dispatched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cause {
    MinUp { generator: usize },
    MinDown { generator: usize },
    InitialHold { generator: usize },
    Balance,
    Ramp { generator: usize },
    Storage,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DispatchError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    #[error("schedule cannot be dispatched: {cause:?} first violated at hour {hour}")]
    Infeasible { hour: usize, cause: Cause },
    #[error(transparent)]
    Lp(#[from] LpError),
}

impl DispatchError {
    pub fn is_infeasible(&self) -> bool {
        matches!(self, DispatchError::Infeasible { .. })
    }
}

/// Feasible dispatch together with its cost split.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchResult {
    pub dispatch: Dispatch,
    /// Commitment-independent part: `sum c_var * p`.
    pub variable_cost: f64,
    /// No-load plus startup cost implied by the schedule.
    pub fixed_cost: f64,
    pub iterations: usize,
}

impl DispatchResult {
    pub fn total_cost(&self) -> f64 {
        self.variable_cost + self.fixed_cost
    }
}

/// Structural feasibility of the schedule, in the order the LP would fail.
fn structural_error(instance: &UcInstance, schedule: &Schedule) -> Option<DispatchError> {
    let mut first: Option<(usize, Cause)> = None;
    for i in 0..instance.num_generators() {
        for v in generator_violations(instance, schedule, i) {
            let (hour, cause) = match v {
                Violation::MinUp { generator, start, .. } => (start, Cause::MinUp { generator }),
                Violation::MinDown { generator, start, .. } => (start, Cause::MinDown { generator }),
                Violation::InitialHold { generator, .. } => (0, Cause::InitialHold { generator }),
                Violation::Capacity { .. } => continue,
            };
            if first.is_none_or(|(h, _)| hour < h) {
                first = Some((hour, cause));
            }
        }
    }
    first.map(|(hour, cause)| DispatchError::Infeasible { hour, cause })
}

/// Reads the continuous variables out of a column vector of either model.
pub(crate) fn extract(l: &Layout, x: &[f64]) -> Dispatch {
    let horizon = l.horizon;
    Dispatch {
        p: (0..l.n_gen)
            .map(|i| (0..horizon).map(|t| x[l.p(i, t)]).collect())
            .collect(),
        charge: (0..horizon).map(|t| x[l.charge(t)]).collect(),
        discharge: (0..horizon).map(|t| x[l.discharge(t)]).collect(),
        soc: (0..horizon).map(|t| x[l.soc(t)]).collect(),
        curtail: (0..horizon).map(|t| x[l.curtail(t)]).collect(),
    }
}

/// Finds the earliest row that cannot be satisfied by solving the elastic
/// version of the dispatch LP (every row gets shortage/surplus slacks).
fn diagnose(model: &UcModel) -> Result<(usize, Cause), LpError> {
    let lp = &model.lp;
    let mut elastic = LpProblem::new();
    for j in 0..lp.num_cols() {
        let (lo, hi) = lp.col_bounds(j);
        elastic.add_col(0.0, lo, hi);
    }
    let first_slack = elastic.num_cols();
    for _ in 0..2 * lp.num_rows() {
        elastic.add_col(1.0, 0.0, f64::INFINITY);
    }
    for (r, row) in lp.rows().iter().enumerate() {
        let mut coeffs = row.coeffs.clone();
        coeffs.push((first_slack + 2 * r, 1.0));
        coeffs.push((first_slack + 2 * r + 1, -1.0));
        elastic.add_row(coeffs, row.lower, row.upper);
    }
    let sol = Simplex::new(&elastic, LpOptions::default())?.solve(None)?;
    let mut best: Option<(usize, Cause)> = None;
    if sol.status == LpStatus::Optimal {
        for (r, tag) in model.tags.iter().enumerate() {
            let slack = sol.x[first_slack + 2 * r] + sol.x[first_slack + 2 * r + 1];
            if slack > 1e-7 && best.is_none_or(|(h, _)| tag.hour < h) {
                let cause = match (tag.kind, tag.generator) {
                    (RowKind::Storage, _) => Cause::Storage,
                    (_, Some(generator)) => Cause::Ramp { generator },
                    _ => Cause::Balance,
                };
                best = Some((tag.hour, cause));
            }
        }
    }
    Ok(best.unwrap_or((0, Cause::Balance)))
}

fn solve_model(
    model: &UcModel,
    warm: Option<&Basis>,
) -> Result<(DispatchResult, Basis), DispatchError> {
    let simplex = Simplex::new(&model.lp, LpOptions::default())?;
    let sol = match simplex.solve(warm) {
        Ok(s) => s,
        // A stale warm basis can stall; a cold start is the fallback.
        Err(LpError::NumericalFailure { .. }) if warm.is_some() => simplex.solve(None)?,
        Err(e) => return Err(e.into()),
    };
    match sol.status {
        LpStatus::Optimal => {
            let dispatch = extract(&model.layout, &sol.x);
            Ok((
                DispatchResult {
                    dispatch,
                    variable_cost: sol.objective,
                    fixed_cost: model.constant,
                    iterations: sol.iterations,
                },
                sol.basis,
            ))
        }
        // Every column is bounded, so unbounded cannot happen; treat it as
        // a numerical failure rather than guess.
        LpStatus::Unbounded => Err(LpError::NumericalFailure {
            iterations: sol.iterations,
        }
        .into()),
        LpStatus::Infeasible => {
            let (hour, cause) = diagnose(model)?;
            Err(DispatchError::Infeasible { hour, cause })
        }
    }
}

/// Solves the dispatch LP for `schedule` from a cold start.
pub fn economic_dispatch(instance: &UcInstance, schedule: &Schedule) -> Result<DispatchResult, DispatchError> {
    check_dimensions(instance, schedule)?;
    if let Some(e) = structural_error(instance, schedule) {
        return Err(e);
    }
    let model = build(instance, Commitment::Fixed(schedule));
    solve_model(&model, None).map(|(r, _)| r)
}

/// Repeated dispatch on one instance. Every solve warm-starts from the same
/// reference basis (the all-on schedule's optimum), so results depend only
/// on the schedule and not on call order.
#[derive(Debug, Clone)]
pub struct DispatchSolver<'a> {
    instance: &'a UcInstance,
    reference: Option<Basis>,
    work: Cell<usize>,
}

impl<'a> DispatchSolver<'a> {
    pub fn new(instance: &'a UcInstance) -> Self {
        let all_on = Schedule::all_on(instance);
        let model = build(instance, Commitment::Fixed(&all_on));
        let reference = Simplex::new(&model.lp, LpOptions::default())
            .ok()
            .and_then(|s| s.solve(None).ok())
            .filter(|s| s.status == LpStatus::Optimal)
            .map(|s| s.basis);
        DispatchSolver {
            instance,
            reference,
            work: Cell::new(0),
        }
    }

    pub fn instance(&self) -> &'a UcInstance {
        self.instance
    }

    pub fn solve(&self, schedule: &Schedule) -> Result<DispatchResult, DispatchError> {
        check_dimensions(self.instance, schedule)?;
        if let Some(e) = structural_error(self.instance, schedule) {
            return Err(e);
        }
        let model = build(self.instance, Commitment::Fixed(schedule));
        let out = solve_model(&model, self.reference.as_ref()).map(|(r, _)| r);
        // Failed solves are charged one unit so the count stays monotone.
        self.work.set(self.work.get() + out.as_ref().map_or(1, |r| r.iterations.max(1)));
        out
    }

    /// Simplex iterations spent by this solver so far.
    pub fn work(&self) -> usize {
        self.work.get()
    }

    /// Cheaper feasibility probe: `Some(total cost)` when dispatchable.
    pub fn cost(&self, schedule: &Schedule) -> Option<f64> {
        self.solve(schedule).ok().map(|r| r.total_cost())
    }
}

/// `sum c_var p + c_noload u + c_startup v`, with startups counted against
/// the initial status.
pub fn total_cost(instance: &UcInstance, schedule: &Schedule, dispatch: &Dispatch) -> f64 {
    variable_cost(instance, dispatch) + commitment_cost(instance, schedule)
}

pub fn variable_cost(instance: &UcInstance, dispatch: &Dispatch) -> f64 {
    let mut cost = 0.0;
    for (g, row) in instance.generators.iter().zip(&dispatch.p) {
        for p in row {
            cost += g.c_var * p;
        }
    }
    cost
}

/// Commitment-dependent part of [`total_cost`].
pub fn commitment_cost(instance: &UcInstance, schedule: &Schedule) -> f64 {
    let mut cost = 0.0;
    for (i, g) in instance.generators.iter().enumerate() {
        for t in 0..instance.horizon() {
            if schedule.get(i, t) {
                cost += g.c_noload;
                if schedule.starts_up(instance, i, t) {
                    cost += g.c_startup;
                }
            }
        }
    }
    cost
}

/// Largest violation of the balance, output-band and storage relations.
pub fn dispatch_residual(instance: &UcInstance, schedule: &Schedule, d: &Dispatch) -> f64 {
    let st = &instance.storage;
    let mut worst: f64 = 0.0;
    for t in 0..instance.horizon() {
        let gen: f64 = (0..instance.num_generators()).map(|i| d.p[i][t]).sum();
        let bal = gen + d.discharge[t] - d.charge[t] - d.curtail[t] - instance.profiles.net_load(t);
        worst = worst.max(bal.abs());
        let prev = if t == 0 { st.soc_init } else { d.soc[t - 1] };
        let rec = d.soc[t] - prev - st.eff_charge * d.charge[t] + d.discharge[t] / st.eff_discharge;
        worst = worst.max(rec.abs());
        for (i, g) in instance.generators.iter().enumerate() {
            let on = if schedule.get(i, t) { 1.0 } else { 0.0 };
            worst = worst.max(on * g.p_min - d.p[i][t]).max(d.p[i][t] - on * g.p_max);
        }
    }
    worst
}

/// Writes `t, p_0..p_{N-1}, charge, discharge, soc, curtail` rows.
pub fn write_dispatch_csv<W: Write>(instance: &UcInstance, d: &Dispatch, out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((0..instance.num_generators()).map(|i| format!("p_{i}")));
    header.extend(["charge", "discharge", "soc", "curtail"].map(String::from));
    w.write_record(&header)?;
    for t in 0..instance.horizon() {
        let mut rec = vec![t.to_string()];
        rec.extend(d.p.iter().map(|row| format!("{:.6}", row[t])));
        for v in [d.charge[t], d.discharge[t], d.soc[t], d.curtail[t]] {
            rec.push(format!("{v:.6}"));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
