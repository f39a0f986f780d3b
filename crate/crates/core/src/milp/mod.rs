//! The unit-commitment MILP, its branch-and-bound solver and an
//! exhaustive-enumeration oracle for tiny instances.

mod bnb;
mod brute;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dispatch::Dispatch;
use crate::formulation::{build, Commitment, Layout, UcModel};
use crate::instance::UcInstance;
use crate::schedule::Schedule;

pub use bnb::solve_bnb;
pub use brute::{brute_force_uc, BruteForceError, BRUTE_FORCE_BUDGET};

/// The MILP: the free-commitment model plus the integer column set.
#[derive(Debug, Clone)]
pub struct MilpProblem {
    pub model: UcModel,
    /// The `u` columns, in `(i, t)` lexicographic order.
    pub integer_cols: Vec<usize>,
    pub instance: UcInstance,
}

impl MilpProblem {
    pub fn layout(&self) -> &Layout {
        &self.model.layout
    }

    /// Column name, e.g. `u[0,3]`.
    pub fn name(&self, col: usize) -> String {
        self.model.layout.name(col)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.model.layout.column(name)
    }

    /// Column vector of a schedule and its dispatch, with `v, w` derived
    /// from the status transitions.
    pub fn point(&self, schedule: &Schedule, dispatch: &Dispatch) -> Vec<f64> {
        let inst = &self.instance;
        let l = &self.model.layout;
        let mut x = vec![0.0; l.num_cols()];
        for i in 0..inst.num_generators() {
            for t in 0..inst.horizon() {
                let b = |v: bool| if v { 1.0 } else { 0.0 };
                x[l.u(i, t)] = b(schedule.get(i, t));
                x[l.v(i, t)] = b(schedule.starts_up(inst, i, t));
                x[l.w(i, t)] = b(schedule.shuts_down(inst, i, t));
                x[l.p(i, t)] = dispatch.p[i][t];
            }
        }
        for t in 0..inst.horizon() {
            x[l.charge(t)] = dispatch.charge[t];
            x[l.discharge(t)] = dispatch.discharge[t];
            x[l.soc(t)] = dispatch.soc[t];
            x[l.curtail(t)] = dispatch.curtail[t];
        }
        x
    }

    pub(crate) fn schedule_from(&self, x: &[f64]) -> Schedule {
        let l = &self.model.layout;
        let mut s = Schedule::new(l.n_gen, l.horizon, false);
        for i in 0..l.n_gen {
            for t in 0..l.horizon {
                s.set(i, t, x[l.u(i, t)] > 0.5);
            }
        }
        s
    }
}

pub fn build_uc_milp(instance: &UcInstance) -> MilpProblem {
    let model = build(instance, Commitment::Free);
    let l = model.layout;
    let integer_cols = (0..l.n_gen)
        .flat_map(|i| (0..l.horizon).map(move |t| l.u(i, t)))
        .collect();
    MilpProblem {
        model,
        integer_cols,
        instance: instance.clone(),
    }
}

/// Partial assignment of commitment variables.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FixationMap {
    n_gen: usize,
    horizon: usize,
    fixed: BTreeMap<(usize, usize), bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FixationError {
    #[error("u[{0},{1}] is outside the commitment matrix")]
    OutOfRange(usize, usize),
    #[error("u[{0},{1}] is already fixed")]
    Duplicate(usize, usize),
}

impl FixationMap {
    pub fn new(n_gen: usize, horizon: usize) -> Self {
        FixationMap {
            n_gen,
            horizon,
            fixed: BTreeMap::new(),
        }
    }

    pub fn fix(&mut self, i: usize, t: usize, on: bool) -> Result<(), FixationError> {
        if i >= self.n_gen || t >= self.horizon {
            return Err(FixationError::OutOfRange(i, t));
        }
        if self.fixed.insert((i, t), on).is_some() {
            return Err(FixationError::Duplicate(i, t));
        }
        Ok(())
    }

    pub fn unfix(&mut self, i: usize, t: usize) -> Option<bool> {
        self.fixed.remove(&(i, t))
    }

    pub fn get(&self, i: usize, t: usize) -> Option<bool> {
        self.fixed.get(&(i, t)).copied()
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), bool)> + '_ {
        self.fixed.iter().map(|(&k, &v)| (k, v))
    }

    /// Every entry of `schedule` fixed to its value.
    pub fn from_schedule(schedule: &Schedule) -> Self {
        let mut m = FixationMap::new(schedule.num_generators(), schedule.horizon());
        for i in 0..schedule.num_generators() {
            for t in 0..schedule.horizon() {
                m.fixed.insert((i, t), schedule.get(i, t));
            }
        }
        m
    }

    /// Whether `schedule` agrees with every fixed entry.
    pub fn agrees_with(&self, schedule: &Schedule) -> bool {
        self.fixed.iter().all(|(&(i, t), &v)| schedule.get(i, t) == v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MilpStatus {
    Optimal,
    FeasibleAtGap,
    Infeasible,
    TimeLimit,
    /// Stopped by the node or work limit.
    NodeLimit,
}

/// What happened to a supplied warm incumbent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WarmStartOutcome {
    NotGiven,
    Accepted,
    Rejected(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeLogEntry {
    pub node: usize,
    pub depth: usize,
    /// LP objective of this node (`inf` when infeasible).
    pub lp_obj: f64,
    /// Global lower bound after processing the node.
    pub bound: f64,
    /// Incumbent objective after processing the node (`inf` when none).
    pub incumbent: f64,
    pub fractional: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MilpResult {
    pub status: MilpStatus,
    pub schedule: Option<Schedule>,
    pub dispatch: Option<Dispatch>,
    /// Incumbent objective, `inf` when there is none.
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub nodes: usize,
    /// Simplex iterations over all node LPs; the deterministic work measure.
    pub lp_iterations: usize,
    pub wall_time: f64,
    pub warm_start: WarmStartOutcome,
    /// Set when fixation was relaxed after making the problem infeasible.
    pub fixation_relaxed: bool,
    pub node_log: Vec<NodeLogEntry>,
}

impl MilpResult {
    pub fn has_incumbent(&self) -> bool {
        self.schedule.is_some()
    }
}

/// `(objective - bound) / max(|objective|, 1e-9)`.
pub fn relative_gap(objective: f64, bound: f64) -> f64 {
    if !objective.is_finite() {
        return f64::INFINITY;
    }
    ((objective - bound) / objective.abs().max(1e-9)).max(0.0)
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub gap: f64,
    pub warm: Option<(Schedule, Dispatch)>,
    pub fixed: Option<FixationMap>,
    pub node_limit: Option<usize>,
    /// Wall-clock limit in seconds.
    pub time_limit: Option<f64>,
    /// Limit on total simplex iterations; deterministic alternative to
    /// `time_limit`.
    pub iteration_limit: Option<usize>,
    pub log_nodes: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            gap: 0.0025,
            warm: None,
            fixed: None,
            node_limit: None,
            time_limit: None,
            iteration_limit: None,
            log_nodes: false,
        }
    }
}

pub fn write_node_log<W: Write>(log: &[NodeLogEntry], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "depth", "lp_obj", "bound", "incumbent", "fractional"])?;
    for e in log {
        w.write_record([
            e.node.to_string(),
            e.depth.to_string(),
            format!("{:.6}", e.lp_obj),
            format!("{:.6}", e.bound),
            format!("{:.6}", e.incumbent),
            e.fractional.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::small_random;

    #[test]
    fn fixation_rejects_duplicates_and_out_of_range() {
        let mut m = FixationMap::new(2, 3);
        m.fix(1, 2, true).unwrap();
        assert_eq!(m.fix(1, 2, false), Err(FixationError::Duplicate(1, 2)));
        assert_eq!(m.fix(2, 0, false), Err(FixationError::OutOfRange(2, 0)));
    }

    #[test]
    fn integer_columns_are_the_u_block_with_unit_bounds() {
        let inst = small_random(3, 6, 4);
        let p = build_uc_milp(&inst);
        assert_eq!(p.integer_cols.len(), 18);
        for &c in &p.integer_cols {
            assert!(p.name(c).starts_with("u["));
            let (lo, hi) = p.model.lp.col_bounds(c);
            assert!(0.0 <= lo && hi <= 1.0);
        }
    }

    #[test]
    fn gap_uses_floored_denominator() {
        assert_eq!(relative_gap(100.0, 99.0), 0.01);
        assert_eq!(relative_gap(0.0, 0.0), 0.0);
        assert!(relative_gap(f64::INFINITY, 0.0).is_infinite());
    }
}
