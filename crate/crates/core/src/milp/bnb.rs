//! LP-based branch-and-bound over the commitment variables.
//!
//! Node selection is depth-first until the first incumbent, then best
//! bound (ties: deeper first, then older). Branching picks the most
//! fractional `u`, ties going to the lowest column. Every node re-solves
//! from its parent's optimal basis.

use std::time::Instant;

use log::warn;
use warmuc_lp::{Basis, LpError, LpOptions, LpSolution, LpStatus, Simplex};

use super::{relative_gap, MilpProblem, MilpResult, MilpStatus, NodeLogEntry, SolveOptions, WarmStartOutcome};
use crate::dispatch::extract;
use crate::schedule::generator_violations;

/// Integer variables closer than this to 0 or 1 count as integral.
const INT_TOL: f64 = 1e-6;
/// Feasibility tolerance for accepting a warm incumbent.
const WARM_FEAS_TOL: f64 = 1e-6;

struct Node {
    id: usize,
    depth: usize,
    bound: f64,
    /// Branching decisions from the root: `(column, fixed value)`.
    branch: Vec<(usize, f64)>,
    basis: Option<Basis>,
}

fn prune_tol(incumbent: f64) -> f64 {
    (1e-11 * incumbent.abs()).max(1e-7)
}

/// Whether a relaxation value can still beat the incumbent.
fn can_improve(value: f64, incumbent: f64) -> bool {
    !incumbent.is_finite() || value < incumbent - prune_tol(incumbent)
}

fn solve_node(simplex: &Simplex, basis: Option<&Basis>) -> Result<LpSolution, LpError> {
    match simplex.solve(basis) {
        Err(LpError::NumericalFailure { .. }) if basis.is_some() => simplex.solve(None),
        r => r,
    }
}

/// Validates a warm incumbent against the model (structure, fixation and
/// every row/column bound) and returns its column vector and objective.
fn check_warm(
    problem: &MilpProblem,
    options: &SolveOptions,
    lower: &[f64],
    upper: &[f64],
) -> Result<Option<(f64, Vec<f64>)>, String> {
    let Some((schedule, dispatch)) = &options.warm else {
        return Ok(None);
    };
    let inst = &problem.instance;
    if !schedule.matches(inst) {
        return Err("schedule dimensions differ from the instance".into());
    }
    for i in 0..inst.num_generators() {
        if let Some(v) = generator_violations(inst, schedule, i).first() {
            return Err(format!("schedule violates {v:?}"));
        }
    }
    if let Some(f) = &options.fixed {
        if !f.agrees_with(schedule) {
            return Err("schedule contradicts the fixation".into());
        }
    }
    if dispatch.p.len() != inst.num_generators() || dispatch.curtail.len() != inst.horizon() {
        return Err("dispatch dimensions differ from the instance".into());
    }
    let x = problem.point(schedule, dispatch);
    let lp = &problem.model.lp;
    let mut worst: f64 = 0.0;
    for (j, &v) in x.iter().enumerate() {
        worst = worst.max(lower[j] - v).max(v - upper[j]);
    }
    for (row, act) in lp.rows().iter().zip(lp.row_activity(&x)) {
        worst = worst.max(row.lower - act).max(act - row.upper);
    }
    if worst > WARM_FEAS_TOL {
        return Err(format!("dispatch violates the model by {worst:.3e}"));
    }
    Ok(Some((lp.objective_value(&x), x)))
}

pub fn solve_bnb(problem: &MilpProblem, options: &SolveOptions) -> MilpResult {
    let start = Instant::now();
    let lp = &problem.model.lp;
    let layout = problem.model.layout;
    let mut simplex = Simplex::new(lp, LpOptions::default()).expect("UC model is well formed");

    let mut lower = lp.col_lower().to_vec();
    let mut upper = lp.col_upper().to_vec();
    let mut contradictory = false;
    if let Some(f) = &options.fixed {
        for ((i, t), on) in f.iter() {
            let c = layout.u(i, t);
            let v = if on { 1.0 } else { 0.0 };
            lower[c] = lower[c].max(v);
            upper[c] = upper[c].min(v);
            contradictory |= lower[c] > upper[c];
        }
    }
    for j in 0..lp.num_cols() {
        simplex.set_col_bounds(j, lower[j], upper[j]);
    }

    let mut result = MilpResult {
        status: MilpStatus::Infeasible,
        schedule: None,
        dispatch: None,
        objective: f64::INFINITY,
        bound: f64::INFINITY,
        gap: f64::INFINITY,
        nodes: 0,
        lp_iterations: 0,
        wall_time: 0.0,
        warm_start: WarmStartOutcome::NotGiven,
        fixation_relaxed: false,
        node_log: Vec::new(),
    };

    let mut incumbent: Option<(f64, Vec<f64>)> = None;
    if options.warm.is_some() {
        match check_warm(problem, options, &lower, &upper) {
            Ok(inc) => {
                incumbent = inc;
                result.warm_start = WarmStartOutcome::Accepted;
            }
            Err(reason) => {
                warn!("warm start rejected: {reason}");
                result.warm_start = WarmStartOutcome::Rejected(reason);
            }
        }
    }
    if contradictory {
        result.wall_time = start.elapsed().as_secs_f64();
        return result;
    }

    let mut open: Vec<Node> = vec![Node {
        id: 0,
        depth: 0,
        bound: f64::NEG_INFINITY,
        branch: Vec::new(),
        basis: None,
    }];
    let mut next_id = 1;
    let mut best_bound = f64::NEG_INFINITY;
    let mut exhausted = false;
    let status = loop {
        let inc_obj = incumbent.as_ref().map_or(f64::INFINITY, |(o, _)| *o);
        if open.is_empty() {
            exhausted = true;
            break if incumbent.is_some() {
                MilpStatus::Optimal
            } else {
                MilpStatus::Infeasible
            };
        }
        let open_min = open.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
        best_bound = best_bound.max(open_min.min(inc_obj));
        if incumbent.is_some() {
            let slack = (options.gap * inc_obj.abs().max(1e-9)).max(prune_tol(inc_obj));
            if inc_obj - best_bound <= slack {
                break if relative_gap(inc_obj, best_bound) <= 1e-9 {
                    MilpStatus::Optimal
                } else {
                    MilpStatus::FeasibleAtGap
                };
            }
        }
        if options.node_limit.is_some_and(|n| result.nodes >= n)
            || options.iteration_limit.is_some_and(|n| result.lp_iterations >= n)
        {
            break MilpStatus::NodeLimit;
        }
        if options.time_limit.is_some_and(|s| start.elapsed().as_secs_f64() >= s) {
            break MilpStatus::TimeLimit;
        }

        let node = if incumbent.is_none() {
            open.pop().expect("non-empty")
        } else {
            let mut k = 0;
            for (idx, n) in open.iter().enumerate() {
                let b = &open[k];
                if (n.bound, std::cmp::Reverse(n.depth), n.id) < (b.bound, std::cmp::Reverse(b.depth), b.id) {
                    k = idx;
                }
            }
            open.remove(k)
        };
        if !can_improve(node.bound, inc_obj) {
            continue;
        }

        for &(c, v) in &node.branch {
            simplex.set_col_bounds(c, v, v);
        }
        let solved = solve_node(&simplex, node.basis.as_ref());
        for &(c, _) in &node.branch {
            simplex.set_col_bounds(c, lower[c], upper[c]);
        }
        result.nodes += 1;
        let mut entry = NodeLogEntry {
            node: node.id,
            depth: node.depth,
            lp_obj: f64::INFINITY,
            bound: 0.0,
            incumbent: 0.0,
            fractional: 0,
        };
        match solved {
            Err(e) => warn!("node {} dropped after LP failure: {e}", node.id),
            Ok(sol) => {
                result.lp_iterations += sol.iterations;
                if sol.status == LpStatus::Optimal {
                    let obj = sol.objective.max(node.bound);
                    entry.lp_obj = obj;
                    let mut pick: Option<(usize, f64)> = None;
                    for &c in &problem.integer_cols {
                        let f = sol.x[c].min(1.0 - sol.x[c]);
                        if f > INT_TOL {
                            entry.fractional += 1;
                            if pick.is_none_or(|(_, best)| f > best) {
                                pick = Some((c, f));
                            }
                        }
                    }
                    if can_improve(obj, inc_obj) {
                        match pick {
                            None => incumbent = Some((obj, sol.x.clone())),
                            Some((c, _)) => {
                                let up_first = sol.x[c] >= 0.5;
                                let order = if up_first { [0.0, 1.0] } else { [1.0, 0.0] };
                                // Pushed last is explored first while diving.
                                for v in order {
                                    let mut branch = node.branch.clone();
                                    branch.push((c, v));
                                    open.push(Node {
                                        id: next_id,
                                        depth: node.depth + 1,
                                        bound: obj,
                                        branch,
                                        basis: Some(sol.basis.clone()),
                                    });
                                    next_id += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
        if options.log_nodes {
            let inc_obj = incumbent.as_ref().map_or(f64::INFINITY, |(o, _)| *o);
            let open_min = open.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
            best_bound = best_bound.max(open_min.min(inc_obj));
            entry.bound = best_bound;
            entry.incumbent = inc_obj;
            result.node_log.push(entry);
        }
    };

    result.status = status;
    if let Some((obj, x)) = incumbent {
        result.objective = obj;
        result.bound = if exhausted { obj } else { best_bound.min(obj) };
        result.gap = relative_gap(obj, result.bound);
        result.schedule = Some(problem.schedule_from(&x));
        result.dispatch = Some(extract(&layout, &x));
    } else if !exhausted {
        result.bound = best_bound;
    }
    result.wall_time = start.elapsed().as_secs_f64();
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::{economic_dispatch, total_cost};
    use crate::milp::{build_uc_milp, FixationMap};
    use crate::schedule::{validate_schedule, Schedule};
    use crate::testutil::{single_gen, small_random};

    #[test]
    fn single_unit_single_hour_must_run() {
        let inst = single_gen(&[50.0]);
        let r = solve_bnb(&build_uc_milp(&inst), &SolveOptions::default());
        assert_eq!(r.status, MilpStatus::Optimal);
        let s = r.schedule.unwrap();
        assert!(s.get(0, 0));
        assert!((r.dispatch.unwrap().p[0][0] - 50.0).abs() < 1e-9);
    }

    #[test]
    fn zero_load_stays_off() {
        let mut inst = single_gen(&[0.0, 0.0, 0.0]);
        inst.generators[0].c_noload = 5.0;
        let r = solve_bnb(&build_uc_milp(&inst), &SolveOptions::default());
        assert_eq!(r.status, MilpStatus::Optimal);
        assert_eq!(r.schedule.unwrap().count_on(), 0);
        assert_eq!(r.objective, 0.0);
    }

    #[test]
    fn all_off_fixation_without_supply_is_infeasible() {
        let inst = small_random(3, 6, 2);
        let p = build_uc_milp(&inst);
        let fix = FixationMap::from_schedule(&Schedule::all_off(&inst));
        let r = solve_bnb(
            &p,
            &SolveOptions {
                fixed: Some(fix),
                ..Default::default()
            },
        );
        assert_eq!(r.status, MilpStatus::Infeasible);
    }

    #[test]
    fn solutions_validate_and_costs_recompute() {
        for seed in 0..15 {
            let inst = small_random(3, 6, seed);
            let p = build_uc_milp(&inst);
            let r = solve_bnb(
                &p,
                &SolveOptions {
                    log_nodes: true,
                    ..Default::default()
                },
            );
            if r.status == MilpStatus::Infeasible {
                continue;
            }
            let s = r.schedule.clone().unwrap();
            assert!(validate_schedule(&inst, &s).unwrap().is_empty(), "seed {seed}");
            let ed = economic_dispatch(&inst, &s).unwrap();
            let d = r.dispatch.as_ref().unwrap();
            assert!((total_cost(&inst, &s, d) - r.objective).abs() < 1e-6 * r.objective.max(1.0));
            assert!(ed.total_cost() <= r.objective + 1e-6);
            assert!(r.bound <= r.objective + 1e-6);
            assert!(r.gap <= 0.0025 + 1e-12);
            for w in r.node_log.windows(2) {
                assert!(w[1].bound >= w[0].bound - 1e-9);
                assert!(w[1].incumbent <= w[0].incumbent);
            }
        }
    }

    #[test]
    fn warm_start_with_bad_schedule_is_rejected_not_fatal() {
        let inst = small_random(3, 6, 5);
        let p = build_uc_milp(&inst);
        let cold = solve_bnb(&p, &SolveOptions::default());
        let s = Schedule::all_on(&inst);
        let d = crate::dispatch::Dispatch {
            p: vec![vec![0.0; 6]; 3],
            charge: vec![0.0; 6],
            discharge: vec![0.0; 6],
            soc: vec![0.0; 6],
            curtail: vec![0.0; 6],
        };
        let r = solve_bnb(
            &p,
            &SolveOptions {
                warm: Some((s, d)),
                ..Default::default()
            },
        );
        assert!(matches!(r.warm_start, WarmStartOutcome::Rejected(_)));
        assert_eq!(r.status, cold.status);
    }
}
