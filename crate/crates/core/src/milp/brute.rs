//! Exhaustive enumeration oracle for tiny instances.

use std::time::Instant;

use super::{MilpResult, MilpStatus, WarmStartOutcome};
use crate::dispatch::DispatchSolver;
use crate::instance::UcInstance;
use crate::schedule::{row_valid, Schedule};

/// Largest `N * T` accepted (2^24 candidate matrices).
pub const BRUTE_FORCE_BUDGET: usize = 24;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BruteForceError {
    #[error("enumeration of {0} binaries exceeds the budget of {BRUTE_FORCE_BUDGET}")]
    BudgetExceeded(usize),
}

/// Every structurally valid row of generator `i`, with its commitment cost.
fn valid_rows(instance: &UcInstance, i: usize) -> Vec<(Vec<bool>, f64)> {
    let g = &instance.generators[i];
    let horizon = instance.horizon();
    let mut rows = Vec::new();
    for mask in 0u32..(1u32 << horizon) {
        let row: Vec<bool> = (0..horizon).map(|t| mask >> t & 1 == 1).collect();
        if !row_valid(&row, g.init_on(), g.init_duration, g.min_up, g.min_down) {
            continue;
        }
        let mut cost = 0.0;
        let mut prev = g.init_on();
        for &on in &row {
            if on {
                cost += g.c_noload;
                if !prev {
                    cost += g.c_startup;
                }
            }
            prev = on;
        }
        rows.push((row, cost));
    }
    rows
}

/// Exact optimum by enumerating all commitment matrices. Candidates are
/// visited in increasing commitment cost, so enumeration stops as soon as
/// the commitment cost alone reaches the best total found (dispatch cost
/// is non-negative).
pub fn brute_force_uc(instance: &UcInstance) -> Result<MilpResult, BruteForceError> {
    let start = Instant::now();
    let n = instance.num_generators();
    let horizon = instance.horizon();
    if n * horizon > BRUTE_FORCE_BUDGET {
        return Err(BruteForceError::BudgetExceeded(n * horizon));
    }
    let rows: Vec<Vec<(Vec<bool>, f64)>> = (0..n).map(|i| valid_rows(instance, i)).collect();
    let discharge = instance.storage.p_discharge_max;

    // Mixed-radix enumeration of the product, keeping capacity-feasible
    // candidates with their commitment cost.
    let mut candidates: Vec<(f64, Vec<u32>)> = Vec::new();
    if rows.iter().all(|r| !r.is_empty()) {
        let mut idx = vec![0usize; n];
        'outer: loop {
            let ok = (0..horizon).all(|t| {
                let cap: f64 = (0..n)
                    .filter(|&i| rows[i][idx[i]].0[t])
                    .map(|i| instance.generators[i].p_max)
                    .sum();
                cap + discharge >= instance.profiles.net_load(t)
            });
            if ok {
                let cost = (0..n).map(|i| rows[i][idx[i]].1).sum();
                candidates.push((cost, idx.iter().map(|&k| k as u32).collect()));
            }
            for i in 0..n {
                idx[i] += 1;
                if idx[i] < rows[i].len() {
                    continue 'outer;
                }
                idx[i] = 0;
            }
            break;
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));

    let solver = DispatchSolver::new(instance);
    let mut best: Option<(f64, Schedule, crate::dispatch::Dispatch)> = None;
    let mut evaluated = 0;
    let mut iterations = 0;
    for (fixed, idx) in &candidates {
        if best.as_ref().is_some_and(|(b, _, _)| *fixed >= *b) {
            break;
        }
        let sched_rows: Vec<Vec<bool>> = idx.iter().enumerate().map(|(i, &k)| rows[i][k as usize].0.clone()).collect();
        let schedule = Schedule::from_rows(&sched_rows);
        evaluated += 1;
        if let Ok(r) = solver.solve(&schedule) {
            iterations += r.iterations;
            let total = r.total_cost();
            if best.as_ref().is_none_or(|(b, _, _)| total < *b) {
                best = Some((total, schedule, r.dispatch));
            }
        }
    }

    let wall_time = start.elapsed().as_secs_f64();
    Ok(match best {
        Some((obj, schedule, dispatch)) => MilpResult {
            status: MilpStatus::Optimal,
            schedule: Some(schedule),
            dispatch: Some(dispatch),
            objective: obj,
            bound: obj,
            gap: 0.0,
            nodes: evaluated,
            lp_iterations: iterations,
            wall_time,
            warm_start: WarmStartOutcome::NotGiven,
            fixation_relaxed: false,
            node_log: Vec::new(),
        },
        None => MilpResult {
            status: MilpStatus::Infeasible,
            schedule: None,
            dispatch: None,
            objective: f64::INFINITY,
            bound: f64::INFINITY,
            gap: f64::INFINITY,
            nodes: evaluated,
            lp_iterations: iterations,
            wall_time,
            warm_start: WarmStartOutcome::NotGiven,
            fixation_relaxed: false,
            node_log: Vec::new(),
        },
    })
}
