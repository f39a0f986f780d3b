//! Confidence-based fixation and the warm-started MILP solve.

use log::{info, warn};

use crate::dispatch::Dispatch;
use crate::instance::UcInstance;
use crate::milp::{build_uc_milp, solve_bnb, FixationMap, MilpResult, MilpStatus, SolveOptions};
use crate::predictor::ProbabilityTensor;
use crate::schedule::Schedule;

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStartOptions {
    pub gap: f64,
    pub tau_high: f64,
    pub tau_low: f64,
    pub use_fixation: bool,
    pub use_warm: bool,
    /// Share of fixed entries released on the retry after an infeasible
    /// fixed solve.
    pub relax_fraction: f64,
    pub node_limit: Option<usize>,
    pub iteration_limit: Option<usize>,
    pub log_nodes: bool,
}

impl Default for WarmStartOptions {
    fn default() -> Self {
        WarmStartOptions {
            gap: 0.0025,
            tau_high: 0.98,
            tau_low: 0.02,
            use_fixation: true,
            use_warm: true,
            relax_fraction: 0.1,
            node_limit: None,
            iteration_limit: None,
            log_nodes: false,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WarmStartError {
    #[error("thresholds must satisfy 0 <= tau_low < tau_high <= 1 (got {tau_low}, {tau_high})")]
    Thresholds { tau_low: f64, tau_high: f64 },
    #[error("probabilities are {got_gen}x{got_t}, instance is {n_gen}x{horizon}")]
    Dimension {
        got_gen: usize,
        got_t: usize,
        n_gen: usize,
        horizon: usize,
    },
}

fn check_thresholds(tau_low: f64, tau_high: f64) -> Result<(), WarmStartError> {
    if (0.0..tau_high).contains(&tau_low) && tau_high <= 1.0 {
        Ok(())
    } else {
        Err(WarmStartError::Thresholds { tau_low, tau_high })
    }
}

/// Fixes `u[i][t] = 1` where `p >= tau_high` and `0` where `p <= tau_low`.
pub fn fix_by_confidence(probs: &ProbabilityTensor, tau_low: f64, tau_high: f64) -> Result<FixationMap, WarmStartError> {
    check_thresholds(tau_low, tau_high)?;
    let mut map = FixationMap::new(probs.n_gen(), probs.horizon());
    for (i, row) in probs.probs.iter().enumerate() {
        for (t, &p) in row.iter().enumerate() {
            let v = if p >= tau_high {
                Some(true)
            } else if p <= tau_low {
                Some(false)
            } else {
                None
            };
            if let Some(on) = v {
                map.fix(i, t, on).expect("each entry visited once");
            }
        }
    }
    Ok(map)
}

/// Releases the `fraction` of fixed entries whose probabilities sit closest
/// to their threshold (at least one). Ties go to the lower `(i, t)`.
pub fn relax_fixation(map: &FixationMap, probs: &ProbabilityTensor, tau_low: f64, tau_high: f64, fraction: f64) -> FixationMap {
    let mut entries: Vec<(f64, (usize, usize))> = map
        .iter()
        .map(|((i, t), on)| {
            let p = probs.probs[i][t];
            let margin = if on { p - tau_high } else { tau_low - p };
            (margin, (i, t))
        })
        .collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let k = ((entries.len() as f64 * fraction).ceil() as usize).clamp(1.min(entries.len()), entries.len());
    let mut out = map.clone();
    for &(_, (i, t)) in &entries[..k] {
        out.unfix(i, t);
    }
    out
}

/// Solves the UC MILP seeded with the repaired schedule (when given) and
/// restricted by confidence fixation (when probabilities are given and
/// fixation is enabled).
///
/// Fixation entries that contradict the incumbent are dropped so the seed
/// stays admissible. If the fixed problem turns out infeasible, the solve
/// is repeated once with the least confident tenth of the fixed entries
/// released and `fixation_relaxed` set; a second failure is reported as an
/// `Infeasible` result.
pub fn warm_start_solve(
    instance: &UcInstance,
    repaired: Option<(Schedule, Dispatch)>,
    probs: Option<&ProbabilityTensor>,
    options: &WarmStartOptions,
) -> Result<MilpResult, WarmStartError> {
    check_thresholds(options.tau_low, options.tau_high)?;
    let (n_gen, horizon) = (instance.num_generators(), instance.horizon());
    if let Some(p) = probs {
        if p.n_gen() != n_gen || p.horizon() != horizon || p.probs.iter().any(|r| r.len() != horizon) {
            return Err(WarmStartError::Dimension {
                got_gen: p.n_gen(),
                got_t: p.horizon(),
                n_gen,
                horizon,
            });
        }
    }
    let warm = repaired.filter(|_| options.use_warm);
    let mut fixed = match probs {
        Some(p) if options.use_fixation => Some(fix_by_confidence(p, options.tau_low, options.tau_high)?),
        _ => None,
    };
    if let (Some(map), Some((s, _))) = (&mut fixed, &warm) {
        let conflicts: Vec<(usize, usize)> = map.iter().filter(|&((i, t), on)| s.get(i, t) != on).map(|(k, _)| k).collect();
        if !conflicts.is_empty() {
            info!("dropping {} fixations that contradict the incumbent", conflicts.len());
        }
        for (i, t) in conflicts {
            map.unfix(i, t);
        }
    }

    let problem = build_uc_milp(instance);
    let mut solve = SolveOptions {
        gap: options.gap,
        warm,
        fixed: fixed.clone().filter(|m| !m.is_empty()),
        node_limit: options.node_limit,
        time_limit: None,
        iteration_limit: options.iteration_limit,
        log_nodes: options.log_nodes,
    };
    let first = solve_bnb(&problem, &solve);
    let (Some(map), Some(p)) = (fixed, probs) else {
        return Ok(first);
    };
    if first.status != MilpStatus::Infeasible || map.is_empty() {
        return Ok(first);
    }
    warn!("{}: fixed problem infeasible, relaxing fixation", instance.id);
    solve.fixed = Some(relax_fixation(&map, p, options.tau_low, options.tau_high, options.relax_fraction));
    let mut second = solve_bnb(&problem, &solve);
    second.fixation_relaxed = true;
    second.nodes += first.nodes;
    second.lp_iterations += first.lp_iterations;
    second.wall_time += first.wall_time;
    Ok(second)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::economic_dispatch;
    use crate::testutil::small_random;

    fn tensor(rows: Vec<Vec<f64>>) -> ProbabilityTensor {
        ProbabilityTensor {
            instance_id: "t".into(),
            probs: rows,
            logits: Vec::new(),
        }
    }

    #[test]
    fn thresholds_fix_confident_entries() {
        let p = tensor(vec![vec![0.99, 0.5, 0.01, 0.98, 0.02]]);
        let m = fix_by_confidence(&p, 0.02, 0.98).unwrap();
        assert_eq!(m.get(0, 0), Some(true));
        assert_eq!(m.get(0, 1), None);
        assert_eq!(m.get(0, 2), Some(false));
        assert_eq!(m.get(0, 3), Some(true));
        assert_eq!(m.get(0, 4), Some(false));
        let edge = fix_by_confidence(&tensor(vec![vec![0.0, 1.0, 0.999, 1e-9]]), 0.0, 1.0).unwrap();
        assert_eq!(edge.len(), 2);
        assert!(fix_by_confidence(&p, 0.5, 0.5).is_err());
        assert!(fix_by_confidence(&p, -0.1, 0.9).is_err());
    }

    #[test]
    fn fixed_share_grows_as_thresholds_loosen() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..10).map(|t| ((i * 10 + t) as f64 * 0.61803).fract()).collect()).collect();
        let p = tensor(rows);
        let mut prev = 0;
        for k in 0..10 {
            let hi = 1.0 - 0.05 * k as f64;
            let lo = 0.05 * k as f64;
            let n = fix_by_confidence(&p, lo.min(hi - 1e-9), hi).unwrap().len();
            assert!(n >= prev);
            prev = n;
        }
    }

    #[test]
    fn relaxation_releases_the_least_confident_tenth() {
        let p = tensor(vec![vec![0.985, 0.999, 1.0, 0.0, 0.015, 0.001, 0.99, 0.995, 0.005, 0.9999]]);
        let m = fix_by_confidence(&p, 0.02, 0.98).unwrap();
        assert_eq!(m.len(), 10);
        let r = relax_fixation(&m, &p, 0.02, 0.98, 0.1);
        assert_eq!(r.len(), 9);
        assert_eq!(r.get(0, 4), None);
        let r = relax_fixation(&m, &p, 0.02, 0.98, 0.2);
        assert_eq!((r.get(0, 0), r.get(0, 4)), (None, None));
    }

    #[test]
    fn incumbent_bounds_the_result() {
        let inst = small_random(3, 6, 2);
        let s = Schedule::all_on(&inst);
        let Ok(d) = economic_dispatch(&inst, &s) else { return };
        let cost = d.total_cost();
        let r = warm_start_solve(&inst, Some((s, d.dispatch)), None, &WarmStartOptions::default()).unwrap();
        assert!(r.objective <= cost + 1e-9);
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let inst = small_random(3, 6, 2);
        let p = tensor(vec![vec![0.5; 6]; 2]);
        assert!(matches!(
            warm_start_solve(&inst, None, Some(&p), &WarmStartOptions::default()),
            Err(WarmStartError::Dimension { .. })
        ));
    }
}
