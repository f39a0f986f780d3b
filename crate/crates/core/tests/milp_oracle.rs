//! Branch-and-bound against exhaustive enumeration on tiny instances.

use proptest::prelude::*;
use warmuc::datagen::random_instance;
use warmuc::milp::{brute_force_uc, build_uc_milp, solve_bnb, FixationMap, MilpStatus, SolveOptions, WarmStartOutcome};
use warmuc::{economic_dispatch, total_cost, validate_schedule};

fn exact() -> SolveOptions {
    SolveOptions {
        gap: 0.0,
        log_nodes: true,
        ..Default::default()
    }
}

#[test]
fn bnb_matches_enumeration_on_3x6() {
    let mut feasible = 0;
    for seed in 0..50 {
        let inst = random_instance(3, 6, seed);
        let oracle = brute_force_uc(&inst).unwrap();
        let r = solve_bnb(&build_uc_milp(&inst), &exact());
        match oracle.status {
            MilpStatus::Infeasible => assert_eq!(r.status, MilpStatus::Infeasible, "seed {seed}"),
            _ => {
                feasible += 1;
                assert_eq!(r.status, MilpStatus::Optimal, "seed {seed}");
                assert!((r.objective - oracle.objective).abs() <= 1e-6, "seed {seed}: {} vs {}", r.objective, oracle.objective);
                let s = r.schedule.as_ref().unwrap();
                assert!(validate_schedule(&inst, s).unwrap().is_empty());
                let d = r.dispatch.as_ref().unwrap();
                assert!((total_cost(&inst, s, d) - r.objective).abs() <= 1e-6);
                for w in r.node_log.windows(2) {
                    assert!(w[1].bound >= w[0].bound);
                    assert!(w[1].incumbent <= w[0].incumbent);
                }
            }
        }
    }
    assert!(feasible >= 25, "only {feasible} feasible instances");
}

#[test]
fn bnb_matches_enumeration_on_2x4_exactly() {
    for seed in 100..130 {
        let inst = random_instance(2, 4, seed);
        let oracle = brute_force_uc(&inst).unwrap();
        let r = solve_bnb(&build_uc_milp(&inst), &exact());
        if oracle.status == MilpStatus::Optimal {
            assert!((r.objective - oracle.objective).abs() <= 1e-6, "seed {seed}");
        } else {
            assert_eq!(r.status, MilpStatus::Infeasible);
        }
    }
}

#[test]
fn warm_start_with_the_optimum_is_kept() {
    let mut checked = 0;
    for seed in 0..20 {
        let inst = random_instance(3, 6, seed);
        let oracle = brute_force_uc(&inst).unwrap();
        if oracle.status != MilpStatus::Optimal {
            continue;
        }
        let warm = (oracle.schedule.clone().unwrap(), oracle.dispatch.clone().unwrap());
        let r = solve_bnb(
            &build_uc_milp(&inst),
            &SolveOptions {
                warm: Some(warm),
                ..Default::default()
            },
        );
        assert_eq!(r.warm_start, WarmStartOutcome::Accepted, "seed {seed}");
        assert!((r.objective - oracle.objective).abs() <= 1e-6, "seed {seed}");
        checked += 1;
    }
    assert!(checked > 5);
}

#[test]
fn fixation_from_the_optimum_needs_no_more_nodes() {
    for seed in 0..20 {
        let inst = random_instance(3, 6, seed);
        let problem = build_uc_milp(&inst);
        let cold = solve_bnb(&problem, &exact());
        if cold.status != MilpStatus::Optimal {
            continue;
        }
        let schedule = cold.schedule.clone().unwrap();
        let warm = solve_bnb(
            &problem,
            &SolveOptions {
                gap: 0.0,
                warm: Some((schedule.clone(), cold.dispatch.clone().unwrap())),
                fixed: Some(FixationMap::from_schedule(&schedule)),
                ..Default::default()
            },
        );
        assert!((warm.objective - cold.objective).abs() <= 1e-6, "seed {seed}");
        assert!(warm.nodes <= cold.nodes, "seed {seed}: {} > {}", warm.nodes, cold.nodes);
    }
}

#[test]
fn time_limited_runs_keep_their_incumbent() {
    let inst = random_instance(4, 8, 3);
    let r = solve_bnb(
        &build_uc_milp(&inst),
        &SolveOptions {
            gap: 0.0,
            node_limit: Some(1),
            ..Default::default()
        },
    );
    assert!(matches!(r.status, MilpStatus::NodeLimit | MilpStatus::Optimal | MilpStatus::Infeasible));
    if let Some(s) = &r.schedule {
        assert!(economic_dispatch(&inst, s).is_ok());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    /// Fixing part of a feasible schedule keeps the problem feasible and can
    /// only raise the optimum.
    #[test]
    fn fixation_is_sound(seed in 0u64..500, mask in any::<u32>()) {
        let inst = random_instance(2, 5, seed);
        let oracle = brute_force_uc(&inst).unwrap();
        prop_assume!(oracle.status == MilpStatus::Optimal);
        let free_opt = oracle.objective;
        // Any feasible schedule will do; the all-on one often is, the
        // optimum always is.
        let all_on = warmuc::Schedule::all_on(&inst);
        let source = if economic_dispatch(&inst, &all_on).is_ok() && mask & 1 == 1 {
            all_on
        } else {
            oracle.schedule.unwrap()
        };
        let mut fix = FixationMap::new(2, 5);
        for i in 0..2 {
            for t in 0..5 {
                if mask >> (1 + i * 5 + t) & 1 == 1 {
                    fix.fix(i, t, source.get(i, t)).unwrap();
                }
            }
        }
        let r = solve_bnb(&build_uc_milp(&inst), &SolveOptions { gap: 0.0, fixed: Some(fix.clone()), ..Default::default() });
        prop_assert_eq!(r.status, MilpStatus::Optimal);
        prop_assert!(r.objective >= free_opt - 1e-6);
        prop_assert!(fix.agrees_with(r.schedule.as_ref().unwrap()));
    }
}
