//! Randomized checks of the repair stages against the dispatch oracle.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use warmuc::datagen::{base_system, perturb_profiles, random_instance, PerturbParams};
use warmuc::repair::{economic_repair, head_tail_trim, repair_pipeline, surgical_repair, RepairConfig, RepairError};
use warmuc::{economic_dispatch, validate_schedule, Schedule, UcInstance};

fn random_schedule(inst: &UcInstance, rng: &mut ChaCha8Rng) -> Schedule {
    let density = rng.random_range(0.0..1.0);
    let mut s = Schedule::all_off(inst);
    for i in 0..inst.num_generators() {
        for t in 0..inst.horizon() {
            s.set(i, t, rng.random_bool(density));
        }
    }
    s
}

fn instance_is_feasible(inst: &UcInstance) -> bool {
    economic_dispatch(inst, &Schedule::all_on(inst)).is_ok()
}

#[test]
fn surgical_output_has_no_duration_violations() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for k in 0..600u64 {
        let inst = random_instance(rng.random_range(2..8), rng.random_range(4..24), k);
        let s = random_schedule(&inst, &mut rng);
        match surgical_repair(&inst, &s, &RepairConfig::for_instance(&inst)) {
            Ok((out, trace)) => {
                let report = validate_schedule(&inst, &out).unwrap();
                assert_eq!(report.count_structural(), 0, "{}: {:?}", inst.id, report);
                assert_eq!(trace.replay(&s), out);
            }
            Err(RepairError::CapacityExhausted { .. }) => {}
            Err(e) => panic!("{}: {e}", inst.id),
        }
    }
}

#[test]
fn pipeline_restores_feasibility_on_random_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut feasible = 0;
    for k in 0..150u64 {
        let inst = random_instance(rng.random_range(2..7), rng.random_range(4..16), 1000 + k);
        if !instance_is_feasible(&inst) {
            continue;
        }
        feasible += 1;
        let s = random_schedule(&inst, &mut rng);
        let r = repair_pipeline(&inst, &s, &RepairConfig::for_instance(&inst)).unwrap_or_else(|e| panic!("{}: {e}", inst.id));
        let d = economic_dispatch(&inst, &r.schedule).expect("repaired schedule dispatches");
        assert!((d.total_cost() - r.cost()).abs() <= 1e-6 * d.total_cost().abs().max(1.0));
        assert!(validate_schedule(&inst, &r.schedule).unwrap().is_empty());
        assert_eq!(r.trace.replay(&s), r.schedule);
    }
    assert!(feasible > 50);
}

#[test]
fn all_off_prediction_on_the_base_system_is_repaired() {
    let base = base_system();
    for seed in 0..6 {
        let mut inst = base.clone();
        inst.profiles = perturb_profiles(&base.profiles, seed, &PerturbParams::default());
        if !instance_is_feasible(&inst) {
            continue;
        }
        let r = repair_pipeline(&inst, &Schedule::all_off(&inst), &RepairConfig::for_instance(&inst)).unwrap();
        assert!(economic_dispatch(&inst, &r.schedule).is_ok());
    }
}

#[test]
fn economic_repair_never_raises_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut compared = 0;
    for k in 0..400u64 {
        let inst = random_instance(rng.random_range(2..7), rng.random_range(4..16), 5000 + k);
        let cfg = RepairConfig::for_instance(&inst);
        let Ok((s, _)) = surgical_repair(&inst, &random_schedule(&inst, &mut rng), &cfg) else { continue };
        let Ok(before) = economic_dispatch(&inst, &s) else { continue };
        let (out, trace) = economic_repair(&inst, &s, &cfg).unwrap();
        let after = economic_dispatch(&inst, &out).expect("economic repair keeps feasibility");
        assert!(after.total_cost() <= before.total_cost() + 1e-6, "{}", inst.id);
        assert_eq!(trace.replay(&s), out);
        compared += 1;
    }
    assert!(compared > 100, "only {compared} comparable pairs");
}

#[test]
fn trimming_never_raises_cost() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut compared = 0;
    for k in 0..300u64 {
        let inst = random_instance(rng.random_range(2..7), rng.random_range(6..16), 9000 + k);
        let cfg = RepairConfig::for_instance(&inst);
        let Ok((s, _)) = surgical_repair(&inst, &random_schedule(&inst, &mut rng), &cfg) else { continue };
        let Ok(before) = economic_dispatch(&inst, &s) else { continue };
        let (out, _) = head_tail_trim(&inst, &s, &before, &cfg).unwrap();
        let after = economic_dispatch(&inst, &out).expect("trim keeps feasibility");
        assert!(after.total_cost() <= before.total_cost() + 1e-6, "{}", inst.id);
        assert!(validate_schedule(&inst, &out).unwrap().is_empty());
        compared += 1;
    }
    assert!(compared > 100);
}

#[test]
fn zero_load_instance_stays_off() {
    let mut inst = random_instance(3, 6, 2);
    inst.profiles.load = vec![0.0; 6];
    inst.profiles.solar = vec![0.0; 6];
    inst.profiles.wind = vec![0.0; 6];
    inst.storage = warmuc::Storage::none();
    for g in &mut inst.generators {
        g.init_status = warmuc::InitStatus::Off;
        g.init_duration = 10;
        g.init_power = 0.0;
    }
    let r = repair_pipeline(&inst, &Schedule::all_off(&inst), &RepairConfig::for_instance(&inst)).unwrap();
    assert_eq!(r.schedule.count_on(), 0);
    assert_eq!(r.trace.len(), 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// A repaired schedule is a fixed point of the pipeline.
    #[test]
    fn pipeline_is_idempotent(seed in 0u64..10_000, sched_seed in any::<u64>(), n in 2usize..6, t in 4usize..14) {
        let inst = random_instance(n, t, seed);
        prop_assume!(instance_is_feasible(&inst));
        let mut rng = ChaCha8Rng::seed_from_u64(sched_seed);
        let cfg = RepairConfig::for_instance(&inst);
        let once = repair_pipeline(&inst, &random_schedule(&inst, &mut rng), &cfg).unwrap();
        let twice = repair_pipeline(&inst, &once.schedule, &cfg).unwrap();
        prop_assert_eq!(&twice.schedule, &once.schedule);
        prop_assert!((twice.cost() - once.cost()).abs() <= 1e-9 * once.cost().abs().max(1.0));
    }
}
