//! Shared fixtures for unit tests.

use crate::instance::{Generator, InitStatus, Profiles, Storage, UcInstance};

/// One flexible unit (10..100 MW, unit min times, fast ramps), initially
/// off for long enough to start immediately, no storage.
pub fn single_gen(load: &[f64]) -> UcInstance {
    let t = load.len();
    UcInstance {
        id: "single".into(),
        generators: vec![Generator {
            id: 0,
            c_var: 10.0,
            c_noload: 0.0,
            c_startup: 0.0,
            p_min: 10.0,
            p_max: 100.0,
            min_up: 1,
            min_down: 1,
            ramp_up: 100.0,
            ramp_down: 100.0,
            startup_ramp: None,
            init_status: InitStatus::Off,
            init_duration: 10,
            init_power: 0.0,
        }],
        storage: Storage::none(),
        profiles: Profiles {
            load: load.to_vec(),
            solar: vec![0.0; t],
            wind: vec![0.0; t],
        },
    }
}

pub fn small_random(n_gen: usize, horizon: usize, seed: u64) -> UcInstance {
    crate::datagen::random_instance(n_gen, horizon, seed)
}
