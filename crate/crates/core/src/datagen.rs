//! Instance generation: the bundled base system, random small instances,
//! profile perturbation and labelled dataset assembly.

use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::instance::{Generator, InitStatus, InstanceError, Profiles, Storage, UcInstance};
use crate::milp::{build_uc_milp, solve_bnb, MilpStatus, SolveOptions};
use crate::schedule::Schedule;

#[allow(clippy::too_many_arguments)]
fn unit(
    id: usize,
    c_var: f64,
    c_noload: f64,
    c_startup: f64,
    p_min: f64,
    p_max: f64,
    min_up: usize,
    min_down: usize,
    ramp: f64,
    init: Option<(usize, f64)>,
    off_for: usize,
) -> Generator {
    let (init_status, init_duration, init_power) = match init {
        Some((d, p)) => (InitStatus::On, d, p),
        None => (InitStatus::Off, off_for, 0.0),
    };
    Generator {
        id,
        c_var,
        c_noload,
        c_startup,
        p_min,
        p_max,
        min_up,
        min_down,
        ramp_up: ramp,
        ramp_down: ramp,
        startup_ramp: None,
        init_status,
        init_duration,
        init_power,
    }
}

/// The bundled 10-unit, 24-hour system: a baseload unit, two coal units,
/// two combined-cycle units, two mid-merit gas units and three peakers,
/// plus one aggregate storage resource. Total minimum output (435 MW) is
/// below the net-load trough so every unit can in principle be committed.
pub fn base_system() -> UcInstance {
    let generators = vec![
        unit(0, 12.0, 200.0, 2000.0, 130.0, 300.0, 8, 8, 60.0, Some((24, 250.0)), 0),
        unit(1, 18.0, 150.0, 1200.0, 70.0, 200.0, 6, 6, 60.0, Some((12, 150.0)), 0),
        unit(2, 20.0, 140.0, 1100.0, 70.0, 180.0, 6, 5, 50.0, Some((10, 120.0)), 0),
        unit(3, 28.0, 100.0, 600.0, 50.0, 150.0, 4, 4, 80.0, None, 6),
        unit(4, 30.0, 95.0, 550.0, 45.0, 140.0, 4, 3, 80.0, Some((5, 60.0)), 0),
        unit(5, 38.0, 60.0, 300.0, 25.0, 100.0, 3, 2, 70.0, None, 4),
        unit(6, 40.0, 55.0, 280.0, 20.0, 90.0, 2, 2, 70.0, None, 3),
        unit(7, 60.0, 30.0, 100.0, 10.0, 60.0, 1, 1, 60.0, None, 2),
        unit(8, 65.0, 25.0, 90.0, 10.0, 50.0, 1, 1, 50.0, None, 1),
        unit(9, 80.0, 20.0, 60.0, 5.0, 40.0, 1, 1, 40.0, None, 1),
    ];
    let load = vec![
        640.0, 610.0, 590.0, 580.0, 585.0, 610.0, 680.0, 760.0, 820.0, 850.0, 870.0, 880.0, 875.0,
        865.0, 860.0, 870.0, 900.0, 960.0, 1000.0, 980.0, 920.0, 840.0, 760.0, 690.0,
    ];
    let solar = vec![
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 5.0, 30.0, 70.0, 110.0, 140.0, 155.0, 160.0, 150.0, 125.0,
        90.0, 50.0, 15.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
    ];
    let wind = vec![
        110.0, 115.0, 120.0, 118.0, 112.0, 105.0, 95.0, 85.0, 80.0, 75.0, 70.0, 68.0, 66.0, 70.0,
        75.0, 82.0, 90.0, 98.0, 105.0, 110.0, 115.0, 118.0, 120.0, 116.0,
    ];
    UcInstance {
        id: "base10".into(),
        generators,
        storage: Storage {
            energy_cap: 200.0,
            p_charge_max: 50.0,
            p_discharge_max: 50.0,
            eff_charge: 0.95,
            eff_discharge: 0.95,
            soc_init: 100.0,
        },
        profiles: Profiles { load, solar, wind },
    }
}

/// Small random instance for tests and oracle comparisons. Loads are drawn
/// inside the committed-capacity range so most instances are feasible;
/// infeasible ones are possible and callers must handle them.
pub fn random_instance(n_gen: usize, horizon: usize, seed: u64) -> UcInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut generators = Vec::with_capacity(n_gen);
    for id in 0..n_gen {
        let p_min = rng.random_range(5.0..30.0f64).round();
        let p_max = p_min + rng.random_range(20.0..80.0f64).round();
        let ramp = (p_max * rng.random_range(0.5..1.0)).round();
        let on = rng.random_bool(0.5);
        generators.push(Generator {
            id,
            c_var: rng.random_range(10.0..60.0f64).round(),
            c_noload: rng.random_range(0.0..50.0f64).round(),
            c_startup: rng.random_range(0.0..300.0f64).round(),
            p_min,
            p_max,
            min_up: rng.random_range(1..=3),
            min_down: rng.random_range(1..=3),
            ramp_up: ramp,
            ramp_down: ramp,
            startup_ramp: None,
            init_status: if on { InitStatus::On } else { InitStatus::Off },
            init_duration: rng.random_range(0..=4),
            init_power: if on { p_min } else { 0.0 },
        });
    }
    let total_max: f64 = generators.iter().map(|g| g.p_max).sum();
    let base = total_max * rng.random_range(0.3..0.6);
    let load: Vec<f64> = (0..horizon)
        .map(|_| (base * rng.random_range(0.7..1.3f64)).round())
        .collect();
    let solar = (0..horizon).map(|_| rng.random_range(0.0..10.0f64).round()).collect();
    let wind = (0..horizon).map(|_| rng.random_range(0.0..10.0f64).round()).collect();
    let storage = if rng.random_bool(0.5) {
        let e = rng.random_range(10.0..40.0f64).round();
        Storage {
            energy_cap: e,
            p_charge_max: (e / 2.0).round(),
            p_discharge_max: (e / 2.0).round(),
            eff_charge: 0.9,
            eff_discharge: 0.9,
            soc_init: (e / 2.0).round(),
        }
    } else {
        Storage::none()
    };
    UcInstance {
        id: format!("rand-{n_gen}x{horizon}-{seed}"),
        generators,
        storage,
        profiles: Profiles { load, solar, wind },
    }
}

/// Perturbation recipe: per-series multiplicative scaling, smooth
/// relative noise, and occasional extreme-renewable scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbParams {
    pub load_scale: (f64, f64),
    pub solar_scale: (f64, f64),
    pub wind_scale: (f64, f64),
    /// Standard deviation of the hourly relative noise.
    pub noise_sd: f64,
    /// Lag-one correlation of the noise (0 = white, near 1 = smooth).
    pub noise_corr: f64,
    /// Probability of rescaling renewables so the net-load minimum is zero.
    pub zero_net_load: f64,
    /// Probability of rescaling renewables to cover the load's energy.
    pub full_renewable: f64,
}

impl PerturbParams {
    /// No change at all.
    pub fn identity() -> Self {
        PerturbParams {
            load_scale: (1.0, 1.0),
            solar_scale: (1.0, 1.0),
            wind_scale: (1.0, 1.0),
            noise_sd: 0.0,
            noise_corr: 0.0,
            zero_net_load: 0.0,
            full_renewable: 0.0,
        }
    }
}

impl Default for PerturbParams {
    fn default() -> Self {
        PerturbParams {
            load_scale: (0.85, 1.1),
            solar_scale: (0.3, 2.0),
            wind_scale: (0.3, 2.0),
            noise_sd: 0.04,
            noise_corr: 0.7,
            zero_net_load: 0.03,
            full_renewable: 0.02,
        }
    }
}

fn scale(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo < hi {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn perturb_series(rng: &mut ChaCha8Rng, base: &[f64], range: (f64, f64), params: &PerturbParams) -> Vec<f64> {
    let k = scale(rng, range);
    if params.noise_sd <= 0.0 {
        return base.iter().map(|v| (v * k).max(0.0)).collect();
    }
    let normal = Normal::new(0.0, params.noise_sd).expect("finite sd");
    let rho = params.noise_corr.clamp(0.0, 0.999);
    let innovation = (1.0 - rho * rho).sqrt();
    let mut e = normal.sample(rng);
    base.iter()
        .enumerate()
        .map(|(t, v)| {
            if t > 0 {
                e = rho * e + innovation * normal.sample(rng);
            }
            (v * k * (1.0 + e)).max(0.0)
        })
        .collect()
}

/// Scales solar and wind together by `k`.
fn scale_renewables(p: &mut Profiles, k: f64) {
    for v in p.solar.iter_mut().chain(p.wind.iter_mut()) {
        *v *= k;
    }
}

/// Perturbed copy of `profiles`, deterministic in `seed`.
pub fn perturb_profiles(profiles: &Profiles, seed: u64, params: &PerturbParams) -> Profiles {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Profiles {
        load: perturb_series(&mut rng, &profiles.load, params.load_scale, params),
        solar: perturb_series(&mut rng, &profiles.solar, params.solar_scale, params),
        wind: perturb_series(&mut rng, &profiles.wind, params.wind_scale, params),
    };
    let u: f64 = if params.zero_net_load + params.full_renewable > 0.0 {
        rng.random()
    } else {
        1.0
    };
    if u < params.zero_net_load {
        // Smallest factor that drives some hour's net load to zero.
        let k = (0..out.horizon())
            .filter(|&t| out.renewables(t) > 0.0)
            .map(|t| out.load[t] / out.renewables(t))
            .fold(f64::INFINITY, f64::min);
        if k.is_finite() {
            scale_renewables(&mut out, k);
        }
    } else if u < params.zero_net_load + params.full_renewable {
        // Renewable energy over the horizon equals load energy.
        let ren: f64 = (0..out.horizon()).map(|t| out.renewables(t)).sum();
        if ren > 0.0 {
            let k = out.load.iter().sum::<f64>() / ren;
            scale_renewables(&mut out, k);
        }
    }
    out
}

/// One labelled instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub instance_id: String,
    pub schedule: Schedule,
    pub objective: f64,
    pub bound: f64,
    pub gap: f64,
    pub nodes: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    /// Relative MIP gap used for labelling.
    pub gap: f64,
    pub seed: u64,
    pub params: PerturbParams,
    /// Perturbations tried per sample before giving up on it.
    pub max_attempts: usize,
    /// Branch-and-bound node budget per label. Perturbations that exhaust
    /// it before reaching the gap are resampled like infeasible ones.
    #[serde(default)]
    pub node_limit: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            count: 2000,
            gap: 0.0025,
            seed: 0,
            params: PerturbParams::default(),
            max_attempts: 8,
            node_limit: Some(4000),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub instances: Vec<UcInstance>,
    pub labels: Vec<Label>,
    pub splits: Splits,
    /// Perturbations discarded as infeasible.
    pub discarded: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Indices of the samples whose ids are listed.
    pub fn indices(&self, ids: &[String]) -> Vec<usize> {
        ids.iter()
            .filter_map(|id| self.instances.iter().position(|x| &x.id == id))
            .collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatagenError {
    #[error("{discarded} of {attempts} perturbations were infeasible; perturbation too aggressive")]
    LabelingFailure { discarded: usize, attempts: usize },
    #[error("no base instances given")]
    NoBase,
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Seed of attempt `attempt` for sample `k`, decorrelated from neighbours.
fn sample_seed(seed: u64, k: usize, attempt: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((k as u64) << 8) | attempt as u64);
    rng.random()
}

/// `count` unlabelled perturbations (cycling through `base`), with ids
/// `<base>-u<seed>-<k>`. Feasibility is not checked.
pub fn perturb_instances(base: &[UcInstance], count: usize, seed: u64, params: &PerturbParams) -> Vec<UcInstance> {
    if base.is_empty() {
        return Vec::new();
    }
    (0..count)
        .map(|k| {
            let src = &base[k % base.len()];
            let mut inst = src.clone();
            inst.id = format!("{}-u{seed}-{k:05}", src.id);
            inst.profiles = perturb_profiles(&src.profiles, sample_seed(seed, k, 0), params);
            inst
        })
        .collect()
}

/// Perturbs `count` instances (cycling through `base`), labels each with a
/// branch-and-bound solve at `config.gap`, and splits them 80/10/10.
/// Infeasible perturbations are resampled. Samples are labelled in
/// parallel but assembled in index order, so the result does not depend on
/// scheduling.
pub fn generate_dataset(base: &[UcInstance], config: &DatasetConfig) -> Result<Dataset, DatagenError> {
    if config.count == 0 {
        return Ok(Dataset {
            instances: Vec::new(),
            labels: Vec::new(),
            splits: Splits::default(),
            discarded: 0,
        });
    }
    if base.is_empty() {
        return Err(DatagenError::NoBase);
    }
    let options = SolveOptions {
        gap: config.gap,
        node_limit: config.node_limit,
        ..Default::default()
    };
    let results: Vec<(Option<(UcInstance, Label)>, usize)> = (0..config.count)
        .into_par_iter()
        .map(|k| {
            let src = &base[k % base.len()];
            for attempt in 0..config.max_attempts.max(1) {
                let mut inst = src.clone();
                inst.id = format!("{}-{k:05}", src.id);
                inst.profiles = perturb_profiles(&src.profiles, sample_seed(config.seed, k, attempt), &config.params);
                let r = solve_bnb(&build_uc_milp(&inst), &options);
                let solved = matches!(r.status, MilpStatus::Optimal | MilpStatus::FeasibleAtGap);
                if let (Some(schedule), true) = (r.schedule, solved && r.objective.is_finite()) {
                    let label = Label {
                        instance_id: inst.id.clone(),
                        schedule,
                        objective: r.objective,
                        bound: r.bound,
                        gap: r.gap,
                        nodes: r.nodes,
                    };
                    return (Some((inst, label)), attempt);
                }
                info!("sample {k}: perturbation {attempt} unresolved ({:?}), resampling", r.status);
            }
            (None, config.max_attempts.max(1))
        })
        .collect();
    let discarded: usize = results.iter().map(|(_, d)| d).sum();
    let attempts = discarded + results.iter().filter(|(r, _)| r.is_some()).count();
    if 2 * discarded > attempts || results.iter().any(|(r, _)| r.is_none()) {
        return Err(DatagenError::LabelingFailure { discarded, attempts });
    }
    let (instances, labels): (Vec<_>, Vec<_>) = results.into_iter().filter_map(|(r, _)| r).unzip();
    let splits = split_ids(&instances, config.seed);
    Ok(Dataset {
        instances,
        labels,
        splits,
        discarded,
    })
}

/// Shuffled 80/10/10 split of instance ids.
fn split_ids(instances: &[UcInstance], seed: u64) -> Splits {
    let mut ids: Vec<String> = instances.iter().map(|x| x.id.clone()).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5717));
    let n = ids.len();
    let n_train = (n * 8).div_ceil(10);
    let n_val = (n - n_train) / 2;
    let test = ids.split_off(n_train + n_val);
    let validation = ids.split_off(n_train);
    Splits {
        train: ids,
        validation,
        test,
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    count: usize,
    gap: f64,
    #[serde(default)]
    node_limit: Option<usize>,
    params: PerturbParams,
    discarded: usize,
    splits: Splits,
}

/// Writes `instances/*.json`, `labels/*.json` and `manifest.json`.
pub fn save_dataset(dataset: &Dataset, config: &DatasetConfig, dir: impl AsRef<Path>) -> Result<(), DatagenError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("instances"))?;
    fs::create_dir_all(dir.join("labels"))?;
    for (inst, label) in dataset.instances.iter().zip(&dataset.labels) {
        crate::instance::save_instance(inst, dir.join("instances").join(format!("{}.json", inst.id)))?;
        fs::write(
            dir.join("labels").join(format!("{}.json", inst.id)),
            serde_json::to_string_pretty(label)? + "\n",
        )?;
    }
    let manifest = Manifest {
        seed: config.seed,
        count: config.count,
        gap: config.gap,
        node_limit: config.node_limit,
        params: config.params.clone(),
        discarded: dataset.discarded,
        splits: dataset.splits.clone(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Reads a directory written by [`save_dataset`], in split order
/// (train, validation, test).
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset, DatagenError> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let s = &manifest.splits;
    let mut instances = Vec::new();
    let mut labels = Vec::new();
    for id in s.train.iter().chain(&s.validation).chain(&s.test) {
        instances.push(crate::instance::load_instance(dir.join("instances").join(format!("{id}.json")))?);
        labels.push(serde_json::from_str(&fs::read_to_string(dir.join("labels").join(format!("{id}.json")))?)?);
    }
    Ok(Dataset {
        instances,
        labels,
        splits: manifest.splits,
        discarded: manifest.discarded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_system_is_valid_and_minimum_output_fits_under_trough() {
        let inst = base_system();
        inst.validate().unwrap();
        let pmin: f64 = inst.generators.iter().map(|g| g.p_min).sum();
        let trough = (0..24).map(|t| inst.profiles.net_load(t)).fold(f64::INFINITY, f64::min);
        assert!(pmin < trough);
    }

    #[test]
    fn identity_perturbation_changes_nothing() {
        let p = base_system().profiles;
        assert_eq!(perturb_profiles(&p, 9, &PerturbParams::identity()), p);
    }

    #[test]
    fn zero_net_load_case_touches_zero() {
        let p = base_system().profiles;
        let params = PerturbParams {
            zero_net_load: 1.0,
            ..Default::default()
        };
        let q = perturb_profiles(&p, 3, &params);
        let min = (0..q.horizon()).map(|t| q.net_load(t)).fold(f64::INFINITY, f64::min);
        assert!(min.abs() < 1e-6, "{min}");
    }

    #[test]
    fn full_renewable_case_matches_energy() {
        let p = base_system().profiles;
        let params = PerturbParams {
            full_renewable: 1.0,
            ..Default::default()
        };
        let q = perturb_profiles(&p, 4, &params);
        let ren: f64 = (0..q.horizon()).map(|t| q.renewables(t)).sum();
        assert!((ren - q.load.iter().sum::<f64>()).abs() < 1e-6);
    }

    #[test]
    fn perturbation_is_deterministic_per_seed() {
        let p = base_system().profiles;
        let params = PerturbParams::default();
        assert_eq!(perturb_profiles(&p, 1, &params), perturb_profiles(&p, 1, &params));
        assert_ne!(perturb_profiles(&p, 1, &params), perturb_profiles(&p, 2, &params));
        let q = perturb_profiles(&p, 1, &params);
        assert!(q.load.iter().chain(&q.solar).chain(&q.wind).all(|&v| v >= 0.0));
    }

    #[test]
    fn empty_dataset() {
        let d = generate_dataset(&[base_system()], &DatasetConfig { count: 0, ..Default::default() }).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let insts: Vec<UcInstance> = (0..37)
            .map(|k| {
                let mut x = random_instance(2, 3, k);
                x.id = format!("x{k}");
                x
            })
            .collect();
        let s = split_ids(&insts, 5);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (30, 3, 4));
        let mut all: Vec<&String> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 37);
    }

    #[test]
    fn random_instances_are_valid() {
        for seed in 0..50 {
            random_instance(3, 6, seed).validate().unwrap();
        }
    }
}
