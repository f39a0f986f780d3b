//! Problem data: generators, storage, profiles and the JSON instance file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// On/off state of a unit before the horizon starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStatus {
    On,
    Off,
}

impl InitStatus {
    pub fn is_on(self) -> bool {
        self == InitStatus::On
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    pub c_var: f64,
    pub c_noload: f64,
    pub c_startup: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub min_up: usize,
    pub min_down: usize,
    pub ramp_up: f64,
    pub ramp_down: f64,
    /// Output cap in the first online hour; also used as the shutdown
    /// allowance. Defaults to `max(p_min, ramp_up)` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub startup_ramp: Option<f64>,
    pub init_status: InitStatus,
    pub init_duration: usize,
    #[serde(default)]
    pub init_power: f64,
}

impl Generator {
    pub fn startup_ramp(&self) -> f64 {
        self.startup_ramp.unwrap_or(self.p_min.max(self.ramp_up))
    }

    pub fn init_on(&self) -> bool {
        self.init_status.is_on()
    }

    /// Hours at the start of the horizon during which the unit must keep
    /// its initial status to honour min-up/min-down.
    pub fn initial_hold(&self) -> usize {
        let req = if self.init_on() { self.min_up } else { self.min_down };
        req.saturating_sub(self.init_duration)
    }

    /// Full-load average cost, used to rank units from cheap to expensive.
    pub fn order_key(&self) -> f64 {
        if self.p_max > 0.0 {
            self.c_var + self.c_noload / self.p_max
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Storage {
    pub energy_cap: f64,
    pub p_charge_max: f64,
    pub p_discharge_max: f64,
    pub eff_charge: f64,
    pub eff_discharge: f64,
    pub soc_init: f64,
}

impl Storage {
    /// A storage resource with zero capacity.
    pub fn none() -> Self {
        Storage {
            energy_cap: 0.0,
            p_charge_max: 0.0,
            p_discharge_max: 0.0,
            eff_charge: 1.0,
            eff_discharge: 1.0,
            soc_init: 0.0,
        }
    }
}

impl Default for Storage {
    fn default() -> Self {
        Self::none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Profiles {
    pub load: Vec<f64>,
    pub solar: Vec<f64>,
    pub wind: Vec<f64>,
}

impl Profiles {
    pub fn horizon(&self) -> usize {
        self.load.len()
    }

    pub fn net_load(&self, t: usize) -> f64 {
        self.load[t] - self.solar[t] - self.wind[t]
    }

    /// Renewable output that may be spilled at hour `t`.
    pub fn renewables(&self, t: usize) -> f64 {
        self.solar[t] + self.wind[t]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UcInstance {
    pub id: String,
    pub generators: Vec<Generator>,
    pub storage: Storage,
    pub profiles: Profiles,
}

#[derive(Debug, thiserror::Error)]
pub enum InstanceError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed instance file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid instance: {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> InstanceError {
    InstanceError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

#[derive(Serialize, Deserialize)]
struct ProfilesFile {
    load: Vec<f64>,
    solar: Vec<f64>,
    wind: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    id: String,
    horizon: usize,
    generators: Vec<Generator>,
    #[serde(default)]
    storage: Storage,
    profiles: ProfilesFile,
}

impl UcInstance {
    pub fn num_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn horizon(&self) -> usize {
        self.profiles.horizon()
    }

    /// Checks every type invariant, reporting the first offending field.
    pub fn validate(&self) -> Result<(), InstanceError> {
        if self.generators.is_empty() {
            return Err(invalid("generators", "at least one generator is required"));
        }
        let t = self.horizon();
        if t == 0 {
            return Err(invalid("horizon", "horizon must be at least one hour"));
        }
        for (name, series) in [
            ("load", &self.profiles.load),
            ("solar", &self.profiles.solar),
            ("wind", &self.profiles.wind),
        ] {
            if series.len() != t {
                return Err(invalid(
                    format!("profiles.{name}"),
                    format!("length {} differs from horizon {t}", series.len()),
                ));
            }
            if let Some(k) = series.iter().position(|v| !v.is_finite() || *v < 0.0) {
                return Err(invalid(
                    format!("profiles.{name}[{k}]"),
                    format!("value {} must be finite and non-negative", series[k]),
                ));
            }
        }
        for (k, g) in self.generators.iter().enumerate() {
            let f = |name: &str| format!("generators[{k}].{name}");
            for (name, v) in [
                ("c_var", g.c_var),
                ("c_noload", g.c_noload),
                ("c_startup", g.c_startup),
            ] {
                if !v.is_finite() || v < 0.0 {
                    return Err(invalid(f(name), format!("cost {v} must be finite and non-negative")));
                }
            }
            if !(g.p_min >= 0.0 && g.p_min.is_finite()) {
                return Err(invalid(f("p_min"), format!("p_min {} must be non-negative", g.p_min)));
            }
            if !(g.p_max.is_finite() && g.p_min <= g.p_max) {
                return Err(invalid(
                    f("p_min"),
                    format!("p_min {} exceeds p_max {} (generator id {})", g.p_min, g.p_max, g.id),
                ));
            }
            if g.min_up < 1 {
                return Err(invalid(f("min_up"), "min_up must be at least 1"));
            }
            if g.min_down < 1 {
                return Err(invalid(f("min_down"), "min_down must be at least 1"));
            }
            if !(g.ramp_up > 0.0) {
                return Err(invalid(f("ramp_up"), "ramp limit must be positive"));
            }
            if !(g.ramp_down > 0.0) {
                return Err(invalid(f("ramp_down"), "ramp limit must be positive"));
            }
            if let Some(sr) = g.startup_ramp {
                if !(sr >= g.p_min) || !sr.is_finite() {
                    return Err(invalid(
                        f("startup_ramp"),
                        format!("startup_ramp {sr} must be at least p_min {}", g.p_min),
                    ));
                }
            }
            if g.init_on() {
                if !(g.init_power >= g.p_min && g.init_power <= g.p_max) {
                    return Err(invalid(
                        f("init_power"),
                        format!("init_power {} outside [{}, {}]", g.init_power, g.p_min, g.p_max),
                    ));
                }
            } else if g.init_power != 0.0 {
                return Err(invalid(f("init_power"), "init_power must be 0 when initially off"));
            }
        }
        let s = &self.storage;
        for (name, v) in [
            ("energy_cap", s.energy_cap),
            ("p_charge_max", s.p_charge_max),
            ("p_discharge_max", s.p_discharge_max),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!("storage.{name}"), format!("{v} must be non-negative")));
            }
        }
        for (name, v) in [("eff_charge", s.eff_charge), ("eff_discharge", s.eff_discharge)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(invalid(format!("storage.{name}"), format!("{v} not in (0, 1]")));
            }
        }
        if !(s.soc_init >= 0.0 && s.soc_init <= s.energy_cap) {
            return Err(invalid(
                "storage.soc_init",
                format!("{} not in [0, {}]", s.soc_init, s.energy_cap),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        let file: InstanceFile = serde_json::from_str(text)?;
        for (name, len) in [
            ("profiles.load", file.profiles.load.len()),
            ("profiles.solar", file.profiles.solar.len()),
            ("profiles.wind", file.profiles.wind.len()),
        ] {
            if len != file.horizon {
                return Err(invalid(name, format!("length {len} differs from horizon {}", file.horizon)));
            }
        }
        let inst = UcInstance {
            id: file.id,
            generators: file.generators,
            storage: file.storage,
            profiles: Profiles {
                load: file.profiles.load,
                solar: file.profiles.solar,
                wind: file.profiles.wind,
            },
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            id: self.id.clone(),
            horizon: self.horizon(),
            generators: self.generators.clone(),
            storage: self.storage.clone(),
            profiles: ProfilesFile {
                load: self.profiles.load.clone(),
                solar: self.profiles.solar.clone(),
                wind: self.profiles.wind.clone(),
            },
        };
        serde_json::to_string_pretty(&file).expect("instance serializes")
    }
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<UcInstance, InstanceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    UcInstance::from_json(&text)
}

pub fn save_instance(instance: &UcInstance, path: impl AsRef<Path>) -> Result<(), InstanceError> {
    let path = path.as_ref();
    fs::write(path, instance.to_json()).map_err(|source| InstanceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "id": "tiny",
        "horizon": 2,
        "generators": [{
            "id": 0, "c_var": 10, "c_noload": 5, "c_startup": 100,
            "p_min": 10, "p_max": 100, "min_up": 1, "min_down": 1,
            "ramp_up": 100, "ramp_down": 100, "startup_ramp": 100,
            "init_status": "off", "init_duration": 4, "init_power": 0
        }],
        "storage": {"energy_cap": 0, "p_charge_max": 0, "p_discharge_max": 0,
                    "eff_charge": 1, "eff_discharge": 1, "soc_init": 0},
        "profiles": {"load": [50, 60], "solar": [0, 0], "wind": [0, 0]}
    }"#;

    #[test]
    fn minimal_file_parses() {
        let inst = UcInstance::from_json(MINIMAL).unwrap();
        assert_eq!(inst.num_generators(), 1);
        assert_eq!(inst.horizon(), 2);
    }

    #[test]
    fn p_min_above_p_max_names_generator() {
        let bad = MINIMAL.replace("\"p_min\": 10", "\"p_min\": 150");
        let err = UcInstance::from_json(&bad).unwrap_err();
        match err {
            InstanceError::Invalid { field, .. } => assert_eq!(field, "generators[0].p_min"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(UcInstance::from_json("{"), Err(InstanceError::Parse(_))));
    }

    #[test]
    fn short_profile_is_rejected() {
        let bad = MINIMAL.replace("\"load\": [50, 60]", "\"load\": [50]");
        assert!(matches!(UcInstance::from_json(&bad), Err(InstanceError::Invalid { .. })));
    }

    #[test]
    fn round_trip_preserves_content() {
        let inst = UcInstance::from_json(MINIMAL).unwrap();
        let text = inst.to_json();
        let again = UcInstance::from_json(&text).unwrap();
        assert_eq!(again, inst);
        assert_eq!(again.to_json(), text);
        let a: serde_json::Value = serde_json::from_str(MINIMAL).unwrap();
        let b: serde_json::Value = serde_json::from_str(&text).unwrap();
        // Integers in the source come back as floats for the f64 fields.
        assert_eq!(a["generators"][0]["min_up"], b["generators"][0]["min_up"]);
        assert_eq!(b["profiles"]["load"][1].as_f64(), Some(60.0));
    }

    #[test]
    fn startup_ramp_defaults() {
        let text = MINIMAL.replace("\"startup_ramp\": 100,", "");
        let inst = UcInstance::from_json(&text).unwrap();
        assert_eq!(inst.generators[0].startup_ramp(), 100.0);
    }
}
