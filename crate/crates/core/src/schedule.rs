//! Commitment schedules, block decomposition, structural validation and
//! system-level series.
//!
//! Hours are 0-based throughout the crate.

use serde::{Deserialize, Serialize};

use crate::instance::UcInstance;

/// Binary on/off matrix, one row per generator.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<u8>>", try_from = "Vec<Vec<u8>>")]
pub struct Schedule {
    n_gen: usize,
    horizon: usize,
    s: Vec<bool>,
}

impl Schedule {
    pub fn new(n_gen: usize, horizon: usize, on: bool) -> Self {
        Schedule {
            n_gen,
            horizon,
            s: vec![on; n_gen * horizon],
        }
    }

    pub fn all_off(instance: &UcInstance) -> Self {
        Self::new(instance.num_generators(), instance.horizon(), false)
    }

    pub fn all_on(instance: &UcInstance) -> Self {
        Self::new(instance.num_generators(), instance.horizon(), true)
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Self {
        let horizon = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == horizon), "ragged schedule rows");
        Schedule {
            n_gen: rows.len(),
            horizon,
            s: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn num_generators(&self) -> usize {
        self.n_gen
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize) -> bool {
        self.s[i * self.horizon + t]
    }

    #[inline]
    pub fn set(&mut self, i: usize, t: usize, on: bool) {
        self.s[i * self.horizon + t] = on;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.s[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn set_range(&mut self, i: usize, start: usize, end: usize, on: bool) {
        for t in start..=end {
            self.set(i, t, on);
        }
    }

    pub fn count_on(&self) -> usize {
        self.s.iter().filter(|&&b| b).count()
    }

    /// Whether unit `i` starts up at hour `t` given its initial status.
    pub fn starts_up(&self, instance: &UcInstance, i: usize, t: usize) -> bool {
        let prev = if t == 0 {
            instance.generators[i].init_on()
        } else {
            self.get(i, t - 1)
        };
        self.get(i, t) && !prev
    }

    pub fn shuts_down(&self, instance: &UcInstance, i: usize, t: usize) -> bool {
        let prev = if t == 0 {
            instance.generators[i].init_on()
        } else {
            self.get(i, t - 1)
        };
        !self.get(i, t) && prev
    }

    /// Number of entries where the two schedules differ.
    pub fn hamming(&self, other: &Schedule) -> usize {
        self.s.iter().zip(&other.s).filter(|(a, b)| a != b).count()
    }

    pub fn matches(&self, instance: &UcInstance) -> bool {
        self.n_gen == instance.num_generators() && self.horizon == instance.horizon()
    }
}

impl From<Schedule> for Vec<Vec<u8>> {
    fn from(s: Schedule) -> Self {
        (0..s.n_gen)
            .map(|i| s.row(i).iter().map(|&b| b as u8).collect())
            .collect()
    }
}

impl TryFrom<Vec<Vec<u8>>> for Schedule {
    type Error = String;

    fn try_from(rows: Vec<Vec<u8>>) -> Result<Self, Self::Error> {
        let horizon = rows.first().map_or(0, Vec::len);
        let mut s = Vec::with_capacity(rows.len() * horizon);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != horizon {
                return Err(format!("row {i} has length {}, expected {horizon}", r.len()));
            }
            for &v in r {
                match v {
                    0 => s.push(false),
                    1 => s.push(true),
                    _ => return Err(format!("row {i} has non-binary entry {v}")),
                }
            }
        }
        Ok(Schedule {
            n_gen: rows.len(),
            horizon,
            s,
        })
    }
}

/// Maximal run of equal status in one generator's row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
    pub on: bool,
    /// Hours already spent in this status before the horizon (only for a
    /// leading block whose status equals the initial status).
    pub credit: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn effective_len(&self) -> usize {
        self.len() + self.credit
    }
}

pub fn compute_blocks(row: &[bool], init_on: bool, init_duration: usize) -> Vec<Block> {
    let mut blocks = Vec::new();
    let mut start = 0;
    for t in 1..=row.len() {
        if t == row.len() || row[t] != row[start] {
            let on = row[start];
            let credit = if start == 0 && on == init_on { init_duration } else { 0 };
            blocks.push(Block {
                start,
                end: t - 1,
                on,
                credit,
            });
            start = t;
        }
    }
    blocks
}

/// Blocks of generator `i` in `schedule`, with initial-condition credit.
pub fn generator_blocks(instance: &UcInstance, schedule: &Schedule, i: usize) -> Vec<Block> {
    let g = &instance.generators[i];
    compute_blocks(schedule.row(i), g.init_on(), g.init_duration)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// On-block shorter than the minimum up time.
    MinUp {
        generator: usize,
        start: usize,
        end: usize,
        effective_len: usize,
        required: usize,
    },
    MinDown {
        generator: usize,
        start: usize,
        end: usize,
        effective_len: usize,
        required: usize,
    },
    /// The unit leaves its initial status before the initial min-up or
    /// min-down requirement has elapsed.
    InitialHold {
        generator: usize,
        hold: usize,
    },
    /// Committed capacity plus full storage discharge is below net load.
    Capacity {
        hour: usize,
        available: f64,
        net_load: f64,
    },
}

impl Violation {
    pub fn generator(&self) -> Option<usize> {
        match *self {
            Violation::MinUp { generator, .. }
            | Violation::MinDown { generator, .. }
            | Violation::InitialHold { generator, .. } => Some(generator),
            Violation::Capacity { .. } => None,
        }
    }

    pub fn is_structural(&self) -> bool {
        !matches!(self, Violation::Capacity { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    /// Min-up, min-down and initial-hold violations.
    pub fn structural(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.is_structural())
    }

    pub fn count_structural(&self) -> usize {
        self.structural().count()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("schedule is {got_gen}x{got_t} but instance needs {want_gen}x{want_t}")]
pub struct DimensionMismatch {
    pub got_gen: usize,
    pub got_t: usize,
    pub want_gen: usize,
    pub want_t: usize,
}

pub fn check_dimensions(instance: &UcInstance, schedule: &Schedule) -> Result<(), DimensionMismatch> {
    if schedule.matches(instance) {
        Ok(())
    } else {
        Err(DimensionMismatch {
            got_gen: schedule.num_generators(),
            got_t: schedule.horizon(),
            want_gen: instance.num_generators(),
            want_t: instance.horizon(),
        })
    }
}

/// Min-up/min-down violations of one generator. Blocks that run to the end
/// of the horizon are exempt: they may continue beyond it.
pub fn generator_violations(instance: &UcInstance, schedule: &Schedule, i: usize) -> Vec<Violation> {
    let g = &instance.generators[i];
    let horizon = schedule.horizon();
    let blocks = generator_blocks(instance, schedule, i);
    let mut out = Vec::new();
    let hold = g.initial_hold();
    if hold > 0 && blocks.first().is_some_and(|b| b.on != g.init_on()) {
        out.push(Violation::InitialHold { generator: i, hold });
    }
    for b in &blocks {
        if b.end + 1 == horizon {
            continue;
        }
        let required = if b.on { g.min_up } else { g.min_down };
        if b.effective_len() < required {
            let (start, end, effective_len) = (b.start, b.end, b.effective_len());
            out.push(if b.on {
                Violation::MinUp {
                    generator: i,
                    start,
                    end,
                    effective_len,
                    required,
                }
            } else {
                Violation::MinDown {
                    generator: i,
                    start,
                    end,
                    effective_len,
                    required,
                }
            });
        }
    }
    out
}

/// True if generator `i`'s row has no min-up/min-down/initial violations.
pub fn generator_row_valid(instance: &UcInstance, schedule: &Schedule, i: usize) -> bool {
    let g = &instance.generators[i];
    row_valid(schedule.row(i), g.init_on(), g.init_duration, g.min_up, g.min_down)
}

/// Allocation-free structural check of a single row.
pub fn row_valid(row: &[bool], init_on: bool, init_duration: usize, min_up: usize, min_down: usize) -> bool {
    let horizon = row.len();
    let req0 = if init_on { min_up } else { min_down };
    let hold = req0.saturating_sub(init_duration);
    let mut start = 0;
    for t in 1..=horizon {
        if t == horizon || row[t] != row[start] {
            let on = row[start];
            if start == 0 && on != init_on && hold > 0 {
                return false;
            }
            if t < horizon {
                let credit = if start == 0 && on == init_on { init_duration } else { 0 };
                let required = if on { min_up } else { min_down };
                if t - start + credit < required {
                    return false;
                }
            }
            start = t;
        }
    }
    true
}

pub fn validate_schedule(
    instance: &UcInstance,
    schedule: &Schedule,
) -> Result<ViolationReport, DimensionMismatch> {
    check_dimensions(instance, schedule)?;
    let mut violations = Vec::new();
    for i in 0..instance.num_generators() {
        violations.extend(generator_violations(instance, schedule, i));
    }
    let series = SystemSeries::with_capacity(instance, schedule);
    let discharge = instance.storage.p_discharge_max;
    for t in 0..instance.horizon() {
        let available = series.online_cap[t] + discharge;
        if available < series.net_load[t] {
            violations.push(Violation::Capacity {
                hour: t,
                available,
                net_load: series.net_load[t],
            });
        }
    }
    Ok(ViolationReport { violations })
}

/// Net load, ramp requirement and (per schedule) capacity series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SystemSeries {
    pub net_load: Vec<f64>,
    /// `L_t - L_{t-1}`, with hour 0 measured against the initial operating
    /// point (sum of initial outputs).
    pub ramp_req: Vec<f64>,
    /// Committed capacity `P_t`; empty until [`SystemSeries::compute_capacity`].
    pub online_cap: Vec<f64>,
    /// Largest achievable upward output change into each hour.
    pub ramp_cap: Vec<f64>,
}

pub fn net_load(instance: &UcInstance) -> SystemSeries {
    let horizon = instance.horizon();
    let net: Vec<f64> = (0..horizon).map(|t| instance.profiles.net_load(t)).collect();
    let p0: f64 = instance.generators.iter().map(|g| g.init_power).sum();
    let ramp_req = (0..horizon)
        .map(|t| if t == 0 { net[0] - p0 } else { net[t] - net[t - 1] })
        .collect();
    SystemSeries {
        net_load: net,
        ramp_req,
        online_cap: Vec::new(),
        ramp_cap: Vec::new(),
    }
}

impl SystemSeries {
    pub fn with_capacity(instance: &UcInstance, schedule: &Schedule) -> Self {
        let mut s = net_load(instance);
        s.compute_capacity(instance, schedule);
        s
    }

    /// Fills `online_cap` and `ramp_cap` for `schedule`.
    pub fn compute_capacity(&mut self, instance: &UcInstance, schedule: &Schedule) {
        let horizon = instance.horizon();
        self.online_cap = vec![0.0; horizon];
        self.ramp_cap = vec![0.0; horizon];
        for t in 0..horizon {
            self.refresh_hour(instance, schedule, t);
        }
    }

    /// Recomputes the capacity entries of a single hour after an edit.
    pub fn refresh_hour(&mut self, instance: &UcInstance, schedule: &Schedule, t: usize) {
        let mut cap = 0.0;
        let mut ramp = 0.0;
        for (i, g) in instance.generators.iter().enumerate() {
            if !schedule.get(i, t) {
                continue;
            }
            cap += g.p_max;
            let was_on = if t == 0 { g.init_on() } else { schedule.get(i, t - 1) };
            ramp += if was_on { g.ramp_up } else { g.startup_ramp().min(g.p_max) };
        }
        self.online_cap[t] = cap;
        self.ramp_cap[t] = ramp;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::single_gen;
    use proptest::prelude::*;

    fn bits(s: &str) -> Vec<bool> {
        s.chars().map(|c| c == '1').collect()
    }

    #[test]
    fn all_ones_is_one_block() {
        let b = compute_blocks(&bits("1111"), false, 3);
        assert_eq!(
            b,
            vec![Block {
                start: 0,
                end: 3,
                on: true,
                credit: 0
            }]
        );
    }

    #[test]
    fn alternating_blocks() {
        let b = compute_blocks(&bits("11001"), false, 0);
        let spans: Vec<_> = b.iter().map(|b| (b.start, b.end, b.on)).collect();
        assert_eq!(spans, vec![(0, 1, true), (2, 3, false), (4, 4, true)]);
    }

    #[test]
    fn leading_block_gets_credit() {
        let b = compute_blocks(&bits("1110"), true, 5);
        assert_eq!(b[0].effective_len(), 3 + 5);
        assert_eq!(b[1].credit, 0);
    }

    #[test]
    fn short_on_block_is_one_violation() {
        let mut inst = single_gen(&[50.0; 6]);
        inst.generators[0].min_up = 3;
        let s = Schedule::from_rows(&[bits("011000")]);
        let r = validate_schedule(&inst, &s).unwrap();
        let structural: Vec<_> = r.structural().cloned().collect();
        assert_eq!(
            structural,
            vec![Violation::MinUp {
                generator: 0,
                start: 1,
                end: 2,
                effective_len: 2,
                required: 3
            }]
        );
    }

    #[test]
    fn trailing_block_is_exempt() {
        let mut inst = single_gen(&[50.0; 6]);
        inst.generators[0].min_up = 3;
        let s = Schedule::from_rows(&[bits("000011")]);
        let r = validate_schedule(&inst, &s).unwrap();
        assert_eq!(r.count_structural(), 0);
    }

    #[test]
    fn all_off_flags_capacity_where_load_exceeds_discharge() {
        let mut inst = single_gen(&[10.0, 50.0, 5.0, 60.0]);
        inst.storage.p_discharge_max = 20.0;
        inst.storage.energy_cap = 100.0;
        let r = validate_schedule(&inst, &Schedule::all_off(&inst)).unwrap();
        let hours: Vec<usize> = r
            .violations
            .iter()
            .filter_map(|v| match v {
                Violation::Capacity { hour, .. } => Some(*hour),
                _ => None,
            })
            .collect();
        assert_eq!(hours, vec![1, 3]);
    }

    #[test]
    fn initial_hold_is_reported() {
        let mut inst = single_gen(&[50.0; 4]);
        let g = &mut inst.generators[0];
        g.init_status = crate::InitStatus::On;
        g.init_power = g.p_min;
        g.min_up = 3;
        g.init_duration = 1;
        let s = Schedule::from_rows(&[bits("0000")]);
        let r = validate_schedule(&inst, &s).unwrap();
        assert!(r.violations.contains(&Violation::InitialHold { generator: 0, hold: 2 }));
        assert!(!generator_row_valid(&inst, &s, 0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let inst = single_gen(&[50.0; 4]);
        assert!(validate_schedule(&inst, &Schedule::new(1, 3, true)).is_err());
    }

    #[test]
    fn net_load_examples() {
        let mut inst = single_gen(&[100.0, 50.0]);
        inst.profiles.solar = vec![30.0, 30.0];
        inst.profiles.wind = vec![20.0, 20.0];
        let s = net_load(&inst);
        assert_eq!(s.net_load, vec![50.0, 0.0]);

        let inst = single_gen(&[50.0, 80.0]);
        assert_eq!(net_load(&inst).ramp_req[1], 30.0);
    }

    #[test]
    fn schedule_json_is_nested_bits() {
        let s = Schedule::from_rows(&[bits("101"), bits("010")]);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(text, "[[1,0,1],[0,1,0]]");
        let back: Schedule = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<Schedule>("[[2]]").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn blocks_tile_alternate_and_round_trip(
            row in proptest::collection::vec(any::<bool>(), 1..40),
            init_on in any::<bool>(),
            dur in 0usize..10,
        ) {
            let blocks = compute_blocks(&row, init_on, dur);
            prop_assert_eq!(blocks[0].start, 0);
            prop_assert_eq!(blocks.last().unwrap().end, row.len() - 1);
            for w in blocks.windows(2) {
                prop_assert_eq!(w[0].end + 1, w[1].start);
                prop_assert_ne!(w[0].on, w[1].on);
            }
            let rebuilt: Vec<bool> = blocks.iter().flat_map(|b| std::iter::repeat(b.on).take(b.len())).collect();
            prop_assert_eq!(rebuilt, row);
        }
    }

    proptest! {
        #[test]
        fn net_load_is_linear_in_load(
            load in proptest::collection::vec(0.0f64..500.0, 1..24),
            delta in 0.0f64..100.0,
        ) {
            let inst = single_gen(&load);
            let mut shifted = inst.clone();
            for v in &mut shifted.profiles.load { *v += delta; }
            let a = net_load(&inst).net_load;
            let b = net_load(&shifted).net_load;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((y - x - delta).abs() < 1e-9);
            }
        }

        #[test]
        fn row_valid_agrees_with_report(
            row in proptest::collection::vec(any::<bool>(), 1..16),
            init_on in any::<bool>(),
            dur in 0usize..5,
            mu in 1usize..5,
            md in 1usize..5,
        ) {
            let mut inst = single_gen(&vec![0.0; row.len()]);
            let g = &mut inst.generators[0];
            g.init_status = if init_on { crate::InitStatus::On } else { crate::InitStatus::Off };
            g.init_power = if init_on { g.p_min } else { 0.0 };
            g.init_duration = dur;
            g.min_up = mu;
            g.min_down = md;
            let s = Schedule::from_rows(&[row]);
            let report = validate_schedule(&inst, &s).unwrap();
            prop_assert_eq!(generator_row_valid(&inst, &s, 0), report.count_structural() == 0);
        }
    }
}
