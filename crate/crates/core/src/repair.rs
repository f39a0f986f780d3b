//! Deterministic repair of predicted schedules.
//!
//! Three stages, each recorded as range edits in a [`RepairTrace`]:
//!
//! * [`surgical_repair`] fixes min-up/min-down violations and commits the
//!   cheapest units until every hour has capacity and ramp headroom;
//! * [`economic_repair`] decommits the most expensive units where capacity
//!   allows, guarded by a dispatch check;
//! * [`head_tail_trim`] cuts lightly loaded hours off the ends of on-blocks.
//!
//! [`repair_pipeline`] chains them and repeats until the schedule stops
//! changing, so applying it twice is the same as applying it once.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dispatch::{Cause, DispatchError, DispatchResult, DispatchSolver};
use crate::instance::UcInstance;
use crate::schedule::{check_dimensions, generator_blocks, row_valid, DimensionMismatch, Schedule, SystemSeries};

/// How units are ranked from cheap to expensive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostOrder {
    /// `c_var + c_noload / p_max`.
    FullLoadAverage,
    /// `c_var` alone.
    Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    /// Capacity and ramp headroom demanded by the surgical stage (MW).
    pub mu_margin: f64,
    /// Shortfall below net load tolerated when decommitting (MW).
    pub eps_margin: f64,
    /// Trim window in hours.
    pub window: usize,
    /// Utilization (in hours at full range) below which a window is trimmed.
    pub t_util: f64,
    pub order: CostOrder,
    /// Upper bound on pipeline passes while looking for a fixed point.
    pub max_passes: usize,
}

impl RepairConfig {
    /// Defaults: both margins equal to the storage discharge rating, a
    /// four-hour window and a threshold of 0.4 per window hour.
    pub fn for_instance(instance: &UcInstance) -> Self {
        let d = instance.storage.p_discharge_max;
        RepairConfig {
            mu_margin: d,
            eps_margin: d,
            window: 4,
            t_util: 0.4 * 4.0,
            order: CostOrder::FullLoadAverage,
            max_passes: 8,
        }
    }

    pub fn validate(&self) -> Result<(), RepairError> {
        if self.window == 0 {
            return Err(RepairError::Config("window must be at least one hour".into()));
        }
        if !(self.mu_margin >= 0.0 && self.eps_margin >= 0.0) {
            return Err(RepairError::Config("margins must be non-negative".into()));
        }
        if !self.t_util.is_finite() || self.max_passes == 0 {
            return Err(RepairError::Config("t_util must be finite and max_passes positive".into()));
        }
        Ok(())
    }

    fn key(&self, instance: &UcInstance, i: usize) -> f64 {
        let g = &instance.generators[i];
        match self.order {
            CostOrder::FullLoadAverage => g.order_key(),
            CostOrder::Marginal => g.c_var,
        }
    }

    /// Unit indices from cheapest to most expensive (ties: lower id first).
    fn cheapest_first(&self, instance: &UcInstance) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..instance.num_generators()).collect();
        idx.sort_by(|&a, &b| self.key(instance, a).total_cmp(&self.key(instance, b)).then(a.cmp(&b)));
        idx
    }

    /// Most expensive first (ties: higher id first).
    fn dearest_first(&self, instance: &UcInstance) -> Vec<usize> {
        let mut idx = self.cheapest_first(instance);
        idx.reverse();
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    MinUp,
    MinDown,
    Capacity,
    Ramp,
    Economic,
    Trim,
    Revert,
}

/// Sets hours `start..=end` of one unit to `on`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub generator: usize,
    pub start: usize,
    pub end: usize,
    pub on: bool,
    pub reason: Reason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairTrace {
    pub edits: Vec<Edit>,
}

impl RepairTrace {
    pub fn len(&self) -> usize {
        self.edits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }

    pub fn extend(&mut self, other: RepairTrace) {
        self.edits.extend(other.edits);
    }

    /// Applies every edit in order to a copy of `input`.
    pub fn replay(&self, input: &Schedule) -> Schedule {
        let mut s = input.clone();
        for e in &self.edits {
            s.set_range(e.generator, e.start, e.end, e.on);
        }
        s
    }

    /// One JSON object per edit.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.edits {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RepairError {
    #[error(transparent)]
    Dimension(#[from] DimensionMismatch),
    /// Even with every available unit committed, capacity plus storage
    /// discharge falls short of net load: the instance is infeasible.
    #[error("hour {hour}: {available} MW available against net load {net_load} MW")]
    CapacityExhausted { hour: usize, available: f64, net_load: f64 },
    /// No heuristic edit made the schedule dispatchable.
    #[error("no dispatchable schedule found; last failure {cause:?} at hour {hour}")]
    Unrepairable { hour: usize, cause: Cause },
    #[error(transparent)]
    Dispatch(DispatchError),
    #[error("invalid repair configuration: {0}")]
    Config(String),
}

/// Result of [`repair_pipeline`].
#[derive(Debug, Clone, PartialEq)]
pub struct Repaired {
    pub schedule: Schedule,
    pub dispatch: DispatchResult,
    pub trace: RepairTrace,
    /// Pipeline passes run before reaching a fixed point.
    pub passes: usize,
    /// Simplex iterations over every dispatch solve made by the pipeline.
    pub lp_iterations: usize,
}

impl Repaired {
    pub fn cost(&self) -> f64 {
        self.dispatch.total_cost()
    }
}

/// A schedule under edit with its trace.
struct Editor<'a> {
    instance: &'a UcInstance,
    schedule: Schedule,
    trace: RepairTrace,
}

impl<'a> Editor<'a> {
    fn new(instance: &'a UcInstance, schedule: &Schedule) -> Self {
        Editor {
            instance,
            schedule: schedule.clone(),
            trace: RepairTrace::default(),
        }
    }

    fn apply(&mut self, generator: usize, start: usize, end: usize, on: bool, reason: Reason) {
        self.schedule.set_range(generator, start, end, on);
        self.trace.edits.push(Edit {
            generator,
            start,
            end,
            on,
            reason,
        });
    }

    /// Restores `snapshot`, recording one revert edit per differing run.
    fn revert_to(&mut self, snapshot: &Schedule) {
        for i in 0..snapshot.num_generators() {
            let horizon = snapshot.horizon();
            let mut t = 0;
            while t < horizon {
                if self.schedule.get(i, t) == snapshot.get(i, t) {
                    t += 1;
                    continue;
                }
                let on = snapshot.get(i, t);
                let start = t;
                while t < horizon && self.schedule.get(i, t) != snapshot.get(i, t) && snapshot.get(i, t) == on {
                    t += 1;
                }
                self.apply(i, start, t - 1, on, Reason::Revert);
            }
        }
    }

    fn valid_with(&self, i: usize, start: usize, end: usize, on: bool) -> bool {
        let g = &self.instance.generators[i];
        let mut row = self.schedule.row(i).to_vec();
        row[start..=end].fill(on);
        row_valid(&row, g.init_on(), g.init_duration, g.min_up, g.min_down)
    }

    /// Hours a unit must keep its initial off status.
    fn off_hold(&self, i: usize) -> usize {
        let g = &self.instance.generators[i];
        if g.init_on() {
            0
        } else {
            g.initial_hold()
        }
    }

    /// Smallest structurally valid range that commits unit `i` at hour `t`,
    /// preferring to extend an adjacent on-block. `None` when the unit is
    /// held off at `t` by its initial condition.
    fn turn_on_range(&self, i: usize, t: usize) -> Option<(usize, usize)> {
        let horizon = self.schedule.horizon();
        let row = self.schedule.row(i);
        debug_assert!(!row[t]);
        let hold = self.off_hold(i);
        if t < hold {
            return None;
        }
        let mut a = t;
        while a > 0 && !row[a - 1] {
            a -= 1;
        }
        let mut b = t;
        while b + 1 < horizon && !row[b + 1] {
            b += 1;
        }
        let lo = a.max(hold);
        let mu = self.instance.generators[i].min_up.max(1);
        let mut cands: Vec<(usize, usize)> = Vec::new();
        if a > 0 {
            cands.push((a, t));
        }
        if b + 1 < horizon {
            cands.push((t, b));
        }
        let mut s = t.saturating_sub((mu - 1) / 2).max(lo);
        let e = (s + mu - 1).min(b);
        if e + 1 - s < mu {
            s = (e + 1).saturating_sub(mu).max(lo);
        }
        cands.extend([(s, e), (lo, e), (s, b), (t, (t + mu - 1).min(b)), (lo, b)]);
        cands
            .into_iter()
            .find(|&(s, e)| s <= t && t <= e && self.valid_with(i, s, e, true))
    }

    /// Structurally valid ranges that decommit unit `i` at hour `t`, whole
    /// block first, then the block's tail from `t`, then its head up to `t`.
    fn turn_off_ranges(&self, i: usize, t: usize) -> Vec<(usize, usize)> {
        let horizon = self.schedule.horizon();
        let row = self.schedule.row(i);
        debug_assert!(row[t]);
        let mut s = t;
        while s > 0 && row[s - 1] {
            s -= 1;
        }
        let mut e = t;
        while e + 1 < horizon && row[e + 1] {
            e += 1;
        }
        let mut out = Vec::new();
        for r in [(s, e), (t, e), (s, t)] {
            if !out.contains(&r) && self.valid_with(i, r.0, r.1, false) {
                out.push(r);
            }
        }
        out
    }
}

/// Phase 1: extend short on-blocks forward to the minimum up time and
/// short off-blocks forward to the minimum down time, and honour the
/// initial hold. Works left to right, so it terminates in `O(T)` edits.
fn fix_structure(ed: &mut Editor<'_>) {
    let inst = ed.instance;
    let horizon = inst.horizon();
    for i in 0..inst.num_generators() {
        let g = &inst.generators[i];
        let hold = g.initial_hold().min(horizon);
        if hold > 0 && ed.schedule.row(i)[..hold].iter().any(|&on| on != g.init_on()) {
            let reason = if g.init_on() { Reason::MinUp } else { Reason::MinDown };
            ed.apply(i, 0, hold - 1, g.init_on(), reason);
        }
        let mut from = 0;
        loop {
            let Some(b) = generator_blocks(inst, &ed.schedule, i)
                .into_iter()
                .find(|b| b.end >= from && b.end + 1 < horizon)
            else {
                break;
            };
            let required = if b.on { g.min_up } else { g.min_down };
            if b.effective_len() < required {
                let need = required - b.credit;
                let end = (b.start + need - 1).min(horizon - 1);
                let reason = if b.on { Reason::MinUp } else { Reason::MinDown };
                ed.apply(i, b.end + 1, end, b.on, reason);
                from = end;
            } else {
                from = b.end + 1;
            }
            if from >= horizon {
                break;
            }
        }
    }
}

/// Phase 2: per hour, cheapest units first, commit whole valid blocks until
/// capacity and ramp headroom reach the margin.
fn add_capacity(ed: &mut Editor<'_>, config: &RepairConfig) -> Result<(), RepairError> {
    let inst = ed.instance;
    let order = config.cheapest_first(inst);
    let mut series = SystemSeries::with_capacity(inst, &ed.schedule);
    let discharge = inst.storage.p_discharge_max;
    for t in 0..inst.horizon() {
        loop {
            let short_cap = series.online_cap[t] < series.net_load[t] + config.mu_margin;
            let short_ramp = series.ramp_cap[t] < series.ramp_req[t] + config.mu_margin;
            if !short_cap && !short_ramp {
                break;
            }
            let pick = order
                .iter()
                .filter(|&&i| !ed.schedule.get(i, t))
                .find_map(|&i| ed.turn_on_range(i, t).map(|r| (i, r)));
            let Some((i, (s, e))) = pick else { break };
            ed.apply(i, s, e, true, if short_cap { Reason::Capacity } else { Reason::Ramp });
            for h in s..=(e + 1).min(inst.horizon() - 1) {
                series.refresh_hour(inst, &ed.schedule, h);
            }
        }
        let available = series.online_cap[t] + discharge;
        if available < series.net_load[t] {
            return Err(RepairError::CapacityExhausted {
                hour: t,
                available,
                net_load: series.net_load[t],
            });
        }
    }
    Ok(())
}

/// Min-up/min-down repair followed by capacity commitment.
pub fn surgical_repair(
    instance: &UcInstance,
    schedule: &Schedule,
    config: &RepairConfig,
) -> Result<(Schedule, RepairTrace), RepairError> {
    check_dimensions(instance, schedule)?;
    config.validate()?;
    let mut ed = Editor::new(instance, schedule);
    fix_structure(&mut ed);
    add_capacity(&mut ed, config)?;
    Ok((ed.schedule, ed.trace))
}

/// Whether committed minimum output at `t` exceeds what the system can
/// absorb (load plus full charging; renewables can always be curtailed).
fn surplus_at(inst: &UcInstance, schedule: &Schedule, t: usize) -> bool {
    let pmin: f64 = (0..inst.num_generators())
        .filter(|&i| schedule.get(i, t))
        .map(|i| inst.generators[i].p_min)
        .sum();
    pmin > inst.profiles.load[t] + inst.storage.p_charge_max
}

/// Makes a structurally valid schedule dispatchable by reacting to the
/// first failing hour of the dispatch LP.
fn restore(
    solver: &DispatchSolver<'_>,
    ed: &mut Editor<'_>,
    config: &RepairConfig,
) -> Result<DispatchResult, RepairError> {
    let inst = ed.instance;
    let horizon = inst.horizon();
    let cheap = config.cheapest_first(inst);
    let dear = config.dearest_first(inst);
    let limit = inst.num_generators() * horizon + 1;
    let mut last = (0, Cause::Balance);
    for _ in 0..limit {
        let (hour, cause) = match solver.solve(&ed.schedule) {
            Ok(r) => return Ok(r),
            Err(DispatchError::Infeasible { hour, cause }) => (hour, cause),
            Err(e) => return Err(RepairError::Dispatch(e)),
        };
        last = (hour, cause);
        let reason = match cause {
            Cause::Ramp { .. } => Reason::Ramp,
            _ => Reason::Capacity,
        };
        // A unit dropping out from high output violates its shutdown ramp;
        // keep it on for another hour.
        if let Cause::Ramp { generator } = cause {
            if !ed.schedule.get(generator, hour) && hour > 0 && ed.schedule.get(generator, hour - 1) {
                if let Some((s, e)) = ed.turn_on_range(generator, hour) {
                    ed.apply(generator, s, e, true, reason);
                    continue;
                }
            }
        }
        if surplus_at(inst, &ed.schedule, hour) {
            let off = dear
                .iter()
                .filter(|&&i| ed.schedule.get(i, hour))
                .find_map(|&i| ed.turn_off_ranges(i, hour).first().map(|&r| (i, r)));
            if let Some((i, (s, e))) = off {
                ed.apply(i, s, e, false, reason);
                continue;
            }
        }
        let hours = if hour > 0 { vec![hour, hour - 1] } else { vec![hour] };
        let on = hours.iter().find_map(|&h| {
            cheap
                .iter()
                .filter(|&&i| !ed.schedule.get(i, h))
                .find_map(|&i| ed.turn_on_range(i, h).map(|r| (i, r)))
        });
        match on {
            Some((i, (s, e))) => ed.apply(i, s, e, true, reason),
            None => break,
        }
    }
    // Last resort: every unit on wherever its initial condition allows.
    for i in 0..inst.num_generators() {
        let hold = ed.off_hold(i).min(horizon);
        if hold < horizon && ed.schedule.row(i)[hold..].iter().any(|&on| !on) {
            ed.apply(i, hold, horizon - 1, true, Reason::Capacity);
        }
    }
    solver.solve(&ed.schedule).map_err(|e| match e {
        DispatchError::Infeasible { hour, cause } => RepairError::Unrepairable { hour, cause },
        _ => {
            let (hour, cause) = last;
            RepairError::Unrepairable { hour, cause }
        }
    })
}

/// Accepts the current edits if the schedule dispatches more cheaply than
/// `best`; otherwise reverts to `snapshot`.
fn accept_if_cheaper(
    solver: &DispatchSolver<'_>,
    ed: &mut Editor<'_>,
    snapshot: &Schedule,
    best: &mut DispatchResult,
) -> bool {
    if let Ok(r) = solver.solve(&ed.schedule) {
        if r.total_cost() < best.total_cost() - 1e-9 * best.total_cost().abs().max(1.0) {
            *best = r;
            return true;
        }
    }
    ed.revert_to(snapshot);
    false
}

fn economic_pass(solver: &DispatchSolver<'_>, ed: &mut Editor<'_>, config: &RepairConfig, best: &mut DispatchResult) {
    let inst = ed.instance;
    let dear = config.dearest_first(inst);
    let mut series = SystemSeries::with_capacity(inst, &ed.schedule);
    let fits = |series: &SystemSeries, i: usize, s: usize, e: usize| {
        let p = inst.generators[i].p_max;
        (s..=e).all(|h| series.online_cap[h] - p >= series.net_load[h] - config.eps_margin)
    };
    for t in 0..inst.horizon() {
        let snapshot = ed.schedule.clone();
        let mut batch = Vec::new();
        for &i in &dear {
            if !ed.schedule.get(i, t) {
                continue;
            }
            let pick = ed
                .turn_off_ranges(i, t)
                .into_iter()
                .find(|&(s, e)| fits(&series, i, s, e));
            if let Some((s, e)) = pick {
                ed.apply(i, s, e, false, Reason::Economic);
                series.compute_capacity(inst, &ed.schedule);
                batch.push((i, s, e));
            }
        }
        if batch.is_empty() || accept_if_cheaper(solver, ed, &snapshot, best) {
            continue;
        }
        // The batch failed as a whole; try its edits one at a time.
        series.compute_capacity(inst, &ed.schedule);
        if batch.len() > 1 {
            for (i, s, e) in batch {
                if !(s..=e).all(|h| ed.schedule.get(i, h)) || !ed.valid_with(i, s, e, false) || !fits(&series, i, s, e) {
                    continue;
                }
                let snap = ed.schedule.clone();
                ed.apply(i, s, e, false, Reason::Economic);
                accept_if_cheaper(solver, ed, &snap, best);
                series.compute_capacity(inst, &ed.schedule);
            }
        }
    }
}

/// Hours at full operating range that unit `i` delivers over `s..=e`.
fn utilization(inst: &UcInstance, d: &DispatchResult, i: usize, s: usize, e: usize) -> f64 {
    let g = &inst.generators[i];
    let range = g.p_max - g.p_min;
    if range <= 0.0 {
        return (e + 1 - s) as f64;
    }
    (s..=e).map(|t| (d.dispatch.p[i][t] - g.p_min) / range).sum()
}

fn trim_pass(solver: &DispatchSolver<'_>, ed: &mut Editor<'_>, config: &RepairConfig, best: &mut DispatchResult) {
    let inst = ed.instance;
    let w = config.window;
    for i in config.dearest_first(inst) {
        let mut k = 0;
        loop {
            let blocks: Vec<_> = generator_blocks(inst, &ed.schedule, i).into_iter().filter(|b| b.on).collect();
            let Some(b) = blocks.get(k).copied() else { break };
            let head = (b.start, (b.start + w - 1).min(b.end));
            let tail = (b.end.saturating_sub(w - 1).max(b.start), b.end);
            let mut changed = false;
            for (s, e) in [head, tail] {
                if !(s..=e).all(|h| ed.schedule.get(i, h)) {
                    continue;
                }
                if utilization(inst, best, i, s, e) >= config.t_util || !ed.valid_with(i, s, e, false) {
                    continue;
                }
                let snap = ed.schedule.clone();
                ed.apply(i, s, e, false, Reason::Trim);
                if accept_if_cheaper(solver, ed, &snap, best) {
                    changed = true;
                    break;
                }
            }
            // A trimmed block is re-examined; a removed one shifts the list.
            if !changed {
                k += 1;
            }
        }
    }
}

/// Decommits expensive units hour by hour while capacity stays within
/// `eps_margin` of net load. Every batch must keep the schedule
/// dispatchable and lower its cost, or it is reverted. An input that does
/// not dispatch is returned unchanged.
pub fn economic_repair(
    instance: &UcInstance,
    schedule: &Schedule,
    config: &RepairConfig,
) -> Result<(Schedule, RepairTrace), RepairError> {
    check_dimensions(instance, schedule)?;
    config.validate()?;
    let solver = DispatchSolver::new(instance);
    let mut ed = Editor::new(instance, schedule);
    if let Ok(mut best) = solver.solve(schedule) {
        economic_pass(&solver, &mut ed, config, &mut best);
    }
    Ok((ed.schedule, ed.trace))
}

/// Shortens on-blocks whose first or last `window` hours are lightly
/// used. `dispatch` must be feasible for `schedule`; utilization is read
/// from the latest accepted dispatch as trimming proceeds.
pub fn head_tail_trim(
    instance: &UcInstance,
    schedule: &Schedule,
    dispatch: &DispatchResult,
    config: &RepairConfig,
) -> Result<(Schedule, RepairTrace), RepairError> {
    check_dimensions(instance, schedule)?;
    config.validate()?;
    let solver = DispatchSolver::new(instance);
    let mut ed = Editor::new(instance, schedule);
    let mut best = dispatch.clone();
    trim_pass(&solver, &mut ed, config, &mut best);
    Ok((ed.schedule, ed.trace))
}

/// Surgical repair (skipped when the schedule already dispatches), then
/// economic repair and trimming, repeated until a pass changes nothing.
pub fn repair_pipeline(
    instance: &UcInstance,
    schedule: &Schedule,
    config: &RepairConfig,
) -> Result<Repaired, RepairError> {
    check_dimensions(instance, schedule)?;
    config.validate()?;
    let solver = DispatchSolver::new(instance);
    let mut ed = Editor::new(instance, schedule);
    let mut passes = 0;
    let mut best = loop {
        passes += 1;
        let start = ed.schedule.clone();
        let mut best = match solver.solve(&ed.schedule) {
            Ok(r) => r,
            Err(DispatchError::Infeasible { .. }) => {
                fix_structure(&mut ed);
                add_capacity(&mut ed, config)?;
                restore(&solver, &mut ed, config)?
            }
            Err(e) => return Err(RepairError::Dispatch(e)),
        };
        economic_pass(&solver, &mut ed, config, &mut best);
        trim_pass(&solver, &mut ed, config, &mut best);
        if ed.schedule == start || passes >= config.max_passes {
            break best;
        }
    };
    let lp_iterations = solver.work();
    // `best` always belongs to the current schedule: every rejected edit
    // is reverted before the next one is tried.
    debug_assert_eq!(solver.solve(&ed.schedule).ok().map(|r| r.total_cost()), Some(best.total_cost()));
    best.iterations = 0;
    Ok(Repaired {
        schedule: ed.schedule,
        dispatch: best,
        trace: ed.trace,
        passes,
        lp_iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::base_system;
    use crate::instance::{Generator, InitStatus, Profiles, Storage};
    use crate::schedule::validate_schedule;
    use crate::testutil::single_gen;

    fn gen(id: usize, c_var: f64, p_max: f64, min_up: usize) -> Generator {
        Generator {
            id,
            c_var,
            c_noload: 0.0,
            c_startup: 0.0,
            p_min: 10.0,
            p_max,
            min_up,
            min_down: 1,
            ramp_up: p_max,
            ramp_down: p_max,
            startup_ramp: None,
            init_status: InitStatus::Off,
            init_duration: 5,
            init_power: 0.0,
        }
    }

    fn inst(generators: Vec<Generator>, load: Vec<f64>) -> UcInstance {
        let horizon = load.len();
        UcInstance {
            id: "t".into(),
            generators,
            storage: Storage::none(),
            profiles: Profiles {
                load,
                solar: vec![0.0; horizon],
                wind: vec![0.0; horizon],
            },
        }
    }

    fn zero_margins(i: &UcInstance) -> RepairConfig {
        RepairConfig {
            mu_margin: 0.0,
            eps_margin: 0.0,
            ..RepairConfig::for_instance(i)
        }
    }

    #[test]
    fn short_on_block_is_extended_forward() {
        let inst = inst(vec![gen(0, 10.0, 100.0, 3)], vec![20.0; 6]);
        let s = Schedule::from_rows(&[vec![true, true, false, false, false, false]]);
        let mut ed = Editor::new(&inst, &s);
        fix_structure(&mut ed);
        assert_eq!(ed.schedule.row(0), &[true, true, true, false, false, false]);
        assert_eq!(ed.trace.edits[0].reason, Reason::MinUp);
    }

    #[test]
    fn single_loaded_hour_commits_a_min_up_block_around_it() {
        let mut load = vec![0.0; 7];
        load[3] = 50.0;
        let inst = inst(vec![gen(0, 10.0, 60.0, 3)], load);
        let (s, trace) = surgical_repair(&inst, &Schedule::all_off(&inst), &zero_margins(&inst)).unwrap();
        assert_eq!(s.row(0), &[false, false, true, true, true, false, false]);
        assert_eq!(trace.edits.len(), 1);
        assert_eq!(trace.edits[0].reason, Reason::Capacity);
    }

    #[test]
    fn capacity_shortfall_of_the_instance_is_reported() {
        let inst = single_gen(&[50.0, 500.0]);
        let err = surgical_repair(&inst, &Schedule::all_off(&inst), &RepairConfig::for_instance(&inst)).unwrap_err();
        assert!(matches!(err, RepairError::CapacityExhausted { hour: 1, .. }));
    }

    #[test]
    fn costlier_of_two_identical_units_goes_off() {
        let mut a = gen(0, 10.0, 100.0, 1);
        let mut b = gen(1, 10.0, 100.0, 1);
        a.c_noload = 5.0;
        b.c_noload = 5.0;
        let inst = inst(vec![a, b], vec![100.0; 3]);
        let (s, trace) = economic_repair(&inst, &Schedule::all_on(&inst), &zero_margins(&inst)).unwrap();
        // Equal keys: the higher id counts as more expensive.
        assert_eq!(s.row(0), &[true; 3]);
        assert_eq!(s.row(1), &[false; 3]);
        assert!(trace.edits.iter().all(|e| e.reason == Reason::Economic));
    }

    #[test]
    fn no_decommitment_without_spare_capacity() {
        let inst = inst(vec![gen(0, 10.0, 50.0, 1), gen(1, 20.0, 50.0, 1)], vec![100.0; 3]);
        let (s, trace) = economic_repair(&inst, &Schedule::all_on(&inst), &zero_margins(&inst)).unwrap();
        assert_eq!(s, Schedule::all_on(&inst));
        assert!(trace.is_empty());
    }

    #[test]
    fn idle_head_is_trimmed() {
        // Unit 1 only matters from hour 4 onwards; before that it idles at
        // p_min, displacing the cheaper unit.
        let mut g1 = gen(1, 30.0, 100.0, 1);
        g1.c_noload = 50.0;
        let inst = inst(vec![gen(0, 10.0, 100.0, 1), g1], vec![60.0, 60.0, 60.0, 60.0, 150.0, 150.0]);
        let s = Schedule::all_on(&inst);
        let d = DispatchSolver::new(&inst).solve(&s).unwrap();
        assert!(utilization(&inst, &d, 1, 0, 3) < 1e-9);
        let (out, trace) = head_tail_trim(&inst, &s, &d, &zero_margins(&inst)).unwrap();
        assert_eq!(out.row(1), &[false, false, false, false, true, true]);
        let count = |r| trace.edits.iter().filter(|e| e.reason == r).count();
        // Rejected trims are undone by revert edits.
        assert_eq!(count(Reason::Trim) - count(Reason::Revert), 1);
        assert_eq!(trace.replay(&s), out);
    }

    #[test]
    fn fully_used_unit_is_not_trimmed() {
        let inst = inst(vec![gen(0, 10.0, 100.0, 1)], vec![100.0; 6]);
        let s = Schedule::all_on(&inst);
        let d = DispatchSolver::new(&inst).solve(&s).unwrap();
        let (out, trace) = head_tail_trim(&inst, &s, &d, &RepairConfig::for_instance(&inst)).unwrap();
        assert_eq!(out, s);
        assert!(trace.is_empty());
    }

    #[test]
    fn empty_system_stays_off() {
        let inst = inst(vec![gen(0, 10.0, 100.0, 2)], vec![0.0; 4]);
        let r = repair_pipeline(&inst, &Schedule::all_off(&inst), &RepairConfig::for_instance(&inst)).unwrap();
        assert_eq!(r.schedule, Schedule::all_off(&inst));
        assert!(r.trace.is_empty());
        assert_eq!(r.cost(), 0.0);
    }

    #[test]
    fn base_system_repairs_from_all_off_and_replays() {
        let inst = base_system();
        let input = Schedule::all_off(&inst);
        let r = repair_pipeline(&inst, &input, &RepairConfig::for_instance(&inst)).unwrap();
        assert!(validate_schedule(&inst, &r.schedule).unwrap().is_empty());
        assert_eq!(r.trace.replay(&input), r.schedule);
        let again = repair_pipeline(&inst, &r.schedule, &RepairConfig::for_instance(&inst)).unwrap();
        assert_eq!(again.schedule, r.schedule);
    }

    #[test]
    fn trace_exports_one_json_object_per_line() {
        let inst = base_system();
        let r = repair_pipeline(&inst, &Schedule::all_off(&inst), &RepairConfig::for_instance(&inst)).unwrap();
        let mut buf = Vec::new();
        r.trace.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), r.trace.len());
        let first: Edit = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first, r.trace.edits[0]);
    }
}
