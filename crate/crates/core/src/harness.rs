//! Ablation runner for the six pipeline variants, metrics and CSV export.
//!
//! Every variant is compared with a cold branch-and-bound solve of the same
//! instance at the same gap. Times are either wall-clock seconds or, with
//! [`Clock::Work`], simplex iterations scaled by [`WORK_UNIT_SECONDS`];
//! the latter makes whole result files reproducible byte for byte.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dispatch::economic_dispatch;
use crate::instance::UcInstance;
use crate::milp::{build_uc_milp, solve_bnb, SolveOptions};
use crate::predictor::ProbabilityTensor;
use crate::repair::{repair_pipeline, RepairConfig};
use crate::warmstart::{warm_start_solve, WarmStartOptions};

/// Nominal seconds per simplex iteration under [`Clock::Work`].
pub const WORK_UNIT_SECONDS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::M1, Variant::M2, Variant::M3, Variant::M4, Variant::M5, Variant::M6];

    pub fn spec(self) -> VariantSpec {
        let (p, w, t) = match self {
            Variant::M1 => (false, false, false),
            Variant::M2 => (true, false, false),
            Variant::M3 => (false, true, false),
            Variant::M4 => (false, true, true),
            Variant::M5 => (true, true, false),
            Variant::M6 => (true, true, true),
        };
        VariantSpec {
            label: self,
            post_processing: p,
            warm_start: w,
            threshold_fixation: t,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Variant {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| HarnessError::UnknownVariant(s.to_string()))
    }
}

/// Parses `M1..M6`, `M2,M5` or a mix such as `M1,M3..M4`.
pub fn parse_variants(text: &str) -> Result<Vec<Variant>, HarnessError> {
    let mut out = Vec::new();
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b): (Variant, Variant) = (a.parse()?, b.parse()?);
            out.extend(Variant::ALL.into_iter().filter(|v| (a..=b).contains(v)));
        } else {
            out.push(part.parse()?);
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

/// Which pipeline stages a variant switches on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub label: Variant,
    pub post_processing: bool,
    pub warm_start: bool,
    pub threshold_fixation: bool,
}

impl VariantSpec {
    /// Stage flags for a combination, if it is one of the six variants.
    pub fn from_flags(post_processing: bool, warm_start: bool, threshold_fixation: bool) -> Option<Self> {
        Variant::ALL
            .into_iter()
            .map(Variant::spec)
            .find(|s| (s.post_processing, s.warm_start, s.threshold_fixation) == (post_processing, warm_start, threshold_fixation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Clock {
    #[default]
    Wall,
    /// Deterministic: simplex iterations times [`WORK_UNIT_SECONDS`].
    Work,
}

impl FromStr for Clock {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "wall" => Ok(Clock::Wall),
            "work" => Ok(Clock::Work),
            _ => Err(HarnessError::UnknownClock(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessOptions {
    /// Probability threshold turning predictions into a schedule.
    pub threshold: f64,
    /// Gap, fixation thresholds and limits for every MILP solve.
    pub solve: WarmStartOptions,
    pub clock: Clock,
    /// Run instances one at a time (for timing without contention).
    pub serial: bool,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        HarnessOptions {
            threshold: 0.5,
            solve: WarmStartOptions::default(),
            clock: Clock::Wall,
            serial: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("unknown variant {0:?} (expected M1..M6)")]
    UnknownVariant(String),
    #[error("unknown clock {0:?} (expected wall or work)")]
    UnknownClock(String),
    #[error("no baseline record for instance {0}")]
    MissingBaseline(String),
    #[error("no prediction for instance {0}")]
    MissingPrediction(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A model output together with the time it took to produce.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: ProbabilityTensor,
    /// Wall seconds spent predicting; charged to every variant under the
    /// wall clock.
    pub time_s: f64,
}

/// Cold solve of one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub instance_id: String,
    pub feasible: bool,
    pub cost: f64,
    pub time_s: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub instance_id: String,
    pub variant: Variant,
    pub feasible: bool,
    /// Total cost; `inf` when infeasible.
    pub cost: f64,
    pub time_s: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub fixation_relaxed: bool,
    /// First stage error, when one ended the run.
    pub error: Option<String>,
}

struct Stopwatch {
    clock: Clock,
    start: Instant,
    extra: f64,
}

impl Stopwatch {
    fn start(clock: Clock, extra_wall: f64) -> Self {
        Stopwatch {
            clock,
            start: Instant::now(),
            extra: extra_wall,
        }
    }

    fn seconds(&self, work: usize) -> f64 {
        match self.clock {
            Clock::Wall => self.extra + self.start.elapsed().as_secs_f64(),
            Clock::Work => work as f64 * WORK_UNIT_SECONDS,
        }
    }
}

pub fn run_baseline(instance: &UcInstance, options: &HarnessOptions) -> BaselineResult {
    let watch = Stopwatch::start(options.clock, 0.0);
    let r = solve_bnb(
        &build_uc_milp(instance),
        &SolveOptions {
            gap: options.solve.gap,
            node_limit: options.solve.node_limit,
            iteration_limit: options.solve.iteration_limit,
            ..Default::default()
        },
    );
    BaselineResult {
        instance_id: instance.id.clone(),
        feasible: r.has_incumbent(),
        cost: r.objective,
        time_s: watch.seconds(r.lp_iterations),
        nodes: r.nodes,
        lp_iterations: r.lp_iterations,
    }
}

/// Runs one variant from the prediction onwards. Stage failures become an
/// infeasible record rather than an error.
pub fn run_variant(instance: &UcInstance, prediction: &Prediction, spec: VariantSpec, options: &HarnessOptions) -> VariantResult {
    let watch = Stopwatch::start(options.clock, prediction.time_s);
    let mut out = VariantResult {
        instance_id: instance.id.clone(),
        variant: spec.label,
        feasible: false,
        cost: f64::INFINITY,
        time_s: 0.0,
        nodes: 0,
        lp_iterations: 0,
        fixation_relaxed: false,
        error: None,
    };
    let schedule = prediction.probs.threshold(options.threshold);

    // Stage 2: either the repaired schedule or the raw prediction when it
    // happens to dispatch.
    let incumbent = if spec.post_processing {
        match repair_pipeline(instance, &schedule, &RepairConfig::for_instance(instance)) {
            Ok(r) => {
                out.lp_iterations += r.lp_iterations;
                Some((r.schedule, r.dispatch))
            }
            Err(e) => {
                out.error = Some(e.to_string());
                None
            }
        }
    } else {
        match economic_dispatch(instance, &schedule) {
            Ok(d) => {
                out.lp_iterations += d.iterations.max(1);
                Some((schedule, d))
            }
            Err(e) => {
                out.lp_iterations += 1;
                out.error = Some(e.to_string());
                None
            }
        }
    };

    if !spec.warm_start {
        if let Some((_, d)) = &incumbent {
            out.feasible = true;
            out.cost = d.total_cost();
        }
    } else if spec.post_processing && incumbent.is_none() {
        // Repair failed: the pipeline has nothing to hand on.
    } else {
        out.error = None;
        let solve = WarmStartOptions {
            use_fixation: spec.threshold_fixation,
            use_warm: true,
            ..options.solve.clone()
        };
        let probs = spec.threshold_fixation.then_some(&prediction.probs);
        match warm_start_solve(instance, incumbent.map(|(s, d)| (s, d.dispatch)), probs, &solve) {
            Ok(r) => {
                out.nodes = r.nodes;
                out.lp_iterations += r.lp_iterations;
                out.fixation_relaxed = r.fixation_relaxed;
                if r.has_incumbent() {
                    out.feasible = true;
                    out.cost = r.objective;
                } else {
                    out.error = Some(format!("solver finished {:?} without a solution", r.status));
                }
            }
            Err(e) => out.error = Some(e.to_string()),
        }
    }
    out.time_s = watch.seconds(out.lp_iterations);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub baselines: Vec<BaselineResult>,
    /// Instance-major, variant-minor, in input order.
    pub results: Vec<VariantResult>,
}

/// Baseline plus every requested variant for each instance. Instances run
/// on the rayon pool unless `options.serial`; output order never depends
/// on scheduling.
pub fn evaluate(
    instances: &[UcInstance],
    predictions: &[Prediction],
    variants: &[Variant],
    options: &HarnessOptions,
) -> Result<Evaluation, HarnessError> {
    let mut paired = Vec::with_capacity(instances.len());
    for inst in instances {
        let p = predictions
            .iter()
            .find(|p| p.probs.instance_id == inst.id)
            .ok_or_else(|| HarnessError::MissingPrediction(inst.id.clone()))?;
        paired.push((inst, p));
    }
    let cell = |(inst, pred): &(&UcInstance, &Prediction)| {
        let base = run_baseline(inst, options);
        let runs: Vec<VariantResult> = variants.iter().map(|v| run_variant(inst, pred, v.spec(), options)).collect();
        (base, runs)
    };
    let cells: Vec<(BaselineResult, Vec<VariantResult>)> = if options.serial {
        paired.iter().map(cell).collect()
    } else {
        paired.par_iter().map(cell).collect()
    };
    let mut eval = Evaluation {
        baselines: Vec::with_capacity(cells.len()),
        results: Vec::with_capacity(cells.len() * variants.len()),
    };
    for (b, runs) in cells {
        eval.baselines.push(b);
        eval.results.extend(runs);
    }
    Ok(eval)
}

/// One results-file row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub instance_id: String,
    pub variant: Variant,
    pub feasible: bool,
    pub cost: Option<f64>,
    pub baseline_cost: Option<f64>,
    pub or_: Option<f64>,
    pub time_s: f64,
    pub baseline_time_s: f64,
    pub tr_pct: f64,
    pub nodes: usize,
    pub baseline_nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub variant: Variant,
    pub instances: usize,
    pub feasibility_pct: f64,
    /// 25th, 50th and 75th percentile of O.R. over feasible instances.
    pub or_quartiles: Option<[f64; 3]>,
    pub tr_median_pct: Option<f64>,
    /// Total variant time over total baseline time, in percent.
    pub tr_aggregate_pct: f64,
    pub median_nodes: Option<f64>,
    pub records: Vec<Record>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    quantile(&sorted(values.into_iter().collect()), 0.5)
}

fn record(r: &VariantResult, b: &BaselineResult) -> Record {
    let base_ok = b.feasible && b.cost.is_finite();
    let or_ = (r.feasible && base_ok && b.cost.abs() > 0.0).then(|| r.cost / b.cost);
    Record {
        instance_id: r.instance_id.clone(),
        variant: r.variant,
        feasible: r.feasible,
        cost: r.feasible.then_some(r.cost),
        baseline_cost: base_ok.then_some(b.cost),
        or_,
        time_s: r.time_s,
        baseline_time_s: b.time_s,
        tr_pct: if b.time_s > 0.0 { 100.0 * r.time_s / b.time_s } else { f64::NAN },
        nodes: r.nodes,
        baseline_nodes: b.nodes,
    }
}

/// Per-variant metrics, variants in ascending order.
pub fn compute_metrics(results: &[VariantResult], baselines: &[BaselineResult]) -> Result<Vec<Metrics>, HarnessError> {
    let mut variants: Vec<Variant> = results.iter().map(|r| r.variant).collect();
    variants.sort();
    variants.dedup();
    let mut out = Vec::with_capacity(variants.len());
    for v in variants {
        let mut records = Vec::new();
        let mut total = (0.0, 0.0);
        for r in results.iter().filter(|r| r.variant == v) {
            let b = baselines
                .iter()
                .find(|b| b.instance_id == r.instance_id)
                .ok_or_else(|| HarnessError::MissingBaseline(r.instance_id.clone()))?;
            total.0 += r.time_s;
            total.1 += b.time_s;
            records.push(record(r, b));
        }
        let n = records.len();
        let feasible = records.iter().filter(|r| r.feasible).count();
        let ors = sorted(records.iter().filter_map(|r| r.or_).collect());
        let or_quartiles = (!ors.is_empty()).then(|| [0.25, 0.5, 0.75].map(|q| quantile(&ors, q).expect("non-empty")));
        let tr = records.iter().filter(|r| r.feasible).map(|r| r.tr_pct);
        let nodes = records.iter().filter(|r| r.feasible).map(|r| r.nodes as f64);
        out.push(Metrics {
            variant: v,
            instances: n,
            feasibility_pct: if n == 0 { 0.0 } else { 100.0 * feasible as f64 / n as f64 },
            or_quartiles,
            tr_median_pct: median(tr),
            tr_aggregate_pct: if total.1 > 0.0 { 100.0 * total.0 / total.1 } else { f64::NAN },
            median_nodes: median(nodes),
            records,
        });
    }
    Ok(out)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(String::new, |x| format!("{x:.digits$}"))
}

/// Results CSV, one row per (instance, variant) in evaluation order.
pub fn write_results_csv<W: Write>(eval: &Evaluation, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "instance_id",
        "variant",
        "feasible",
        "cost",
        "baseline_cost",
        "or_",
        "time_s",
        "baseline_time_s",
        "tr_pct",
        "nodes",
        "baseline_nodes",
    ])?;
    for r in &eval.results {
        let b = eval
            .baselines
            .iter()
            .find(|b| b.instance_id == r.instance_id)
            .ok_or_else(|| HarnessError::MissingBaseline(r.instance_id.clone()))?;
        let rec = record(r, b);
        w.write_record([
            rec.instance_id,
            rec.variant.to_string(),
            rec.feasible.to_string(),
            opt(rec.cost, 6),
            opt(rec.baseline_cost, 6),
            opt(rec.or_, 9),
            format!("{:.6}", rec.time_s),
            format!("{:.6}", rec.baseline_time_s),
            format!("{:.4}", rec.tr_pct),
            rec.nodes.to_string(),
            rec.baseline_nodes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Empirical O.R. distribution per variant: `variant, or_, cdf` with the
/// cumulative share at each sorted value. Values below one are kept.
pub fn write_or_cdf<W: Write>(metrics: &[Metrics], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["variant", "or_", "cdf"])?;
    for m in metrics {
        let ors = sorted(m.records.iter().filter_map(|r| r.or_).collect());
        let n = ors.len() as f64;
        for (k, x) in ors.iter().enumerate() {
            w.write_record([m.variant.to_string(), format!("{x:.9}"), format!("{:.6}", (k + 1) as f64 / n)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Human-readable summary table.
pub fn summary_table(metrics: &[Metrics]) -> String {
    let mut s = format!(
        "{:<4} {:>6} {:>8} {:>10} {:>10} {:>10} {:>10} {:>8}\n",
        "var", "n", "feas%", "OR25", "OR50", "OR75", "TR50%", "nodes50"
    );
    for m in metrics {
        let q = m.or_quartiles.map_or(["-".to_string(), "-".to_string(), "-".to_string()], |q| q.map(|x| format!("{x:.5}")));
        s += &format!(
            "{:<4} {:>6} {:>8.1} {:>10} {:>10} {:>10} {:>10} {:>8}\n",
            m.variant.to_string(),
            m.instances,
            m.feasibility_pct,
            q[0],
            q[1],
            q[2],
            m.tr_median_pct.map_or("-".into(), |x| format!("{x:.2}")),
            m.median_nodes.map_or("-".into(), |x| format!("{x:.0}")),
        );
    }
    s
}
