use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use warmuc::datagen::{base_system, generate_dataset, load_dataset, save_dataset, Dataset, DatasetConfig};
use warmuc::harness::{
    compute_metrics, evaluate, parse_variants, summary_table, write_or_cdf, write_results_csv, Clock, HarnessOptions,
    Prediction,
};
use warmuc::milp::write_node_log;
use warmuc::predictor::{fit_predictor, Predictor, PredictorConfig, ProbabilityTensor};
use warmuc::repair::{repair_pipeline, RepairConfig};
use warmuc::warmstart::{warm_start_solve, WarmStartOptions};
use warmuc::{economic_dispatch, load_instance, Dispatch, Schedule, UcInstance};

#[derive(Parser)]
#[command(name = "warmuc", version, about = "Unit commitment: prediction, repair and warm-started branch-and-bound")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and label a perturbed dataset.
    Generate(GenerateArgs),
    /// Train the commitment predictor on a dataset.
    Train(TrainArgs),
    /// Write probability tensors for instances.
    Predict(PredictArgs),
    /// Repair a predicted schedule into a dispatchable one.
    Repair(RepairArgs),
    /// Solve one instance, optionally warm-started.
    Solve(SolveArgs),
    /// Run the variant ablation against cold solves.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SolverFlags {
    /// Relative MIP gap.
    #[arg(long, default_value_t = 0.0025)]
    gap: f64,
    /// Fix commitments whose probability is at least this.
    #[arg(long, default_value_t = 0.98)]
    tau_high: f64,
    /// Fix commitments off whose probability is at most this.
    #[arg(long, default_value_t = 0.02)]
    tau_low: f64,
    #[arg(long)]
    no_fixation: bool,
    #[arg(long)]
    no_warm: bool,
}

impl SolverFlags {
    fn options(&self) -> WarmStartOptions {
        WarmStartOptions {
            gap: self.gap,
            tau_high: self.tau_high,
            tau_low: self.tau_low,
            use_fixation: !self.no_fixation,
            use_warm: !self.no_warm,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    count: usize,
    #[arg(long, default_value_t = 0.0025)]
    gap: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Base instance files (default: the bundled 10-unit system).
    #[arg(long = "base")]
    bases: Vec<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-epoch log as CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Instance files.
    #[arg(long = "instance")]
    instances: Vec<PathBuf>,
    /// Dataset directory; predicts the chosen split.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Output directory for `<id>.json` probability files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RepairArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Probability tensor to threshold.
    #[arg(long, conflicts_with = "schedule")]
    probs: Option<PathBuf>,
    /// Schedule JSON to repair.
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long)]
    out: PathBuf,
    /// Edit trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Probability tensor used for fixation.
    #[arg(long)]
    probs: Option<PathBuf>,
    /// Output of `repair`, used as the incumbent.
    #[arg(long)]
    warm: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
    /// Write the branch-and-bound node log as CSV.
    #[arg(long)]
    node_log: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint; predictions are made and timed here.
    #[arg(long, required_unless_present = "probs")]
    model: Option<PathBuf>,
    /// Directory of precomputed probability files instead of a model.
    #[arg(long)]
    probs: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "M1..M6")]
    variants: String,
    #[command(flatten)]
    solver: SolverFlags,
    /// Decision threshold (default: the one stored with the model).
    #[arg(long)]
    tau: Option<f64>,
    /// Evaluate only the first N instances of the split.
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// O.R. distribution per variant.
    #[arg(long)]
    cdf: Option<PathBuf>,
    #[arg(long)]
    serial: bool,
    /// `wall` seconds or deterministic `work` units.
    #[arg(long, default_value = "wall")]
    clock: String,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn split_ids<'a>(ds: &'a Dataset, split: &str) -> Result<Vec<&'a String>> {
    let s = &ds.splits;
    Ok(match split {
        "train" => s.train.iter().collect(),
        "validation" => s.validation.iter().collect(),
        "test" => s.test.iter().collect(),
        "all" => s.train.iter().chain(&s.validation).chain(&s.test).collect(),
        other => bail!("unknown split {other:?}"),
    })
}

fn split_instances(ds: &Dataset, split: &str) -> Result<Vec<UcInstance>> {
    let ids: Vec<String> = split_ids(ds, split)?.into_iter().cloned().collect();
    Ok(ds.indices(&ids).into_iter().map(|k| ds.instances[k].clone()).collect())
}

/// What `repair` writes and `solve --warm` reads.
#[derive(Serialize, serde::Deserialize)]
struct RepairOutput {
    instance_id: String,
    schedule: Schedule,
    dispatch: Dispatch,
    cost: f64,
    passes: usize,
}

#[derive(Serialize)]
struct SolveOutput {
    instance_id: String,
    status: String,
    objective: f64,
    bound: f64,
    gap: f64,
    nodes: usize,
    lp_iterations: usize,
    wall_time: f64,
    warm_start: String,
    fixation_relaxed: bool,
    schedule: Option<Schedule>,
}

fn generate(a: GenerateArgs) -> Result<()> {
    let bases = if a.bases.is_empty() {
        vec![base_system()]
    } else {
        a.bases.iter().map(load_instance).collect::<Result<Vec<_>, _>>()?
    };
    let config = DatasetConfig {
        count: a.count,
        gap: a.gap,
        seed: a.seed,
        ..Default::default()
    };
    let t = Instant::now();
    let ds = generate_dataset(&bases, &config)?;
    save_dataset(&ds, &config, &a.out)?;
    println!(
        "{} instances labelled in {:.1}s ({} perturbations discarded) -> {}",
        ds.len(),
        t.elapsed().as_secs_f64(),
        ds.discarded,
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let first = ds.instances.first().context("dataset is empty")?;
    let config = PredictorConfig {
        epochs: a.epochs,
        lr: a.lr,
        d_model: a.d_model,
        layers: a.layers,
        heads: a.heads,
        batch_size: a.batch_size,
        seed: a.seed,
        ..PredictorConfig::toy(first.num_generators(), first.horizon())
    };
    let t = Instant::now();
    let (model, log) = fit_predictor(&ds, &config)?;
    model.save(&a.out)?;
    if let Some(path) = &a.log {
        let mut w = String::from("epoch,train_loss,val_loss,val_accuracy\n");
        for e in &log {
            w += &format!("{},{:.8},{:.8},{:.6}\n", e.epoch, e.train_loss, e.val_loss, e.val_accuracy);
        }
        fs::write(path, w)?;
    }
    if let Some(e) = log.last() {
        println!(
            "trained {} parameters in {:.1}s: val loss {:.5}, val accuracy {:.4}, threshold {}",
            model.params.num_params(),
            t.elapsed().as_secs_f64(),
            e.val_loss,
            e.val_accuracy,
            model.config.threshold
        );
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = Predictor::load(&a.model)?;
    let mut instances: Vec<UcInstance> = a.instances.iter().map(load_instance).collect::<Result<_, _>>()?;
    if let Some(dir) = &a.data {
        instances.extend(split_instances(&load_dataset(dir)?, &a.split)?);
    }
    fs::create_dir_all(&a.out)?;
    for inst in &instances {
        let probs = model.probabilities(&inst.id, &inst.profiles)?;
        fs::write(a.out.join(format!("{}.json", inst.id)), probs.to_json())?;
    }
    println!("wrote {} probability files to {}", instances.len(), a.out.display());
    Ok(())
}

fn repair(a: RepairArgs) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let schedule: Schedule = match (&a.probs, &a.schedule) {
        (Some(p), _) => ProbabilityTensor::from_json(&fs::read_to_string(p)?)?.threshold(a.tau),
        (None, Some(s)) => read_json(s)?,
        (None, None) => bail!("give --probs or --schedule"),
    };
    let r = repair_pipeline(&inst, &schedule, &RepairConfig::for_instance(&inst))?;
    if let Some(path) = &a.trace {
        r.trace.write_jsonl(BufWriter::new(File::create(path)?))?;
    }
    println!("{}: {} edits, cost {:.2}", inst.id, r.trace.len(), r.cost());
    write_json(
        &a.out,
        &RepairOutput {
            instance_id: inst.id.clone(),
            cost: r.cost(),
            schedule: r.schedule,
            dispatch: r.dispatch.dispatch,
            passes: r.passes,
        },
    )
}

fn solve(a: SolveArgs) -> Result<()> {
    let inst = load_instance(&a.instance)?;
    let probs = a
        .probs
        .as_ref()
        .map(|p| fs::read_to_string(p).map_err(anyhow::Error::from).and_then(|t| Ok(ProbabilityTensor::from_json(&t)?)))
        .transpose()?;
    let warm = match &a.warm {
        Some(path) => {
            let w: RepairOutput = read_json(path)?;
            // Re-derive the dispatch so a stale file cannot seed a bad point.
            let d = economic_dispatch(&inst, &w.schedule).context("warm schedule does not dispatch")?;
            Some((w.schedule, d.dispatch))
        }
        None => None,
    };
    let mut options = a.solver.options();
    options.log_nodes = a.node_log.is_some();
    let r = warm_start_solve(&inst, warm, probs.as_ref(), &options)?;
    if let Some(path) = &a.node_log {
        write_node_log(&r.node_log, BufWriter::new(File::create(path)?))?;
    }
    println!(
        "{}: {:?} objective {:.4} bound {:.4} nodes {} in {:.3}s",
        inst.id, r.status, r.objective, r.bound, r.nodes, r.wall_time
    );
    if let Some(path) = &a.out {
        write_json(
            path,
            &SolveOutput {
                instance_id: inst.id.clone(),
                status: format!("{:?}", r.status),
                objective: r.objective,
                bound: r.bound,
                gap: r.gap,
                nodes: r.nodes,
                lp_iterations: r.lp_iterations,
                wall_time: r.wall_time,
                warm_start: format!("{:?}", r.warm_start),
                fixation_relaxed: r.fixation_relaxed,
                schedule: r.schedule,
            },
        )?;
    }
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let ds = load_dataset(&a.data)?;
    let mut instances = split_instances(&ds, &a.split)?;
    if let Some(n) = a.limit {
        instances.truncate(n);
    }
    let variants = parse_variants(&a.variants)?;
    let clock: Clock = a.clock.parse()?;
    let mut threshold = 0.5;
    let predictions: Vec<Prediction> = if let Some(path) = &a.model {
        let model = Predictor::load(path)?;
        threshold = model.config.threshold;
        instances
            .iter()
            .map(|inst| {
                let t = Instant::now();
                let probs = model.probabilities(&inst.id, &inst.profiles)?;
                Ok(Prediction {
                    probs,
                    time_s: t.elapsed().as_secs_f64(),
                })
            })
            .collect::<Result<_>>()?
    } else {
        let dir = a.probs.as_ref().expect("clap requires model or probs");
        instances
            .iter()
            .map(|inst| {
                let text = fs::read_to_string(dir.join(format!("{}.json", inst.id)))?;
                Ok(Prediction {
                    probs: ProbabilityTensor::from_json(&text)?,
                    time_s: 0.0,
                })
            })
            .collect::<Result<_>>()?
    };
    let options = HarnessOptions {
        threshold: a.tau.unwrap_or(threshold),
        solve: a.solver.options(),
        clock,
        serial: a.serial,
    };
    info!("evaluating {} instances x {} variants", instances.len(), variants.len());
    let eval = evaluate(&instances, &predictions, &variants, &options)?;
    write_results_csv(&eval, BufWriter::new(File::create(&a.out)?))?;
    let metrics = compute_metrics(&eval.results, &eval.baselines)?;
    if let Some(path) = &a.cdf {
        write_or_cdf(&metrics, BufWriter::new(File::create(path)?))?;
    }
    print!("{}", summary_table(&metrics));
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Generate(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Repair(a) => repair(a),
        Command::Solve(a) => solve(a),
        Command::Evaluate(a) => run_evaluate(a),
    }
}
