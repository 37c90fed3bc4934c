//! Subcommand definitions and handlers.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use dp_mtv::audit::{
    audit_mean_sensitivity, audit_mechanism_distributions, audit_score_sensitivity, AuditReport,
    SensitivityAuditConfig,
};
use dp_mtv::example::Example;
use dp_mtv::inference::{evaluate, zero_shot_accuracy};
use dp_mtv::model::ModelInterface;
use dp_mtv::privacy::NeighbourRelation;
use dp_mtv::seed::RandomSeed;
use dp_mtv::toy_model::{generate_dataset, SteerableToyModel, SyntheticTask, ToyModelConfig};

use crate::artifact::{read_artifact, write_artifact, write_atomic};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::pipeline::datasets;
use crate::sweep::{run_sweep, write_csv, Ablation, DEFAULT_EPS};

#[derive(Debug, Parser)]
#[command(name = "dp-mtv", version, about = "Differentially private multimodal task vectors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a private task vector and write it as an artifact file.
    Construct(ConstructArgs),
    /// Evaluate an artifact on a query set.
    Infer(InferArgs),
    /// Accuracy over a grid of privacy budgets and seeds, as CSV.
    Sweep(SweepArgs),
    /// Empirically check the privacy-relevant bounds.
    Audit(AuditArgs),
    /// Write a synthetic dataset as CSV.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_assignment(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct ConstructArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    /// Configuration describing the model; defaults match `construct`.
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Query CSV as written by `gen-data`; defaults to the configured
    /// synthetic evaluation set.
    #[arg(long)]
    pub eval: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated privacy budgets for the task-vector mechanism.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_EPS.to_vec())]
    pub eps: Vec<f64>,
    /// Number of consecutive seeds starting at the configured seed.
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    /// Vary one hyperparameter, e.g. `m=50,100,500`.
    #[arg(long)]
    pub ablate: Option<Ablation>,
    /// Output file; standard output if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AuditKind {
    Sensitivity,
    Score,
    Mechanisms,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Neighbours {
    ZeroOut,
    ReplaceOne,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long, value_enum, default_value_t = AuditKind::Sensitivity)]
    pub kind: AuditKind,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    /// Multiplies the mean-sensitivity bound; values below 1 self-test the harness.
    #[arg(long, default_value_t = 1.0)]
    pub bound_scale: f64,
    #[arg(long, value_enum, default_value_t = Neighbours::ZeroOut)]
    pub neighbours: Neighbours,
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub clip_c: f64,
    #[arg(long, default_value_t = 1.0)]
    pub clip_sel: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "flip")]
    pub task: SyntheticTask,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub feature_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub id_offset: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Construct(a) => construct(a, out),
        Command::Infer(a) => infer(a, out),
        Command::Sweep(a) => sweep(a, out),
        Command::Audit(a) => audit(a, out),
        Command::GenData(a) => gen_data(a, out),
    }
}

fn construct(args: ConstructArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = args.config.resolve()?;
    let model = cfg.build_model()?;
    let data = datasets(&cfg)?;
    let result = crate::pipeline::construct(&cfg, &model, &data)?;
    write_artifact(&args.out, &result.artifact, model.dims().num_layers)?;
    let receipt = result.artifact.receipt();
    writeln!(out, "variant = {}", cfg.variant)?;
    writeln!(out, "sensitivity = {}", result.sensitivity)?;
    writeln!(out, "sigma = {}", result.sigma)?;
    writeln!(out, "mask = {:?}", result.artifact.mask().sites())?;
    for e in receipt.entries() {
        writeln!(out, "charge {} eps = {} delta = {}", e.mechanism, e.eps, e.delta)?;
    }
    writeln!(out, "total_eps = {}", receipt.total_eps())?;
    writeln!(out, "total_delta = {}", receipt.total_delta())?;
    writeln!(out, "wrote {}", args.out.display())?;
    Ok(())
}

fn infer(args: InferArgs, out: &mut dyn Write) -> CliResult<()> {
    let loaded = read_artifact(&args.artifact)?;
    let cfg = args.config.resolve()?;
    let model = cfg.build_model()?;
    if loaded.num_layers != model.dims().num_layers {
        return Err(CliError::artifact(
            "num_layers",
            format!("artifact has {}, model has {}", loaded.num_layers, model.dims().num_layers),
        ));
    }
    let queries = match &args.eval {
        Some(path) => read_examples(path, model.input_dim())?,
        None => datasets(&cfg)?.eval,
    };
    let accuracy = evaluate(&loaded.artifact, &model, &queries)?;
    writeln!(out, "queries = {}", queries.len())?;
    writeln!(out, "accuracy = {accuracy}")?;
    writeln!(out, "zero_shot_accuracy = {}", zero_shot_accuracy(&model, &queries)?)?;
    writeln!(out, "total_eps = {}", loaded.artifact.receipt().total_eps())?;
    writeln!(out, "total_delta = {}", loaded.artifact.receipt().total_delta())?;
    Ok(())
}

fn sweep(args: SweepArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = args.config.resolve()?;
    let rows = run_sweep(&cfg, &args.eps, args.seeds, args.ablate.as_ref())?;
    let axis = args.ablate.as_ref().map(|a| a.axis);
    match &args.out {
        Some(path) => {
            let mut buf = Vec::new();
            write_csv(&rows, axis, &mut buf)?;
            write_atomic(path, &buf)?;
            writeln!(out, "wrote {} rows to {}", rows.len(), path.display())?;
        }
        None => write_csv(&rows, axis, out)?,
    }
    Ok(())
}

fn audit(args: AuditArgs, out: &mut dyn Write) -> CliResult<()> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    if !(args.bound_scale > 0.0 && args.bound_scale.is_finite()) {
        return Err(CliError::Usage("--bound-scale must be finite and > 0".into()));
    }
    let model = SteerableToyModel::new(ToyModelConfig::default())?;
    let seed = RandomSeed::new(args.seed, "audit");
    let mut reports: Vec<AuditReport> = Vec::new();
    if matches!(args.kind, AuditKind::Sensitivity | AuditKind::All) {
        let cfg = SensitivityAuditConfig {
            m: args.m,
            k: args.k,
            clip_c: args.clip_c,
            bound_scale: args.bound_scale,
            relation: match args.neighbours {
                Neighbours::ZeroOut => NeighbourRelation::ZeroOut,
                Neighbours::ReplaceOne => NeighbourRelation::ReplaceOne,
            },
            ..Default::default()
        };
        reports.push(audit_mean_sensitivity(&cfg, &model, args.trials, &seed.child("sensitivity"))?);
    }
    if matches!(args.kind, AuditKind::Score | AuditKind::All) {
        reports.push(audit_score_sensitivity(&model, args.trials, args.clip_sel, &seed.child("score"))?);
    }
    if matches!(args.kind, AuditKind::Mechanisms | AuditKind::All) {
        reports.push(audit_mechanism_distributions(args.trials.max(10_000), &seed.child("mechanisms"))?);
    }
    let mut failed = Vec::new();
    for r in &reports {
        writeln!(out, "{r}")?;
        if !r.passed() {
            failed.push(format!("{} ({} violations)", r.name, r.violations));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::AuditViolation(failed.join(", ")))
    }
}

fn gen_data(args: GenDataArgs, out: &mut dyn Write) -> CliResult<()> {
    let data = generate_dataset(
        args.task,
        args.n,
        args.feature_dim,
        args.id_offset,
        &RandomSeed::new(args.seed, "gen-data"),
    )?;
    let mut buf = Vec::new();
    write_examples(&data, args.feature_dim, &mut buf)?;
    write_atomic(&args.out, &buf)?;
    writeln!(out, "wrote {} {} examples to {}", data.len(), args.task.name(), args.out.display())?;
    Ok(())
}

pub fn write_examples(data: &[Example], feature_dim: usize, out: impl Write) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend((0..feature_dim).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for e in data {
        let mut rec = vec![e.id.to_string(), e.label.to_string()];
        rec.extend(e.features.iter().map(|x| format!("{x:.16e}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_examples(path: &Path, feature_dim: usize) -> CliResult<Vec<Example>> {
    let bad = |line: usize, msg: String| CliError::Config(format!("{}: record {line}: {msg}", path.display()));
    let mut r = csv::Reader::from_path(path)?;
    let mut data = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != feature_dim + 2 {
            return Err(bad(i + 1, format!("{} fields, expected {}", rec.len(), feature_dim + 2)));
        }
        let id = rec[0].parse().map_err(|e| bad(i + 1, format!("id: {e}")))?;
        let label = rec[1].parse().map_err(|e| bad(i + 1, format!("label: {e}")))?;
        let features = rec
            .iter()
            .skip(2)
            .map(|v| v.parse::<f64>().map_err(|e| bad(i + 1, format!("feature {v:?}: {e}"))))
            .collect::<CliResult<Vec<_>>>()?;
        data.push(Example::new(id, features, label));
    }
    Ok(data)
}
