//! End-to-end runs: data generation, construction, selection, evaluation.

use dp_mtv::construction::{compute_private_mean, partition_disjoint, NoiseMode, PartitionPlan};
use dp_mtv::example::Example;
use dp_mtv::inference::{evaluate, zero_shot_accuracy, TaskVectorArtifact};
use dp_mtv::model::ModelInterface;
use dp_mtv::privacy::PrivacyReceipt;
use dp_mtv::seed::RandomSeed;
use dp_mtv::selection::{select_mask_public, select_private};
use dp_mtv::toy_model::{generate_dataset, SteerableToyModel};

use crate::config::{ExperimentConfig, Variant};
use crate::error::CliResult;

/// Id ranges keep the three datasets disjoint.
pub const PUBLIC_ID_OFFSET: u64 = 1 << 40;
pub const EVAL_ID_OFFSET: u64 = 2 << 40;

pub fn root_seed(seed: u64) -> RandomSeed {
    RandomSeed::new(seed, "dp-mtv")
}

#[derive(Debug, Clone)]
pub struct Datasets {
    pub private: Vec<Example>,
    pub public: Vec<Example>,
    pub eval: Vec<Example>,
}

pub fn datasets(cfg: &ExperimentConfig) -> CliResult<Datasets> {
    let root = root_seed(cfg.seed);
    let f = cfg.model.feature_dim;
    Ok(Datasets {
        private: generate_dataset(cfg.task, cfg.dataset_size(), f, 0, &root.child("private-data"))?,
        public: generate_dataset(cfg.task, cfg.public_size, f, PUBLIC_ID_OFFSET, &root.child("public-data"))?,
        eval: generate_dataset(cfg.task, cfg.eval_size, f, EVAL_ID_OFFSET, &root.child("eval-data"))?,
    })
}

/// Up to `b` validation records: the partition's unused remainder first, then
/// chunk targets if the remainder is short.
pub fn validation_set(plan: &PartitionPlan, b: usize) -> Vec<Example> {
    plan.unused
        .iter()
        .chain(plan.targets())
        .take(b)
        .cloned()
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub artifact: TaskVectorArtifact,
    pub sigma: f64,
    pub sensitivity: f64,
}

/// Partition, private mean, then mask selection for `cfg.variant`.
pub fn construct(
    cfg: &ExperimentConfig,
    model: &SteerableToyModel,
    data: &Datasets,
) -> CliResult<RunOutput> {
    cfg.validate()?;
    let root = root_seed(cfg.seed);
    let layers = cfg.layers();
    let params = cfg.privacy();
    let plan = partition_disjoint(&data.private, cfg.m, cfg.k, &root.child("partition"))?;
    let (pm, receipt) = compute_private_mean(
        &plan,
        model,
        &layers,
        &params,
        cfg.noise,
        &root.child("construction"),
        PrivacyReceipt::new(),
    )?;
    let sel_seed = root.child("selection");
    let (mask, receipt) = match cfg.variant {
        Variant::Oracle => (model.oracle_mask(&layers)?, receipt),
        Variant::Public => {
            let (sel, r) =
                select_mask_public(&data.public, model, &pm.tensor, &cfg.selection(), &sel_seed, receipt)?;
            (sel.mask, r)
        }
        Variant::Private => {
            let val = validation_set(&plan, cfg.val_size);
            let (sel, r) = select_private(
                &data.private,
                &val,
                model,
                &pm.tensor,
                &cfg.selection(),
                &params,
                &sel_seed,
                receipt,
            )?;
            (sel.mask, r)
        }
    };
    let artifact = TaskVectorArtifact::new(pm.tensor, mask, receipt, model.fingerprint(), cfg.variant.name())?;
    Ok(RunOutput {
        artifact,
        sigma: pm.sigma,
        sensitivity: pm.sensitivity,
    })
}

/// Accuracy of one configuration, plus its zero-shot and noise-disabled
/// counterparts on the same data and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub accuracy: f64,
    pub zero_shot_accuracy: f64,
    pub non_private_accuracy: f64,
    pub sigma: f64,
    pub total_eps: f64,
    pub total_delta: f64,
}

pub fn noise_disabled(cfg: &ExperimentConfig) -> ExperimentConfig {
    ExperimentConfig { noise: NoiseMode::Disabled, ..cfg.clone() }
}

pub fn run_once(cfg: &ExperimentConfig, model: &SteerableToyModel, data: &Datasets) -> CliResult<(RunOutput, f64)> {
    let out = construct(cfg, model, data)?;
    let acc = evaluate(&out.artifact, model, &data.eval)?;
    Ok((out, acc))
}

pub fn measure(cfg: &ExperimentConfig) -> CliResult<Measurement> {
    let model = cfg.build_model()?;
    let data = datasets(cfg)?;
    let (out, accuracy) = run_once(cfg, &model, &data)?;
    let (_, non_private_accuracy) = run_once(&noise_disabled(cfg), &model, &data)?;
    Ok(Measurement {
        accuracy,
        zero_shot_accuracy: zero_shot_accuracy(&model, &data.eval)?,
        non_private_accuracy,
        sigma: out.sigma,
        total_eps: out.artifact.receipt().total_eps(),
        total_delta: out.artifact.receipt().total_delta(),
    })
}
