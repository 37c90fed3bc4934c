//! Private mean activations: partition, extract, clip, average, noise.

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dp_mech::{add_gaussian_noise, calibrate_analytic_gaussian};
use crate::error::{invalid, Error, Result};
use crate::example::{ensure_unique_ids, Chunk, Example};
use crate::model::ModelInterface;
use crate::privacy::{PrivacyParams, PrivacyReceipt};
use crate::seed::RandomSeed;
use crate::tensor::{clip_per_layer, mean_tensors, ActivationTensor};

/// Receipt label of the Gaussian release of the mean.
pub const GAUSSIAN_MECHANISM: &str = "gaussian_mean";
/// Receipt label charged when noise is disabled; its `ε` is infinite.
pub const NOISE_DISABLED: &str = "gaussian_mean_noise_disabled";

/// Disjoint assignment of examples to chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    pub chunks: Vec<Chunk>,
    pub k: usize,
    /// Examples left over after placing `m·(K+1)`; never part of a chunk.
    pub unused: Vec<Example>,
}

impl PartitionPlan {
    pub fn m(&self) -> usize {
        self.chunks.len()
    }

    pub fn unused_ids(&self) -> Vec<u64> {
        self.unused.iter().map(|e| e.id).collect()
    }

    pub fn targets(&self) -> impl Iterator<Item = &Example> {
        self.chunks.iter().map(|c| c.target())
    }
}

/// Shuffles `dataset` with `seed` and deals the first `m·(k+1)` examples into
/// `m` chunks of one target followed by `k` demonstrations.
pub fn partition_disjoint(
    dataset: &[Example],
    m: usize,
    k: usize,
    seed: &RandomSeed,
) -> Result<PartitionPlan> {
    if m == 0 {
        return Err(invalid("m", "must be at least 1"));
    }
    ensure_unique_ids(dataset)?;
    let required = m * (k + 1);
    if dataset.len() < required {
        return Err(Error::DatasetTooSmall {
            required,
            available: dataset.len(),
        });
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seed.rng());

    let chunks = order[..required]
        .chunks(k + 1)
        .map(|slots| {
            let target = dataset[slots[0]].clone();
            let demos = slots[1..].iter().map(|&i| dataset[i].clone()).collect();
            Chunk::new(target, demos)
        })
        .collect::<Result<Vec<_>>>()?;
    let unused = order[required..].iter().map(|&i| dataset[i].clone()).collect();
    Ok(PartitionPlan { chunks, k, unused })
}

/// L2 sensitivity `√|S|·C/m` of the mean of per-layer-clipped tensors.
pub fn sensitivity(num_layers: usize, c: f64, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(invalid("m", "must be at least 1"));
    }
    if num_layers == 0 {
        return Err(invalid("num_layers", "must be at least 1"));
    }
    if !(c > 0.0) {
        return Err(invalid("c", format!("must be > 0, got {c}")));
    }
    Ok((num_layers as f64).sqrt() * c / m as f64)
}

/// Sensitivity when each of the `num_heads` heads per layer is clipped to `c`
/// separately instead of the layer as a whole: `√(|S|·H)·C/m`.
pub fn per_head_sensitivity(num_layers: usize, num_heads: usize, c: f64, m: usize) -> Result<f64> {
    sensitivity(num_layers * num_heads, c, m)
}

/// Clips each chunk's activations per layer and averages them (no noise).
pub fn clipped_mean(
    chunks: &[Chunk],
    model: &dyn ModelInterface,
    layers: &[usize],
    clip_c: f64,
) -> Result<ActivationTensor> {
    if chunks.is_empty() {
        return Err(Error::Empty("partition has no chunks"));
    }
    let clipped = chunks
        .par_iter()
        .map(|chunk| clip_per_layer(&model.extract(chunk, layers)?, clip_c))
        .collect::<Result<Vec<_>>>()?;
    mean_tensors(&clipped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseMode {
    #[default]
    Private,
    /// Debug only: releases the clipped mean as-is and charges `ε = ∞`.
    Disabled,
}

/// Output of [`compute_private_mean`].
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateMean {
    pub tensor: ActivationTensor,
    pub sensitivity: f64,
    pub sigma: f64,
}

/// Runs the whole private-mean pipeline over a partition and records exactly
/// one charge on `receipt`.
pub fn compute_private_mean(
    plan: &PartitionPlan,
    model: &dyn ModelInterface,
    layers: &[usize],
    params: &PrivacyParams,
    mode: NoiseMode,
    seed: &RandomSeed,
    mut receipt: PrivacyReceipt,
) -> Result<(PrivateMean, PrivacyReceipt)> {
    params.validate()?;
    model.check_layers(layers)?;
    let mean = clipped_mean(&plan.chunks, model, layers, params.clip_c)?;
    let delta2 =
        sensitivity(layers.len(), params.clip_c, plan.m())? * params.neighbours.sensitivity_factor();
    let (tensor, sigma) = match mode {
        NoiseMode::Private => {
            let cal = calibrate_analytic_gaussian(delta2, params.eps_tv, params.delta)?;
            let noised = add_gaussian_noise(&mean, cal.sigma, &seed.child("gaussian-noise"))?;
            receipt.charge(GAUSSIAN_MECHANISM, params.eps_tv, params.delta)?;
            (noised, cal.sigma)
        }
        NoiseMode::Disabled => {
            receipt.charge(NOISE_DISABLED, f64::INFINITY, 0.0)?;
            (mean, 0.0)
        }
    };
    Ok((
        PrivateMean {
            tensor,
            sensitivity: delta2,
            sigma,
        },
        receipt,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy_model::{generate_dataset, SteerableToyModel, SyntheticTask, ToyModelConfig};
    use std::collections::HashSet;

    fn data(n: usize) -> Vec<Example> {
        generate_dataset(SyntheticTask::Flip, n, 4, 0, &RandomSeed::new(1, "data")).unwrap()
    }

    #[test]
    fn partition_counts() {
        let plan = partition_disjoint(&data(1000), 100, 8, &RandomSeed::new(0, "p")).unwrap();
        assert_eq!(plan.m(), 100);
        assert!(plan.chunks.iter().all(|c| c.k() == 8));
        assert_eq!(plan.chunks.iter().map(|c| c.k() + 1).sum::<usize>(), 900);
        assert_eq!(plan.unused.len(), 100);

        let exact = partition_disjoint(&data(90), 10, 8, &RandomSeed::new(0, "p")).unwrap();
        assert!(exact.unused.is_empty());
    }

    #[test]
    fn partition_is_disjoint_for_many_seeds() {
        let d = data(250);
        for s in 0..50 {
            let plan = partition_disjoint(&d, 20, 8, &RandomSeed::new(s, "p")).unwrap();
            let mut seen = HashSet::new();
            for id in plan.chunks.iter().flat_map(|c| c.examples().map(|e| e.id)) {
                assert!(seen.insert(id));
            }
            for id in plan.unused_ids() {
                assert!(seen.insert(id));
            }
            assert_eq!(seen.len(), 250);
        }
    }

    #[test]
    fn partition_errors() {
        let err = partition_disjoint(&data(89), 10, 8, &RandomSeed::new(0, "p")).unwrap_err();
        assert_eq!(err, Error::DatasetTooSmall { required: 90, available: 89 });
        assert!(err.to_string().contains("90"));
        assert!(partition_disjoint(&data(10), 0, 8, &RandomSeed::new(0, "p")).is_err());
        let mut dup = data(20);
        dup[3].id = dup[4].id;
        assert!(partition_disjoint(&dup, 2, 1, &RandomSeed::new(0, "p")).is_err());
    }

    #[test]
    fn partition_depends_on_seed() {
        let d = data(200);
        let a = partition_disjoint(&d, 10, 8, &RandomSeed::new(0, "p")).unwrap();
        let b = partition_disjoint(&d, 10, 8, &RandomSeed::new(0, "p")).unwrap();
        let c = partition_disjoint(&d, 10, 8, &RandomSeed::new(1, "p")).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn sensitivity_values() {
        let s = sensitivity(32, 1.0, 100).unwrap();
        assert!((s - 0.0565685).abs() < 1e-7);
        assert_eq!(sensitivity(1, 1.0, 1).unwrap(), 1.0);
        assert!((sensitivity(4, 2.0, 10).unwrap() - 0.4).abs() < 1e-15);
        assert!(sensitivity(4, 1.0, 0).is_err());
    }

    #[test]
    fn per_head_clipping_costs_sqrt_h() {
        for h in [1usize, 4, 16, 32] {
            let layer = sensitivity(32, 1.0, 100).unwrap();
            let head = per_head_sensitivity(32, h, 1.0, 100).unwrap();
            assert!((head / layer - (h as f64).sqrt()).abs() < 1e-12);
        }
    }

    fn setup() -> (SteerableToyModel, PartitionPlan) {
        let model = SteerableToyModel::new(ToyModelConfig::default()).unwrap();
        let plan = partition_disjoint(&data(90), 10, 8, &RandomSeed::new(2, "p")).unwrap();
        (model, plan)
    }

    #[test]
    fn noise_disabled_returns_clipped_mean() {
        let (model, plan) = setup();
        let layers = model.all_layers();
        let params = PrivacyParams::default();
        let (out, receipt) = compute_private_mean(
            &plan,
            &model,
            &layers,
            &params,
            NoiseMode::Disabled,
            &RandomSeed::new(0, "c"),
            PrivacyReceipt::new(),
        )
        .unwrap();
        let expected = clipped_mean(&plan.chunks, &model, &layers, 1.0).unwrap();
        assert_eq!(out.tensor, expected);
        assert_eq!(out.sigma, 0.0);
        assert_eq!(receipt.entries().len(), 1);
        assert_eq!(receipt.total_eps(), f64::INFINITY);
    }

    #[test]
    fn private_mode_charges_once() {
        let (model, plan) = setup();
        let layers = model.all_layers();
        let params = PrivacyParams::default();
        let (out, receipt) = compute_private_mean(
            &plan,
            &model,
            &layers,
            &params,
            NoiseMode::Private,
            &RandomSeed::new(0, "c"),
            PrivacyReceipt::new(),
        )
        .unwrap();
        assert_eq!(receipt.entries().len(), 1);
        assert_eq!(receipt.entries()[0].mechanism, GAUSSIAN_MECHANISM);
        assert_eq!((receipt.total_eps(), receipt.total_delta()), (1.0, 1e-5));
        assert!((out.sensitivity - 0.2).abs() < 1e-15);
        assert!(out.sigma > 0.0);

        let replace_one = PrivacyParams {
            neighbours: crate::privacy::NeighbourRelation::ReplaceOne,
            ..params
        };
        let (doubled, _) = compute_private_mean(
            &plan,
            &model,
            &layers,
            &replace_one,
            NoiseMode::Private,
            &RandomSeed::new(0, "c"),
            PrivacyReceipt::new(),
        )
        .unwrap();
        assert!((doubled.sensitivity - 0.4).abs() < 1e-15);
        assert!((doubled.sigma - 2.0 * out.sigma).abs() < 1e-9);
    }

    #[test]
    fn single_chunk_under_clip_is_raw_tensor() {
        let model = SteerableToyModel::new(ToyModelConfig::default()).unwrap();
        let plan = partition_disjoint(&data(9), 1, 8, &RandomSeed::new(2, "p")).unwrap();
        let layers = model.all_layers();
        let raw = model.extract(&plan.chunks[0], &layers).unwrap();
        let big = PrivacyParams { clip_c: 1e6, ..Default::default() };
        let (out, _) = compute_private_mean(
            &plan,
            &model,
            &layers,
            &big,
            NoiseMode::Disabled,
            &RandomSeed::new(0, "c"),
            PrivacyReceipt::new(),
        )
        .unwrap();
        assert_eq!(out.tensor, raw);
    }
}
