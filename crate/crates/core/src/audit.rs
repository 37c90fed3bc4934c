//! Empirical checks of the privacy-relevant bounds.
//!
//! Every audit is a seeded brute-force experiment: neighbouring inputs are
//! built by replacing one record, the released statistic is recomputed, and
//! the observed change is compared to the analytic bound. All comparisons
//! allow `AUDIT_SLACK` for floating-point summation error and nothing more.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::construction::{clipped_mean, partition_disjoint, sensitivity};
use crate::dp_mech::{add_gaussian_noise, gumbel_select};
use crate::error::{invalid, Result};
use crate::example::Example;
use crate::model::ModelInterface;
use crate::privacy::NeighbourRelation;
use crate::seed::RandomSeed;
use crate::selection::score_mask;
use crate::tensor::{flat_l2_distance, ActivationTensor, HeadMask};
use crate::toy_model::{generate_dataset, SyntheticTask};

pub const AUDIT_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub name: String,
    pub trials: usize,
    pub max_observed_distance: f64,
    pub bound: f64,
    /// Trials whose observed value exceeded `bound + AUDIT_SLACK`.
    pub violations: usize,
    pub notes: Vec<String>,
}

impl AuditReport {
    fn new(name: &str, trials: usize, bound: f64) -> Self {
        Self {
            name: name.into(),
            trials,
            max_observed_distance: 0.0,
            bound,
            violations: 0,
            notes: Vec::new(),
        }
    }

    fn observe(&mut self, value: f64) {
        self.max_observed_distance = self.max_observed_distance.max(value);
        if value > self.bound + AUDIT_SLACK {
            self.violations += 1;
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

impl std::fmt::Display for AuditReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "audit: {}", self.name)?;
        writeln!(f, "trials: {}", self.trials)?;
        writeln!(f, "max_observed: {:.17e}", self.max_observed_distance)?;
        writeln!(f, "bound: {:.17e}", self.bound)?;
        writeln!(f, "violations: {}", self.violations)?;
        for note in &self.notes {
            writeln!(f, "note: {note}")?;
        }
        write!(f, "result: {}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Settings for [`audit_mean_sensitivity`].
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityAuditConfig {
    pub layers: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub clip_c: f64,
    /// The replacement's raw activations have L2 norm at least this times `clip_c`.
    pub adversarial_scale: f64,
    /// Multiplies the analytic bound; values below 1 exist to self-test the harness.
    pub bound_scale: f64,
    /// Selects the analytic bound: `√|S|·C/m` for zero-out, twice that for
    /// replace-one. The swap itself is always a replacement.
    pub relation: NeighbourRelation,
    pub task: SyntheticTask,
}

impl Default for SensitivityAuditConfig {
    fn default() -> Self {
        Self {
            layers: vec![0, 1, 2, 3],
            m: 10,
            k: 8,
            clip_c: 1.0,
            adversarial_scale: 100.0,
            bound_scale: 1.0,
            relation: NeighbourRelation::ZeroOut,
            task: SyntheticTask::Flip,
        }
    }
}

/// A replacement for `original` (same id) with a random feature direction
/// whose chunk activations have raw norm at least `min_norm`.
fn adversarial_replacement(
    original: &Example,
    rng: &mut impl Rng,
    min_norm: f64,
    raw_norm_with: &dyn Fn(&Example) -> Result<f64>,
) -> Result<Example> {
    let f = original.features.len();
    let mut dir: Vec<f64> = (0..f).map(|_| StandardNormal.sample(rng)).collect();
    let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    dir.iter_mut().for_each(|x| *x /= n);
    let mut magnitude = min_norm.max(1.0);
    loop {
        let candidate = Example::new(
            original.id,
            dir.iter().map(|x| x * magnitude).collect(),
            rng.random_range(0..2),
        );
        if raw_norm_with(&candidate)? >= min_norm {
            return Ok(candidate);
        }
        magnitude *= 2.0;
    }
}

/// Replace-one audit of the clipped mean. Each trial builds a fresh dataset
/// and partition, swaps one uniformly chosen placed example (target or
/// demonstration) for an adversarially large one, and records the L2 change
/// of the clipped mean against the bound selected by `config.relation`.
pub fn audit_mean_sensitivity(
    config: &SensitivityAuditConfig,
    model: &dyn ModelInterface,
    trials: usize,
    seed: &RandomSeed,
) -> Result<AuditReport> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    model.check_layers(&config.layers)?;
    let delta2 = sensitivity(config.layers.len(), config.clip_c, config.m)?;
    let bound = delta2 * config.relation.sensitivity_factor() * config.bound_scale;
    let mut report = AuditReport::new("mean_sensitivity", trials, bound);
    let mut target_swaps = 0;
    let mut worst_ratio: f64 = 0.0;
    let n = config.m * (config.k + 1);
    let fdim = model.input_dim();

    for t in 0..trials {
        let trial_seed = seed.child(format!("trial-{t}"));
        let data = generate_dataset(config.task, n, fdim, 0, &trial_seed)?;
        let plan = partition_disjoint(&data, config.m, config.k, &trial_seed.child("partition"))?;
        let before = clipped_mean(&plan.chunks, model, &config.layers, config.clip_c)?;

        let mut rng = trial_seed.child("swap").rng();
        let chunk_idx = rng.random_range(0..plan.m());
        let slot = rng.random_range(0..=config.k);
        let chunk = &plan.chunks[chunk_idx];
        let original = chunk.examples().nth(slot).expect("slot within chunk").clone();
        if slot == 0 {
            target_swaps += 1;
        }
        let raw_norm_with = |ex: &Example| -> Result<f64> {
            let mut c = chunk.clone();
            c.replace(original.id, ex.clone());
            let raw = model.extract(&c, &config.layers)?;
            Ok(raw.values().iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let replacement = adversarial_replacement(
            &original,
            &mut rng,
            config.adversarial_scale * config.clip_c,
            &raw_norm_with,
        )?;

        let mut neighbour = plan.clone();
        neighbour.chunks[chunk_idx].replace(original.id, replacement);
        let after = clipped_mean(&neighbour.chunks, model, &config.layers, config.clip_c)?;
        let d = flat_l2_distance(&before, &after)?;
        worst_ratio = worst_ratio.max(d / delta2);
        report.observe(d);
    }
    report.notes.push(format!(
        "|S|={} C={} m={} K={} adversarial_scale={} bound_scale={} relation={:?}",
        config.layers.len(),
        config.clip_c,
        config.m,
        config.k,
        config.adversarial_scale,
        config.bound_scale,
        config.relation
    ));
    report.notes.push(format!(
        "{target_swaps} of {trials} swaps replaced a chunk target, the rest a demonstration"
    ));
    report.notes.push(format!(
        "worst observed / (sqrt(|S|)*C/m) = {worst_ratio:.6} (a replacement can move one clipped chunk tensor across the whole ball, so up to 2)"
    ));
    Ok(report)
}

/// Replace-one audit of `score_mask`: random validation sets, masks and task
/// vectors; one validation example is swapped (sometimes for an extreme
/// one) and `|Δscore|` is compared to `c_sel`.
pub fn audit_score_sensitivity(
    model: &dyn ModelInterface,
    trials: usize,
    c_sel: f64,
    seed: &RandomSeed,
) -> Result<AuditReport> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    if !(c_sel > 0.0 && c_sel.is_finite()) {
        return Err(invalid("c_sel", format!("must be finite and > 0, got {c_sel}")));
    }
    let dims = model.dims();
    let layers: Vec<usize> = (0..dims.num_layers).collect();
    let fdim = model.input_dim();
    let mut report = AuditReport::new("score_sensitivity", trials, c_sel);
    let mut saturated = 0;

    for t in 0..trials {
        let trial_seed = seed.child(format!("trial-{t}"));
        let mut rng = trial_seed.rng();
        let b = rng.random_range(1..=40);
        let val = generate_dataset(SyntheticTask::Flip, b, fdim, 0, &trial_seed)?;
        let bits = (0..layers.len() * dims.num_heads).map(|_| rng.random_bool(0.5)).collect();
        let mask = HeadMask::new(layers.clone(), dims.num_heads, bits)?;
        let scale: f64 = rng.random_range(0.1..10.0);
        let tv = ActivationTensor::new(
            layers.clone(),
            dims.num_heads,
            dims.head_dim,
            (0..layers.len() * dims.num_heads * dims.head_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    scale * z
                })
                .collect(),
        )?;

        let i = rng.random_range(0..b);
        let mut neighbour = val.clone();
        let magnitude = if rng.random_bool(0.3) { 1e3 } else { 1.0 };
        neighbour[i] = Example::new(
            val[i].id,
            (0..fdim).map(|_| magnitude * rng.random_range(-1.0..1.0)).collect(),
            rng.random_range(0..model.num_classes()),
        );
        let before = score_mask(&mask, &tv, model, &val, c_sel)?;
        let after = score_mask(&mask, &tv, model, &neighbour, c_sel)?;
        if before == b as f64 * c_sel && after == b as f64 * c_sel {
            saturated += 1;
        }
        report.observe((before - after).abs());
    }
    report
        .notes
        .push(format!("{saturated} trials had every loss saturated at c_sel before and after the swap"));
    Ok(report)
}

/// `softmax(−scores/scale)`.
pub fn gumbel_selection_probabilities(scores: &[f64], scale: f64) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = scores.iter().map(|s| (-(s - min) / scale).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Selection frequencies of `gumbel_select` over `trials` independent streams.
pub fn gumbel_frequencies(scores: &[f64], scale: f64, trials: usize, seed: &RandomSeed) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; scores.len()];
    for t in 0..trials {
        counts[gumbel_select(scores, scale, &seed.child(t))?] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / trials as f64).collect())
}

/// Per-coordinate sample mean and variance of `add_gaussian_noise` over
/// `trials` independent streams.
pub fn gaussian_moments(
    t: &ActivationTensor,
    sigma: f64,
    trials: usize,
    seed: &RandomSeed,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = t.values().len();
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    for i in 0..trials {
        let noisy = add_gaussian_noise(t, sigma, &seed.child(i))?;
        for (k, (&v, &x)) in noisy.values().iter().zip(t.values()).enumerate() {
            let dev = v - x;
            sum[k] += dev;
            sum_sq[k] += dev * dev;
        }
    }
    let tn = trials as f64;
    let means = sum.iter().zip(t.values()).map(|(s, x)| x + s / tn).collect();
    let vars = sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, sq)| (sq - s * s / tn) / (tn - 1.0))
        .collect();
    Ok((means, vars))
}

/// Frequency tolerance of the Gumbel checks.
pub const FREQUENCY_TOLERANCE: f64 = 0.01;

/// Monte-Carlo checks of the Gaussian and Gumbel samplers against their
/// closed forms. `max_observed_distance` is the worst absolute frequency
/// deviation; Gaussian moment failures count as violations too.
pub fn audit_mechanism_distributions(trials: usize, seed: &RandomSeed) -> Result<AuditReport> {
    if trials < 10_000 {
        return Err(invalid("trials", format!("need at least 10000, got {trials}")));
    }
    let mut report = AuditReport::new("mechanism_distributions", trials, FREQUENCY_TOLERANCE);

    let cases: [(&str, Vec<f64>, f64); 3] = [
        ("gumbel [0,1] scale 1", vec![0.0, 1.0], 1.0),
        ("gumbel 12 equal scores", vec![0.0; 12], 1.0),
        ("gumbel [0,0.5,1.5] scale 0.7", vec![0.0, 0.5, 1.5], 0.7),
    ];
    for (name, scores, scale) in cases {
        let freq = gumbel_frequencies(&scores, scale, trials, &seed.child(name))?;
        let expected = gumbel_selection_probabilities(&scores, scale);
        let dev = freq
            .iter()
            .zip(&expected)
            .map(|(f, e)| (f - e).abs())
            .fold(0.0, f64::max);
        report.observe(dev);
        report.notes.push(format!("{name}: max |freq - softmax| = {dev:.5}"));
    }

    let base = ActivationTensor::new(vec![0], 1, 3, vec![0.5, -2.0, 10.0])?;
    let zero = add_gaussian_noise(&base, 0.0, &seed.child("gaussian-zero"))?;
    let zero_dev = flat_l2_distance(&zero, &base)?;
    report.observe(zero_dev);
    report.notes.push(format!("gaussian sigma=0: deviation {zero_dev}"));

    let sigma = 1.5;
    let (means, vars) = gaussian_moments(&base, sigma, trials, &seed.child("gaussian"))?;
    let mean_tol = 4.0 * sigma / (trials as f64).sqrt();
    let mut gaussian_ok = true;
    for ((m, v), x) in means.iter().zip(&vars).zip(base.values()) {
        let mean_err = (m - x).abs();
        let var_err = (v - sigma * sigma).abs() / (sigma * sigma);
        if mean_err > mean_tol || var_err > 0.10 {
            gaussian_ok = false;
            report.violations += 1;
        }
        report.notes.push(format!(
            "gaussian sigma={sigma}: coord {x}: |mean err| {mean_err:.5} (tol {mean_tol:.5}), relative var err {var_err:.5} (tol 0.1)"
        ));
    }
    if !gaussian_ok {
        report.notes.push("gaussian moment check failed".into());
    }
    Ok(report)
}
