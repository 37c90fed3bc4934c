//! Head selection.
//!
//! A Bernoulli policy over heads is trained with REINFORCE, candidate masks
//! are sampled from it and the most frequent ones kept. The final mask is
//! then chosen either on public data at no privacy cost, or privately from the
//! candidates with Gumbel noise on clipped loss sums.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;

use crate::dp_mech::gumbel_select;
use crate::error::{invalid, Error, Result};
use crate::example::Example;
use crate::model::{Injection, ModelInterface};
use crate::privacy::{PrivacyParams, PrivacyReceipt};
use crate::seed::RandomSeed;
use crate::tensor::{ActivationTensor, HeadMask};

/// Receipt label of the private mask selection.
pub const GUMBEL_MECHANISM: &str = "gumbel_selection";

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub iterations: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Decay of the exponential-moving-average reward baseline.
    pub baseline_decay: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            minibatch: 8,
            learning_rate: 0.1,
            baseline_decay: 0.9,
        }
    }
}

/// Independent Bernoulli inclusion logits, one per `(layer, head)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPolicy {
    layer_ids: Vec<usize>,
    num_heads: usize,
    pub theta: Vec<f64>,
    pub config: PolicyConfig,
    /// Moving-average reward; `None` until the first update.
    pub baseline: Option<f64>,
}

impl MaskPolicy {
    /// Policy with all logits at zero (inclusion probability 0.5).
    pub fn new(layer_ids: Vec<usize>, num_heads: usize, config: PolicyConfig) -> Result<Self> {
        // borrow HeadMask's shape validation
        HeadMask::zeros(layer_ids.clone(), num_heads)?;
        let n = layer_ids.len() * num_heads;
        Ok(Self {
            layer_ids,
            num_heads,
            theta: vec![0.0; n],
            config,
            baseline: None,
        })
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::ShapeMismatch(format!(
                "theta needs {} entries, got {}",
                self.theta.len(),
                theta.len()
            )));
        }
        if theta.iter().any(|t| t.is_nan()) {
            return Err(invalid("theta", "contains NaN"));
        }
        self.theta = theta;
        Ok(self)
    }

    pub fn layer_ids(&self) -> &[usize] {
        &self.layer_ids
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.theta.iter().map(|&t| logistic(t)).collect()
    }

    /// Inclusion probability of one head, addressed by layer id.
    pub fn probability(&self, layer: usize, head: usize) -> Option<f64> {
        let li = self.layer_ids.binary_search(&layer).ok()?;
        Some(logistic(self.theta[li * self.num_heads + head]))
    }

    fn sample_bits(&self, rng: &mut impl Rng) -> Vec<bool> {
        self.theta
            .iter()
            .map(|&t| rng.random::<f64>() < logistic(t))
            .collect()
    }

    fn to_mask(&self, bits: Vec<bool>) -> HeadMask {
        HeadMask::new(self.layer_ids.clone(), self.num_heads, bits)
            .expect("policy shape was validated at construction")
    }
}

/// REINFORCE with a moving-average baseline.
///
/// Each iteration samples a mask from the policy, evaluates the mean
/// injected-inference loss on a minibatch drawn with replacement from `data`,
/// and moves the logits along `(reward − baseline)·(mask − p)`, the
/// score-function gradient of a Bernoulli product, with `reward = −loss`.
pub fn reinforce_train(
    data: &[Example],
    model: &dyn ModelInterface,
    tv: &ActivationTensor,
    mut policy: MaskPolicy,
    seed: &RandomSeed,
) -> Result<MaskPolicy> {
    if data.is_empty() {
        return Err(Error::Empty("REINFORCE training data"));
    }
    if policy.layer_ids != tv.layer_ids() || policy.num_heads != tv.num_heads() {
        return Err(Error::ShapeMismatch(
            "policy and task vector cover different heads".into(),
        ));
    }
    let cfg = policy.config;
    if cfg.minibatch == 0 {
        return Err(invalid("minibatch", "must be at least 1"));
    }
    if !(0.0..1.0).contains(&cfg.baseline_decay) {
        return Err(invalid("baseline_decay", "must lie in [0, 1)"));
    }
    let mut rng = seed.child("reinforce").rng();
    for _ in 0..cfg.iterations {
        let bits = policy.sample_bits(&mut rng);
        let mask = policy.to_mask(bits.clone());
        let inj = Injection::new(&mask, tv);
        let mut loss = 0.0;
        for _ in 0..cfg.minibatch {
            let ex = &data[rng.random_range(0..data.len())];
            loss += model.loss(ex, Some(inj))?;
        }
        let reward = -loss / cfg.minibatch as f64;
        let baseline = *policy.baseline.get_or_insert(reward);
        let advantage = reward - baseline;
        for (t, &b) in policy.theta.iter_mut().zip(&bits) {
            let grad = f64::from(u8::from(b)) - logistic(*t);
            *t += cfg.learning_rate * advantage * grad;
        }
        policy.baseline = Some(cfg.baseline_decay * baseline + (1.0 - cfg.baseline_decay) * reward);
    }
    Ok(policy)
}

/// The most frequently sampled masks, in descending frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub masks: Vec<HeadMask>,
    pub frequencies: Vec<usize>,
}

/// Samples `num_samples` masks from `policy` and keeps the `k_bar` most
/// frequent distinct ones (fewer if fewer distinct masks occurred). Ties in
/// frequency are ordered by first occurrence.
pub fn sample_candidate_masks(
    policy: &MaskPolicy,
    num_samples: usize,
    k_bar: usize,
    seed: &RandomSeed,
) -> Result<CandidateSet> {
    if num_samples == 0 {
        return Err(invalid("num_samples", "must be at least 1"));
    }
    if k_bar == 0 {
        return Err(invalid("k_bar", "must be at least 1"));
    }
    let mut rng = seed.child("candidates").rng();
    // bits -> (count, first occurrence)
    let mut tally: HashMap<Vec<bool>, (usize, usize)> = HashMap::new();
    for j in 0..num_samples {
        let bits = policy.sample_bits(&mut rng);
        tally.entry(bits).or_insert((0, j)).0 += 1;
    }
    let mut ranked: Vec<(Vec<bool>, usize, usize)> =
        tally.into_iter().map(|(b, (c, first))| (b, c, first)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(k_bar);
    let frequencies = ranked.iter().map(|r| r.1).collect();
    let masks = ranked.into_iter().map(|r| policy.to_mask(r.0)).collect();
    Ok(CandidateSet { masks, frequencies })
}

/// `Σ min(loss, c_sel)`.
pub fn clipped_loss_sum(losses: impl IntoIterator<Item = f64>, c_sel: f64) -> f64 {
    losses.into_iter().map(|l| l.max(0.0).min(c_sel)).sum()
}

/// Sum over `val` of the injected-inference cross-entropy, each term clipped
/// to `c_sel`. Lies in `[0, |val|·c_sel]`.
pub fn score_mask(
    mask: &HeadMask,
    tv: &ActivationTensor,
    model: &dyn ModelInterface,
    val: &[Example],
    c_sel: f64,
) -> Result<f64> {
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    if !(c_sel > 0.0 && c_sel.is_finite()) {
        return Err(invalid("c_sel", format!("must be finite and > 0, got {c_sel}")));
    }
    let inj = Injection::new(mask, tv);
    let losses = val
        .iter()
        .map(|ex| model.loss(ex, Some(inj)))
        .collect::<Result<Vec<_>>>()?;
    Ok(clipped_loss_sum(losses, c_sel))
}

/// Picks a candidate with Gumbel noise of scale `clip_sel/eps_sel` on the
/// scores (lower is better) and charges `(eps_sel, 0)`.
pub fn select_mask_private(
    candidates: &CandidateSet,
    scores: &[f64],
    params: &PrivacyParams,
    seed: &RandomSeed,
    mut receipt: PrivacyReceipt,
) -> Result<(HeadMask, PrivacyReceipt)> {
    params.validate()?;
    if !(params.eps_sel > 0.0) {
        return Err(invalid("eps_sel", "private selection needs eps_sel > 0"));
    }
    if scores.len() != candidates.masks.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores for {} candidates",
            scores.len(),
            candidates.masks.len()
        )));
    }
    let scale = params.clip_sel / params.eps_sel;
    let idx = gumbel_select(scores, scale, &seed.child("gumbel"))?;
    receipt.charge(GUMBEL_MECHANISM, params.eps_sel, 0.0)?;
    Ok((candidates.masks[idx].clone(), receipt))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub policy: PolicyConfig,
    pub num_samples: usize,
    pub k_bar: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            policy: PolicyConfig::default(),
            num_samples: 2000,
            k_bar: 12,
        }
    }
}

/// Result of a full selection run, kept for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub mask: HeadMask,
    pub policy: MaskPolicy,
    pub candidates: CandidateSet,
    pub scores: Vec<f64>,
}

fn train_and_sample(
    train: &[Example],
    model: &dyn ModelInterface,
    tv: &ActivationTensor,
    cfg: &SelectionConfig,
    seed: &RandomSeed,
) -> Result<(MaskPolicy, CandidateSet)> {
    let policy = MaskPolicy::new(tv.layer_ids().to_vec(), tv.num_heads(), cfg.policy)?;
    let policy = reinforce_train(train, model, tv, policy, seed)?;
    let candidates = sample_candidate_masks(&policy, cfg.num_samples, cfg.k_bar, seed)?;
    Ok((policy, candidates))
}

/// Public-data variant: everything runs on `public_data`, the candidate with
/// the lowest mean loss is returned, and `receipt` is passed through untouched.
pub fn select_mask_public(
    public_data: &[Example],
    model: &dyn ModelInterface,
    tv: &ActivationTensor,
    cfg: &SelectionConfig,
    seed: &RandomSeed,
    receipt: PrivacyReceipt,
) -> Result<(Selection, PrivacyReceipt)> {
    if public_data.is_empty() {
        return Err(Error::Empty("public data"));
    }
    let (policy, candidates) = train_and_sample(public_data, model, tv, cfg, seed)?;
    let scores = candidates
        .masks
        .par_iter()
        .map(|mask| {
            let inj = Injection::new(mask, tv);
            let total = public_data
                .iter()
                .map(|ex| model.loss(ex, Some(inj)))
                .sum::<Result<f64>>()?;
            Ok(total / public_data.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s < scores[best] { i } else { best });
    let mask = candidates.masks[best].clone();
    Ok((
        Selection {
            mask,
            policy,
            candidates,
            scores,
        },
        receipt,
    ))
}

/// Private-only variant: REINFORCE on `train`, clipped-loss scores on `val`,
/// Gumbel selection charged at `(eps_sel, 0)`.
#[allow(clippy::too_many_arguments)]
pub fn select_private(
    train: &[Example],
    val: &[Example],
    model: &dyn ModelInterface,
    tv: &ActivationTensor,
    cfg: &SelectionConfig,
    params: &PrivacyParams,
    seed: &RandomSeed,
    receipt: PrivacyReceipt,
) -> Result<(Selection, PrivacyReceipt)> {
    let (policy, candidates) = train_and_sample(train, model, tv, cfg, seed)?;
    let scores = candidates
        .masks
        .par_iter()
        .map(|mask| score_mask(mask, tv, model, val, params.clip_sel))
        .collect::<Result<Vec<f64>>>()?;
    let (mask, receipt) = select_mask_private(&candidates, &scores, params, seed, receipt)?;
    Ok((
        Selection {
            mask,
            policy,
            candidates,
            scores,
        },
        receipt,
    ))
}
