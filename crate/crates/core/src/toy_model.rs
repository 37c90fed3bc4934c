//! A hand-built attention-style model in which activation steering works.
//!
//! Inputs are feature vectors `x`. The model's native rule labels `x` with
//! `[x₀ > 0]`. Two kinds of heads exist:
//!
//! - **content heads** carry the query: `a = P·x`, with `P` a fixed `d × f`
//!   matrix with orthonormal columns. The readout recovers `x₀` from them as
//!   the mean of `⟨a, P·e₀⟩`.
//! - **task heads** carry the mapping. In a chunk, a task head sees the
//!   demonstrations and emits `signal · mean_j(s_j·w_j) · u` plus bounded
//!   pseudo-noise derived from the chunk's example ids, where `s_j = +1` when
//!   demo `j` is labelled against the native rule (a "flip" demo), `−1`
//!   otherwise, `w_j = max(1, ‖x_j‖₂)`, and `u` is a fixed unit vector. For a
//!   bare query the task head only has the context cue `x₁` to go on and emits
//!   `−κ·x₁·u`.
//!
//! The readout combines content evidence `r` and mapping evidence
//! `e = mean ⟨a, u⟩` over task heads into the logit `z = −γ·r·e` for class 1;
//! class scores are `[−z/2, z/2]`. Zero-shot the logit is `γκ·x₀x₁`, so the
//! model follows the native rule when the cue is positive and is at chance on
//! the flip task, whose cue is balanced in sign. Injecting a flip task vector
//! into the task heads makes `e > 0` and turns the prediction into `[x₀ ≤ 0]`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::example::{Chunk, Example};
use crate::model::{ForwardTrace, Injection, ModelDims, ModelInterface};
use crate::seed::RandomSeed;
use crate::tensor::{ActivationTensor, HeadMask};

/// Binary mapping demonstrated by a chunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mapping {
    Identity,
    Flip,
}

impl Mapping {
    pub fn index(self) -> usize {
        match self {
            Mapping::Identity => 0,
            Mapping::Flip => 1,
        }
    }

    fn sign(self) -> f64 {
        match self {
            Mapping::Identity => -1.0,
            Mapping::Flip => 1.0,
        }
    }
}

/// The native rule: class 1 iff `x₀ > 0`.
pub fn native_label(features: &[f64]) -> usize {
    usize::from(features.first().is_some_and(|&x| x > 0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
    pub feature_dim: usize,
    /// `(layer, head)` pairs that encode the demonstrated mapping.
    pub task_heads: Vec<(usize, usize)>,
    pub signal: f64,
    /// Gain of the context cue on the task heads for a bare query.
    pub cue_gain: f64,
    pub readout_gain: f64,
    /// Half-width of the per-coordinate pseudo-noise on extracted task heads.
    pub noise_level: f64,
    pub weight_seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 4,
            head_dim: 8,
            feature_dim: 4,
            task_heads: vec![(1, 1), (2, 3)],
            signal: 1.0,
            cue_gain: 1.0,
            readout_gain: 4.0,
            noise_level: 0.05,
            weight_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum HeadKind {
    Content,
    Task,
}

#[derive(Debug, Clone)]
pub struct SteerableToyModel {
    config: ToyModelConfig,
    kinds: Vec<HeadKind>,
    /// Per head: `feature_dim` orthonormal columns of length `head_dim`.
    projections: Vec<Vec<Vec<f64>>>,
    /// Per head: unit mapping direction (used by task heads).
    directions: Vec<Vec<f64>>,
    fingerprint: String,
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
}

/// `cols` orthonormal vectors of length `dim` by Gram-Schmidt on Gaussian draws.
fn orthonormal_columns(rng: &mut impl Rng, dim: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cols);
    while out.len() < cols {
        let mut v = gaussian_vec(rng, dim);
        for q in &out {
            let p = dot(&v, q);
            v.iter_mut().zip(q).for_each(|(x, qi)| *x -= p * qi);
        }
        if dot(&v, &v) > 1e-6 {
            normalize(&mut v);
            out.push(v);
        }
    }
    out
}

impl SteerableToyModel {
    pub fn new(config: ToyModelConfig) -> Result<Self> {
        let c = &config;
        if c.num_layers == 0 || c.num_heads == 0 || c.head_dim == 0 {
            return Err(invalid("dims", "layers, heads and head_dim must be positive"));
        }
        if c.feature_dim < 2 || c.feature_dim > c.head_dim {
            return Err(invalid(
                "feature_dim",
                format!("must lie in [2, head_dim={}], got {}", c.head_dim, c.feature_dim),
            ));
        }
        if c.task_heads.is_empty() {
            return Err(invalid("task_heads", "at least one task head is required"));
        }
        let mut kinds = vec![HeadKind::Content; c.num_layers * c.num_heads];
        for &(l, h) in &c.task_heads {
            if l >= c.num_layers || h >= c.num_heads {
                return Err(invalid("task_heads", format!("({l}, {h}) out of range")));
            }
            kinds[l * c.num_heads + h] = HeadKind::Task;
        }
        if !kinds.contains(&HeadKind::Content) {
            return Err(invalid("task_heads", "at least one content head is required"));
        }
        for (name, v) in [
            ("signal", c.signal),
            ("cue_gain", c.cue_gain),
            ("readout_gain", c.readout_gain),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if !(c.noise_level >= 0.0 && c.noise_level.is_finite()) {
            return Err(invalid("noise_level", "must be finite and >= 0"));
        }

        let mut rng = RandomSeed::new(c.weight_seed, "toy-model/weights").rng();
        let n = kinds.len();
        let projections = (0..n)
            .map(|_| orthonormal_columns(&mut rng, c.head_dim, c.feature_dim))
            .collect();
        let directions = (0..n)
            .map(|_| {
                let mut u = gaussian_vec(&mut rng, c.head_dim);
                normalize(&mut u);
                u
            })
            .collect();
        let mut sorted_heads = c.task_heads.clone();
        sorted_heads.sort_unstable();
        sorted_heads.dedup();
        let fingerprint = format!(
            "steerable-toy/v1 L={} H={} d={} f={} task_heads={} signal={:e} cue={:e} gain={:e} noise={:e} seed={}",
            c.num_layers,
            c.num_heads,
            c.head_dim,
            c.feature_dim,
            sorted_heads
                .iter()
                .map(|(l, h)| format!("{l}:{h}"))
                .collect::<Vec<_>>()
                .join(","),
            c.signal,
            c.cue_gain,
            c.readout_gain,
            c.noise_level,
            c.weight_seed
        );
        Ok(Self {
            config,
            kinds,
            projections,
            directions,
            fingerprint,
        })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn all_layers(&self) -> Vec<usize> {
        (0..self.config.num_layers).collect()
    }

    pub fn is_task_head(&self, layer: usize, head: usize) -> bool {
        self.kinds[layer * self.config.num_heads + head] == HeadKind::Task
    }

    /// Mask selecting exactly the task heads within `layers`.
    pub fn oracle_mask(&self, layers: &[usize]) -> Result<HeadMask> {
        self.check_layers(layers)?;
        HeadMask::from_sites(layers.to_vec(), self.config.num_heads, &self.config.task_heads)
    }

    /// Noise-free task vector for a chunk whose demos all exhibit `mapping`
    /// (with unit demo weights): each task head holds
    /// `signal · prototype(mapping)`, every other head is zero.
    pub fn prototype_task_vector(&self, mapping: Mapping, layers: &[usize]) -> Result<ActivationTensor> {
        self.check_layers(layers)?;
        let (h, d) = (self.config.num_heads, self.config.head_dim);
        let mut values = vec![0.0; layers.len() * h * d];
        for (li, &l) in layers.iter().enumerate() {
            for head in 0..h {
                if self.is_task_head(l, head) {
                    let proto = self.prototype(mapping, l, head);
                    let start = (li * h + head) * d;
                    for (k, p) in proto.into_iter().enumerate() {
                        values[start + k] = self.config.signal * p;
                    }
                }
            }
        }
        ActivationTensor::new(layers.to_vec(), h, d, values)
    }

    /// Unit prototype of `mapping` at a task head; the two mappings have
    /// opposite prototypes.
    pub fn prototype(&self, mapping: Mapping, layer: usize, head: usize) -> Vec<f64> {
        let u = &self.directions[layer * self.config.num_heads + head];
        u.iter().map(|x| mapping.sign() * x).collect()
    }

    fn check_features(&self, ex: &Example) -> Result<()> {
        if ex.features.len() != self.config.feature_dim {
            return Err(invalid(
                "features",
                format!(
                    "example {} has {} features, model expects {}",
                    ex.id,
                    ex.features.len(),
                    self.config.feature_dim
                ),
            ));
        }
        if ex.features.iter().any(|x| !x.is_finite()) {
            return Err(invalid("features", format!("example {} has non-finite features", ex.id)));
        }
        Ok(())
    }

    fn content_activation(&self, idx: usize, x: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; self.config.head_dim];
        for (col, &xi) in self.projections[idx].iter().zip(x) {
            a.iter_mut().zip(col).for_each(|(ak, ck)| *ak += xi * ck);
        }
        a
    }

    fn chunk_pseudo_noise(&self, chunk: &Chunk, layer: usize, head: usize) -> Vec<f64> {
        if self.config.noise_level == 0.0 {
            return vec![0.0; self.config.head_dim];
        }
        let ids: Vec<String> = chunk.examples().map(|e| e.id.to_string()).collect();
        let label = format!("toy-model/chunk-noise/{layer}/{head}/{}", ids.join(","));
        let mut rng = RandomSeed::new(self.config.weight_seed, label).rng();
        let w = self.config.noise_level;
        (0..self.config.head_dim)
            .map(|_| rng.random_range(-w..=w))
            .collect()
    }

    fn demonstrated_mapping_strength(&self, chunk: &Chunk) -> f64 {
        let k = chunk.k();
        if k == 0 {
            return 0.0;
        }
        let total: f64 = chunk
            .demos()
            .iter()
            .map(|demo| {
                let s = if demo.label == native_label(&demo.features) { -1.0 } else { 1.0 };
                let w = dot(&demo.features, &demo.features).sqrt().max(1.0);
                s * w
            })
            .sum();
        total / k as f64
    }

    /// Mapping evidence `⟨a, u⟩` a head activation carries.
    pub fn mapping_evidence(&self, layer: usize, head: usize, activation: &[f64]) -> f64 {
        dot(activation, &self.directions[layer * self.config.num_heads + head])
    }

    fn content_evidence(&self, layer: usize, head: usize, activation: &[f64]) -> f64 {
        dot(activation, &self.projections[layer * self.config.num_heads + head][0])
    }
}

impl ModelInterface for SteerableToyModel {
    fn dims(&self) -> ModelDims {
        ModelDims {
            num_layers: self.config.num_layers,
            num_heads: self.config.num_heads,
            head_dim: self.config.head_dim,
        }
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn extract(&self, chunk: &Chunk, layers: &[usize]) -> Result<ActivationTensor> {
        self.check_layers(layers)?;
        for ex in chunk.examples() {
            self.check_features(ex)?;
        }
        let (h, d) = (self.config.num_heads, self.config.head_dim);
        let strength = self.config.signal * self.demonstrated_mapping_strength(chunk);
        let mut values = Vec::with_capacity(layers.len() * h * d);
        for &l in layers {
            for head in 0..h {
                let idx = l * h + head;
                match self.kinds[idx] {
                    HeadKind::Content => {
                        values.extend(self.content_activation(idx, &chunk.target().features))
                    }
                    HeadKind::Task => {
                        let noise = self.chunk_pseudo_noise(chunk, l, head);
                        values.extend(
                            self.directions[idx]
                                .iter()
                                .zip(noise)
                                .map(|(u, n)| strength * u + n),
                        );
                    }
                }
            }
        }
        ActivationTensor::new(layers.to_vec(), h, d, values).map_err(|e| match e {
            Error::InvalidTensor(msg) => Error::InvalidTensor(format!("extracted activations: {msg}")),
            other => other,
        })
    }

    fn forward(&self, query: &Example, injection: Option<Injection<'_>>) -> Result<ForwardTrace> {
        self.check_features(query)?;
        if let Some(inj) = &injection {
            self.check_injection(inj)?;
        }
        let (l_count, h, d) = (self.config.num_layers, self.config.num_heads, self.config.head_dim);
        let x = &query.features;
        let mut acts = Vec::with_capacity(l_count * h * d);
        for l in 0..l_count {
            let injected_layer = injection
                .as_ref()
                .and_then(|inj| inj.tv.layer_index(l).ok().map(|li| (inj, li)));
            for head in 0..h {
                let idx = l * h + head;
                if let Some((inj, li)) = injected_layer {
                    if inj.mask.get(li, head) {
                        acts.extend_from_slice(inj.tv.head(li, head));
                        continue;
                    }
                }
                match self.kinds[idx] {
                    HeadKind::Content => acts.extend(self.content_activation(idx, x)),
                    HeadKind::Task => {
                        let cue = -self.config.cue_gain * x[1];
                        acts.extend(self.directions[idx].iter().map(|u| cue * u));
                    }
                }
            }
        }

        let (mut content, mut n_content, mut mapping, mut n_task) = (0.0, 0usize, 0.0, 0usize);
        for l in 0..l_count {
            for head in 0..h {
                let start = (l * h + head) * d;
                let a = &acts[start..start + d];
                match self.kinds[l * h + head] {
                    HeadKind::Content => {
                        content += self.content_evidence(l, head, a);
                        n_content += 1;
                    }
                    HeadKind::Task => {
                        mapping += self.mapping_evidence(l, head, a);
                        n_task += 1;
                    }
                }
            }
        }
        let r = content / n_content as f64;
        let e = mapping / n_task as f64;
        let z = -self.config.readout_gain * r * e;
        Ok(ForwardTrace {
            head_activations: acts,
            class_scores: vec![-0.5 * z, 0.5 * z],
        })
    }
}

/// Synthetic binary tasks over the toy model's feature space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    /// Labels follow the native rule; the context cue `x₁` is positive.
    Identity,
    /// Labels are the negation of the native rule; the cue is balanced in sign.
    Flip,
}

impl SyntheticTask {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticTask::Identity => "identity",
            SyntheticTask::Flip => "flip",
        }
    }

    pub fn mapping(self) -> Mapping {
        match self {
            SyntheticTask::Identity => Mapping::Identity,
            SyntheticTask::Flip => Mapping::Flip,
        }
    }
}

impl std::str::FromStr for SyntheticTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(SyntheticTask::Identity),
            "flip" => Ok(SyntheticTask::Flip),
            other => Err(invalid("task", format!("unknown synthetic task `{other}` (identity|flip)"))),
        }
    }
}

/// `n` examples of `task` with ids `id_offset..id_offset+n`.
///
/// Example `i` has `x₀` positive for even `i` and, on the flip task, `x₁`
/// positive when `i / 2` is even, so both classes and both cue signs are
/// balanced exactly whenever `n` is a multiple of 4. Magnitudes are drawn
/// from the seeded stream; `|x₀|, |x₁| ∈ [0.05, 1)`, remaining features are
/// uniform on `[-1, 1)`.
pub fn generate_dataset(
    task: SyntheticTask,
    n: usize,
    feature_dim: usize,
    id_offset: u64,
    seed: &RandomSeed,
) -> Result<Vec<Example>> {
    if feature_dim < 2 {
        return Err(invalid("feature_dim", "must be at least 2"));
    }
    let mut rng = seed.child(format!("synthetic/{}", task.name())).rng();
    Ok((0..n)
        .map(|i| {
            let mut x = vec![0.0; feature_dim];
            let x0_sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            x[0] = x0_sign * rng.random_range(0.05..1.0);
            x[1] = match task {
                SyntheticTask::Identity => rng.random_range(0.25..1.0),
                SyntheticTask::Flip => {
                    let sign = if (i / 2) % 2 == 0 { 1.0 } else { -1.0 };
                    sign * rng.random_range(0.05..1.0)
                }
            };
            for v in x.iter_mut().skip(2) {
                *v = rng.random_range(-1.0..1.0);
            }
            let native = native_label(&x);
            let label = match task {
                SyntheticTask::Identity => native,
                SyntheticTask::Flip => 1 - native,
            };
            Example::new(id_offset + i as u64, x, label)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::flat_l2_distance;

    fn model() -> SteerableToyModel {
        SteerableToyModel::new(ToyModelConfig::default()).unwrap()
    }

    fn chunk_for(task: SyntheticTask, target: Example, demo_offset: u64, k: usize) -> Chunk {
        let demos = generate_dataset(task, k, 4, demo_offset, &RandomSeed::new(9, "demos")).unwrap();
        Chunk::new(target, demos).unwrap()
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = |f: fn(&mut ToyModelConfig)| {
            let mut c = ToyModelConfig::default();
            f(&mut c);
            SteerableToyModel::new(c).is_err()
        };
        assert!(bad(|c| c.feature_dim = 1));
        assert!(bad(|c| c.feature_dim = 9));
        assert!(bad(|c| c.task_heads.clear()));
        assert!(bad(|c| c.task_heads = vec![(4, 0)]));
        assert!(bad(|c| c.signal = 0.0));
        assert!(bad(|c| {
            c.num_layers = 1;
            c.num_heads = 1;
            c.task_heads = vec![(0, 0)];
        }));
    }

    #[test]
    fn extraction_is_deterministic() {
        let m = model();
        let target = Example::new(1000, vec![0.3, -0.2, 0.1, 0.9], 0);
        let c = chunk_for(SyntheticTask::Flip, target, 0, 8);
        assert_eq!(m.extract(&c, &[0, 1, 2, 3]).unwrap(), m.extract(&c, &[0, 1, 2, 3]).unwrap());
        assert!(m.extract(&c, &[4]).is_err());
        assert!(m.extract(&c, &[2, 1]).is_err());
    }

    #[test]
    fn layer_subset_matches_full_extraction() {
        let m = model();
        let c = chunk_for(SyntheticTask::Flip, Example::new(1000, vec![0.3, -0.2, 0.1, 0.9], 0), 0, 8);
        let full = m.extract(&c, &[0, 1, 2, 3]).unwrap();
        let sub = m.extract(&c, &[1, 3]).unwrap();
        assert_eq!(sub.layer_slice(0), full.layer_slice(1));
        assert_eq!(sub.layer_slice(1), full.layer_slice(3));
    }

    #[test]
    fn opposite_mappings_have_opposite_task_heads() {
        let m = model();
        let target = Example::new(1000, vec![0.3, -0.2, 0.1, 0.9], 0);
        let flip = m
            .extract(&chunk_for(SyntheticTask::Flip, target.clone(), 0, 8), &[1, 2])
            .unwrap();
        let ident = m
            .extract(&chunk_for(SyntheticTask::Identity, target, 0, 8), &[1, 2])
            .unwrap();
        for (li, h) in [(0, 1), (1, 3)] {
            assert!(dot(flip.head(li, h), ident.head(li, h)) < 0.0);
        }
        // content heads depend on the target only
        for (li, h) in [(0, 0), (0, 2), (0, 3), (1, 0), (1, 1), (1, 2)] {
            assert_eq!(flip.head(li, h), ident.head(li, h));
        }
    }

    #[test]
    fn pure_mapping_chunk_is_prototype_plus_bounded_noise() {
        let m = model();
        // demos with unit weight: |x| <= 1
        let demos: Vec<Example> = (0..8)
            .map(|i| {
                let x = vec![if i % 2 == 0 { 0.5 } else { -0.5 }, 0.3, 0.1, -0.1];
                let label = 1 - native_label(&x);
                Example::new(i, x, label)
            })
            .collect();
        let c = Chunk::new(Example::new(99, vec![0.2, 0.2, 0.2, 0.2], 0), demos).unwrap();
        let t = m.extract(&c, &[1]).unwrap();
        let proto = m.prototype(Mapping::Flip, 1, 1);
        for (a, p) in t.head(0, 1).iter().zip(&proto) {
            assert!((a - p).abs() <= m.config().noise_level + 1e-12);
        }
    }

    #[test]
    fn zero_shot_accuracy_by_task() {
        let m = model();
        let seed = RandomSeed::new(5, "eval");
        let acc = |task| {
            let data = generate_dataset(task, 200, 4, 0, &seed).unwrap();
            let correct = data
                .iter()
                .filter(|q| m.infer_zero_shot(q).unwrap() == q.label)
                .count();
            correct as f64 / data.len() as f64
        };
        let flip = acc(SyntheticTask::Flip);
        assert!((flip - 0.5).abs() <= 0.07, "flip zero-shot {flip}");
        assert!(acc(SyntheticTask::Identity) >= 0.95);
    }

    #[test]
    fn zero_mask_injection_equals_zero_shot() {
        let m = model();
        let layers = m.all_layers();
        let mask = HeadMask::zeros(layers.clone(), 4).unwrap();
        let tv = m.prototype_task_vector(Mapping::Flip, &layers).unwrap();
        for q in generate_dataset(SyntheticTask::Flip, 40, 4, 0, &RandomSeed::new(1, "q")).unwrap() {
            assert_eq!(
                m.forward(&q, Some(Injection::new(&mask, &tv))).unwrap(),
                m.forward(&q, None).unwrap()
            );
        }
    }

    #[test]
    fn prototype_injection_enforces_mapping() {
        let m = model();
        let layers = m.all_layers();
        let mask = m.oracle_mask(&layers).unwrap();
        for task in [SyntheticTask::Flip, SyntheticTask::Identity] {
            let tv = m.prototype_task_vector(task.mapping(), &layers).unwrap();
            let queries = generate_dataset(task, 100, 4, 0, &RandomSeed::new(2, "q")).unwrap();
            for q in &queries {
                assert_eq!(m.infer_injected(q, &mask, &tv).unwrap(), q.label, "{task:?} {q:?}");
            }
        }
    }

    #[test]
    fn injected_heads_are_used_verbatim() {
        let m = model();
        let layers = vec![1, 2];
        let mask = HeadMask::from_sites(layers.clone(), 4, &[(1, 0), (2, 3)]).unwrap();
        let values: Vec<f64> = (0..2 * 4 * 8).map(|i| i as f64 * 0.37 - 3.0).collect();
        let tv = ActivationTensor::new(layers, 4, 8, values).unwrap();
        let q = Example::new(0, vec![0.4, -0.6, 0.2, 0.0], 1);
        let trace = m.forward(&q, Some(Injection::new(&mask, &tv))).unwrap();
        let dims = m.dims();
        assert_eq!(trace.head(dims, 1, 0), tv.head(0, 0));
        assert_eq!(trace.head(dims, 2, 3), tv.head(1, 3));
        let own = m.forward(&q, None).unwrap();
        assert_eq!(trace.head(dims, 1, 1), own.head(dims, 1, 1));
        assert_eq!(trace.head(dims, 0, 0), own.head(dims, 0, 0));
    }

    #[test]
    fn unmasked_tv_changes_nothing_masked_tv_changes_computation() {
        let m = model();
        let layers = m.all_layers();
        let mask = m.oracle_mask(&layers).unwrap();
        let tv = m.prototype_task_vector(Mapping::Flip, &layers).unwrap();
        let q = Example::new(0, vec![0.4, -0.6, 0.2, 0.0], 0);
        let base = m.forward(&q, Some(Injection::new(&mask, &tv))).unwrap();

        // perturb an unmasked coordinate (layer 0, head 0)
        let mut v = tv.values().to_vec();
        v[0] += 10.0;
        let unmasked = ActivationTensor::new(layers.clone(), 4, 8, v).unwrap();
        assert_eq!(m.forward(&q, Some(Injection::new(&mask, &unmasked))).unwrap(), base);

        // perturb a masked coordinate (layer 1, head 1)
        let mut v = tv.values().to_vec();
        v[(4 + 1) * 8] += 10.0;
        let masked = ActivationTensor::new(layers, 4, 8, v).unwrap();
        assert_ne!(m.forward(&q, Some(Injection::new(&mask, &masked))).unwrap(), base);
    }

    #[test]
    fn injection_shape_errors() {
        let m = model();
        let tv = ActivationTensor::zeros(vec![0], 4, 8).unwrap();
        let wrong_mask = HeadMask::zeros(vec![1], 4).unwrap();
        let q = Example::new(0, vec![0.1; 4], 0);
        assert!(m.infer_injected(&q, &wrong_mask, &tv).is_err());
        let tv5 = ActivationTensor::zeros(vec![5], 4, 8).unwrap();
        let mask5 = HeadMask::zeros(vec![5], 4).unwrap();
        assert!(m.infer_injected(&q, &mask5, &tv5).is_err());
        let narrow = ActivationTensor::zeros(vec![0], 4, 4).unwrap();
        let mask0 = HeadMask::zeros(vec![0], 4).unwrap();
        assert!(m.infer_injected(&q, &mask0, &narrow).is_err());
        assert!(m.infer_zero_shot(&Example::new(0, vec![0.1; 3], 0)).is_err());
    }

    #[test]
    fn large_features_give_large_activations() {
        let m = model();
        let target = Example::new(700, vec![1e4, -1e4, 0.0, 0.0], 0);
        let c = chunk_for(SyntheticTask::Flip, target, 0, 8);
        let t = m.extract(&c, &[0]).unwrap();
        let z = ActivationTensor::zeros(vec![0], 4, 8).unwrap();
        assert!(flat_l2_distance(&t, &z).unwrap() > 100.0);
    }

    #[test]
    fn generator_balance_and_ids() {
        let d = generate_dataset(SyntheticTask::Flip, 200, 4, 500, &RandomSeed::new(0, "g")).unwrap();
        assert_eq!(d.iter().filter(|e| e.label == 1).count(), 100);
        assert_eq!(d.iter().filter(|e| e.features[1] > 0.0).count(), 100);
        assert_eq!(d[0].id, 500);
        assert_eq!(d[199].id, 699);
        assert!(d.iter().all(|e| e.label == 1 - native_label(&e.features)));
        assert!("xor".parse::<SyntheticTask>().is_err());
    }
}
