//! The model contract the pipeline is written against.

use crate::error::{invalid, Error, Result};
use crate::example::{Chunk, Example};
use crate::tensor::{ActivationTensor, HeadMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub num_layers: usize,
    pub num_heads: usize,
    pub head_dim: usize,
}

/// Activations to write over the model's own at the masked heads.
#[derive(Debug, Clone, Copy)]
pub struct Injection<'a> {
    pub mask: &'a HeadMask,
    pub tv: &'a ActivationTensor,
}

impl<'a> Injection<'a> {
    pub fn new(mask: &'a HeadMask, tv: &'a ActivationTensor) -> Self {
        Self { mask, tv }
    }
}

/// Everything a forward pass exposes: the head activations the readout
/// actually consumed (`L × H × d`, layer-major) and the class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub head_activations: Vec<f64>,
    pub class_scores: Vec<f64>,
}

impl ForwardTrace {
    pub fn head(&self, dims: ModelDims, layer: usize, head: usize) -> &[f64] {
        let start = (layer * dims.num_heads + head) * dims.head_dim;
        &self.head_activations[start..start + dims.head_dim]
    }

    pub fn label(&self) -> usize {
        argmax(&self.class_scores)
    }
}

/// Lowest index among the maximal entries.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `−log softmax(scores)[label]`, computed stably.
pub fn cross_entropy(scores: &[f64], label: usize) -> Result<f64> {
    if label >= scores.len() {
        return Err(invalid(
            "label",
            format!("class {label} out of range for {} classes", scores.len()),
        ));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok((lse - scores[label]).max(0.0))
}

/// A model whose attention-head activations can be read at the final token
/// and overwritten at inference time.
pub trait ModelInterface: Sync {
    fn dims(&self) -> ModelDims;

    fn num_classes(&self) -> usize;

    /// Length of an example's feature vector.
    fn input_dim(&self) -> usize;

    /// Identifies dimensions and weights; artifacts are bound to it.
    fn fingerprint(&self) -> String;

    /// Final-token activations for one chunk, restricted to `layers`.
    fn extract(&self, chunk: &Chunk, layers: &[usize]) -> Result<ActivationTensor>;

    /// Forward pass on a single query with optional activation replacement.
    fn forward(&self, query: &Example, injection: Option<Injection<'_>>) -> Result<ForwardTrace>;

    fn infer_injected(&self, query: &Example, mask: &HeadMask, tv: &ActivationTensor) -> Result<usize> {
        Ok(self.forward(query, Some(Injection::new(mask, tv)))?.label())
    }

    fn infer_zero_shot(&self, query: &Example) -> Result<usize> {
        Ok(self.forward(query, None)?.label())
    }

    /// Cross-entropy of the query's label under (optionally injected) inference.
    fn loss(&self, query: &Example, injection: Option<Injection<'_>>) -> Result<f64> {
        cross_entropy(&self.forward(query, injection)?.class_scores, query.label)
    }

    /// Checks that `layers` is strictly increasing and within range.
    fn check_layers(&self, layers: &[usize]) -> Result<()> {
        let l = self.dims().num_layers;
        if layers.is_empty() {
            return Err(Error::Empty("layer selection"));
        }
        if let Some(&bad) = layers.iter().find(|&&x| x >= l) {
            return Err(invalid("layers", format!("layer {bad} out of range for {l} layers")));
        }
        if layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("layers", "must be strictly increasing"));
        }
        Ok(())
    }

    /// Checks that an injection's mask and tensor agree with each other and
    /// with this model's dimensions.
    fn check_injection(&self, inj: &Injection<'_>) -> Result<()> {
        let dims = self.dims();
        inj.mask.ensure_matches(inj.tv)?;
        if inj.tv.num_heads() != dims.num_heads || inj.tv.head_dim() != dims.head_dim {
            return Err(Error::ShapeMismatch(format!(
                "injected tensor has {} heads x {} dims, model has {} x {}",
                inj.tv.num_heads(),
                inj.tv.head_dim(),
                dims.num_heads,
                dims.head_dim
            )));
        }
        self.check_layers(inj.tv.layer_ids())
            .map_err(|e| Error::ShapeMismatch(format!("injected tensor layers: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_values() {
        let ce = cross_entropy(&[0.0, 0.0], 1).unwrap();
        assert!((ce - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(cross_entropy(&[0.0, 800.0], 1).unwrap() < 1e-300);
        assert!((cross_entropy(&[0.0, 800.0], 0).unwrap() - 800.0).abs() < 1e-9);
        assert!(cross_entropy(&[0.0], 1).is_err());
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 2.0, 2.0]), 1);
    }
}
