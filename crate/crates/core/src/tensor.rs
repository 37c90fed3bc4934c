//! Activation tensors and head masks.
//!
//! An [`ActivationTensor`] holds one activation vector of width `head_dim` for
//! every `(layer, head)` pair over a set of selected layers. Values are laid
//! out layer-major: `values[(layer_idx * num_heads + head) * head_dim + k]`.
//! A [`HeadMask`] marks which of those `(layer, head)` sites receive injected
//! activations at inference time.

use crate::error::{Error, Result};

/// Real-valued activations over `layer_ids × num_heads × head_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTensor {
    layer_ids: Vec<usize>,
    num_heads: usize,
    head_dim: usize,
    values: Vec<f64>,
}

fn check_layer_ids(layer_ids: &[usize]) -> Result<()> {
    if layer_ids.is_empty() {
        return Err(Error::InvalidTensor("layer_ids must be nonempty".into()));
    }
    if layer_ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidTensor(format!(
            "layer_ids must be strictly increasing, got {layer_ids:?}"
        )));
    }
    Ok(())
}

impl ActivationTensor {
    pub fn new(
        layer_ids: Vec<usize>,
        num_heads: usize,
        head_dim: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        check_layer_ids(&layer_ids)?;
        if num_heads == 0 || head_dim == 0 {
            return Err(Error::InvalidTensor(
                "num_heads and head_dim must be positive".into(),
            ));
        }
        let expected = layer_ids.len() * num_heads * head_dim;
        if values.len() != expected {
            return Err(Error::InvalidTensor(format!(
                "expected {expected} values for {} layers x {num_heads} heads x {head_dim} dims, got {}",
                layer_ids.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "non-finite value {} at flat index {pos}",
                values[pos]
            )));
        }
        Ok(Self {
            layer_ids,
            num_heads,
            head_dim,
            values,
        })
    }

    pub fn zeros(layer_ids: Vec<usize>, num_heads: usize, head_dim: usize) -> Result<Self> {
        let n = layer_ids.len() * num_heads * head_dim;
        Self::new(layer_ids, num_heads, head_dim, vec![0.0; n])
    }

    pub fn layer_ids(&self) -> &[usize] {
        &self.layer_ids
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    fn layer_width(&self) -> usize {
        self.num_heads * self.head_dim
    }

    /// Position of `layer` within `layer_ids`.
    pub fn layer_index(&self, layer: usize) -> Result<usize> {
        self.layer_ids
            .binary_search(&layer)
            .map_err(|_| Error::UnknownLayer(layer))
    }

    /// The `H × d` slice for the layer at position `idx` of `layer_ids`.
    pub fn layer_slice(&self, idx: usize) -> &[f64] {
        let w = self.layer_width();
        &self.values[idx * w..(idx + 1) * w]
    }

    /// Activation of one head, addressed by layer position and head index.
    pub fn head(&self, layer_idx: usize, head: usize) -> &[f64] {
        let start = (layer_idx * self.num_heads + head) * self.head_dim;
        &self.values[start..start + self.head_dim]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layer_ids == other.layer_ids
            && self.num_heads == other.num_heads
            && self.head_dim == other.head_dim
    }

    fn shape_string(&self) -> String {
        format!(
            "layers {:?} x {} heads x {} dims",
            self.layer_ids, self.num_heads, self.head_dim
        )
    }

    fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{} vs {}",
                self.shape_string(),
                other.shape_string()
            )))
        }
    }

    /// Elementwise map, validating that the result stays finite.
    pub fn map(&self, f: impl FnMut(f64) -> f64) -> Result<Self> {
        Self::new(
            self.layer_ids.clone(),
            self.num_heads,
            self.head_dim,
            self.values.iter().copied().map(f).collect(),
        )
    }
}

fn l2(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// L2 norm of the `H × d` slice of `layer`.
pub fn layer_l2_norm(t: &ActivationTensor, layer: usize) -> Result<f64> {
    let idx = t.layer_index(layer)?;
    Ok(l2(t.layer_slice(idx)))
}

/// Rescales every layer slice whose L2 norm exceeds `c` down to norm `c`.
///
/// Slices already within the bound (including all-zero slices) are copied
/// unchanged, so clipping is idempotent bit-for-bit.
pub fn clip_per_layer(t: &ActivationTensor, c: f64) -> Result<ActivationTensor> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(crate::error::invalid("c", format!("must be finite and > 0, got {c}")));
    }
    let width = t.layer_width();
    let mut values = t.values.clone();
    for slice in values.chunks_mut(width) {
        let norm = l2(slice);
        if norm <= c {
            continue;
        }
        let original: Vec<f64> = slice.to_vec();
        let mut factor = c / norm;
        loop {
            for (dst, src) in slice.iter_mut().zip(&original) {
                *dst = src * factor;
            }
            // Rounding can leave the rescaled norm a few ulps above c.
            if l2(slice) <= c {
                break;
            }
            factor *= 1.0 - f64::EPSILON;
        }
    }
    ActivationTensor::new(t.layer_ids.clone(), t.num_heads, t.head_dim, values)
}

/// Elementwise arithmetic mean.
///
/// Each coordinate is summed over its values in ascending order, so the
/// result is bit-identical for any ordering of `ts`.
pub fn mean_tensors(ts: &[ActivationTensor]) -> Result<ActivationTensor> {
    let first = ts.first().ok_or(Error::Empty("mean_tensors needs at least one tensor"))?;
    for t in &ts[1..] {
        first.ensure_same_shape(t)?;
    }
    let n = ts.len() as f64;
    let mut column = Vec::with_capacity(ts.len());
    let values = (0..first.values.len())
        .map(|i| {
            column.clear();
            column.extend(ts.iter().map(|t| t.values[i]));
            column.sort_unstable_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect();
    ActivationTensor::new(first.layer_ids.clone(), first.num_heads, first.head_dim, values)
}

/// L2 distance between the flattened tensors.
pub fn flat_l2_distance(a: &ActivationTensor, b: &ActivationTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Binary injection mask over `layer_ids × num_heads`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeadMask {
    layer_ids: Vec<usize>,
    num_heads: usize,
    bits: Vec<bool>,
}

impl HeadMask {
    pub fn new(layer_ids: Vec<usize>, num_heads: usize, bits: Vec<bool>) -> Result<Self> {
        check_layer_ids(&layer_ids)?;
        if bits.len() != layer_ids.len() * num_heads {
            return Err(Error::ShapeMismatch(format!(
                "mask needs {} bits for {} layers x {num_heads} heads, got {}",
                layer_ids.len() * num_heads,
                layer_ids.len(),
                bits.len()
            )));
        }
        Ok(Self {
            layer_ids,
            num_heads,
            bits,
        })
    }

    pub fn zeros(layer_ids: Vec<usize>, num_heads: usize) -> Result<Self> {
        let n = layer_ids.len() * num_heads;
        Self::new(layer_ids, num_heads, vec![false; n])
    }

    pub fn ones(layer_ids: Vec<usize>, num_heads: usize) -> Result<Self> {
        let n = layer_ids.len() * num_heads;
        Self::new(layer_ids, num_heads, vec![true; n])
    }

    /// Mask with exactly the given `(layer, head)` sites set. Sites whose layer
    /// is not in `layer_ids` are ignored.
    pub fn from_sites(
        layer_ids: Vec<usize>,
        num_heads: usize,
        sites: &[(usize, usize)],
    ) -> Result<Self> {
        let mut mask = Self::zeros(layer_ids, num_heads)?;
        for &(layer, head) in sites {
            if head >= num_heads {
                return Err(crate::error::invalid(
                    "sites",
                    format!("head {head} out of range for {num_heads} heads"),
                ));
            }
            if let Ok(idx) = mask.layer_ids.binary_search(&layer) {
                mask.bits[idx * num_heads + head] = true;
            }
        }
        Ok(mask)
    }

    pub fn layer_ids(&self) -> &[usize] {
        &self.layer_ids
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, layer_idx: usize, head: usize) -> bool {
        self.bits[layer_idx * self.num_heads + head]
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Sites set in this mask, as `(layer id, head)` pairs.
    pub fn sites(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (self.layer_ids[i / self.num_heads], i % self.num_heads))
            .collect()
    }

    pub fn matches(&self, t: &ActivationTensor) -> bool {
        self.layer_ids == t.layer_ids && self.num_heads == t.num_heads
    }

    pub fn ensure_matches(&self, t: &ActivationTensor) -> Result<()> {
        if self.matches(t) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "mask over layers {:?} x {} heads does not match tensor {}",
                self.layer_ids,
                self.num_heads,
                t.shape_string()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(layers: Vec<usize>, h: usize, d: usize, values: Vec<f64>) -> ActivationTensor {
        ActivationTensor::new(layers, h, d, values).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(ActivationTensor::new(vec![0, 1], 2, 2, vec![0.0; 7]).is_err());
        assert!(ActivationTensor::new(vec![1, 1], 1, 1, vec![0.0; 2]).is_err());
        assert!(ActivationTensor::new(vec![2, 1], 1, 1, vec![0.0; 2]).is_err());
        assert!(ActivationTensor::new(vec![0], 1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(ActivationTensor::new(vec![0], 1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let z = ActivationTensor::zeros(vec![0, 3], 2, 2).unwrap();
        assert_eq!(layer_l2_norm(&z, 3).unwrap(), 0.0);

        let mut v = vec![0.0; 8];
        v[5] = 3.0;
        let t = tensor(vec![0, 3], 2, 2, v);
        assert_eq!(layer_l2_norm(&t, 3).unwrap(), 3.0);
        assert_eq!(layer_l2_norm(&t, 0).unwrap(), 0.0);

        let ones = tensor(vec![0], 2, 2, vec![1.0; 4]);
        assert_eq!(layer_l2_norm(&ones, 0).unwrap(), 2.0);

        assert_eq!(layer_l2_norm(&t, 1), Err(Error::UnknownLayer(1)));
    }

    #[test]
    fn clip_examples() {
        // norm 2 -> scaled by 0.5
        let t = tensor(vec![0], 2, 2, vec![1.0; 4]);
        let c = clip_per_layer(&t, 1.0).unwrap();
        assert_eq!(c.values(), &[0.5; 4]);
        assert!((layer_l2_norm(&c, 0).unwrap() - 1.0).abs() < 1e-15);

        // norm 0.5 -> untouched
        let t = tensor(vec![0], 1, 2, vec![0.3, 0.4]);
        assert_eq!(clip_per_layer(&t, 1.0).unwrap(), t);

        let z = ActivationTensor::zeros(vec![0, 1], 2, 3).unwrap();
        assert_eq!(clip_per_layer(&z, 1e-9).unwrap(), z);

        assert!(clip_per_layer(&t, 0.0).is_err());
        assert!(clip_per_layer(&t, -1.0).is_err());
    }

    #[test]
    fn clip_is_per_layer() {
        // layer 0 norm 5 gets clipped, layer 1 norm 0.5 does not
        let t = tensor(vec![0, 1], 1, 2, vec![3.0, 4.0, 0.3, 0.4]);
        let c = clip_per_layer(&t, 1.0).unwrap();
        assert_eq!(&c.values()[2..], &[0.3, 0.4]);
        assert!((c.values()[0] - 0.6).abs() < 1e-15);
        assert!((c.values()[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn mean_examples() {
        let t = tensor(vec![0], 1, 3, vec![1.0, -2.0, 0.5]);
        assert_eq!(mean_tensors(std::slice::from_ref(&t)).unwrap(), t);

        let neg = t.map(|x| -x).unwrap();
        let m = mean_tensors(&[t.clone(), neg]).unwrap();
        assert!(m.values().iter().all(|&x| x == 0.0));

        let two = t.map(|x| 2.0 * x).unwrap();
        let four = t.map(|x| 4.0 * x).unwrap();
        let three = t.map(|x| 3.0 * x).unwrap();
        assert_eq!(mean_tensors(&[two, four]).unwrap(), three);

        assert!(mean_tensors(&[]).is_err());
        let other = tensor(vec![1], 1, 3, vec![0.0; 3]);
        assert!(matches!(
            mean_tensors(&[t, other]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn distance_examples() {
        let a = tensor(vec![0], 2, 2, vec![5.0, 0.0, 0.0, 0.0]);
        let z = ActivationTensor::zeros(vec![0], 2, 2).unwrap();
        assert_eq!(flat_l2_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(flat_l2_distance(&a, &z).unwrap(), 5.0);

        // unit perturbations in k = 3 distinct coordinates -> sqrt(3)
        let p = tensor(vec![0], 2, 2, vec![1.0, 0.0, 1.0, 1.0]);
        assert!((flat_l2_distance(&p, &z).unwrap() - 3f64.sqrt()).abs() < 1e-15);

        let b = ActivationTensor::zeros(vec![0], 1, 4).unwrap();
        assert!(flat_l2_distance(&a, &b).is_err());
    }

    #[test]
    fn mask_sites_round_trip() {
        let m = HeadMask::from_sites(vec![1, 2], 4, &[(1, 1), (2, 3), (0, 2)]).unwrap();
        assert_eq!(m.count_ones(), 2);
        assert_eq!(m.sites(), vec![(1, 1), (2, 3)]);
        assert!(m.get(0, 1) && m.get(1, 3));
        assert!(HeadMask::from_sites(vec![0], 2, &[(0, 2)]).is_err());
        assert!(HeadMask::new(vec![0], 2, vec![true]).is_err());
    }
}
