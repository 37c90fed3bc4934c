//! Query serving from a released task vector.
//!
//! Only a shared reference to the artifact is ever taken here, so serving
//! cannot touch the privacy receipt.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::example::Example;
use crate::model::ModelInterface;
use crate::privacy::PrivacyReceipt;
use crate::tensor::{ActivationTensor, HeadMask};

pub const FORMAT_VERSION: u32 = 1;

/// The released pair `(private mean, mask)` and what it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVectorArtifact {
    tv: ActivationTensor,
    mask: HeadMask,
    receipt: PrivacyReceipt,
    model_fingerprint: String,
    /// Selection variant label (`public`, `private`, `oracle`).
    variant: String,
    format_version: u32,
}

impl TaskVectorArtifact {
    pub fn new(
        tv: ActivationTensor,
        mask: HeadMask,
        receipt: PrivacyReceipt,
        model_fingerprint: impl Into<String>,
        variant: impl Into<String>,
    ) -> Result<Self> {
        mask.ensure_matches(&tv)?;
        Ok(Self {
            tv,
            mask,
            receipt,
            model_fingerprint: model_fingerprint.into(),
            variant: variant.into(),
            format_version: FORMAT_VERSION,
        })
    }

    pub fn tv(&self) -> &ActivationTensor {
        &self.tv
    }

    pub fn mask(&self) -> &HeadMask {
        &self.mask
    }

    pub fn receipt(&self) -> &PrivacyReceipt {
        &self.receipt
    }

    pub fn model_fingerprint(&self) -> &str {
        &self.model_fingerprint
    }

    pub fn variant(&self) -> &str {
        &self.variant
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    /// Same artifact with the mask replaced, e.g. by an all-zero mask.
    pub fn with_mask(&self, mask: HeadMask) -> Result<Self> {
        mask.ensure_matches(&self.tv)?;
        Ok(Self { mask, ..self.clone() })
    }

    fn check_model(&self, model: &dyn ModelInterface) -> Result<()> {
        let fp = model.fingerprint();
        if fp != self.model_fingerprint {
            return Err(Error::FingerprintMismatch {
                artifact: self.model_fingerprint.clone(),
                model: fp,
            });
        }
        Ok(())
    }
}

/// Label for `query` with the artifact's task vector injected at its mask.
pub fn serve_query(
    artifact: &TaskVectorArtifact,
    model: &dyn ModelInterface,
    query: &Example,
) -> Result<usize> {
    artifact.check_model(model)?;
    model.infer_injected(query, &artifact.mask, &artifact.tv)
}

/// Fraction of `eval_set` answered correctly by [`serve_query`].
pub fn evaluate(
    artifact: &TaskVectorArtifact,
    model: &dyn ModelInterface,
    eval_set: &[Example],
) -> Result<f64> {
    if eval_set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    artifact.check_model(model)?;
    let correct = eval_set
        .par_iter()
        .map(|q| Ok(usize::from(model.infer_injected(q, &artifact.mask, &artifact.tv)? == q.label)))
        .sum::<Result<usize>>()?;
    Ok(correct as f64 / eval_set.len() as f64)
}

/// Zero-shot accuracy of `model` on `eval_set`.
pub fn zero_shot_accuracy(model: &dyn ModelInterface, eval_set: &[Example]) -> Result<f64> {
    if eval_set.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let correct = eval_set
        .par_iter()
        .map(|q| Ok(usize::from(model.infer_zero_shot(q)? == q.label)))
        .sum::<Result<usize>>()?;
    Ok(correct as f64 / eval_set.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::RandomSeed;
    use crate::toy_model::{
        generate_dataset, Mapping, SteerableToyModel, SyntheticTask, ToyModelConfig,
    };

    fn setup() -> (SteerableToyModel, TaskVectorArtifact, Vec<Example>) {
        let m = SteerableToyModel::new(ToyModelConfig::default()).unwrap();
        let layers = m.all_layers();
        let tv = m.prototype_task_vector(Mapping::Flip, &layers).unwrap();
        let mut receipt = PrivacyReceipt::new();
        receipt.charge("gaussian_mean", 1.0, 1e-5).unwrap();
        let art = TaskVectorArtifact::new(tv, m.oracle_mask(&layers).unwrap(), receipt, m.fingerprint(), "oracle")
            .unwrap();
        let eval = generate_dataset(SyntheticTask::Flip, 200, 4, 0, &RandomSeed::new(4, "eval")).unwrap();
        (m, art, eval)
    }

    #[test]
    fn accuracy_extremes() {
        let (m, art, eval) = setup();
        assert_eq!(evaluate(&art, &m, &eval).unwrap(), 1.0);
        let inverted: Vec<Example> = eval
            .iter()
            .cloned()
            .map(|mut e| {
                e.label = 1 - e.label;
                e
            })
            .collect();
        assert_eq!(evaluate(&art, &m, &inverted).unwrap(), 0.0);
        assert!(evaluate(&art, &m, &[]).is_err());
    }

    #[test]
    fn zero_mask_matches_zero_shot() {
        let (m, art, eval) = setup();
        let zero = art.with_mask(HeadMask::zeros(m.all_layers(), 4).unwrap()).unwrap();
        for q in &eval {
            assert_eq!(serve_query(&zero, &m, q).unwrap(), m.infer_zero_shot(q).unwrap());
        }
        assert_eq!(evaluate(&zero, &m, &eval).unwrap(), zero_shot_accuracy(&m, &eval).unwrap());
    }

    #[test]
    fn queries_never_touch_receipt() {
        let (m, art, eval) = setup();
        let before = art.receipt().clone();
        for i in 0..1000 {
            let q = &eval[i % eval.len()];
            let a = serve_query(&art, &m, q).unwrap();
            assert_eq!(a, serve_query(&art, &m, q).unwrap());
        }
        assert_eq!(art.receipt(), &before);
        assert_eq!(art.receipt().total_eps().to_bits(), before.total_eps().to_bits());
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let (_, art, eval) = setup();
        let other = SteerableToyModel::new(ToyModelConfig { weight_seed: 1, ..Default::default() }).unwrap();
        assert!(matches!(serve_query(&art, &other, &eval[0]), Err(Error::FingerprintMismatch { .. })));
        assert!(evaluate(&art, &other, &eval).is_err());
    }
}
