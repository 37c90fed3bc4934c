//! Privacy parameters and the append-only privacy receipt.

use crate::error::{invalid, Result};

/// Which pairs of datasets count as neighbours when calibrating noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighbourRelation {
    /// One record's chunk contribution is zeroed out; L2 sensitivity of the
    /// clipped mean is `√|S|·C/m`.
    #[default]
    ZeroOut,
    /// One record is replaced by another; the clipped chunk tensor can move
    /// to any point of the ball, doubling the sensitivity.
    ReplaceOne,
}

impl NeighbourRelation {
    pub fn sensitivity_factor(self) -> f64 {
        match self {
            NeighbourRelation::ZeroOut => 1.0,
            NeighbourRelation::ReplaceOne => 2.0,
        }
    }
}

/// Budget and clipping settings for one construction run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyParams {
    pub eps_tv: f64,
    /// Zero only for the public-data selection variant.
    pub eps_sel: f64,
    pub delta: f64,
    /// Per-layer activation clipping threshold.
    pub clip_c: f64,
    /// Per-example loss clipping threshold used when scoring masks.
    pub clip_sel: f64,
    pub neighbours: NeighbourRelation,
}

impl Default for PrivacyParams {
    fn default() -> Self {
        Self {
            eps_tv: 1.0,
            eps_sel: 0.0,
            delta: 1e-5,
            clip_c: 1.0,
            clip_sel: 1.0,
            neighbours: NeighbourRelation::ZeroOut,
        }
    }
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_tv > 0.0) {
            return Err(invalid("eps_tv", format!("must be > 0, got {}", self.eps_tv)));
        }
        if !(self.eps_sel >= 0.0) {
            return Err(invalid("eps_sel", format!("must be >= 0, got {}", self.eps_sel)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.clip_c > 0.0 && self.clip_c.is_finite()) {
            return Err(invalid("clip_c", format!("must be finite and > 0, got {}", self.clip_c)));
        }
        if !(self.clip_sel > 0.0 && self.clip_sel.is_finite()) {
            return Err(invalid(
                "clip_sel",
                format!("must be finite and > 0, got {}", self.clip_sel),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceiptEntry {
    pub mechanism: String,
    pub eps: f64,
    pub delta: f64,
}

/// Ledger of `(ε, δ)` charges, composed by basic (additive) composition.
///
/// Entries can only be appended; totals are the running sums of the entries
/// in append order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrivacyReceipt {
    entries: Vec<ReceiptEntry>,
    total_eps: f64,
    total_delta: f64,
}

impl PrivacyReceipt {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuilds a receipt from stored entries, recomputing the totals.
    pub fn from_entries(entries: impl IntoIterator<Item = ReceiptEntry>) -> Result<Self> {
        let mut receipt = Self::new();
        for e in entries {
            receipt.charge(e.mechanism, e.eps, e.delta)?;
        }
        Ok(receipt)
    }

    pub fn charge(&mut self, mechanism: impl Into<String>, eps: f64, delta: f64) -> Result<()> {
        if !(eps >= 0.0) {
            return Err(invalid("eps", format!("charge must be >= 0, got {eps}")));
        }
        if !(delta >= 0.0) {
            return Err(invalid("delta", format!("charge must be >= 0, got {delta}")));
        }
        self.entries.push(ReceiptEntry {
            mechanism: mechanism.into(),
            eps,
            delta,
        });
        self.total_eps += eps;
        self.total_delta += delta;
        Ok(())
    }

    pub fn entries(&self) -> &[ReceiptEntry] {
        &self.entries
    }

    pub fn total_eps(&self) -> f64 {
        self.total_eps
    }

    pub fn total_delta(&self) -> f64 {
        self.total_delta
    }
}

/// Returns `receipt` with one more `(eps, delta)` charge appended.
pub fn accountant_charge(
    mut receipt: PrivacyReceipt,
    name: &str,
    eps: f64,
    delta: f64,
) -> Result<PrivacyReceipt> {
    receipt.charge(name, eps, delta)?;
    Ok(receipt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charges_compose_additively() {
        let r = accountant_charge(PrivacyReceipt::new(), "gaussian_mean", 1.0, 1e-5).unwrap();
        assert_eq!((r.total_eps(), r.total_delta()), (1.0, 1e-5));
        let r = accountant_charge(r, "gumbel_selection", 0.5, 0.0).unwrap();
        assert_eq!((r.total_eps(), r.total_delta()), (1.5, 1e-5));
        assert_eq!(r.entries().len(), 2);
        let before = r.clone();
        let r = accountant_charge(r, "noop", 0.0, 0.0).unwrap();
        assert_eq!((r.total_eps(), r.total_delta()), (before.total_eps(), before.total_delta()));
        assert_eq!(&r.entries()[..2], before.entries());
    }

    #[test]
    fn negative_charges_rejected() {
        assert!(accountant_charge(PrivacyReceipt::new(), "x", -0.1, 0.0).is_err());
        assert!(accountant_charge(PrivacyReceipt::new(), "x", 0.1, -1e-9).is_err());
        assert!(accountant_charge(PrivacyReceipt::new(), "x", f64::NAN, 0.0).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(PrivacyParams::default().validate().is_ok());
        let bad = PrivacyParams { delta: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PrivacyParams { eps_tv: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PrivacyParams { clip_sel: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
