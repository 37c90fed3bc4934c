//! Differential-privacy primitives.
//!
//! - Gaussian noise calibrated with the exact privacy curve of the Gaussian
//!   mechanism (the "analytic" calibration), found by monotone bisection.
//! - Gumbel-noise selection over a finite candidate list (report noisy min).
//!
//! Charges are recorded on a [`crate::privacy::PrivacyReceipt`] by the callers
//! in `construction` and `selection`, not here.

use rand_distr::{Distribution, Gumbel, StandardNormal};
use statrs::function::erf::erfc;

use crate::error::{invalid, Error, Result};
use crate::seed::RandomSeed;
use crate::tensor::ActivationTensor;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Classical Gaussian-mechanism scale `Δ·√(2 ln(1.25/δ))/ε`. Only a valid
/// calibration for `ε ≤ 1`; used as a ceiling and a bracketing hint.
pub fn classical_gaussian_sigma(sensitivity: f64, eps: f64, delta: f64) -> f64 {
    sensitivity * (2.0 * (1.25 / delta).ln()).sqrt() / eps
}

/// Smallest `δ` for which the Gaussian mechanism with noise `sigma` on a
/// query of L2 sensitivity `sensitivity` is `(eps, δ)`-DP:
///
/// `δ(ε) = Φ(Δ/(2σ) − εσ/Δ) − e^ε·Φ(−Δ/(2σ) − εσ/Δ)`.
pub fn exact_gaussian_delta(sigma: f64, sensitivity: f64, eps: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(invalid("sigma", format!("must be > 0, got {sigma}")));
    }
    if !(sensitivity > 0.0) {
        return Err(invalid("sensitivity", format!("must be > 0, got {sensitivity}")));
    }
    if !(eps >= 0.0) {
        return Err(invalid("eps", format!("must be >= 0, got {eps}")));
    }
    let a = sensitivity / (2.0 * sigma);
    let b = eps * sigma / sensitivity;
    let delta = std_normal_cdf(a - b) - eps.exp() * std_normal_cdf(-a - b);
    Ok(delta.clamp(0.0, 1.0))
}

/// Noise scale for the Gaussian mechanism at `(eps, delta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianCalibration {
    pub sensitivity: f64,
    pub eps: f64,
    pub delta: f64,
    pub sigma: f64,
}

/// Minimal `sigma` (to within `1e-12·sensitivity`) such that
/// `exact_gaussian_delta(sigma, sensitivity, eps) <= delta`.
pub fn calibrate_analytic_gaussian(
    sensitivity: f64,
    eps: f64,
    delta: f64,
) -> Result<GaussianCalibration> {
    if !(sensitivity >= 0.0 && sensitivity.is_finite()) {
        return Err(invalid(
            "sensitivity",
            format!("must be finite and >= 0, got {sensitivity}"),
        ));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid("eps", format!("must be finite and > 0, got {eps}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta", format!("must lie in (0, 1), got {delta}")));
    }
    if sensitivity == 0.0 {
        return Ok(GaussianCalibration {
            sensitivity,
            eps,
            delta,
            sigma: 0.0,
        });
    }

    let satisfies = |sigma: f64| -> Result<bool> {
        Ok(exact_gaussian_delta(sigma, sensitivity, eps)? <= delta)
    };

    let mut hi = classical_gaussian_sigma(sensitivity, eps, delta).max(sensitivity);
    while !satisfies(hi)? {
        hi *= 2.0;
    }
    // sigma -> 0 gives delta -> 1 > target, so 0 is a valid lower bracket.
    let mut lo = 0.0;
    let tol = 1e-12 * sensitivity;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if satisfies(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(GaussianCalibration {
        sensitivity,
        eps,
        delta,
        sigma: hi,
    })
}

/// Adds independent `N(0, sigma²)` noise to every coordinate.
pub fn add_gaussian_noise(
    t: &ActivationTensor,
    sigma: f64,
    seed: &RandomSeed,
) -> Result<ActivationTensor> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(invalid("sigma", format!("must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(t.clone());
    }
    let mut rng = seed.rng();
    t.map(|v| {
        let z: f64 = StandardNormal.sample(&mut rng);
        v + sigma * z
    })
}

/// Index of the smallest score after Gumbel perturbation.
///
/// The noise is the minimum-form Gumbel (`−scale·G` with `G` standard Gumbel),
/// so `P(i) = softmax(−scores/scale)_i`. With `scale == 0` this is a plain
/// argmin with ties going to the lowest index.
pub fn gumbel_select(scores: &[f64], scale: f64, seed: &RandomSeed) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Empty("gumbel_select needs at least one score"));
    }
    if let Some(bad) = scores.iter().find(|s| s.is_nan()) {
        return Err(invalid("scores", format!("contains {bad}")));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(invalid("scale", format!("must be finite and >= 0, got {scale}")));
    }
    if scale == 0.0 {
        return Ok(argmin(scores));
    }
    let gumbel = Gumbel::new(0.0, scale).expect("scale is positive and finite");
    let mut rng = seed.rng();
    let noisy: Vec<f64> = scores
        .iter()
        .map(|s| s - gumbel.sample(&mut rng))
        .collect();
    Ok(argmin(&noisy))
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_rejects_bad_inputs() {
        assert!(exact_gaussian_delta(0.0, 1.0, 1.0).is_err());
        assert!(exact_gaussian_delta(1.0, 0.0, 1.0).is_err());
        assert!(exact_gaussian_delta(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn delta_limits() {
        // vanishing sensitivity
        assert!(exact_gaussian_delta(1.0, 1e-12, 1.0).unwrap() < 1e-12);
        // overwhelming noise
        assert!(exact_gaussian_delta(1e6, 1.0, 1.0).unwrap() < 1e-10);
        // classical sigma is sufficient at eps = 1
        let classical = classical_gaussian_sigma(1.0, 1.0, 1e-5);
        assert!((classical - 4.8448).abs() < 1e-4);
        assert!(exact_gaussian_delta(4.8448, 1.0, 1.0).unwrap() <= 1e-5);
    }

    #[test]
    fn delta_strictly_decreasing_in_sigma() {
        for &eps in &[0.1, 0.5, 1.0, 2.0, 5.0] {
            let mut prev = f64::INFINITY;
            for i in 1..200 {
                let sigma = 0.05 * i as f64;
                let d = exact_gaussian_delta(sigma, 1.0, eps).unwrap();
                if d == 0.0 {
                    break;
                }
                assert!(d < prev, "eps={eps} sigma={sigma}: {d} !< {prev}");
                prev = d;
            }
        }
    }

    #[test]
    fn calibration_reference_point() {
        let cal = calibrate_analytic_gaussian(1.0, 1.0, 1e-5).unwrap();
        assert!(cal.sigma <= 4.8448);
        let d = exact_gaussian_delta(cal.sigma, 1.0, 1.0).unwrap();
        assert!((1e-5 - 1e-8..=1e-5).contains(&d), "delta at sigma {}: {d}", cal.sigma);
        // minimality: anything 1e-9 relatively smaller violates the target
        assert!(exact_gaussian_delta(cal.sigma * (1.0 - 1e-9), 1.0, 1.0).unwrap() > 1e-5);
    }

    #[test]
    fn calibration_zero_sensitivity_and_linearity() {
        assert_eq!(calibrate_analytic_gaussian(0.0, 1.0, 1e-5).unwrap().sigma, 0.0);
        for &(eps, delta) in &[(0.1, 1e-5), (1.0, 1e-6), (5.0, 1e-3)] {
            let one = calibrate_analytic_gaussian(1.0, eps, delta).unwrap().sigma;
            let two = calibrate_analytic_gaussian(2.0, eps, delta).unwrap().sigma;
            assert!((two - 2.0 * one).abs() <= 4e-12 * two, "{two} vs 2*{one}");
        }
    }

    #[test]
    fn calibration_never_worse_than_classical_for_small_eps() {
        for &eps in &[0.05, 0.1, 0.5, 1.0] {
            for &delta in &[1e-3, 1e-5, 1e-8] {
                let cal = calibrate_analytic_gaussian(1.0, eps, delta).unwrap();
                assert!(cal.sigma <= classical_gaussian_sigma(1.0, eps, delta));
            }
        }
    }

    #[test]
    fn calibration_rejects_bad_ranges() {
        assert!(calibrate_analytic_gaussian(-1.0, 1.0, 1e-5).is_err());
        assert!(calibrate_analytic_gaussian(1.0, 0.0, 1e-5).is_err());
        assert!(calibrate_analytic_gaussian(1.0, 1.0, 0.0).is_err());
        assert!(calibrate_analytic_gaussian(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn noise_zero_sigma_and_determinism() {
        let t = ActivationTensor::new(vec![0], 2, 2, vec![1.0, -2.0, 3.5, 0.0]).unwrap();
        let s = RandomSeed::new(3, "noise");
        assert_eq!(add_gaussian_noise(&t, 0.0, &s).unwrap(), t);
        let a = add_gaussian_noise(&t, 0.7, &s).unwrap();
        let b = add_gaussian_noise(&t, 0.7, &s).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, t);
        assert!(add_gaussian_noise(&t, -1.0, &s).is_err());
    }

    #[test]
    fn gumbel_edge_cases() {
        let s = RandomSeed::new(1, "g");
        assert!(gumbel_select(&[], 1.0, &s).is_err());
        assert_eq!(gumbel_select(&[3.0, 1.0, 1.0, 2.0], 0.0, &s).unwrap(), 1);
        assert_eq!(gumbel_select(&[5.0], 10.0, &s).unwrap(), 0);
        assert_eq!(gumbel_select(&[0.0, 100.0], 1e-6, &s).unwrap(), 0);
        assert!(gumbel_select(&[0.0, f64::NAN], 1.0, &s).is_err());
    }
}
