//! Scalar Gaussian kernel, Silverman bandwidths and log-domain accumulation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// `ln(2π) / 2`.
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Relative scale of the smallest admissible bandwidth.
pub const BANDWIDTH_FLOOR_SCALE: f64 = 1e-8;

/// Kernel smoothing scale for one feature. Always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Bandwidth(value))
        } else {
            Err(Error::Invariant(format!("bandwidth must be positive, got {value}")))
        }
    }

    /// Clamp `value` from below by the floor derived from `feature_std`.
    pub fn floored(value: f64, feature_std: f64) -> Self {
        let floor = bandwidth_floor(feature_std);
        if value.is_finite() && value > floor {
            Bandwidth(value)
        } else {
            Bandwidth(floor)
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Smallest bandwidth used for a feature with sample standard deviation `feature_std`.
pub fn bandwidth_floor(feature_std: f64) -> f64 {
    let scale = if feature_std.is_finite() && feature_std > 0.0 {
        feature_std
    } else {
        1.0
    };
    BANDWIDTH_FLOOR_SCALE * scale
}

fn check_finite(u: f64) -> Result<()> {
    if u.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("kernel argument {u}")))
    }
}

/// Standard normal density.
pub fn gaussian_kernel(u: f64) -> Result<f64> {
    check_finite(u)?;
    Ok((-0.5 * u * u - HALF_LN_2PI).exp())
}

pub fn log_gaussian_kernel(u: f64) -> Result<f64> {
    check_finite(u)?;
    Ok(log_gaussian_kernel_unchecked(u))
}

#[inline]
pub(crate) fn log_gaussian_kernel_unchecked(u: f64) -> f64 {
    -HALF_LN_2PI - 0.5 * u * u
}

/// Rule-of-thumb bandwidth `(4 σ⁵ / (3 n))^(1/5)`.
///
/// A zero standard deviation yields the floor and logs a warning; the
/// caller cannot smooth a constant feature.
pub fn silverman_bandwidth(sample_std: f64, n: usize) -> Result<Bandwidth> {
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "silverman bandwidth needs at least 2 samples, got {n}"
        )));
    }
    if !sample_std.is_finite() || sample_std < 0.0 {
        return Err(Error::Domain(format!("sample standard deviation {sample_std}")));
    }
    if sample_std == 0.0 {
        log::warn!("degenerate constant feature: bandwidth set to floor");
        return Ok(Bandwidth::floored(0.0, 0.0));
    }
    let h = (4.0 * sample_std.powi(5) / (3.0 * n as f64)).powf(0.2);
    Ok(Bandwidth::floored(h, sample_std))
}

/// `ln Σ exp(vᵢ)` with the max-shift trick.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("log_sum_exp of an empty sequence".into()));
    }
    Ok(log_sum_exp_unchecked(values))
}

pub(crate) fn log_sum_exp_unchecked(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    if values.len() == 1 {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian_kernel(0.0).unwrap(), 0.398_942_280_401_432_7);
        assert!((gaussian_kernel(1.0).unwrap() - 0.241_970_724_519_143_37).abs() < 1e-16);
        assert_eq!(gaussian_kernel(-1.0).unwrap(), gaussian_kernel(1.0).unwrap());
        assert!(gaussian_kernel(f64::NAN).is_err());
        assert!(log_gaussian_kernel(f64::INFINITY).is_err());
    }

    #[test]
    fn log_kernel_values() {
        assert!((log_gaussian_kernel(0.0).unwrap() + 0.918_938_533_2).abs() < 1e-10);
        assert!((log_gaussian_kernel(2.0).unwrap() + 2.918_938_533_2).abs() < 1e-10);
        let k = gaussian_kernel(1.3).unwrap();
        assert!((log_gaussian_kernel(1.3).unwrap().exp() - k).abs() < 1e-14);
    }

    #[test]
    fn kernel_integrates_to_one() {
        let step = 1e-3;
        let n = 20_000;
        // trapezoid on [-10, 10]
        let mut total = 0.0;
        for k in 0..=n {
            let u = -10.0 + k as f64 * step;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            total += w * gaussian_kernel(u).unwrap();
        }
        assert!((total * step - 1.0).abs() < 1e-6);
    }

    #[test]
    fn silverman_values() {
        let h = silverman_bandwidth(1.0, 350).unwrap().value();
        assert!((h - (4.0f64 / 1050.0).powf(0.2)).abs() < 1e-15);
        assert!((h - 0.32823).abs() < 1e-5);
        let h2 = silverman_bandwidth(2.0, 350).unwrap().value();
        assert!((h2 - 2.0 * h).abs() < 1e-14);
        let floor = silverman_bandwidth(0.0, 100).unwrap().value();
        assert_eq!(floor, bandwidth_floor(0.0));
        assert!(matches!(silverman_bandwidth(1.0, 1), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn log_sum_exp_values() {
        assert!(log_sum_exp(&[0.3f64.ln(), 0.7f64.ln()]).unwrap().abs() < 1e-15);
        let v = log_sum_exp(&[-1000.0, -1000.0]).unwrap();
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]).unwrap(), 0.0);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY; 3]).unwrap(), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(&[-3.25]).unwrap(), -3.25);
        assert!(log_sum_exp(&[]).is_err());
    }

    proptest! {
        #[test]
        fn silverman_monotone(s in 1e-3f64..1e3, ds in 1e-3f64..10.0, n in 2usize..5000, dn in 1usize..5000) {
            let base = silverman_bandwidth(s, n).unwrap().value();
            prop_assert!(silverman_bandwidth(s + ds, n).unwrap().value() > base);
            prop_assert!(silverman_bandwidth(s, n + dn).unwrap().value() < base);
        }

        #[test]
        fn log_sum_exp_bounds(v in proptest::collection::vec(-500.0f64..500.0, 1..40)) {
            let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = log_sum_exp(&v).unwrap();
            prop_assert!(lse >= max);
            prop_assert!(lse <= max + (v.len() as f64).ln() + 1e-12);
        }
    }
}
