//! Direct-formula probability evaluation, independent of the NLL code paths.
//!
//! These build pmfs by explicit products rather than log-gamma identities and
//! exist to cross-check [`super::nll_category`] in tests.

use super::CategoryParams;
use crate::error::{Error, Result};

/// Probability of count `k`, or the Gaussian density at `k`.
pub fn pmf_direct(params: CategoryParams, k: u32) -> Result<f64> {
    match params {
        CategoryParams::Poisson { rate } => {
            if !(rate > 0.0) {
                return Err(Error::Domain(format!("Poisson rate must be positive, got {rate}")));
            }
            // e^-rate * rate^k / k!, one factor at a time
            let mut p = (-rate).exp();
            for j in 1..=k {
                p *= rate / f64::from(j);
            }
            Ok(p)
        }
        CategoryParams::NegBinomial { dispersion: r, mean: m } => {
            if !(r > 0.0) || !(m > 0.0) {
                return Err(Error::Domain(format!(
                    "negative binomial needs positive parameters, got r={r}, m={m}"
                )));
            }
            let success = r / (r + m);
            let failure = m / (r + m);
            // C(k + r - 1, k) * failure^k, one factor at a time
            let mut p = success.powf(r);
            for j in 0..k {
                let jf = f64::from(j);
                p *= (r + jf) / (jf + 1.0) * failure;
            }
            Ok(p)
        }
        CategoryParams::Gaussian { mean, std_dev } => {
            if !(std_dev > 0.0) {
                return Err(Error::Domain(format!("Gaussian std dev must be positive, got {std_dev}")));
            }
            let z = (f64::from(k) - mean) / std_dev;
            Ok((-0.5 * z * z).exp() / (std_dev * (2.0 * std::f64::consts::PI).sqrt()))
        }
    }
}
