//! Count distributions for the network heads.
//!
//! Each family has a negative log-likelihood with analytic gradients. Raw head
//! outputs pass through a softplus link, floored at [`PARAM_FLOOR`], so every
//! parameter is strictly positive.
//!
//! Head layout: Poisson uses one block of `C` raw outputs (rates). The two
//! parameter families use two blocks. Block 0 holds the mean (NB `m`,
//! Gaussian `mu`) and block 1 the shape (NB dispersion `r`, Gaussian `sigma`).

pub mod oracle;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::counts::ObjectHistogram;
use crate::error::{Error, Result};

/// Lower bound applied to every post-link parameter.
pub const PARAM_FLOOR: f64 = 1e-8;

/// Above this the softplus is evaluated as `x + exp(-x)`.
const SOFTPLUS_LINEAR_FROM: f64 = 30.0;

/// Below this count the gamma-function ratios are summed term by term.
const SERIES_MAX_K: u32 = 1000;

fn ensure_finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{what} is not finite: {x}")))
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> Result<f64> {
    ensure_finite(x, "softplus input")?;
    Ok(softplus_unchecked(x))
}

fn softplus_unchecked(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_FROM {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of [`softplus`]: the logistic function.
pub fn softplus_grad(x: f64) -> Result<f64> {
    ensure_finite(x, "softplus input")?;
    Ok(logistic(x))
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Post-link parameter and its derivative with respect to the raw output.
fn link(z: f64) -> (f64, f64) {
    let v = softplus_unchecked(z);
    if v > PARAM_FLOOR {
        (v, logistic(z))
    } else {
        (PARAM_FLOOR, 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "poisson")]
    Poisson,
    #[serde(rename = "nb")]
    NegBinomial,
    #[serde(rename = "gaussian")]
    Gaussian,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Poisson, Family::NegBinomial, Family::Gaussian];

    /// Number of `C`-wide output blocks the head emits.
    pub fn blocks(self) -> usize {
        match self {
            Family::Poisson => 1,
            Family::NegBinomial | Family::Gaussian => 2,
        }
    }

    /// Short identifier used on the command line and in file names.
    pub fn key(self) -> &'static str {
        match self {
            Family::Poisson => "poisson",
            Family::NegBinomial => "nb",
            Family::Gaussian => "gaussian",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Family::Poisson => "Poisson",
            Family::NegBinomial => "Neg. Binomial",
            Family::Gaussian => "Gaussian",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poisson" | "p" => Ok(Family::Poisson),
            "nb" | "negbinomial" | "neg-binomial" | "negative-binomial" => Ok(Family::NegBinomial),
            "gaussian" | "g" | "normal" => Ok(Family::Gaussian),
            other => Err(Error::Parameter(format!(
                "unknown family {other:?}; expected poisson, nb, or gaussian"
            ))),
        }
    }
}

/// Parameters of one category's distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CategoryParams {
    Poisson { rate: f64 },
    NegBinomial { dispersion: f64, mean: f64 },
    Gaussian { mean: f64, std_dev: f64 },
}

/// Per-category distribution parameters for one location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum CountParams {
    Poisson { rate: Vec<f64> },
    NegBinomial { dispersion: Vec<f64>, mean: Vec<f64> },
    Gaussian { mean: Vec<f64>, std_dev: Vec<f64> },
}

impl CountParams {
    /// Apply the link to `family.blocks() * categories` raw head outputs.
    pub fn from_raw(family: Family, raw: &[f64], categories: usize) -> Result<Self> {
        if raw.len() != family.blocks() * categories {
            return Err(Error::Shape(format!(
                "{family} head with {categories} categories needs {} raw outputs, got {}",
                family.blocks() * categories,
                raw.len()
            )));
        }
        if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite raw head output {bad}")));
        }
        let block = |b: usize| -> Vec<f64> {
            raw[b * categories..(b + 1) * categories]
                .iter()
                .map(|&z| link(z).0)
                .collect()
        };
        Ok(match family {
            Family::Poisson => CountParams::Poisson { rate: block(0) },
            Family::NegBinomial => CountParams::NegBinomial {
                mean: block(0),
                dispersion: block(1),
            },
            Family::Gaussian => CountParams::Gaussian {
                mean: block(0),
                std_dev: block(1),
            },
        })
    }

    pub fn family(&self) -> Family {
        match self {
            CountParams::Poisson { .. } => Family::Poisson,
            CountParams::NegBinomial { .. } => Family::NegBinomial,
            CountParams::Gaussian { .. } => Family::Gaussian,
        }
    }

    pub fn categories(&self) -> usize {
        match self {
            CountParams::Poisson { rate } => rate.len(),
            CountParams::NegBinomial { mean, .. } | CountParams::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn category(&self, c: usize) -> CategoryParams {
        match self {
            CountParams::Poisson { rate } => CategoryParams::Poisson { rate: rate[c] },
            CountParams::NegBinomial { dispersion, mean } => CategoryParams::NegBinomial {
                dispersion: dispersion[c],
                mean: mean[c],
            },
            CountParams::Gaussian { mean, std_dev } => CategoryParams::Gaussian {
                mean: mean[c],
                std_dev: std_dev[c],
            },
        }
    }

    fn check_lengths(&self) -> Result<()> {
        let ok = match self {
            CountParams::Poisson { .. } => true,
            CountParams::NegBinomial { dispersion, mean } => dispersion.len() == mean.len(),
            CountParams::Gaussian { mean, std_dev } => mean.len() == std_dev.len(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("parameter blocks differ in length".into()))
        }
    }
}

/// Distribution means: the rate, the NB mean, or the Gaussian mean.
pub fn expected_count(params: &CountParams) -> Vec<f64> {
    match params {
        CountParams::Poisson { rate } => rate.clone(),
        CountParams::NegBinomial { mean, .. } | CountParams::Gaussian { mean, .. } => mean.clone(),
    }
}

fn ln_factorial(k: u32) -> f64 {
    if k < 2 {
        return 0.0;
    }
    ln_gamma(f64::from(k) + 1.0)
}

/// Poisson NLL `rate - k ln(rate) + ln k!` and its derivative in `rate`.
pub fn nll_poisson(rate: f64, k: u32) -> Result<(f64, f64)> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::Domain(format!("Poisson rate must be positive, got {rate}")));
    }
    let kf = f64::from(k);
    Ok((rate - kf * rate.ln() + ln_factorial(k), 1.0 - kf / rate))
}

/// Negative-binomial NLL in mean–dispersion form and its gradient `(d/dr, d/dm)`.
///
/// `pmf(k) = G(k+r) / (k! G(r)) * (r/(r+m))^r * (m/(r+m))^k`, with mean `m`
/// and variance `m + m^2 / r`.
pub fn nll_negbinomial(dispersion: f64, mean: f64, k: u32) -> Result<(f64, [f64; 2])> {
    let (r, m) = (dispersion, mean);
    if !(r > 0.0) || !r.is_finite() || !(m > 0.0) || !m.is_finite() {
        return Err(Error::Domain(format!(
            "negative binomial needs positive dispersion and mean, got r={r}, m={m}"
        )));
    }
    let kf = f64::from(k);
    let rm = r + m;
    // ln p with p = r / (r + m)
    let ln_p = -(m / r).ln_1p();
    let (log_ratio, psi_diff) = if k < SERIES_MAX_K {
        // ln G(k+r) - ln G(r) - k ln(r+m) and psi(k+r) - psi(r) as finite sums
        let mut lr = 0.0;
        let mut pd = 0.0;
        for j in 0..k {
            let jf = f64::from(j);
            lr += ((jf - m) / rm).ln_1p();
            pd += 1.0 / (r + jf);
        }
        (lr, pd)
    } else {
        (
            ln_gamma(kf + r) - ln_gamma(r) - kf * rm.ln(),
            digamma(kf + r) - digamma(r),
        )
    };
    let log_pmf = log_ratio + kf * m.ln() - ln_factorial(k) + r * ln_p;
    let d_r = -(psi_diff + ln_p + (m - kf) / rm);
    let d_m = (r + kf) / rm - kf / m;
    Ok((-log_pmf, [d_r, d_m]))
}

/// Gaussian NLL evaluated at the integer count and its gradient `(d/dmu, d/dsigma)`.
pub fn nll_gaussian(mean: f64, std_dev: f64, k: u32) -> Result<(f64, [f64; 2])> {
    if !(std_dev > 0.0) || !std_dev.is_finite() || !mean.is_finite() {
        return Err(Error::Domain(format!(
            "Gaussian needs finite mean and positive std dev, got mu={mean}, sigma={std_dev}"
        )));
    }
    let resid = f64::from(k) - mean;
    let var = std_dev * std_dev;
    let value = 0.5 * (2.0 * std::f64::consts::PI).ln() + std_dev.ln() + resid * resid / (2.0 * var);
    let d_mu = -resid / var;
    let d_sigma = (1.0 - resid * resid / var) / std_dev;
    Ok((value, [d_mu, d_sigma]))
}

/// NLL of one category, dispatching on the family.
pub fn nll_category(params: CategoryParams, k: u32) -> Result<f64> {
    match params {
        CategoryParams::Poisson { rate } => nll_poisson(rate, k).map(|r| r.0),
        CategoryParams::NegBinomial { dispersion, mean } => {
            nll_negbinomial(dispersion, mean, k).map(|r| r.0)
        }
        CategoryParams::Gaussian { mean, std_dev } => nll_gaussian(mean, std_dev, k).map(|r| r.0),
    }
}

fn check_width(params: &CountParams, hist: &ObjectHistogram) -> Result<()> {
    params.check_lengths()?;
    if params.categories() != hist.categories() {
        return Err(Error::Shape(format!(
            "parameters cover {} categories, histogram has {}",
            params.categories(),
            hist.categories()
        )));
    }
    Ok(())
}

/// NLL of every category of one sample.
pub fn per_category_nll(params: &CountParams, hist: &ObjectHistogram) -> Result<Vec<f64>> {
    check_width(params, hist)?;
    hist.counts()
        .iter()
        .enumerate()
        .map(|(c, &k)| nll_category(params.category(c), k))
        .collect()
}

/// Mean NLL over the categories of one sample.
pub fn sample_nll(params: &CountParams, hist: &ObjectHistogram) -> Result<f64> {
    let per = per_category_nll(params, hist)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// [`sample_nll`] evaluated from raw head outputs, with its gradient with
/// respect to those outputs (same layout as `raw`).
pub fn sample_nll_raw(family: Family, raw: &[f64], hist: &ObjectHistogram) -> Result<(f64, Vec<f64>)> {
    let c = hist.categories();
    if c == 0 || raw.len() != family.blocks() * c {
        return Err(Error::Shape(format!(
            "{family} head with {c} categories needs {} raw outputs, got {}",
            family.blocks() * c,
            raw.len()
        )));
    }
    if let Some(bad) = raw.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite raw head output {bad}")));
    }
    let scale = 1.0 / c as f64;
    let mut grad = vec![0.0; raw.len()];
    let mut total = 0.0;
    for (i, &k) in hist.counts().iter().enumerate() {
        match family {
            Family::Poisson => {
                let (rate, d_rate) = link(raw[i]);
                let (v, g) = nll_poisson(rate, k)?;
                total += v;
                grad[i] = scale * g * d_rate;
            }
            Family::NegBinomial | Family::Gaussian => {
                let (loc, d_loc) = link(raw[i]);
                let (shape, d_shape) = link(raw[c + i]);
                let (v, [g_loc, g_shape]) = if family == Family::NegBinomial {
                    let (v, [g_r, g_m]) = nll_negbinomial(shape, loc, k)?;
                    (v, [g_m, g_r])
                } else {
                    nll_gaussian(loc, shape, k)?
                };
                total += v;
                grad[i] = scale * g_loc * d_loc;
                grad[c + i] = scale * g_shape * d_shape;
            }
        }
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::oracle::pmf_direct;
    use super::*;
    use crate::gradcheck::{central_difference, relative_error};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn softplus_reference_points() {
        assert!((softplus(0.0).unwrap() - LN2).abs() < 1e-15);
        assert!((softplus(100.0).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(softplus_grad(0.0).unwrap(), 0.5);
        assert!(softplus(f64::NAN).is_err());
        assert!(softplus_grad(f64::INFINITY).is_err());
        // both branches agree where they meet
        let below = 30.0f64.exp().ln_1p();
        assert!((softplus(30.0 + 1e-12).unwrap() - below).abs() < 1e-11);
    }

    #[test]
    fn poisson_values() {
        assert_eq!(nll_poisson(1.0, 0).unwrap().0, 1.0);
        // -ln(e^-2 * 2^2 / 2!) by direct multiplication
        let direct = -((-2.0f64).exp() * 4.0 / 2.0).ln();
        assert!((nll_poisson(2.0, 2).unwrap().0 - direct).abs() < 1e-12);
        assert!((direct - 1.306852819440055).abs() < 1e-12);
        assert_eq!(nll_poisson(5.0, 5).unwrap().1, 0.0);
        assert!(matches!(nll_poisson(0.0, 1), Err(Error::Domain(_))));
        assert!(nll_poisson(-1.0, 1).is_err());
    }

    #[test]
    fn poisson_minimum_is_at_k() {
        for k in 1..40u32 {
            let kf = f64::from(k);
            assert!(nll_poisson(kf * (1.0 - 1e-6), k).unwrap().1 < 0.0);
            assert!(nll_poisson(kf * (1.0 + 1e-6), k).unwrap().1 > 0.0);
        }
    }

    #[test]
    fn negbinomial_geometric_case() {
        // r = 1 is geometric with success probability 1/2 at m = 1: pmf(0) = 1/2
        let (v, _) = nll_negbinomial(1.0, 1.0, 0).unwrap();
        assert!((v - LN2).abs() < 1e-14);
        let direct = pmf_direct(CategoryParams::NegBinomial { dispersion: 1.0, mean: 1.0 }, 0).unwrap();
        assert!((v + direct.ln()).abs() < 1e-14);
    }

    #[test]
    fn negbinomial_poisson_limit() {
        let nb = nll_negbinomial(1e6, 2.0, 3).unwrap().0;
        let p = nll_poisson(2.0, 3).unwrap().0;
        assert!((nb - p).abs() < 1e-4, "{nb} vs {p}");
        assert!(nll_negbinomial(0.0, 1.0, 0).is_err());
        assert!(nll_negbinomial(1.0, -1.0, 0).is_err());
    }

    #[test]
    fn negbinomial_large_count_branch_is_continuous() {
        // the series and gamma-function routes must agree across the switch
        let (r, m) = (3.7, 900.0);
        let below = nll_negbinomial(r, m, SERIES_MAX_K - 1).unwrap();
        let above = nll_negbinomial(r, m, SERIES_MAX_K).unwrap();
        let step = (r + f64::from(SERIES_MAX_K - 1)) / f64::from(SERIES_MAX_K) * (m / (r + m));
        assert!(((below.0 - above.0) - step.ln()).abs() < 1e-8);
        let fd = central_difference(|x| nll_negbinomial(x, m, SERIES_MAX_K + 5).unwrap().0, r, 1e-5);
        let (_, g) = nll_negbinomial(r, m, SERIES_MAX_K + 5).unwrap();
        assert!(relative_error(g[0], fd, 1e-6) < 1e-6);
    }

    #[test]
    fn gaussian_values() {
        let (v, g) = nll_gaussian(1.0, 1.0, 1).unwrap();
        assert!((v - 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        assert_eq!(g[0], 0.0);
        let (v, _) = nll_gaussian(2.0, 0.5, 3).unwrap();
        let density = pmf_direct(CategoryParams::Gaussian { mean: 2.0, std_dev: 0.5 }, 3).unwrap();
        assert!((v + density.ln()).abs() < 1e-10);
        assert!(nll_gaussian(1.0, 0.0, 1).is_err());
    }

    #[test]
    fn sample_nll_is_category_mean() {
        let params = CountParams::Poisson { rate: vec![1.0; 4] };
        assert_eq!(sample_nll(&params, &ObjectHistogram::zeros(4)).unwrap(), 1.0);

        let one = CountParams::Gaussian { mean: vec![1.5], std_dev: vec![0.7] };
        let hist = ObjectHistogram::new(vec![2]);
        assert_eq!(sample_nll(&one, &hist).unwrap(), nll_gaussian(1.5, 0.7, 2).unwrap().0);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let c = rng.random_range(1..10);
            let dispersion: Vec<f64> = (0..c).map(|_| rng.random_range(0.1..20.0)).collect();
            let mean: Vec<f64> = (0..c).map(|_| rng.random_range(0.1..20.0)).collect();
            let counts: Vec<u32> = (0..c).map(|_| rng.random_range(0..30)).collect();
            let mut looped = 0.0;
            for i in 0..c {
                looped += nll_negbinomial(dispersion[i], mean[i], counts[i]).unwrap().0;
            }
            looped /= c as f64;
            let params = CountParams::NegBinomial { dispersion, mean };
            let got = sample_nll(&params, &ObjectHistogram::new(counts)).unwrap();
            assert!((got - looped).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_nll_rejects_width_mismatch() {
        let params = CountParams::Poisson { rate: vec![1.0; 3] };
        assert!(matches!(
            sample_nll(&params, &ObjectHistogram::zeros(4)),
            Err(Error::Shape(_))
        ));
        assert!(sample_nll_raw(Family::Gaussian, &[0.0; 3], &ObjectHistogram::zeros(2)).is_err());
    }

    #[test]
    fn raw_route_matches_param_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for family in Family::ALL {
            let c = 6;
            let raw: Vec<f64> = (0..family.blocks() * c).map(|_| rng.random_range(-3.0..3.0)).collect();
            let hist = ObjectHistogram::new((0..c).map(|_| rng.random_range(0..8)).collect());
            let params = CountParams::from_raw(family, &raw, c).unwrap();
            let (v, _) = sample_nll_raw(family, &raw, &hist).unwrap();
            assert!((v - sample_nll(&params, &hist).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_raw_outputs_link_to_ln2() {
        let params = CountParams::from_raw(Family::NegBinomial, &[0.0; 4], 2).unwrap();
        assert_eq!(expected_count(&params), vec![LN2; 2]);
        assert!(CountParams::from_raw(Family::Poisson, &[0.0; 3], 2).is_err());
        assert!(CountParams::from_raw(Family::Poisson, &[f64::NAN], 1).is_err());
    }

    #[test]
    fn floored_parameters_stay_positive() {
        let params = CountParams::from_raw(Family::Poisson, &[-800.0, -40.0], 2).unwrap();
        let CountParams::Poisson { rate } = params else { unreachable!() };
        assert_eq!(rate[0], PARAM_FLOOR);
        assert!(rate[1] > 0.0);
    }

    #[test]
    fn expected_counts_per_family() {
        assert_eq!(expected_count(&CountParams::Poisson { rate: vec![2.0, 3.0] }), vec![2.0, 3.0]);
        let nb = CountParams::NegBinomial { dispersion: vec![5.0], mean: vec![4.0] };
        assert_eq!(expected_count(&nb), vec![4.0]);
        let g = CountParams::Gaussian { mean: vec![1.2], std_dev: vec![9.0] };
        assert_eq!(expected_count(&g), vec![1.2]);
    }

    #[test]
    fn family_names_parse_back() {
        for f in Family::ALL {
            assert_eq!(f.key().parse::<Family>().unwrap(), f);
            let json = serde_json::to_string(&f).unwrap();
            assert_eq!(serde_json::from_str::<Family>(&json).unwrap(), f);
        }
        assert!("zip".parse::<Family>().is_err());
    }

    proptest! {
        #[test]
        fn softplus_bounds(x in -700.0f64..30.0) {
            let v = softplus(x).unwrap();
            prop_assert!(v > 0.0);
            prop_assert!(v > x);
            let g = softplus_grad(x).unwrap();
            prop_assert!(g > 0.0 && g < 1.0);
        }

        #[test]
        fn negbinomial_is_overdispersed(r in 1e-3f64..1e3, m in 1e-3f64..1e3) {
            prop_assert!(m + m * m / r > m);
        }

        #[test]
        fn raw_gradients_match_finite_differences(
            family in prop::sample::select(Family::ALL.to_vec()),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            k in 0u32..12,
        ) {
            let raw: Vec<f64> = [a, b][..family.blocks()].to_vec();
            let hist = ObjectHistogram::new(vec![k]);
            let (_, g) = sample_nll_raw(family, &raw, &hist).unwrap();
            for j in 0..raw.len() {
                let fd = central_difference(
                    |x| {
                        let mut r = raw.clone();
                        r[j] = x;
                        sample_nll_raw(family, &r, &hist).unwrap().0
                    },
                    raw[j],
                    1e-5,
                );
                prop_assert!(relative_error(g[j], fd, 1e-6) < 1e-6, "{family} raw {raw:?} k {k}: {} vs {fd}", g[j]);
            }
        }

        #[test]
        fn exp_neg_nll_is_the_pmf(
            rate in 0.01f64..30.0,
            r in 0.2f64..20.0,
            m in 0.01f64..20.0,
            mu in 0.0f64..15.0,
            sigma in 0.3f64..5.0,
            k in 0u32..60,
        ) {
            for params in [
                CategoryParams::Poisson { rate },
                CategoryParams::NegBinomial { dispersion: r, mean: m },
                CategoryParams::Gaussian { mean: mu, std_dev: sigma },
            ] {
                let via_nll = (-nll_category(params, k).unwrap()).exp();
                let direct = pmf_direct(params, k).unwrap();
                prop_assert!((via_nll - direct).abs() < 1e-10, "{params:?} k {k}: {via_nll} vs {direct}");
            }
        }

        #[test]
        fn poisson_minimum_straddles_k(k in 1u32..200) {
            let kf = f64::from(k);
            prop_assert!(nll_poisson(kf * (1.0 - 1e-9), k).unwrap().1 < 0.0);
            prop_assert!(nll_poisson(kf * (1.0 + 1e-9), k).unwrap().1 > 0.0);
        }

        // dispersion kept at or above max(1, m/4) so the tail past
        // mean + 40 sqrt(mean) is negligible
        #[test]
        fn truncated_sums_reach_one(mean in 0.5f64..20.0, r_scale in 0.0f64..1.0) {
            let upto = (mean + 40.0 * mean.sqrt()) as u32;
            let total: f64 = (0..=upto).map(|k| (-nll_poisson(mean, k).unwrap().0).exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "Poisson {mean}: {total}");
            let r = 1f64.max(mean / 4.0) * (1.0 + 20.0 * r_scale);
            let total: f64 = (0..=upto).map(|k| (-nll_negbinomial(r, mean, k).unwrap().0).exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9, "NB r={r} m={mean}: {total}");
        }
    }
}
