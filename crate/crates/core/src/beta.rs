//! Round-wise Beta model of OUI values.
//!
//! The server fits `Beta(α, β)` to the OUI values of the clients in a round by
//! the method of moments, evaluates the fitted CDF with a continued-fraction
//! expansion of the regularized incomplete beta function, and scores each
//! client by `2·min(F(o), 1 − F(o))`: 1 at the median, 0 in either tail.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oui::OuiValue;

pub const PARAM_MIN: f64 = 1e-3;
pub const PARAM_MAX: f64 = 1e6;
/// Variances at or below this are treated as zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Iteration cap inside the validated parameter range; larger parameters
/// get `sqrt(a + b)` iterations, which the expansion needs near the mean.
const CF_MAX_ITER: usize = 300;
const CF_TOLERANCE: f64 = 1e-14;
const CF_TINY: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    alpha: f64,
    beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && alpha > 0.0 && beta > 0.0) {
            return Err(Error::Input(format!(
                "Beta parameters must be positive and finite, got ({alpha}, {beta})"
            )));
        }
        Ok(BetaParams { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta;
        self.alpha * self.beta / (s * s * (s + 1.0))
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        regularized_incomplete_beta(x, self)
    }

    /// Point where the CDF crosses one half. Bisects on the bit pattern,
    /// which orders nonnegative doubles, so medians deep in the lower tail
    /// (tiny α) are found to the last bit.
    pub fn median(&self) -> Result<f64> {
        let (mut lo, mut hi) = (0u64, 1.0f64.to_bits());
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if self.cdf(f64::from_bits(mid))? < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // whichever neighbour sits closer to one half
        let (a, b) = (f64::from_bits(lo), f64::from_bits(hi));
        Ok(if (self.cdf(a)? - 0.5).abs() <= (self.cdf(b)? - 0.5).abs() { a } else { b })
    }
}

/// Outcome of fitting the round's OUI values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BetaFit {
    Fitted(BetaParams),
    /// Samples do not support a fit; every client scores 1.
    Degenerate,
}

impl BetaFit {
    pub fn params(&self) -> Option<BetaParams> {
        match self {
            BetaFit::Fitted(p) => Some(*p),
            BetaFit::Degenerate => None,
        }
    }
}

/// Method-of-moments fit using the population mean and variance.
pub fn fit_beta_moments(samples: &[f64]) -> Result<BetaFit> {
    if samples.is_empty() {
        return Err(Error::Input("cannot fit a Beta law to zero samples".into()));
    }
    if let Some(bad) = samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Input(format!("sample {bad} outside [0, 1]")));
    }
    let first = samples[0];
    if samples.iter().all(|&v| v == first) {
        return Ok(BetaFit::Degenerate);
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= VARIANCE_FLOOR || mean <= 0.0 || mean >= 1.0 {
        return Ok(BetaFit::Degenerate);
    }
    let common = mean * (1.0 - mean) / var - 1.0;
    let alpha = (mean * common).clamp(PARAM_MIN, PARAM_MAX);
    let beta = ((1.0 - mean) * common).clamp(PARAM_MIN, PARAM_MAX);
    Ok(BetaFit::Fitted(BetaParams::new(alpha, beta)?))
}

/// `ln Γ(a) + ln Γ(b) − ln Γ(a + b)`
fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Remainder of Stirling's series, `ln Γ(a) − (a − ½)ln a + a − ½ln 2π`.
fn stirling_correction(a: f64) -> f64 {
    let r = 1.0 / a;
    let r2 = r * r;
    r * (1.0 / 12.0
        - r2 * (1.0 / 360.0 - r2 * (1.0 / 1260.0 - r2 * (1.0 / 1680.0 - r2 / 1188.0))))
}

/// `ln(x^a (1 − x)^b / B(a, b))`.
///
/// For large parameters the lgamma terms cancel badly, so the leading
/// Stirling terms are folded into the powers of x and expanded around the
/// mean, `δ = x·b − (1 − x)·a`.
fn ln_beta_kernel(a: f64, b: f64, x: f64) -> f64 {
    if a.min(b) < 10.0 {
        return a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    }
    let delta = x * b - (1.0 - x) * a;
    a * (delta / a).ln_1p() + b * (-delta / b).ln_1p()
        + 0.5 * (a * b / (std::f64::consts::TAU * (a + b))).ln()
        - stirling_correction(a)
        - stirling_correction(b)
        + stirling_correction(a + b)
}

/// Regularized incomplete beta `I_x(α, β)`, the CDF of `Beta(α, β)` at `x`.
pub fn regularized_incomplete_beta(x: f64, p: &BetaParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Input(format!("CDF argument {x} outside [0, 1]")));
    }
    let (a, b) = (p.alpha, p.beta);
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let value = if x > (a + 1.0) / (a + b + 2.0) {
        1.0 - incomplete_beta_cf(b, a, 1.0 - x)?
    } else {
        incomplete_beta_cf(a, b, x)?
    };
    Ok(value.clamp(0.0, 1.0))
}

/// Lentz evaluation of the continued fraction for `I_x(a, b)`, valid (fast
/// converging) for `x < (a + 1)/(a + b + 2)`.
fn incomplete_beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    let ln_front = ln_beta_kernel(a, b, x);
    let front = ln_front.exp() / a;

    let guard = |v: f64| if v.abs() < CF_TINY { CF_TINY } else { v };
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - (a + b) * x / (a + 1.0));
    let mut f = d;
    let max_iter = CF_MAX_ITER.max((a + b).sqrt().ceil() as usize);
    for m in 1..=max_iter {
        let m = m as f64;
        let even = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 / guard(1.0 + even * d);
        c = guard(1.0 + even / c);
        f *= d * c;

        let odd = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 / guard(1.0 + odd * d);
        c = guard(1.0 + odd / c);
        let delta = d * c;
        f *= delta;
        if (delta - 1.0).abs() < CF_TOLERANCE {
            return Ok(front * f);
        }
    }
    Err(Error::Numeric(format!(
        "incomplete beta continued fraction did not converge in {max_iter} iterations \
         (x = {x}, a = {a}, b = {b})"
    )))
}

/// Bilateral typicality `2·min(F(o), 1 − F(o))` under the fitted law.
pub fn bilateral_score(o: OuiValue, p: &BetaParams) -> Result<f64> {
    let f = p.cdf(o.value())?;
    Ok(2.0 * f.min(1.0 - f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bp(a: f64, b: f64) -> BetaParams {
        BetaParams::new(a, b).unwrap()
    }

    #[test]
    fn median_deep_in_the_lower_tail() {
        // I_x(a, 1) = x^a, so the median is 2^(-1/a)
        let p = bp(0.01, 1.0);
        let m = p.median().unwrap();
        assert!((m / 0.5f64.powf(100.0) - 1.0).abs() < 1e-12, "{m:e}");
        let s = bilateral_score(OuiValue::new(m).unwrap(), &p).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_cdf_is_identity() {
        for &x in &[0.0, 0.1, 0.3, 0.5, 0.77, 1.0] {
            assert!((regularized_incomplete_beta(x, &bp(1.0, 1.0)).unwrap() - x).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_cdf_at_half() {
        for &a in &[0.01, 0.5, 2.0, 37.0, 5000.0, 1e6] {
            let v = regularized_incomplete_beta(0.5, &bp(a, a)).unwrap();
            assert!((v - 0.5).abs() < 1e-12, "a = {a}: {v}");
        }
    }

    #[test]
    fn closed_forms() {
        // I_x(a, 1) = x^a and I_x(1, b) = 1 - (1 - x)^b
        for &x in &[0.05, 0.4, 0.9] {
            let v = regularized_incomplete_beta(x, &bp(3.5, 1.0)).unwrap();
            assert!((v - x.powf(3.5)).abs() < 1e-13);
            let v = regularized_incomplete_beta(x, &bp(1.0, 0.25)).unwrap();
            assert!((v - (1.0 - (1.0 - x).powf(0.25))).abs() < 1e-13);
        }
    }

    #[test]
    fn argument_out_of_range() {
        assert!(regularized_incomplete_beta(1.5, &bp(1.0, 1.0)).is_err());
        assert!(regularized_incomplete_beta(-0.1, &bp(1.0, 1.0)).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(BetaParams::new(0.0, 1.0).is_err());
        assert!(BetaParams::new(1.0, f64::INFINITY).is_err());
        assert!(BetaParams::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn symmetric_samples_fit_equal_params() {
        let fit = fit_beta_moments(&[0.3, 0.7, 0.4, 0.6]).unwrap();
        let p = fit.params().unwrap();
        assert!((p.alpha() - p.beta()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fits() {
        assert_eq!(fit_beta_moments(&[0.3, 0.3, 0.3]).unwrap(), BetaFit::Degenerate);
        assert_eq!(fit_beta_moments(&[0.4]).unwrap(), BetaFit::Degenerate);
        assert_eq!(
            fit_beta_moments(&[0.5, 0.5 + 1e-9]).unwrap(),
            BetaFit::Degenerate
        );
        assert!(fit_beta_moments(&[]).is_err());
        assert!(fit_beta_moments(&[0.2, 1.2]).is_err());
    }

    #[test]
    fn fitted_moments_reproduce_sample_moments() {
        let xs = [0.21, 0.25, 0.27, 0.31, 0.36];
        let p = fit_beta_moments(&xs).unwrap().params().unwrap();
        let m = xs.iter().sum::<f64>() / 5.0;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 5.0;
        assert!((p.mean() - m).abs() < 1e-15);
        assert!((p.variance() - v).abs() / v < 1e-12);
    }

    #[test]
    fn overdispersed_samples_are_clamped() {
        // variance above m(1-m) would give negative parameters
        let p = fit_beta_moments(&[0.0, 0.0, 1.0, 1.0]).unwrap().params().unwrap();
        assert_eq!(p.alpha(), PARAM_MIN);
        assert_eq!(p.beta(), PARAM_MIN);
    }

    #[test]
    fn clamped_extreme_fit_still_evaluates() {
        for &(a, b) in &[(1e6, 1e6), (1e6, 3e5), (1e-3, 1e6)] {
            let p = bp(a, b);
            let m = p.mean();
            let v = p.cdf(m).unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn score_examples() {
        let p = bp(6.10, 15.94);
        let med = p.median().unwrap();
        let s = bilateral_score(OuiValue::new(med).unwrap(), &p).unwrap();
        assert!((s - 1.0).abs() < 1e-8);
        assert_eq!(bilateral_score(OuiValue::new(0.0).unwrap(), &p).unwrap(), 0.0);
        assert_eq!(bilateral_score(OuiValue::new(1.0).unwrap(), &p).unwrap(), 0.0);
    }
}
