//! Power-law decay fits on log-log axes.

use serde::{Deserialize, Serialize};

use crate::error::{precondition, Result};
use crate::scalar::Real;

/// Least-squares power-law fit of a time series against a target exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport<T> {
    pub quantity: String,
    pub t_lo: T,
    pub t_hi: T,
    pub samples: usize,
    /// Slope actually used for the verdict.
    pub exponent: T,
    /// Slope of the raw series.
    pub exponent_raw: T,
    /// Slope after dividing by log(2 + t).
    pub exponent_corrected: T,
    /// Whether the verdict uses the log-corrected slope.
    pub log_correction: bool,
    /// RMS residual of the raw and corrected fits.
    pub residual_raw: T,
    pub residual_corrected: T,
    /// True when dividing by log(2 + t) reduces the fit residual.
    pub log_improves: bool,
    pub target: T,
    pub tolerance: T,
    pub pass: bool,
}

impl<T: Real> DecayReport<T> {
    pub fn summary(&self) -> String {
        format!(
            "{}: exponent {:.3} (target {:.2} ± {:.2}) on t ∈ [{}, {}] {}",
            self.quantity,
            self.exponent,
            self.target,
            self.tolerance,
            self.t_lo,
            self.t_hi,
            if self.pass { "pass" } else { "FAIL" }
        )
    }
}

/// Slope and RMS residual of the least-squares line through `(x, y)`.
fn line_fit<T: Real>(x: &[T], y: &[T]) -> (T, T) {
    let n = T::idx(x.len());
    let mx = x.iter().copied().fold(T::zero(), |a, b| a + b) / n;
    let my = y.iter().copied().fold(T::zero(), |a, b| a + b) / n;
    let (sxy, sxx) = x.iter().zip(y).fold((T::zero(), T::zero()), |(sxy, sxx), (&a, &b)| {
        (sxy + (a - mx) * (b - my), sxx + (a - mx) * (a - mx))
    });
    let slope = sxy / sxx;
    let ss = x.iter().zip(y).fold(T::zero(), |acc, (&a, &b)| {
        let e = b - my - slope * (a - mx);
        acc + e * e
    });
    (slope, (ss / n).sqrt())
}

/// Fits `value ≈ C t^p` (optionally `C t^p log(2+t)`) by least squares on
/// log-log axes and compares p with `target`.
pub fn fit_decay<T: Real>(
    quantity: &str,
    series: &[(T, T)],
    target: T,
    tolerance: T,
    log_correction: bool,
) -> Result<DecayReport<T>> {
    if series.len() < 8 {
        return precondition(format!("{quantity}: a decay fit needs at least 8 samples"));
    }
    if series.iter().any(|&(t, _)| !(t >= T::one())) {
        return precondition(format!("{quantity}: decay fits use times t ≥ 1"));
    }
    if series.iter().any(|&(_, v)| !(v > T::zero()) || !v.is_finite()) {
        return precondition(format!("{quantity}: decay fits need positive finite values"));
    }
    let two = T::lit(2.0);
    let x: Vec<T> = series.iter().map(|&(t, _)| t.ln()).collect();
    let raw: Vec<T> = series.iter().map(|&(_, v)| v.ln()).collect();
    let corrected: Vec<T> = series.iter().map(|&(t, v)| (v / (two + t).ln()).ln()).collect();
    let (p_raw, res_raw) = line_fit(&x, &raw);
    let (p_cor, res_cor) = line_fit(&x, &corrected);
    let exponent = if log_correction { p_cor } else { p_raw };
    let (t_lo, t_hi) = series
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &(t, _)| (lo.min(t), hi.max(t)));
    Ok(DecayReport {
        quantity: quantity.to_string(),
        t_lo,
        t_hi,
        samples: series.len(),
        exponent,
        exponent_raw: p_raw,
        exponent_corrected: p_cor,
        log_correction,
        residual_raw: res_raw,
        residual_corrected: res_cor,
        log_improves: res_cor < res_raw,
        target,
        tolerance,
        pass: (exponent - target).abs() <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn times() -> Vec<f64> {
        (0..12).map(|i| 10.0 * 10f64.powf(i as f64 / 11.0)).collect()
    }

    #[test]
    fn exact_power_law() {
        let s: Vec<(f64, f64)> = times().into_iter().map(|t| (t, t.powi(-3))).collect();
        let r = fit_decay("pure", &s, -3.0, 0.01, false).unwrap();
        assert!((r.exponent + 3.0).abs() < 1e-12);
        assert!(r.pass);
    }

    #[test]
    fn log_corrected_series() {
        let s: Vec<(f64, f64)> = times().into_iter().map(|t| (t, (2.0 + t).ln() / t.powi(3))).collect();
        let on = fit_decay("log", &s, -3.0, 0.02, true).unwrap();
        assert!((on.exponent + 3.0).abs() < 0.02);
        assert!(on.log_improves);
        let off = fit_decay("log", &s, -3.0, 0.02, false).unwrap();
        assert!(off.exponent > -3.0 && off.exponent < -2.7, "{}", off.exponent);
    }

    #[test]
    fn contract_errors() {
        let short: Vec<(f64, f64)> = (1..5).map(|i| (i as f64, 1.0)).collect();
        assert!(fit_decay("short", &short, -1.0, 0.1, false).is_err());
        let mut s: Vec<(f64, f64)> = times().into_iter().map(|t| (t, 1.0 / t)).collect();
        s[3].1 = 0.0;
        assert!(fit_decay("zero", &s, -1.0, 0.1, false).is_err());
        let early: Vec<(f64, f64)> = (0..10).map(|i| (0.5 + i as f64, 1.0)).collect();
        assert!(fit_decay("early", &early, 0.0, 0.1, false).is_err());
    }

    #[test]
    fn single_precision_fit() {
        let s: Vec<(f32, f32)> = (1..=10).map(|i| (i as f32, (i as f32).powi(-2))).collect();
        let r = fit_decay("f32", &s, -2.0f32, 1e-3, false).unwrap();
        assert!(r.pass);
    }

    proptest! {
        #[test]
        fn recovers_any_exponent(p in -6.0f64..0.0, c in 1e-3f64..1e3) {
            let s: Vec<(f64, f64)> = times().into_iter().map(|t| (t, c * t.powf(p))).collect();
            let r = fit_decay("prop", &s, p, 1e-9, false).unwrap();
            prop_assert!(r.pass);
        }
    }
}
