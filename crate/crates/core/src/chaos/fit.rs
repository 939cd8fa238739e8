//! Log-log least-squares rate fits.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{validation, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval of the slope.
    pub ci: (f64, f64),
}

/// Ordinary least squares of `log error` on `log n`.
pub fn fit_rate(ns: &[usize], errors: &[f64]) -> Result<RateFit> {
    if ns.len() != errors.len() {
        return validation("ns and errors differ in length");
    }
    if ns.len() < 4 {
        return validation(format!("a rate fit needs at least 4 points, got {}", ns.len()));
    }
    if let Some(e) = errors.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return validation(format!("rate fit needs positive finite errors, got {e}"));
    }
    if ns.contains(&0) {
        return validation("particle counts must be positive");
    }
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return validation("rate fit needs at least two distinct n");
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let se = (sse / (k - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, k - 2.0)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    Ok(RateFit {
        slope,
        intercept,
        ci: (slope - t * se, slope + t * se),
    })
}
