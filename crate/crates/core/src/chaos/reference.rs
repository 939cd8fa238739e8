//! Reference curves and constants from the chaos and concentration bounds.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Free exponents of the moment bound: Wasserstein order `p`, intermediate
/// exponent `q`, moment order `k` of the terminal values, state dimension `m`
/// and particle count `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    pub p: f64,
    pub q: f64,
    pub k: f64,
    pub m: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateCase {
    /// `p > m/2`
    High,
    /// `p = m/2`
    Critical,
    /// `p < m/2`
    Low,
}

const TIE: f64 = 1e-12;

impl RateParams {
    pub fn case(&self) -> RateCase {
        let half = self.m as f64 / 2.0;
        if (self.p - half).abs() <= TIE {
            RateCase::Critical
        } else if self.p > half {
            RateCase::High
        } else {
            RateCase::Low
        }
    }

    pub fn validate(&self) -> Result<()> {
        let RateParams { p, q, k, m, n } = *self;
        if !(p.is_finite() && q.is_finite()) || k.is_nan() {
            return validation("rate parameters must be finite numbers");
        }
        if !(1.0..=2.0).contains(&p) {
            return validation(format!("Wasserstein order p must lie in [1, 2], got {p}"));
        }
        if !(p < q && q < k) {
            return validation(format!("rate parameters must satisfy p<q<k, got p={p}, q={q}, k={k}"));
        }
        if k < 2.0 {
            return validation(format!("moment order k must be >= 2, got {k}"));
        }
        if m == 0 {
            return validation("state dimension m must be at least 1");
        }
        if n == 0 {
            return validation("particle count n must be at least 1");
        }
        match self.case() {
            RateCase::High | RateCase::Critical if (q - 2.0 * p).abs() <= TIE => Err(Error::ExcludedCase(format!(
                "q = 2p is excluded when p >= m/2 (p={p}, q={q}, m={m})"
            ))),
            RateCase::Low if (q - m as f64 / (m as f64 - p)).abs() <= TIE => Err(Error::ExcludedCase(format!(
                "q = m/(m-p) is excluded when p < m/2 (p={p}, q={q}, m={m})"
            ))),
            _ => Ok(()),
        }
    }
}

/// `r_{n,m,q,p}` of the moment bound.
pub fn rate_reference(params: &RateParams) -> Result<f64> {
    params.validate()?;
    let n = params.n as f64;
    let tail = n.powf(-(params.q - params.p) / params.q);
    let head = match params.case() {
        RateCase::High => n.powf(-0.5),
        RateCase::Critical => n.powf(-0.5) * (1.0 + n).ln(),
        RateCase::Low => n.powf(-params.p / params.m as f64),
    };
    Ok(head + tail)
}

/// `n^{-p/(m+8)}` of the sup-in-time bound.
pub fn sup_reference(n: usize, p: f64, m: usize) -> f64 {
    (n as f64).powf(-p / (m as f64 + 8.0))
}

/// `n^{-p/(m+4)}`, available under `k > m + 5` moments.
pub fn high_moment_reference(n: usize, p: f64, m: usize) -> f64 {
    (n as f64).powf(-p / (m as f64 + 4.0))
}

/// Shape of `a_{n,eps}` with unit constant `c`.
pub fn a_envelope(n: usize, eps: f64, p: f64, m: usize) -> f64 {
    let n = n as f64;
    let half = m as f64 / 2.0;
    if (p - half).abs() <= TIE {
        let scaled = if eps > 0.0 { eps / (2.0 + 1.0 / eps).ln() } else { 0.0 };
        (-n * scaled * scaled).exp()
    } else if p > half {
        (-n * eps * eps).exp()
    } else {
        (-n * eps.powf(m as f64 / p)).exp()
    }
}

/// `b_{n,k,eps} = n (n eps)^{-(k - delta)/p}`.
pub fn b_envelope(n: usize, k: f64, eps: f64, p: f64, delta: f64) -> f64 {
    let n = n as f64;
    if k.is_infinite() {
        return if n * eps > 1.0 {
            0.0
        } else if n * eps == 1.0 {
            n
        } else {
            f64::INFINITY
        };
    }
    n * (n * eps).powf(-(k - delta) / p)
}

/// `exp(T e^{L_F T})`, the factor between system and i.i.d. distances.
pub fn coupling_constant(horizon: f64, lipschitz_f: f64) -> f64 {
    (horizon * (lipschitz_f * horizon).exp()).exp()
}

/// `eps_{F,T} = eps / exp(T e^{L_F T})`.
pub fn epsilon_ft(eps: f64, horizon: f64, lipschitz_f: f64) -> f64 {
    eps / coupling_constant(horizon, lipschitz_f)
}

/// Transport-inequality constant `2 (L_G + T L_F)^2 e^{2 T L_F}`.
pub fn talagrand_constant(lipschitz_g: f64, lipschitz_f: f64, horizon: f64) -> f64 {
    2.0 * (lipschitz_g + horizon * lipschitz_f).powi(2) * (2.0 * horizon * lipschitz_f).exp()
}

/// Unit-constant tail envelope `a 1{eps' <= 1} + b` at `eps' = eps_{F,T}`,
/// capped at 1.
pub fn tail_envelope(n: usize, eps: f64, p: f64, m: usize, k: f64, delta: f64, horizon: f64, lipschitz_f: f64) -> (f64, f64, f64) {
    let e = epsilon_ft(eps, horizon, lipschitz_f);
    let a = if e <= 1.0 { a_envelope(n, e, p, m) } else { 0.0 };
    let b = b_envelope(n, k, e, p, delta);
    (a, b, (a + b).min(1.0))
}
