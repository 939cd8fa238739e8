//! PDE presets, all affine in `x` and in `mean(mu)` with scalar output:
//! `G(x, mu) = beta sum_c x_c + gamma sum_c mean_c(mu)`, optionally with
//! `F = a y` or the mean-reverting drift `B = kappa (mean(mu) - x)`.
//! Smooth, Lipschitz and with bounded constant diffusion by construction.

use super::{InitialLaw, PdeScenario};
use crate::error::{validation, Error, Result};
use crate::mean_field::presets::{ParamReader, Params};
use crate::regression::{DriverConstants, DriverSpec, TerminalSpec};

pub const PDE_PRESETS: &[&str] = &["affine", "discounted", "constant", "mean-reverting"];

/// Builds a named scenario in state dimension `d` on `[0, horizon]`.
///
/// Shared parameters: `sigma` (1), `xi_mean` (0), `xi_std` (1; 0 gives a
/// point mass).
pub fn pde_scenario(name: &str, params: &Params, d: usize, horizon: f64) -> Result<PdeScenario> {
    if d == 0 {
        return validation("state dimension d must be at least 1");
    }
    let mut r = ParamReader::new(name, params);
    let sigma = r.get("sigma", 1.0)?;
    let xi_mean = r.get("xi_mean", 0.0)?;
    let xi_std = r.non_negative("xi_std", 1.0)?;
    let initial = if xi_std == 0.0 {
        InitialLaw::Point { value: xi_mean }
    } else {
        InitialLaw::Gaussian {
            mean: xi_mean,
            std: xi_std,
        }
    };
    let affine = |r: &mut ParamReader| -> Result<(f64, f64)> { Ok((r.get("beta", 1.0)?, r.get("gamma", 1.0)?)) };
    let out = match name {
        "affine" | "discounted" => {
            let (beta, gamma) = affine(&mut r)?;
            let a = if name == "discounted" { r.get("a", 0.5)? } else { 0.0 };
            let driver = if a == 0.0 {
                DriverSpec::zero(1)
            } else {
                DriverSpec::new("discount", 1, DriverConstants::uniform(a.abs()), move |args, out| {
                    out[0] = a * args.y[0];
                })
            };
            PdeScenario::new(name, d, horizon, sigma, driver, affine_terminal(beta, gamma), initial).with_exact(
                move |t, x, mean| {
                    let g = beta * x.iter().sum::<f64>() + gamma * mean.iter().sum::<f64>();
                    vec![(a * (horizon - t)).exp() * g]
                },
            )
        }
        "mean-reverting" => {
            let (beta, gamma) = affine(&mut r)?;
            let kappa = r.non_negative("kappa", 1.0)?;
            PdeScenario::new(name, d, horizon, sigma, DriverSpec::zero(1), affine_terminal(beta, gamma), initial)
                .with_drift(kappa == 0.0, move |_, x, mean, out| {
                    for ((o, x), m) in out.iter_mut().zip(x).zip(mean) {
                        *o = kappa * (m - x);
                    }
                })
                .with_exact(move |t, x, mean| {
                    let decay = (-kappa * (horizon - t)).exp();
                    let pulled: f64 = x.iter().zip(mean).map(|(x, m)| m + decay * (x - m)).sum();
                    vec![beta * pulled + gamma * mean.iter().sum::<f64>()]
                })
        }
        "constant" => {
            let c = r.get("c", 1.0)?;
            PdeScenario::new(name, d, horizon, sigma, DriverSpec::zero(1), TerminalSpec::constant(1, c), initial)
                .with_exact(move |_, _, _| vec![c])
        }
        other => {
            return Err(Error::UnknownPreset {
                name: other.to_string(),
                registered: PDE_PRESETS.join(", "),
            })
        }
    };
    r.finish()?;
    Ok(out)
}

fn affine_terminal(beta: f64, gamma: f64) -> TerminalSpec {
    let spec = TerminalSpec::new("affine", 1, f64::INFINITY, Some(beta.abs() + gamma.abs()), move |a, out| {
        let x = a.path.terminal();
        let mean = a.law.map_or(0.0, |l| l.mean.iter().sum::<f64>());
        out[0] = beta * x.iter().sum::<f64>() + gamma * mean;
    });
    if gamma == 0.0 {
        spec
    } else {
        spec.with_law()
    }
}
