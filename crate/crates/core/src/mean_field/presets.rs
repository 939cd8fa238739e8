//! Named interaction and terminal presets selectable from scenario files.

use std::collections::{BTreeMap, BTreeSet};

use super::{InteractionSpec, Kernel, MeanFlow, OuterDriver};
use crate::error::{validation, Error, Result};
use crate::regression::{DriverConstants, DriverSpec, TerminalSpec};

pub type Params = BTreeMap<String, f64>;

pub const INTERACTION_PRESETS: &[&str] = &[
    "null",
    "mean-linear",
    "mean-reversion",
    "convolution",
    "mean-kernel",
    "linear-y",
    "constant",
];

pub const TERMINAL_PRESETS: &[&str] = &["affine", "brownian", "constant", "running-max"];

/// Reads named parameters with defaults and rejects keys nobody asked for.
pub struct ParamReader<'a> {
    preset: &'a str,
    params: &'a Params,
    used: BTreeSet<&'static str>,
}

impl<'a> ParamReader<'a> {
    pub fn new(preset: &'a str, params: &'a Params) -> Self {
        Self {
            preset,
            params,
            used: BTreeSet::new(),
        }
    }

    pub fn get(&mut self, key: &'static str, default: f64) -> Result<f64> {
        self.used.insert(key);
        let v = self.params.get(key).copied().unwrap_or(default);
        if !v.is_finite() {
            return validation(format!("{}: parameter {key} must be finite", self.preset));
        }
        Ok(v)
    }

    pub fn non_negative(&mut self, key: &'static str, default: f64) -> Result<f64> {
        let v = self.get(key, default)?;
        if v < 0.0 {
            return validation(format!("{}: parameter {key} must be >= 0, got {v}", self.preset));
        }
        Ok(v)
    }

    pub fn finish(self) -> Result<()> {
        let unknown: Vec<&String> = self
            .params
            .keys()
            .filter(|k| !self.used.contains(k.as_str()))
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            validation(format!(
                "{}: unknown parameter(s) {:?}; accepted: {:?}",
                self.preset, unknown, self.used
            ))
        }
    }
}

fn unknown(name: &str, registered: &[&str]) -> Error {
    Error::UnknownPreset {
        name: name.to_string(),
        registered: registered.join(", "),
    }
}

/// Law of `E[Y_t]` in terms of the terminal mean `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeanRule {
    /// `g * exp(rate * (T - t))`
    Exponential(f64),
    /// `g + c * (T - t)`
    Drift(f64),
}

impl MeanRule {
    pub fn flow(&self, horizon: f64, terminal_mean: Option<f64>) -> MeanFlow {
        let Some(g) = terminal_mean else {
            return MeanFlow::default();
        };
        match *self {
            MeanRule::Exponential(r) => MeanFlow::new(move |t| g * (r * (horizon - t)).exp()),
            MeanRule::Drift(c) => MeanFlow::new(move |t| g + c * (horizon - t)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InteractionPreset {
    pub spec: InteractionSpec,
    pub mean_rule: MeanRule,
}

/// Builds a named interaction for `m`-dimensional `Y`; every preset acts
/// component-wise.
pub fn interaction(name: &str, params: &Params, m: usize) -> Result<InteractionPreset> {
    let mut r = ParamReader::new(name, params);
    let out = match name {
        "null" => InteractionPreset {
            spec: InteractionSpec::measure(DriverSpec::zero(m)),
            mean_rule: MeanRule::Exponential(0.0),
        },
        "mean-linear" => {
            let alpha = r.get("alpha", 0.5)?;
            let drv = DriverSpec::new("mean-linear", m, DriverConstants::uniform(alpha.abs()), move |a, out| {
                let mean = &a.law.expect("law argument").mean;
                for (o, v) in out.iter_mut().zip(mean) {
                    *o = alpha * v;
                }
            })
            .with_law();
            InteractionPreset {
                spec: InteractionSpec::measure(drv),
                mean_rule: MeanRule::Exponential(alpha),
            }
        }
        "mean-reversion" => {
            let kappa = r.non_negative("kappa", 1.0)?;
            let drv = DriverSpec::new("mean-reversion", m, DriverConstants::uniform(kappa), move |a, out| {
                let mean = &a.law.expect("law argument").mean;
                for ((o, v), y) in out.iter_mut().zip(mean).zip(a.y) {
                    *o = kappa * (v - y);
                }
            })
            .with_law();
            InteractionPreset {
                spec: InteractionSpec::measure(drv),
                mean_rule: MeanRule::Exponential(0.0),
            }
        }
        "convolution" => {
            // phi(x) = -kappa x, so f(y1, y2) = phi(y1 - y2) = kappa (y2 - y1)
            let kappa = r.non_negative("kappa", 1.0)?;
            let kernel = Kernel::new("convolution", m, kappa, move |_, y1, y2, _, out| {
                for ((o, a), b) in out.iter_mut().zip(y1).zip(y2) {
                    *o = kappa * (b - a);
                }
            })
            .with_average(move |_, y, _, law, out| {
                for ((o, a), b) in out.iter_mut().zip(y).zip(&law.mean) {
                    *o = kappa * (b - a);
                }
            });
            let outer = OuterDriver::new("identity", m, 1.0, |_, _, _, a, out| out.copy_from_slice(a));
            InteractionPreset {
                spec: InteractionSpec::linear(outer, kernel)?,
                mean_rule: MeanRule::Exponential(0.0),
            }
        }
        "mean-kernel" => {
            let alpha = r.get("alpha", 0.5)?;
            let kernel = Kernel::new("mean", m, 1.0, |_, _, y2, _, out| out.copy_from_slice(y2))
                .with_average(|_, _, _, law, out| out.copy_from_slice(&law.mean));
            let outer = OuterDriver::new("scaled", m, alpha.abs(), move |_, _, _, a, out| {
                for (o, v) in out.iter_mut().zip(a) {
                    *o = alpha * v;
                }
            });
            InteractionPreset {
                spec: InteractionSpec::linear(outer, kernel)?,
                mean_rule: MeanRule::Exponential(alpha),
            }
        }
        "linear-y" => {
            let a = r.get("a", 1.0)?;
            let drv = DriverSpec::new("linear-y", m, DriverConstants::uniform(a.abs()), move |args, out| {
                for (o, y) in out.iter_mut().zip(args.y) {
                    *o = a * y;
                }
            });
            InteractionPreset {
                spec: InteractionSpec::measure(drv),
                mean_rule: MeanRule::Exponential(a),
            }
        }
        "constant" => {
            let c = r.get("c", 1.0)?;
            let drv = DriverSpec::new("constant", m, DriverConstants::uniform(c.abs()), move |_, out| out.fill(c));
            InteractionPreset {
                spec: InteractionSpec::measure(drv),
                mean_rule: MeanRule::Drift(c),
            }
        }
        other => return Err(unknown(other, INTERACTION_PRESETS)),
    };
    r.finish()?;
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TerminalPreset {
    pub spec: TerminalSpec,
    /// `E[G]` (first component), when known in closed form.
    pub mean: Option<f64>,
}

/// Builds a named terminal map for `m`-dimensional `Y` driven by a
/// `d`-dimensional Brownian motion; component `a` reads coordinate `a mod d`.
pub fn terminal(name: &str, params: &Params, m: usize, d: usize) -> Result<TerminalPreset> {
    if d == 0 {
        return validation("Brownian dimension d must be at least 1");
    }
    let mut r = ParamReader::new(name, params);
    let out = match name {
        "affine" | "brownian" => {
            let (g0, s0) = if name == "affine" { (1.0, 0.25) } else { (0.0, 1.0) };
            let g = r.get("g", g0)?;
            let sigma = r.get("sigma", s0)?;
            let spec = TerminalSpec::new(name, m, f64::INFINITY, Some(sigma.abs()), move |a, out| {
                let w = a.path.terminal();
                for (c, o) in out.iter_mut().enumerate() {
                    *o = g + sigma * w[c % d];
                }
            });
            TerminalPreset { spec, mean: Some(g) }
        }
        "constant" => {
            let c = r.get("c", 1.0)?;
            TerminalPreset {
                spec: TerminalSpec::constant(m, c),
                mean: Some(c),
            }
        }
        "running-max" => {
            let g = r.get("g", 0.0)?;
            let sigma = r.get("sigma", 1.0)?;
            let spec = TerminalSpec::new(name, m, f64::INFINITY, Some(sigma.abs()), move |a, out| {
                for (c, o) in out.iter_mut().enumerate() {
                    let top = (0..a.path.nodes())
                        .map(|k| a.path.at(k)[c % d])
                        .fold(f64::NEG_INFINITY, f64::max);
                    *o = g + sigma * top;
                }
            });
            TerminalPreset { spec, mean: None }
        }
        other => return Err(unknown(other, TERMINAL_PRESETS)),
    };
    r.finish()?;
    Ok(out)
}
