//! Scenario files, run dispatch and result persistence.
//!
//! A scenario is a TOML document; every omitted field takes a default and
//! the fully resolved scenario is what gets hashed, echoed and recorded.

mod run;
pub mod svg;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chaos::RateParams;
use crate::error::{validation, Error, Result};
use crate::kernel::TimeGrid;
use crate::mean_field::presets::{interaction, terminal, Params};
use crate::mean_field::InteractionKind;
use crate::pde::presets::pde_scenario;
use crate::regression::{BasisSpec, PicardParams};

pub use run::{compute, run, ResultRecord, RunOutput, Subcommand, Table, SIDECAR_SCHEMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemKind {
    Interacting,
    LinearInteraction,
    Mkv,
    Pde,
}

/// Presets and dimensions. Unset presets are filled from the system kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Model {
    pub interaction: Option<String>,
    pub terminal: Option<String>,
    pub pde: Option<String>,
    /// `"gaussian"` replaces the solved system by i.i.d. Brownian values.
    pub oracle: Option<String>,
    /// Dimension of `Y`.
    pub m: usize,
    /// Brownian dimension (also the PDE state dimension).
    pub d: usize,
    pub interaction_params: Params,
    pub terminal_params: Params,
    pub pde_params: Params,
}

impl Default for Model {
    fn default() -> Self {
        Self {
            interaction: None,
            terminal: None,
            pde: None,
            oracle: None,
            m: 1,
            d: 1,
            interaction_params: Params::new(),
            terminal_params: Params::new(),
            pde_params: Params::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sizes {
    pub ns: Vec<usize>,
    pub cloud_size: usize,
    pub reference_cloud: usize,
    pub reps: usize,
    /// Minimum number of paths per system solve.
    pub batch: usize,
    /// Minimum number of joint realizations per system solve.
    pub min_scenarios: usize,
    /// Minimum cloud carrying an empirical law `L^n(xi)` in PDE comparisons.
    pub empirical_cloud: usize,
}

impl Default for Sizes {
    fn default() -> Self {
        Self {
            ns: vec![8, 16, 32, 64, 128, 256, 512],
            cloud_size: 4096,
            reference_cloud: 16384,
            reps: 64,
            batch: 8192,
            min_scenarios: 512,
            empirical_cloud: 512,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rates {
    pub p: f64,
    pub q: f64,
    pub k: f64,
    pub delta: Option<f64>,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            p: 1.0,
            q: 1.5,
            k: 4.0,
            delta: None,
        }
    }
}

/// Estimator-specific settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Study {
    /// Evaluation node of marginal statistics; `N/2` when unset.
    pub node: Option<usize>,
    /// Particle count of single-size runs (simulate, blocks, transport).
    pub n: usize,
    pub k_blocks: Vec<usize>,
    pub tail_epsilons: Vec<f64>,
    /// Threshold as this quantile of the distance distribution at the
    /// smallest `n`, used when `tail_epsilons` is empty.
    pub tail_quantile: Option<f64>,
    pub entropic_reg: f64,
    pub svg: bool,
}

impl Default for Study {
    fn default() -> Self {
        Self {
            node: None,
            n: 64,
            k_blocks: vec![1, 2, 4],
            tail_epsilons: Vec::new(),
            tail_quantile: None,
            entropic_reg: 0.05,
            svg: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub kind: SystemKind,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub model: Model,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub sizes: Sizes,
    #[serde(default)]
    pub rates: Rates,
    #[serde(default)]
    pub basis: BasisSpec,
    #[serde(default)]
    pub picard: PicardParams,
    #[serde(default)]
    pub study: Study,
}

fn default_seed() -> u64 {
    2024
}

pub const SEED_ENV: &str = "CHAOSLAB_SEED";

impl Scenario {
    /// Parses, fills defaults and validates.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut s: Scenario = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        s.fill_defaults();
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    fn fill_defaults(&mut self) {
        let m = &mut self.model;
        match self.kind {
            SystemKind::Pde => {
                m.pde.get_or_insert_with(|| "affine".into());
            }
            SystemKind::LinearInteraction => {
                m.interaction.get_or_insert_with(|| "mean-kernel".into());
                m.terminal.get_or_insert_with(|| "affine".into());
            }
            SystemKind::Interacting | SystemKind::Mkv => {
                m.interaction.get_or_insert_with(|| "mean-linear".into());
                m.terminal.get_or_insert_with(|| "affine".into());
            }
        }
        if self.study.node.is_none() {
            self.study.node = Some(self.grid.steps / 2);
        }
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.grid.horizon, self.grid.steps)
    }

    /// Dimension the rate curves are stated in.
    pub fn rate_dim(&self) -> usize {
        if self.model.oracle.is_some() || self.kind == SystemKind::Pde {
            self.model.d
        } else {
            self.model.m
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return validation("scenario name must not be empty");
        }
        let m = &self.model;
        if m.m == 0 || m.d == 0 {
            return validation("dimensions m and d must be at least 1");
        }
        let grid = self.time_grid()?;
        let z = &self.sizes;
        if z.ns.is_empty() || z.ns.contains(&0) {
            return validation("sizes.ns must be a non-empty list of positive particle counts");
        }
        if z.ns.windows(2).any(|w| w[0] >= w[1]) {
            return validation("sizes.ns must be strictly increasing");
        }
        if z.reps == 0 || z.batch == 0 {
            return validation("sizes.reps and sizes.batch must be at least 1");
        }
        if z.cloud_size < 2 || z.reference_cloud < 2 {
            return validation("cloud sizes must be at least 2");
        }
        if self.study.n == 0 {
            return validation("study.n must be at least 1");
        }
        if let Some(node) = self.study.node {
            if node > self.grid.steps {
                return validation(format!("study.node {node} exceeds the grid ({} steps)", self.grid.steps));
            }
        }
        if let Some(q) = self.study.tail_quantile {
            if !(q > 0.0 && q < 1.0) {
                return validation(format!("study.tail_quantile must lie in (0, 1), got {q}"));
            }
        }
        if self.study.tail_epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return validation("study.tail_epsilons must be finite and >= 0");
        }
        if self.study.k_blocks.iter().any(|&k| k == 0 || k > self.study.n) {
            return validation("study.k_blocks entries must lie in 1..=study.n");
        }
        if !(self.study.entropic_reg.is_finite() && self.study.entropic_reg > 0.0) {
            return validation("study.entropic_reg must be positive");
        }
        self.basis.validate()?;
        if !(self.picard.tol > 0.0) || self.picard.max_iters == 0 {
            return validation("picard.tol must be positive and picard.max_iters at least 1");
        }
        if let Some(delta) = self.rates.delta {
            if !(delta.is_finite() && delta >= 0.0) {
                return validation(format!("rates.delta must be finite and >= 0, got {delta}"));
            }
        }
        RateParams {
            p: self.rates.p,
            q: self.rates.q,
            k: self.rates.k,
            m: self.rate_dim(),
            n: 1,
        }
        .validate()?;
        if let Some(o) = &m.oracle {
            if o != "gaussian" {
                return Err(Error::UnknownPreset {
                    name: o.clone(),
                    registered: "gaussian".into(),
                });
            }
            if self.kind == SystemKind::Pde {
                return validation("the Gaussian oracle is not available for kind = \"pde\"");
            }
        }
        match self.kind {
            SystemKind::Pde => {
                pde_scenario(m.pde.as_deref().unwrap_or_default(), &m.pde_params, m.d, grid.horizon())?;
            }
            _ => {
                let i = interaction(m.interaction.as_deref().unwrap_or_default(), &m.interaction_params, m.m)?;
                terminal(m.terminal.as_deref().unwrap_or_default(), &m.terminal_params, m.m, m.d)?;
                if self.kind == SystemKind::LinearInteraction && i.spec.kind != InteractionKind::LinearF {
                    return validation(format!(
                        "kind = \"linear-interaction\" needs a linear-f preset (convolution, mean-kernel), got {}",
                        m.interaction.as_deref().unwrap_or_default()
                    ));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved scenario; field
    /// order in the source file does not matter.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("scenario serializes")))
    }
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    Scenario::from_toml(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
