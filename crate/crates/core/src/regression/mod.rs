//! Backward regression Monte Carlo for Lipschitz BSDEs.
//!
//! Explicit scheme on a uniform grid: starting from `y_N = G`, each step
//! projects `y_{k+1}` on a polynomial basis of the current state (plus shared
//! group statistics for interacting systems), estimates `z_k` from
//! `E[(y_{k+1} - yhat_k) dW_k | F_k] / dt`, and adds the driver increment.
//! [`Stepping::Euler`] uses `y_k = yhat_k + dt * F(t_k, x, yhat_k, zhat_k, law_k)`;
//! [`Stepping::Heun`] evaluates `F` again at that Euler value and averages
//! the two slopes (still explicit, second order in the `y` dependence).

mod engine;
pub mod lstsq;

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::kernel::{BrownianBundle, TimeGrid};
use crate::numeric::pairwise_sum;
use crate::transport::{wasserstein_1d, EmpiricalMeasure};

pub(crate) use engine::{Coupling, Sweep};
pub use engine::NodeFit;

/// Time stepping of the driver term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepping {
    Euler,
    #[default]
    Heun,
}

/// Regression basis: monomials of each state coordinate up to `degree`,
/// optionally extended by the scenario-mean of the state when particles
/// interact. Also carries the stepping rule used with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSpec {
    pub degree: usize,
    pub group_mean: bool,
    pub ridge: f64,
    pub condition_limit: f64,
    pub stepping: Stepping,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self {
            degree: 1,
            group_mean: true,
            ridge: 1e-8,
            condition_limit: 1e10,
            stepping: Stepping::Heun,
        }
    }
}

impl BasisSpec {
    pub fn with_degree(degree: usize) -> Self {
        Self {
            degree,
            ..Self::default()
        }
    }

    pub fn with_stepping(mut self, stepping: Stepping) -> Self {
        self.stepping = stepping;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.degree > 8 {
            return validation(format!("basis degree {} too large (max 8)", self.degree));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return validation("ridge parameter must be finite and non-negative");
        }
        if !(self.condition_limit > 1.0) {
            return validation("condition limit must exceed 1");
        }
        Ok(())
    }

    /// Number of regressors for a state of dimension `state_dim`.
    pub fn size(&self, state_dim: usize, grouped: bool) -> usize {
        1 + self.degree * state_dim + if grouped && self.group_mean { state_dim } else { 0 }
    }

    pub(crate) fn fill(&self, x: &[f64], group_mean: Option<&[f64]>, out: &mut [f64]) {
        out[0] = 1.0;
        let mut j = 1;
        for &v in x {
            let mut pw = 1.0;
            for _ in 0..self.degree {
                pw *= v;
                out[j] = pw;
                j += 1;
            }
        }
        if let Some(gm) = group_mean {
            for &v in gm {
                out[j] = v;
                j += 1;
            }
        }
    }
}

/// A measure together with its (canonically summed) mean.
#[derive(Debug, Clone)]
pub struct LawView {
    pub measure: EmpiricalMeasure,
    pub mean: Vec<f64>,
}

impl LawView {
    pub fn new(measure: EmpiricalMeasure) -> Self {
        let mean = measure.mean();
        Self { measure, mean }
    }

    /// Builds the view from atoms in label-independent order.
    pub fn canonical(measure: &EmpiricalMeasure) -> Self {
        Self::new(measure.canonical())
    }
}

/// Arguments of one driver evaluation.
pub struct DriverArgs<'a> {
    pub t: f64,
    pub state: &'a [f64],
    pub y: &'a [f64],
    /// Row-major `m x d`.
    pub z: &'a [f64],
    /// Law of `Y_t` (measure argument of the driver).
    pub law: Option<&'a LawView>,
    /// Law of the forward state at `t`.
    pub state_law: Option<&'a LawView>,
}

/// Declared Lipschitz and growth constants of a driver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverConstants {
    pub lipschitz_y: f64,
    pub lipschitz_z: f64,
    pub lipschitz_mu: f64,
    pub growth: f64,
}

impl DriverConstants {
    pub fn uniform(l: f64) -> Self {
        Self {
            lipschitz_y: l,
            lipschitz_z: l,
            lipschitz_mu: l,
            growth: l,
        }
    }

    /// The single constant `L_F` bounding all partial constants.
    pub fn overall(&self) -> f64 {
        self.lipschitz_y
            .max(self.lipschitz_z)
            .max(self.lipschitz_mu)
            .max(self.growth)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lipschitz_y", self.lipschitz_y),
            ("lipschitz_z", self.lipschitz_z),
            ("lipschitz_mu", self.lipschitz_mu),
            ("growth", self.growth),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return validation(format!("driver constant {name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }
}

type DriverFn = dyn Fn(&DriverArgs<'_>, &mut [f64]) + Send + Sync;

/// Generator `F(t, x, y, z, law)` with its declared metadata.
#[derive(Clone)]
pub struct DriverSpec {
    pub name: String,
    pub out_dim: usize,
    pub constants: DriverConstants,
    pub depends_on_z: bool,
    pub depends_on_law: bool,
    pub depends_on_state_law: bool,
    eval: Arc<DriverFn>,
}

impl std::fmt::Debug for DriverSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DriverSpec")
            .field("name", &self.name)
            .field("out_dim", &self.out_dim)
            .field("constants", &self.constants)
            .field("depends_on_z", &self.depends_on_z)
            .field("depends_on_law", &self.depends_on_law)
            .finish()
    }
}

impl DriverSpec {
    pub fn new(
        name: impl Into<String>,
        out_dim: usize,
        constants: DriverConstants,
        eval: impl Fn(&DriverArgs<'_>, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            out_dim,
            constants,
            depends_on_z: false,
            depends_on_law: false,
            depends_on_state_law: false,
            eval: Arc::new(eval),
        }
    }

    pub fn with_z(mut self) -> Self {
        self.depends_on_z = true;
        self
    }

    pub fn with_law(mut self) -> Self {
        self.depends_on_law = true;
        self
    }

    pub fn with_state_law(mut self) -> Self {
        self.depends_on_state_law = true;
        self
    }

    /// `F ≡ 0`.
    pub fn zero(out_dim: usize) -> Self {
        Self::new("zero", out_dim, DriverConstants::uniform(0.0), |_, out| out.fill(0.0))
    }

    #[inline]
    pub fn evaluate(&self, args: &DriverArgs<'_>, out: &mut [f64]) {
        (self.eval)(args, out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dim == 0 {
            return validation("driver output dimension must be at least 1");
        }
        self.constants.validate()
    }
}

/// Read-only view of one sample's state trajectory in node-major storage.
#[derive(Clone, Copy)]
pub struct PathRef<'a> {
    data: &'a [f64],
    sample: usize,
    samples: usize,
    dim: usize,
    nodes: usize,
}

impl<'a> PathRef<'a> {
    pub fn at(&self, k: usize) -> &'a [f64] {
        let off = (k * self.samples + self.sample) * self.dim;
        &self.data[off..off + self.dim]
    }

    pub fn terminal(&self) -> &'a [f64] {
        self.at(self.nodes - 1)
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

pub struct TerminalArgs<'a> {
    pub path: PathRef<'a>,
    /// Law of the terminal state, for measure-dependent terminal maps.
    pub law: Option<&'a LawView>,
}

type TerminalFn = dyn Fn(&TerminalArgs<'_>, &mut [f64]) + Send + Sync;

/// Terminal condition `G` as a functional of the discrete state path.
#[derive(Clone)]
pub struct TerminalSpec {
    pub name: String,
    pub out_dim: usize,
    /// Order `k` with `E|G|^k < inf`.
    pub moment_order: f64,
    /// Sup-norm path Lipschitz constant `L_G`, when `G` has one.
    pub lipschitz: Option<f64>,
    pub depends_on_law: bool,
    eval: Arc<TerminalFn>,
}

impl std::fmt::Debug for TerminalSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TerminalSpec")
            .field("name", &self.name)
            .field("out_dim", &self.out_dim)
            .field("moment_order", &self.moment_order)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl TerminalSpec {
    pub fn new(
        name: impl Into<String>,
        out_dim: usize,
        moment_order: f64,
        lipschitz: Option<f64>,
        eval: impl Fn(&TerminalArgs<'_>, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            out_dim,
            moment_order,
            lipschitz,
            depends_on_law: false,
            eval: Arc::new(eval),
        }
    }

    pub fn with_law(mut self) -> Self {
        self.depends_on_law = true;
        self
    }

    /// `G ≡ c` (every component).
    pub fn constant(out_dim: usize, c: f64) -> Self {
        Self::new("constant", out_dim, f64::INFINITY, Some(0.0), move |_, out| out.fill(c))
    }

    #[inline]
    pub fn evaluate(&self, args: &TerminalArgs<'_>, out: &mut [f64]) {
        (self.eval)(args, out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_dim == 0 {
            return validation("terminal output dimension must be at least 1");
        }
        if !(self.moment_order >= 2.0) {
            return validation(format!(
                "terminal moment order must be >= 2, got {}",
                self.moment_order
            ));
        }
        Ok(())
    }
}

/// State paths and driving increments in node-major layout.
///
/// Consecutive blocks of `group` samples form one interacting scenario.
#[derive(Debug, Clone)]
pub struct PathSet {
    grid: TimeGrid,
    samples: usize,
    group: usize,
    state_dim: usize,
    noise_dim: usize,
    /// `[(k * samples + s) * state_dim + c]`, `k = 0..=N`
    states: Vec<f64>,
    /// `[(k * samples + s) * noise_dim + c]`, `k = 0..N`
    noise: Vec<f64>,
}

impl PathSet {
    pub fn new(
        grid: TimeGrid,
        group: usize,
        state_dim: usize,
        noise_dim: usize,
        states: Vec<f64>,
        noise: Vec<f64>,
    ) -> Result<Self> {
        if state_dim == 0 || noise_dim == 0 || group == 0 {
            return validation("state dimension, noise dimension and group size must be positive");
        }
        let n = grid.steps();
        if states.len() % ((n + 1) * state_dim) != 0 {
            return Err(Error::Mismatch("state array does not match the grid".into()));
        }
        let samples = states.len() / ((n + 1) * state_dim);
        if samples == 0 || noise.len() != n * samples * noise_dim {
            return Err(Error::Mismatch("noise array does not match the state array".into()));
        }
        if samples % group != 0 {
            return Err(Error::Mismatch(format!(
                "{samples} samples do not split into groups of {group}"
            )));
        }
        Ok(Self {
            grid,
            samples,
            group,
            state_dim,
            noise_dim,
            states,
            noise,
        })
    }

    /// Brownian paths as states; the bundle's scenario grouping is kept.
    pub fn from_brownian(bundle: &BrownianBundle) -> Self {
        Self {
            grid: bundle.grid().clone(),
            samples: bundle.len(),
            group: bundle.particles(),
            state_dim: bundle.dim(),
            noise_dim: bundle.dim(),
            states: bundle.values_node_major(),
            noise: bundle.increments_node_major(),
        }
    }

    /// Same paths with every sample treated as its own scenario.
    pub fn ungrouped(mut self) -> Self {
        self.group = 1;
        self
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn group(&self) -> usize {
        self.group
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn state(&self, k: usize, s: usize) -> &[f64] {
        let off = (k * self.samples + s) * self.state_dim;
        &self.states[off..off + self.state_dim]
    }

    pub fn increment(&self, k: usize, s: usize) -> &[f64] {
        let off = (k * self.samples + s) * self.noise_dim;
        &self.noise[off..off + self.noise_dim]
    }

    pub fn path_ref(&self, s: usize) -> PathRef<'_> {
        PathRef {
            data: &self.states,
            sample: s,
            samples: self.samples,
            dim: self.state_dim,
            nodes: self.grid.steps() + 1,
        }
    }

    /// Cloud of states at node `k`.
    pub fn state_measure(&self, k: usize) -> EmpiricalMeasure {
        let off = k * self.samples * self.state_dim;
        EmpiricalMeasure::new(
            self.states[off..off + self.samples * self.state_dim].to_vec(),
            self.state_dim,
        )
        .expect("finite states")
    }
}

impl From<&BrownianBundle> for PathSet {
    fn from(bundle: &BrownianBundle) -> Self {
        PathSet::from_brownian(bundle)
    }
}

/// Per-step regression diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub node: usize,
    /// Root-mean-square projection residual of `y_{k+1}`.
    pub residual: f64,
    pub condition: f64,
    pub ridge: f64,
    pub ill_conditioned: bool,
    /// Sample mean of `|zhat_k|^2`.
    pub z_second_moment: f64,
}

/// Regression solution on `samples` scenarios.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub grid: TimeGrid,
    pub samples: usize,
    pub out_dim: usize,
    pub noise_dim: usize,
    /// `[(k * samples + s) * m + a]`, `k = 0..=N`
    pub y: Vec<f64>,
    /// `[(k * samples + s) * m * d + a * d + b]`, `k = 0..N`
    pub z: Vec<f64>,
    pub fits: Vec<NodeFit>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl BsdeSolution {
    pub fn y_at(&self, k: usize, s: usize) -> &[f64] {
        let off = (k * self.samples + s) * self.out_dim;
        &self.y[off..off + self.out_dim]
    }

    pub fn z_at(&self, k: usize, s: usize) -> &[f64] {
        let w = self.out_dim * self.noise_dim;
        let off = (k * self.samples + s) * w;
        &self.z[off..off + w]
    }

    pub fn y_node(&self, k: usize) -> &[f64] {
        let w = self.samples * self.out_dim;
        &self.y[k * w..(k + 1) * w]
    }

    /// Empirical law of `y` over all samples at node `k`.
    pub fn law_at(&self, k: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::new(self.y_node(k).to_vec(), self.out_dim).expect("finite solution")
    }

    pub fn law_flow(&self) -> Vec<EmpiricalMeasure> {
        (0..=self.grid.steps()).map(|k| self.law_at(k)).collect()
    }

    /// Sample mean of component `a` at node `k`.
    pub fn mean_at(&self, k: usize, a: usize) -> f64 {
        let vals: Vec<f64> = (0..self.samples).map(|s| self.y_at(k, s)[a]).collect();
        pairwise_sum(&vals) / self.samples as f64
    }

    pub fn mean_z_at(&self, k: usize, entry: usize) -> f64 {
        let vals: Vec<f64> = (0..self.samples).map(|s| self.z_at(k, s)[entry]).collect();
        pairwise_sum(&vals) / self.samples as f64
    }

    pub fn is_finite(&self) -> bool {
        self.y.iter().chain(&self.z).all(|v| v.is_finite())
    }

    pub fn warnings(&self) -> usize {
        self.diagnostics.iter().filter(|d| d.ill_conditioned).count()
    }

    /// `iteration,node,residual,condition` rows.
    pub fn write_diagnostics_csv(&self, out: &mut impl Write, iteration: usize) -> Result<()> {
        for d in &self.diagnostics {
            writeln!(out, "{iteration},{},{:e},{:e}", d.node, d.residual, d.condition)?;
        }
        Ok(())
    }
}

pub const DIAGNOSTICS_HEADER: &str = "iteration,node,residual,condition";

pub fn write_diagnostics(path: &Path, runs: &[&BsdeSolution]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{DIAGNOSTICS_HEADER}")?;
    for (i, sol) in runs.iter().enumerate() {
        sol.write_diagnostics_csv(&mut out, i + 1)?;
    }
    out.flush()?;
    Ok(())
}

fn check_problem(driver: &DriverSpec, terminal: &TerminalSpec, basis: &BasisSpec) -> Result<()> {
    driver.validate()?;
    terminal.validate()?;
    basis.validate()?;
    if driver.out_dim != terminal.out_dim {
        return Err(Error::Mismatch(format!(
            "driver dimension {} differs from terminal dimension {}",
            driver.out_dim, terminal.out_dim
        )));
    }
    Ok(())
}

fn check_flow(flow: &[EmpiricalMeasure], grid: &TimeGrid, out_dim: usize) -> Result<()> {
    if flow.len() != grid.steps() + 1 {
        return Err(Error::Mismatch(format!(
            "law flow has {} measures, grid has {} nodes",
            flow.len(),
            grid.steps() + 1
        )));
    }
    if flow.iter().any(|m| m.dim() != out_dim) {
        return Err(Error::Mismatch("law flow dimension differs from the driver's".into()));
    }
    Ok(())
}

/// Single backward regression pass with the law argument frozen to
/// `law_flow` (one measure per grid node). Samples are treated as
/// independent scenarios.
pub fn solve_backward(
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    paths: &PathSet,
    basis: &BasisSpec,
    law_flow: Option<&[EmpiricalMeasure]>,
) -> Result<BsdeSolution> {
    check_problem(driver, terminal, basis)?;
    if driver.depends_on_law && law_flow.is_none() {
        return Err(Error::MissingLawFlow);
    }
    if let Some(flow) = law_flow {
        check_flow(flow, paths.grid(), driver.out_dim)?;
    }
    let coupling = if driver.depends_on_state_law || terminal.depends_on_law {
        Coupling::Cloud
    } else {
        Coupling::Independent
    };
    Sweep {
        paths,
        coupling,
        driver,
        terminal,
        basis,
        law_flow,
    }
    .run()
}

/// Evaluates `G` on every sample.
pub fn terminal_values(terminal: &TerminalSpec, paths: &PathSet, coupling_cloud: bool) -> Vec<f64> {
    engine::terminal_values(terminal, paths, if coupling_cloud { Coupling::Cloud } else { Coupling::Independent })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardParams {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for PicardParams {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iters: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardStep {
    pub iteration: usize,
    /// Sup over nodes of `W_2` between successive law flows.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum PicardStatus {
    Converged { iterations: usize },
    NotConverged { iterations: usize, last_distance: f64 },
}

impl PicardStatus {
    pub fn converged(&self) -> bool {
        matches!(self, PicardStatus::Converged { .. })
    }

    pub fn iterations(&self) -> usize {
        match *self {
            PicardStatus::Converged { iterations } | PicardStatus::NotConverged { iterations, .. } => {
                iterations
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    pub solution: BsdeSolution,
    pub law_flow: Vec<EmpiricalMeasure>,
    pub log: Vec<PicardStep>,
    pub status: PicardStatus,
    /// Diagnostics of every pass, in order.
    pub passes: Vec<Vec<StepDiagnostics>>,
}

impl PicardOutcome {
    pub fn into_result(self) -> Result<Self> {
        match self.status {
            PicardStatus::Converged { .. } => Ok(self),
            PicardStatus::NotConverged {
                iterations,
                last_distance,
            } => Err(Error::NotConverged(format!(
                "Picard iteration stopped after {iterations} passes at W2 distance {last_distance:e}"
            ))),
        }
    }
}

/// `W_2` between two law flows: exact on the line; for `m > 1` the identity
/// coupling of the shared scenarios, which bounds `W_2` from above.
pub fn flow_distance(a: &[EmpiricalMeasure], b: &[EmpiricalMeasure]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x.len() != y.len() {
                return f64::INFINITY;
            }
            if x.dim() == 1 {
                wasserstein_1d(2.0, x.points(), y.points()).unwrap_or(f64::INFINITY)
            } else {
                let sq: Vec<f64> = x
                    .iter()
                    .zip(y.iter())
                    .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum())
                    .collect();
                (pairwise_sum(&sq) / x.len() as f64).sqrt()
            }
        })
        .fold(0.0, f64::max)
}

/// Fixed-point iteration on the law flow: solve with the current flow,
/// replace the flow by the empirical laws of the solution, repeat until the
/// sup-over-nodes `W_2` change drops below `tol`.
///
/// Without law dependence a single pass is exact and is reported as
/// converged after one iteration.
pub fn picard_iterate(
    driver: &DriverSpec,
    terminal: &TerminalSpec,
    paths: &PathSet,
    basis: &BasisSpec,
    initial_law_flow: Option<Vec<EmpiricalMeasure>>,
    params: PicardParams,
) -> Result<PicardOutcome> {
    check_problem(driver, terminal, basis)?;
    if !(params.tol > 0.0) {
        return validation("Picard tolerance must be positive");
    }
    if params.max_iters == 0 {
        return validation("Picard needs at least one iteration");
    }
    let coupling = if driver.depends_on_state_law || terminal.depends_on_law {
        Coupling::Cloud
    } else {
        Coupling::Independent
    };
    let sweep = |flow: Option<&[EmpiricalMeasure]>| {
        Sweep {
            paths,
            coupling,
            driver,
            terminal,
            basis,
            law_flow: flow,
        }
        .run()
    };

    if !driver.depends_on_law {
        let solution = sweep(None)?;
        let law_flow = solution.law_flow();
        let passes = vec![solution.diagnostics.clone()];
        return Ok(PicardOutcome {
            solution,
            law_flow,
            log: vec![PicardStep {
                iteration: 1,
                distance: 0.0,
            }],
            status: PicardStatus::Converged { iterations: 1 },
            passes,
        });
    }

    let mut flow = match initial_law_flow {
        Some(f) => {
            check_flow(&f, paths.grid(), driver.out_dim)?;
            f
        }
        None => {
            // Terminal law at every node.
            let g = terminal_values(terminal, paths, coupling == Coupling::Cloud);
            let m = EmpiricalMeasure::new(g, driver.out_dim)?;
            vec![m; paths.grid().steps() + 1]
        }
    };
    let mut log = Vec::new();
    let mut passes = Vec::new();
    let mut last = None;
    for it in 1..=params.max_iters {
        let solution = sweep(Some(&flow))?;
        let next = solution.law_flow();
        let distance = flow_distance(&flow, &next);
        log.push(PicardStep {
            iteration: it,
            distance,
        });
        passes.push(solution.diagnostics.clone());
        flow = next;
        let done = distance < params.tol;
        last = Some(solution);
        if done {
            return Ok(PicardOutcome {
                solution: last.unwrap(),
                law_flow: flow,
                log,
                status: PicardStatus::Converged { iterations: it },
                passes,
            });
        }
    }
    let last_distance = log.last().map(|s| s.distance).unwrap_or(f64::INFINITY);
    Ok(PicardOutcome {
        solution: last.expect("at least one pass"),
        law_flow: flow,
        log,
        status: PicardStatus::NotConverged {
            iterations: params.max_iters,
            last_distance,
        },
        passes,
    })
}

#[cfg(test)]
mod tests;
