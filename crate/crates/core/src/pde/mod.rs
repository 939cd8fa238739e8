//! Finite-dimensional approximation of the master equation on Wasserstein
//! space, checked through the probabilistic representations of both sides.
//!
//! `v^{i,n}(t, x_1..x_n)` is read off the interacting particle FBSDE and
//! `V(t, x, mu)` off the McKean-Vlasov FBSDE, whose forward law is carried
//! by a self-interacting cloud. Coefficients see the measure through its
//! mean only, so both value functions are regressions on `(x, mean)`.

pub mod presets;

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos::{fit_rate, rate_reference, RateFit, RateParams};
use crate::error::{validation, Error, Result};
use crate::kernel::{BrownianBundle, CounterRng, TimeGrid};
use crate::numeric::mean_and_stderr;
use crate::regression::{
    BasisSpec, BsdeSolution, Coupling, DriverArgs, DriverSpec, LawView, NodeFit, PathSet, Stepping, Sweep,
    TerminalSpec,
};
use crate::transport::EmpiricalMeasure;

/// `eps_n` of the finite-dimensional approximation in state dimension `d`.
pub fn epsilon_cd(n: usize, d: usize) -> Result<f64> {
    if n == 0 || d == 0 {
        return validation(format!("epsilon_n needs n >= 1 and d >= 1, got n={n}, d={d}"));
    }
    let n = n as f64;
    Ok(match d {
        1..=3 => n.powf(-0.5),
        4 => n.powf(-0.5) * n.ln(),
        _ => n.powf(-2.0 / d as f64),
    })
}

/// Law of the initial condition `xi`, i.i.d. across coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum InitialLaw {
    Gaussian { mean: f64, std: f64 },
    Point { value: f64 },
}

impl InitialLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            InitialLaw::Gaussian { mean, .. } => mean,
            InitialLaw::Point { value } => value,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            InitialLaw::Gaussian { std, .. } => std * std,
            InitialLaw::Point { .. } => 0.0,
        }
    }

    /// Both laws have moments of every order.
    pub fn moment_order(&self) -> f64 {
        f64::INFINITY
    }

    fn sample(&self, rng: &mut CounterRng, out: &mut [f64]) {
        for o in out {
            *o = match *self {
                InitialLaw::Gaussian { mean, std } => mean + std * rng.normal(),
                InitialLaw::Point { value } => value,
            };
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            InitialLaw::Gaussian { mean, std } if !(mean.is_finite() && std.is_finite() && std >= 0.0) => {
                validation(format!("initial law needs finite mean and std >= 0, got ({mean}, {std})"))
            }
            InitialLaw::Point { value } if !value.is_finite() => validation("initial point must be finite"),
            _ => Ok(()),
        }
    }
}

type DriftFn = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync;
type ValueFn = dyn Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// Coefficients `B(x, mu)`, `sigma`, `F`, `G` of the master equation and the
/// law of `xi`. `B` and `V` see `mu` through its mean.
#[derive(Clone)]
pub struct PdeScenario {
    pub name: String,
    pub d: usize,
    pub horizon: f64,
    /// Constant diffusion `sigma I`.
    pub sigma: f64,
    drift: Option<Arc<DriftFn>>,
    pub driver: DriverSpec,
    /// Receives the law of `X_T` when it depends on the measure.
    pub terminal: TerminalSpec,
    pub initial: InitialLaw,
    /// `G` and `B` ignore the measure.
    pub measure_free: bool,
    exact: Option<Arc<ValueFn>>,
}

impl std::fmt::Debug for PdeScenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PdeScenario")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("horizon", &self.horizon)
            .field("sigma", &self.sigma)
            .field("driver", &self.driver)
            .field("terminal", &self.terminal.name)
            .field("initial", &self.initial)
            .field("measure_free", &self.measure_free)
            .finish()
    }
}

impl PdeScenario {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        horizon: f64,
        sigma: f64,
        driver: DriverSpec,
        terminal: TerminalSpec,
        initial: InitialLaw,
    ) -> Self {
        Self {
            name: name.into(),
            d,
            horizon,
            sigma,
            drift: None,
            measure_free: !terminal.depends_on_law && !driver.depends_on_state_law,
            driver,
            terminal,
            initial,
            exact: None,
        }
    }

    /// `B(t, x, mean(mu), out)`.
    pub fn with_drift(mut self, measure_free: bool, b: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(b));
        self.measure_free &= measure_free;
        self
    }

    /// Closed form `V(t, x, mean(mu))`.
    pub fn with_exact(mut self, v: impl Fn(f64, &[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.exact = Some(Arc::new(v));
        self
    }

    pub fn exact(&self, t: f64, x: &[f64], mean: &[f64]) -> Option<Vec<f64>> {
        self.exact.as_ref().map(|v| v(t, x, mean))
    }

    pub fn out_dim(&self) -> usize {
        self.driver.out_dim
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        if self.d == 0 {
            return validation("state dimension d must be at least 1");
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return validation(format!("sigma must be positive and finite, got {}", self.sigma));
        }
        if (grid.horizon() - self.horizon).abs() > 1e-12 {
            return Err(Error::Mismatch(format!(
                "scenario horizon {} differs from grid horizon {}",
                self.horizon,
                grid.horizon()
            )));
        }
        if self.driver.depends_on_law {
            return validation("drivers depending on the law of Y are not supported by the PDE bridge");
        }
        if self.driver.out_dim != self.terminal.out_dim {
            return Err(Error::Mismatch("driver and terminal dimensions differ".into()));
        }
        self.initial.validate()
    }
}

const INITIAL_DOMAIN: u64 = 1 << 63;
const SYSTEM_REPLICATION: u64 = 0;
const MASTER_REPLICATION: u64 = 1;
const EMPIRICAL_REPLICATION: u64 = 2;

/// Draws of `xi` for every path of the bundle, keyed by the path's stream.
pub fn initial_points(initial: &InitialLaw, bundle: &BrownianBundle) -> Vec<f64> {
    let d = bundle.dim();
    let domain = INITIAL_DOMAIN | bundle.replication_id();
    let mut out = vec![0.0; bundle.len() * d];
    out.par_chunks_mut(d)
        .zip(bundle.streams().par_iter())
        .for_each(|(o, &stream)| {
            let mut rng = CounterRng::new(bundle.seed(), domain, stream);
            initial.sample(&mut rng, o);
        });
    out
}

/// Euler-Maruyama for `dX = B(X, mean L^g(X)) dt + sigma dW`, every
/// scenario of the bundle interacting through its own empirical mean.
fn forward(scenario: &PdeScenario, init: &[f64], bundle: &BrownianBundle) -> Result<PathSet> {
    let grid = bundle.grid().clone();
    let (steps, dt) = (grid.steps(), grid.dt());
    let d = scenario.d;
    if bundle.dim() != d {
        return Err(Error::Mismatch(format!(
            "bundle dimension {} differs from scenario dimension {d}",
            bundle.dim()
        )));
    }
    let samples = bundle.len();
    if init.len() != samples * d {
        return Err(Error::Mismatch("initial points do not match the bundle".into()));
    }
    let g = bundle.particles();
    let noise = bundle.increments_node_major();
    let mut states = vec![0.0; (steps + 1) * samples * d];
    states[..samples * d].copy_from_slice(init);
    let width = samples * d;
    for k in 0..steps {
        let (head, tail) = states.split_at_mut((k + 1) * width);
        let cur = &head[k * width..];
        let next = &mut tail[..width];
        let dw = &noise[k * width..(k + 1) * width];
        let t = grid.time(k);
        next.par_chunks_mut(g * d)
            .zip(cur.par_chunks(g * d))
            .zip(dw.par_chunks(g * d))
            .for_each(|((nx, cx), w)| {
                let mean = scenario.drift.as_ref().map(|_| {
                    LawView::canonical(&EmpiricalMeasure::new(cx.to_vec(), d).expect("finite states")).mean
                });
                let mut b = vec![0.0; d];
                for ((o, x), w) in nx.chunks_mut(d).zip(cx.chunks(d)).zip(w.chunks(d)) {
                    if let (Some(f), Some(mean)) = (&scenario.drift, &mean) {
                        f(t, x, mean, &mut b);
                    }
                    for c in 0..d {
                        o[c] = x[c] + b[c] * dt + scenario.sigma * w[c];
                    }
                }
            });
    }
    if states.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotConverged("forward pass produced non-finite states".into()));
    }
    PathSet::new(grid, g, d, d, states, noise)
}

/// Solved forward-backward system on a bundle whose scenarios are
/// independent groups of interacting paths.
#[derive(Debug, Clone)]
pub struct FbsdeSolution {
    /// Paths per group.
    pub group: usize,
    pub groups: usize,
    pub paths: PathSet,
    pub solution: BsdeSolution,
    basis: BasisSpec,
    driver: DriverSpec,
}

impl FbsdeSolution {
    fn path(&self, s: usize, i: usize) -> usize {
        s * self.group + i
    }

    /// `X` of path `i` of group `s` at node `k`.
    pub fn state(&self, k: usize, s: usize, i: usize) -> &[f64] {
        self.paths.state(k, self.path(s, i))
    }

    /// `Y` of path `i` of group `s` at node `k`.
    pub fn value(&self, k: usize, s: usize, i: usize) -> &[f64] {
        self.solution.y_at(k, self.path(s, i))
    }

    /// Initial points of group `s`, `group x d`.
    pub fn initial(&self, s: usize) -> Vec<f64> {
        (0..self.group).flat_map(|i| self.state(0, s, i).to_vec()).collect()
    }

    /// Canonical mean of the states of group `s` at node `k`.
    pub fn state_mean(&self, k: usize, s: usize) -> Vec<f64> {
        self.state_law(k, s).mean
    }

    fn state_law(&self, k: usize, s: usize) -> LawView {
        let d = self.paths.state_dim();
        let off = (k * self.paths.samples() + s * self.group) * d;
        let pts = self.paths.states()[off..off + self.group * d].to_vec();
        LawView::canonical(&EmpiricalMeasure::new(pts, d).expect("finite states"))
    }

    /// Regression read-out of the value at state `x` under the law of group
    /// `s` at node `k < N`: the fitted conditional expectation followed by
    /// the solver's own time step.
    pub fn evaluate(&self, k: usize, x: &[f64], s: usize) -> Result<Vec<f64>> {
        let steps = self.paths.grid().steps();
        if k >= steps {
            return validation(format!("read-out needs a node below {steps}, got {k}"));
        }
        if s >= self.groups {
            return validation(format!("group {s} out of range ({} groups)", self.groups));
        }
        if x.len() != self.paths.state_dim() {
            return Err(Error::Mismatch("evaluation point has the wrong dimension".into()));
        }
        let fit: &NodeFit = &self.solution.fits[k];
        let law = self.state_law(k, s);
        let (y_hat, z_hat) = fit.predict(&self.basis, x, Some(&law.mean));
        let dt = self.paths.grid().dt();
        let t = self.paths.grid().time(k);
        let slope = |y: &[f64]| {
            let mut out = vec![0.0; y.len()];
            let args = DriverArgs {
                t,
                state: x,
                y,
                z: &z_hat,
                law: None,
                state_law: self.driver.depends_on_state_law.then_some(&law),
            };
            self.driver.evaluate(&args, &mut out);
            out
        };
        let f1 = slope(&y_hat);
        let euler: Vec<f64> = y_hat.iter().zip(&f1).map(|(y, f)| y + dt * f).collect();
        Ok(match self.basis.stepping {
            Stepping::Euler => euler,
            Stepping::Heun => {
                let f2 = slope(&euler);
                y_hat
                    .iter()
                    .zip(f1.iter().zip(&f2))
                    .map(|(y, (a, b))| y + 0.5 * dt * (a + b))
                    .collect()
            }
        })
    }
}

fn solve_groups(
    scenario: &PdeScenario,
    init: &[f64],
    bundle: &BrownianBundle,
    basis: &BasisSpec,
    coupling: Coupling,
) -> Result<FbsdeSolution> {
    scenario.validate(bundle.grid())?;
    scenario.driver.validate()?;
    scenario.terminal.validate()?;
    basis.validate()?;
    let paths = forward(scenario, init, bundle)?;
    let solution = Sweep {
        paths: &paths,
        coupling,
        driver: &scenario.driver,
        terminal: &scenario.terminal,
        basis,
        law_flow: None,
    }
    .run()?;
    Ok(FbsdeSolution {
        group: bundle.particles(),
        groups: bundle.scenarios(),
        paths,
        solution,
        basis: *basis,
        driver: scenario.driver.clone(),
    })
}

/// n-particle FBSDE: `xi` i.i.d. from the initial law for every particle of
/// every scenario, particles interacting through `L^n(X)`.
/// `v^{i,n}(0, xi)` is `value(0, s, i)`.
pub fn solve_particle_fbsde(
    scenario: &PdeScenario,
    n: usize,
    bundle: &BrownianBundle,
    basis: &BasisSpec,
) -> Result<FbsdeSolution> {
    if bundle.particles() != n {
        return Err(Error::Mismatch(format!(
            "bundle has {} particles per scenario, expected {n}",
            bundle.particles()
        )));
    }
    let init = initial_points(&scenario.initial, bundle);
    solve_groups(scenario, &init, bundle, basis, Coupling::Groups)
}

/// McKean-Vlasov FBSDE on clouds of `cloud_size` paths started i.i.d. from
/// the initial law; the forward law is the cloud's own empirical measure.
/// `evaluate(k, x, s)` gives `V(t_k, x, mu_{t_k})`.
pub fn solve_master_fbsde(
    scenario: &PdeScenario,
    cloud_size: usize,
    bundle: &BrownianBundle,
    basis: &BasisSpec,
) -> Result<FbsdeSolution> {
    if cloud_size < 2 {
        return validation(format!("cloud size must be at least 2, got {cloud_size}"));
    }
    if bundle.particles() != cloud_size {
        return Err(Error::Mismatch(format!(
            "bundle has {} paths per cloud, cloud size is {cloud_size}",
            bundle.particles()
        )));
    }
    let init = initial_points(&scenario.initial, bundle);
    solve_groups(scenario, &init, bundle, basis, cloud_coupling(bundle))
}

fn cloud_coupling(bundle: &BrownianBundle) -> Coupling {
    if bundle.scenarios() == 1 {
        Coupling::Cloud
    } else {
        Coupling::Groups
    }
}

/// McKean-Vlasov FBSDE started from the empirical measure of `atoms[s]`
/// (rows of length `d`) in scenario `s`; path `i` of a cloud starts at atom
/// `i mod n_s`, so the cloud size must be a multiple of every atom count.
pub fn solve_master_on_laws(
    scenario: &PdeScenario,
    atoms: &[Vec<f64>],
    bundle: &BrownianBundle,
    basis: &BasisSpec,
) -> Result<FbsdeSolution> {
    let (c, d) = (bundle.particles(), scenario.d);
    if atoms.len() != bundle.scenarios() {
        return Err(Error::Mismatch(format!(
            "{} laws for {} clouds",
            atoms.len(),
            bundle.scenarios()
        )));
    }
    let mut init = Vec::with_capacity(bundle.len() * d);
    for a in atoms {
        if a.is_empty() || a.len() % d != 0 || c % (a.len() / d) != 0 {
            return Err(Error::Mismatch(format!(
                "cloud size {c} is not a multiple of the atom count of a law with {} coordinates",
                a.len()
            )));
        }
        let n = a.len() / d;
        for i in 0..c {
            init.extend_from_slice(&a[(i % n) * d..(i % n + 1) * d]);
        }
    }
    if c < 2 {
        return validation("clouds need at least 2 paths");
    }
    solve_groups(scenario, &init, bundle, basis, cloud_coupling(bundle))
}

/// Sizes and seeds of a PDE comparison.
#[derive(Debug, Clone)]
pub struct PdeSetup {
    pub scenario: PdeScenario,
    pub grid: TimeGrid,
    pub basis: BasisSpec,
    pub seed: u64,
    /// Minimum number of paths per particle solve.
    pub batch: usize,
    /// Minimum number of joint realizations per particle solve.
    pub min_scenarios: usize,
    /// Cloud carrying the limit law `mu`.
    pub cloud_size: usize,
    /// Minimum cloud for the laws `L^n(xi)`, rounded up to a multiple of `n`.
    pub empirical_cloud: usize,
    /// Intermediate exponent `q` of `r_{n,d,k,2}`; `None` picks
    /// `(2 + k)/2` (3 for unbounded moments).
    pub q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeComparison {
    pub n: usize,
    pub reps: usize,
    /// `E|v^{1,n}(0, xi_1..xi_n) - V(0, xi_1, mu)|^2`.
    pub gap: f64,
    pub stderr: f64,
    /// `E|v^{1,n}(0, xi) - V(0, xi_1, L^n(xi))|^2`.
    pub empirical_gap: f64,
    pub empirical_stderr: f64,
    pub epsilon_n: f64,
    pub epsilon_n_plus_r: Option<f64>,
    /// Same gap with both sides replaced by the closed form, when known.
    pub oracle_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeStudy {
    pub comparisons: Vec<PdeComparison>,
    /// `None` when a gap is not positive.
    pub fit: Option<RateFit>,
}

/// Pre-solved limit side of a comparison.
pub struct PdeLab {
    setup: PdeSetup,
    master: FbsdeSolution,
}

impl PdeLab {
    pub fn new(setup: PdeSetup) -> Result<Self> {
        setup.scenario.validate(&setup.grid)?;
        let bundle = BrownianBundle::batched(
            setup.seed,
            MASTER_REPLICATION,
            setup.cloud_size,
            1,
            setup.scenario.d,
            &setup.grid,
        )?;
        let master = solve_master_fbsde(&setup.scenario, setup.cloud_size, &bundle, &setup.basis)?;
        Ok(Self { setup, master })
    }

    pub fn setup(&self) -> &PdeSetup {
        &self.setup
    }

    pub fn master(&self) -> &FbsdeSolution {
        &self.master
    }

    fn q(&self) -> f64 {
        let k = self.setup.scenario.initial.moment_order();
        self.setup
            .q
            .unwrap_or(if k.is_finite() { (2.0 + k) / 2.0 } else { 3.0 })
    }

    pub fn references(&self, n: usize) -> Result<(f64, Option<f64>)> {
        let d = self.setup.scenario.d;
        let eps = epsilon_cd(n, d)?;
        let r = rate_reference(&RateParams {
            p: 2.0,
            q: self.q(),
            k: self.setup.scenario.initial.moment_order(),
            m: d,
            n,
        })
        .ok();
        Ok((eps, r.map(|r| eps + r)))
    }

    pub fn compare(&self, n: usize, reps: usize) -> Result<PdeComparison> {
        if n == 0 || reps == 0 {
            return validation("n and reps must be at least 1");
        }
        let s = &self.setup;
        let d = s.scenario.d;
        let scenarios = reps.max(s.min_scenarios).max(s.batch.div_ceil(n));
        let bundle = BrownianBundle::batched(s.seed, SYSTEM_REPLICATION, n, scenarios, d, &s.grid)?;
        let system = solve_particle_fbsde(&s.scenario, n, &bundle, &s.basis)?;

        let cloud = s.empirical_cloud.max(2).div_ceil(n) * n;
        let atoms: Vec<Vec<f64>> = (0..reps).map(|r| system.initial(r)).collect();
        let emp_bundle = BrownianBundle::batched(s.seed, EMPIRICAL_REPLICATION, cloud, reps, d, &s.grid)?;
        let empirical = solve_master_on_laws(&s.scenario, &atoms, &emp_bundle, &s.basis)?;

        let mu_mean = vec![s.scenario.initial.mean(); d];
        let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum() };
        let rows: Vec<(f64, f64, Option<f64>)> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let xi1 = system.state(0, r, 0);
                let v = system.value(0, r, 0);
                let limit = self.master.evaluate(0, xi1, 0)?;
                let emp = empirical.evaluate(0, xi1, r)?;
                let oracle = s.scenario.exact(0.0, xi1, &system.state_mean(0, r)).zip(s.scenario.exact(0.0, xi1, &mu_mean));
                Ok((sq(v, &limit), sq(v, &emp), oracle.map(|(a, b)| sq(&a, &b))))
            })
            .collect::<Result<_>>()?;
        let gaps: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let emps: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let oracle: Option<Vec<f64>> = rows.iter().map(|r| r.2).collect();
        let (gap, stderr) = mean_and_stderr(&gaps);
        let (empirical_gap, empirical_stderr) = mean_and_stderr(&emps);
        let (epsilon_n, epsilon_n_plus_r) = self.references(n)?;
        Ok(PdeComparison {
            n,
            reps,
            gap,
            stderr,
            empirical_gap,
            empirical_stderr,
            epsilon_n,
            epsilon_n_plus_r,
            oracle_gap: oracle.map(|o| mean_and_stderr(&o).0),
        })
    }

    pub fn study(&self, ns: &[usize], reps: usize) -> Result<PdeStudy> {
        if ns.is_empty() {
            return validation("particle ladder is empty");
        }
        let comparisons = ns.iter().map(|&n| self.compare(n, reps)).collect::<Result<Vec<_>>>()?;
        let gaps: Vec<f64> = comparisons.iter().map(|c| c.gap).collect();
        let fit = if ns.len() >= 4 {
            fit_rate(ns, &gaps).ok()
        } else {
            None
        };
        Ok(PdeStudy { comparisons, fit })
    }
}

/// Pre-solves the limit and compares over a ladder of `n`.
pub fn compare_pde(setup: PdeSetup, ns: &[usize], reps: usize) -> Result<PdeStudy> {
    PdeLab::new(setup)?.study(ns, reps)
}

#[cfg(test)]
mod tests;
