//! Weakly interacting backward particle systems and their mean-field limit.
//!
//! The n-particle system is solved jointly on each scenario: at every step
//! the interaction is the empirical measure of the current particle slice,
//! and each particle regresses on its own state plus the scenario mean of the
//! states. The McKean-Vlasov limit is a cloud of i.i.d. copies solved by
//! Picard iteration on the law flow.

pub mod presets;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::kernel::{BrownianBundle, TimeGrid};
use crate::numeric::{lex_cmp, pairwise_sum};
use crate::regression::{
    picard_iterate, BasisSpec, BsdeSolution, Coupling, DriverArgs, DriverConstants, DriverSpec,
    LawView, PathSet, PicardParams, PicardStatus, PicardStep, Sweep, TerminalSpec,
};
use crate::transport::EmpiricalMeasure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InteractionKind {
    GeneralMeasure,
    LinearF,
    None,
}

type KernelFn = dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;
type KernelAverageFn = dyn Fn(f64, &[f64], &[f64], &LawView, &mut [f64]) + Send + Sync;
type OuterFn = dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync;

/// Inner kernel `f(t, y1, y2, z)` of a linear interaction.
#[derive(Clone)]
pub struct Kernel {
    pub name: String,
    pub out_dim: usize,
    pub lipschitz: f64,
    /// Identically zero kernel: the system decouples.
    pub null: bool,
    eval: Arc<KernelFn>,
    average: Option<Arc<KernelAverageFn>>,
}

impl Kernel {
    pub fn new(
        name: impl Into<String>,
        out_dim: usize,
        lipschitz: f64,
        eval: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            out_dim,
            lipschitz,
            null: false,
            eval: Arc::new(eval),
            average: None,
        }
    }

    /// Closed form of `int f(t, y, y2, z) mu(dy2)`, used instead of looping
    /// over the atoms.
    pub fn with_average(
        mut self,
        average: impl Fn(f64, &[f64], &[f64], &LawView, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.average = Some(Arc::new(average));
        self
    }

    pub fn zero(out_dim: usize) -> Self {
        let mut k = Self::new("zero", out_dim, 0.0, |_, _, _, _, out| out.fill(0.0))
            .with_average(|_, _, _, _, out| out.fill(0.0));
        k.null = true;
        k
    }

    pub fn evaluate(&self, t: f64, y1: &[f64], y2: &[f64], z: &[f64], out: &mut [f64]) {
        (self.eval)(t, y1, y2, z, out)
    }

    /// `int f(t, y, y2, z) law(dy2)`.
    pub fn average(&self, t: f64, y: &[f64], z: &[f64], law: &LawView, out: &mut [f64]) {
        if let Some(avg) = &self.average {
            return avg(t, y, z, law, out);
        }
        let n = law.measure.len();
        let mut cols = vec![Vec::with_capacity(n); self.out_dim];
        let mut buf = vec![0.0; self.out_dim];
        for y2 in law.measure.iter() {
            self.evaluate(t, y, y2, z, &mut buf);
            for (c, v) in cols.iter_mut().zip(&buf) {
                c.push(*v);
            }
        }
        for (o, c) in out.iter_mut().zip(&cols) {
            *o = pairwise_sum(c) / n as f64;
        }
    }
}

/// Outer driver `F(t, y, z, a)` of a linear interaction.
#[derive(Clone)]
pub struct OuterDriver {
    pub name: String,
    pub out_dim: usize,
    pub lipschitz: f64,
    eval: Arc<OuterFn>,
}

impl OuterDriver {
    pub fn new(
        name: impl Into<String>,
        out_dim: usize,
        lipschitz: f64,
        eval: impl Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            out_dim,
            lipschitz,
            eval: Arc::new(eval),
        }
    }
}

/// Interaction of a particle system together with the equivalent measure
/// driver used by the solvers.
#[derive(Clone)]
pub struct InteractionSpec {
    pub kind: InteractionKind,
    pub driver: DriverSpec,
    /// `L_f` of the inner kernel (linear interactions only).
    pub kernel_lipschitz: Option<f64>,
}

impl std::fmt::Debug for InteractionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InteractionSpec")
            .field("kind", &self.kind)
            .field("driver", &self.driver)
            .field("kernel_lipschitz", &self.kernel_lipschitz)
            .finish()
    }
}

impl InteractionSpec {
    /// General measure driver `F(t, y, z, mu)`; a driver without law
    /// dependence is tagged as no interaction.
    pub fn measure(driver: DriverSpec) -> Self {
        let kind = if driver.depends_on_law {
            InteractionKind::GeneralMeasure
        } else {
            InteractionKind::None
        };
        Self {
            kind,
            driver,
            kernel_lipschitz: None,
        }
    }

    /// `F(t, y, z, int f(t, y, y2, z) mu(dy2))`.
    pub fn linear(outer: OuterDriver, kernel: Kernel) -> Result<Self> {
        if !(outer.lipschitz.is_finite() && outer.lipschitz >= 0.0)
            || !(kernel.lipschitz.is_finite() && kernel.lipschitz >= 0.0)
        {
            return validation("interaction constants must be finite and non-negative");
        }
        let null = kernel.null;
        let lf = kernel.lipschitz;
        let name = format!("{}({})", outer.name, kernel.name);
        let constants = DriverConstants {
            lipschitz_y: outer.lipschitz * (1.0 + kernel.lipschitz),
            lipschitz_z: outer.lipschitz * (1.0 + kernel.lipschitz),
            lipschitz_mu: outer.lipschitz * kernel.lipschitz,
            growth: outer.lipschitz * (1.0 + kernel.lipschitz),
        };
        let m = outer.out_dim;
        let a_dim = kernel.out_dim;
        let driver = DriverSpec::new(name, m, constants, move |args: &DriverArgs<'_>, out| {
            let mut a = vec![0.0; a_dim];
            if let Some(law) = args.law {
                kernel.average(args.t, args.y, args.z, law, &mut a);
            }
            (outer.eval)(args.t, args.y, args.z, &a, out);
        })
        .with_z();
        let driver = if null { driver } else { driver.with_law() };
        Ok(Self {
            kind: if null {
                InteractionKind::None
            } else {
                InteractionKind::LinearF
            },
            driver,
            kernel_lipschitz: Some(lf),
        })
    }

    pub fn out_dim(&self) -> usize {
        self.driver.out_dim
    }
}

/// Joint solution of `scenarios` independent copies of an `n`-particle
/// system.
#[derive(Debug, Clone)]
pub struct SystemSolution {
    pub n: usize,
    pub scenarios: usize,
    pub kind: InteractionKind,
    pub solution: BsdeSolution,
}

impl SystemSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.solution.grid
    }

    fn sample(&self, scenario: usize, particle: usize) -> usize {
        scenario * self.n + particle
    }

    pub fn y(&self, k: usize, scenario: usize, particle: usize) -> &[f64] {
        self.solution.y_at(k, self.sample(scenario, particle))
    }

    /// Own-noise block `Z^{i,i}` (row-major `m x d`).
    pub fn z_diag(&self, k: usize, scenario: usize, particle: usize) -> &[f64] {
        self.solution.z_at(k, self.sample(scenario, particle))
    }

    /// Particle trajectory of component `a` over all nodes.
    pub fn trajectory(&self, scenario: usize, particle: usize, a: usize) -> Vec<f64> {
        (0..=self.grid().steps())
            .map(|k| self.y(k, scenario, particle)[a])
            .collect()
    }

    /// `L^n(Y_t)` of one scenario, atoms in canonical order.
    pub fn particle_measure(&self, k: usize, scenario: usize) -> EmpiricalMeasure {
        let m = self.solution.out_dim;
        let start = self.sample(scenario, 0);
        let w = self.solution.y_node(k);
        EmpiricalMeasure::new(w[start * m..(start + self.n) * m].to_vec(), m)
            .expect("finite solution")
            .canonical()
    }

    /// `(1/n) sum_i Y^{i,n}_t` of one scenario, independent of particle labels.
    pub fn particle_average(&self, k: usize, scenario: usize) -> Vec<f64> {
        self.particle_measure(k, scenario).mean()
    }
}

fn check_bundle(bundle: &BrownianBundle, interaction: &InteractionSpec, terminal: &TerminalSpec) -> Result<()> {
    if bundle.particles() == 0 {
        return validation("particle count n must be at least 1");
    }
    if interaction.out_dim() != terminal.out_dim {
        return Err(Error::Mismatch(format!(
            "interaction dimension {} differs from terminal dimension {}",
            interaction.out_dim(),
            terminal.out_dim
        )));
    }
    interaction.driver.validate()?;
    terminal.validate()
}

fn solve_system(
    spec: &InteractionSpec,
    terminal: &TerminalSpec,
    bundle: &BrownianBundle,
    basis: &BasisSpec,
) -> Result<SystemSolution> {
    check_bundle(bundle, spec, terminal)?;
    basis.validate()?;
    let paths = PathSet::from(bundle);
    // A law-free system decouples: every particle is its own BSDE.
    let coupling = if spec.kind == InteractionKind::None && !terminal.depends_on_law {
        Coupling::Independent
    } else {
        Coupling::Groups
    };
    let solution = Sweep {
        paths: &paths,
        coupling,
        driver: &spec.driver,
        terminal,
        basis,
        law_flow: None,
    }
    .run()?;
    Ok(SystemSolution {
        n: bundle.particles(),
        scenarios: bundle.scenarios(),
        kind: spec.kind,
        solution,
    })
}

/// Coupled n-particle system; each scenario of the bundle is one joint
/// realization.
pub fn solve_interacting(
    spec: &InteractionSpec,
    terminal: &TerminalSpec,
    bundle: &BrownianBundle,
    basis: &BasisSpec,
) -> Result<SystemSolution> {
    solve_system(spec, terminal, bundle, basis)
}

/// Linear-interaction system `F(t, Y^i, Z^i, (1/n) sum_j f(t, Y^i, Y^j, Z^i))`.
pub fn solve_linear_interaction(
    spec: &InteractionSpec,
    terminal: &TerminalSpec,
    bundle: &BrownianBundle,
    basis: &BasisSpec,
) -> Result<SystemSolution> {
    if !matches!(spec.kind, InteractionKind::LinearF | InteractionKind::None) || spec.kernel_lipschitz.is_none() {
        return validation("solve_linear_interaction needs a linear-f interaction");
    }
    solve_system(spec, terminal, bundle, basis)
}

type MeanFlowFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Cloud of i.i.d. copies of the McKean-Vlasov solution.
#[derive(Debug, Clone)]
pub struct MkvSolution {
    pub solution: BsdeSolution,
    pub law_flow: Vec<EmpiricalMeasure>,
    pub log: Vec<PicardStep>,
    pub status: PicardStatus,
    /// Analytic `E[Y_t]` (first component) at every node, when known.
    pub reference_mean_flow: Option<Vec<f64>>,
}

impl MkvSolution {
    pub fn cloud_size(&self) -> usize {
        self.solution.samples
    }

    /// Largest node-wise gap between the cloud mean and the analytic mean.
    pub fn mean_flow_error(&self) -> Option<f64> {
        let r = self.reference_mean_flow.as_ref()?;
        Some(
            r.iter()
                .enumerate()
                .map(|(k, v)| (self.solution.mean_at(k, 0) - v).abs())
                .fold(0.0, f64::max),
        )
    }
}

/// Optional analytic mean flow `t -> E[Y_t]`.
#[derive(Clone, Default)]
pub struct MeanFlow(pub Option<Arc<MeanFlowFn>>);

impl MeanFlow {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self(Some(Arc::new(f)))
    }

    pub fn on(&self, grid: &TimeGrid) -> Option<Vec<f64>> {
        self.0
            .as_ref()
            .map(|f| grid.nodes().iter().map(|&t| f(t)).collect())
    }
}

impl std::fmt::Debug for MeanFlow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.0.is_some() { "MeanFlow(analytic)" } else { "MeanFlow(none)" })
    }
}

/// McKean-Vlasov limit on a cloud of `cloud_size` i.i.d. paths.
pub fn solve_mkv(
    spec: &InteractionSpec,
    terminal: &TerminalSpec,
    cloud_size: usize,
    bundle: &BrownianBundle,
    basis: &BasisSpec,
    picard: PicardParams,
    mean_flow: &MeanFlow,
) -> Result<MkvSolution> {
    if cloud_size < 2 {
        return validation(format!("cloud size must be at least 2, got {cloud_size}"));
    }
    if bundle.len() != cloud_size {
        return Err(Error::Mismatch(format!(
            "bundle has {} paths, cloud size is {cloud_size}",
            bundle.len()
        )));
    }
    check_bundle(bundle, spec, terminal)?;
    let paths = PathSet::from(bundle).ungrouped();
    let out = picard_iterate(&spec.driver, terminal, &paths, basis, None, picard)?;
    Ok(MkvSolution {
        reference_mean_flow: mean_flow.on(&out.solution.grid),
        solution: out.solution,
        law_flow: out.law_flow,
        log: out.log,
        status: out.status,
    })
}

/// Maps stream ids through a permutation within every scenario: path `i`
/// of the result uses the stream of path `perm[i]` of `bundle`.
pub fn permute_particles(bundle: &BrownianBundle, perm: &[usize]) -> Result<BrownianBundle> {
    let n = bundle.particles();
    if perm.len() != n {
        return Err(Error::Mismatch("permutation length differs from particle count".into()));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return validation("not a permutation");
        }
    }
    let streams: Vec<u64> = (0..bundle.scenarios())
        .flat_map(|s| perm.iter().map(move |&p| bundle.streams()[s * n + p]))
        .collect();
    BrownianBundle::from_streams(
        bundle.seed(),
        bundle.replication_id(),
        streams,
        n,
        bundle.dim(),
        bundle.grid(),
    )
}

/// Sorted copy of per-particle values, for label-free comparisons.
pub fn sorted_rows(values: &[f64], dim: usize) -> Vec<f64> {
    let mut rows: Vec<&[f64]> = values.chunks_exact(dim).collect();
    rows.sort_by(|a, b| lex_cmp(a, b));
    rows.concat()
}

#[cfg(test)]
mod tests;
