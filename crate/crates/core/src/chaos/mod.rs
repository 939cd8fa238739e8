//! Monte Carlo estimators for propagation of chaos: marginal and sup-in-time
//! Wasserstein moments, concentration tails, process-level errors and
//! k-particle block bounds, with their reference curves.
//!
//! Replication `r` at particle count `n` is scenario `r` of one batched
//! system solve; scenario seeds do not depend on `n`, so studies over an
//! `n` ladder use common random numbers. The limit law is a large
//! pre-solved McKean-Vlasov cloud from which every replication draws a
//! fresh size-`n` i.i.d. reference sample.

pub mod fit;
pub mod reference;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

pub use fit::{fit_rate, RateFit};
pub use reference::{
    a_envelope, b_envelope, coupling_constant, epsilon_ft, high_moment_reference, rate_reference,
    sup_reference, tail_envelope, talagrand_constant, RateCase, RateParams,
};

use crate::error::{validation, Error, Result};
use crate::kernel::{stream_id, BrownianBundle, CounterRng, TimeGrid};
use crate::mean_field::{solve_interacting, InteractionKind, InteractionSpec, MeanFlow};
use crate::numeric::{mean_and_stderr, pairwise_sum};
use crate::regression::{picard_iterate, BasisSpec, PathSet, PicardParams, TerminalSpec};
use crate::transport::{wasserstein_pp, EmpiricalMeasure};

const SYSTEM_REPLICATION: u64 = 0;
const REFERENCE_REPLICATION: u64 = 1;
const INDEX_DOMAIN: u64 = 2;

/// The system whose chaos is measured.
#[derive(Debug, Clone)]
pub enum ChaosModel {
    /// Particles are the Brownian paths themselves (`F = 0`, `G = W_T`),
    /// sampled without any regression.
    GaussianOracle,
    Bsde {
        interaction: InteractionSpec,
        terminal: TerminalSpec,
        mean_flow: MeanFlow,
    },
}

#[derive(Debug, Clone)]
pub struct ChaosSetup {
    pub model: ChaosModel,
    pub grid: TimeGrid,
    pub noise_dim: usize,
    pub basis: BasisSpec,
    pub picard: PicardParams,
    pub seed: u64,
    /// Minimum number of sample paths per system solve.
    pub batch: usize,
    /// Minimum number of joint realizations per system solve. Group-mean
    /// regression coefficients see one sample per realization.
    pub min_scenarios: usize,
    pub reference_cloud: usize,
    /// Intermediate exponent and moment order of the rate curves.
    pub q: f64,
    pub k: f64,
    /// `delta` of the `b` envelope; `k/10` when unset.
    pub delta: Option<f64>,
}

impl ChaosSetup {
    pub fn out_dim(&self) -> usize {
        match &self.model {
            ChaosModel::GaussianOracle => self.noise_dim,
            ChaosModel::Bsde { interaction, .. } => interaction.out_dim(),
        }
    }

    /// `L_F` of the driver (0 for the Gaussian oracle).
    pub fn lipschitz_f(&self) -> f64 {
        match &self.model {
            ChaosModel::GaussianOracle => 0.0,
            ChaosModel::Bsde { interaction, .. } => interaction.driver.constants.overall(),
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(self.k / 10.0)
    }

    fn kind(&self) -> InteractionKind {
        match &self.model {
            ChaosModel::GaussianOracle => InteractionKind::None,
            ChaosModel::Bsde { interaction, .. } => interaction.kind,
        }
    }

    fn scenarios_for(&self, n: usize, reps: usize) -> usize {
        reps.max(self.min_scenarios).max(self.batch.div_ceil(n))
    }
}

/// Estimates over a ladder of particle counts with a log-log fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub ns: Vec<usize>,
    pub estimates: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub references: Vec<Option<f64>>,
    /// `None` when some estimate is not positive (e.g. deterministic runs).
    pub fit: Option<RateFit>,
    /// Replications dropped because a solve failed.
    pub excluded: usize,
    /// `(y, z)` parts of process-level estimates.
    pub components: Option<Vec<(f64, f64)>>,
}

impl RateStudy {
    fn from_samples(ns: &[usize], samples: &[Vec<f64>], references: Vec<Option<f64>>) -> Self {
        let (estimates, stderrs): (Vec<f64>, Vec<f64>) = samples.iter().map(|s| mean_and_stderr(s)).unzip();
        let fit = fit_rate(ns, &estimates).ok();
        Self {
            ns: ns.to_vec(),
            estimates,
            stderrs,
            references,
            fit,
            excluded: 0,
            components: None,
        }
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub n: usize,
    pub epsilon: f64,
    pub hits: usize,
    pub reps: usize,
    pub probability: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub reference_a: f64,
    pub reference_b: f64,
}

/// Exact (Clopper-Pearson) two-sided 95% interval for `hits / reps`.
pub fn clopper_pearson(hits: usize, reps: usize) -> (f64, f64) {
    let alpha = 0.05;
    let h = hits as f64;
    let n = reps as f64;
    let low = if hits == 0 {
        0.0
    } else {
        Beta::new(h, n - h + 1.0).expect("valid beta").inverse_cdf(alpha / 2.0)
    };
    let high = if hits >= reps {
        1.0
    } else {
        Beta::new(h + 1.0, n - h).expect("valid beta").inverse_cdf(1.0 - alpha / 2.0)
    };
    (low, high)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEstimate {
    pub k_block: usize,
    pub n: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub single_particle: f64,
    /// `estimate / single_particle`; near `k_block` by exchangeability.
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlnPoint {
    pub n: usize,
    /// Mean over replications of `|(1/n) sum_i Y^i_t - E[Y_t]|`.
    pub gap: f64,
    pub stderr: f64,
}

/// Particle values of one batched system, node-major `(N+1) x (M n) x m`.
struct SystemValues {
    n: usize,
    y: Vec<f64>,
}

/// The pre-solved limit law plus the machinery to sample systems.
pub struct ChaosLab {
    setup: ChaosSetup,
    reference: Vec<f64>,
    reference_mean: Vec<Vec<f64>>,
}

impl ChaosLab {
    pub fn new(setup: ChaosSetup) -> Result<Self> {
        if setup.reference_cloud < 2 {
            return validation("reference cloud needs at least 2 paths");
        }
        if setup.noise_dim == 0 {
            return validation("Brownian dimension d must be at least 1");
        }
        let bundle = BrownianBundle::batched(
            setup.seed,
            REFERENCE_REPLICATION,
            1,
            setup.reference_cloud,
            setup.noise_dim,
            &setup.grid,
        )?;
        let reference = match &setup.model {
            ChaosModel::GaussianOracle => bundle.values_node_major(),
            ChaosModel::Bsde {
                interaction,
                terminal,
                ..
            } => {
                let paths = PathSet::from(&bundle).ungrouped();
                picard_iterate(&interaction.driver, terminal, &paths, &setup.basis, None, setup.picard)?
                    .into_result()?
                    .solution
                    .y
            }
        };
        let m = setup.out_dim();
        let w = setup.reference_cloud * m;
        let reference_mean = (0..=setup.grid.steps())
            .map(|k| {
                EmpiricalMeasure::new(reference[k * w..(k + 1) * w].to_vec(), m)
                    .expect("finite reference")
                    .mean()
            })
            .collect();
        Ok(Self {
            setup,
            reference,
            reference_mean,
        })
    }

    pub fn setup(&self) -> &ChaosSetup {
        &self.setup
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node > self.setup.grid.steps() {
            return validation(format!("node {node} is outside the grid"));
        }
        Ok(())
    }

    fn check_ladder(ns: &[usize], reps: usize) -> Result<()> {
        if ns.is_empty() || ns.contains(&0) {
            return validation("particle counts must be positive");
        }
        if ns.windows(2).any(|w| w[0] >= w[1]) {
            return validation("particle counts must be strictly increasing");
        }
        if reps == 0 {
            return validation("reps must be at least 1");
        }
        Ok(())
    }

    fn system(&self, n: usize, reps: usize) -> Result<SystemValues> {
        let s = &self.setup;
        let scenarios = s.scenarios_for(n, reps);
        let bundle = BrownianBundle::batched(s.seed, SYSTEM_REPLICATION, n, scenarios, s.noise_dim, &s.grid)?;
        Ok(match &s.model {
            ChaosModel::GaussianOracle => SystemValues {
                n,
                y: bundle.values_node_major(),
            },
            ChaosModel::Bsde {
                interaction,
                terminal,
                ..
            } => {
                SystemValues {
                    n,
                    y: solve_interacting(interaction, terminal, &bundle, &s.basis)?.solution.y,
                }
            }
        })
    }

    /// Indices into the reference cloud for replication `r` at size `n`.
    pub fn reference_indices(&self, n: usize, r: usize) -> Vec<usize> {
        let mut rng = CounterRng::new(self.setup.seed, INDEX_DOMAIN, stream_id(r, n));
        (0..n).map(|_| rng.index(self.setup.reference_cloud)).collect()
    }

    fn slice<'a>(&self, values: &'a [f64], total: usize, k: usize, first: usize, len: usize) -> &'a [f64] {
        let m = self.setup.out_dim();
        let off = (k * total + first) * m;
        &values[off..off + len * m]
    }

    fn measures(
        &self,
        sys: &SystemValues,
        total: usize,
        r: usize,
        k: usize,
        idx: &[usize],
    ) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
        let m = self.setup.out_dim();
        let n = sys.n;
        let ours = EmpiricalMeasure::new(self.slice(&sys.y, total, k, r * n, n).to_vec(), m)?;
        let reference = self.slice(&self.reference, self.setup.reference_cloud, k, 0, self.setup.reference_cloud);
        let mut pts = Vec::with_capacity(n * m);
        for &i in idx {
            pts.extend_from_slice(&reference[i * m..(i + 1) * m]);
        }
        Ok((ours, EmpiricalMeasure::new(pts, m)?))
    }

    /// `W_p^p` between scenario `r` of the system and the reference sample.
    fn node_stat(&self, sys: &SystemValues, total: usize, r: usize, k: usize, p: f64, idx: &[usize]) -> Result<f64> {
        let (ours, reference) = self.measures(sys, total, r, k, idx)?;
        wasserstein_pp(p, &ours, &reference)
    }

    /// Empirical measure of replication `r` of the `n`-particle system at
    /// `node`, and its i.i.d. reference sample.
    pub fn node_measures(&self, node: usize, n: usize, r: usize) -> Result<(EmpiricalMeasure, EmpiricalMeasure)> {
        self.check_node(node)?;
        let sys = self.system(n, r + 1)?;
        let total = self.total(&sys);
        self.measures(&sys, total, r, node, &self.reference_indices(n, r))
    }

    fn total(&self, sys: &SystemValues) -> usize {
        sys.y.len() / ((self.setup.grid.steps() + 1) * self.setup.out_dim())
    }

    /// Per-replication `(W_p^p at node, sup over nodes of W_p^p)`, sharing
    /// every random input.
    pub fn paired_samples(&self, node: usize, n: usize, reps: usize, p: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_node(node)?;
        let sys = self.system(n, reps)?;
        let total = self.total(&sys);
        let nodes = self.setup.grid.steps() + 1;
        let rows: Vec<Result<(f64, f64)>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let idx = self.reference_indices(n, r);
                let mut fixed = 0.0;
                let mut sup = 0.0f64;
                for k in 0..nodes {
                    let v = self.node_stat(&sys, total, r, k, p, &idx)?;
                    if k == node {
                        fixed = v;
                    }
                    sup = sup.max(v);
                }
                Ok((fixed, sup))
            })
            .collect();
        let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(rows.into_iter().unzip())
    }

    /// Per-replication `W_p^p` at one node.
    pub fn marginal_samples(&self, node: usize, n: usize, reps: usize, p: f64) -> Result<Vec<f64>> {
        self.check_node(node)?;
        let sys = self.system(n, reps)?;
        let total = self.total(&sys);
        (0..reps)
            .into_par_iter()
            .map(|r| self.node_stat(&sys, total, r, node, p, &self.reference_indices(n, r)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    }

    /// Per-replication `W_p` (not raised to `p`) at one node.
    pub fn distance_samples(&self, node: usize, n: usize, reps: usize, p: f64) -> Result<Vec<f64>> {
        Ok(self
            .marginal_samples(node, n, reps, p)?
            .into_iter()
            .map(|v| v.powf(1.0 / p))
            .collect())
    }

    fn marginal_reference(&self, n: usize, p: f64) -> Option<f64> {
        rate_reference(&RateParams {
            p,
            q: self.setup.q,
            k: self.setup.k,
            m: self.setup.out_dim(),
            n,
        })
        .ok()
    }

    /// `E[W_p^p(L^n(Y_t), L(Y_t))]` over a ladder of `n`.
    pub fn marginal_study(&self, node: usize, ns: &[usize], reps: usize, p: f64) -> Result<RateStudy> {
        Self::check_ladder(ns, reps)?;
        let samples = ns
            .iter()
            .map(|&n| self.marginal_samples(node, n, reps, p))
            .collect::<Result<Vec<_>>>()?;
        let refs = ns.iter().map(|&n| self.marginal_reference(n, p)).collect();
        Ok(RateStudy::from_samples(ns, &samples, refs))
    }

    /// `E[sup_t W_p^p(L^n(Y_t), L(Y_t))]` over a ladder of `n`.
    pub fn sup_study(&self, ns: &[usize], reps: usize, p: f64) -> Result<RateStudy> {
        Self::check_ladder(ns, reps)?;
        let samples = ns
            .iter()
            .map(|&n| Ok(self.paired_samples(0, n, reps, p)?.1))
            .collect::<Result<Vec<_>>>()?;
        let m = self.setup.out_dim();
        let refs = ns.iter().map(|&n| Some(sup_reference(n, p, m))).collect();
        Ok(RateStudy::from_samples(ns, &samples, refs))
    }

    /// Both studies from the same replications.
    pub fn paired_study(&self, node: usize, ns: &[usize], reps: usize, p: f64) -> Result<(RateStudy, RateStudy, Vec<(Vec<f64>, Vec<f64>)>)> {
        Self::check_ladder(ns, reps)?;
        let pairs = ns
            .iter()
            .map(|&n| self.paired_samples(node, n, reps, p))
            .collect::<Result<Vec<_>>>()?;
        let fixed: Vec<Vec<f64>> = pairs.iter().map(|p| p.0.clone()).collect();
        let sup: Vec<Vec<f64>> = pairs.iter().map(|p| p.1.clone()).collect();
        let m = self.setup.out_dim();
        let a = RateStudy::from_samples(ns, &fixed, ns.iter().map(|&n| self.marginal_reference(n, p)).collect());
        let b = RateStudy::from_samples(ns, &sup, ns.iter().map(|&n| Some(sup_reference(n, p, m))).collect());
        Ok((a, b, pairs))
    }

    /// Unit-constant envelopes `(a 1{eps' <= 1}, b)` at `eps' = eps_{F,T}`.
    pub fn envelopes(&self, n: usize, eps: f64, p: f64) -> (f64, f64) {
        let s = &self.setup;
        let (a, b, _) = tail_envelope(
            n,
            eps,
            p,
            s.out_dim(),
            s.k,
            s.delta(),
            s.grid.horizon(),
            s.lipschitz_f(),
        );
        (a, b)
    }

    /// Replications needed so that `reps * envelope >= 5` at the smallest
    /// threshold.
    pub fn required_tail_reps(&self, n: usize, p: f64, epsilons: &[f64]) -> f64 {
        epsilons
            .iter()
            .map(|&e| {
                let (a, b) = self.envelopes(n, e, p);
                let env = (a + b).min(1.0);
                if env > 0.0 {
                    (5.0 / env).ceil()
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }

    /// `P(W_p(L^n(Y_t), L(Y_t)) >= eps)` for each threshold.
    pub fn tail(&self, node: usize, n: usize, p: f64, epsilons: &[f64], reps: usize) -> Result<Vec<TailEstimate>> {
        if reps == 0 {
            return validation("reps must be at least 1");
        }
        if let Some(e) = epsilons.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
            return validation(format!("tail thresholds must be finite and >= 0, got {e}"));
        }
        let dist = self.distance_samples(node, n, reps, p)?;
        Ok(epsilons
            .iter()
            .map(|&eps| {
                let hits = dist.iter().filter(|&&d| d >= eps).count();
                let (ci_low, ci_high) = clopper_pearson(hits, reps);
                let (a, b) = self.envelopes(n, eps, p);
                TailEstimate {
                    n,
                    epsilon: eps,
                    hits,
                    reps,
                    probability: hits as f64 / reps as f64,
                    ci_low,
                    ci_high,
                    reference_a: a,
                    reference_b: b,
                }
            })
            .collect())
    }

    /// Per-replication `(sup-node |Y^{i,n} - Y~^i|^2, dt-sum |Z^{i,i,n} - Z~^i|^2)`
    /// for particles `0..k_block`, summed over the block.
    fn gap_samples(&self, n: usize, reps: usize, k_block: usize) -> Result<Vec<(f64, f64)>> {
        let s = &self.setup;
        let (interaction, terminal) = match &s.model {
            ChaosModel::GaussianOracle => return Ok(vec![(0.0, 0.0); reps]),
            ChaosModel::Bsde {
                interaction,
                terminal,
                ..
            } => (interaction, terminal),
        };
        let scenarios = s.scenarios_for(n, reps);
        let bundle = BrownianBundle::batched(s.seed, SYSTEM_REPLICATION, n, scenarios, s.noise_dim, &s.grid)?;
        let sys = solve_interacting(interaction, terminal, &bundle, &s.basis)?.solution;
        // i.i.d. copies on the same Brownian paths; their law is the limit
        // law estimated from the whole pooled cloud
        let pooled = PathSet::from(&bundle).ungrouped();
        let copy = picard_iterate(&interaction.driver, terminal, &pooled, &s.basis, None, s.picard)?
            .into_result()?
            .solution;
        let nodes = s.grid.steps() + 1;
        let dt = s.grid.dt();
        Ok((0..reps)
            .into_par_iter()
            .map(|r| {
                let mut y_sum = 0.0;
                let mut z_sum = 0.0;
                for i in 0..k_block {
                    let idx = r * n + i;
                    let mut sup = 0.0f64;
                    for k in 0..nodes {
                        let d2: f64 = sys
                            .y_at(k, idx)
                            .iter()
                            .zip(copy.y_at(k, idx))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        sup = sup.max(d2);
                    }
                    let zs: Vec<f64> = (0..nodes - 1)
                        .map(|k| {
                            sys.z_at(k, idx)
                                .iter()
                                .zip(copy.z_at(k, idx))
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                                * dt
                        })
                        .collect();
                    y_sum += sup;
                    z_sum += pairwise_sum(&zs);
                }
                (y_sum, z_sum)
            })
            .collect())
    }

    fn process_reference(&self, n: usize) -> Option<f64> {
        if self.setup.kind() == InteractionKind::LinearF {
            return Some(1.0 / n as f64);
        }
        let k = self.setup.k;
        let q = if self.setup.q > 2.0 {
            self.setup.q
        } else if k.is_finite() {
            (2.0 + k) / 2.0
        } else {
            3.0
        };
        rate_reference(&RateParams {
            p: 2.0,
            q,
            k,
            m: self.setup.out_dim(),
            n,
        })
        .ok()
    }

    /// `E[sup_t |Y^{1,n}_t - Y~^1_t|^2] + E[int |Z^{1,1,n} - Z~^1|^2]` over a
    /// ladder of `n`.
    pub fn process_error(&self, ns: &[usize], reps: usize) -> Result<RateStudy> {
        Self::check_ladder(ns, reps)?;
        let mut samples = Vec::new();
        let mut components = Vec::new();
        for &n in ns {
            let gaps = self.gap_samples(n, reps, 1)?;
            let ys: Vec<f64> = gaps.iter().map(|g| g.0).collect();
            let zs: Vec<f64> = gaps.iter().map(|g| g.1).collect();
            components.push((mean_and_stderr(&ys).0, mean_and_stderr(&zs).0));
            samples.push(gaps.iter().map(|g| g.0 + g.1).collect());
        }
        let refs = ns.iter().map(|&n| self.process_reference(n)).collect();
        let mut study = RateStudy::from_samples(ns, &samples, refs);
        study.components = Some(components);
        Ok(study)
    }

    /// Sum over the first `k_block` particles of the squared sup-node gaps.
    pub fn block_bound(&self, n: usize, k_block: usize, reps: usize) -> Result<BlockEstimate> {
        if k_block == 0 || k_block > n {
            return Err(Error::Validation(format!(
                "block size must satisfy 1 <= k_block <= n, got k_block={k_block}, n={n}"
            )));
        }
        if reps == 0 {
            return validation("reps must be at least 1");
        }
        let block: Vec<f64> = self.gap_samples(n, reps, k_block)?.iter().map(|g| g.0).collect();
        let single: Vec<f64> = self.gap_samples(n, reps, 1)?.iter().map(|g| g.0).collect();
        let (estimate, stderr) = mean_and_stderr(&block);
        let single_particle = mean_and_stderr(&single).0;
        Ok(BlockEstimate {
            k_block,
            n,
            estimate,
            stderr,
            single_particle,
            ratio: if single_particle > 0.0 {
                estimate / single_particle
            } else {
                f64::NAN
            },
        })
    }

    /// Limit mean `E[Y_t]` at a node (first component analytic when known).
    pub fn limit_mean(&self, node: usize) -> Vec<f64> {
        let mut mean = self.reference_mean[node].clone();
        if let ChaosModel::Bsde { mean_flow, .. } = &self.setup.model {
            if let Some(flow) = mean_flow.on(&self.setup.grid) {
                if mean.len() == 1 {
                    mean[0] = flow[node];
                }
            }
        }
        mean
    }

    /// Law-of-large-numbers gaps of the particle average at one node.
    pub fn lln(&self, node: usize, ns: &[usize], reps: usize) -> Result<Vec<LlnPoint>> {
        self.check_node(node)?;
        Self::check_ladder(ns, reps)?;
        let target = self.limit_mean(node);
        let m = self.setup.out_dim();
        ns.iter()
            .map(|&n| {
                let sys = self.system(n, reps)?;
                let total = self.total(&sys);
                let gaps: Vec<f64> = (0..reps)
                    .map(|r| {
                        let avg = EmpiricalMeasure::new(self.slice(&sys.y, total, node, r * n, n).to_vec(), m)
                            .expect("finite solution")
                            .canonical()
                            .mean();
                        avg.iter()
                            .zip(&target)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    })
                    .collect();
                let (gap, stderr) = mean_and_stderr(&gaps);
                Ok(LlnPoint { n, gap, stderr })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
