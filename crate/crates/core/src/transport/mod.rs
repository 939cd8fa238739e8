//! Wasserstein distances between equal-weight empirical measures.
//!
//! Exact in one dimension (order statistics), exact in any dimension via
//! optimal assignment, approximate via entropic regularization, and the
//! sup-norm distance between clouds of discrete paths.

pub mod assignment;
pub mod entropic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::numeric::{euclid, lex_cmp, pairwise_sum};

/// Uniform probability measure on `n` points of `R^dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    points: Vec<f64>,
    dim: usize,
}

impl EmpiricalMeasure {
    /// `points` is row-major, `n x dim`.
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return validation("measure dimension must be at least 1");
        }
        if points.is_empty() || points.len() % dim != 0 {
            return validation(format!(
                "{} coordinates do not form a non-empty cloud in dimension {dim}",
                points.len()
            ));
        }
        if let Some(bad) = points.iter().find(|v| !v.is_finite()) {
            return validation(format!("non-finite coordinate {bad} in empirical measure"));
        }
        Ok(Self { points, dim })
    }

    pub fn from_scalars(values: Vec<f64>) -> Result<Self> {
        Self::new(values, 1)
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::new(point.to_vec(), point.len())
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.dim)
    }

    /// Coordinate-wise mean, summed pairwise in storage order.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.len();
        (0..self.dim)
            .map(|c| {
                let col: Vec<f64> = self.iter().map(|p| p[c]).collect();
                pairwise_sum(&col) / n as f64
            })
            .collect()
    }

    /// `M_p(mu) = int |x|^p dmu`.
    pub fn moment(&self, p: f64) -> f64 {
        let vals: Vec<f64> = self
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
            .collect();
        pairwise_sum(&vals) / self.len() as f64
    }

    /// Same measure with its atoms in lexicographic order; the result does
    /// not depend on how the atoms were labelled.
    pub fn canonical(&self) -> Self {
        let mut rows: Vec<&[f64]> = self.iter().collect();
        rows.sort_by(|a, b| lex_cmp(a, b));
        Self {
            points: rows.concat(),
            dim: self.dim,
        }
    }

    /// Sub-cloud built from the listed atom indices (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut points = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            points.extend_from_slice(self.point(i));
        }
        Self {
            points,
            dim: self.dim,
        }
    }
}

/// `n` discrete trajectories on a shared grid of `nodes` points in `R^dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCloud {
    /// `[(path * nodes + k) * dim + c]`
    values: Vec<f64>,
    nodes: usize,
    dim: usize,
}

impl PathCloud {
    pub fn new(values: Vec<f64>, nodes: usize, dim: usize) -> Result<Self> {
        if nodes == 0 || dim == 0 {
            return validation("path clouds need at least one node and one coordinate");
        }
        let per_path = nodes * dim;
        if values.is_empty() || values.len() % per_path != 0 {
            return validation(format!(
                "{} values do not form paths of {nodes} nodes in dimension {dim}",
                values.len()
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return validation("non-finite value in path cloud");
        }
        Ok(Self { values, nodes, dim })
    }

    pub fn len(&self) -> usize {
        self.values.len() / (self.nodes * self.dim)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn path(&self, i: usize) -> &[f64] {
        let per = self.nodes * self.dim;
        &self.values[i * per..(i + 1) * per]
    }

    /// Marginal cloud at node `k`.
    pub fn marginal(&self, k: usize) -> EmpiricalMeasure {
        let mut points = Vec::with_capacity(self.len() * self.dim);
        for i in 0..self.len() {
            let p = self.path(i);
            points.extend_from_slice(&p[k * self.dim..(k + 1) * self.dim]);
        }
        EmpiricalMeasure {
            points,
            dim: self.dim,
        }
    }
}

fn check_order(p: f64) -> Result<()> {
    if !(p.is_finite() && p >= 1.0) {
        return validation(format!("Wasserstein order must be >= 1, got {p}"));
    }
    Ok(())
}

/// Orders a pair so that `d(a, b)` and `d(b, a)` run the same arithmetic.
fn ordered<'a, T>(a: &'a T, b: &'a T, values: impl Fn(&T) -> &[f64]) -> (&'a T, &'a T) {
    let key = values(a).iter().zip(values(b)).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne());
    if key == Some(std::cmp::Ordering::Greater) {
        (b, a)
    } else {
        (a, b)
    }
}

fn check_pair(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Mismatch(format!(
            "support sizes differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.dim() != b.dim() {
        return Err(Error::Mismatch(format!(
            "dimensions differ ({} vs {})",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `(1/n) sum |x_(i) - y_(i)|^p` over sorted samples.
pub fn wasserstein_1d_pp(p: f64, xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_order(p)?;
    if xs.len() != ys.len() {
        return Err(Error::Mismatch(format!(
            "sample sizes differ ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.is_empty() {
        return validation("samples must be non-empty");
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let terms: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs().powf(p)).collect();
    Ok(pairwise_sum(&terms) / a.len() as f64)
}

pub fn wasserstein_1d(p: f64, xs: &[f64], ys: &[f64]) -> Result<f64> {
    Ok(wasserstein_1d_pp(p, xs, ys)?.powf(1.0 / p))
}

/// Row-major cost matrix `|a_i - b_j|^p`.
pub fn cost_matrix(p: f64, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Vec<f64> {
    let mut costs = vec![0.0; a.len() * b.len()];
    costs
        .par_chunks_mut(b.len())
        .enumerate()
        .for_each(|(i, row)| {
            let ai = a.point(i);
            for (j, c) in row.iter_mut().enumerate() {
                *c = euclid(ai, b.point(j)).powf(p);
            }
        });
    costs
}

/// Exact `W_p^p` via optimal assignment.
pub fn wasserstein_assignment_pp(p: f64, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    check_order(p)?;
    check_pair(a, b)?;
    let (a, b) = ordered(a, b, EmpiricalMeasure::points);
    let n = a.len();
    let costs = cost_matrix(p, a, b);
    let (_, total) = assignment::solve(&costs, n);
    Ok((total / n as f64).max(0.0))
}

pub fn wasserstein_assignment(p: f64, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    Ok(wasserstein_assignment_pp(p, a, b)?.powf(1.0 / p))
}

/// Exact `W_p^p`, dispatching to the sorted formula on the line.
pub fn wasserstein_pp(p: f64, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    check_pair(a, b)?;
    if a.dim() == 1 {
        wasserstein_1d_pp(p, a.points(), b.points())
    } else {
        wasserstein_assignment_pp(p, a, b)
    }
}

/// Entropic estimate of `W_p`: the sharp transport cost of the Sinkhorn plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropicEstimate {
    pub distance: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn wasserstein_entropic(
    p: f64,
    a: &EmpiricalMeasure,
    b: &EmpiricalMeasure,
    reg: f64,
    max_iters: usize,
) -> Result<EntropicEstimate> {
    check_order(p)?;
    check_pair(a, b)?;
    if !(reg.is_finite() && reg > 0.0) {
        return validation(format!("entropic regularization must be positive, got {reg}"));
    }
    let (a, b) = ordered(a, b, EmpiricalMeasure::points);
    let n = a.len();
    let costs = cost_matrix(p, a, b);
    let plan = entropic::sinkhorn_uniform(&costs, n, reg, max_iters, 1e-12);
    Ok(EntropicEstimate {
        distance: plan.sharp_cost.max(0.0).powf(1.0 / p),
        converged: plan.converged,
        iterations: plan.iterations,
    })
}

/// `W_{p, sup}` between path clouds: assignment with ground cost
/// `max_k |A_i(t_k) - B_j(t_k)|^p` over grid nodes.
pub fn path_wasserstein_supnorm(p: f64, a: &PathCloud, b: &PathCloud) -> Result<f64> {
    check_order(p)?;
    if a.nodes() != b.nodes() || a.dim() != b.dim() {
        return Err(Error::Mismatch(format!(
            "path grids differ ({} nodes x {} vs {} nodes x {})",
            a.nodes(),
            a.dim(),
            b.nodes(),
            b.dim()
        )));
    }
    if a.len() != b.len() {
        return Err(Error::Mismatch(format!(
            "cloud sizes differ ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let (a, b) = ordered(a, b, |c: &PathCloud| &c.values);
    let n = a.len();
    let dim = a.dim();
    let mut costs = vec![0.0; n * n];
    costs.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let pa = a.path(i);
        for (j, c) in row.iter_mut().enumerate() {
            let pb = b.path(j);
            let sup = pa
                .chunks_exact(dim)
                .zip(pb.chunks_exact(dim))
                .map(|(x, y)| euclid(x, y))
                .fold(0.0, f64::max);
            *c = sup.powf(p);
        }
    });
    let (_, total) = assignment::solve(&costs, n);
    Ok((total / n as f64).max(0.0).powf(1.0 / p))
}
