//! Log-domain Sinkhorn iterations for uniform marginals.

/// Result of an entropic transport solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropicPlan {
    /// Transport cost `sum_ij pi_ij C_ij` of the regularized plan.
    pub sharp_cost: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Largest column-marginal violation at exit.
    pub marginal_error: f64,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sinkhorn fixed point on an `n x n` cost matrix with weights `1/n`.
pub fn sinkhorn_uniform(costs: &[f64], n: usize, reg: f64, max_iters: usize, tol: f64) -> EntropicPlan {
    let log_w = -(n as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut converged = false;
    let mut iterations = 0;
    let mut err = f64::INFINITY;
    for it in 0..max_iters {
        iterations = it + 1;
        for i in 0..n {
            let row = &costs[i * n..(i + 1) * n];
            let lse = log_sum_exp(row.iter().zip(&g).map(|(c, gj)| (gj - c) / reg));
            f[i] = reg * (log_w - lse);
        }
        for j in 0..n {
            let lse = log_sum_exp((0..n).map(|i| (f[i] - costs[i * n + j]) / reg));
            g[j] = reg * (log_w - lse);
        }
        // Columns are exact after the g-update; measure the row marginals.
        err = (0..n)
            .map(|i| {
                let mass: f64 = (0..n)
                    .map(|j| ((f[i] + g[j] - costs[i * n + j]) / reg).exp())
                    .sum();
                (mass - 1.0 / n as f64).abs()
            })
            .fold(0.0, f64::max);
        if err < tol {
            converged = true;
            break;
        }
    }
    let sharp_cost = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| {
            let c = costs[i * n + j];
            ((f[i] + g[j] - c) / reg).exp() * c
        })
        .sum();
    EntropicPlan {
        sharp_cost,
        converged,
        iterations,
        marginal_error: err,
    }
}
