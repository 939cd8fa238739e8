use rayon::prelude::*;

use super::lstsq::NormalSolver;
use super::{
    BasisSpec, BsdeSolution, DriverArgs, DriverSpec, LawView, PathSet, StepDiagnostics, Stepping,
    TerminalArgs, TerminalSpec,
};
use crate::error::Result;
use crate::numeric::lex_cmp;
use crate::transport::EmpiricalMeasure;

const BLOCK: usize = 256;

/// How samples share measure arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Coupling {
    /// No sample sees another; measure arguments come from a frozen law flow.
    Independent,
    /// The whole sample set is one cloud (state law = cloud at the node).
    Cloud,
    /// Consecutive blocks of `PathSet::group` samples interact through their
    /// empirical measures.
    Groups,
}

/// Regression coefficients at one node, `features x width` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFit {
    pub coef_y: Vec<f64>,
    pub coef_z: Vec<f64>,
    pub features: usize,
    pub group_mean: bool,
}

impl NodeFit {
    /// Conditional-expectation estimates `(yhat, zhat)` at a state.
    pub fn predict(&self, basis: &BasisSpec, x: &[f64], group_mean: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let mut phi = vec![0.0; self.features];
        basis.fill(x, if self.group_mean { group_mean } else { None }, &mut phi);
        (apply(&self.coef_y, &phi), apply(&self.coef_z, &phi))
    }
}

fn apply(coef: &[f64], phi: &[f64]) -> Vec<f64> {
    let p = phi.len();
    let r = coef.len() / p;
    let mut out = vec![0.0; r];
    for (i, &f) in phi.iter().enumerate() {
        for (j, o) in out.iter_mut().enumerate() {
            *o += f * coef[i * r + j];
        }
    }
    out
}

pub(crate) struct Sweep<'a> {
    pub paths: &'a PathSet,
    pub coupling: Coupling,
    pub driver: &'a DriverSpec,
    pub terminal: &'a TerminalSpec,
    pub basis: &'a BasisSpec,
    pub law_flow: Option<&'a [EmpiricalMeasure]>,
}

fn group_size(paths: &PathSet, coupling: Coupling) -> usize {
    match coupling {
        Coupling::Independent => 1,
        Coupling::Cloud => paths.samples(),
        Coupling::Groups => paths.group(),
    }
}

/// Canonical state law of every group at node `k`.
fn state_laws(paths: &PathSet, k: usize, g: usize) -> Vec<LawView> {
    let dx = paths.state_dim();
    let off = k * paths.samples() * dx;
    let all = &paths.states()[off..off + paths.samples() * dx];
    all.par_chunks(g * dx)
        .map(|chunk| {
            LawView::canonical(&EmpiricalMeasure::new(chunk.to_vec(), dx).expect("finite states"))
        })
        .collect()
}

pub(crate) fn terminal_values(terminal: &TerminalSpec, paths: &PathSet, coupling: Coupling) -> Vec<f64> {
    let s_count = paths.samples();
    let m = terminal.out_dim;
    let g = group_size(paths, coupling);
    let laws = if terminal.depends_on_law && coupling != Coupling::Independent {
        Some(state_laws(paths, paths.grid().steps(), g))
    } else {
        None
    };
    let mut out = vec![0.0; s_count * m];
    out.par_chunks_mut(m).enumerate().for_each(|(s, o)| {
        let args = TerminalArgs {
            path: paths.path_ref(s),
            law: laws.as_ref().map(|l| &l[s / g]),
        };
        terminal.evaluate(&args, o);
    });
    out
}

/// Raw sums `Phi^T Phi` and `Phi^T T` over `order`, in that order.
fn accumulate(phi: &[f64], p: usize, targets: &[f64], r: usize, order: &[usize], gram: &mut [f64], rhs: &mut [f64]) {
    for &s in order {
        let f = &phi[s * p..(s + 1) * p];
        let t = &targets[s * r..(s + 1) * r];
        for i in 0..p {
            let fi = f[i];
            for j in i..p {
                gram[i * p + j] += fi * f[j];
            }
            for (c, &tv) in t.iter().enumerate() {
                rhs[i * r + c] += fi * tv;
            }
        }
    }
}

/// Block-wise sums combined sequentially in block order, so the result does
/// not depend on the thread count.
fn reduce(phi: &[f64], p: usize, targets: &[f64], r: usize, blocks: &[Vec<usize>]) -> (Vec<f64>, Vec<f64>) {
    let partials: Vec<(Vec<f64>, Vec<f64>)> = blocks
        .par_iter()
        .map(|order| {
            let mut gram = vec![0.0; p * p];
            let mut rhs = vec![0.0; p * r];
            accumulate(phi, p, targets, r, order, &mut gram, &mut rhs);
            (gram, rhs)
        })
        .collect();
    let mut gram = vec![0.0; p * p];
    let mut rhs = vec![0.0; p * r];
    for (g, b) in &partials {
        for (x, y) in gram.iter_mut().zip(g) {
            *x += y;
        }
        for (x, y) in rhs.iter_mut().zip(b) {
            *x += y;
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[i * p + j] = gram[j * p + i];
        }
    }
    (gram, rhs)
}

fn fitted(phi: &[f64], p: usize, coef: &[f64], r: usize) -> Vec<f64> {
    let s_count = phi.len() / p;
    let mut out = vec![0.0; s_count * r];
    out.par_chunks_mut(r).enumerate().for_each(|(s, o)| {
        let f = &phi[s * p..(s + 1) * p];
        for (i, &fi) in f.iter().enumerate() {
            for (c, ov) in o.iter_mut().enumerate() {
                *ov += fi * coef[i * r + c];
            }
        }
    });
    out
}

impl Sweep<'_> {
    pub(crate) fn run(&self) -> Result<BsdeSolution> {
        let paths = self.paths;
        let grid = paths.grid().clone();
        let n_steps = grid.steps();
        let dt = grid.dt();
        let s_count = paths.samples();
        let dx = paths.state_dim();
        let d = paths.noise_dim();
        let m = self.driver.out_dim;
        let md = m * d;
        let g = group_size(paths, self.coupling);
        let grouped = self.coupling == Coupling::Groups && g > 1;
        let use_gm = grouped && self.basis.group_mean;
        let p = self.basis.size(dx, use_gm);
        let node_w = s_count * m;

        let mut y = vec![0.0; (n_steps + 1) * node_w];
        let mut z = vec![0.0; n_steps * s_count * md];
        let terminal = terminal_values(self.terminal, paths, self.coupling);
        y[n_steps * node_w..].copy_from_slice(&terminal);

        let mut fits = vec![
            NodeFit {
                coef_y: Vec::new(),
                coef_z: Vec::new(),
                features: p,
                group_mean: use_gm,
            };
            n_steps
        ];
        let mut diagnostics = Vec::with_capacity(n_steps);

        for k in (0..n_steps).rev() {
            let (head, tail) = y.split_at_mut((k + 1) * node_w);
            let y_next = &tail[..node_w];
            let y_cur = &mut head[k * node_w..];

            let need_state_law = self.driver.depends_on_state_law && self.coupling != Coupling::Independent;
            let laws_x = if use_gm || need_state_law {
                Some(state_laws(paths, k, g))
            } else {
                None
            };

            let mut phi = vec![0.0; s_count * p];
            phi.par_chunks_mut(p).enumerate().for_each(|(s, f)| {
                let gm = if use_gm {
                    laws_x.as_ref().map(|l| l[s / g].mean.as_slice())
                } else {
                    None
                };
                self.basis.fill(paths.state(k, s), gm, f);
            });

            let blocks: Vec<Vec<usize>> = if grouped {
                (0..s_count / g)
                    .into_par_iter()
                    .map(|grp| {
                        let mut idx: Vec<usize> = (grp * g..(grp + 1) * g).collect();
                        idx.sort_by(|&a, &b| {
                            lex_cmp(paths.state(k, a), paths.state(k, b))
                                .then_with(|| lex_cmp(&y_next[a * m..(a + 1) * m], &y_next[b * m..(b + 1) * m]))
                                .then_with(|| lex_cmp(paths.increment(k, a), paths.increment(k, b)))
                        });
                        idx
                    })
                    .collect()
            } else {
                (0..s_count)
                    .step_by(BLOCK)
                    .map(|start| (start..(start + BLOCK).min(s_count)).collect())
                    .collect()
            };

            let (gram, rhs_y) = reduce(&phi, p, y_next, m, &blocks);
            let solver = NormalSolver::new(&gram, p, s_count, self.basis.ridge, self.basis.condition_limit);
            let mut coef_y = solver.solve(&rhs_y, p, m);
            for a in 0..m {
                let c0 = y_next[a];
                if (0..s_count).all(|s| y_next[s * m + a] == c0) {
                    for i in 0..p {
                        coef_y[i * m + a] = if i == 0 { c0 } else { 0.0 };
                    }
                }
            }
            let y_hat = fitted(&phi, p, &coef_y, m);

            let inv_dt = 1.0 / dt;
            let mut target = vec![0.0; s_count * md];
            target.par_chunks_mut(md).enumerate().for_each(|(s, t)| {
                let dw = paths.increment(k, s);
                for a in 0..m {
                    let r = y_next[s * m + a] - y_hat[s * m + a];
                    for b in 0..d {
                        t[a * d + b] = r * dw[b] * inv_dt;
                    }
                }
            });
            let (_, rhs_z) = reduce(&phi, p, &target, md, &blocks);
            let coef_z = solver.solve(&rhs_z, p, md);
            let z_hat = fitted(&phi, p, &coef_z, md);

            let group_laws = |values: &[f64]| -> Vec<LawView> {
                values
                    .par_chunks(g * m)
                    .map(|chunk| LawView::canonical(&EmpiricalMeasure::new(chunk.to_vec(), m).expect("finite fit")))
                    .collect()
            };
            let frozen: Option<Vec<LawView>> = match (self.driver.depends_on_law, self.coupling) {
                (true, Coupling::Groups) => None,
                (true, _) => self.law_flow.map(|flow| vec![LawView::new(flow[k].clone())]),
                (false, _) => None,
            };
            let law_index = |s: usize| if self.coupling == Coupling::Groups { s / g } else { 0 };
            let t_k = grid.time(k);
            let driver = self.driver;
            let slopes = |ys: &[f64], laws: Option<&Vec<LawView>>| -> Vec<f64> {
                let mut out = vec![0.0; node_w];
                out.par_chunks_mut(m).enumerate().for_each(|(s, o)| {
                    let args = DriverArgs {
                        t: t_k,
                        state: paths.state(k, s),
                        y: &ys[s * m..(s + 1) * m],
                        z: &z_hat[s * md..(s + 1) * md],
                        law: laws.map(|l| &l[law_index(s)]),
                        state_law: if need_state_law {
                            laws_x.as_ref().map(|l| &l[s / g])
                        } else {
                            None
                        },
                    };
                    driver.evaluate(&args, o);
                });
                out
            };
            let law_of = |ys: &[f64]| -> Option<Vec<LawView>> {
                if self.driver.depends_on_law && self.coupling == Coupling::Groups {
                    Some(group_laws(ys))
                } else {
                    None
                }
            };
            let own = law_of(&y_hat);
            let f1 = slopes(&y_hat, own.as_ref().or(frozen.as_ref()));
            let euler: Vec<f64> = y_hat.iter().zip(&f1).map(|(y, f)| y + dt * f).collect();
            match self.basis.stepping {
                Stepping::Euler => y_cur[..node_w].copy_from_slice(&euler),
                Stepping::Heun => {
                    let own2 = law_of(&euler);
                    let f2 = slopes(&euler, own2.as_ref().or(frozen.as_ref()));
                    for (s, o) in y_cur[..node_w].iter_mut().enumerate() {
                        *o = y_hat[s] + 0.5 * dt * (f1[s] + f2[s]);
                    }
                }
            }
            z[k * s_count * md..(k + 1) * s_count * md].copy_from_slice(&z_hat);

            let res: f64 = y_next.iter().zip(&y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
            let z2: f64 = z_hat.iter().map(|v| v * v).sum();
            diagnostics.push(StepDiagnostics {
                node: k,
                residual: (res / node_w as f64).sqrt(),
                condition: solver.info.condition,
                ridge: solver.info.ridge,
                ill_conditioned: solver.info.ill_conditioned,
                z_second_moment: z2 / s_count as f64,
            });
            fits[k] = NodeFit {
                coef_y,
                coef_z,
                features: p,
                group_mean: use_gm,
            };
        }
        diagnostics.reverse();

        let solution = BsdeSolution {
            grid,
            samples: s_count,
            out_dim: m,
            noise_dim: d,
            y,
            z,
            fits,
            diagnostics,
        };
        if !solution.is_finite() {
            return Err(crate::Error::NotConverged(
                "regression produced non-finite values".into(),
            ));
        }
        Ok(solution)
    }
}
