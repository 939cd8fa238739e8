use super::*;
use crate::kernel::{sample_brownian, BrownianBundle, TimeGrid};

fn grid(n: usize) -> TimeGrid {
    TimeGrid::new(1.0, n).unwrap()
}

fn brownian_terminal() -> TerminalSpec {
    TerminalSpec::new("brownian", 1, 4.0, Some(1.0), |a, out| out[0] = a.path.terminal()[0])
}

fn affine_terminal(g: f64, sigma: f64) -> TerminalSpec {
    TerminalSpec::new("affine", 1, 4.0, Some(sigma), move |a, out| {
        out[0] = g + sigma * a.path.terminal()[0]
    })
}

fn linear_y(a: f64) -> DriverSpec {
    DriverSpec::new("linear-y", 1, DriverConstants::uniform(a.abs()), move |args, out| {
        out[0] = a * args.y[0]
    })
}

fn mean_linear(alpha: f64) -> DriverSpec {
    DriverSpec::new("mean-linear", 1, DriverConstants::uniform(alpha), move |args, out| {
        out[0] = alpha * args.law.expect("law").mean[0]
    })
    .with_law()
}

fn paths(seed: u64, samples: usize, steps: usize) -> PathSet {
    PathSet::from(&sample_brownian(seed, 0, samples, 1, &grid(steps)).unwrap()).ungrouped()
}

#[test]
fn brownian_terminal_is_a_martingale() {
    let ps = paths(3, 4096, 16);
    let sol = solve_backward(&DriverSpec::zero(1), &brownian_terminal(), &ps, &BasisSpec::default(), None).unwrap();
    let mut worst = 0.0f64;
    for k in 0..=16 {
        for s in 0..ps.samples() {
            worst = worst.max((sol.y_at(k, s)[0] - ps.state(k, s)[0]).abs());
        }
    }
    assert!(worst < 0.1, "max |y - W| = {worst}");
    let zs: Vec<f64> = (0..16).flat_map(|k| (0..ps.samples()).map(move |s| (k, s))).map(|(k, s)| sol.z_at(k, s)[0]).collect();
    let (m, se) = crate::numeric::mean_and_stderr(&zs);
    assert!((m - 1.0).abs() < 3.0 * se.max(1e-3), "z mean {m} se {se}");
}

#[test]
fn terminal_slice_is_bit_exact() {
    let ps = paths(5, 512, 8);
    let term = affine_terminal(1.0, 0.7);
    let sol = solve_backward(&linear_y(1.0), &term, &ps, &BasisSpec::default(), None).unwrap();
    for s in 0..ps.samples() {
        assert_eq!(sol.y_at(8, s)[0], 1.0 + 0.7 * ps.state(8, s)[0]);
    }
}

#[test]
fn linear_driver_reaches_e() {
    let ps = paths(1, 1024, 64);
    let sol = solve_backward(&linear_y(1.0), &TerminalSpec::constant(1, 1.0), &ps, &BasisSpec::default(), None).unwrap();
    let y0 = sol.y_at(0, 0)[0];
    let dt: f64 = 1.0 / 64.0;
    assert!((y0 - (1.0 + dt + 0.5 * dt * dt).powi(64)).abs() < 1e-12);
    assert!((y0 - std::f64::consts::E).abs() < 1e-3);

    let euler = BasisSpec::default().with_stepping(Stepping::Euler);
    let sol = solve_backward(&linear_y(1.0), &TerminalSpec::constant(1, 1.0), &ps, &euler, None).unwrap();
    assert!((sol.y_at(0, 0)[0] - (1.0 + dt).powi(64)).abs() < 1e-12);
}

#[test]
fn error_shrinks_under_refinement() {
    let mut last = f64::INFINITY;
    for n in [8, 16, 32, 64] {
        let ps = paths(2, 256, n);
        let sol = solve_backward(&linear_y(1.0), &TerminalSpec::constant(1, 1.0), &ps, &BasisSpec::default(), None).unwrap();
        let err = (sol.y_at(0, 0)[0] - std::f64::consts::E).abs();
        assert!(err < last, "N={n}: {err} >= {last}");
        last = err;
    }
}

#[test]
fn constant_driver_integrates_exactly() {
    let c = 0.75;
    let ps = paths(9, 128, 32);
    let drv = DriverSpec::new("constant", 1, DriverConstants::uniform(0.0), move |_, out| out[0] = c);
    let sol = solve_backward(&drv, &TerminalSpec::constant(1, 0.0), &ps, &BasisSpec::default(), None).unwrap();
    for k in 0..=32 {
        let expect = c * (1.0 - ps.grid().time(k));
        for s in 0..ps.samples() {
            assert!((sol.y_at(k, s)[0] - expect).abs() < 1e-12);
        }
    }
    assert!(sol.z.iter().all(|&v| v == 0.0));
}

#[test]
fn missing_law_flow_is_rejected() {
    let ps = paths(1, 64, 4);
    let err = solve_backward(&mean_linear(0.5), &TerminalSpec::constant(1, 1.0), &ps, &BasisSpec::default(), None).unwrap_err();
    assert!(matches!(err, Error::MissingLawFlow));
}

#[test]
fn mismatched_law_flow_is_rejected() {
    let ps = paths(1, 64, 4);
    let flow = vec![EmpiricalMeasure::dirac(&[1.0]).unwrap(); 3];
    let err = solve_backward(&mean_linear(0.5), &TerminalSpec::constant(1, 1.0), &ps, &BasisSpec::default(), Some(&flow)).unwrap_err();
    assert!(matches!(err, Error::Mismatch(_)));
}

#[test]
fn picard_mean_linear_matches_exponential() {
    let ps = paths(11, 4096, 32);
    let out = picard_iterate(&mean_linear(0.5), &affine_terminal(1.0, 0.5), &ps, &BasisSpec::default(), None, PicardParams::default()).unwrap();
    assert!(out.status.converged());
    assert!(out.status.iterations() <= 10);
    let m0 = out.solution.mean_at(0, 0);
    assert!((m0 - 0.5f64.exp()).abs() < 0.03, "mean at 0: {m0}");
}

#[test]
fn picard_mean_reversion_keeps_mean() {
    let kappa = 1.0;
    let drv = DriverSpec::new("mean-reversion", 1, DriverConstants::uniform(kappa), move |a, out| {
        out[0] = kappa * (a.law.unwrap().mean[0] - a.y[0])
    })
    .with_law();
    let ps = paths(12, 4096, 32);
    let out = picard_iterate(&drv, &affine_terminal(1.0, 0.5), &ps, &BasisSpec::default(), None, PicardParams::default()).unwrap();
    assert!(out.status.converged());
    for k in 0..=32 {
        assert!((out.solution.mean_at(k, 0) - 1.0).abs() < 0.03);
    }
}

#[test]
fn law_free_driver_converges_in_one_pass() {
    let ps = paths(4, 256, 8);
    let out = picard_iterate(&linear_y(1.0), &brownian_terminal(), &ps, &BasisSpec::default(), None, PicardParams::default()).unwrap();
    assert_eq!(out.status, PicardStatus::Converged { iterations: 1 });
    let again = solve_backward(&linear_y(1.0), &brownian_terminal(), &ps, &BasisSpec::default(), Some(&out.law_flow)).unwrap();
    assert_eq!(again.y, out.solution.y);
}

#[test]
fn picard_reports_non_convergence() {
    let ps = paths(4, 256, 8);
    let params = PicardParams { tol: 1e-300, max_iters: 2 };
    let out = picard_iterate(&mean_linear(0.5), &affine_terminal(1.0, 1.0), &ps, &BasisSpec::default(), None, params).unwrap();
    assert!(!out.status.converged());
    assert_eq!(out.log.len(), 2);
    assert!(out.into_result().is_err());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let bundle = BrownianBundle::batched(21, 0, 4, 300, 1, &grid(16)).unwrap();
    let ps = PathSet::from(&bundle).ungrouped();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                solve_backward(&linear_y(0.3), &affine_terminal(0.0, 1.0), &ps, &BasisSpec::with_degree(2), None)
                    .unwrap()
            })
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.y, b.y);
    assert_eq!(a.z, b.z);
}

#[test]
fn diagnostics_csv_has_contract_columns() {
    let ps = paths(4, 64, 4);
    let sol = solve_backward(&DriverSpec::zero(1), &brownian_terminal(), &ps, &BasisSpec::default(), None).unwrap();
    let mut buf = Vec::new();
    sol.write_diagnostics_csv(&mut buf, 1).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().all(|l| l.split(',').count() == 4));
    assert_eq!(DIAGNOSTICS_HEADER, "iteration,node,residual,condition");
}
