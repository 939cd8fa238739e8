use super::presets::{interaction, terminal, Params};
use super::*;
use crate::regression::solve_backward;

fn grid(n: usize) -> TimeGrid {
    TimeGrid::new(1.0, n).unwrap()
}

fn params(kv: &[(&str, f64)]) -> Params {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn basis() -> BasisSpec {
    BasisSpec::default()
}

#[test]
fn decoupled_martingales_follow_their_brownian_paths() {
    let b = BrownianBundle::batched(1, 0, 8, 256, 1, &grid(16)).unwrap();
    let spec = interaction("null", &Params::new(), 1).unwrap().spec;
    let term = terminal("brownian", &Params::new(), 1, 1).unwrap().spec;
    let sol = solve_interacting(&spec, &term, &b, &basis()).unwrap();
    let paths = PathSet::from(&b);
    let mut worst = 0.0f64;
    for k in 0..=16 {
        for s in 0..b.len() {
            worst = worst.max((sol.solution.y_at(k, s)[0] - paths.state(k, s)[0]).abs());
        }
    }
    assert!(worst < 0.1, "{worst}");
}

#[test]
fn single_particle_mean_driver_is_linear_in_y() {
    let b = BrownianBundle::batched(2, 0, 1, 4096, 1, &grid(64)).unwrap();
    let spec = interaction("mean-linear", &params(&[("alpha", 1.0)]), 1).unwrap().spec;
    let term = terminal("affine", &Params::new(), 1, 1).unwrap().spec;
    let sol = solve_interacting(&spec, &term, &b, &basis()).unwrap();
    let m0 = sol.solution.mean_at(0, 0);
    assert!((m0 - std::f64::consts::E).abs() < 0.03, "{m0}");
}

#[test]
fn particle_average_follows_mean_ode() {
    let b = BrownianBundle::batched(3, 0, 16, 512, 1, &grid(32)).unwrap();
    let spec = interaction("mean-linear", &Params::new(), 1).unwrap().spec;
    let term = terminal("affine", &Params::new(), 1, 1).unwrap().spec;
    let sol = solve_interacting(&spec, &term, &b, &basis()).unwrap();
    for k in [0, 16, 32] {
        let avg: Vec<f64> = (0..sol.scenarios).map(|s| sol.particle_average(k, s)[0]).collect();
        let m = crate::numeric::mean(&avg);
        let expect = (0.5 * (1.0 - sol.grid().time(k))).exp();
        assert!((m - expect).abs() < 0.02, "k={k}: {m} vs {expect}");
    }
}

#[test]
fn mkv_examples() {
    let g = grid(32);
    let none = Params::new();
    let b = BrownianBundle::batched(4, 0, 1, 4096, 1, &g).unwrap();

    let null = interaction("null", &none, 1).unwrap();
    let bm = terminal("brownian", &none, 1, 1).unwrap();
    let mk = solve_mkv(&null.spec, &bm.spec, 4096, &b, &basis(), PicardParams::default(), &MeanFlow::default()).unwrap();
    let var = mk.law_flow[32].moment(2.0) - mk.law_flow[32].mean()[0].powi(2);
    assert!((var - 1.0).abs() < 0.07, "variance {var}");

    let ml = interaction("mean-linear", &none, 1).unwrap();
    let af = terminal("affine", &none, 1, 1).unwrap();
    let flow = ml.mean_rule.flow(1.0, af.mean);
    let mk = solve_mkv(&ml.spec, &af.spec, 4096, &b, &basis(), PicardParams::default(), &flow).unwrap();
    assert!(mk.status.converged());
    assert!(mk.mean_flow_error().unwrap() < 0.03);

    let c = terminal("constant", &params(&[("c", 2.5)]), 1, 1).unwrap();
    let mk = solve_mkv(&null.spec, &c.spec, 4096, &b, &basis(), PicardParams::default(), &MeanFlow::default()).unwrap();
    let dirac = EmpiricalMeasure::new(vec![2.5; 4096], 1).unwrap();
    for law in &mk.law_flow {
        assert_eq!(crate::transport::wasserstein_1d(2.0, law.points(), dirac.points()).unwrap(), 0.0);
    }
}

#[test]
fn null_kernel_matches_single_bsde_solves() {
    let b = BrownianBundle::batched(5, 0, 8, 64, 1, &grid(16)).unwrap();
    let outer = OuterDriver::new("half", 1, 0.5, |_, y, _, a, out| out[0] = 0.5 * y[0] + a[0]);
    let spec = InteractionSpec::linear(outer, Kernel::zero(1)).unwrap();
    let term = terminal("affine", &Params::new(), 1, 1).unwrap().spec;
    let sys = solve_linear_interaction(&spec, &term, &b, &basis()).unwrap();
    let single = solve_backward(&spec.driver, &term, &PathSet::from(&b).ungrouped(), &basis(), None).unwrap();
    assert_eq!(sys.solution.y, single.y);
}

#[test]
fn convolution_keeps_average_constant() {
    let b = BrownianBundle::batched(6, 0, 16, 512, 1, &grid(32)).unwrap();
    let spec = interaction("convolution", &Params::new(), 1).unwrap().spec;
    let term = terminal("affine", &Params::new(), 1, 1).unwrap().spec;
    let sol = solve_linear_interaction(&spec, &term, &b, &basis()).unwrap();
    for k in [0, 8, 24] {
        assert!((sol.solution.mean_at(k, 0) - 1.0).abs() < 0.02);
    }
}

#[test]
fn mean_kernel_coincides_with_mean_driver() {
    let b = BrownianBundle::batched(7, 0, 8, 256, 1, &grid(16)).unwrap();
    let term = terminal("affine", &Params::new(), 1, 1).unwrap().spec;
    let lin = interaction("mean-kernel", &Params::new(), 1).unwrap().spec;
    let gen = interaction("mean-linear", &Params::new(), 1).unwrap().spec;
    let a = solve_linear_interaction(&lin, &term, &b, &basis()).unwrap();
    let c = solve_interacting(&gen, &term, &b, &basis()).unwrap();
    for (x, y) in a.solution.y.iter().zip(&c.solution.y) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn permuting_seeds_permutes_trajectories() {
    let b = BrownianBundle::batched(8, 0, 6, 64, 1, &grid(8)).unwrap();
    let perm = [3, 0, 5, 1, 4, 2];
    let pb = permute_particles(&b, &perm).unwrap();
    let term = terminal("running-max", &Params::new(), 1, 1).unwrap().spec;
    for name in ["mean-linear", "mean-reversion", "convolution"] {
        let spec = interaction(name, &Params::new(), 1).unwrap().spec;
        let a = solve_interacting(&spec, &term, &b, &basis()).unwrap();
        let c = solve_interacting(&spec, &term, &pb, &basis()).unwrap();
        for s in 0..4 {
            for (i, &p) in perm.iter().enumerate() {
                assert_eq!(c.trajectory(s, i, 0), a.trajectory(s, p, 0), "{name}");
            }
        }
    }
}

#[test]
fn system_and_limit_share_terminal_slices() {
    let b = BrownianBundle::batched(9, 0, 8, 32, 1, &grid(8)).unwrap();
    let spec = interaction("mean-linear", &Params::new(), 1).unwrap().spec;
    let term = terminal("affine", &Params::new(), 1, 1).unwrap().spec;
    let sys = solve_interacting(&spec, &term, &b, &basis()).unwrap();
    let mk = solve_mkv(&spec, &term, 256, &b, &basis(), PicardParams::default(), &MeanFlow::default()).unwrap();
    assert_eq!(sys.solution.y_node(8), mk.solution.y_node(8));
}

#[test]
fn mean_flow_error_shrinks_with_cloud_size() {
    let ml = interaction("mean-linear", &Params::new(), 1).unwrap();
    let af = terminal("affine", &Params::new(), 1, 1).unwrap();
    let flow = ml.mean_rule.flow(1.0, af.mean);
    let rms = |cloud: usize| {
        let errs: Vec<f64> = (0..8)
            .map(|seed| {
                let b = BrownianBundle::batched(100 + seed, 0, 1, cloud, 1, &grid(16)).unwrap();
                let e = solve_mkv(&ml.spec, &af.spec, cloud, &b, &basis(), PicardParams::default(), &flow)
                    .unwrap()
                    .mean_flow_error()
                    .unwrap();
                e * e
            })
            .collect();
        crate::numeric::mean(&errs).sqrt()
    };
    let small = rms(512);
    let large = rms(2048);
    assert!(large < small, "{large} >= {small}");
}

#[test]
fn preset_errors_are_descriptive() {
    let err = interaction("bogus", &Params::new(), 1).unwrap_err();
    assert!(err.to_string().contains("mean-linear"));
    let err = terminal("affine", &params(&[("gamma", 1.0)]), 1, 1).unwrap_err();
    assert!(err.to_string().contains("gamma"));
    assert!(solve_mkv(
        &interaction("null", &Params::new(), 1).unwrap().spec,
        &terminal("constant", &Params::new(), 1, 1).unwrap().spec,
        1,
        &BrownianBundle::batched(1, 0, 1, 1, 1, &grid(2)).unwrap(),
        &basis(),
        PicardParams::default(),
        &MeanFlow::default()
    )
    .is_err());
}
