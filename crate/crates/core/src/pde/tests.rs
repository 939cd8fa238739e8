use proptest::prelude::*;

use super::presets::{pde_scenario, PDE_PRESETS};
use super::*;
use crate::mean_field::presets::Params;
use crate::regression::solve_backward;

fn params(kv: &[(&str, f64)]) -> Params {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn grid(steps: usize) -> TimeGrid {
    TimeGrid::new(1.0, steps).unwrap()
}

fn basis() -> BasisSpec {
    BasisSpec::default()
}

#[test]
fn epsilon_examples() {
    assert!((epsilon_cd(100, 3).unwrap() - 0.1).abs() < 1e-12);
    assert!((epsilon_cd(16, 4).unwrap() - 0.25 * 16f64.ln()).abs() < 1e-12);
    assert!((epsilon_cd(16, 4).unwrap() - 0.6931).abs() < 1e-4);
    assert!((epsilon_cd(32, 8).unwrap() - 0.4204).abs() < 1e-4);
    assert!(epsilon_cd(0, 1).is_err());
    assert!(epsilon_cd(4, 0).is_err());
}

#[test]
fn particle_values_are_affine_in_the_initial_points() {
    let sc = pde_scenario("affine", &params(&[("beta", 1.0), ("gamma", 1.0)]), 1, 1.0).unwrap();
    let b = BrownianBundle::batched(3, 0, 8, 512, 1, &grid(16)).unwrap();
    let sol = solve_particle_fbsde(&sc, 8, &b, &basis()).unwrap();
    let mut sq = 0.0;
    for s in 0..512 {
        let xbar = sol.state_mean(0, s)[0];
        for i in 0..8 {
            let x = sol.state(0, s, i)[0];
            sq += (sol.value(0, s, i)[0] - (x + xbar)).powi(2);
        }
    }
    let rms = (sq / 4096.0).sqrt();
    assert!(rms < 0.06, "{rms}");
}

#[test]
fn measure_free_linear_terminal_is_a_martingale_of_the_state() {
    let sc = pde_scenario("affine", &params(&[("beta", 2.0), ("gamma", 0.0)]), 1, 1.0).unwrap();
    assert!(sc.measure_free);
    let b = BrownianBundle::batched(4, 0, 4, 512, 1, &grid(16)).unwrap();
    let sol = solve_particle_fbsde(&sc, 4, &b, &basis()).unwrap();
    let mut sq = 0.0;
    for k in 0..=16 {
        for s in 0..512 {
            for i in 0..4 {
                sq += (sol.value(k, s, i)[0] - 2.0 * sol.state(k, s, i)[0]).powi(2);
            }
        }
    }
    let rms = (sq / (17.0 * 2048.0)).sqrt();
    assert!(rms < 0.06, "{rms}");
}

#[test]
fn constant_terminal_gives_constant_values() {
    let sc = pde_scenario("constant", &params(&[("c", 1.5)]), 2, 1.0).unwrap();
    let b = BrownianBundle::batched(5, 0, 4, 64, 2, &grid(8)).unwrap();
    let sol = solve_particle_fbsde(&sc, 4, &b, &basis()).unwrap();
    assert!(sol.solution.y.iter().all(|&v| v == 1.5));
    let m = solve_master_fbsde(&sc, 64, &BrownianBundle::batched(5, 1, 64, 1, 2, &grid(8)).unwrap(), &basis()).unwrap();
    assert_eq!(m.evaluate(0, &[0.3, -1.0], 0).unwrap(), vec![1.5]);
}

#[test]
fn master_evaluator_matches_closed_forms() {
    let g = grid(32);
    for (name, p) in [
        ("affine", params(&[("xi_mean", 0.5)])),
        ("discounted", params(&[("a", 0.5), ("xi_mean", 0.5)])),
        ("mean-reverting", params(&[("kappa", 1.0), ("xi_mean", 0.5)])),
    ] {
        let sc = pde_scenario(name, &p, 1, 1.0).unwrap();
        let b = BrownianBundle::batched(6, 1, 4096, 1, 1, &g).unwrap();
        let m = solve_master_fbsde(&sc, 4096, &b, &basis()).unwrap();
        for x in [-1.0, 0.0, 0.5, 2.0] {
            let v = m.evaluate(0, &[x], 0).unwrap()[0];
            let exact = sc.exact(0.0, &[x], &[0.5]).unwrap()[0];
            assert!((v - exact).abs() < 0.06, "{name} x={x}: {v} vs {exact}");
        }
    }
}

#[test]
fn discounting_scales_the_value() {
    let g = grid(32);
    let plain = pde_scenario("affine", &params(&[("xi_mean", 1.0), ("xi_std", 0.0)]), 1, 1.0).unwrap();
    let disc = pde_scenario("discounted", &params(&[("a", 1.0), ("xi_mean", 1.0), ("xi_std", 0.0)]), 1, 1.0).unwrap();
    let b = BrownianBundle::batched(7, 1, 2048, 1, 1, &g).unwrap();
    let v0 = solve_master_fbsde(&plain, 2048, &b, &basis()).unwrap().value(0, 0, 0)[0];
    let v1 = solve_master_fbsde(&disc, 2048, &b, &basis()).unwrap().value(0, 0, 0)[0];
    assert!((v1 / v0 - std::f64::consts::E).abs() < 1e-3, "{}", v1 / v0);
}

#[test]
fn single_particle_and_singleton_cloud_agree_with_plain_solver() {
    let sc = pde_scenario("affine", &params(&[("gamma", 0.0), ("xi_mean", 0.7), ("xi_std", 0.0)]), 1, 1.0).unwrap();
    let g = grid(32);
    let one = solve_particle_fbsde(&sc, 1, &BrownianBundle::batched(8, 0, 1, 4096, 1, &g).unwrap(), &basis()).unwrap();
    let cloud = solve_master_fbsde(&sc, 4096, &BrownianBundle::batched(8, 1, 4096, 1, 1, &g).unwrap(), &basis()).unwrap();
    for sol in [&one, &cloud] {
        let plain = solve_backward(&sc.driver, &sc.terminal, &sol.paths.clone().ungrouped(), &basis(), None).unwrap();
        assert!((plain.y_at(0, 0)[0] - sol.solution.y_at(0, 0)[0]).abs() < 1e-12);
    }
    let (a, b) = (one.value(0, 0, 0)[0], cloud.value(0, 0, 0)[0]);
    assert!((a - b).abs() < 0.02, "{a} vs {b}");
    assert!((a - 0.7).abs() < 0.02, "{a}");
}

#[test]
fn mean_reverting_particles_keep_their_mean() {
    let sc = pde_scenario("mean-reverting", &params(&[("kappa", 2.0), ("sigma", 0.0001)]), 1, 1.0).unwrap();
    let b = BrownianBundle::batched(9, 0, 16, 4, 1, &grid(64)).unwrap();
    let sol = solve_particle_fbsde(&sc, 16, &b, &basis()).unwrap();
    for s in 0..4 {
        let (m0, m1) = (sol.state_mean(0, s)[0], sol.state_mean(64, s)[0]);
        assert!((m0 - m1).abs() < 1e-3, "{m0} {m1}");
        let spread: f64 = (0..16).map(|i| (sol.state(64, s, i)[0] - m1).abs()).fold(0.0, f64::max);
        let spread0: f64 = (0..16).map(|i| (sol.state(0, s, i)[0] - m0).abs()).fold(0.0, f64::max);
        assert!(spread < spread0 * 0.2);
    }
}

#[test]
fn empirical_law_clouds_start_on_the_atoms() {
    let sc = pde_scenario("affine", &Params::new(), 1, 1.0).unwrap();
    let atoms = vec![vec![0.0, 1.0, 2.0], vec![-1.0, 5.0, 0.5]];
    let b = BrownianBundle::batched(10, 2, 6, 2, 1, &grid(4)).unwrap();
    let sol = solve_master_on_laws(&sc, &atoms, &b, &basis()).unwrap();
    assert_eq!(sol.initial(1), vec![-1.0, 5.0, 0.5, -1.0, 5.0, 0.5]);
    assert!((sol.state_mean(0, 0)[0] - 1.0).abs() < 1e-15);
    let bad = BrownianBundle::batched(10, 2, 4, 2, 1, &grid(4)).unwrap();
    assert!(matches!(solve_master_on_laws(&sc, &atoms, &bad, &basis()), Err(Error::Mismatch(_))));
}

#[test]
fn comparison_tracks_the_variance_of_the_mean() {
    let sc = pde_scenario("affine", &Params::new(), 1, 1.0).unwrap();
    let lab = PdeLab::new(PdeSetup {
        scenario: sc,
        grid: grid(16),
        basis: basis(),
        seed: 11,
        batch: 8192,
        min_scenarios: 512,
        cloud_size: 4096,
        empirical_cloud: 256,
        q: None,
    })
    .unwrap();
    let study = lab.study(&[4, 8, 16, 32], 128).unwrap();
    for c in &study.comparisons {
        let oracle = c.oracle_gap.unwrap();
        assert!((c.gap - oracle).abs() < 0.4 * oracle + 2e-3, "n={} {} vs {}", c.n, c.gap, oracle);
        assert!(c.empirical_gap < 0.1 * c.gap, "n={} {}", c.n, c.empirical_gap);
        assert!((c.epsilon_n - (c.n as f64).powf(-0.5)).abs() < 1e-12);
        assert!(c.epsilon_n_plus_r.unwrap() > c.epsilon_n);
    }
    let slope = study.fit.unwrap().slope;
    assert!((-1.3..=-0.7).contains(&slope), "{slope}");
}

#[test]
fn constant_preset_has_zero_gaps() {
    let sc = pde_scenario("constant", &Params::new(), 1, 1.0).unwrap();
    let lab = PdeLab::new(PdeSetup {
        scenario: sc,
        grid: grid(8),
        basis: basis(),
        seed: 12,
        batch: 256,
        min_scenarios: 0,
        cloud_size: 256,
        empirical_cloud: 16,
        q: None,
    })
    .unwrap();
    let study = lab.study(&[2, 4, 8, 16], 16).unwrap();
    assert!(study.comparisons.iter().all(|c| c.gap == 0.0 && c.empirical_gap == 0.0));
    assert!(study.fit.is_none());
}

#[test]
fn preset_errors() {
    let e = pde_scenario("nope", &Params::new(), 1, 1.0).unwrap_err();
    assert!(matches!(e, Error::UnknownPreset { ref registered, .. } if registered.contains("mean-reverting")));
    assert_eq!(PDE_PRESETS.len(), 4);
    assert!(pde_scenario("affine", &params(&[("kappa", 1.0)]), 1, 1.0).is_err());
    let sc = pde_scenario("affine", &Params::new(), 1, 2.0).unwrap();
    let b = BrownianBundle::batched(1, 0, 2, 2, 1, &grid(4)).unwrap();
    assert!(matches!(solve_particle_fbsde(&sc, 2, &b, &basis()), Err(Error::Mismatch(_))));
    let sc = pde_scenario("affine", &Params::new(), 1, 1.0).unwrap();
    assert!(matches!(solve_particle_fbsde(&sc, 3, &b, &basis()), Err(Error::Mismatch(_))));
}

proptest! {
    #[test]
    fn epsilon_is_positive_and_shrinks_away_from_the_log_case(n in 1usize..100_000, d in 1usize..12) {
        let e = epsilon_cd(n, d).unwrap();
        prop_assert!(e >= 0.0 && e.is_finite());
        if d != 4 {
            prop_assert!(epsilon_cd(n + 1, d).unwrap() < e);
        }
    }

    #[test]
    fn initial_points_replay_per_stream(seed in 0u64..1000, rep in 0u64..4) {
        let law = InitialLaw::Gaussian { mean: 0.0, std: 1.0 };
        let g = grid(2);
        let big = BrownianBundle::batched(seed, rep, 3, 4, 2, &g).unwrap();
        let small = BrownianBundle::from_streams(seed, rep, vec![big.streams()[7]], 1, 2, &g).unwrap();
        prop_assert_eq!(&initial_points(&law, &big)[14..16], &initial_points(&law, &small)[..]);
    }
}
