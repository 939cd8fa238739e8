use super::*;
use crate::mean_field::presets::{interaction, terminal, Params};

fn setup(model: ChaosModel, steps: usize) -> ChaosSetup {
    ChaosSetup {
        model,
        grid: TimeGrid::new(1.0, steps).unwrap(),
        noise_dim: 1,
        basis: BasisSpec::default(),
        picard: PicardParams::default(),
        seed: 17,
        batch: 1024,
        min_scenarios: 0,
        reference_cloud: 4096,
        q: 1.5,
        k: 4.0,
        delta: None,
    }
}

fn bsde(inter: &str, term: &str, term_params: &[(&str, f64)]) -> ChaosModel {
    let tp: Params = term_params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let i = interaction(inter, &Params::new(), 1).unwrap();
    let t = terminal(term, &tp, 1, 1).unwrap();
    ChaosModel::Bsde {
        mean_flow: i.mean_rule.flow(1.0, t.mean),
        interaction: i.spec,
        terminal: t.spec,
    }
}

const NS: [usize; 5] = [8, 16, 32, 64, 128];

#[test]
fn deterministic_scenario_has_zero_errors() {
    let lab = ChaosLab::new(setup(bsde("null", "constant", &[("c", 2.0)]), 8)).unwrap();
    let s = lab.marginal_study(8, &NS, 8, 1.0).unwrap();
    assert!(s.estimates.iter().all(|&e| e == 0.0));
    assert!(s.fit.is_none());
    let s = lab.sup_study(&NS, 8, 1.0).unwrap();
    assert!(s.estimates.iter().all(|&e| e == 0.0));
    let s = lab.process_error(&NS, 8).unwrap();
    assert!(s.estimates.iter().all(|&e| e == 0.0));
}

#[test]
fn gaussian_oracle_rate_is_one_half() {
    let lab = ChaosLab::new(setup(ChaosModel::GaussianOracle, 4)).unwrap();
    let s = lab.marginal_study(4, &[8, 16, 32, 64, 128, 256], 64, 1.0).unwrap();
    let slope = s.slope().unwrap();
    assert!((-0.65..=-0.35).contains(&slope), "slope {slope}");
}

#[test]
fn sup_dominates_fixed_node() {
    let lab = ChaosLab::new(setup(bsde("mean-linear", "affine", &[]), 16)).unwrap();
    let (fixed, sup) = lab.paired_samples(8, 32, 40, 1.0).unwrap();
    assert!(fixed.iter().zip(&sup).all(|(f, s)| s >= f));
}

#[test]
fn tail_edge_cases() {
    let lab = ChaosLab::new(setup(ChaosModel::GaussianOracle, 4)).unwrap();
    let t = lab.tail(4, 32, 1.0, &[0.0, 1e6], 50).unwrap();
    assert_eq!(t[0].probability, 1.0);
    assert_eq!(t[1].probability, 0.0);
    assert_eq!(t[1].ci_low, 0.0);
    assert!(lab.required_tail_reps(32, 1.0, &[1e6]) > 50.0);
    assert!(lab.required_tail_reps(32, 1.0, &[0.0]) <= 5.0);
}

#[test]
fn clopper_pearson_matches_tables() {
    let (lo, hi) = clopper_pearson(0, 10);
    assert_eq!(lo, 0.0);
    assert!((hi - 0.30850).abs() < 1e-4, "{hi}");
    let (lo, hi) = clopper_pearson(5, 10);
    assert!((lo - 0.18709).abs() < 1e-4 && (hi - 0.81291).abs() < 1e-4);
    assert_eq!(clopper_pearson(10, 10).1, 1.0);
}

#[test]
fn law_free_driver_has_no_process_gap() {
    let lab = ChaosLab::new(setup(bsde("linear-y", "affine", &[]), 8)).unwrap();
    let s = lab.process_error(&NS, 16).unwrap();
    assert!(s.estimates.iter().all(|&e| e == 0.0));
    let b = lab.block_bound(8, 8, 16).unwrap();
    assert_eq!(b.estimate, 0.0);
}

#[test]
fn single_block_matches_process_error_y_part() {
    let lab = ChaosLab::new(setup(bsde("mean-kernel", "affine", &[]), 8)).unwrap();
    let s = lab.process_error(&[16, 32, 64, 128], 16).unwrap();
    let b = lab.block_bound(32, 1, 16).unwrap();
    assert_eq!(b.estimate, s.components.as_ref().unwrap()[1].0);
    assert!((b.ratio - 1.0).abs() < 1e-12);
    assert!(lab.block_bound(4, 5, 16).is_err());
}

#[test]
fn ladder_validation() {
    let lab = ChaosLab::new(setup(ChaosModel::GaussianOracle, 4)).unwrap();
    assert!(lab.marginal_study(4, &[16, 8, 32, 64], 4, 1.0).is_err());
    assert!(lab.marginal_study(9, &[8, 16, 32, 64], 4, 1.0).is_err());
}
