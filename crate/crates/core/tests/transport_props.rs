use chaoslab_core::transport::{
    path_wasserstein_supnorm, wasserstein_1d, wasserstein_assignment, EmpiricalMeasure, PathCloud,
};
use proptest::prelude::*;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force(p: f64, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> f64 {
    let n = a.len();
    permutations(n)
        .iter()
        .map(|perm| {
            (0..n)
                .map(|i| {
                    let d: f64 = a.point(i).iter().zip(b.point(perm[i])).map(|(x, y)| (x - y).powi(2)).sum();
                    d.sqrt().powf(p)
                })
                .sum::<f64>()
                / n as f64
        })
        .fold(f64::INFINITY, f64::min)
        .powf(1.0 / p)
}

fn cloud(n: usize, dim: usize) -> impl Strategy<Value = EmpiricalMeasure> {
    prop::collection::vec(-5.0f64..5.0, n * dim).prop_map(move |v| EmpiricalMeasure::new(v, dim).unwrap())
}

fn triple(n: usize, dim: usize) -> impl Strategy<Value = (EmpiricalMeasure, EmpiricalMeasure, EmpiricalMeasure)> {
    (cloud(n, dim), cloud(n, dim), cloud(n, dim))
}

proptest! {
    #[test]
    fn symmetry_is_exact((a, b, _) in triple(6, 2), p in 1.0f64..3.0) {
        prop_assert_eq!(wasserstein_assignment(p, &a, &b).unwrap(), wasserstein_assignment(p, &b, &a).unwrap());
    }

    #[test]
    fn triangle_inequality((a, b, c) in triple(7, 2), p in 1.0f64..3.0) {
        let ab = wasserstein_assignment(p, &a, &b).unwrap();
        let bc = wasserstein_assignment(p, &b, &c).unwrap();
        let ac = wasserstein_assignment(p, &a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12, "{} > {} + {}", ac, ab, bc);
    }

    #[test]
    fn identity_of_indiscernibles(a in cloud(8, 3), p in 1.0f64..3.0) {
        prop_assert_eq!(wasserstein_assignment(p, &a, &a).unwrap(), 0.0);
    }

    #[test]
    fn order_is_monotone_up_to_two((a, b, _) in triple(8, 2), p in 1.0f64..2.0) {
        let wp = wasserstein_assignment(p, &a, &b).unwrap();
        let w2 = wasserstein_assignment(2.0, &a, &b).unwrap();
        prop_assert!(wp <= w2 + 1e-12);
    }

    #[test]
    fn line_formula_matches_assignment(xs in prop::collection::vec(-5.0f64..5.0, 12), ys in prop::collection::vec(-5.0f64..5.0, 12), p in 1.0f64..3.0) {
        let a = EmpiricalMeasure::from_scalars(xs.clone()).unwrap();
        let b = EmpiricalMeasure::from_scalars(ys.clone()).unwrap();
        let exact = wasserstein_assignment(p, &a, &b).unwrap();
        prop_assert!((wasserstein_1d(p, &xs, &ys).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn assignment_matches_permutation_search((a, b, _) in triple(5, 2), p in 1.0f64..3.0) {
        let exact = wasserstein_assignment(p, &a, &b).unwrap();
        prop_assert!((exact - brute_force(p, &a, &b)).abs() < 1e-12);
    }

    #[test]
    fn sup_path_distance_dominates_every_marginal(v in prop::collection::vec(-3.0f64..3.0, 6 * 4), w in prop::collection::vec(-3.0f64..3.0, 6 * 4)) {
        let a = PathCloud::new(v, 4, 1).unwrap();
        let b = PathCloud::new(w, 4, 1).unwrap();
        let sup = path_wasserstein_supnorm(2.0, &a, &b).unwrap();
        for k in 0..4 {
            prop_assert!(wasserstein_assignment(2.0, &a.marginal(k), &b.marginal(k)).unwrap() <= sup + 1e-12);
        }
    }
}
