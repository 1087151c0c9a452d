mod common;

use common::{enumerate, random_instance};
use proptest::prelude::*;
use shiftlab::numerics::qp::{box_qp_solve, QpProblem};
use shiftlab::numerics::{seeded_rng, Matrix};

#[test]
fn five_variable_instance_matches_enumeration() {
    let mut rng = seeded_rng(5);
    let p = random_instance(&mut rng, 5, true);
    let s = box_qp_solve(&p, 1e-8, 10_000).unwrap();
    assert!((s.objective - enumerate(&p)).abs() <= 1e-6);
}

#[test]
fn random_instances_match_enumeration() {
    let mut rng = seeded_rng(2024);
    for t in 0..50 {
        let n = 1 + t % 6;
        let p = random_instance(&mut rng, n, t % 2 == 0);
        let s = box_qp_solve(&p, 1e-8, 10_000).unwrap();
        let oracle = enumerate(&p);
        assert!(
            (s.objective - oracle).abs() <= 1e-6,
            "instance {t}: {} vs {oracle}",
            s.objective
        );
        assert!(p.violation(&s.x) <= 1e-12);
    }
}

#[test]
fn kmm_instance_returns_ones() {
    let mut rng = seeded_rng(9);
    let pts: Vec<f64> = (0..30).map(|_| rng.normal()).collect();
    let k = Matrix::from_fn(30, 30, |i, j| (-(pts[i] - pts[j]).powi(2) / 2.0).exp());
    let mut kk = k.clone();
    kk.add_diag(1e-3);
    let c = kk.matvec(&vec![1.0; 30]).unwrap();
    let p = QpProblem::new(kk, c, 0.0, 1000.0, None).unwrap();
    let s = box_qp_solve(&p, 1e-8, 10_000).unwrap();
    assert!(s.x.iter().all(|w| (w - 1.0).abs() < 1e-4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn output_is_feasible_and_stationary(seed in 0u64..10_000, n in 1usize..12, with_sum: bool) {
        let mut rng = seeded_rng(seed);
        let p = random_instance(&mut rng, n, with_sum);
        let s = box_qp_solve(&p, 1e-8, 10_000).unwrap();
        prop_assert!(s.x.iter().all(|&w| (0.0..=1.0).contains(&w)));
        prop_assert!(p.violation(&s.x) <= 1e-12);
        prop_assert!(p.kkt_residual(&s.x) <= 1e-8);
    }
}
