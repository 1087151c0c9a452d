use std::collections::HashSet;

use proptest::prelude::*;
use shiftlab::cmt::*;
use shiftlab::data::{gen_mixing_domains, Dataset};
use shiftlab::erm::{predict, weighted_krr_fit, Loss, LinearPredictor};
use shiftlab::error::Error;
use shiftlab::kernels::GaussianBasis;
use shiftlab::numerics::{seeded_rng, Matrix, RandomStream};

fn random_affine(rng: &mut RandomStream, d: usize) -> Mechanism {
    loop {
        let w = Matrix::from_fn(d, d, |i, j| if i == j { 1.5 } else { 0.0 } + 0.5 * rng.normal());
        let b = (0..d).map(|_| rng.normal()).collect();
        if let Ok(m) = Mechanism::affine(w, b) {
            return m;
        }
    }
}

fn uniform_pair(rng: &mut RandomStream, n: usize) -> Dataset {
    let x = Matrix::from_fn(n, 1, |_, _| rng.uniform_range(-1.0, 1.0));
    let y = (0..n).map(|_| rng.normal()).collect();
    Dataset::regression(x, y).unwrap()
}

#[test]
fn affine_mechanisms_round_trip() {
    let mut rng = seeded_rng(90);
    for d in 2..=4 {
        let m = random_affine(&mut rng, d);
        let z = Matrix::from_fn(100, d, |_, _| 3.0 * rng.normal());
        let back = m.forward(&m.inverse(&z).unwrap()).unwrap();
        let err = z.as_slice().iter().zip(back.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-8, "D = {d}: {err}");
    }
}

#[test]
fn extract_ics_with_identity_returns_the_data() {
    let t = uniform_pair(&mut seeded_rng(91), 7);
    assert_eq!(extract_ics(&Mechanism::identity(2), &t).unwrap(), t.joint().unwrap());
}

#[test]
fn large_inflation_is_subsampled_with_every_diagonal() {
    let mut rng = seeded_rng(92);
    let ics = Matrix::from_fn(10, 4, |_, _| rng.normal());
    let infl = inflate(&ics, &ics, 500, &mut rng).unwrap();
    assert_eq!(infl.combos.len(), 500);
    let set: HashSet<&Vec<usize>> = infl.combos.iter().collect();
    assert_eq!(set.len(), 500);
    for j in 0..10 {
        assert!(set.contains(&vec![j; 4]));
    }
    assert!(infl.combos.iter().flatten().all(|&j| j < 10));
}

#[test]
fn one_dimensional_inflation_keeps_the_sample() {
    let ics = Matrix::column(&[0.3, -1.0, 2.0]);
    let infl = inflate(&ics, &ics, 100, &mut seeded_rng(93)).unwrap();
    assert_eq!(infl.combos, vec![vec![0], vec![1], vec![2]]);
}

#[test]
fn affine_synthesis_matches_hand_computation() {
    // s = W z + b with W = [[2, 1], [0, 1]], b = (1, −1), so
    // z = W⁻¹(s − b) with W⁻¹ = [[0.5, −0.5], [0, 1]].
    let m = Mechanism::affine(Matrix::from_rows(&[[2.0, 1.0], [0.0, 1.0]]), vec![1.0, -1.0]).unwrap();
    let target = Dataset::regression(Matrix::column(&[1.0, -2.0]), vec![3.0, 0.5]).unwrap();
    let z = target.joint().unwrap();
    let s = extract_ics(&m, &target).unwrap();
    assert_eq!(s.row(0), &[6.0, 2.0]);
    assert_eq!(s.row(1), &[-2.5, -0.5]);
    let infl = inflate(&s, &z, 100, &mut seeded_rng(94)).unwrap();
    let out = synthesize(&m, &infl).unwrap();
    let y = out.y_real().unwrap();
    let want = [(1.0, 3.0), (0.5 * (6.0 - 1.0) - 0.5 * 0.5, 0.5), (0.5 * (-3.5) - 0.5 * 3.0, 3.0), (-2.0, 0.5)];
    for (c, (wx, wy)) in want.iter().enumerate() {
        assert!((out.x[(c, 0)] - wx).abs() < 1e-12 && (y[c] - wy).abs() < 1e-12, "combo {c}");
    }
}

#[test]
fn identity_synthesis_recombines_coordinates() {
    let t = uniform_pair(&mut seeded_rng(95), 4);
    let z = t.joint().unwrap();
    let infl = inflate(&z, &z, 1000, &mut seeded_rng(96)).unwrap();
    let out = synthesize(&Mechanism::identity(2), &infl).unwrap();
    for (c, tup) in infl.combos.iter().enumerate() {
        assert_eq!(out.x[(c, 0)], z[(tup[0], 0)]);
        assert_eq!(out.y_real().unwrap()[c], z[(tup[1], 1)]);
    }
}

#[test]
fn far_point_is_filtered_and_originals_survive() {
    let mut rng = seeded_rng(97);
    let pool = uniform_pair(&mut rng, 200);
    let mut synth = uniform_pair(&mut rng, 30);
    synth.x[(5, 0)] = 10.0;
    let mut protected = vec![false; 30];
    protected[..3].fill(true);
    synth.x[(0, 0)] = 12.0;
    let keep = support_filter(&synth, &pool, 0.1, 1.0, &protected).unwrap();
    assert!(!keep.contains(&5));
    assert!(keep.contains(&0));
    assert_eq!(keep.len(), 30 - 2);
    assert_eq!(support_filter(&synth, &pool, 0.0, 1.0, &protected).unwrap().len(), 30);
}

#[test]
fn cmt_risk_matches_scalar_loop() {
    let mut rng = seeded_rng(98);
    let d = uniform_pair(&mut rng, 12);
    let f = LinearPredictor {
        basis: GaussianBasis::new(Matrix::column(&[-0.5, 0.5]), 0.6).unwrap(),
        alpha: vec![0.7, -1.2],
    };
    let k = |x: f64, c: f64| (-(x - c) * (x - c) / (2.0 * 0.36)).exp();
    let y = d.y_real().unwrap();
    let want: f64 = (0..12)
        .map(|i| {
            let x = d.x[(i, 0)];
            (0.7 * k(x, -0.5) - 1.2 * k(x, 0.5) - y[i]).powi(2)
        })
        .sum::<f64>()
        / 12.0;
    assert!((cmt_risk(&f, &d, &Loss::Squared).unwrap() - want).abs() < 1e-14);

    let perfect = Dataset::regression(d.x.clone(), predict(&f, &d.x).unwrap()).unwrap();
    assert_eq!(cmt_risk(&f, &perfect, &Loss::Squared).unwrap(), 0.0);
}

#[test]
fn closed_form_loo_matches_refitting() {
    let mut rng = seeded_rng(99);
    let d = uniform_pair(&mut rng, 15);
    let basis = target_basis(&d).unwrap();
    let grid = [0.01, 0.3];
    let held: Vec<bool> = (0..15).map(|i| i % 3 != 0).collect();
    let fit = krr_loo_fit(&d, &basis, &grid, &held).unwrap();
    let y = d.y_real().unwrap();
    for (g, &lambda) in grid.iter().enumerate() {
        let mut err = 0.0;
        let mut count = 0.0;
        for i in (0..15).filter(|&i| held[i]) {
            let mut w = vec![1.0; 15];
            w[i] = 0.0;
            let f = weighted_krr_fit(&d.x, y, &w, &basis, lambda).unwrap();
            let p = predict(&f, &d.x.select_rows(&[i])).unwrap()[0];
            err += (y[i] - p).powi(2);
            count += 1.0;
        }
        let brute = err / count;
        assert!((fit.loo[g] - brute).abs() <= 1e-8 * (1.0 + brute), "{} vs {brute}", fit.loo[g]);
    }
}

#[test]
fn identity_mechanism_helps_on_independent_components() {
    let mut rng = seeded_rng(100);
    let grid = default_krr_grid();
    let (mut cmt, mut tar) = (0.0, 0.0);
    for _ in 0..200 {
        let target = uniform_pair(&mut rng, 6);
        let test = uniform_pair(&mut rng, 500);
        let basis = target_basis(&target).unwrap();
        let src = MechanismSource::Given(Mechanism::identity(2));
        let fit = cmt_fit(&[], &target, &src, &basis, &grid, &CmtConfig::default(), &mut rng).unwrap();
        assert_eq!(fit.n_train, 36);
        cmt += test_mse(&fit.krr.predictor, &test).unwrap();
        tar += test_mse(&tar_only_fit(&target, &basis, &grid).unwrap().predictor, &test).unwrap();
    }
    assert!(cmt <= tar, "cmt {} tar-only {}", cmt / 200.0, tar / 200.0);
}

#[test]
fn gcl_objective_decreases() {
    let a = Matrix::from_rows(&[[1.0, 0.6], [-0.4, 1.0]]);
    let scales = vec![vec![1.0, 0.3], vec![0.3, 1.0], vec![0.6, 0.6]];
    let cfg = GclConfig {
        epochs: 30,
        lr: 1e-2,
        ..GclConfig::default()
    };
    let mut improved = 0;
    for seed in 0..5 {
        let domains = gen_mixing_domains(&a, &scales, 300, &mut seeded_rng(200 + seed)).unwrap();
        let init = gcl_fit(&domains, &GclConfig { epochs: 0, ..cfg }, &mut seeded_rng(seed)).unwrap();
        let fit = gcl_fit(&domains, &cfg, &mut seeded_rng(seed)).unwrap();
        if gcl_objective(&fit, &domains).unwrap() <= gcl_objective(&init, &domains).unwrap() {
            improved += 1;
        }
    }
    assert!(improved >= 4, "{improved}/5");
}

#[test]
fn gcl_needs_two_domains() {
    let a = Matrix::identity(2);
    let one = gen_mixing_domains(&a, &[vec![1.0, 1.0]], 50, &mut seeded_rng(101)).unwrap();
    let r = gcl_fit(&one, &GclConfig::default(), &mut seeded_rng(1));
    assert!(matches!(r, Err(Error::NeedTwoDomains)));
}

#[test]
fn amari_distance_hand_value() {
    // W·A = [[1, 0.5], [0, 1]]: one row and one column contribute 0.5 each,
    // normalised by 2·D·(D − 1) = 4.
    let w = Matrix::from_rows(&[[1.0, 0.5], [0.0, 1.0]]);
    assert!((amari_distance(&w, &Matrix::identity(2)).unwrap() - 0.25).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inflation_has_the_expected_size(n in 1usize..8, d in 1usize..5, extra in 0usize..300, seed in 0u64..1000) {
        let mut rng = seeded_rng(seed);
        let ics = Matrix::from_fn(n, d, |_, _| rng.normal());
        let cap = n + extra;
        let infl = inflate(&ics, &ics, cap, &mut rng).unwrap();
        let full = n.pow(d as u32);
        prop_assert_eq!(infl.combos.len(), full.min(cap));
        let diag = (0..infl.combos.len()).filter(|&c| infl.is_diagonal(c)).count();
        prop_assert_eq!(diag, n);
    }

    #[test]
    fn drop_fraction_follows_the_quantile(q in 0.0f64..0.95, n in 5usize..60, seed in 0u64..1000) {
        let mut rng = seeded_rng(seed);
        let pool = uniform_pair(&mut rng, 40);
        let synth = uniform_pair(&mut rng, n);
        let keep = support_filter(&synth, &pool, q, 0.7, &vec![false; n]).unwrap();
        let dropped = (n - keep.len()) as f64 / n as f64;
        prop_assert!((dropped - q).abs() <= 1.0 / n as f64);
        prop_assert!(keep.windows(2).all(|w| w[0] < w[1]));
    }
}
