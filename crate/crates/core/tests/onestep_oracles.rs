use proptest::prelude::*;
use shiftlab::data::gen_toy_regression;
use shiftlab::erm::{loss_eval, LinearPredictor, Loss, Target};
use shiftlab::harness::{preset, run_experiment};
use shiftlab::kernels::{choose_centers, design_matrix, GaussianBasis};
use shiftlab::nnet::{loss_grad, Mlp};
use shiftlab::numerics::{seeded_rng, spd_solve, Matrix, RandomStream};
use shiftlab::onestep::*;

fn random_linear(rng: &mut RandomStream, basis: &GaussianBasis, scale: f64, positive: bool) -> Model {
    let alpha = (0..basis.size())
        .map(|_| if positive { scale * rng.uniform() } else { scale * rng.normal() })
        .collect();
    Model::Linear(LinearPredictor {
        basis: basis.clone(),
        alpha,
    })
}

fn bases(pair_test: &Matrix, rng: &mut RandomStream) -> (GaussianBasis, GaussianBasis) {
    let f = GaussianBasis::new(choose_centers(pair_test, 20, rng).unwrap(), 0.7).unwrap();
    let g = GaussianBasis::new(choose_centers(pair_test, 20, rng).unwrap(), 0.3).unwrap();
    (f, g)
}

#[test]
fn jub_matches_scalar_recomputation() {
    let mut rng = seeded_rng(60);
    let pair = gen_toy_regression(50, 40, &mut rng);
    let (bf, bg) = bases(&pair.test.x, &mut rng);
    let jm = JointModel {
        f: random_linear(&mut rng, &bf, 0.5, false),
        g: random_linear(&mut rng, &bg, 0.3, false),
    };
    let cfg = OneStepConfig {
        m: 1.7,
        loss_ub: Loss::tukey(),
        ..OneStepConfig::default()
    };
    let got = jub_empirical(&jm, &pair.train, &pair.test.x, &cfg).unwrap();

    let y = pair.train.y_real().unwrap();
    let g = |x: f64| jm.g.scalar(&Matrix::from_rows(&[[x]])).unwrap()[0].max(0.0);
    let f = |x: f64| jm.f.scalar(&Matrix::from_rows(&[[x]])).unwrap()[0];
    let (mut a, mut sq) = (0.0, 0.0);
    for (i, &x) in pair.train.x.col(0).iter().enumerate() {
        let l = loss_eval(&cfg.loss_ub, &[f(x)], Target::Real(y[i])).unwrap();
        a += g(x) * l;
        sq += g(x) * g(x);
    }
    a /= 50.0;
    sq /= 50.0;
    let te: f64 = pair.test.x.col(0).iter().map(|&x| g(x)).sum::<f64>() / 40.0;
    let want = a * a + 1.7 * 1.7 * (sq - 2.0 * te);
    assert!((got - want).abs() <= 1e-12 * (1.0 + want.abs()), "{got} vs {want}");
}

#[test]
fn bound_holds_on_random_pairs() {
    for s in 0..5 {
        let mut rng = seeded_rng(70 + s);
        let pair = gen_toy_regression(4000, 100, &mut rng);
        let (bf, bg) = bases(&pair.test.x, &mut rng);
        let f = random_linear(&mut rng, &bf, 0.5, false);
        let g = random_linear(&mut rng, &bg, 1.0, true);
        let cfg = OneStepConfig {
            loss_ub: Loss::Squared,
            ..OneStepConfig::default()
        };
        let chk = upper_bound_check(&f, &g, &pair, &Loss::tukey(), &cfg).unwrap();
        assert!(chk.holds(3.0), "{chk:?}");
    }
}

#[test]
fn beta_system_is_solved_every_round() {
    let mut rng = seeded_rng(61);
    let pair = gen_toy_regression(150, 150, &mut rng);
    let (bf, bg) = bases(&pair.test.x, &mut rng);
    for loss in [Loss::Squared, Loss::tukey()] {
        let cfg = OneStepConfig {
            loss_ub: loss,
            rounds: 6,
            lambda: 1.0,
            mu: 1e-3,
            ..OneStepConfig::default()
        };
        let fit = onestep_linear(&pair.train, &pair.test, &bf, &bg, &cfg).unwrap();
        assert_eq!(fit.trace.len(), 6);
        for t in &fit.trace {
            assert!(t.beta_residual <= 1e-8, "{t:?}");
            assert!(t.test_metric.unwrap().is_finite());
        }
    }
}

#[test]
fn first_round_uses_squared_targets() {
    // With α = 0 the first β-step sees ℓ_i = y_i².
    let mut rng = seeded_rng(62);
    let pair = gen_toy_regression(40, 30, &mut rng);
    let (bf, bg) = bases(&pair.test.x, &mut rng);
    let cfg = OneStepConfig {
        rounds: 1,
        m: 2.0,
        lambda: 0.5,
        ..OneStepConfig::default()
    };
    let fit = onestep_linear(&pair.train, &pair.test, &bf, &bg, &cfg).unwrap();
    let psi = design_matrix(&bg, &pair.train.x).unwrap();
    let psi_te = design_matrix(&bg, &pair.test.x).unwrap();
    let (n, b) = (40.0, bg.size());
    let l: Vec<f64> = pair.train.y_real().unwrap().iter().map(|y| y * y).collect();
    let v: Vec<f64> = (0..b).map(|j| (0..40).map(|i| psi[(i, j)] * l[i]).sum::<f64>() / n).collect();
    let a = Matrix::from_fn(b, b, |j, k| {
        let h: f64 = (0..40).map(|i| psi[(i, j)] * psi[(i, k)]).sum::<f64>() / n;
        h + v[j] * v[k] / 4.0 + if j == k { 0.5 / 4.0 } else { 0.0 }
    });
    let h: Vec<f64> = (0..b).map(|j| (0..30).map(|i| psi_te[(i, j)]).sum::<f64>() / 30.0).collect();
    let beta: Vec<f64> = spd_solve(&a, &h).unwrap().into_iter().map(|x| x.max(0.0)).collect();
    let Model::Linear(g) = &fit.model.g else { panic!("linear g") };
    for (u, v) in g.alpha.iter().zip(&beta) {
        assert!((u - v).abs() <= 1e-9 * (1.0 + v.abs()), "{u} vs {v}");
    }
}

#[test]
fn weight_network_gradient_matches_finite_differences() {
    let mut rng = seeded_rng(63);
    let f = Mlp::new(&[2, 5, 1], &mut rng).unwrap();
    let mut g = Mlp::new(&[2, 4, 1], &mut rng).unwrap();
    let jit: Vec<f64> = g.params_flat().iter().map(|v| v + 0.1 * rng.normal()).collect();
    g.set_params_flat(&jit).unwrap();
    let x_tr = Matrix::from_fn(8, 2, |_, _| rng.normal());
    let x_te = Matrix::from_fn(6, 2, |_, _| rng.normal());
    let t: Vec<Target> = (0..8).map(|_| Target::Real(rng.normal())).collect();
    let cfg = OneStepConfig {
        m: 1.3,
        loss_ub: Loss::Squared,
        ..OneStepConfig::default()
    };
    let (value, grads) = jub_batch_grad(&f, &g, &x_tr, &t, &x_te, &cfg).unwrap();
    let l = loss_grad(&cfg.loss_ub, &f.predict(&x_tr).unwrap(), &t).unwrap().values;
    let jub = |net: &Mlp| {
        let gt = net.predict(&x_tr).unwrap().col(0);
        let ge = net.predict(&x_te).unwrap().col(0);
        jub_from_values(&gt, &l, &ge, cfg.m)
    };
    assert!((value - jub(&g)).abs() < 1e-14);
    let analytic = grads.flat();
    let p0 = g.params_flat();
    let h = 1e-5;
    for i in 0..p0.len() {
        let (mut plus, mut minus) = (g.clone(), g.clone());
        let mut p = p0.clone();
        p[i] += h;
        plus.set_params_flat(&p).unwrap();
        p[i] -= 2.0 * h;
        minus.set_params_flat(&p).unwrap();
        let fd = (jub(&plus) - jub(&minus)) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-8);
        assert!(rel <= 1e-4 || (fd - analytic[i]).abs() < 1e-9, "param {i}: {fd} vs {}", analytic[i]);
    }
}

#[test]
fn gradient_method_matches_erm_on_rotated_shift() {
    let mut cfg = preset("rotated-shift").unwrap();
    cfg.trials = 5;
    let (rep, failures) = run_experiment(&cfg).unwrap();
    assert!(failures.is_empty());
    let erm = rep.values("erm/test_accuracy");
    let one = rep.values("onestep_gradient/test_accuracy");
    let wins = erm.iter().zip(&one).filter(|(e, o)| o >= e).count();
    assert!(wins >= 4, "{wins}/5: erm {erm:?} onestep {one:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_weights_form_a_distribution(v in proptest::collection::vec(-3.0f64..3.0, 1..20)) {
        let w = normalized_batch_weights(&v);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        for (wi, vi) in w.iter().zip(&v) {
            if *vi <= 0.0 && v.iter().any(|&x| x > 0.0) {
                prop_assert_eq!(*wi, 0.0);
            }
        }
    }
}
