//! End-to-end acceptance checks. Each test prints one `ACn PASS/FAIL` line.

mod common;

use std::time::Instant;

use common::{enumerate, random_instance};
use shiftlab::cmt::{amari_distance, augmented_risk, cmt_risk, gcl_fit, GclConfig, Mechanism};
use shiftlab::data::{class_prior_weights, gen_mixing_domains, gen_toy_regression, Dataset};
use shiftlab::erm::{empirical_risk, predict, LinearPredictor, Loss, Target};
use shiftlab::harness::stats::mean;
use shiftlab::harness::{paired_t_test, preset, preset_names, run_experiment, ExperimentConfig, Report};
use shiftlab::kernels::{choose_centers, median_heuristic, GaussianBasis};
use shiftlab::nnet::{loss_grad, Mlp};
use shiftlab::numerics::qp::box_qp_solve;
use shiftlab::numerics::{seeded_rng, Matrix, RandomStream};
use shiftlab::onestep::{jub_batch_grad, jub_from_values, upper_bound_check, Model, OneStepConfig};
use shiftlab::ratio::{default_lambda_grid, evaluate_ratio, kmm_weights, select_lambda, ulsif_fit, KmmConfig};

fn verdict(id: &str, ok: bool, detail: String, start: Instant) {
    let tag = if ok { "PASS" } else { "FAIL" };
    println!("{id} {tag}: {detail} [{:.1}s]", start.elapsed().as_secs_f64());
    assert!(ok, "{id} failed: {detail}");
}

fn run(cfg: &ExperimentConfig) -> Report {
    let (rep, failures) = run_experiment(cfg).unwrap();
    assert!(failures.is_empty(), "{failures:?}");
    rep
}

fn toy_table1() -> Report {
    run(&preset("toy-table1").unwrap())
}

#[test]
fn ac01_toy_regression_replication() {
    let t = Instant::now();
    let rep = toy_table1();
    let one = mean(&rep.values("onestep_linear_squared/test_mse"));
    let eiw = mean(&rep.values("eiwerm_squared/test_mse"));
    let erm = mean(&rep.values("erm_squared/test_mse"));
    let ok = one <= 0.02 && one <= eiw && erm >= 0.08 && t.elapsed().as_secs() <= 300;
    verdict("AC1", ok, format!("one-step {one:.4}, EIWERM {eiw:.4}, ERM {erm:.4} over 100 trials"), t);
}

#[test]
fn ac02_method_ordering() {
    let t = Instant::now();
    let rep = toy_table1();
    let erm = rep.values("erm_squared/test_mse");
    let one = rep.values("onestep_linear_squared/test_mse");
    let m = |k: &str| mean(&rep.values(k));
    let (e, ei, ri, o) = (
        m("erm_squared/test_mse"),
        m("eiwerm_squared/test_mse"),
        m("riwerm_squared/test_mse"),
        m("onestep_linear_squared/test_mse"),
    );
    let tt = paired_t_test(&erm, &one).unwrap();
    let ok = e > ei && ei >= ri && ri >= o && tt.significant(0.05) && tt.mean_diff > 0.0;
    verdict(
        "AC2",
        ok,
        format!("ERM {e:.4} > EIWERM {ei:.4} ≥ RIWERM {ri:.4} ≥ one-step {o:.4}; ERM vs one-step t = {:.2}, p = {:.2e}", tt.t, tt.p_value),
        t,
    );
}

#[test]
fn ac03_ulsif_accuracy() {
    let t = Instant::now();
    let mut mses = Vec::new();
    for seed in 0..20 {
        let mut rng = seeded_rng(1000 + seed);
        let pair = gen_toy_regression(150, 150, &mut rng);
        let sigma = median_heuristic(&pair.test.x).unwrap();
        let basis = GaussianBasis::new(choose_centers(&pair.test.x, 50, &mut rng).unwrap(), sigma).unwrap();
        let grid = default_lambda_grid();
        let lambda = select_lambda(&pair.train.x, &pair.test.x, &basis, &grid, 5, &mut rng).unwrap();
        let model = ulsif_fit(&pair.train.x, &pair.test.x, &basis, lambda).unwrap();
        let est = evaluate_ratio(&model, &pair.train.x).unwrap();
        let truth = pair.true_weights.as_ref().unwrap();
        mses.push(est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 150.0);
    }
    let m = mean(&mses);
    verdict("AC3", m <= 0.05, format!("uLSIF mean squared error vs true ratio {m:.3} over 20 seeds (target ≤ 0.05)"), t);
}

fn random_linear(rng: &mut RandomStream, basis: &GaussianBasis, scale: f64, positive: bool) -> Model {
    let alpha = (0..basis.size())
        .map(|_| if positive { scale * rng.uniform() } else { scale * rng.normal() })
        .collect();
    Model::Linear(LinearPredictor {
        basis: basis.clone(),
        alpha,
    })
}

#[test]
fn ac04_risk_bound_suite() {
    let t = Instant::now();
    let mut holds = 0;
    for s in 0..50 {
        let mut rng = seeded_rng(2000 + s);
        let pair = gen_toy_regression(10_000, 200, &mut rng);
        let bf = GaussianBasis::new(choose_centers(&pair.test.x, 20, &mut rng).unwrap(), 0.7).unwrap();
        let bg = GaussianBasis::new(choose_centers(&pair.test.x, 20, &mut rng).unwrap(), 0.3).unwrap();
        let f = random_linear(&mut rng, &bf, 0.5, false);
        let g = random_linear(&mut rng, &bg, 1.0, true);
        let cfg = OneStepConfig {
            loss_ub: Loss::Squared,
            m: 1.0,
            ..OneStepConfig::default()
        };
        if upper_bound_check(&f, &g, &pair, &Loss::tukey(), &cfg).unwrap().holds(3.0) {
            holds += 1;
        }
    }
    let ok = holds == 50 && t.elapsed().as_secs() <= 60;
    verdict("AC4", ok, format!("R²/2 ≤ J ≤ J_UB within 3 stderr in {holds}/50 pairs, n = 10⁴"), t);
}

fn central_difference(p0: &[f64], i: usize, h: f64, eval: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let mut p = p0.to_vec();
    p[i] += h;
    let up = eval(&p);
    p[i] -= 2.0 * h;
    (up - eval(&p)) / (2.0 * h)
}

fn rel_err(fd: f64, an: f64) -> f64 {
    (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6)
}

#[test]
fn ac05_gradient_correctness() {
    let t = Instant::now();
    let losses = [Loss::Squared, Loss::tukey(), Loss::Logistic, Loss::SoftmaxCe];
    let mut worst_net: f64 = 0.0;
    for inst in 0..20u64 {
        let mut rng = seeded_rng(3000 + inst);
        let loss = losses[inst as usize % 4];
        let k = if loss == Loss::SoftmaxCe { 3 } else { 1 };
        let d = 1 + rng.index(3);
        let mut net = Mlp::new(&[d, 2 + rng.index(4), 2 + rng.index(3), k], &mut rng).unwrap();
        let jit: Vec<f64> = net.params_flat().iter().map(|v| v + 0.1 * rng.normal()).collect();
        net.set_params_flat(&jit).unwrap();
        let x = Matrix::from_fn(5, d, |_, _| rng.normal());
        let y: Vec<Target> = (0..5)
            .map(|_| match loss {
                Loss::SoftmaxCe => Target::Class(rng.index(3)),
                Loss::Logistic => Target::Real(if rng.bernoulli(0.5) { 1.0 } else { -1.0 }),
                _ => Target::Real(rng.normal()),
            })
            .collect();
        let (out, cache) = net.forward(&x).unwrap();
        let (_, g) = loss_grad(&loss, &out, &y).unwrap().weighted(&[0.2; 5]);
        let an = net.backward(&cache, &g).unwrap().flat();
        let p0 = net.params_flat();
        let mut eval = |p: &[f64]| {
            let mut n = net.clone();
            n.set_params_flat(p).unwrap();
            loss_grad(&loss, &n.predict(&x).unwrap(), &y).unwrap().weighted(&[0.2; 5]).0
        };
        for i in 0..p0.len() {
            worst_net = worst_net.max(rel_err(central_difference(&p0, i, 1e-6, &mut eval), an[i]));
        }
    }

    let mut worst_g: f64 = 0.0;
    for inst in 0..20u64 {
        let mut rng = seeded_rng(3100 + inst);
        let f = Mlp::new(&[2, 6, 1], &mut rng).unwrap();
        let mut g = Mlp::new(&[2, 3 + rng.index(4), 1], &mut rng).unwrap();
        let jit: Vec<f64> = g.params_flat().iter().map(|v| v + 0.1 * rng.normal()).collect();
        g.set_params_flat(&jit).unwrap();
        let x_tr = Matrix::from_fn(8, 2, |_, _| rng.normal());
        let x_te = Matrix::from_fn(6, 2, |_, _| rng.normal());
        let tg: Vec<Target> = (0..8).map(|_| Target::Real(rng.normal())).collect();
        let cfg = OneStepConfig {
            m: rng.uniform_range(0.5, 2.0),
            loss_ub: if inst % 2 == 0 { Loss::Squared } else { Loss::tukey() },
            ..OneStepConfig::default()
        };
        let (_, grads) = jub_batch_grad(&f, &g, &x_tr, &tg, &x_te, &cfg).unwrap();
        let an = grads.flat();
        let l = loss_grad(&cfg.loss_ub, &f.predict(&x_tr).unwrap(), &tg).unwrap().values;
        let p0 = g.params_flat();
        let mut eval = |p: &[f64]| {
            let mut n = g.clone();
            n.set_params_flat(p).unwrap();
            jub_from_values(&n.predict(&x_tr).unwrap().col(0), &l, &n.predict(&x_te).unwrap().col(0), cfg.m)
        };
        for i in 0..p0.len() {
            worst_g = worst_g.max(rel_err(central_difference(&p0, i, 1e-5, &mut eval), an[i]));
        }
    }
    let ok = worst_net <= 1e-4 && worst_g <= 1e-4;
    verdict(
        "AC5",
        ok,
        format!("worst relative error: network backprop {worst_net:.1e}, weight-network gradient {worst_g:.1e} (20 instances each)"),
        t,
    );
}

#[test]
fn ac06_qp_oracle() {
    let t = Instant::now();
    let mut rng = seeded_rng(4000);
    let mut worst: f64 = 0.0;
    for i in 0..50 {
        let p = random_instance(&mut rng, 1 + i % 6, i % 2 == 0);
        let s = box_qp_solve(&p, 1e-8, 10_000).unwrap();
        worst = worst.max((s.objective - enumerate(&p)).abs());
    }
    let x = Matrix::from_fn(40, 2, |_, _| rng.normal());
    let cfg = KmmConfig::defaults(40, median_heuristic(&x).unwrap());
    let w = kmm_weights(&x, &x, &cfg).unwrap();
    let dev = w.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let ok = worst <= 1e-6 && dev <= 1e-4;
    verdict("AC6", ok, format!("max objective gap {worst:.1e} over 50 instances; KMM on identical sets max |w − 1| = {dev:.1e}"), t);
}

#[test]
fn ac07_diw_noise_separation() {
    let t = Instant::now();
    let rep = run(&preset("labelnoise-sym04").unwrap());
    let intact = rep.values("diw/weight_intact");
    let corrupted = rep.values("diw/weight_corrupted");
    let diw = rep.values("diw/test_accuracy");
    let erm = rep.values("erm/test_accuracy");
    let sep = intact.iter().zip(&corrupted).filter(|(i, c)| **c < 0.5 * **i).count();
    let acc = diw.iter().zip(&erm).filter(|(d, e)| d >= e).count();
    let ok = sep >= 4 && acc >= 4 && t.elapsed().as_secs() <= 180;
    verdict(
        "AC7",
        ok,
        format!(
            "weight separation in {sep}/5 seeds (intact {:.3}, mislabeled {:.3}); DIW ≥ uniform accuracy in {acc}/5 ({:.4} vs {:.4})",
            mean(&intact),
            mean(&corrupted),
            mean(&diw),
            mean(&erm)
        ),
        t,
    );
}

#[test]
fn ac08_class_prior_weights() {
    let t = Instant::now();
    let (major, minor) = class_prior_weights(0.2, 100.0);
    let exact = major == 0.802 && minor == 80.2;
    let mut cfg = preset("priorshift-rho100").unwrap();
    cfg.trials = 1;
    let rho = run(&cfg).values("diw/spearman")[0];
    verdict(
        "AC8",
        exact && rho > 0.8,
        format!("oracle weights {major} / {minor}; DIW per-class Spearman {rho:.4} at n_tr ≈ 10⁴ (target > 0.8)"),
        t,
    );
}

fn fixed_predictor(dim: usize) -> LinearPredictor {
    let centres = Matrix::from_fn(3, dim, |i, j| (i as f64 - 1.0) * (1.0 + 0.5 * j as f64));
    LinearPredictor {
        basis: GaussianBasis::new(centres, 1.0).unwrap(),
        alpha: vec![0.2, -0.3, 0.5],
    }
}

fn mixed_target(a: &Matrix, n: usize, rng: &mut RandomStream) -> Dataset {
    let mut x = Matrix::zeros(n, 1);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let s = [rng.laplace(1.0), rng.uniform_range(-2.0, 2.0)];
        let z = a.matvec(&s).unwrap();
        x[(i, 0)] = z[0];
        y.push(z[1]);
    }
    Dataset::regression(x, y).unwrap()
}

#[test]
fn ac09_cmt_estimator_statistics() {
    let t = Instant::now();
    let a = Matrix::from_rows(&[[1.0, 0.5], [-0.3, 1.0]]);
    let mech = Mechanism::from_mixing(&a).unwrap();
    let f = fixed_predictor(1);
    let mut rng = seeded_rng(5000);

    let big = mixed_target(&a, 400_000, &mut rng);
    let pl = predict(&f, &big.x).unwrap();
    let losses: Vec<f64> = pl.iter().zip(big.y_real().unwrap()).map(|(p, y)| (p - y).powi(2)).collect();
    let truth = mean(&losses);
    let se_truth = shiftlab::harness::stats::sample_std(&losses) / (losses.len() as f64).sqrt();

    let (mut aug, mut plain) = (Vec::new(), Vec::new());
    for _ in 0..2000 {
        let target = mixed_target(&a, 10, &mut rng);
        aug.push(augmented_risk(&f, &mech, &target, &Loss::Squared, 100_000, &mut rng).unwrap());
        plain.push(cmt_risk(&f, &target, &Loss::Squared).unwrap());
    }
    let stats = |v: &[f64]| {
        let sd = shiftlab::harness::stats::sample_std(v);
        (mean(v), sd * sd, (sd * sd / v.len() as f64 + se_truth * se_truth).sqrt())
    };
    let (ma, va, sa) = stats(&aug);
    let (mp, vp, sp) = stats(&plain);
    let unbiased = (ma - truth).abs() <= 3.0 * sa && (mp - truth).abs() <= 3.0 * sp;
    let variance = va <= 1.05 * vp;

    // One-dimensional data: the label alone, no features.
    let one_d = Dataset::regression(Matrix::zeros(9, 0), (0..9).map(|_| rng.normal()).collect()).unwrap();
    let f0 = LinearPredictor {
        basis: GaussianBasis::new(Matrix::zeros(1, 0), 1.0).unwrap(),
        alpha: vec![0.4],
    };
    let m1 = Mechanism::affine(Matrix::from_rows(&[[2.0]]), vec![0.5]).unwrap();
    let r_aug = augmented_risk(&f0, &m1, &one_d, &Loss::Squared, 100, &mut rng).unwrap();
    let r_hat = empirical_risk(&Loss::Squared, &predict(&f0, &one_d.x).unwrap(), one_d.y_real().unwrap()).unwrap();
    let exact = r_aug.to_bits() == r_hat.to_bits();

    let rep = run(&preset("cmt-synthetic").unwrap());
    let cmt = rep.values("cmt/test_mse");
    let tar = rep.values("tar_only/test_mse");
    let tt = paired_t_test(&cmt, &tar).unwrap();
    let beats = tt.mean_diff < 0.0 && tt.significant(0.05);

    verdict(
        "AC9",
        unbiased && variance && exact && beats,
        format!(
            "R = {truth:.4}; mean Ř {ma:.4} (±{sa:.4}), mean R̂ {mp:.4} (±{sp:.4}); Var Ř / Var R̂ = {:.3}; D=1 bit-exact {exact}; CMT {:.4} vs TarOnly {:.4} over {} trials, p = {:.1e}",
            va / vp,
            mean(&cmt),
            mean(&tar),
            cmt.len(),
            tt.p_value
        ),
        t,
    );
}

#[test]
fn ac10_gcl_identifiability() {
    let t = Instant::now();
    let a = Matrix::from_rows(&[[1.0, 0.6], [-0.4, 1.0]]);
    let scales = vec![vec![1.0, 0.3], vec![0.3, 1.0], vec![0.6, 0.6]];
    let mut dists = Vec::new();
    for seed in 0..5 {
        let domains = gen_mixing_domains(&a, &scales, 2000, &mut seeded_rng(6000 + seed)).unwrap();
        let model = gcl_fit(&domains, &GclConfig::default(), &mut seeded_rng(6100 + seed)).unwrap();
        dists.push(amari_distance(&model.w, &a).unwrap());
    }
    let good = dists.iter().filter(|&&d| d <= 0.3).count();
    let ok = good >= 4 && t.elapsed().as_secs() <= 120;
    let shown: Vec<String> = dists.iter().map(|d| format!("{d:.3}")).collect();
    verdict("AC10", ok, format!("Amari distance ≤ 0.3 in {good}/5 seeds ({})", shown.join(", ")), t);
}

#[test]
fn ac11_determinism() {
    let t = Instant::now();
    let mut differing = Vec::new();
    for name in preset_names() {
        let mut cfg = preset(name).unwrap();
        cfg.trials = 2;
        if run(&cfg).to_csv() != run(&cfg).to_csv() {
            differing.push(name);
        }
    }
    verdict(
        "AC11",
        differing.is_empty(),
        format!("{} presets rerun at 2 trials, differing reports: {differing:?}", preset_names().len()),
        t,
    );
}
