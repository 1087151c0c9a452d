//! One-step covariate-shift adaptation: joint minimisation of the upper bound
//!
//! ```text
//! Ĵ_UB(f, g) = ((1/n_tr) Σ g(x_i) ℓ_UB(f(x_i), y_i))²
//!            + m² ((1/n_tr) Σ g(x_i)² − (2/n_te) Σ g(x_j^te))
//! ```
//!
//! over a predictor `f` and a non-negative weight model `g`. The constant
//! `m²·E_tr[w²]` of the exact bound is never estimated, so Ĵ_UB values are
//! only comparable on the same data.

use std::fmt::Write as _;

use crate::data::{Dataset, ShiftedPair};
use crate::erm::{
    decision, irls_tukey_fit, loss_eval, predict, weighted_krr_fit, IrlsOptions, LinearPredictor,
    Loss, Target,
};
use crate::error::{Error, Result};
use crate::kernels::{design_matrix, GaussianBasis};
use crate::nnet::{loss_grad, predict_classes, Gradients, Mlp, OptState};
use crate::numerics::linalg::residual_inf;
use crate::numerics::{spd_solve, Matrix, RandomStream};

#[derive(Debug, Clone, PartialEq)]
pub struct OneStepConfig {
    /// Bound on the evaluation loss.
    pub m: f64,
    /// Ridge on the weight model.
    pub lambda: f64,
    /// Ridge on the predictor.
    pub mu: f64,
    pub rounds: usize,
    pub loss_ub: Loss,
    pub irls: IrlsOptions,
    pub epochs_g: usize,
    pub epochs_f: usize,
    pub minibatch: usize,
    pub lr_g: f64,
    pub lr_f: f64,
    /// Epochs of train-vs-test discrimination used to pretrain `g`
    /// (the first layer is frozen afterwards). `0` disables it.
    pub pretrain_g_epochs: usize,
}

impl Default for OneStepConfig {
    fn default() -> Self {
        OneStepConfig {
            m: 1.0,
            lambda: 0.1,
            mu: 0.01,
            rounds: 10,
            loss_ub: Loss::Squared,
            irls: IrlsOptions::new(crate::erm::TUKEY_RHO),
            epochs_g: 5,
            epochs_f: 10,
            minibatch: 64,
            lr_g: 1e-3,
            lr_f: 1e-3,
            pretrain_g_epochs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearPredictor),
    Net(Mlp),
}

impl Model {
    /// Output matrix, one row per input.
    pub fn outputs(&self, x: &Matrix) -> Result<Matrix> {
        match self {
            Model::Linear(p) => Ok(Matrix::column(&predict(p, x)?)),
            Model::Net(n) => n.predict(x),
        }
    }

    /// First output column.
    pub fn scalar(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.outputs(x)?.col(0))
    }

    /// `max(0, g(x))`.
    pub fn weights(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.scalar(x)?.into_iter().map(|v| v.max(0.0)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub f: Model,
    pub g: Model,
}

/// Labels as loss targets.
pub fn targets(d: &Dataset) -> Result<Vec<Target>> {
    match (&d.y_real(), &d.y_class()) {
        (Some(y), _) => Ok(y.iter().map(|&v| Target::Real(v)).collect()),
        (_, Some(c)) => Ok(c.iter().map(|&v| Target::Class(v)).collect()),
        _ => Err(Error::InvalidArgument("dataset has no labels".into())),
    }
}

pub fn per_sample_losses(out: &Matrix, t: &[Target], loss: &Loss) -> Result<Vec<f64>> {
    out.iter_rows()
        .zip(t)
        .map(|(r, &y)| loss_eval(loss, r, y))
        .collect()
}

/// Ĵ_UB from per-sample quantities; `g` values are used as given.
pub fn jub_from_values(g_tr: &[f64], losses: &[f64], g_te: &[f64], m: f64) -> f64 {
    let n = g_tr.len() as f64;
    let a = g_tr.iter().zip(losses).map(|(g, l)| g * l).sum::<f64>() / n;
    let sq = g_tr.iter().map(|g| g * g).sum::<f64>() / n;
    let te = g_te.iter().sum::<f64>() / g_te.len() as f64;
    a * a + m * m * (sq - 2.0 * te)
}

/// Empirical upper bound with `g` clamped at zero.
pub fn jub_empirical(
    jm: &JointModel,
    train: &Dataset,
    test_x: &Matrix,
    cfg: &OneStepConfig,
) -> Result<f64> {
    let losses = per_sample_losses(&jm.f.outputs(&train.x)?, &targets(train)?, &cfg.loss_ub)?;
    Ok(jub_from_values(
        &jm.g.weights(&train.x)?,
        &losses,
        &jm.g.weights(test_x)?,
        cfg.m,
    ))
}

/// Monte-Carlo estimates behind the test-risk bound
/// `R(f)²/2 ≤ J(f, g) ≤ J_UB(f, g)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub half_r2: f64,
    pub j: f64,
    pub j_ub: f64,
    /// Standard error of `J − R²/2` (delta method).
    pub se_j_gap: f64,
    /// Standard error of `J_UB − J`.
    pub se_ub_gap: f64,
}

impl BoundCheck {
    /// Both inequalities hold up to `k` standard errors.
    pub fn holds(&self, k: f64) -> bool {
        self.half_r2 <= self.j + k * self.se_j_gap && self.j <= self.j_ub + k * self.se_ub_gap
    }
}

/// Evaluates both sides of the bound on a large sample from the training
/// distribution carrying oracle weights. `loss` is the bounded evaluation loss
/// (bounded by `cfg.m`) and `cfg.loss_ub` the upper-bounding loss.
pub fn upper_bound_check(
    f: &Model,
    g: &Model,
    pair: &ShiftedPair,
    loss: &Loss,
    cfg: &OneStepConfig,
) -> Result<BoundCheck> {
    let w = pair.true_weights.as_ref().ok_or(Error::RequiresOracle)?;
    let out = f.outputs(&pair.train.x)?;
    let t = targets(&pair.train)?;
    let l = per_sample_losses(&out, &t, loss)?;
    let lub = per_sample_losses(&out, &t, &cfg.loss_ub)?;
    let g = g.weights(&pair.train.x)?;
    let n = w.len() as f64;
    let m2 = cfg.m * cfg.m;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
    let wl: Vec<f64> = w.iter().zip(&l).map(|(a, b)| a * b).collect();
    let gl: Vec<f64> = g.iter().zip(&l).map(|(a, b)| a * b).collect();
    let glub: Vec<f64> = g.iter().zip(&lub).map(|(a, b)| a * b).collect();
    let dev: Vec<f64> = g.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).collect();
    let (a, b, bu, c) = (mean(&wl), mean(&gl), mean(&glub), mean(&dev));
    let sd_mean = |infl: Vec<f64>| {
        let mu = mean(&infl);
        (infl.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    };
    let infl_j: Vec<f64> = (0..w.len())
        .map(|i| -a * wl[i] + 2.0 * b * gl[i] + m2 * dev[i])
        .collect();
    let infl_ub: Vec<f64> = (0..w.len())
        .map(|i| 2.0 * bu * glub[i] - 2.0 * b * gl[i])
        .collect();
    Ok(BoundCheck {
        half_r2: 0.5 * a * a,
        j: b * b + m2 * c,
        j_ub: bu * bu + m2 * c,
        se_j_gap: sd_mean(infl_j),
        se_ub_gap: sd_mean(infl_ub),
    })
}

/// Diagnostics after one alternating round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundTrace {
    pub round: usize,
    /// Ĵ_UB with the constant dropped.
    pub jub: f64,
    /// `(1/n) Σ w_i ℓ_UB(f(x_i), y_i)`.
    pub weighted_risk: f64,
    /// ∞-norm residual of the β linear system, before rounding up.
    pub beta_residual: f64,
    /// Test MSE or accuracy if test labels were available.
    pub test_metric: Option<f64>,
}

pub fn trace_csv(trace: &[RoundTrace]) -> String {
    let mut s = String::from("round,jub,weighted_risk,test_metric\n");
    for t in trace {
        let m = t.test_metric.map_or(String::new(), |v| v.to_string());
        writeln!(s, "{},{},{},{}", t.round, t.jub, t.weighted_risk, m).unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneStepFit {
    pub model: JointModel,
    pub trace: Vec<RoundTrace>,
}

/// Alternating minimisation with linear-in-parameter `f` and `g`. Starting from
/// `α = 0`, each round solves for `β` in closed form (then rounds it up), and
/// refits `α` by weighted ridge regression (squared `ℓ_UB`) or IRLS (Tukey).
pub fn onestep_linear(
    train: &Dataset,
    test: &Dataset,
    basis_f: &GaussianBasis,
    basis_g: &GaussianBasis,
    cfg: &OneStepConfig,
) -> Result<OneStepFit> {
    let y = train
        .y_real()
        .ok_or_else(|| Error::TaskMismatch(cfg.loss_ub.name().into()))?;
    match cfg.loss_ub {
        Loss::Squared | Loss::Tukey { .. } => {}
        other => return Err(Error::UnsupportedLoss(other.name().into())),
    }
    if cfg.rounds == 0 || !(cfg.m > 0.0) || !(cfg.lambda > 0.0) {
        return Err(Error::InvalidArgument(
            "need rounds ≥ 1, m > 0 and lambda > 0".into(),
        ));
    }
    let n = train.n() as f64;
    let m2 = cfg.m * cfg.m;
    let phi = design_matrix(basis_f, &train.x)?;
    let psi = design_matrix(basis_g, &train.x)?;
    let psi_te = design_matrix(basis_g, &test.x)?;
    let gram = psi.weighted_gram(None, 1.0 / n);
    let rhs: Vec<f64> = psi_te
        .t_matvec(&vec![1.0; test.n()])?
        .into_iter()
        .map(|v| v / test.n() as f64)
        .collect();
    let test_y = test.y_real();
    let mut f = LinearPredictor::zero(basis_f.clone());
    let mut beta = vec![0.0; basis_g.size()];
    let mut trace = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let fx = phi.matvec(&f.alpha)?;
        let l: Vec<f64> = fx
            .iter()
            .zip(y)
            .map(|(p, t)| loss_eval(&cfg.loss_ub, &[*p], Target::Real(*t)))
            .collect::<Result<_>>()?;
        let psi_l = psi.t_matvec(&l)?;
        let mut a = gram.clone();
        let s = 1.0 / (m2 * n * n);
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                a[(i, j)] += s * psi_l[i] * psi_l[j];
            }
        }
        a.add_diag(cfg.lambda / m2);
        let raw = spd_solve(&a, &rhs)?;
        let beta_residual = residual_inf(&a, &raw, &rhs);
        beta = raw.into_iter().map(|b| b.max(0.0)).collect();
        let w: Vec<f64> = psi.matvec(&beta)?.into_iter().map(|v| v.max(0.0)).collect();
        f = match cfg.loss_ub {
            Loss::Squared => weighted_krr_fit(&train.x, y, &w, basis_f, cfg.mu)?,
            _ => {
                let rho = match cfg.loss_ub {
                    Loss::Tukey { rho } => rho,
                    _ => unreachable!(),
                };
                let opts = IrlsOptions { rho, ..cfg.irls };
                irls_tukey_fit(&train.x, y, &w, basis_f, cfg.mu, &opts)?.predictor
            }
        };
        let fx = phi.matvec(&f.alpha)?;
        let l: Vec<f64> = fx
            .iter()
            .zip(y)
            .map(|(p, t)| loss_eval(&cfg.loss_ub, &[*p], Target::Real(*t)))
            .collect::<Result<_>>()?;
        let g_te: Vec<f64> = psi_te.matvec(&beta)?.into_iter().map(|v| v.max(0.0)).collect();
        let jub = jub_from_values(&w, &l, &g_te, cfg.m);
        let weighted_risk = w.iter().zip(&l).map(|(a, b)| a * b).sum::<f64>() / n;
        let test_metric = match test_y {
            Some(ty) => {
                let p = predict(&f, &test.x)?;
                Some(p.iter().zip(ty).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / ty.len() as f64)
            }
            None => None,
        };
        trace.push(RoundTrace {
            round,
            jub,
            weighted_risk,
            beta_residual,
            test_metric,
        });
    }
    Ok(OneStepFit {
        model: JointModel {
            f: Model::Linear(f),
            g: Model::Linear(LinearPredictor {
                basis: basis_g.clone(),
                alpha: beta,
            }),
        },
        trace,
    })
}

/// Ĵ_UB on one mini-batch as a function of the raw outputs of `g`, and its
/// gradient with respect to `g`'s parameters. `f` is held fixed.
pub fn jub_batch_grad(
    f: &Mlp,
    g: &Mlp,
    x_tr: &Matrix,
    t_tr: &[Target],
    x_te: &Matrix,
    cfg: &OneStepConfig,
) -> Result<(f64, Gradients)> {
    let l = loss_grad(&cfg.loss_ub, &f.predict(x_tr)?, t_tr)?.values;
    let (g_tr, cache_tr) = g.forward(x_tr)?;
    let (g_te, cache_te) = g.forward(x_te)?;
    let (gt, ge) = (g_tr.col(0), g_te.col(0));
    let value = jub_from_values(&gt, &l, &ge, cfg.m);
    let (b, bt) = (gt.len() as f64, ge.len() as f64);
    let m2 = cfg.m * cfg.m;
    let a = gt.iter().zip(&l).map(|(g, l)| g * l).sum::<f64>() / b;
    let d_tr = Matrix::column(
        &gt.iter()
            .zip(&l)
            .map(|(g, l)| 2.0 * a * l / b + 2.0 * m2 * g / b)
            .collect::<Vec<_>>(),
    );
    let d_te = Matrix::column(&vec![-2.0 * m2 / bt; ge.len()]);
    let mut grads = g.backward(&cache_tr, &d_tr)?;
    let gte = g.backward(&cache_te, &d_te)?;
    for (acc, other) in grads.layers.iter_mut().zip(&gte.layers) {
        for (x, y) in acc.w.as_mut_slice().iter_mut().zip(other.w.as_slice()) {
            *x += y;
        }
        for (x, y) in acc.b.iter_mut().zip(&other.b) {
            *x += y;
        }
    }
    Ok((value, grads))
}

/// `max(g, 0)` normalised to sum 1; uniform when every weight is zero.
pub fn normalized_batch_weights(g: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = g.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.into_iter().map(|v| v / s).collect()
    } else {
        vec![1.0 / g.len() as f64; g.len()]
    }
}

/// Sequential mini-batches over a fresh permutation.
pub(crate) fn batches(n: usize, size: usize, rng: &mut RandomStream) -> Vec<Vec<usize>> {
    let perm = rng.permutation(n);
    perm.chunks(size.max(1)).map(|c| c.to_vec()).collect()
}

fn targets_at(t: &[Target], idx: &[usize]) -> Vec<Target> {
    idx.iter().map(|&i| t[i]).collect()
}

/// Logistic train-vs-test pretraining of `g` (train labelled +1).
fn pretrain_discriminator(
    g: &mut Mlp,
    x_tr: &Matrix,
    x_te: &Matrix,
    cfg: &OneStepConfig,
    rng: &mut RandomStream,
) -> Result<()> {
    let x = x_tr.vstack(x_te)?;
    let t: Vec<Target> = (0..x.rows())
        .map(|i| Target::Real(if i < x_tr.rows() { 1.0 } else { -1.0 }))
        .collect();
    let mut opt = OptState::adam(cfg.lr_g);
    for _ in 0..cfg.pretrain_g_epochs {
        for b in batches(x.rows(), cfg.minibatch, rng) {
            let xb = x.select_rows(&b);
            let (out, cache) = g.forward(&xb)?;
            let lg = loss_grad(&Loss::Logistic, &out, &targets_at(&t, &b))?;
            let (_, grad) = lg.weighted(&vec![1.0 / b.len() as f64; b.len()]);
            let grads = g.backward(&cache, &grad)?;
            g.apply_gradients(&mut opt, &grads)?;
        }
    }
    g.freeze_first(1);
    Ok(())
}

/// Gradient-based alternating minimisation with networks `f` and `g`
/// (`g` has one output). Each round runs `epochs_g` epochs of Ĵ_UB descent on
/// `g`, then `epochs_f` epochs of weighted risk descent on `f` with weights
/// `max(g, 0)` normalised to sum 1 in every mini-batch.
pub fn onestep_gradient(
    train: &Dataset,
    test_x: &Matrix,
    mut f: Mlp,
    mut g: Mlp,
    cfg: &OneStepConfig,
    rng: &mut RandomStream,
) -> Result<JointModel> {
    if g.output_dim() != 1 {
        return Err(Error::InvalidArgument("weight network needs one output".into()));
    }
    if let Loss::ZeroOne = cfg.loss_ub {
        return Err(Error::NonDifferentiable("zero_one".into()));
    }
    let t = targets(train)?;
    let n_tr = train.n();
    let n_te = test_x.rows();
    if n_tr == 0 || n_te == 0 {
        return Err(Error::InsufficientSamples("empty train or test set".into()));
    }
    if cfg.pretrain_g_epochs > 0 {
        pretrain_discriminator(&mut g, &train.x, test_x, cfg, rng)?;
    }
    let mut opt_g = OptState::adam(cfg.lr_g);
    let mut opt_f = OptState::adam(cfg.lr_f);
    for _round in 0..cfg.rounds {
        for _ in 0..cfg.epochs_g {
            let btr = batches(n_tr, cfg.minibatch, rng);
            let te_size = n_te.div_ceil(btr.len());
            let bte = batches(n_te, te_size, rng);
            for (k, b) in btr.iter().enumerate() {
                let be = &bte[k % bte.len()];
                let (_, grads) = jub_batch_grad(
                    &f,
                    &g,
                    &train.x.select_rows(b),
                    &targets_at(&t, b),
                    &test_x.select_rows(be),
                    cfg,
                )?;
                g.apply_gradients(&mut opt_g, &grads)?;
            }
        }
        for _ in 0..cfg.epochs_f {
            for b in batches(n_tr, cfg.minibatch, rng) {
                let xb = train.x.select_rows(&b);
                let w = normalized_batch_weights(&g.predict(&xb)?.col(0));
                let (out, cache) = f.forward(&xb)?;
                let lg = loss_grad(&cfg.loss_ub, &out, &targets_at(&t, &b))?;
                let (_, grad) = lg.weighted(&w);
                let grads = f.backward(&cache, &grad)?;
                f.apply_gradients(&mut opt_f, &grads)?;
            }
        }
    }
    Ok(JointModel {
        f: Model::Net(f),
        g: Model::Net(g),
    })
}

/// Plain (optionally weighted) mini-batch training of a network with Adam;
/// the baseline trainer used next to the weighted methods.
pub fn train_net(
    f: &mut Mlp,
    data: &Dataset,
    loss: &Loss,
    epochs: usize,
    minibatch: usize,
    lr: f64,
    rng: &mut RandomStream,
) -> Result<()> {
    let t = targets(data)?;
    let mut opt = OptState::adam(lr);
    for _ in 0..epochs {
        for b in batches(data.n(), minibatch, rng) {
            let (out, cache) = f.forward(&data.x.select_rows(&b))?;
            let lg = loss_grad(loss, &out, &targets_at(&t, &b))?;
            let (_, grad) = lg.weighted(&vec![1.0 / b.len() as f64; b.len()]);
            let grads = f.backward(&cache, &grad)?;
            f.apply_gradients(&mut opt, &grads)?;
        }
    }
    Ok(())
}

/// Classification accuracy of a network on labelled data (±1 or classes).
pub fn accuracy(f: &Mlp, data: &Dataset) -> Result<f64> {
    let out = f.predict(&data.x)?;
    let correct = match (data.y_real(), data.y_class()) {
        (Some(y), _) => out
            .col(0)
            .iter()
            .zip(y)
            .filter(|(p, t)| decision(**p) == **t)
            .count(),
        (_, Some(c)) => predict_classes(&out)
            .iter()
            .zip(c)
            .filter(|(p, t)| p == t)
            .count(),
        _ => return Err(Error::InvalidArgument("dataset has no labels".into())),
    };
    Ok(correct as f64 / data.n().max(1) as f64)
}
