//! Losses and weighted empirical risk minimisation over linear-in-parameter
//! Gaussian-basis models.

use serde::{Deserialize, Serialize};

use crate::data::ShiftedPair;
use crate::error::{Error, Result};
use crate::kernels::{design_matrix, GaussianBasis};
use crate::numerics::{spd_solve, Matrix};

/// Default Tukey constant.
pub const TUKEY_RHO: f64 = 4.685;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Loss {
    Squared,
    /// Tukey's bisquare loss rescaled to `[0, 1]`.
    Tukey { rho: f64 },
    Hinge,
    SoftmaxCe,
    ZeroOne,
    Logistic,
}

impl Loss {
    pub fn tukey() -> Loss {
        Loss::Tukey { rho: TUKEY_RHO }
    }

    /// Supremum of the loss, where finite.
    pub fn bound(&self) -> Option<f64> {
        match self {
            Loss::Tukey { .. } | Loss::ZeroOne => Some(1.0),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Loss::Squared => "squared",
            Loss::Tukey { .. } => "tukey",
            Loss::Hinge => "hinge",
            Loss::SoftmaxCe => "softmax_ce",
            Loss::ZeroOne => "zero_one",
            Loss::Logistic => "logistic",
        }
    }
}

/// A label as seen by a loss: real value (regression, ±1) or class index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Real(f64),
    Class(usize),
}

pub fn tukey_loss(r: f64, rho: f64) -> f64 {
    let u = 1.0 - (r * r) / (rho * rho);
    if u <= 0.0 {
        1.0
    } else {
        (1.0 - u * u * u).min(1.0)
    }
}

/// `log(1 + exp(−m))` without overflow.
pub fn logistic_loss(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// `+1` for `v ≥ 0`, else `−1`.
pub fn decision(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Loss of a prediction. Scalar predictors pass a one-element slice; class
/// scores pass one entry per class.
pub fn loss_eval(loss: &Loss, pred: &[f64], y: Target) -> Result<f64> {
    let mismatch = || Error::TaskMismatch(loss.name().into());
    match (loss, pred, y) {
        (Loss::Squared, [f], Target::Real(y)) => Ok((f - y) * (f - y)),
        (Loss::Tukey { rho }, [f], Target::Real(y)) => Ok(tukey_loss(f - y, *rho)),
        (Loss::Hinge, [f], Target::Real(y)) => Ok((1.0 - y * f).max(0.0)),
        (Loss::Logistic, [f], Target::Real(y)) => Ok(logistic_loss(y * f)),
        (Loss::ZeroOne, [f], Target::Real(y)) => Ok(f64::from(u8::from(decision(*f) != y))),
        (Loss::ZeroOne, s, Target::Class(c)) if c < s.len() && s.len() > 1 => {
            Ok(f64::from(u8::from(argmax(s) != c)))
        }
        (Loss::SoftmaxCe, s, Target::Class(c)) if c < s.len() => Ok(log_sum_exp(s) - s[c]),
        _ => Err(mismatch()),
    }
}

/// `f(x) = αᵀφ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearPredictor {
    pub basis: GaussianBasis,
    pub alpha: Vec<f64>,
}

impl LinearPredictor {
    pub fn zero(basis: GaussianBasis) -> Self {
        let alpha = vec![0.0; basis.size()];
        LinearPredictor { basis, alpha }
    }
}

pub fn predict(p: &LinearPredictor, x: &Matrix) -> Result<Vec<f64>> {
    design_matrix(&p.basis, x)?.matvec(&p.alpha)
}

fn check_fit_inputs(x: &Matrix, y: &[f64], w: &[f64], mu: f64) -> Result<()> {
    if y.len() != x.rows() || w.len() != x.rows() {
        return Err(Error::DimensionMismatch(format!(
            "{} inputs, {} targets, {} weights",
            x.rows(),
            y.len(),
            w.len()
        )));
    }
    if w.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::InvalidArgument("weights must be ≥ 0".into()));
    }
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument("mu must be > 0".into()));
    }
    Ok(())
}

fn krr_from_design(phi: &Matrix, y: &[f64], w: &[f64], mu: f64) -> Result<Vec<f64>> {
    let n = phi.rows() as f64;
    let mut a = phi.weighted_gram(Some(w), 1.0);
    a.add_diag(mu * n);
    let wy: Vec<f64> = w.iter().zip(y).map(|(a, b)| a * b).collect();
    spd_solve(&a, &phi.t_matvec(&wy)?)
}

/// `α = (ΦᵀWΦ + μnI)⁻¹ΦᵀWy`, the minimiser of
/// `(1/n)Σ w_i (f(x_i) − y_i)² + μ‖α‖²`.
pub fn weighted_krr_fit(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    basis: &GaussianBasis,
    mu: f64,
) -> Result<LinearPredictor> {
    check_fit_inputs(x, y, w, mu)?;
    let phi = design_matrix(basis, x)?;
    Ok(LinearPredictor {
        basis: basis.clone(),
        alpha: krr_from_design(&phi, y, w, mu)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsOptions {
    pub rho: f64,
    /// Multiply `rho` by `1.4826·MAD` of the initial residuals.
    pub mad_scale: bool,
    pub max_iter: usize,
    pub tol: f64,
}

impl IrlsOptions {
    pub fn new(rho: f64) -> Self {
        IrlsOptions {
            rho,
            mad_scale: true,
            max_iter: 100,
            tol: 1e-8,
        }
    }

    /// Raw `rho`, no residual scaling.
    pub fn unscaled(rho: f64) -> Self {
        IrlsOptions {
            mad_scale: false,
            ..IrlsOptions::new(rho)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrlsFit {
    pub predictor: LinearPredictor,
    pub converged: bool,
    pub iterations: usize,
    /// The `rho` actually used after scaling.
    pub rho: f64,
    /// Weighted Tukey risk plus ridge penalty after each iterate, starting
    /// with the squared-loss initialisation.
    pub objective: Vec<f64>,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `1.4826 · median|r − median(r)|`.
pub fn mad_scale(r: &[f64]) -> f64 {
    let mut v = r.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = r.iter().map(|x| (x - m).abs()).collect();
    1.4826 * median(&mut dev)
}

pub fn tukey_objective(r: &[f64], w: &[f64], alpha: &[f64], rho: f64, mu: f64) -> f64 {
    let n = r.len() as f64;
    let risk: f64 = r.iter().zip(w).map(|(ri, wi)| wi * tukey_loss(*ri, rho)).sum();
    risk / n + mu * alpha.iter().map(|a| a * a).sum::<f64>()
}

/// IRLS for the rescaled Tukey loss. Each step solves a weighted ridge problem
/// with weights `w_i·(3/ρ²)·[1 − r_i²/ρ²]₊²`, the slope of the loss in `r²`,
/// which majorises the objective, so it never increases.
pub fn irls_tukey_fit(
    x: &Matrix,
    y: &[f64],
    w: &[f64],
    basis: &GaussianBasis,
    mu: f64,
    opts: &IrlsOptions,
) -> Result<IrlsFit> {
    check_fit_inputs(x, y, w, mu)?;
    if !(opts.rho > 0.0) {
        return Err(Error::InvalidArgument("tukey rho must be > 0".into()));
    }
    let phi = design_matrix(basis, x)?;
    let resid = |alpha: &[f64]| -> Vec<f64> {
        phi.matvec(alpha)
            .expect("shape")
            .iter()
            .zip(y)
            .map(|(f, t)| f - t)
            .collect()
    };
    let mut alpha = krr_from_design(&phi, y, w, mu)?;
    let mut r = resid(&alpha);
    let mut rho = opts.rho;
    if opts.mad_scale {
        let s = mad_scale(&r);
        if s > 0.0 && s.is_finite() {
            rho *= s;
        }
    }
    let rho2 = rho * rho;
    let mut objective = vec![tukey_objective(&r, w, &alpha, rho, mu)];
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..opts.max_iter {
        iterations += 1;
        let ew: Vec<f64> = r
            .iter()
            .zip(w)
            .map(|(ri, wi)| {
                let u = (1.0 - ri * ri / rho2).max(0.0);
                wi * 3.0 / rho2 * u * u
            })
            .collect();
        let next = krr_from_design(&phi, y, &ew, mu)?;
        let step = next
            .iter()
            .zip(&alpha)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let r_next = resid(&next);
        let obj = tukey_objective(&r_next, w, &next, rho, mu);
        if obj > *objective.last().unwrap() {
            // numerical noise at the fixed point; keep the better iterate
            converged = step <= opts.tol.max(1e-12);
            break;
        }
        alpha = next;
        r = r_next;
        objective.push(obj);
        if step <= opts.tol {
            converged = true;
            break;
        }
    }
    Ok(IrlsFit {
        predictor: LinearPredictor {
            basis: basis.clone(),
            alpha,
        },
        converged,
        iterations,
        rho,
        objective,
    })
}

/// Importance-weighted ERM on the training side of `pair`.
pub fn iwerm_fit(
    pair: &ShiftedPair,
    weights: &[f64],
    loss: &Loss,
    basis: &GaussianBasis,
    mu: f64,
) -> Result<LinearPredictor> {
    let x = &pair.train.x;
    let y = pair
        .train
        .y_real()
        .ok_or_else(|| Error::TaskMismatch(loss.name().into()))?;
    match loss {
        Loss::Squared => weighted_krr_fit(x, y, weights, basis, mu),
        Loss::Tukey { rho } => {
            Ok(irls_tukey_fit(x, y, weights, basis, mu, &IrlsOptions::new(*rho))?.predictor)
        }
        other => Err(Error::UnsupportedLoss(other.name().into())),
    }
}

/// Element-wise `w^γ` with `0⁰ = 1`.
pub fn flatten_weights(w: &[f64], gamma: f64) -> Vec<f64> {
    w.iter().map(|&v| v.powf(gamma)).collect()
}

/// Mean loss of `f` on labelled real targets.
pub fn empirical_risk(loss: &Loss, pred: &[f64], y: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (p, t) in pred.iter().zip(y) {
        s += loss_eval(loss, &[*p], Target::Real(*t))?;
    }
    Ok(s / pred.len().max(1) as f64)
}
