//! Direct density-ratio estimation: KMM, LSIF, uLSIF and relative uLSIF.

use crate::error::{Error, Result};
use crate::kernels::{design_matrix, kernel_matrix, GaussianBasis};
use crate::numerics::qp::{box_qp_solve, QpProblem, SumConstraint, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::numerics::{spd_solve, Matrix, RandomStream};

/// Linear-in-parameter ratio model `g(x) = βᵀψ(x)`. `eta = 0` is the plain
/// ratio, otherwise the η-relative ratio `p_te / (η p_te + (1 − η) p_tr)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioModel {
    pub basis: GaussianBasis,
    pub beta: Vec<f64>,
    pub eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KmmConfig {
    /// Upper bound on each weight.
    pub b: f64,
    /// Slack on the normalised weight sum, `|Σw/n − 1| ≤ eps`.
    pub eps: f64,
    pub bandwidth: f64,
}

impl KmmConfig {
    /// `B = 1000`, `ε = (√n − 1)/√n`.
    pub fn defaults(n_tr: usize, bandwidth: f64) -> Self {
        let s = (n_tr as f64).sqrt();
        KmmConfig {
            b: 1000.0,
            eps: (s - 1.0) / s,
            bandwidth,
        }
    }
}

/// Upper bound standing in for +∞ on LSIF coefficients.
pub const LSIF_UPPER: f64 = 1e12;

/// Kernel mean matching weights.
pub fn kmm_weights(train_x: &Matrix, test_x: &Matrix, cfg: &KmmConfig) -> Result<Vec<f64>> {
    let p = kmm_problem(train_x, test_x, cfg)?;
    Ok(box_qp_solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER)?.x)
}

/// The KMM quadratic program: `Q = K`, `c = κ`, box `[0, B]`, sum within
/// `n_tr·ε` of `n_tr`.
pub fn kmm_problem(train_x: &Matrix, test_x: &Matrix, cfg: &KmmConfig) -> Result<QpProblem> {
    let (n_tr, n_te) = (train_x.rows(), test_x.rows());
    if n_tr == 0 || n_te == 0 {
        return Err(Error::InsufficientSamples("KMM needs both sides nonempty".into()));
    }
    if !(cfg.b > 0.0) || !(cfg.eps >= 0.0) {
        return Err(Error::InvalidArgument("KMM needs B > 0 and eps ≥ 0".into()));
    }
    let k = kernel_matrix(cfg.bandwidth, train_x, train_x)?;
    let kc = kernel_matrix(cfg.bandwidth, train_x, test_x)?;
    let scale = n_tr as f64 / n_te as f64;
    let kappa: Vec<f64> = kc.iter_rows().map(|r| scale * r.iter().sum::<f64>()).collect();
    QpProblem::new(
        k,
        kappa,
        0.0,
        cfg.b,
        Some(SumConstraint {
            target: n_tr as f64,
            slack: n_tr as f64 * cfg.eps,
        }),
    )
}

fn h_hat(psi_te: &Matrix) -> Vec<f64> {
    let n = psi_te.rows() as f64;
    psi_te
        .t_matvec(&vec![1.0; psi_te.rows()])
        .expect("shape")
        .into_iter()
        .map(|v| v / n)
        .collect()
}

/// Constrained LSIF: `min ½βᵀĤβ − ĥᵀβ + λ1ᵀβ` over `β ≥ 0`.
pub fn lsif_fit(
    train_x: &Matrix,
    test_x: &Matrix,
    basis: &GaussianBasis,
    lambda: f64,
) -> Result<RatioModel> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument("lambda must be ≥ 0".into()));
    }
    let psi_tr = design_matrix(basis, train_x)?;
    let psi_te = design_matrix(basis, test_x)?;
    let h = psi_tr.weighted_gram(None, 1.0 / train_x.rows() as f64);
    let c: Vec<f64> = h_hat(&psi_te).into_iter().map(|v| v - lambda).collect();
    let p = QpProblem::new(h, c, 0.0, LSIF_UPPER, None)?;
    let beta = box_qp_solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER)?.x;
    Ok(RatioModel {
        basis: basis.clone(),
        beta,
        eta: 0.0,
    })
}

/// Coefficients before rounding up: the solution of
/// `(ηĤ_te + (1 − η)Ĥ_tr + λI) β = ĥ`.
pub fn rulsif_coefficients(
    psi_tr: &Matrix,
    psi_te: &Matrix,
    lambda: f64,
    eta: f64,
) -> Result<Vec<f64>> {
    let mut a = psi_tr.weighted_gram(None, 1.0 / psi_tr.rows() as f64);
    if eta != 0.0 {
        a.scale(1.0 - eta);
        let hte = psi_te.weighted_gram(None, eta / psi_te.rows() as f64);
        for (x, y) in a.as_mut_slice().iter_mut().zip(hte.as_slice()) {
            *x += y;
        }
    }
    a.add_diag(lambda);
    spd_solve(&a, &h_hat(psi_te))
}

/// Analytic uLSIF, `β = max(0, (Ĥ + λI)⁻¹ĥ)`.
pub fn ulsif_fit(
    train_x: &Matrix,
    test_x: &Matrix,
    basis: &GaussianBasis,
    lambda: f64,
) -> Result<RatioModel> {
    rulsif_fit(train_x, test_x, basis, lambda, 0.0)
}

/// Relative uLSIF, `β = max(0, (ηĤ_te + (1 − η)Ĥ_tr + λI)⁻¹ĥ)`.
pub fn rulsif_fit(
    train_x: &Matrix,
    test_x: &Matrix,
    basis: &GaussianBasis,
    lambda: f64,
    eta: f64,
) -> Result<RatioModel> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument("lambda must be > 0".into()));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta {eta} outside [0, 1]")));
    }
    let psi_tr = design_matrix(basis, train_x)?;
    let psi_te = design_matrix(basis, test_x)?;
    let beta = rulsif_coefficients(&psi_tr, &psi_te, lambda, eta)?
        .into_iter()
        .map(|b| b.max(0.0))
        .collect();
    Ok(RatioModel {
        basis: basis.clone(),
        beta,
        eta,
    })
}

/// `max(0, βᵀψ(x))` for every row.
pub fn evaluate_ratio(model: &RatioModel, x: &Matrix) -> Result<Vec<f64>> {
    let psi = design_matrix(&model.basis, x)?;
    Ok(psi
        .matvec(&model.beta)?
        .into_iter()
        .map(|v| v.max(0.0))
        .collect())
}

fn folds_of(n: usize, folds: usize, rng: &mut RandomStream) -> Vec<usize> {
    let perm = rng.permutation(n);
    let mut f = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        f[i] = pos % folds;
    }
    f
}

/// Cross-validated relative least-squares score for every λ in `grid`:
/// `(η/2)·mean_te g² + ((1 − η)/2)·mean_tr g² − mean_te g` on held-out folds.
pub fn cv_scores(
    train_x: &Matrix,
    test_x: &Matrix,
    basis: &GaussianBasis,
    grid: &[f64],
    folds: usize,
    eta: f64,
    rng: &mut RandomStream,
) -> Result<Vec<f64>> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument("need at least 2 folds".into()));
    }
    if train_x.rows() < folds || test_x.rows() < folds {
        return Err(Error::InsufficientSamples(format!(
            "{folds}-fold CV on {} train / {} test points",
            train_x.rows(),
            test_x.rows()
        )));
    }
    let psi_tr = design_matrix(basis, train_x)?;
    let psi_te = design_matrix(basis, test_x)?;
    let ftr = folds_of(train_x.rows(), folds, rng);
    let fte = folds_of(test_x.rows(), folds, rng);
    let mut scores = vec![0.0; grid.len()];
    for k in 0..folds {
        let pick = |f: &[usize], held: bool| -> Vec<usize> {
            (0..f.len()).filter(|&i| (f[i] == k) == held).collect()
        };
        let (tr_in, tr_out) = (psi_tr.select_rows(&pick(&ftr, false)), psi_tr.select_rows(&pick(&ftr, true)));
        let (te_in, te_out) = (psi_te.select_rows(&pick(&fte, false)), psi_te.select_rows(&pick(&fte, true)));
        for (s, &lambda) in scores.iter_mut().zip(grid) {
            let beta: Vec<f64> = rulsif_coefficients(&tr_in, &te_in, lambda, eta)?
                .into_iter()
                .map(|b| b.max(0.0))
                .collect();
            let g = |m: &Matrix| -> Vec<f64> {
                m.matvec(&beta).expect("shape").into_iter().map(|v| v.max(0.0)).collect()
            };
            let (gtr, gte) = (g(&tr_out), g(&te_out));
            let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
            let score = 0.5 * (1.0 - eta) * mean(&gtr, &|x| x * x)
                + 0.5 * eta * mean(&gte, &|x| x * x)
                - mean(&gte, &|x| x);
            *s += score / folds as f64;
        }
    }
    Ok(scores)
}

/// λ from `grid` with the lowest cross-validated uLSIF score; ties go to the
/// earlier grid entry.
pub fn select_lambda(
    train_x: &Matrix,
    test_x: &Matrix,
    basis: &GaussianBasis,
    grid: &[f64],
    folds: usize,
    rng: &mut RandomStream,
) -> Result<f64> {
    select_lambda_relative(train_x, test_x, basis, grid, folds, 0.0, rng)
}

pub fn select_lambda_relative(
    train_x: &Matrix,
    test_x: &Matrix,
    basis: &GaussianBasis,
    grid: &[f64],
    folds: usize,
    eta: f64,
    rng: &mut RandomStream,
) -> Result<f64> {
    if grid.len() == 1 {
        return Ok(grid[0]);
    }
    let scores = cv_scores(train_x, test_x, basis, grid, folds, eta, rng)?;
    Ok(grid[argmin(&scores)])
}

pub(crate) fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// `10^-3, 10^-2, ..., 10^1`.
pub fn default_lambda_grid() -> Vec<f64> {
    (-3..=1).map(|e| 10f64.powi(e)).collect()
}
