//! Sample containers, text ingestion and the synthetic shift generators.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{dot, spd_solve, Matrix, RandomStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    /// Labels are ±1.
    Binary,
    /// Labels are class indices `0..k`.
    Multiclass(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Real(Vec<f64>),
    Class(Vec<usize>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Real(v) => v.len(),
            Labels::Class(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Real(v) => Labels::Real(idx.iter().map(|&i| v[i]).collect()),
            Labels::Class(v) => Labels::Class(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Option<Labels>,
    pub domain_id: i64,
    pub task: Task,
}

impl Dataset {
    pub fn new(x: Matrix, y: Option<Labels>, task: Task) -> Result<Self> {
        if !x.all_finite() {
            return Err(Error::InvalidArgument("non-finite feature".into()));
        }
        if let Some(y) = &y {
            if y.len() != x.rows() {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} samples",
                    y.len(),
                    x.rows()
                )));
            }
            match (y, task) {
                (Labels::Class(c), Task::Multiclass(k)) => {
                    if let Some(&bad) = c.iter().find(|&&c| c >= k) {
                        return Err(Error::InvalidArgument(format!(
                            "class {bad} outside 0..{k}"
                        )));
                    }
                }
                (Labels::Real(v), Task::Binary) => {
                    if v.iter().any(|&t| t != 1.0 && t != -1.0) {
                        return Err(Error::InvalidArgument("binary labels must be ±1".into()));
                    }
                }
                (Labels::Real(_), Task::Regression) => {}
                _ => {
                    return Err(Error::InvalidArgument(
                        "label kind does not match task".into(),
                    ))
                }
            }
        }
        Ok(Dataset {
            x,
            y,
            domain_id: 0,
            task,
        })
    }

    pub fn unlabeled(x: Matrix) -> Self {
        Dataset {
            x,
            y: None,
            domain_id: 0,
            task: Task::Regression,
        }
    }

    pub fn regression(x: Matrix, y: Vec<f64>) -> Result<Self> {
        Dataset::new(x, Some(Labels::Real(y)), Task::Regression)
    }

    pub fn classes(x: Matrix, y: Vec<usize>, k: usize) -> Result<Self> {
        Dataset::new(x, Some(Labels::Class(y)), Task::Multiclass(k))
    }

    pub fn with_domain(mut self, id: i64) -> Self {
        self.domain_id = id;
        self
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Real-valued labels (regression or ±1).
    pub fn y_real(&self) -> Option<&[f64]> {
        match &self.y {
            Some(Labels::Real(v)) => Some(v),
            _ => None,
        }
    }

    pub fn y_class(&self) -> Option<&[usize]> {
        match &self.y {
            Some(Labels::Class(v)) => Some(v),
            _ => None,
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self.task {
            Task::Multiclass(k) => Some(k),
            Task::Binary => Some(2),
            Task::Regression => None,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: self.y.as_ref().map(|y| y.select(idx)),
            domain_id: self.domain_id,
            task: self.task,
        }
    }

    /// Features and labels side by side, labels as the last column.
    pub fn joint(&self) -> Result<Matrix> {
        let y = self
            .y_real()
            .ok_or_else(|| Error::InvalidArgument("joint view needs real labels".into()))?;
        let d = self.dim();
        Ok(Matrix::from_fn(self.n(), d + 1, |i, j| {
            if j < d {
                self.x[(i, j)]
            } else {
                y[i]
            }
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftedPair {
    pub train: Dataset,
    pub test: Dataset,
    /// Oracle `p_te(x)/p_tr(x)` at the training inputs, when known.
    pub true_weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    PairFlip,
    SymmetricFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
}

/// Normalised sinc, `sin(πx)/(πx)` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

pub const TOY_TRAIN: (f64, f64) = (1.0, 0.5);
pub const TOY_TEST: (f64, f64) = (2.0, 0.25);
pub const TOY_NOISE_SD: f64 = 0.1;

/// Density ratio of the toy problem, test density over train density.
pub fn toy_ratio(x: f64) -> f64 {
    normal_pdf(x, TOY_TEST.0, TOY_TEST.1) / normal_pdf(x, TOY_TRAIN.0, TOY_TRAIN.1)
}

/// One-dimensional regression under covariate shift: train inputs from
/// N(1, 0.5²), test inputs from N(2, 0.25²), targets `sinc(x) + N(0, 0.1²)`.
pub fn gen_toy_regression(n_tr: usize, n_te: usize, rng: &mut RandomStream) -> ShiftedPair {
    let draw = |n: usize, (m, s): (f64, f64), rng: &mut RandomStream| {
        let x: Vec<f64> = (0..n).map(|_| rng.normal_with(m, s)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| sinc(v) + rng.normal_with(0.0, TOY_NOISE_SD))
            .collect();
        (x, y)
    };
    let (xtr, ytr) = draw(n_tr, TOY_TRAIN, rng);
    let (xte, yte) = draw(n_te, TOY_TEST, rng);
    let true_weights = xtr.iter().map(|&v| toy_ratio(v)).collect();
    ShiftedPair {
        train: Dataset::regression(Matrix::column(&xtr), ytr)
            .expect("finite draws")
            .with_domain(0),
        test: Dataset::regression(Matrix::column(&xte), yte)
            .expect("finite draws")
            .with_domain(1),
        true_weights: Some(true_weights),
    }
}

pub fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Splitting scores `v = 16·projᵀx/σ` on the z-scored pool, σ the standard
/// deviation of `projᵀx` over the pool.
pub fn split_scores(pool_x: &Matrix, proj: &[f64]) -> Result<Vec<f64>> {
    if proj.len() != pool_x.cols() {
        return Err(Error::DimensionMismatch(format!(
            "projection of length {} for {} features",
            proj.len(),
            pool_x.cols()
        )));
    }
    if dot(proj, proj) == 0.0 {
        return Err(Error::InvalidProjection);
    }
    let (z, _, _) = zscore_matrix(pool_x);
    let p: Vec<f64> = z.iter_rows().map(|r| dot(r, proj)).collect();
    let sd = population_sd(&p);
    if !(sd > 1e-12) {
        return Err(Error::InvalidProjection);
    }
    Ok(p.iter().map(|v| 16.0 * v / sd).collect())
}

/// Covariate-shift split: each pool sample goes to the training side with
/// probability `logistic(v)`, otherwise to the test side. Features are
/// z-scored in the returned pair; oracle weights are `exp(−v)·n_tr/n_te`.
pub fn covariate_shift_split(
    pool: &Dataset,
    proj: &[f64],
    rng: &mut RandomStream,
) -> Result<ShiftedPair> {
    let v = split_scores(&pool.x, proj)?;
    let mut tr = Vec::new();
    let mut te = Vec::new();
    for (i, &vi) in v.iter().enumerate() {
        if rng.uniform() < logistic(vi) {
            tr.push(i);
        } else {
            te.push(i);
        }
    }
    if tr.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if te.is_empty() {
        return Err(Error::EmptySplit("test"));
    }
    let (norm, _, _) = zscore_normalize(pool);
    let ratio = tr.len() as f64 / te.len() as f64;
    let true_weights = tr.iter().map(|&i| (-v[i]).exp() * ratio).collect();
    Ok(ShiftedPair {
        train: norm.subset(&tr).with_domain(0),
        test: norm.subset(&te).with_domain(1),
        true_weights: Some(true_weights),
    })
}

const SPLIT_RETRIES: usize = 20;

fn random_direction(d: usize, rng: &mut RandomStream) -> Vec<f64> {
    (0..d).map(|_| rng.normal()).collect()
}

/// Split along a random direction, redrawing the direction on an empty side.
pub fn random_covariate_shift_split(pool: &Dataset, rng: &mut RandomStream) -> Result<ShiftedPair> {
    let mut last = Error::EmptySplit("train");
    for _ in 0..SPLIT_RETRIES {
        let proj = random_direction(pool.dim(), rng);
        match covariate_shift_split(pool, &proj, rng) {
            Ok(p) => return Ok(p),
            Err(e @ (Error::EmptySplit(_) | Error::InvalidProjection)) => last = e,
            Err(e) => return Err(e),
        }
    }
    Err(last)
}

/// Draws `candidates` random directions, fits a linear ridge model on each
/// training side and keeps the split with the highest test error.
pub fn adversarial_covariate_shift_split(
    pool: &Dataset,
    candidates: usize,
    rng: &mut RandomStream,
) -> Result<ShiftedPair> {
    let mut best: Option<(f64, ShiftedPair)> = None;
    for _ in 0..candidates.max(1) {
        let pair = random_covariate_shift_split(pool, rng)?;
        let err = linear_probe_error(&pair)?;
        if best.as_ref().is_none_or(|(e, _)| err > *e) {
            best = Some((err, pair));
        }
    }
    Ok(best.expect("at least one candidate").1)
}

/// Test error of a ridge-regularised linear model with intercept, fitted on the
/// training side. Misclassification rate for ±1 labels, MSE otherwise.
fn linear_probe_error(pair: &ShiftedPair) -> Result<f64> {
    let (ytr, yte) = match (pair.train.y_real(), pair.test.y_real()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InvalidArgument("probe needs real labels".into())),
    };
    let aug = |x: &Matrix| Matrix::from_fn(x.rows(), x.cols() + 1, |i, j| {
        if j < x.cols() {
            x[(i, j)]
        } else {
            1.0
        }
    });
    let a = aug(&pair.train.x);
    let mut g = a.weighted_gram(None, 1.0);
    g.add_diag(1e-3 * a.rows() as f64);
    let coef = spd_solve(&g, &a.t_matvec(ytr)?)?;
    let pred = aug(&pair.test.x).matvec(&coef)?;
    let binary = pair.test.task == Task::Binary;
    let err = pred
        .iter()
        .zip(yte)
        .map(|(p, y)| {
            if binary {
                f64::from(u8::from((if *p >= 0.0 { 1.0 } else { -1.0 }) != *y))
            } else {
                (p - y) * (p - y)
            }
        })
        .sum::<f64>()
        / yte.len() as f64;
    Ok(err)
}

/// Corrupts each class label independently with probability `spec.rate`.
/// Pair flips send class `j` to `(j + 1) mod k`; symmetric flips pick one of
/// the other `k − 1` classes uniformly.
pub fn inject_label_noise(
    d: &Dataset,
    spec: NoiseSpec,
    k: usize,
    rng: &mut RandomStream,
) -> Result<(Dataset, Vec<bool>)> {
    if k < 2 {
        return Err(Error::InvalidK(k));
    }
    if !(0.0..1.0).contains(&spec.rate) {
        return Err(Error::InvalidArgument(format!(
            "noise rate {} outside [0, 1)",
            spec.rate
        )));
    }
    let y = d
        .y_class()
        .ok_or_else(|| Error::InvalidArgument("label noise needs class labels".into()))?;
    let mut noisy = y.to_vec();
    let mut mask = vec![false; y.len()];
    for (i, yi) in noisy.iter_mut().enumerate() {
        if rng.uniform() >= spec.rate {
            continue;
        }
        mask[i] = true;
        *yi = match spec.kind {
            NoiseKind::PairFlip => (*yi + 1) % k,
            NoiseKind::SymmetricFlip => {
                let r = rng.index(k - 1);
                if r >= *yi {
                    r + 1
                } else {
                    r
                }
            }
        };
    }
    let mut out = d.clone();
    out.y = Some(Labels::Class(noisy));
    Ok((out, mask))
}

/// Oracle class weights `(majority, minority)` when a fraction `mu` of the
/// classes is undersampled by the factor `rho` and the test prior is uniform.
pub fn class_prior_weights(mu: f64, rho: f64) -> (f64, f64) {
    (1.0 - mu + mu / rho, mu + rho - mu * rho)
}

/// Class-prior shift: `⌊μk⌋` randomly chosen minority classes get
/// `⌊n_major/ρ⌋` samples each, the rest `n_major`. Returns the sample and
/// the per-class oracle weights.
pub fn class_prior_shift_sample(
    pool: &Dataset,
    mu: f64,
    rho: f64,
    n_major: usize,
    rng: &mut RandomStream,
) -> Result<(Dataset, Vec<f64>)> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidArgument(format!("mu = {mu} outside (0, 1)")));
    }
    if !(rho > 1.0) {
        return Err(Error::InvalidArgument(format!("rho = {rho} must exceed 1")));
    }
    let k = match pool.task {
        Task::Multiclass(k) => k,
        _ => return Err(Error::InvalidArgument("prior shift needs class labels".into())),
    };
    let y = pool.y_class().expect("multiclass dataset carries class labels");
    let n_minor_classes = (mu * k as f64).floor() as usize;
    let minority = rng.choose(k, n_minor_classes);
    let n_minor = ((n_major as f64 / rho).floor() as usize).max(1);
    let (w_major, w_minor) = class_prior_weights(mu, rho);
    let mut weights = vec![w_major; k];
    let mut idx = Vec::new();
    for c in 0..k {
        let members: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        let want = if minority.contains(&c) {
            weights[c] = w_minor;
            n_minor
        } else {
            n_major
        };
        if members.len() < want {
            return Err(Error::InsufficientSamples(format!(
                "class {c} has {} samples, need {want}",
                members.len()
            )));
        }
        idx.extend(rng.choose(members.len(), want).into_iter().map(|j| members[j]));
    }
    rng.shuffle(&mut idx);
    Ok((pool.subset(&idx), weights))
}

/// Isotropic Gaussian classes with means evenly spaced on a circle of the given
/// radius (first two coordinates), unit variance.
pub fn gen_gaussian_classes(
    n_per_class: usize,
    k: usize,
    d: usize,
    radius: f64,
    rng: &mut RandomStream,
) -> Dataset {
    let mut x = Matrix::zeros(0, d);
    let mut y = Vec::with_capacity(n_per_class * k);
    for c in 0..k {
        let angle = 2.0 * PI * c as f64 / k as f64;
        for _ in 0..n_per_class {
            let row: Vec<f64> = (0..d)
                .map(|j| {
                    let m = match j {
                        0 => radius * angle.cos(),
                        1 => radius * angle.sin(),
                        _ => 0.0,
                    };
                    rng.normal_with(m, 1.0)
                })
                .collect();
            x.push_row(&row).expect("fixed width");
            y.push(c);
        }
    }
    let order = rng.permutation(y.len());
    let ds = Dataset::classes(x, y, k).expect("valid classes");
    ds.subset(&order)
}

fn population_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

fn zscore_matrix(x: &Matrix) -> (Matrix, Vec<f64>, Vec<f64>) {
    let means = x.col_means();
    let stds: Vec<f64> = (0..x.cols())
        .map(|j| {
            let s = population_sd(&x.col(j));
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let z = Matrix::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - means[j]) / stds[j]);
    (z, means, stds)
}

/// Column-wise standardisation with the population standard deviation.
/// Constant columns become zeros and report a standard deviation of 1.
pub fn zscore_normalize(d: &Dataset) -> (Dataset, Vec<f64>, Vec<f64>) {
    let (z, means, stds) = zscore_matrix(&d.x);
    let mut out = d.clone();
    out.x = z;
    (out, means, stds)
}

/// Applies a standardisation computed elsewhere.
pub fn zscore_apply(x: &Matrix, means: &[f64], stds: &[f64]) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| (x[(i, j)] - means[j]) / stds[j])
}

/// Parses LIBSVM text (`label idx:val ...`, 1-based ascending indices).
/// Labels that are all ±1 give a binary task, anything else regression.
pub fn parse_libsvm(text: &str) -> Result<Dataset> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = 0;
    for (ln, line) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label = parse_f64(parts.next().unwrap_or(""))
            .ok_or_else(|| Error::Parse {
                line: line_no,
                msg: "bad label".into(),
            })?;
        let mut feats = Vec::new();
        let mut prev = 0usize;
        for tok in parts {
            let (i, v) = tok.split_once(':').ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("expected idx:val, got {tok:?}"),
            })?;
            let i: usize = i.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad index {i:?}"),
            })?;
            let v = parse_f64(v).ok_or_else(|| Error::Parse {
                line: line_no,
                msg: format!("bad value {v:?}"),
            })?;
            if i == 0 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "indices are 1-based".into(),
                });
            }
            if i <= prev {
                return Err(Error::NonAscendingIndex(line_no));
            }
            prev = i;
            feats.push((i, v));
        }
        width = width.max(prev);
        rows.push(feats);
        labels.push(label);
    }
    let mut x = Matrix::zeros(rows.len(), width);
    for (r, feats) in rows.iter().enumerate() {
        for &(i, v) in feats {
            x[(r, i - 1)] = v;
        }
    }
    let task = if !labels.is_empty() && labels.iter().all(|&l| l == 1.0 || l == -1.0) {
        Task::Binary
    } else {
        Task::Regression
    };
    Dataset::new(x, Some(Labels::Real(labels)), task)
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Dense LIBSVM output; zero entries are omitted.
pub fn write_libsvm(d: &Dataset) -> Result<String> {
    let y = d
        .y_real()
        .ok_or_else(|| Error::InvalidArgument("LIBSVM output needs real labels".into()))?;
    let mut out = String::new();
    for (i, row) in d.x.iter_rows().enumerate() {
        write!(out, "{}", y[i]).unwrap();
        for (j, v) in row.iter().enumerate() {
            if *v != 0.0 {
                write!(out, " {}:{}", j + 1, v).unwrap();
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Parses comma-separated numeric text. A first row with any non-numeric cell
/// is a header. `label_col` is 1-based.
pub fn parse_csv(text: &str, label_col: Option<usize>) -> Result<Dataset> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();
    if let Some((_, first)) = lines.peek() {
        if first.split(',').any(|c| parse_f64(c).is_none()) {
            lines.next();
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut expected = None;
    for (ln, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let exp = *expected.get_or_insert(cells.len());
        if cells.len() != exp {
            return Err(Error::RaggedRows {
                line: ln + 1,
                found: cells.len(),
                expected: exp,
            });
        }
        let row = cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                parse_f64(cell).ok_or_else(|| Error::NonNumericCell {
                    row: ln + 1,
                    col: c + 1,
                    cell: cell.to_string(),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let ncols = expected.unwrap_or(0);
    if let Some(c) = label_col {
        if c == 0 || c > ncols {
            return Err(Error::InvalidArgument(format!(
                "label column {c} outside 1..={ncols}"
            )));
        }
        let y: Vec<f64> = rows.iter().map(|r| r[c - 1]).collect();
        let feats: Vec<Vec<f64>> = rows
            .into_iter()
            .map(|mut r| {
                r.remove(c - 1);
                r
            })
            .collect();
        let x = if feats.is_empty() {
            Matrix::zeros(0, ncols - 1)
        } else {
            Matrix::from_rows(&feats)
        };
        Dataset::regression(x, y)
    } else {
        let x = if rows.is_empty() {
            Matrix::zeros(0, 0)
        } else {
            Matrix::from_rows(&rows)
        };
        Dataset::new(x, None, Task::Regression)
    }
}

/// CSV with features first and real labels (if any) as the last column.
/// Values use Rust's shortest round-trip formatting.
pub fn write_csv(d: &Dataset) -> String {
    let y = d.y_real();
    let mut out = String::new();
    for (i, row) in d.x.iter_rows().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(y) = y {
            cells.push(y[i].to_string());
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Regression pool with `x ~ N(0, I_d)` and `y = Σ_j sin(x_j) + N(0, noise²)`.
pub fn gen_nonlinear_regression(
    n: usize,
    d: usize,
    noise: f64,
    rng: &mut RandomStream,
) -> Result<Dataset> {
    let x = Matrix::from_fn(n, d, |_, _| rng.normal());
    let y = x
        .iter_rows()
        .map(|r| r.iter().map(|v| v.sin()).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .map(|v| v + noise * rng.normal())
        .collect();
    Dataset::regression(x, y)
}

/// Multi-domain data under a shared linear mixing: per domain `k`, independent
/// Laplace components `s_j` with scale `scales[k][j]`, and `z = A·s`. The last
/// coordinate of `z` becomes the label, the rest the features.
pub fn gen_mixing_domains(
    mixing: &Matrix,
    scales: &[Vec<f64>],
    n_per_domain: usize,
    rng: &mut RandomStream,
) -> Result<Vec<Dataset>> {
    let d = mixing.rows();
    if !mixing.is_square() || d < 2 {
        return Err(Error::DimensionMismatch(
            "mixing matrix must be square with D ≥ 2".into(),
        ));
    }
    scales
        .iter()
        .enumerate()
        .map(|(k, sc)| {
            if sc.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "domain {k} has {} scales, expected {d}",
                    sc.len()
                )));
            }
            let mut x = Matrix::zeros(n_per_domain, d - 1);
            let mut y = Vec::with_capacity(n_per_domain);
            for i in 0..n_per_domain {
                let s: Vec<f64> = sc.iter().map(|&b| rng.laplace(b)).collect();
                let z = mixing.matvec(&s)?;
                x.row_mut(i).copy_from_slice(&z[..d - 1]);
                y.push(z[d - 1]);
            }
            Ok(Dataset::regression(x, y)?.with_domain(k as i64))
        })
        .collect()
}

/// Two Gaussian classes (labels ±1) at `(±1.5, 0)` with unit variance, each
/// point rotated about the origin by `ψ = (π/2)·B`, where `B ~ Beta(a, b)`
/// for training points and `Beta(b, a)` for test points.
pub fn gen_rotated_shift(
    n_tr: usize,
    n_te: usize,
    a: f64,
    b: f64,
    rng: &mut RandomStream,
) -> Result<ShiftedPair> {
    let draw = |n: usize, p: f64, q: f64, rng: &mut RandomStream| -> Result<Dataset> {
        let mut x = Matrix::zeros(n, 2);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = if rng.bernoulli(0.5) { 1.0 } else { -1.0 };
            let (u, v) = (rng.normal_with(1.5 * label, 1.0), rng.normal());
            let psi = FRAC_PI_2 * rng.beta(p, q)?;
            let (sn, cs) = psi.sin_cos();
            x.row_mut(i).copy_from_slice(&[cs * u - sn * v, sn * u + cs * v]);
            y.push(label);
        }
        Dataset::new(x, Some(Labels::Real(y)), Task::Binary)
    };
    let train = draw(n_tr, a, b, rng)?;
    let test = draw(n_te, b, a, rng)?;
    Ok(ShiftedPair {
        train,
        test,
        true_weights: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    #[test]
    fn sinc_convention() {
        assert_eq!(sinc(0.0), 1.0);
        assert!(sinc(1.0).abs() < 1e-15);
        assert!((sinc(0.5) - 2.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn toy_means_and_weights() {
        let mut rng = seeded_rng(0);
        let p = gen_toy_regression(150, 150, &mut rng);
        let m = p.train.x.col_means()[0];
        assert!((m - 1.0).abs() < 0.15, "{m}");
        let direct = normal_pdf(1.0, 2.0, 0.25) / normal_pdf(1.0, 1.0, 0.5);
        assert!((toy_ratio(1.0) - direct).abs() < 1e-15);
        let w = p.true_weights.unwrap();
        assert_eq!(w.len(), 150);
        assert!(w.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn zero_variance_direction_is_rejected() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]);
        let pool = Dataset::regression(x, vec![0.0; 3]).unwrap();
        let mut rng = seeded_rng(1);
        assert_eq!(
            covariate_shift_split(&pool, &[0.0, 1.0], &mut rng).unwrap_err(),
            Error::InvalidProjection
        );
        assert_eq!(logistic(0.0), 0.5);
    }

    #[test]
    fn pair_flip_wraps_last_class() {
        let d = Dataset::classes(Matrix::zeros(1, 1), vec![9], 10).unwrap();
        let spec = NoiseSpec {
            kind: NoiseKind::PairFlip,
            rate: 0.999_999,
        };
        let (noisy, mask) = inject_label_noise(&d, spec, 10, &mut seeded_rng(3)).unwrap();
        assert!(mask[0]);
        assert_eq!(noisy.y_class().unwrap(), &[0]);
    }

    #[test]
    fn zero_rate_is_identity() {
        let d = Dataset::classes(Matrix::zeros(4, 1), vec![0, 1, 2, 1], 3).unwrap();
        let spec = NoiseSpec {
            kind: NoiseKind::SymmetricFlip,
            rate: 0.0,
        };
        let (noisy, mask) = inject_label_noise(&d, spec, 3, &mut seeded_rng(3)).unwrap();
        assert_eq!(noisy, d);
        assert!(mask.iter().all(|m| !m));
        assert_eq!(
            inject_label_noise(&d, spec, 1, &mut seeded_rng(3)).unwrap_err(),
            Error::InvalidK(1)
        );
    }

    #[test]
    fn prior_weights() {
        let (a, b) = class_prior_weights(0.2, 100.0);
        assert!((a - 0.802).abs() < 1e-12 && (b - 80.2).abs() < 1e-12);
        let (_, b) = class_prior_weights(0.2, 200.0);
        assert!((b - 160.2).abs() < 1e-12);
        let (a, b) = class_prior_weights(0.2, 1.0 + 1e-9);
        assert!((a - 1.0).abs() < 1e-8 && (b - 1.0).abs() < 1e-8);
    }

    #[test]
    fn libsvm_examples() {
        let d = parse_libsvm("+1 1:0.5 3:2.0\n-1\n").unwrap();
        assert_eq!(d.x.row(0), &[0.5, 0.0, 2.0]);
        assert_eq!(d.x.row(1), &[0.0, 0.0, 0.0]);
        assert_eq!(d.y_real().unwrap(), &[1.0, -1.0]);
        assert_eq!(d.task, Task::Binary);
        assert_eq!(
            parse_libsvm("1 3:1 2:1").unwrap_err(),
            Error::NonAscendingIndex(1)
        );
        assert!(matches!(
            parse_libsvm("1 2:x"),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn csv_examples() {
        let d = parse_csv("a,b\n1,2\n3,4", Some(2)).unwrap();
        assert_eq!(d.x, Matrix::from_rows(&[[1.0], [3.0]]));
        assert_eq!(d.y_real().unwrap(), &[2.0, 4.0]);
        let u = parse_csv("1,2\n3,4\n", None).unwrap();
        assert!(u.y.is_none() && u.n() == 2);
        assert!(matches!(
            parse_csv("1,2\n3\n", None),
            Err(Error::RaggedRows { line: 2, .. })
        ));
        assert!(matches!(
            parse_csv("1,2\n3,x\n", None),
            Err(Error::NonNumericCell { row: 2, col: 2, .. })
        ));
    }

    #[test]
    fn zscore_examples() {
        let d = Dataset::unlabeled(Matrix::from_rows(&[[1.0, 7.0], [3.0, 7.0]]));
        let (z, _, stds) = zscore_normalize(&d);
        assert_eq!(z.x.col(0), vec![-1.0, 1.0]);
        assert_eq!(z.x.col(1), vec![0.0, 0.0]);
        assert_eq!(stds[1], 1.0);
    }
}
