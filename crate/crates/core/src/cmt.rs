//! Causal mechanism transfer: estimate a mixing shared across domains, pull
//! target samples back to independent components, recombine the components
//! across samples and push the combinations forward as extra training data.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{logistic, Dataset};
use crate::erm::{logistic_loss, loss_eval, predict, weighted_krr_fit, LinearPredictor, Loss, Target};
use crate::error::{Error, Result};
use crate::kernels::{design_matrix, kernel_matrix, median_heuristic, GaussianBasis};
use crate::nnet::{Mlp, OptState};
use crate::numerics::linalg::Lu;
use crate::numerics::{cholesky_jittered, Matrix, RandomStream};

type MapFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum MechanismKind {
    /// Inverse map `s = W·z + b`.
    Affine { w: Matrix, b: Vec<f64>, w_inv: Matrix },
    /// Known forward (`s ↦ z`) and inverse (`z ↦ s`) maps.
    Oracle { forward: MapFn, inverse: MapFn },
}

/// An invertible map between independent components `s` and observations `z`.
#[derive(Clone)]
pub struct Mechanism {
    pub kind: MechanismKind,
    pub dim: usize,
}

impl fmt::Debug for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            MechanismKind::Affine { w, b, .. } => f
                .debug_struct("Affine")
                .field("w", w)
                .field("b", b)
                .finish(),
            MechanismKind::Oracle { .. } => write!(f, "Oracle(dim = {})", self.dim),
        }
    }
}

impl Mechanism {
    /// Affine mechanism from its inverse map `s = W·z + b`.
    pub fn affine(w: Matrix, b: Vec<f64>) -> Result<Self> {
        if !w.is_square() || b.len() != w.rows() {
            return Err(Error::DimensionMismatch("affine mechanism shapes".into()));
        }
        let lu = Lu::new(&w)?;
        if !(lu.det().abs() > 1e-12) {
            return Err(Error::SingularMechanism);
        }
        let w_inv = lu.inverse()?;
        Ok(Mechanism {
            dim: w.rows(),
            kind: MechanismKind::Affine { w, b, w_inv },
        })
    }

    /// Mixing `z = A·s`, i.e. the affine mechanism with `W = A⁻¹`, `b = 0`.
    pub fn from_mixing(a: &Matrix) -> Result<Self> {
        let lu = Lu::new(a)?;
        Mechanism::affine(lu.inverse()?, vec![0.0; a.rows()])
    }

    pub fn identity(dim: usize) -> Self {
        Mechanism::affine(Matrix::identity(dim), vec![0.0; dim]).expect("identity is invertible")
    }

    pub fn oracle(
        dim: usize,
        forward: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        inverse: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Mechanism {
            dim,
            kind: MechanismKind::Oracle {
                forward: Arc::new(forward),
                inverse: Arc::new(inverse),
            },
        }
    }

    fn check(&self, m: &Matrix) -> Result<()> {
        if m.cols() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "mechanism has dimension {}, data {}",
                self.dim,
                m.cols()
            )));
        }
        Ok(())
    }

    fn map_rows(&self, m: &Matrix, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Matrix> {
        self.check(m)?;
        let mut out = Matrix::zeros(m.rows(), self.dim);
        for (i, r) in m.iter_rows().enumerate() {
            let v = f(r);
            if v.len() != self.dim {
                return Err(Error::DimensionMismatch("mechanism output length".into()));
            }
            out.row_mut(i).copy_from_slice(&v);
        }
        Ok(out)
    }

    /// `F(s)` row by row.
    pub fn forward(&self, s: &Matrix) -> Result<Matrix> {
        match &self.kind {
            MechanismKind::Affine { b, w_inv, .. } => self.map_rows(s, |r| {
                let c: Vec<f64> = r.iter().zip(b).map(|(x, b)| x - b).collect();
                w_inv.matvec(&c).expect("square")
            }),
            MechanismKind::Oracle { forward, .. } => self.map_rows(s, |r| forward(r)),
        }
    }

    /// `F⁻¹(z)` row by row.
    pub fn inverse(&self, z: &Matrix) -> Result<Matrix> {
        match &self.kind {
            MechanismKind::Affine { w, b, .. } => self.map_rows(z, |r| {
                let mut s = w.matvec(r).expect("square");
                s.iter_mut().zip(b).for_each(|(x, b)| *x += b);
                s
            }),
            MechanismKind::Oracle { inverse, .. } => self.map_rows(z, |r| inverse(r)),
        }
    }

    /// Binary checkpoint: `CMT1`, D as u32 LE, then W row-major and b, f64 LE.
    pub fn to_checkpoint(&self) -> Result<Vec<u8>> {
        let MechanismKind::Affine { w, b, .. } = &self.kind else {
            return Err(Error::Checkpoint("oracle mechanisms cannot be saved".into()));
        };
        let mut out = b"CMT1".to_vec();
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in w.as_slice().iter().chain(b) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != b"CMT1" {
            return Err(bad("missing CMT1 header"));
        }
        let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = &bytes[8..];
        if d == 0 || body.len() != 8 * d * (d + 1) {
            return Err(bad("parameter block has the wrong length"));
        }
        let v: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Mechanism::affine(Matrix::from_vec(d, d, v[..d * d].to_vec())?, v[d * d..].to_vec())
    }
}

/// Amari distance between an unmixing `W` and a mixing `A`: zero exactly when
/// `W·A` is a scaled permutation, normalised to `[0, 1]`.
pub fn amari_distance(w: &Matrix, a: &Matrix) -> Result<f64> {
    let p = w.matmul(a)?;
    let d = p.rows();
    if d < 2 || !p.is_square() {
        return Err(Error::DimensionMismatch("Amari distance needs D ≥ 2".into()));
    }
    let abs = |i: usize, j: usize| p[(i, j)].abs();
    let mut total = 0.0;
    for i in 0..d {
        let m = (0..d).map(|j| abs(i, j)).fold(0.0, f64::max);
        total += (0..d).map(|j| abs(i, j)).sum::<f64>() / m - 1.0;
    }
    for j in 0..d {
        let m = (0..d).map(|i| abs(i, j)).fold(0.0, f64::max);
        total += (0..d).map(|i| abs(i, j)).sum::<f64>() / m - 1.0;
    }
    Ok(total / (2.0 * d as f64 * (d as f64 - 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GclConfig {
    pub hidden_units: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
    /// L2 penalty on the score networks.
    pub weight_decay: f64,
}

impl Default for GclConfig {
    fn default() -> Self {
        GclConfig {
            hidden_units: 10,
            epochs: 100,
            minibatch: 128,
            lr: 1e-3,
            weight_decay: 1e-2,
        }
    }
}

/// Affine inverse mechanism plus one score network per component; the score
/// of `z` for domain `u` is `r(z, u) = Σ_j φ_j(s_j)[u]` with `s = W·z + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GclModel {
    pub w: Matrix,
    pub b: Vec<f64>,
    /// `φ_j: ℝ → ℝ^K`, one output per domain.
    pub phis: Vec<Mlp>,
}

impl GclModel {
    pub fn mechanism(&self) -> Result<Mechanism> {
        Mechanism::affine(self.w.clone(), self.b.clone())
    }

    fn components(&self, z: &Matrix) -> Result<Matrix> {
        let mut s = z.matmul(&self.w.transpose())?;
        for r in 0..s.rows() {
            s.row_mut(r).iter_mut().zip(&self.b).for_each(|(v, b)| *v += b);
        }
        Ok(s)
    }

    /// `n × K` matrix of `r(z_i, u)`.
    pub fn scores(&self, z: &Matrix) -> Result<Matrix> {
        let s = self.components(z)?;
        let k = self.phis[0].output_dim();
        let mut out = Matrix::zeros(z.rows(), k);
        for (j, phi) in self.phis.iter().enumerate() {
            let o = phi.predict(&Matrix::column(&s.col(j)))?;
            for (a, b) in out.as_mut_slice().iter_mut().zip(o.as_slice()) {
                *a += b;
            }
        }
        Ok(out)
    }
}

fn joint_all(domains: &[Dataset]) -> Result<Vec<Matrix>> {
    domains.iter().map(Dataset::joint).collect()
}

/// Contrastive objective with the expectation over other domains taken exactly:
/// `Σ_k (1/n_k) Σ_i [ℓ(r(z_i, k)) + mean_{k'≠k} ℓ(−r(z_i, k'))]`.
pub fn gcl_objective(model: &GclModel, domains: &[Dataset]) -> Result<f64> {
    let k = domains.len();
    let mut total = 0.0;
    for (d, z) in joint_all(domains)?.iter().enumerate() {
        let sc = model.scores(z)?;
        let mut sum = 0.0;
        for r in sc.iter_rows() {
            let neg: f64 = (0..k).filter(|&o| o != d).map(|o| logistic_loss(-r[o])).sum();
            sum += logistic_loss(r[d]) + neg / (k - 1) as f64;
        }
        total += sum / z.rows() as f64;
    }
    Ok(total)
}

/// Whitening start: `W = L⁻¹` for the pooled covariance `LLᵀ`, `b = −W·mean`.
fn whitening(z: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let d = z.cols();
    let mean = z.col_means();
    let mut cov = Matrix::zeros(d, d);
    for r in z.iter_rows() {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    cov.scale(1.0 / z.rows() as f64);
    let l = cholesky_jittered(&cov)?.factor().clone();
    let w = Lu::new(&l)?.inverse()?;
    let b: Vec<f64> = w.matvec(&mean)?.into_iter().map(|v| -v).collect();
    Ok((w, b))
}

/// Generalised contrastive learning over `K ≥ 2` domains on the joint
/// vectors `z = (x, y)`. Each sample is contrasted with one other domain drawn
/// afresh every time it appears in a mini-batch.
pub fn gcl_fit(domains: &[Dataset], cfg: &GclConfig, rng: &mut RandomStream) -> Result<GclModel> {
    let k = domains.len();
    if k < 2 {
        return Err(Error::NeedTwoDomains);
    }
    if cfg.minibatch == 0 || cfg.hidden_units == 0 {
        return Err(Error::InvalidArgument("GCL needs minibatch and hidden units ≥ 1".into()));
    }
    let zs = joint_all(domains)?;
    let d = zs[0].cols();
    if zs.iter().any(|z| z.cols() != d || z.rows() == 0) {
        return Err(Error::DimensionMismatch("domains differ in dimension or are empty".into()));
    }
    let mut pooled = zs[0].clone();
    let mut labels = vec![0usize; zs[0].rows()];
    for (u, z) in zs.iter().enumerate().skip(1) {
        pooled = pooled.vstack(z)?;
        labels.extend(std::iter::repeat_n(u, z.rows()));
    }
    let (w, b) = whitening(&pooled)?;
    let phis = (0..d)
        .map(|_| Mlp::new(&[1, cfg.hidden_units, k], rng))
        .collect::<Result<Vec<_>>>()?;
    let mut model = GclModel { w, b, phis };
    let mut opt_wb = OptState::adam(cfg.lr);
    let mut opt_phi: Vec<OptState> = (0..d).map(|_| OptState::adam(cfg.lr)).collect();
    for _ in 0..cfg.epochs {
        for batch in crate::onestep::batches(pooled.rows(), cfg.minibatch, rng) {
            let zb = pooled.select_rows(&batch);
            let n = batch.len() as f64;
            let pos: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let neg: Vec<usize> = pos
                .iter()
                .map(|&u| {
                    let r = rng.index(k - 1);
                    if r >= u {
                        r + 1
                    } else {
                        r
                    }
                })
                .collect();
            let s = model.components(&zb)?;
            let mut caches = Vec::with_capacity(d);
            let mut score = Matrix::zeros(batch.len(), k);
            for (j, phi) in model.phis.iter().enumerate() {
                let (o, c) = phi.forward(&Matrix::column(&s.col(j)))?;
                for (a, b) in score.as_mut_slice().iter_mut().zip(o.as_slice()) {
                    *a += b;
                }
                caches.push(c);
            }
            // d/dr of ℓ(r) is −σ(−r); of ℓ(−r) it is σ(r).
            let mut g = Matrix::zeros(batch.len(), k);
            for i in 0..batch.len() {
                g[(i, pos[i])] += -logistic(-score[(i, pos[i])]) / n;
                g[(i, neg[i])] += logistic(score[(i, neg[i])]) / n;
            }
            let mut ds = Matrix::zeros(batch.len(), d);
            for j in 0..d {
                let mut grads = model.phis[j].backward(&caches[j], &g)?;
                for (i, v) in grads.input.col(0).into_iter().enumerate() {
                    ds[(i, j)] = v;
                }
                let params = model.phis[j].params_flat();
                let mut off = 0;
                for l in grads.layers.iter_mut() {
                    for x in l.w.as_mut_slice().iter_mut().chain(l.b.iter_mut()) {
                        *x += cfg.weight_decay * params[off];
                        off += 1;
                    }
                }
                model.phis[j].apply_gradients(&mut opt_phi[j], &grads)?;
            }
            // s = W z + b  ⇒  dW = dsᵀ z, db = Σ_i ds_i
            let dw = ds.transpose().matmul(&zb)?;
            let db: Vec<f64> = (0..d).map(|j| ds.col(j).iter().sum()).collect();
            let mut p: Vec<f64> = model.w.as_slice().iter().chain(&model.b).copied().collect();
            let gvec: Vec<f64> = dw.as_slice().iter().chain(&db).copied().collect();
            opt_wb.step(&mut p, &gvec);
            model.w.as_mut_slice().copy_from_slice(&p[..d * d]);
            model.b.copy_from_slice(&p[d * d..]);
        }
    }
    Ok(model)
}

/// Row `j` is `F⁻¹(z_j)` for the joint target vector `z_j = (x_j, y_j)`.
pub fn extract_ics(mech: &Mechanism, target: &Dataset) -> Result<Matrix> {
    mech.inverse(&target.joint()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InflationSet {
    pub ics: Matrix,
    /// Joint target vectors the components came from.
    pub originals: Matrix,
    /// Index tuples `(j_1, …, j_D)`, 0-based.
    pub combos: Vec<Vec<usize>>,
}

impl InflationSet {
    pub fn is_diagonal(&self, c: usize) -> bool {
        let t = &self.combos[c];
        t.iter().all(|&j| j == t[0])
    }
}

/// All `n^D` component combinations in lexicographic order when `n^D ≤ cap`;
/// otherwise the `n` diagonal tuples plus distinct random tuples up to `cap`.
pub fn inflate(
    ics: &Matrix,
    originals: &Matrix,
    cap: usize,
    rng: &mut RandomStream,
) -> Result<InflationSet> {
    let (n, d) = (ics.rows(), ics.cols());
    if n == 0 || d == 0 {
        return Err(Error::InsufficientSamples("inflation needs components".into()));
    }
    if originals.shape() != ics.shape() {
        return Err(Error::DimensionMismatch("originals vs components".into()));
    }
    if cap < n {
        return Err(Error::InvalidArgument(format!(
            "cap {cap} cannot hold the {n} diagonal tuples"
        )));
    }
    let total = (n as f64).powi(d as i32);
    let combos = if total <= cap as f64 {
        let total = total as usize;
        (0..total)
            .map(|mut code| {
                let mut t = vec![0; d];
                for slot in t.iter_mut().rev() {
                    *slot = code % n;
                    code /= n;
                }
                t
            })
            .collect()
    } else {
        let mut seen: HashSet<Vec<usize>> = HashSet::with_capacity(cap);
        let mut combos: Vec<Vec<usize>> = (0..n).map(|j| vec![j; d]).collect();
        seen.extend(combos.iter().cloned());
        while combos.len() < cap {
            let t: Vec<usize> = (0..d).map(|_| rng.index(n)).collect();
            if seen.insert(t.clone()) {
                combos.push(t);
            }
        }
        combos
    };
    Ok(InflationSet {
        ics: ics.clone(),
        originals: originals.clone(),
        combos,
    })
}

/// Pushes every combined tuple through `F`. Diagonal tuples return the
/// original target vectors unchanged. The last coordinate becomes the label.
pub fn synthesize(mech: &Mechanism, infl: &InflationSet) -> Result<Dataset> {
    let d = infl.ics.cols();
    let mut s = Matrix::zeros(infl.combos.len(), d);
    for (r, t) in infl.combos.iter().enumerate() {
        for (j, &idx) in t.iter().enumerate() {
            s[(r, j)] = infl.ics[(idx, j)];
        }
    }
    let mut z = mech.forward(&s)?;
    for c in 0..infl.combos.len() {
        if infl.is_diagonal(c) {
            let j = infl.combos[c][0];
            z.row_mut(c).copy_from_slice(infl.originals.row(j));
        }
    }
    split_joint(&z)
}

fn split_joint(z: &Matrix) -> Result<Dataset> {
    let d = z.cols();
    let x = Matrix::from_fn(z.rows(), d - 1, |i, j| z[(i, j)]);
    Dataset::regression(x, z.col(d - 1))
}

/// Mean Gaussian-kernel similarity of every row of `points` to `pool`.
pub fn support_scores(points: &Matrix, pool: &Matrix, bandwidth: f64) -> Result<Vec<f64>> {
    let k = kernel_matrix(bandwidth, points, pool)?;
    Ok(k.iter_rows()
        .map(|r| r.iter().sum::<f64>() / pool.rows() as f64)
        .collect())
}

/// Indices kept after dropping the `⌊quantile·m⌋` lowest-scoring unprotected
/// points (`m` = number of unprotected points); order is preserved.
pub fn support_filter(
    synth: &Dataset,
    source_pool: &Dataset,
    quantile: f64,
    bandwidth: f64,
    protected: &[bool],
) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&quantile) {
        return Err(Error::InvalidArgument(format!("quantile {quantile} outside [0, 1)")));
    }
    if protected.len() != synth.n() {
        return Err(Error::LengthMismatch(protected.len(), synth.n()));
    }
    let free: Vec<usize> = (0..synth.n()).filter(|&i| !protected[i]).collect();
    let drop_n = (quantile * free.len() as f64).floor() as usize;
    let mut dropped = vec![false; synth.n()];
    if drop_n > 0 {
        let scores = support_scores(&synth.joint()?.select_rows(&free), &source_pool.joint()?, bandwidth)?;
        let mut order: Vec<usize> = (0..free.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        for &o in &order[..drop_n] {
            dropped[free[o]] = true;
        }
    }
    Ok((0..synth.n()).filter(|&i| !dropped[i]).collect())
}

/// Mean loss of `f` over a (synthesised) data set.
pub fn cmt_risk(f: &LinearPredictor, data: &Dataset, loss: &Loss) -> Result<f64> {
    let y = data
        .y_real()
        .ok_or_else(|| Error::TaskMismatch("cmt risk needs real labels".into()))?;
    let p = predict(f, &data.x)?;
    let mut s = 0.0;
    for (pi, yi) in p.iter().zip(y) {
        s += loss_eval(loss, &[*pi], Target::Real(*yi))?;
    }
    Ok(s / y.len() as f64)
}

/// `Ř(f)`: the risk over all component combinations of the target sample.
pub fn augmented_risk(
    f: &LinearPredictor,
    mech: &Mechanism,
    target: &Dataset,
    loss: &Loss,
    cap: usize,
    rng: &mut RandomStream,
) -> Result<f64> {
    let z = target.joint()?;
    let infl = inflate(&mech.inverse(&z)?, &z, cap, rng)?;
    cmt_risk(f, &synthesize(mech, &infl)?, loss)
}

/// `2^-10, …, 2^10`.
pub fn default_krr_grid() -> Vec<f64> {
    (-10..=10).map(|e| 2f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KrrFit {
    pub predictor: LinearPredictor,
    pub lambda: f64,
    /// Leave-one-out mean squared error for each grid entry.
    pub loo: Vec<f64>,
}

/// Ridge regression on `basis` with λ from `grid` chosen by closed-form
/// leave-one-out error over the rows flagged in `held_out`.
pub fn krr_loo_fit(
    data: &Dataset,
    basis: &GaussianBasis,
    grid: &[f64],
    held_out: &[bool],
) -> Result<KrrFit> {
    let y = data
        .y_real()
        .ok_or_else(|| Error::TaskMismatch("ridge regression needs real labels".into()))?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty lambda grid".into()));
    }
    if held_out.len() != data.n() {
        return Err(Error::LengthMismatch(held_out.len(), data.n()));
    }
    let phi = design_matrix(basis, &data.x)?;
    let n = data.n() as f64;
    let gram = phi.weighted_gram(None, 1.0);
    let rhs = phi.t_matvec(y)?;
    let rows: Vec<usize> = (0..data.n()).filter(|&i| held_out[i]).collect();
    if rows.is_empty() {
        return Err(Error::EmptySplit("held-out rows"));
    }
    let mut loo = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut a = gram.clone();
        a.add_diag(lambda * n);
        let chol = cholesky_jittered(&a)?;
        let alpha = chol.solve(&rhs)?;
        let mut err = 0.0;
        for &i in &rows {
            let p = phi.row(i);
            let h = crate::numerics::dot(p, &chol.solve(p)?);
            let r = (y[i] - crate::numerics::dot(p, &alpha)) / (1.0 - h);
            err += r * r;
        }
        loo.push(err / rows.len() as f64);
    }
    let best = crate::ratio::argmin(&loo);
    let lambda = grid[best];
    let predictor = weighted_krr_fit(&data.x, y, &vec![1.0; data.n()], basis, lambda)?;
    Ok(KrrFit {
        predictor,
        lambda,
        loo,
    })
}

/// Ridge basis centred on the target inputs with the median-heuristic width.
pub fn target_basis(target: &Dataset) -> Result<GaussianBasis> {
    let bw = median_heuristic(&target.x).unwrap_or(1.0);
    GaussianBasis::new(target.x.clone(), bw)
}

/// Ridge regression on the target sample alone.
pub fn tar_only_fit(target: &Dataset, basis: &GaussianBasis, grid: &[f64]) -> Result<KrrFit> {
    krr_loo_fit(target, basis, grid, &vec![true; target.n()])
}

#[derive(Debug, Clone)]
pub enum MechanismSource {
    Given(Mechanism),
    Gcl(GclConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmtConfig {
    pub cap: usize,
    /// Fraction of synthesised points dropped as out of support.
    pub quantile: f64,
}

impl Default for CmtConfig {
    fn default() -> Self {
        CmtConfig {
            cap: 100_000,
            quantile: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CmtFit {
    pub krr: KrrFit,
    pub mechanism: Mechanism,
    /// Training rows after filtering, originals included.
    pub n_train: usize,
}

/// Mechanism → components → inflation → synthesis → support filter →
/// ridge regression on originals plus survivors, λ by leave-one-out on the
/// original target points.
pub fn cmt_fit(
    sources: &[Dataset],
    target: &Dataset,
    source: &MechanismSource,
    basis: &GaussianBasis,
    grid: &[f64],
    cfg: &CmtConfig,
    rng: &mut RandomStream,
) -> Result<CmtFit> {
    let z = target.joint()?;
    let d = z.cols();
    if target.n() < d {
        return Err(Error::InsufficientSamples(format!(
            "target has {} samples, need at least D = {d}",
            target.n()
        )));
    }
    let mechanism = match source {
        MechanismSource::Given(m) => m.clone(),
        MechanismSource::Gcl(g) => gcl_fit(sources, g, rng)?.mechanism()?,
    };
    let infl = inflate(&mechanism.inverse(&z)?, &z, cfg.cap, rng)?;
    let synth = synthesize(&mechanism, &infl)?;
    let diag: Vec<bool> = (0..infl.combos.len()).map(|c| infl.is_diagonal(c)).collect();
    let keep = if sources.is_empty() || cfg.quantile == 0.0 {
        (0..synth.n()).collect()
    } else {
        let mut pool = sources[0].clone();
        for s in &sources[1..] {
            pool = Dataset::regression(
                pool.x.vstack(&s.x)?,
                pool.y_real().unwrap().iter().chain(s.y_real().unwrap()).copied().collect(),
            )?;
        }
        support_filter(&synth, &pool, cfg.quantile, (d as f64 / 2.0).sqrt(), &diag)?
    };
    let combined = synth.subset(&keep);
    let held: Vec<bool> = keep.iter().map(|&i| diag[i]).collect();
    let krr = krr_loo_fit(&combined, basis, grid, &held)?;
    Ok(CmtFit {
        krr,
        mechanism,
        n_train: combined.n(),
    })
}

/// Mean squared error of a predictor on labelled data.
pub fn test_mse(f: &LinearPredictor, data: &Dataset) -> Result<f64> {
    cmt_risk(f, data, &Loss::Squared)
}
