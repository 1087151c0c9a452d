//! Dynamic importance weighting: per mini-batch kernel mean matching on
//! transformed data (loss values or hidden activations), interleaved with
//! weighted classifier updates.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::erm::{Loss, Target};
use crate::error::{Error, Result};
use crate::kernels::median_heuristic;
use crate::nnet::{loss_grad, Mlp, OptState};
use crate::numerics::qp::box_qp_solve_lenient;
use crate::numerics::{Matrix, RandomStream};
use crate::onestep::{accuracy, targets};
use crate::ratio::{kmm_problem, KmmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    /// `(x, y) ↦ ℓ(f(x), y)`.
    LossValue,
    /// Activations of the given layer, matched separately within each class.
    HiddenOutput(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    /// Median pairwise distance of the pooled batch.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiwConfig {
    pub transform: Transform,
    /// Upper bound on each weight.
    pub b: f64,
    /// Slack on the mean weight, `|Σw/n − 1| ≤ eps`.
    pub eps: f64,
    pub bandwidth: BandwidthRule,
    /// Unweighted epochs before reweighting starts.
    pub pretrain_epochs: usize,
    /// Total epochs, pretraining included.
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
}

impl Default for DiwConfig {
    fn default() -> Self {
        DiwConfig {
            transform: Transform::LossValue,
            b: 10.0,
            eps: 0.01,
            bandwidth: BandwidthRule::Median,
            pretrain_epochs: 1,
            epochs: 20,
            minibatch: 64,
            lr: 1e-2,
        }
    }
}

impl DiwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b > 0.0) || !(self.eps >= 0.0) {
            return Err(Error::InvalidArgument("DIW needs B > 0 and eps ≥ 0".into()));
        }
        if self.minibatch == 0 {
            return Err(Error::InvalidArgument("mini-batch size must be ≥ 1".into()));
        }
        if let BandwidthRule::Fixed(s) = self.bandwidth {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument("bandwidth must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// Estimated `p_te(y) / p_tr(y)` per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPriorRatio {
    pub w: Vec<f64>,
    /// Classes missing from the training labels (their ratio rests on smoothing).
    pub absent_in_train: Vec<bool>,
}

/// Class-prior ratio from label counts with add-one smoothing:
/// `((c_te + 1)/(n_te + k)) / ((c_tr + 1)/(n_tr + k))`.
pub fn class_prior_ratio(train_y: &[usize], valid_y: &[usize], k: usize) -> Result<ClassPriorRatio> {
    if k == 0 {
        return Err(Error::InvalidK(k));
    }
    if train_y.is_empty() || valid_y.is_empty() {
        return Err(Error::InsufficientSamples("class prior ratio needs labels".into()));
    }
    let count = |y: &[usize]| -> Result<Vec<usize>> {
        let mut c = vec![0usize; k];
        for &v in y {
            *c.get_mut(v).ok_or(Error::InvalidK(k))? += 1;
        }
        Ok(c)
    };
    let (ct, cv) = (count(train_y)?, count(valid_y)?);
    let (nt, nv) = ((train_y.len() + k) as f64, (valid_y.len() + k) as f64);
    let w = (0..k)
        .map(|c| ((cv[c] + 1) as f64 / nv) / ((ct[c] + 1) as f64 / nt))
        .collect();
    Ok(ClassPriorRatio {
        w,
        absent_in_train: ct.iter().map(|&c| c == 0).collect(),
    })
}

fn bandwidth(z_tr: &Matrix, z_te: &Matrix, rule: BandwidthRule) -> Result<f64> {
    match rule {
        BandwidthRule::Fixed(s) => Ok(s),
        BandwidthRule::Median => match median_heuristic(&z_tr.vstack(z_te)?) {
            Ok(s) => Ok(s),
            Err(Error::DegenerateData(_)) => Ok(1.0),
            Err(e) => Err(e),
        },
    }
}

/// KKT tolerance for the per-batch matching problems.
pub const MATCH_TOL: f64 = 1e-6;
/// Iteration budget for the per-batch matching problems.
pub const MATCH_MAX_ITER: usize = 1000;

/// KMM weights for one mini-batch of transformed points: box `[0, B]`,
/// mean weight within `eps` of 1. Falls back to the best iterate when the
/// solver runs out of iterations.
pub fn minibatch_match(z_tr: &Matrix, z_te: &Matrix, cfg: &DiwConfig) -> Result<Vec<f64>> {
    if z_tr.cols() != z_te.cols() || z_tr.cols() == 0 {
        return Err(Error::DimensionMismatch(format!(
            "transformed dimensions {} vs {}",
            z_tr.cols(),
            z_te.cols()
        )));
    }
    let kmm = KmmConfig {
        b: cfg.b,
        eps: cfg.eps,
        bandwidth: bandwidth(z_tr, z_te, cfg.bandwidth)?,
    };
    box_qp_solve_lenient(&kmm_problem(z_tr, z_te, &kmm)?, MATCH_TOL, MATCH_MAX_ITER)
}

/// Per-sample loss values as an `n × 1` matrix.
pub fn transform_loss_value(f: &Mlp, batch: &Dataset, loss: &Loss) -> Result<Matrix> {
    let out = f.predict(&batch.x)?;
    let lg = loss_grad(loss, &out, &targets(batch)?)?;
    Ok(Matrix::column(&lg.values))
}

/// Activations of layer `layer_index` (`0` = input, last = outputs).
pub fn transform_hidden(f: &Mlp, x: &Matrix, layer_index: usize) -> Result<Matrix> {
    Ok(f.forward_to(x, layer_index)?.0)
}

fn normalize_mean_one(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        let k = w.len() as f64 / s;
        w.iter_mut().for_each(|v| *v *= k);
    } else {
        w.iter_mut().for_each(|v| *v = 1.0);
    }
}

/// Hidden-output weights for one batch: per-class matching scaled by `w_y`.
/// Classes with fewer than 2 training or no validation samples in the batch
/// get weight `w_y` for each member.
pub fn classwise_match(
    z_tr: &Matrix,
    y_tr: &[usize],
    z_te: &Matrix,
    y_te: &[usize],
    prior: &ClassPriorRatio,
    cfg: &DiwConfig,
) -> Result<Vec<f64>> {
    let mut w = vec![0.0; y_tr.len()];
    for (c, &wy) in prior.w.iter().enumerate() {
        let itr: Vec<usize> = (0..y_tr.len()).filter(|&i| y_tr[i] == c).collect();
        if itr.is_empty() {
            continue;
        }
        let ite: Vec<usize> = (0..y_te.len()).filter(|&i| y_te[i] == c).collect();
        if itr.len() < 2 || ite.is_empty() {
            itr.iter().for_each(|&i| w[i] = wy);
            continue;
        }
        let wc = minibatch_match(&z_tr.select_rows(&itr), &z_te.select_rows(&ite), cfg)?;
        for (&i, v) in itr.iter().zip(wc) {
            w[i] = wy * v;
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochTrace {
    pub epoch: usize,
    pub mean_weight_intact: Option<f64>,
    pub mean_weight_corrupted: Option<f64>,
    pub train_accuracy: f64,
    pub valid_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiwFit {
    pub model: Mlp,
    /// Weight each training sample received in the last epoch.
    pub final_weights: Vec<f64>,
    pub trace: Vec<EpochTrace>,
}

fn class_labels(d: &Dataset) -> Option<Vec<usize>> {
    match (d.y_class(), d.y_real()) {
        (Some(c), _) => Some(c.to_vec()),
        (_, Some(y)) => Some(y.iter().map(|&v| usize::from(v > 0.0)).collect()),
        _ => None,
    }
}

/// Trains `f` on `train` while matching every mini-batch to a mini-batch of
/// the clean `valid` set. `corrupted` (if known) only feeds the trace.
pub fn diw_train(
    train: &Dataset,
    valid: &Dataset,
    mut f: Mlp,
    cfg: &DiwConfig,
    loss: &Loss,
    corrupted: Option<&[bool]>,
    rng: &mut RandomStream,
) -> Result<DiwFit> {
    cfg.validate()?;
    if train.n() == 0 || valid.n() == 0 {
        return Err(Error::EmptySplit("diw"));
    }
    let t_tr = targets(train)?;
    let t_va: Vec<Target> = targets(valid)?;
    let prior = match cfg.transform {
        Transform::HiddenOutput(layer) => {
            if layer > f.num_layers() {
                return Err(Error::BadLayer(layer));
            }
            let (ytr, yva) = (class_labels(train), class_labels(valid));
            let k = train.num_classes().or(valid.num_classes()).unwrap_or(2);
            Some(class_prior_ratio(
                ytr.as_deref().unwrap_or(&[]),
                yva.as_deref().unwrap_or(&[]),
                k,
            )?)
        }
        Transform::LossValue => None,
    };
    let ytr = class_labels(train).unwrap_or_default();
    let yva = class_labels(valid).unwrap_or_default();
    let mut opt = OptState::adam(cfg.lr);
    let mut final_weights = vec![1.0; train.n()];
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let btr = crate::onestep::batches(train.n(), cfg.minibatch, rng);
        let va_size = valid.n().div_ceil(btr.len());
        let bva = crate::onestep::batches(valid.n(), va_size, rng);
        for (k, b) in btr.iter().enumerate() {
            let bv = &bva[k % bva.len()];
            let xb = train.x.select_rows(b);
            let tb: Vec<Target> = b.iter().map(|&i| t_tr[i]).collect();
            let w = if epoch < cfg.pretrain_epochs {
                vec![1.0; b.len()]
            } else {
                let xv = valid.x.select_rows(bv);
                let mut w = match (&cfg.transform, &prior) {
                    (Transform::LossValue, _) => {
                        let tv: Vec<Target> = bv.iter().map(|&i| t_va[i]).collect();
                        let ztr = loss_grad(loss, &f.predict(&xb)?, &tb)?.values;
                        let zte = loss_grad(loss, &f.predict(&xv)?, &tv)?.values;
                        minibatch_match(&Matrix::column(&ztr), &Matrix::column(&zte), cfg)?
                    }
                    (Transform::HiddenOutput(layer), Some(p)) => {
                        let yb: Vec<usize> = b.iter().map(|&i| ytr[i]).collect();
                        let yv: Vec<usize> = bv.iter().map(|&i| yva[i]).collect();
                        classwise_match(
                            &transform_hidden(&f, &xb, *layer)?,
                            &yb,
                            &transform_hidden(&f, &xv, *layer)?,
                            &yv,
                            p,
                            cfg,
                        )?
                    }
                    _ => unreachable!("prior is set for the hidden-output transform"),
                };
                normalize_mean_one(&mut w);
                w
            };
            for (&i, &wi) in b.iter().zip(&w) {
                final_weights[i] = wi;
            }
            let (out, cache) = f.forward(&xb)?;
            let lg = loss_grad(loss, &out, &tb)?;
            let scale: Vec<f64> = w.iter().map(|v| v / b.len() as f64).collect();
            let (_, grad) = lg.weighted(&scale);
            let grads = f.backward(&cache, &grad)?;
            f.apply_gradients(&mut opt, &grads)?;
        }
        let mean_where = |want: bool| {
            corrupted.and_then(|m| {
                let v: Vec<f64> = (0..m.len())
                    .filter(|&i| m[i] == want)
                    .map(|i| final_weights[i])
                    .collect();
                (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
            })
        };
        trace.push(EpochTrace {
            epoch,
            mean_weight_intact: mean_where(false),
            mean_weight_corrupted: mean_where(true),
            train_accuracy: accuracy(&f, train)?,
            valid_accuracy: accuracy(&f, valid)?,
        });
    }
    Ok(DiwFit {
        model: f,
        final_weights,
        trace,
    })
}

/// Mean final weight per class.
pub fn per_class_mean_weights(weights: &[f64], y: &[usize], k: usize) -> Vec<f64> {
    let mut s = vec![0.0; k];
    let mut c = vec![0usize; k];
    for (&w, &yi) in weights.iter().zip(y) {
        s[yi] += w;
        c[yi] += 1;
    }
    s.iter()
        .zip(&c)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { f64::NAN })
        .collect()
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; NaN when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let mut cov = 0.0;
    let (mut va, mut vb) = (0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    Ok(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothing_keeps_absent_classes_finite() {
        let r = class_prior_ratio(&[0, 0, 1], &[0, 1, 2], 3).unwrap();
        assert!(r.w.iter().all(|w| w.is_finite() && *w > 0.0));
        assert_eq!(r.absent_in_train, vec![false, false, true]);
    }

    #[test]
    fn one_class_ratio_is_one() {
        let r = class_prior_ratio(&[0; 7], &[0; 3], 1).unwrap();
        assert_eq!(r.w, vec![1.0]);
    }

    #[test]
    fn spearman_ties_and_order() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn mean_one_normalisation() {
        let mut w = vec![0.5, 1.5, 4.0];
        normalize_mean_one(&mut w);
        assert!((w.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        let mut z = vec![0.0; 4];
        normalize_mean_one(&mut z);
        assert_eq!(z, vec![1.0; 4]);
    }
}
