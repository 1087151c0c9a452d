//! Small fully connected ReLU networks with hand-written backpropagation,
//! SGD and Adam.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::erm::{argmax, log_sum_exp, Loss, Target};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RandomStream};

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn next_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_in × fan_out`, so a batch maps as `X·W + b`.
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// Affine layers with ReLU between them and an identity output.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    layers: Vec<Layer>,
    frozen: usize,
    generation: u64,
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.layers == other.layers
    }
}

/// Activations saved by `forward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// Layer inputs; `inputs[0]` is the batch itself.
    inputs: Vec<Matrix>,
    /// Pre-activations of every layer.
    pre: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
    /// Gradient with respect to the network input.
    pub input: Matrix,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.extend_from_slice(l.w.as_slice());
            v.extend_from_slice(&l.b);
        }
        v
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(sizes: &[usize], rng: &mut RandomStream) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .map(|p| {
                let a = (6.0 / (p[0] + p[1]) as f64).sqrt();
                Layer {
                    w: Matrix::from_fn(p[0], p[1], |_, _| rng.uniform_range(-a, a)),
                    b: vec![0.0; p[1]],
                }
            })
            .collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            layers,
            frozen: 0,
            generation: next_generation(),
        })
    }

    /// Network from explicit layers; consecutive shapes must chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs a layer".into()));
        }
        let mut sizes = vec![layers[0].w.rows()];
        for l in &layers {
            if l.w.rows() != *sizes.last().unwrap() || l.b.len() != l.w.cols() {
                return Err(Error::DimensionMismatch("layer shapes do not chain".into()));
            }
            sizes.push(l.w.cols());
        }
        Ok(Mlp {
            sizes,
            layers,
            frozen: 0,
            generation: next_generation(),
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        let layers = sizes
            .windows(2)
            .map(|p| Layer {
                w: Matrix::zeros(p[0], p[1]),
                b: vec![0.0; p[1]],
            })
            .collect();
        Mlp::from_layers(layers)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.as_slice().len() + l.b.len()).sum()
    }

    /// Keeps the first `n` layers fixed in `apply_gradients`.
    pub fn freeze_first(&mut self, n: usize) {
        self.frozen = n.min(self.layers.len());
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend_from_slice(l.w.as_slice());
            v.extend_from_slice(&l.b);
        }
        v
    }

    pub fn set_params_flat(&mut self, p: &[f64]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a network with {}",
                p.len(),
                self.num_params()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.as_slice().len();
            l.w.as_mut_slice().copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        self.generation = next_generation();
        Ok(())
    }

    /// Runs the affine+ReLU stack, keeping what `backward` needs.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.forward_to(x, self.layers.len())
    }

    /// Outputs of layer `upto` (ReLU applied for hidden layers); `0` is the input.
    pub fn forward_to(&self, x: &Matrix, upto: usize) -> Result<(Matrix, ForwardCache)> {
        if upto > self.layers.len() {
            return Err(Error::BadLayer(upto));
        }
        if x.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(upto);
        let mut pre = Vec::with_capacity(upto);
        let mut a = x.clone();
        for (li, l) in self.layers.iter().enumerate().take(upto) {
            let mut z = a.matmul(&l.w)?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&l.b) {
                    *v += b;
                }
            }
            let next = if li == last {
                z.clone()
            } else {
                let mut h = z.clone();
                h.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                h
            };
            inputs.push(a);
            pre.push(z);
            a = next;
        }
        Ok((
            a,
            ForwardCache {
                generation: self.generation,
                inputs,
                pre,
            },
        ))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.0)
    }

    /// Exact gradients of `Σ grad_out ⊙ output` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Matrix) -> Result<Gradients> {
        if cache.generation != self.generation || cache.pre.len() != self.layers.len() {
            return Err(Error::StaleCache);
        }
        let n = cache.inputs[0].rows();
        if grad_out.shape() != (n, self.output_dim()) {
            return Err(Error::DimensionMismatch("output gradient shape".into()));
        }
        let last = self.layers.len() - 1;
        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut d = grad_out.clone();
        for li in (0..self.layers.len()).rev() {
            if li != last {
                for (g, z) in d.as_mut_slice().iter_mut().zip(cache.pre[li].as_slice()) {
                    if *z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            let a = &cache.inputs[li];
            let dw = a.transpose().matmul(&d)?;
            let mut db = vec![0.0; d.cols()];
            for r in d.iter_rows() {
                for (acc, v) in db.iter_mut().zip(r) {
                    *acc += v;
                }
            }
            let prev = d.matmul(&self.layers[li].w.transpose())?;
            grads.push(Layer { w: dw, b: db });
            d = prev;
        }
        grads.reverse();
        Ok(Gradients {
            layers: grads,
            input: d,
        })
    }

    /// One optimiser step; frozen layers are left untouched.
    pub fn apply_gradients(&mut self, opt: &mut OptState, grads: &Gradients) -> Result<()> {
        let mut p = self.params_flat();
        let g = grads.flat();
        if g.len() != p.len() {
            return Err(Error::DimensionMismatch("gradient length".into()));
        }
        let keep: usize = self.layers[..self.frozen]
            .iter()
            .map(|l| l.w.as_slice().len() + l.b.len())
            .sum();
        let saved = p[..keep].to_vec();
        opt.step(&mut p, &g);
        p[..keep].copy_from_slice(&saved);
        self.set_params_flat(&p)
    }

    /// Binary checkpoint: `MLP1`, layer-size count and sizes as u32 LE, then
    /// per layer the `fan_in × fan_out` weights row-major and the biases, f64 LE.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let mut out = b"MLP1".to_vec();
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for v in self.params_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 8 || &bytes[..4] != b"MLP1" {
            return Err(bad("missing MLP1 header"));
        }
        let u32_at = |off: usize| -> Result<usize> {
            bytes
                .get(off..off + 4)
                .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
                .ok_or_else(|| bad("truncated header"))
        };
        let count = u32_at(4)?;
        let sizes = (0..count)
            .map(|i| u32_at(8 + 4 * i))
            .collect::<Result<Vec<_>>>()?;
        let mut m = Mlp::zeros(&sizes).map_err(|_| bad("invalid layer sizes"))?;
        let start = 8 + 4 * count;
        let body = &bytes[start..];
        if body.len() != 8 * m.num_params() {
            return Err(bad("parameter block has the wrong length"));
        }
        let p: Vec<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        m.set_params_flat(&p)?;
        Ok(m)
    }
}

/// Per-sample loss values and gradients with respect to the network outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub values: Vec<f64>,
    pub grad: Matrix,
}

impl LossGrad {
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len().max(1) as f64
    }

    /// Rows of the gradient scaled by `w`, value `Σ w_i ℓ_i`.
    pub fn weighted(&self, w: &[f64]) -> (f64, Matrix) {
        let mut g = self.grad.clone();
        for (i, wi) in w.iter().enumerate() {
            g.row_mut(i).iter_mut().for_each(|v| *v *= wi);
        }
        let v = self.values.iter().zip(w).map(|(a, b)| a * b).sum();
        (v, g)
    }
}

fn sigmoid(v: f64) -> f64 {
    crate::data::logistic(v)
}

/// Loss values and (sub)gradients for a batch of network outputs.
/// Hinge uses subgradient 0 at margin exactly 1.
pub fn loss_grad(loss: &Loss, logits: &Matrix, y: &[Target]) -> Result<LossGrad> {
    if y.len() != logits.rows() {
        return Err(Error::DimensionMismatch("labels vs logits".into()));
    }
    if let Loss::ZeroOne = loss {
        return Err(Error::NonDifferentiable("zero_one".into()));
    }
    let mismatch = || Error::TaskMismatch(loss.name().into());
    let mut values = Vec::with_capacity(y.len());
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for (i, (row, t)) in logits.iter_rows().zip(y).enumerate() {
        let g = grad.row_mut(i);
        match (loss, row, *t) {
            (Loss::Squared, [f], Target::Real(y)) => {
                values.push((f - y) * (f - y));
                g[0] = 2.0 * (f - y);
            }
            (Loss::Tukey { rho }, [f], Target::Real(y)) => {
                let r = f - y;
                let u = 1.0 - r * r / (rho * rho);
                values.push(crate::erm::tukey_loss(r, *rho));
                g[0] = if u > 0.0 { 6.0 * r / (rho * rho) * u * u } else { 0.0 };
            }
            (Loss::Logistic, [f], Target::Real(y)) => {
                values.push(crate::erm::logistic_loss(y * f));
                g[0] = -y * sigmoid(-y * f);
            }
            (Loss::Hinge, [f], Target::Real(y)) => {
                let m = y * f;
                values.push((1.0 - m).max(0.0));
                g[0] = if m < 1.0 { -y } else { 0.0 };
            }
            (Loss::SoftmaxCe, s, Target::Class(c)) if c < s.len() => {
                let lse = log_sum_exp(s);
                values.push(lse - s[c]);
                for (gj, sj) in g.iter_mut().zip(s) {
                    *gj = (sj - lse).exp();
                }
                g[c] -= 1.0;
            }
            _ => return Err(mismatch()),
        }
    }
    Ok(LossGrad { values, grad })
}

/// Row-wise argmax of class scores.
pub fn predict_classes(scores: &Matrix) -> Vec<usize> {
    scores.iter_rows().map(argmax).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptKind {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub kind: OptKind,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptState {
    pub fn sgd(lr: f64) -> Self {
        OptState::new(OptKind::Sgd { lr })
    }

    /// Adam with `(β₁, β₂, ε) = (0.9, 0.999, 1e-8)`.
    pub fn adam(lr: f64) -> Self {
        OptState::new(OptKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        })
    }

    pub fn new(kind: OptKind) -> Self {
        OptState {
            kind,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self.kind {
            OptKind::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptKind::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if self.m.len() != params.len() {
                    self.m = vec![0.0; params.len()];
                    self.v = vec![0.0; params.len()];
                    self.t = 0;
                }
                self.t += 1;
                let c1 = 1.0 - beta1.powi(self.t as i32);
                let c2 = 1.0 - beta2.powi(self.t as i32);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let mh = self.m[i] / c1;
                    let vh = self.v[i] / c2;
                    params[i] -= lr * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    #[test]
    fn zero_and_identity_nets() {
        let z = Mlp::zeros(&[3, 4, 2]).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 0.5]]);
        assert_eq!(z.predict(&x).unwrap().as_slice(), &[0.0, 0.0]);
        let id = Mlp::from_layers(vec![Layer {
            w: Matrix::identity(3),
            b: vec![0.0; 3],
        }])
        .unwrap();
        assert_eq!(id.predict(&x).unwrap(), x);
    }

    #[test]
    fn linear_gradient_by_hand() {
        let net = Mlp::from_layers(vec![Layer {
            w: Matrix::from_rows(&[[2.0]]),
            b: vec![0.5],
        }])
        .unwrap();
        let x = Matrix::from_rows(&[[3.0]]);
        let (out, cache) = net.forward(&x).unwrap();
        let lg = loss_grad(&Loss::Squared, &out, &[Target::Real(1.0)]).unwrap();
        let g = net.backward(&cache, &lg.grad).unwrap();
        let r = 2.0 * 3.0 + 0.5 - 1.0;
        assert_eq!(g.layers[0].w[(0, 0)], 2.0 * r * 3.0);
        assert_eq!(g.layers[0].b[0], 2.0 * r);
    }

    #[test]
    fn stale_cache_is_detected() {
        let mut net = Mlp::new(&[2, 3, 1], &mut seeded_rng(0)).unwrap();
        let (_, cache) = net.forward(&Matrix::zeros(1, 2)).unwrap();
        let p = net.params_flat();
        net.set_params_flat(&p).unwrap();
        assert_eq!(
            net.backward(&cache, &Matrix::zeros(1, 1)).unwrap_err(),
            Error::StaleCache
        );
    }

    #[test]
    fn loss_grad_examples() {
        let lg = loss_grad(&Loss::SoftmaxCe, &Matrix::from_rows(&[[0.0, 0.0]]), &[Target::Class(0)])
            .unwrap();
        assert!((lg.values[0] - 2f64.ln()).abs() < 1e-15);
        assert_eq!(lg.grad.row(0), &[-0.5, 0.5]);
        let h = loss_grad(&Loss::Hinge, &Matrix::from_rows(&[[1.0]]), &[Target::Real(1.0)]).unwrap();
        assert_eq!(h.grad[(0, 0)], 0.0);
        let l = loss_grad(&Loss::Logistic, &Matrix::from_rows(&[[0.0]]), &[Target::Real(1.0)]).unwrap();
        assert_eq!(l.values[0], 2f64.ln());
        assert_eq!(l.grad[(0, 0)], -0.5);
        assert!(matches!(
            loss_grad(&Loss::ZeroOne, &Matrix::zeros(1, 1), &[Target::Real(1.0)]),
            Err(Error::NonDifferentiable(_))
        ));
    }

    #[test]
    fn optimiser_examples() {
        let mut p = vec![1.0, 2.0];
        OptState::sgd(0.1).step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![1.0, 2.0]);
        let mut adam = OptState::adam(1e-3);
        adam.step(&mut p, &[0.0, 0.0]);
        assert_eq!(p, vec![1.0, 2.0]);
        let mut q = vec![0.0];
        OptState::adam(1e-3).step(&mut q, &[5.0]);
        assert!((q[0] + 1e-3).abs() < 1e-9);
        let mut s = vec![0.0];
        let mut opt = OptState::sgd(0.1);
        for _ in 0..100 {
            let g = 2.0 * (s[0] - 3.0);
            opt.step(&mut s, &[g]);
        }
        assert!((s[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Mlp::new(&[3, 5, 2], &mut seeded_rng(8)).unwrap();
        let bytes = net.to_checkpoint();
        assert_eq!(&bytes[..4], b"MLP1");
        assert_eq!(Mlp::from_checkpoint(&bytes).unwrap(), net);
        assert!(Mlp::from_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
