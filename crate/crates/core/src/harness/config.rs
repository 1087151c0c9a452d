//! Experiment configuration as read from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cmt::{CmtConfig, GclConfig};
use crate::data::NoiseSpec;
use crate::diw::{BandwidthRule, Transform};
use crate::erm::Loss;
use crate::error::{Error, Result};

fn squared() -> Loss {
    Loss::Squared
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    pub trials: usize,
    /// Worker threads; defaults to the available parallelism.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Record wall time per method; off keeps reports byte-reproducible.
    #[serde(default)]
    pub timing: bool,
    pub data: DataSpec,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub linear: LinearSettings,
    #[serde(default)]
    pub net: NetSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// 1-D sinc regression with Gaussian input shift.
    ToyRegression { n_tr: usize, n_te: usize },
    /// A pool split by the logistic projection rule.
    Covshift {
        pool: PoolSpec,
        #[serde(default)]
        split: SplitSpec,
    },
    /// Two rotated Gaussian classes, `Beta(a, b)` angles for training.
    RotatedShift {
        n_tr: usize,
        n_te: usize,
        a: f64,
        b: f64,
    },
    /// Gaussian classes with corrupted training labels and a small clean
    /// validation set.
    LabelNoise {
        k: usize,
        dim: usize,
        radius: f64,
        n_per_class: usize,
        noise: NoiseSpec,
        n_valid_per_class: usize,
        n_test_per_class: usize,
    },
    /// Gaussian classes where a fraction `mu` of classes is undersampled by `rho`.
    PriorShift {
        k: usize,
        dim: usize,
        radius: f64,
        n_major: usize,
        mu: f64,
        rho: f64,
        n_valid_per_class: usize,
        n_test_per_class: usize,
    },
    /// Source domains and a small target domain sharing a linear mixing of
    /// Laplace components; the last coordinate is the label.
    MixingDomains {
        dim: usize,
        sources: usize,
        n_source: usize,
        n_target: usize,
        n_test: usize,
        scale_low: f64,
        scale_high: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PoolSpec {
    Synthetic {
        n: usize,
        dim: usize,
        noise: f64,
    },
    Libsvm {
        path: String,
    },
    Csv {
        path: String,
        /// 1-based label column; defaults to the last one.
        #[serde(default)]
        label_col: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    #[default]
    Random,
    Adversarial { candidates: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    #[default]
    Ulsif,
    Kmm,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismChoice {
    Oracle,
    #[default]
    Gcl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodSpec {
    /// Unweighted training; the loss defaults to squared for regression and
    /// to the task's classification loss for networks.
    Erm {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        loss: Option<Loss>,
    },
    Iwerm {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "squared")]
        loss: Loss,
        #[serde(default)]
        weights: WeightSource,
    },
    Eiwerm {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "squared")]
        loss: Loss,
        gamma: f64,
    },
    Riwerm {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "squared")]
        loss: Loss,
        eta: f64,
    },
    OnestepLinear {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "squared")]
        loss: Loss,
        lambda: f64,
        #[serde(default = "default_rounds")]
        rounds: usize,
        #[serde(default = "one")]
        m: f64,
    },
    OnestepGradient {
        #[serde(default)]
        label: Option<String>,
        #[serde(default = "default_rounds")]
        rounds: usize,
        epochs_g: usize,
        epochs_f: usize,
        #[serde(default)]
        pretrain_g_epochs: usize,
        lr_g: f64,
        #[serde(default = "one")]
        m: f64,
    },
    Diw {
        #[serde(default)]
        label: Option<String>,
        transform: Transform,
        #[serde(default = "default_b")]
        b: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_bandwidth")]
        bandwidth: BandwidthRule,
        #[serde(default = "one_usize")]
        pretrain_epochs: usize,
    },
    Cmt {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        mechanism: MechanismChoice,
        #[serde(default)]
        gcl: GclConfig,
        #[serde(default)]
        inflation: CmtConfig,
    },
}

fn default_rounds() -> usize {
    10
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_b() -> f64 {
    10.0
}
fn default_eps() -> f64 {
    0.01
}
fn default_bandwidth() -> BandwidthRule {
    BandwidthRule::Median
}

impl MethodSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            MethodSpec::Erm { .. } => "erm",
            MethodSpec::Iwerm { .. } => "iwerm",
            MethodSpec::Eiwerm { .. } => "eiwerm",
            MethodSpec::Riwerm { .. } => "riwerm",
            MethodSpec::OnestepLinear { .. } => "onestep_linear",
            MethodSpec::OnestepGradient { .. } => "onestep_gradient",
            MethodSpec::Diw { .. } => "diw",
            MethodSpec::Cmt { .. } => "cmt",
        }
    }

    fn loss(&self) -> Option<Loss> {
        match self {
            MethodSpec::Erm { loss, .. } => *loss,
            MethodSpec::Iwerm { loss, .. }
            | MethodSpec::Eiwerm { loss, .. }
            | MethodSpec::Riwerm { loss, .. }
            | MethodSpec::OnestepLinear { loss, .. } => Some(*loss),
            _ => None,
        }
    }

    /// Metric prefix: the explicit label, else `kind` or `kind_loss`.
    pub fn label(&self) -> String {
        let explicit = match self {
            MethodSpec::Erm { label, .. }
            | MethodSpec::Iwerm { label, .. }
            | MethodSpec::Eiwerm { label, .. }
            | MethodSpec::Riwerm { label, .. }
            | MethodSpec::OnestepLinear { label, .. }
            | MethodSpec::OnestepGradient { label, .. }
            | MethodSpec::Diw { label, .. }
            | MethodSpec::Cmt { label, .. } => label.clone(),
        };
        explicit.unwrap_or_else(|| match self.loss() {
            Some(l) => format!("{}_{}", self.kind(), l.name()),
            None => self.kind().to_string(),
        })
    }
}

/// Linear-in-parameter model settings for the regression data kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearSettings {
    /// Number of basis functions for the predictor.
    pub b_f: usize,
    /// Number of basis functions for the weight model.
    pub b_g: usize,
    /// Predictor bandwidth; median heuristic on test inputs when absent.
    pub sigma_f: Option<f64>,
    /// Weight-model bandwidth; median heuristic on test inputs when absent.
    pub sigma_g: Option<f64>,
    /// Ridge on the predictor.
    pub mu: f64,
    /// Folds for ratio-model λ selection.
    pub cv_folds: usize,
}

impl Default for LinearSettings {
    fn default() -> Self {
        LinearSettings {
            b_f: 50,
            b_g: 50,
            sigma_f: None,
            sigma_g: None,
            mu: 1e-3,
            cv_folds: 5,
        }
    }
}

/// Network settings for the classification data kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSettings {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub minibatch: usize,
    pub lr: f64,
}

impl Default for NetSettings {
    fn default() -> Self {
        NetSettings {
            hidden: vec![32],
            epochs: 20,
            minibatch: 64,
            lr: 3e-3,
        }
    }
}

fn cfg_err(path: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Family {
    Linear,
    Net,
    Mixing,
}

impl DataSpec {
    pub(crate) fn family(&self) -> Family {
        match self {
            DataSpec::ToyRegression { .. } | DataSpec::Covshift { .. } => Family::Linear,
            DataSpec::RotatedShift { .. }
            | DataSpec::LabelNoise { .. }
            | DataSpec::PriorShift { .. } => Family::Net,
            DataSpec::MixingDomains { .. } => Family::Mixing,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(cfg_err(format!("data.{name}"), "must be ≥ 1"))
            } else {
                Ok(())
            }
        };
        match self {
            DataSpec::ToyRegression { n_tr, n_te } => {
                positive("n_tr", *n_tr)?;
                positive("n_te", *n_te)
            }
            DataSpec::Covshift { pool, split } => {
                match pool {
                    PoolSpec::Synthetic { n, dim, noise } => {
                        positive("pool.n", *n)?;
                        positive("pool.dim", *dim)?;
                        if !(*noise >= 0.0) {
                            return Err(cfg_err("data.pool.noise", "must be ≥ 0"));
                        }
                    }
                    PoolSpec::Libsvm { path } | PoolSpec::Csv { path, .. } => {
                        if !Path::new(path).is_file() {
                            return Err(cfg_err("data.pool.path", format!("{path} does not exist")));
                        }
                    }
                }
                if let SplitSpec::Adversarial { candidates } = split {
                    positive("split.candidates", *candidates)?;
                }
                Ok(())
            }
            DataSpec::RotatedShift { n_tr, n_te, a, b } => {
                positive("n_tr", *n_tr)?;
                positive("n_te", *n_te)?;
                if !(*a > 0.0 && *b > 0.0) {
                    return Err(cfg_err("data.a", "beta parameters must be > 0"));
                }
                Ok(())
            }
            DataSpec::LabelNoise {
                k,
                dim,
                n_per_class,
                noise,
                n_valid_per_class,
                n_test_per_class,
                ..
            } => {
                if *k < 2 {
                    return Err(cfg_err("data.k", "need at least 2 classes"));
                }
                if *dim < 2 {
                    return Err(cfg_err("data.dim", "must be ≥ 2"));
                }
                positive("n_per_class", *n_per_class)?;
                positive("n_valid_per_class", *n_valid_per_class)?;
                positive("n_test_per_class", *n_test_per_class)?;
                if !(0.0..1.0).contains(&noise.rate) {
                    return Err(cfg_err("data.noise.rate", "must lie in [0, 1)"));
                }
                Ok(())
            }
            DataSpec::PriorShift {
                k,
                dim,
                n_major,
                mu,
                rho,
                n_valid_per_class,
                n_test_per_class,
                ..
            } => {
                if *k < 2 {
                    return Err(cfg_err("data.k", "need at least 2 classes"));
                }
                if *dim < 2 {
                    return Err(cfg_err("data.dim", "must be ≥ 2"));
                }
                positive("n_major", *n_major)?;
                positive("n_valid_per_class", *n_valid_per_class)?;
                positive("n_test_per_class", *n_test_per_class)?;
                if !(*mu > 0.0 && *mu < 1.0) {
                    return Err(cfg_err("data.mu", "must lie in (0, 1)"));
                }
                if !(*rho > 1.0) {
                    return Err(cfg_err("data.rho", "must exceed 1"));
                }
                Ok(())
            }
            DataSpec::MixingDomains {
                dim,
                sources,
                n_source,
                n_target,
                n_test,
                scale_low,
                scale_high,
            } => {
                if *dim < 2 {
                    return Err(cfg_err("data.dim", "must be ≥ 2"));
                }
                positive("sources", *sources)?;
                positive("n_source", *n_source)?;
                positive("n_test", *n_test)?;
                if n_target < dim {
                    return Err(cfg_err("data.n_target", "must be ≥ dim"));
                }
                if !(*scale_low > 0.0 && scale_high >= scale_low) {
                    return Err(cfg_err("data.scale_low", "need 0 < scale_low ≤ scale_high"));
                }
                Ok(())
            }
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| {
            cfg_err(
                format!("line {}, column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            cfg_err(path.display().to_string(), format!("cannot read: {e}"))
        })?;
        ExperimentConfig::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(cfg_err("trials", "must be ≥ 1"));
        }
        if self.threads == Some(0) {
            return Err(cfg_err("threads", "must be ≥ 1"));
        }
        if self.methods.is_empty() {
            return Err(cfg_err("methods", "at least one method is required"));
        }
        self.data.validate()?;
        let lin = &self.linear;
        if lin.b_f == 0 || lin.b_g == 0 {
            return Err(cfg_err("linear.b_f", "basis sizes must be ≥ 1"));
        }
        if !(lin.mu > 0.0) {
            return Err(cfg_err("linear.mu", "must be > 0"));
        }
        if lin.cv_folds < 2 {
            return Err(cfg_err("linear.cv_folds", "must be ≥ 2"));
        }
        for (name, s) in [("linear.sigma_f", lin.sigma_f), ("linear.sigma_g", lin.sigma_g)] {
            if let Some(s) = s {
                if !(s > 0.0) {
                    return Err(cfg_err(name, "must be > 0"));
                }
            }
        }
        if self.net.epochs == 0 || self.net.minibatch == 0 || !(self.net.lr > 0.0) {
            return Err(cfg_err("net", "epochs, minibatch and lr must be positive"));
        }
        let family = self.data.family();
        let mut labels = std::collections::HashSet::new();
        for (i, m) in self.methods.iter().enumerate() {
            let at = |f: &str| format!("methods[{i}].{f}");
            if m.label().contains([',', '"', '\n', '\r']) {
                return Err(cfg_err(at("label"), "labels cannot contain commas, quotes or newlines"));
            }
            if !labels.insert(m.label()) {
                return Err(cfg_err(at("label"), format!("duplicate label {}", m.label())));
            }
            let supported = match m {
                MethodSpec::Erm { .. } => true,
                MethodSpec::Iwerm { .. }
                | MethodSpec::Eiwerm { .. }
                | MethodSpec::Riwerm { .. }
                | MethodSpec::OnestepLinear { .. } => family == Family::Linear,
                MethodSpec::OnestepGradient { .. } => {
                    matches!(self.data, DataSpec::RotatedShift { .. })
                }
                MethodSpec::Diw { .. } => matches!(
                    self.data,
                    DataSpec::LabelNoise { .. } | DataSpec::PriorShift { .. }
                ),
                MethodSpec::Cmt { .. } => family == Family::Mixing,
            };
            if !supported {
                return Err(cfg_err(
                    at("method"),
                    format!("{} does not apply to this data kind", m.kind()),
                ));
            }
            if let Some(loss) = m.loss() {
                match family {
                    Family::Linear if !matches!(loss, Loss::Squared | Loss::Tukey { .. }) => {
                        return Err(cfg_err(at("loss"), "linear models take squared or tukey"));
                    }
                    Family::Mixing if loss != Loss::Squared => {
                        return Err(cfg_err(at("loss"), "mixing-domain regression is squared"));
                    }
                    Family::Net if loss == Loss::ZeroOne => {
                        return Err(cfg_err(at("loss"), "zero_one is not differentiable"));
                    }
                    _ => {}
                }
            }
            match m {
                MethodSpec::Eiwerm { gamma, .. } if !(0.0..=1.0).contains(gamma) => {
                    return Err(cfg_err(at("gamma"), "must lie in [0, 1]"));
                }
                MethodSpec::Riwerm { eta, .. } if !(0.0..=1.0).contains(eta) => {
                    return Err(cfg_err(at("eta"), "must lie in [0, 1]"));
                }
                MethodSpec::OnestepLinear { lambda, rounds, m, .. } => {
                    if !(*lambda > 0.0) || *rounds == 0 || !(*m > 0.0) {
                        return Err(cfg_err(at("lambda"), "need lambda > 0, rounds ≥ 1, m > 0"));
                    }
                }
                MethodSpec::OnestepGradient { lr_g, rounds, m, .. } => {
                    if !(*lr_g > 0.0) || *rounds == 0 || !(*m > 0.0) {
                        return Err(cfg_err(at("lr_g"), "need lr_g > 0, rounds ≥ 1, m > 0"));
                    }
                }
                MethodSpec::Diw {
                    b,
                    eps,
                    transform,
                    pretrain_epochs,
                    bandwidth,
                    ..
                } => {
                    if !(*b > 0.0) || !(*eps >= 0.0) {
                        return Err(cfg_err(at("b"), "need b > 0 and eps ≥ 0"));
                    }
                    if *pretrain_epochs > self.net.epochs {
                        return Err(cfg_err(at("pretrain_epochs"), "exceeds net.epochs"));
                    }
                    if let BandwidthRule::Fixed(s) = bandwidth {
                        if !(*s > 0.0) {
                            return Err(cfg_err(at("bandwidth"), "must be > 0"));
                        }
                    }
                    if let Transform::HiddenOutput(l) = transform {
                        if *l > self.net.hidden.len() + 1 {
                            return Err(cfg_err(at("transform"), format!("no layer {l}")));
                        }
                    }
                }
                MethodSpec::Cmt { gcl, inflation, .. } => {
                    if gcl.hidden_units == 0 || gcl.minibatch == 0 || !(gcl.lr > 0.0) {
                        return Err(cfg_err(at("gcl"), "hidden_units, minibatch and lr must be positive"));
                    }
                    if !(0.0..1.0).contains(&inflation.quantile) {
                        return Err(cfg_err(at("inflation.quantile"), "must lie in [0, 1)"));
                    }
                    if inflation.cap == 0 {
                        return Err(cfg_err(at("inflation.cap"), "must be ≥ 1"));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }
}
