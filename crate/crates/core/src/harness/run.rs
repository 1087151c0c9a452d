//! Trial execution: data generation, method dispatch and metric collection.

use std::time::Instant;

use crate::cmt::{
    cmt_fit, default_krr_grid, tar_only_fit, target_basis, test_mse, CmtConfig, Mechanism,
    MechanismSource,
};
use crate::data::{
    adversarial_covariate_shift_split, class_prior_shift_sample, gen_gaussian_classes,
    gen_mixing_domains, gen_nonlinear_regression, gen_rotated_shift, gen_toy_regression,
    inject_label_noise, parse_csv, parse_libsvm, random_covariate_shift_split, Dataset,
    ShiftedPair,
};
use crate::diw::{diw_train, per_class_mean_weights, spearman, DiwConfig};
use crate::erm::{flatten_weights, iwerm_fit, predict, Loss, LinearPredictor};
use crate::error::{Error, Result};
use crate::kernels::{choose_centers, median_heuristic, GaussianBasis};
use crate::nnet::Mlp;
use crate::numerics::{seeded_rng, Matrix, RandomStream};
use crate::onestep::{accuracy, onestep_gradient, onestep_linear, train_net, OneStepConfig};
use crate::ratio::{
    default_lambda_grid, evaluate_ratio, kmm_weights, rulsif_fit, select_lambda,
    select_lambda_relative, ulsif_fit, KmmConfig,
};

use super::config::{
    DataSpec, ExperimentConfig, LinearSettings, MechanismChoice, MethodSpec, NetSettings,
    PoolSpec, SplitSpec, WeightSource,
};
use super::report::{Report, Row};

/// Data for one trial, shared by every method.
#[derive(Debug, Clone)]
pub enum TrialData {
    Linear {
        pair: ShiftedPair,
        basis_f: GaussianBasis,
        basis_g: GaussianBasis,
    },
    Net {
        train: Dataset,
        valid: Dataset,
        test: Dataset,
        /// Which training labels were corrupted.
        corrupted: Option<Vec<bool>>,
        /// Oracle per-class importance weights.
        class_weights: Option<Vec<f64>>,
        /// Shared initial network.
        f0: Mlp,
        loss: Loss,
    },
    Mixing {
        sources: Vec<Dataset>,
        target: Dataset,
        test: Dataset,
        mixing: Matrix,
    },
}

fn load_pool(pool: &PoolSpec, rng: &mut RandomStream) -> Result<Dataset> {
    match pool {
        PoolSpec::Synthetic { n, dim, noise } => gen_nonlinear_regression(*n, *dim, *noise, rng),
        PoolSpec::Libsvm { path } => parse_libsvm(&std::fs::read_to_string(path)?),
        PoolSpec::Csv { path, label_col } => {
            parse_csv(&std::fs::read_to_string(path)?, *label_col)
        }
    }
}

fn bandwidth_or_median(sigma: Option<f64>, x: &Matrix) -> f64 {
    sigma.unwrap_or_else(|| median_heuristic(x).unwrap_or(1.0))
}

fn linear_data(pair: ShiftedPair, lin: &LinearSettings, rng: &mut RandomStream) -> Result<TrialData> {
    if pair.train.y_real().is_none() {
        return Err(Error::InvalidArgument(
            "linear methods need real-valued labels".into(),
        ));
    }
    let cf = choose_centers(&pair.test.x, lin.b_f, rng)?;
    let cg = choose_centers(&pair.test.x, lin.b_g, rng)?;
    let basis_f = GaussianBasis::new(cf, bandwidth_or_median(lin.sigma_f, &pair.test.x))?;
    let basis_g = GaussianBasis::new(cg, bandwidth_or_median(lin.sigma_g, &pair.test.x))?;
    Ok(TrialData::Linear {
        pair,
        basis_f,
        basis_g,
    })
}

fn net_sizes(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut s = vec![input];
    s.extend_from_slice(hidden);
    s.push(output);
    s
}

/// Generates the data for one trial.
pub fn generate_data(spec: &DataSpec, cfg: &ExperimentConfig, rng: &mut RandomStream) -> Result<TrialData> {
    let net = &cfg.net;
    match spec {
        DataSpec::ToyRegression { n_tr, n_te } => {
            let pair = gen_toy_regression(*n_tr, *n_te, rng);
            linear_data(pair, &cfg.linear, rng)
        }
        DataSpec::Covshift { pool, split } => {
            let pool = load_pool(pool, rng)?;
            let pair = match split {
                SplitSpec::Random => random_covariate_shift_split(&pool, rng)?,
                SplitSpec::Adversarial { candidates } => {
                    adversarial_covariate_shift_split(&pool, *candidates, rng)?
                }
            };
            linear_data(pair, &cfg.linear, rng)
        }
        DataSpec::RotatedShift { n_tr, n_te, a, b } => {
            let pair = gen_rotated_shift(*n_tr, *n_te, *a, *b, rng)?;
            let f0 = Mlp::new(&net_sizes(2, &net.hidden, 1), rng)?;
            Ok(TrialData::Net {
                valid: pair.test.clone(),
                train: pair.train,
                test: pair.test,
                corrupted: None,
                class_weights: None,
                f0,
                loss: Loss::Logistic,
            })
        }
        DataSpec::LabelNoise {
            k,
            dim,
            radius,
            n_per_class,
            noise,
            n_valid_per_class,
            n_test_per_class,
        } => {
            let clean = gen_gaussian_classes(*n_per_class, *k, *dim, *radius, rng);
            let (train, mask) = inject_label_noise(&clean, *noise, *k, rng)?;
            let valid = gen_gaussian_classes(*n_valid_per_class, *k, *dim, *radius, rng);
            let test = gen_gaussian_classes(*n_test_per_class, *k, *dim, *radius, rng);
            let f0 = Mlp::new(&net_sizes(*dim, &net.hidden, *k), rng)?;
            Ok(TrialData::Net {
                train,
                valid,
                test,
                corrupted: Some(mask),
                class_weights: None,
                f0,
                loss: Loss::SoftmaxCe,
            })
        }
        DataSpec::PriorShift {
            k,
            dim,
            radius,
            n_major,
            mu,
            rho,
            n_valid_per_class,
            n_test_per_class,
        } => {
            let pool = gen_gaussian_classes(*n_major, *k, *dim, *radius, rng);
            let (train, w) = class_prior_shift_sample(&pool, *mu, *rho, *n_major, rng)?;
            let valid = gen_gaussian_classes(*n_valid_per_class, *k, *dim, *radius, rng);
            let test = gen_gaussian_classes(*n_test_per_class, *k, *dim, *radius, rng);
            let f0 = Mlp::new(&net_sizes(*dim, &net.hidden, *k), rng)?;
            Ok(TrialData::Net {
                train,
                valid,
                test,
                corrupted: None,
                class_weights: Some(w),
                f0,
                loss: Loss::SoftmaxCe,
            })
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
            let d = *dim;
            let mixing = Matrix::from_fn(d, d, |i, j| {
                f64::from(u8::from(i == j)) + 0.5 * rng.normal()
            });
            let scales: Vec<Vec<f64>> = (0..=*sources)
                .map(|_| (0..d).map(|_| rng.uniform_range(*scale_low, *scale_high)).collect())
                .collect();
            let src = gen_mixing_domains(&mixing, &scales[..*sources], *n_source, rng)?;
            let tgt = gen_mixing_domains(&mixing, &scales[*sources..], n_target + n_test, rng)?
                .remove(0);
            let target = tgt.subset(&(0..*n_target).collect::<Vec<_>>());
            let test = tgt.subset(&(*n_target..n_target + n_test).collect::<Vec<_>>());
            Ok(TrialData::Mixing {
                sources: src,
                target,
                test,
                mixing,
            })
        }
    }
}

fn regression_mse(p: &LinearPredictor, d: &Dataset) -> Result<f64> {
    let f = predict(p, &d.x)?;
    let y = d.y_real().ok_or_else(|| Error::InvalidArgument("test set has no labels".into()))?;
    Ok(f.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len().max(1) as f64)
}

fn ulsif_weights(
    pair: &ShiftedPair,
    basis: &GaussianBasis,
    folds: usize,
    rng: &mut RandomStream,
) -> Result<Vec<f64>> {
    let (xtr, xte) = (&pair.train.x, &pair.test.x);
    let l = select_lambda(xtr, xte, basis, &default_lambda_grid(), folds, rng)?;
    evaluate_ratio(&ulsif_fit(xtr, xte, basis, l)?, xtr)
}

fn run_linear(
    method: &MethodSpec,
    pair: &ShiftedPair,
    basis_f: &GaussianBasis,
    basis_g: &GaussianBasis,
    lin: &LinearSettings,
    rng: &mut RandomStream,
) -> Result<Vec<(String, f64)>> {
    let n = pair.train.n();
    let predictor = match method {
        MethodSpec::Erm { loss, .. } => {
            let loss = loss.unwrap_or(Loss::Squared);
            iwerm_fit(pair, &vec![1.0; n], &loss, basis_f, lin.mu)?
        }
        MethodSpec::Iwerm { loss, weights, .. } => {
            let w = match weights {
                WeightSource::Ulsif => ulsif_weights(pair, basis_g, lin.cv_folds, rng)?,
                WeightSource::Kmm => {
                    let bw = basis_g.bandwidth;
                    kmm_weights(&pair.train.x, &pair.test.x, &KmmConfig::defaults(n, bw))?
                }
                WeightSource::Oracle => pair.true_weights.clone().ok_or(Error::RequiresOracle)?,
            };
            iwerm_fit(pair, &w, loss, basis_f, lin.mu)?
        }
        MethodSpec::Eiwerm { loss, gamma, .. } => {
            let w = flatten_weights(&ulsif_weights(pair, basis_g, lin.cv_folds, rng)?, *gamma);
            iwerm_fit(pair, &w, loss, basis_f, lin.mu)?
        }
        MethodSpec::Riwerm { loss, eta, .. } => {
            let (xtr, xte) = (&pair.train.x, &pair.test.x);
            let grid = default_lambda_grid();
            let l = select_lambda_relative(xtr, xte, basis_g, &grid, lin.cv_folds, *eta, rng)?;
            let w = evaluate_ratio(&rulsif_fit(xtr, xte, basis_g, l, *eta)?, xtr)?;
            iwerm_fit(pair, &w, loss, basis_f, lin.mu)?
        }
        MethodSpec::OnestepLinear {
            loss,
            lambda,
            rounds,
            m,
            ..
        } => {
            let cfg = OneStepConfig {
                m: *m,
                lambda: *lambda,
                mu: lin.mu,
                rounds: *rounds,
                loss_ub: *loss,
                ..Default::default()
            };
            match onestep_linear(&pair.train, &pair.test, basis_f, basis_g, &cfg)?.model.f {
                crate::onestep::Model::Linear(p) => p,
                crate::onestep::Model::Net(_) => unreachable!("linear fit returns a linear model"),
            }
        }
        other => return Err(unsupported(other)),
    };
    Ok(vec![("test_mse".into(), regression_mse(&predictor, &pair.test)?)])
}

fn unsupported(m: &MethodSpec) -> Error {
    Error::InvalidArgument(format!("{} does not apply to this data kind", m.kind()))
}

#[allow(clippy::too_many_arguments)]
fn run_net(
    method: &MethodSpec,
    train: &Dataset,
    valid: &Dataset,
    test: &Dataset,
    corrupted: Option<&[bool]>,
    class_weights: Option<&[f64]>,
    f0: &Mlp,
    loss: &Loss,
    net: &NetSettings,
    rng: &mut RandomStream,
) -> Result<Vec<(String, f64)>> {
    match method {
        MethodSpec::Erm { loss: own, .. } => {
            let mut f = f0.clone();
            let loss = own.as_ref().unwrap_or(loss);
            train_net(&mut f, train, loss, net.epochs, net.minibatch, net.lr, rng)?;
            Ok(vec![("test_accuracy".into(), accuracy(&f, test)?)])
        }
        MethodSpec::OnestepGradient {
            rounds,
            epochs_g,
            epochs_f,
            pretrain_g_epochs,
            lr_g,
            m,
            ..
        } => {
            let cfg = OneStepConfig {
                m: *m,
                rounds: *rounds,
                loss_ub: *loss,
                epochs_g: *epochs_g,
                epochs_f: *epochs_f,
                minibatch: net.minibatch,
                lr_g: *lr_g,
                lr_f: net.lr,
                pretrain_g_epochs: *pretrain_g_epochs,
                ..Default::default()
            };
            let g0 = Mlp::new(&net_sizes(f0.input_dim(), &net.hidden, 1), rng)?;
            let jm = onestep_gradient(train, &test.x, f0.clone(), g0, &cfg, rng)?;
            let f = match jm.f {
                crate::onestep::Model::Net(f) => f,
                crate::onestep::Model::Linear(_) => unreachable!("gradient fit returns a network"),
            };
            Ok(vec![("test_accuracy".into(), accuracy(&f, test)?)])
        }
        MethodSpec::Diw {
            transform,
            b,
            eps,
            bandwidth,
            pretrain_epochs,
            ..
        } => {
            let cfg = DiwConfig {
                transform: *transform,
                b: *b,
                eps: *eps,
                bandwidth: *bandwidth,
                pretrain_epochs: *pretrain_epochs,
                epochs: net.epochs,
                minibatch: net.minibatch,
                lr: net.lr,
            };
            let fit = diw_train(train, valid, f0.clone(), &cfg, loss, corrupted, rng)?;
            let mut out = vec![("test_accuracy".into(), accuracy(&fit.model, test)?)];
            if let Some(last) = fit.trace.last() {
                if corrupted.is_some() {
                    out.push(("weight_intact".into(), last.mean_weight_intact.unwrap_or(f64::NAN)));
                    out.push((
                        "weight_corrupted".into(),
                        last.mean_weight_corrupted.unwrap_or(f64::NAN),
                    ));
                }
            }
            if let (Some(w), Some(y)) = (class_weights, train.y_class()) {
                let learned = per_class_mean_weights(&fit.final_weights, y, w.len());
                out.push(("spearman".into(), spearman(&learned, w)?));
            }
            Ok(out)
        }
        other => Err(unsupported(other)),
    }
}

fn run_mixing(
    method: &MethodSpec,
    sources: &[Dataset],
    target: &Dataset,
    test: &Dataset,
    mixing: &Matrix,
    rng: &mut RandomStream,
) -> Result<Vec<(String, f64)>> {
    let basis = target_basis(target)?;
    let grid = default_krr_grid();
    let predictor = match method {
        MethodSpec::Erm { .. } => tar_only_fit(target, &basis, &grid)?.predictor,
        MethodSpec::Cmt {
            mechanism,
            gcl,
            inflation,
            ..
        } => {
            let source = match mechanism {
                MechanismChoice::Oracle => MechanismSource::Given(Mechanism::from_mixing(mixing)?),
                MechanismChoice::Gcl => MechanismSource::Gcl(*gcl),
            };
            let cfg: CmtConfig = *inflation;
            cmt_fit(sources, target, &source, &basis, &grid, &cfg, rng)?
                .krr
                .predictor
        }
        other => return Err(unsupported(other)),
    };
    Ok(vec![("test_mse".into(), test_mse(&predictor, test)?)])
}

/// Runs one method on prepared trial data.
pub fn run_method(
    method: &MethodSpec,
    data: &TrialData,
    cfg: &ExperimentConfig,
    rng: &mut RandomStream,
) -> Result<Vec<(String, f64)>> {
    match data {
        TrialData::Linear {
            pair,
            basis_f,
            basis_g,
        } => run_linear(method, pair, basis_f, basis_g, &cfg.linear, rng),
        TrialData::Net {
            train,
            valid,
            test,
            corrupted,
            class_weights,
            f0,
            loss,
        } => run_net(
            method,
            train,
            valid,
            test,
            corrupted.as_deref(),
            class_weights.as_deref(),
            f0,
            loss,
            &cfg.net,
            rng,
        ),
        TrialData::Mixing {
            sources,
            target,
            test,
            mixing,
        } => run_mixing(method, sources, target, test, mixing, rng),
    }
}

/// Metric names a method reports, used to emit NaN rows on failure.
fn metric_names(method: &MethodSpec, data: &DataSpec) -> Vec<&'static str> {
    let main = match data.family() {
        super::config::Family::Net => "test_accuracy",
        _ => "test_mse",
    };
    let mut v = vec![main];
    if let MethodSpec::Diw { .. } = method {
        match data {
            DataSpec::LabelNoise { .. } => v.extend(["weight_intact", "weight_corrupted"]),
            DataSpec::PriorShift { .. } => v.push("spearman"),
            _ => {}
        }
    }
    v
}

/// A method failure inside a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub trial: usize,
    pub method: String,
    pub error: Error,
}

/// Everything one trial produced.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub rows: Vec<Row>,
    pub failures: Vec<TrialFailure>,
}

/// Runs a single trial: data from stream 0, method `i` from stream `1 + i`.
pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> TrialOutcome {
    let trial_rng = seeded_rng(cfg.seed).fork(trial as u64);
    let seed = trial_rng.seed();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let data = generate_data(&cfg.data, cfg, &mut trial_rng.fork(0));
    for (i, method) in cfg.methods.iter().enumerate() {
        let label = method.label();
        let start = Instant::now();
        let result = match &data {
            Ok(d) => run_method(method, d, cfg, &mut trial_rng.fork(1 + i as u64)),
            Err(e) => Err(e.clone()),
        };
        let ms = if cfg.timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        match result {
            Ok(metrics) => rows.extend(metrics.into_iter().map(|(m, value)| Row {
                trial: trial as i64,
                seed,
                metric: format!("{label}/{m}"),
                value,
                ms,
            })),
            Err(error) => {
                rows.extend(metric_names(method, &cfg.data).into_iter().map(|m| Row {
                    trial: trial as i64,
                    seed,
                    metric: format!("{label}/{m}"),
                    value: f64::NAN,
                    ms,
                }));
                failures.push(TrialFailure {
                    trial,
                    method: label,
                    error,
                });
            }
        }
    }
    TrialOutcome { rows, failures }
}

/// Runs every trial and returns the report with aggregates appended.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Report, Vec<TrialFailure>)> {
    cfg.validate()?;
    let outcomes = run_trials(cfg)?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        rows.extend(o.rows);
        failures.extend(o.failures);
    }
    let mut report = Report { rows };
    report.append_aggregates(cfg.seed);
    Ok((report, failures))
}

#[cfg(feature = "cli")]
fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialOutcome>> {
    use rayon::prelude::*;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    Ok(pool.install(|| {
        (0..cfg.trials)
            .into_par_iter()
            .map(|t| run_trial(cfg, t))
            .collect()
    }))
}

#[cfg(not(feature = "cli"))]
fn run_trials(cfg: &ExperimentConfig) -> Result<Vec<TrialOutcome>> {
    Ok((0..cfg.trials).map(|t| run_trial(cfg, t)).collect())
}
