//! Browser bindings for three interactive shiftlab demos. Every export
//! returns a JSON document that the static page in `www/` plots.

use serde_json::{json, Value};
use shiftlab::cmt::{extract_ics, inflate, synthesize, Mechanism};
use shiftlab::data::{gen_mixing_domains, gen_toy_regression, normal_pdf, sinc, Dataset};
use shiftlab::erm::{iwerm_fit, predict, Loss};
use shiftlab::kernels::{choose_centers, median_heuristic, GaussianBasis};
use shiftlab::numerics::{seeded_rng, Matrix};
use shiftlab::onestep::{onestep_linear, Model, OneStepConfig};
use shiftlab::ratio::{default_lambda_grid, evaluate_ratio, kmm_weights, select_lambda, ulsif_fit, KmmConfig};
use shiftlab::Result;
use wasm_bindgen::prelude::*;

const GRID: usize = 200;

fn grid(lo: f64, hi: f64) -> Vec<f64> {
    (0..GRID).map(|i| lo + (hi - lo) * i as f64 / (GRID - 1) as f64).collect()
}

fn span(values: &[f64], pad: f64) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo - pad, hi + pad)
}

fn mse(pred: &[f64], y: &[f64]) -> f64 {
    pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

/// Two Gaussian samples; the true ratio, a uLSIF fit on a grid and KMM
/// weights on the training points.
pub fn ratio_explorer_json(mu_tr: f64, sd_tr: f64, mu_te: f64, sd_te: f64, n: usize, seed: u64) -> Result<Value> {
    let mut rng = seeded_rng(seed);
    let xtr: Vec<f64> = (0..n).map(|_| rng.normal_with(mu_tr, sd_tr)).collect();
    let xte: Vec<f64> = (0..n).map(|_| rng.normal_with(mu_te, sd_te)).collect();
    let (mtr, mte) = (Matrix::column(&xtr), Matrix::column(&xte));
    let sigma = median_heuristic(&mte)?;
    let basis = GaussianBasis::new(choose_centers(&mte, n.min(50), &mut rng)?, sigma)?;
    let lambda = select_lambda(&mtr, &mte, &basis, &default_lambda_grid(), 5, &mut rng)?;
    let model = ulsif_fit(&mtr, &mte, &basis, lambda)?;
    let kmm = kmm_weights(&mtr, &mte, &KmmConfig::defaults(n, median_heuristic(&mtr)?))?;
    let (lo, hi) = span(&[mu_tr - 3.0 * sd_tr, mu_te - 3.0 * sd_te, mu_tr + 3.0 * sd_tr, mu_te + 3.0 * sd_te], 0.0);
    let xs = grid(lo, hi);
    let truth: Vec<f64> = xs.iter().map(|&x| normal_pdf(x, mu_te, sd_te) / normal_pdf(x, mu_tr, sd_tr)).collect();
    let ulsif = evaluate_ratio(&model, &Matrix::column(&xs))?;
    Ok(json!({
        "grid": xs, "truth": truth, "ulsif": ulsif, "lambda": lambda, "sigma": sigma,
        "train": xtr, "test": xte, "kmm": kmm,
    }))
}

/// The sinc covariate-shift problem fitted by unweighted kernel ridge and by
/// the one-step joint method.
pub fn toy_regression_json(n_tr: usize, n_te: usize, lambda: f64, seed: u64) -> Result<Value> {
    let mut rng = seeded_rng(seed);
    let pair = gen_toy_regression(n_tr, n_te, &mut rng);
    let b = n_te.min(50);
    let bf = GaussianBasis::new(choose_centers(&pair.test.x, b, &mut rng)?, 0.7)?;
    let bg = GaussianBasis::new(choose_centers(&pair.test.x, b, &mut rng)?, 0.2)?;
    let erm = iwerm_fit(&pair, &vec![1.0; n_tr], &Loss::Squared, &bf, 1e-3)?;
    let cfg = OneStepConfig {
        lambda,
        mu: 1e-3,
        rounds: 10,
        ..OneStepConfig::default()
    };
    let joint = onestep_linear(&pair.train, &pair.test, &bf, &bg, &cfg)?.model;
    let (Model::Linear(f), g) = (joint.f, joint.g) else {
        unreachable!("linear fit returns a linear model")
    };
    let xtr = pair.train.x.col(0);
    let xte = pair.test.x.col(0);
    let (lo, hi) = span(&[xtr.clone(), xte.clone()].concat(), 0.2);
    let xs = grid(lo, hi);
    let gm = Matrix::column(&xs);
    let yte = pair.test.y_real().expect("regression labels");
    Ok(json!({
        "grid": xs,
        "sinc": xs.iter().map(|&x| sinc(x)).collect::<Vec<_>>(),
        "erm": predict(&erm, &gm)?,
        "onestep": predict(&f, &gm)?,
        "weights": g.weights(&gm)?,
        "train": { "x": xtr, "y": pair.train.y_real() },
        "test": { "x": xte, "y": yte },
        "mse": { "erm": mse(&predict(&erm, &pair.test.x)?, yte), "onestep": mse(&predict(&f, &pair.test.x)?, yte) },
    }))
}

/// Target points under a linear mixing of independent Laplace components and
/// the synthetic points produced by recombining their components.
pub fn cmt_inflation_json(n_target: usize, mixing: f64, cap: usize, seed: u64) -> Result<Value> {
    let mut rng = seeded_rng(seed);
    let a = Matrix::from_rows(&[[1.0, mixing], [-mixing, 1.0]]);
    let target: Dataset = gen_mixing_domains(&a, &[vec![1.0, 0.5]], n_target, &mut rng)?.remove(0);
    let mech = Mechanism::from_mixing(&a)?;
    let ics = extract_ics(&mech, &target)?;
    let infl = inflate(&ics, &target.joint()?, cap.max(n_target), &mut rng)?;
    let synth = synthesize(&mech, &infl)?;
    Ok(json!({
        "target": { "x": target.x.col(0), "y": target.y_real() },
        "synthetic": { "x": synth.x.col(0), "y": synth.y_real() },
        "combinations": infl.combos.len(),
    }))
}

fn to_js(v: Result<Value>) -> std::result::Result<String, JsError> {
    v.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen]
pub fn ratio_explorer(mu_tr: f64, sd_tr: f64, mu_te: f64, sd_te: f64, n: usize, seed: u64) -> std::result::Result<String, JsError> {
    to_js(ratio_explorer_json(mu_tr, sd_tr, mu_te, sd_te, n, seed))
}

#[wasm_bindgen]
pub fn toy_regression(n_tr: usize, n_te: usize, lambda: f64, seed: u64) -> std::result::Result<String, JsError> {
    to_js(toy_regression_json(n_tr, n_te, lambda, seed))
}

#[wasm_bindgen]
pub fn cmt_inflation(n_target: usize, mixing: f64, cap: usize, seed: u64) -> std::result::Result<String, JsError> {
    to_js(cmt_inflation_json(n_target, mixing, cap, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_explorer_shapes() {
        let v = ratio_explorer_json(0.0, 1.0, 0.5, 0.7, 60, 1).unwrap();
        assert_eq!(v["grid"].as_array().unwrap().len(), GRID);
        assert_eq!(v["kmm"].as_array().unwrap().len(), 60);
        assert!(v["ulsif"].as_array().unwrap().iter().all(|u| u.as_f64().unwrap() >= 0.0));
    }

    #[test]
    fn one_step_beats_erm_on_the_toy_problem() {
        let v = toy_regression_json(150, 150, 10.0, 3).unwrap();
        assert!(v["mse"]["onestep"].as_f64().unwrap() < v["mse"]["erm"].as_f64().unwrap());
    }

    #[test]
    fn inflation_enumerates_all_pairs() {
        let v = cmt_inflation_json(8, 0.5, 1000, 2).unwrap();
        assert_eq!(v["combinations"], 64);
        assert_eq!(v["synthetic"]["x"].as_array().unwrap().len(), 64);
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(ratio_explorer_json(0.0, 1.0, 0.5, 0.7, 0, 1).is_err());
    }
}
