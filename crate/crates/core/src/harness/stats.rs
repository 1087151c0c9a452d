//! Summary statistics and the paired t-test.

use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

/// Arithmetic mean; NaN for an empty slice.
pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard deviation with the `n − 1` denominator; 0 for one value, NaN for none.
pub fn sample_std(v: &[f64]) -> f64 {
    match v.len() {
        0 => f64::NAN,
        1 => 0.0,
        n => {
            let m = mean(v);
            (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTTest {
    /// Mean of `a − b`.
    pub mean_diff: f64,
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

impl PairedTTest {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Student survival `P(|T| ≥ |t|)` with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t))
}

/// Two-sided paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTTest> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientSamples(
            "paired t-test needs at least two pairs".into(),
        ));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("paired samples must be finite".into()));
    }
    let n = d.len() as f64;
    let m = mean(&d);
    let sd = sample_std(&d);
    let df = n - 1.0;
    let t = if sd > 0.0 {
        m / (sd / n.sqrt())
    } else if m == 0.0 {
        0.0
    } else {
        m.signum() * f64::INFINITY
    };
    Ok(PairedTTest {
        mean_diff: m,
        t,
        df,
        p_value: student_t_two_sided(t, df),
    })
}
