//! Gaussian kernels `exp(−‖x − c‖² / 2σ²)`, basis centres and bandwidths.

use crate::error::{Error, Result};
use crate::numerics::{sq_dist, Matrix, RandomStream};

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBasis {
    pub centers: Matrix,
    pub bandwidth: f64,
}

impl GaussianBasis {
    pub fn new(centers: Matrix, bandwidth: f64) -> Result<Self> {
        if centers.rows() == 0 {
            return Err(Error::InvalidArgument("basis needs at least one center".into()));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bandwidth {bandwidth} must be positive"
            )));
        }
        if !centers.all_finite() {
            return Err(Error::InvalidArgument("non-finite center".into()));
        }
        Ok(GaussianBasis { centers, bandwidth })
    }

    /// Number of basis functions.
    pub fn size(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    /// Basis values at a single point.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let s = 2.0 * self.bandwidth * self.bandwidth;
        self.centers
            .iter_rows()
            .map(|c| (-sq_dist(x, c) / s).exp())
            .collect()
    }
}

/// `n × b` matrix of basis values.
pub fn design_matrix(basis: &GaussianBasis, x: &Matrix) -> Result<Matrix> {
    kernel_matrix(basis.bandwidth, x, &basis.centers)
}

/// Gaussian Gram matrix between the rows of `a` and the rows of `b`.
pub fn kernel_matrix(bandwidth: f64, a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch(format!(
            "kernel between {} and {} features",
            a.cols(),
            b.cols()
        )));
    }
    let s = 2.0 * bandwidth * bandwidth;
    let mut k = Matrix::zeros(a.rows(), b.rows());
    for (i, ra) in a.iter_rows().enumerate() {
        let out = k.row_mut(i);
        for (o, rb) in out.iter_mut().zip(b.iter_rows()) {
            *o = (-sq_dist(ra, rb) / s).exp();
        }
    }
    Ok(k)
}

/// `b` distinct rows of `test_x`, drawn without replacement.
pub fn choose_centers(test_x: &Matrix, b: usize, rng: &mut RandomStream) -> Result<Matrix> {
    if b > test_x.rows() {
        return Err(Error::TooFewPoints {
            requested: b,
            available: test_x.rows(),
        });
    }
    let idx = rng.choose(test_x.rows(), b);
    Ok(test_x.select_rows(&idx))
}

/// Median of the pairwise Euclidean distances (lower median on ties).
pub fn median_heuristic(x: &Matrix) -> Result<f64> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::DegenerateData(
            "median heuristic needs at least two points".into(),
        ));
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(sq_dist(x.row(i), x.row(j)));
        }
    }
    let mid = (d.len() - 1) / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, f64::total_cmp);
    let m = m.sqrt();
    if m > 0.0 {
        Ok(m)
    } else {
        Err(Error::DegenerateData("median pairwise distance is 0".into()))
    }
}
