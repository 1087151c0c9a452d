use crate::error::{Error, Result};

use super::matrix::{norm_inf, Matrix};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Plain factorisation, no jitter. Fails with `NotSpd` on a non-positive pivot.
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "cholesky of {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let n = a.rows();
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            {
                let lj = l.row(j);
                d -= lj[..j].iter().map(|x| x * x).sum::<f64>();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotSpd);
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let s: f64 = {
                    let (li, lj) = (l.row(i), l.row(j));
                    li[..j].iter().zip(&lj[..j]).map(|(x, y)| x * y).sum()
                };
                l[(i, j)] = (a[(i, j)] - s) / djj;
            }
        }
        Ok(Cholesky { l })
    }

    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn factor(&self) -> &Matrix {
        &self.l
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "cholesky solve: {n} vs {}",
                b.len()
            )));
        }
        let mut y = b.to_vec();
        for i in 0..n {
            let li = self.l.row(i);
            let s: f64 = li[..i].iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / li[i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[(k, i)] * y[k];
            }
            y[i] = s / self.l[(i, i)];
        }
        Ok(y)
    }
}

const JITTER_DOUBLINGS: usize = 4;

/// Cholesky with escalating diagonal jitter: first unperturbed, then
/// `1e-10·trace/n` doubled up to four times.
pub fn cholesky_jittered(a: &Matrix) -> Result<Cholesky> {
    if let Ok(c) = Cholesky::new(a) {
        return Ok(c);
    }
    let n = a.rows().max(1);
    let base = (1e-10 * a.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut jitter = base;
    for _ in 0..=JITTER_DOUBLINGS {
        let mut aj = a.clone();
        aj.add_diag(jitter);
        if let Ok(c) = Cholesky::new(&aj) {
            return Ok(c);
        }
        jitter *= 2.0;
    }
    Err(Error::NotSpd)
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn spd_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if !a.is_square() || a.rows() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "spd_solve: {}x{} with rhs {}",
            a.rows(),
            a.cols(),
            b.len()
        )));
    }
    let chol = cholesky_jittered(a)?;
    let mut x = chol.solve(b)?;
    // one step of iterative refinement against the unjittered matrix
    let r: Vec<f64> = a
        .matvec(&x)?
        .iter()
        .zip(b)
        .map(|(ax, bi)| bi - ax)
        .collect();
    if norm_inf(&r) > 0.0 {
        let dx = chol.solve(&r)?;
        let refined: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
        let r2 = residual_inf(a, &refined, b);
        if r2 < norm_inf(&r) {
            x = refined;
        }
    }
    Ok(x)
}

pub fn residual_inf(a: &Matrix, x: &[f64], b: &[f64]) -> f64 {
    a.iter_rows()
        .zip(b)
        .map(|(r, bi)| (super::matrix::dot(r, x) - bi).abs())
        .fold(0.0, f64::max)
}

/// LU decomposition with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    sign: f64,
}

impl Lu {
    pub fn new(a: &Matrix) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::DimensionMismatch("LU of non-square matrix".into()));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut sign = 1.0;
        for k in 0..n {
            let p = (k..n)
                .max_by(|&i, &j| lu[(i, k)].abs().total_cmp(&lu[(j, k)].abs()))
                .unwrap_or(k);
            if p != k {
                for j in 0..n {
                    let t = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = t;
                }
                perm.swap(k, p);
                sign = -sign;
            }
            let pivot = lu[(k, k)];
            if pivot == 0.0 {
                continue;
            }
            for i in (k + 1)..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                for j in (k + 1)..n {
                    let v = lu[(k, j)];
                    lu[(i, j)] -= f * v;
                }
            }
        }
        Ok(Lu { lu, perm, sign })
    }

    pub fn det(&self) -> f64 {
        let n = self.lu.rows();
        (0..n).map(|i| self.lu[(i, i)]).product::<f64>() * self.sign
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.lu.rows();
        if b.len() != n {
            return Err(Error::DimensionMismatch("LU solve".into()));
        }
        if (0..n).any(|i| self.lu[(i, i)] == 0.0) {
            return Err(Error::SingularMechanism);
        }
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                y[i] -= self.lu[(i, k)] * y[k];
            }
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                y[i] -= self.lu[(i, k)] * y[k];
            }
            y[i] /= self.lu[(i, i)];
        }
        Ok(y)
    }

    pub fn inverse(&self) -> Result<Matrix> {
        let n = self.lu.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e)?;
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        Ok(inv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve() {
        let x = spd_solve(&Matrix::identity(3), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn diagonal_solve() {
        let a = Matrix::from_rows(&[[2.0, 0.0], [0.0, 4.0]]);
        let x = spd_solve(&a, &[2.0, 8.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn indefinite_is_rejected() {
        let a = Matrix::from_rows(&[[1.0, 0.0], [0.0, -1.0]]);
        assert_eq!(spd_solve(&a, &[1.0, 1.0]), Err(Error::NotSpd));
    }

    #[test]
    fn singular_psd_is_rescued_by_jitter() {
        // duplicate kernel rows
        let a = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        let x = spd_solve(&a, &[1.0, 1.0]).unwrap();
        assert!(residual_inf(&a, &x, &[1.0, 1.0]) < 1e-6);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            spd_solve(&Matrix::identity(2), &[1.0]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn lu_det_and_inverse() {
        let a = Matrix::from_rows(&[[0.0, 2.0], [3.0, 1.0]]);
        let lu = Lu::new(&a).unwrap();
        assert!((lu.det() + 6.0).abs() < 1e-12);
        let inv = lu.inverse().unwrap();
        let prod = a.matmul(&inv).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - e).abs() < 1e-12);
            }
        }
    }
}
