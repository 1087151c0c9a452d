//! Helpers shared by integration tests.
#![allow(dead_code)]

use shiftlab::numerics::linalg::Lu;
use shiftlab::numerics::qp::{QpProblem, SumConstraint};
use shiftlab::numerics::{Matrix, RandomStream};

/// Minimum over every active-set pattern: each variable at lower, at upper or
/// free, and the sum constraint inactive, at its lower edge or at its upper edge.
pub fn enumerate(p: &QpProblem) -> f64 {
    let n = p.c.len();
    let band = p.sum.map(|s| (s.target - s.slack, s.target + s.slack));
    let sum_states: Vec<Option<f64>> = match band {
        None => vec![None],
        Some((lo, hi)) => vec![None, Some(lo), Some(hi)],
    };
    let mut best = f64::INFINITY;
    for code in 0..3usize.pow(n as u32) {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = (c % 3) as u8;
            c /= 3;
        }
        for &sum_eq in &sum_states {
            let mut x = vec![0.0; n];
            let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
            for i in 0..n {
                match state[i] {
                    0 => x[i] = p.lower,
                    1 => x[i] = p.upper,
                    _ => {}
                }
            }
            let m = free.len() + usize::from(sum_eq.is_some());
            if m > 0 {
                // KKT system [Q_FF 1; 1ᵀ 0] [x_F; ν] = [c_F − Q_FB x_B; s − Σx_B]
                let mut a = Matrix::zeros(m, m);
                let mut rhs = vec![0.0; m];
                for (r, &i) in free.iter().enumerate() {
                    for (cc, &j) in free.iter().enumerate() {
                        a[(r, cc)] = p.q[(i, j)];
                    }
                    rhs[r] = p.c[i]
                        - (0..n)
                            .filter(|&j| state[j] != 2)
                            .map(|j| p.q[(i, j)] * x[j])
                            .sum::<f64>();
                }
                if let Some(s) = sum_eq {
                    let k = free.len();
                    for r in 0..k {
                        a[(r, k)] = 1.0;
                        a[(k, r)] = 1.0;
                    }
                    rhs[k] = s - (0..n).filter(|&j| state[j] != 2).map(|j| x[j]).sum::<f64>();
                }
                let Ok(sol) = Lu::new(&a).and_then(|lu| lu.solve(&rhs)) else {
                    continue;
                };
                for (r, &i) in free.iter().enumerate() {
                    x[i] = sol[r];
                }
            }
            if p.violation(&x) > 1e-9 {
                continue;
            }
            best = best.min(p.objective(&x));
        }
    }
    best
}

pub fn random_instance(rng: &mut RandomStream, n: usize, with_sum: bool) -> QpProblem {
    let m = Matrix::from_fn(n, n, |_, _| rng.normal());
    let mut q = m.transpose().matmul(&m).unwrap();
    q.add_diag(0.1);
    let c: Vec<f64> = (0..n).map(|_| 2.0 * rng.normal()).collect();
    let sum = with_sum.then(|| SumConstraint {
        target: rng.uniform_range(0.0, n as f64),
        slack: rng.uniform_range(0.0, 0.5),
    });
    QpProblem::new(q, c, 0.0, 1.0, sum).unwrap()
}
