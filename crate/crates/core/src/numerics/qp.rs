//! Box-constrained convex quadratic programs with an optional slab on the sum
//! of the variables:
//!
//! ```text
//! minimise   ½ wᵀQw − cᵀw
//! subject to lower ≤ w_i ≤ upper,   |Σ w_i − target| ≤ slack
//! ```
//!
//! Solved by accelerated projected gradient (FISTA with adaptive restart).
//! The projection onto box ∩ slab is exact: it is a clipped shift `clip(v − τ)`
//! whose scalar `τ` is found on the sorted breakpoints. Every few dozen
//! iterations the solver also tries an equality-constrained Newton step on the
//! current free set, which finishes off ill-conditioned instances where plain
//! first-order iterations stall.

use crate::error::{Error, Result};

use super::linalg::cholesky_jittered;
use super::matrix::{dot, Matrix};

/// Constraint `|Σ w_i − target| ≤ slack`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SumConstraint {
    pub target: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q: Matrix,
    pub c: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
    pub sum: Option<SumConstraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective: f64,
}

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 10_000;

const POLISH_EVERY: usize = 25;
const CHECK_EVERY: usize = 5;
const POLISH_STEPS: usize = 20;
/// Largest problem handed to the dense interior-point phase.
const IPM_MAX_DIM: usize = 1500;
const IPM_MAX_ITER: usize = 80;
/// The interior-point phase always aims at least this tight, so the returned
/// point does not depend on the caller's tolerance.
const IPM_TOL: f64 = 1e-10;

impl QpProblem {
    pub fn new(
        q: Matrix,
        c: Vec<f64>,
        lower: f64,
        upper: f64,
        sum: Option<SumConstraint>,
    ) -> Result<Self> {
        let p = QpProblem {
            q,
            c,
            lower,
            upper,
            sum,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if !self.q.is_square() || self.q.rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "Q is {}x{}, c has {n} entries",
                self.q.rows(),
                self.q.cols()
            )));
        }
        if !self.q.is_symmetric(1e-10) {
            return Err(Error::InvalidArgument("Q must be symmetric".into()));
        }
        if !(self.upper >= self.lower) {
            return Err(Error::Infeasible(format!(
                "upper bound {} below lower bound {}",
                self.upper, self.lower
            )));
        }
        if let Some(s) = self.sum {
            if !(s.slack >= 0.0) {
                return Err(Error::InvalidArgument("sum slack must be ≥ 0".into()));
            }
            let (lo, hi) = self.sum_band().unwrap();
            let (min_sum, max_sum) = (self.lower * n as f64, self.upper * n as f64);
            if hi < min_sum || lo > max_sum {
                return Err(Error::Infeasible(format!(
                    "sum band [{lo}, {hi}] misses box range [{min_sum}, {max_sum}]"
                )));
            }
        }
        Ok(())
    }

    fn sum_band(&self) -> Option<(f64, f64)> {
        self.sum.map(|s| (s.target - s.slack, s.target + s.slack))
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        let qw = self.q.matvec(w).expect("dimension checked");
        0.5 * dot(w, &qw) - dot(&self.c, w)
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = self.q.matvec(w).expect("dimension checked");
        for (gi, ci) in g.iter_mut().zip(&self.c) {
            *gi -= ci;
        }
        g
    }

    /// Euclidean projection onto the feasible set.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let (l, u) = (self.lower, self.upper);
        let clip = |t: f64| t.clamp(l, u);
        let Some((lo, hi)) = self.sum_band() else {
            return v.iter().map(|&x| clip(x)).collect();
        };
        let shifted_sum = |tau: f64| v.iter().map(|&x| clip(x - tau)).sum::<f64>();
        let s0 = shifted_sum(0.0);
        let target = if s0 > hi {
            hi
        } else if s0 < lo {
            lo
        } else {
            return v.iter().map(|&x| clip(x)).collect();
        };
        // s(τ) is non-increasing and piecewise linear with kinks at v_i − u and v_i − l.
        let mut kinks: Vec<f64> = v
            .iter()
            .flat_map(|&x| [x - u, x - l])
            .filter(|t| t.is_finite())
            .collect();
        kinks.sort_by(f64::total_cmp);
        kinks.dedup();
        // largest kink with s(kink) ≥ target, and the next one
        let (mut a, mut b) = (0usize, kinks.len());
        while a < b {
            let mid = (a + b) / 2;
            if shifted_sum(kinks[mid]) >= target {
                a = mid + 1;
            } else {
                b = mid;
            }
        }
        // kinks[..a] have s ≥ target; the crossing lies in [kinks[a-1], kinks[a]]
        let left = if a == 0 { f64::NEG_INFINITY } else { kinks[a - 1] };
        let right = if a == kinks.len() { f64::INFINITY } else { kinks[a] };
        let probe = if left.is_finite() && right.is_finite() {
            0.5 * (left + right)
        } else if left.is_finite() {
            left + 1.0
        } else {
            right - 1.0
        };
        let (mut fixed, mut free_sum, mut n_free) = (0.0, 0.0, 0usize);
        for &x in v {
            let t = x - probe;
            if t <= l {
                fixed += l;
            } else if t >= u {
                fixed += u;
            } else {
                free_sum += x;
                n_free += 1;
            }
        }
        let tau = if n_free == 0 {
            probe
        } else {
            (free_sum + fixed - target) / n_free as f64
        };
        v.iter().map(|&x| clip(x - tau)).collect()
    }

    /// `‖w − Π(w − ∇q(w))‖∞`, zero exactly at the optimum.
    pub fn kkt_residual(&self, w: &[f64]) -> f64 {
        let g = self.gradient(w);
        let step: Vec<f64> = w.iter().zip(&g).map(|(a, b)| a - b).collect();
        let p = self.project(&step);
        w.iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn lipschitz(&self) -> f64 {
        // Gershgorin bound on the largest eigenvalue
        let l = self
            .q
            .iter_rows()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max);
        if l > 0.0 {
            l
        } else {
            1.0
        }
    }

    /// Snaps coordinates within a relative `1e-7` of a bound onto it.
    fn crossover(&self, w: &[f64]) -> Vec<f64> {
        let (l, u) = (self.lower, self.upper);
        let scale = w.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let eps = 1e-7 * scale;
        let snapped: Vec<f64> = w
            .iter()
            .map(|&v| if v - l <= eps { l } else if u - v <= eps { u } else { v })
            .collect();
        self.project(&snapped)
    }

    /// Active-set refinement: repeated Newton steps on the free set with bound
    /// variables held fixed. Each step is cut back at the first bound it would
    /// cross and at the minimiser along its direction, so iterates stay
    /// feasible and the objective never increases.
    fn polish(&self, x: &[f64]) -> Option<Vec<f64>> {
        let n = x.len();
        let (l, u) = (self.lower, self.upper);
        let mut x = x.to_vec();
        let mut moved = false;
        for _ in 0..n.min(POLISH_STEPS) {
            let free: Vec<usize> = (0..n).filter(|&i| x[i] > l && x[i] < u).collect();
            if free.is_empty() {
                break;
            }
            let qff = Matrix::from_fn(free.len(), free.len(), |a, b| self.q[(free[a], free[b])]);
            let g = self.gradient(&x);
            let gf: Vec<f64> = free.iter().map(|&i| -g[i]).collect();
            let chol = cholesky_jittered(&qff).ok()?;
            let mut d = chol.solve(&gf).ok()?;
            let s: f64 = x.iter().sum();
            let band = self.sum_band();
            if let Some((lo, hi)) = band {
                let scale = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
                if (s - hi).abs() <= scale || (s - lo).abs() <= scale {
                    // keep the sum fixed: project the step onto Σd = 0 in the Q metric
                    let e = chol.solve(&vec![1.0; free.len()]).ok()?;
                    let denom: f64 = e.iter().sum();
                    if denom.abs() < 1e-300 {
                        return None;
                    }
                    let nu = d.iter().sum::<f64>() / denom;
                    for (v, ei) in d.iter_mut().zip(&e) {
                        *v -= nu * ei;
                    }
                }
            }
            let mut full = vec![0.0; n];
            for (k, &i) in free.iter().enumerate() {
                full[i] = d[k];
            }
            let slope = dot(&g, &full);
            if !(slope < 0.0) {
                break;
            }
            let mut t_max = f64::INFINITY;
            for (k, &i) in free.iter().enumerate() {
                if d[k] > 0.0 {
                    t_max = t_max.min((u - x[i]) / d[k]);
                } else if d[k] < 0.0 {
                    t_max = t_max.min((l - x[i]) / d[k]);
                }
            }
            if let Some((lo, hi)) = band {
                let ds: f64 = d.iter().sum();
                if ds > 0.0 {
                    t_max = t_max.min(((hi - s) / ds).max(0.0));
                } else if ds < 0.0 {
                    t_max = t_max.min(((lo - s) / ds).max(0.0));
                }
            }
            let curv = dot(&full, &self.q.matvec(&full).ok()?);
            let t_star = if curv > 0.0 { -slope / curv } else { f64::INFINITY };
            let t = t_star.min(t_max);
            if !t.is_finite() || t <= 0.0 {
                break;
            }
            let hit_bound = t_max <= t_star;
            for (k, &i) in free.iter().enumerate() {
                x[i] = (x[i] + t * d[k]).clamp(l, u);
                if hit_bound && t_max < f64::INFINITY {
                    // snap the blocking variables exactly onto their bound
                    let to_u = d[k] > 0.0 && (u - x[i]).abs() <= 1e-12 * (1.0 + u.abs());
                    let to_l = d[k] < 0.0 && (x[i] - l).abs() <= 1e-12 * (1.0 + l.abs());
                    if to_u {
                        x[i] = u;
                    } else if to_l {
                        x[i] = l;
                    }
                }
            }
            moved = true;
            if !hit_bound {
                break;
            }
        }
        moved.then(|| self.project(&x))
    }
}

/// Solves the QP to KKT residual `tol`. On hitting `max_iter` the error carries
/// the best iterate found.
pub fn box_qp_solve(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    p.validate()?;
    let n = p.dim();
    if n == 0 {
        return Ok(QpSolution {
            x: vec![],
            iterations: 0,
            kkt_residual: 0.0,
            objective: 0.0,
        });
    }
    let inv_l = 1.0 / p.lipschitz();
    let start = 1.0f64.clamp(p.lower, p.upper);
    let mut x = p.project(&vec![start; n]);
    let mut best = (p.kkt_residual(&x), x.clone());
    if best.0 <= tol {
        return Ok(finish(p, best.1, 0, best.0));
    }
    if n <= IPM_MAX_DIM {
        if let Some((w, iters)) = interior_point(p, tol.min(IPM_TOL)) {
            let w = p.project(&w);
            let cands = vec![w.clone(), p.crossover(&w)];
            for c in cands.into_iter().rev() {
                let r = p.kkt_residual(&c);
                if r <= tol {
                    return Ok(finish(p, c, iters, r));
                }
                if r < best.0 {
                    best = (r, c.clone());
                    x = c;
                }
            }
        }
    }
    let mut y = x.clone();
    let mut t = 1.0f64;
    for it in 1..=max_iter {
        let g = p.gradient(&y);
        let step: Vec<f64> = y.iter().zip(&g).map(|(yi, gi)| yi - inv_l * gi).collect();
        let x_new = p.project(&step);
        // gradient-based restart
        let restart: f64 = y
            .iter()
            .zip(&x_new)
            .zip(&x)
            .map(|((yi, xn), xo)| (yi - xn) * (xn - xo))
            .sum();
        let t_new = if restart > 0.0 {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt())
        };
        let mom = if restart > 0.0 { 0.0 } else { (t - 1.0) / t_new };
        y = x_new
            .iter()
            .zip(&x)
            .map(|(xn, xo)| xn + mom * (xn - xo))
            .collect();
        x = x_new;
        t = t_new;

        if it % CHECK_EVERY == 0 || it == max_iter {
            let r = p.kkt_residual(&x);
            if r < best.0 {
                best = (r, x.clone());
            }
            if r <= tol {
                return Ok(finish(p, x, it, r));
            }
        }
        if it % POLISH_EVERY == 0 {
            if let Some(cand) = p.polish(&x) {
                if p.objective(&cand) <= p.objective(&x) + 1e-14 * (1.0 + p.objective(&x).abs()) {
                    let r = p.kkt_residual(&cand);
                    if r < best.0 {
                        best = (r, cand.clone());
                    }
                    if r <= tol {
                        return Ok(finish(p, cand, it, r));
                    }
                    x = cand;
                    y = x.clone();
                    t = 1.0;
                }
            }
        }
    }
    Err(Error::MaxIterExceeded {
        iterations: max_iter,
        residual: best.0,
        best: best.1,
    })
}

/// Primal-dual interior-point method (Mehrotra predictor-corrector) on the
/// slack form `w − s_l = l`, `w + s_u = u`, `1ᵀw − t_l = lo`, `1ᵀw + t_u = hi`
/// (or `1ᵀw = target` when the slab has zero width). Returns the last primal
/// iterate once its projection meets `tol`, or when progress stops.
fn interior_point(p: &QpProblem, tol: f64) -> Option<(Vec<f64>, usize)> {
    let n = p.dim();
    let (l, u) = (p.lower, p.upper);
    if !(u > l) {
        return None;
    }
    let has_u = u.is_finite();
    let band = p.sum_band();
    let equality = band.filter(|(lo, hi)| hi <= lo).map(|(lo, _)| lo);
    let slab = band.filter(|(lo, hi)| hi > lo);

    let mut w = p.project(&vec![if has_u { 0.5 * (l + u) } else { l + 1.0 }; n]);
    let floor = |g: f64| g.max(1.0);
    let mut sl: Vec<f64> = w.iter().map(|&x| floor(x - l)).collect();
    let mut su: Vec<f64> = w.iter().map(|&x| if has_u { floor(u - x) } else { 1.0 }).collect();
    let mut zl = vec![1.0; n];
    let mut zu = vec![if has_u { 1.0 } else { 0.0 }; n];
    let sum0: f64 = w.iter().sum();
    let (mut tl, mut tu) = slab.map_or((1.0, 1.0), |(lo, hi)| (floor(sum0 - lo), floor(hi - sum0)));
    let (mut yl, mut yu) = if slab.is_some() { (1.0, 1.0) } else { (0.0, 0.0) };
    let mut nu = 0.0;
    let m = n as f64 * if has_u { 2.0 } else { 1.0 } + if slab.is_some() { 2.0 } else { 0.0 };

    let mut best: Option<(f64, Vec<f64>)> = None;
    for it in 1..=IPM_MAX_ITER {
        let qw = p.q.matvec(&w).ok()?;
        let sw: f64 = w.iter().sum();
        let rd: Vec<f64> = (0..n)
            .map(|i| qw[i] - p.c[i] - zl[i] + zu[i] - (yl - yu) - nu)
            .collect();
        let rsl: Vec<f64> = (0..n).map(|i| w[i] - sl[i] - l).collect();
        let rsu: Vec<f64> = (0..n).map(|i| if has_u { w[i] + su[i] - u } else { 0.0 }).collect();
        let (rtl, rtu) = slab.map_or((0.0, 0.0), |(lo, hi)| (sw - tl - lo, sw + tu - hi));
        let req = equality.map_or(0.0, |t| sw - t);
        let mut gap: f64 = (0..n).map(|i| sl[i] * zl[i] + su[i] * zu[i]).sum();
        if slab.is_some() {
            gap += tl * yl + tu * yu;
        }
        let mu = gap / m;

        let r = p.kkt_residual(&p.project(&w));
        if best.as_ref().is_none_or(|(b, _)| r < *b) {
            best = Some((r, w.clone()));
        }
        if r <= tol || !(mu > 1e-30) {
            let (_, w) = best?;
            return Some((w, it));
        }

        // M = Q + D + γ11ᵀ
        let d: Vec<f64> = (0..n)
            .map(|i| zl[i] / sl[i] + if has_u { zu[i] / su[i] } else { 0.0 })
            .collect();
        let gamma = if slab.is_some() { yl / tl + yu / tu } else { 0.0 };
        let mut mat = p.q.clone();
        for i in 0..n {
            for j in 0..n {
                mat[(i, j)] += gamma;
            }
            mat[(i, i)] += d[i];
        }
        let chol = cholesky_jittered(&mat).ok()?;
        let ones_sol = if equality.is_some() {
            Some(chol.solve(&vec![1.0; n]).ok()?)
        } else {
            None
        };

        // one Newton solve for given complementarity targets
        let solve = |rcl: &[f64], rcu: &[f64], rctl: f64, rctu: f64| -> Option<Step> {
            let a: Vec<f64> = (0..n)
                .map(|i| {
                    let lo = (rcl[i] + zl[i] * rsl[i]) / sl[i];
                    let hi = if has_u { (-rcu[i] + zu[i] * rsu[i]) / su[i] } else { 0.0 };
                    lo + hi
                })
                .collect();
            let b = if slab.is_some() {
                (rctl + yl * rtl) / tl - (rctu - yu * rtu) / tu
            } else {
                0.0
            };
            let rhs: Vec<f64> = (0..n).map(|i| -rd[i] - a[i] - b).collect();
            let mut dw = chol.solve(&rhs).ok()?;
            let mut dnu = 0.0;
            if let Some(e) = &ones_sol {
                let denom: f64 = e.iter().sum();
                dnu = (-req - dw.iter().sum::<f64>()) / denom;
                for (v, ei) in dw.iter_mut().zip(e) {
                    *v += dnu * ei;
                }
            }
            let ds: f64 = dw.iter().sum();
            let dsl: Vec<f64> = (0..n).map(|i| dw[i] + rsl[i]).collect();
            let dsu: Vec<f64> = (0..n).map(|i| if has_u { -dw[i] - rsu[i] } else { 0.0 }).collect();
            let dzl: Vec<f64> = (0..n).map(|i| (-rcl[i] - zl[i] * dsl[i]) / sl[i]).collect();
            let dzu: Vec<f64> = (0..n)
                .map(|i| if has_u { (-rcu[i] - zu[i] * dsu[i]) / su[i] } else { 0.0 })
                .collect();
            let (dtl, dtu, dyl, dyu) = if slab.is_some() {
                let dtl = ds + rtl;
                let dtu = -ds - rtu;
                (dtl, dtu, (-rctl - yl * dtl) / tl, (-rctu - yu * dtu) / tu)
            } else {
                (0.0, 0.0, 0.0, 0.0)
            };
            Some(Step { dw, dsl, dsu, dzl, dzu, dtl, dtu, dyl, dyu, dnu })
        };
        let max_step = |st: &Step| -> f64 {
            let mut a = 1.0f64;
            let mut lim = |v: f64, dv: f64| {
                if dv < 0.0 {
                    a = a.min(-v / dv);
                }
            };
            for i in 0..n {
                lim(sl[i], st.dsl[i]);
                lim(zl[i], st.dzl[i]);
                if has_u {
                    lim(su[i], st.dsu[i]);
                    lim(zu[i], st.dzu[i]);
                }
            }
            if slab.is_some() {
                lim(tl, st.dtl);
                lim(tu, st.dtu);
                lim(yl, st.dyl);
                lim(yu, st.dyu);
            }
            a
        };

        let rcl: Vec<f64> = (0..n).map(|i| sl[i] * zl[i]).collect();
        let rcu: Vec<f64> = (0..n).map(|i| su[i] * zu[i]).collect();
        let aff = solve(&rcl, &rcu, tl * yl, tu * yu)?;
        let a_aff = max_step(&aff);
        let mut gap_aff: f64 = (0..n)
            .map(|i| {
                (sl[i] + a_aff * aff.dsl[i]) * (zl[i] + a_aff * aff.dzl[i])
                    + (su[i] + a_aff * aff.dsu[i]) * (zu[i] + a_aff * aff.dzu[i])
            })
            .sum();
        if slab.is_some() {
            gap_aff += (tl + a_aff * aff.dtl) * (yl + a_aff * aff.dyl) + (tu + a_aff * aff.dtu) * (yu + a_aff * aff.dyu);
        }
        let sigma = (gap_aff / gap).clamp(0.0, 1.0).powi(3);
        let target = sigma * mu;
        let rcl: Vec<f64> = (0..n).map(|i| sl[i] * zl[i] + aff.dsl[i] * aff.dzl[i] - target).collect();
        let rcu: Vec<f64> = (0..n)
            .map(|i| if has_u { su[i] * zu[i] + aff.dsu[i] * aff.dzu[i] - target } else { 0.0 })
            .collect();
        let (rctl, rctu) = if slab.is_some() {
            (tl * yl + aff.dtl * aff.dyl - target, tu * yu + aff.dtu * aff.dyu - target)
        } else {
            (0.0, 0.0)
        };
        let st = solve(&rcl, &rcu, rctl, rctu)?;
        let alpha = (0.995 * max_step(&st)).min(1.0);
        if !(alpha > 0.0) || !alpha.is_finite() {
            break;
        }
        for i in 0..n {
            w[i] += alpha * st.dw[i];
            sl[i] += alpha * st.dsl[i];
            zl[i] += alpha * st.dzl[i];
            if has_u {
                su[i] += alpha * st.dsu[i];
                zu[i] += alpha * st.dzu[i];
            }
        }
        if slab.is_some() {
            tl += alpha * st.dtl;
            tu += alpha * st.dtu;
            yl += alpha * st.dyl;
            yu += alpha * st.dyu;
        }
        nu += alpha * st.dnu;
        if !w.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    best.map(|(_, w)| (w, IPM_MAX_ITER))
}

struct Step {
    dw: Vec<f64>,
    dsl: Vec<f64>,
    dsu: Vec<f64>,
    dzl: Vec<f64>,
    dzu: Vec<f64>,
    dtl: f64,
    dtu: f64,
    dyl: f64,
    dyu: f64,
    dnu: f64,
}

fn finish(p: &QpProblem, x: Vec<f64>, iterations: usize, kkt_residual: f64) -> QpSolution {
    let objective = p.objective(&x);
    QpSolution {
        x,
        iterations,
        kkt_residual,
        objective,
    }
}

/// Solution of a QP, falling back to the best iterate when the iteration budget
/// runs out. Used inside training loops where a slightly loose solve is fine.
pub fn box_qp_solve_lenient(p: &QpProblem, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    match box_qp_solve(p, tol, max_iter) {
        Ok(s) => Ok(s.x),
        Err(Error::MaxIterExceeded { best, .. }) => Ok(best),
        Err(e) => Err(e),
    }
}

impl QpProblem {
    /// Largest constraint violation of `w` (0 when feasible).
    pub fn violation(&self, w: &[f64]) -> f64 {
        let box_v = w
            .iter()
            .map(|&x| (self.lower - x).max(x - self.upper).max(0.0))
            .fold(0.0, f64::max);
        let sum_v = self.sum_band().map_or(0.0, |(lo, hi)| {
            let s: f64 = w.iter().sum();
            (lo - s).max(s - hi).max(0.0)
        });
        box_v.max(sum_v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projected_unconstrained_optimum() {
        let p = QpProblem::new(Matrix::identity(2), vec![2.0, -1.0], 0.0, 1.0, None).unwrap();
        let s = box_qp_solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(s.x, vec![1.0, 0.0]);
    }

    #[test]
    fn interior_optimum() {
        let p = QpProblem::new(Matrix::identity(2), vec![0.5, 0.5], 0.0, 1.0, None).unwrap();
        let s = box_qp_solve(&p, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-8 && (s.x[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn contradictory_constraints_are_infeasible() {
        let sum = Some(SumConstraint {
            target: 10.0,
            slack: 0.5,
        });
        let r = QpProblem::new(Matrix::identity(3), vec![0.0; 3], 0.0, 1.0, sum);
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn projection_hits_sum_band() {
        let sum = Some(SumConstraint {
            target: 1.0,
            slack: 0.0,
        });
        let p = QpProblem::new(Matrix::identity(3), vec![0.0; 3], 0.0, 1.0, sum).unwrap();
        let w = p.project(&[3.0, 0.2, -1.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w, vec![1.0, 0.0, 0.0]);
        let w = p.project(&[0.9, 0.7, 0.1]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[0] - 0.6).abs() < 1e-12 && (w[1] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn tiny_budget_reports_best_iterate() {
        let q = Matrix::from_rows(&[[1.0, 0.999], [0.999, 1.0]]);
        let p = QpProblem::new(q, vec![1.0, -1.0], -100.0, 100.0, None).unwrap();
        match box_qp_solve(&p, 1e-14, 3) {
            Err(Error::MaxIterExceeded { best, .. }) => assert_eq!(best.len(), 2),
            Ok(_) => {}
            Err(e) => panic!("unexpected {e}"),
        }
    }
}
