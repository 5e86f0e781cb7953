//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves
//!
//! ```text
//!     minimize    ½ xᵀ H x + fᵀ x
//!     subject to  A x = b
//!                 C x ≤ d
//! ```
//!
//! for small dense problems. `H` must be positive definite; the dual method
//! needs no feasible starting point and reports infeasibility when the dual
//! becomes unbounded.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("equality constraints are linearly dependent")]
    DependentEqualities,
    #[error("no convergence after {iterations} iterations (primal violation {violation:.3e})")]
    MaxIterations { iterations: usize, violation: f64, best: DVector<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of `C x ≤ d`, non-negative.
    pub lambda: DVector<f64>,
    /// Multipliers of `A x = b`.
    pub mu: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Indices of inequality constraints active at the solution.
    pub active: Vec<usize>,
}

/// KKT residuals of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl QpSolution {
    pub fn kkt(&self, h: &DMatrix<f64>, f: &DVector<f64>, c: &DMatrix<f64>, d: &DVector<f64>) -> KktReport {
        kkt_report(&self.x, &self.lambda, h, f, c, d)
    }
}

pub fn kkt_report(
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
) -> KktReport {
    let grad = h * x + f + c.transpose() * lambda;
    let slack = c * x - d;
    let primal = slack.iter().fold(0.0f64, |m, s| m.max(*s));
    let dual = lambda.iter().fold(0.0f64, |m, l| m.max(-*l));
    let complementarity = slack.iter().zip(lambda.iter()).fold(0.0f64, |m, (s, l)| m.max((s * l).abs()));
    KktReport { stationarity: grad.amax(), primal, dual, complementarity }
}

/// Inequality-only QP: `min ½xᵀHx + fᵀx  s.t.  Cx ≤ d`.
pub fn solve_qp(h: &DMatrix<f64>, f: &DVector<f64>, c: &DMatrix<f64>, d: &DVector<f64>) -> Result<QpSolution, QpError> {
    let n = h.nrows();
    solve_qp_eq(h, f, &DMatrix::zeros(0, n), &DVector::zeros(0), c, d)
}

fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let h = libm::hypot(a, b);
    if h == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / h, b / h, h)
    }
}

/// Rotates columns `i` and `j` of `m` by (c, s).
fn rotate_columns(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    for k in 0..m.nrows() {
        let (a, b) = (m[(k, i)], m[(k, j)]);
        m[(k, i)] = c * a + s * b;
        m[(k, j)] = -s * a + c * b;
    }
}

struct Factor {
    /// `J = L⁻ᵀ Q`; the first `q` columns span the active constraint normals.
    j: DMatrix<f64>,
    /// Upper triangular `q × q` block in the leading corner.
    r: DMatrix<f64>,
    q: usize,
}

impl Factor {
    /// Returns `Jᵀ n`.
    fn project(&self, normal: &DVector<f64>) -> DVector<f64> {
        self.j.tr_mul(normal)
    }

    /// Primal step direction `z = J₂ d₂` and dual direction `r = R⁻¹ d₁`.
    fn directions(&self, dvec: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.j.nrows();
        let mut z = DVector::zeros(n);
        for col in self.q..n {
            let w = dvec[col];
            if w != 0.0 {
                for k in 0..n {
                    z[k] += self.j[(k, col)] * w;
                }
            }
        }
        // back substitution on the leading q×q block
        let mut r = DVector::zeros(self.q);
        for i in (0..self.q).rev() {
            let mut s = dvec[i];
            for k in i + 1..self.q {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        (z, r)
    }

    /// Appends a constraint whose projected normal is `dvec`. Returns false if
    /// it is linearly dependent on the active set.
    fn add(&mut self, mut dvec: DVector<f64>) -> bool {
        let n = self.j.nrows();
        for i in (self.q + 1..n).rev() {
            let (c, s, h) = givens(dvec[i - 1], dvec[i]);
            if dvec[i] == 0.0 {
                continue;
            }
            dvec[i - 1] = h;
            dvec[i] = 0.0;
            rotate_columns(&mut self.j, i - 1, i, c, s);
        }
        let scale = dvec.amax().max(1.0);
        if self.q >= n || libm::fabs(dvec[self.q]) <= 1e-13 * scale {
            return false;
        }
        for i in 0..=self.q {
            self.r[(i, self.q)] = dvec[i];
        }
        self.q += 1;
        true
    }

    /// Removes the active constraint at position `l`.
    fn drop(&mut self, l: usize) {
        let q = self.q;
        for col in l..q - 1 {
            for row in 0..q {
                self.r[(row, col)] = self.r[(row, col + 1)];
            }
        }
        for row in 0..q {
            self.r[(row, q - 1)] = 0.0;
        }
        for col in l..q - 1 {
            let (c, s, h) = givens(self.r[(col, col)], self.r[(col + 1, col)]);
            if self.r[(col + 1, col)] == 0.0 {
                continue;
            }
            self.r[(col, col)] = h;
            self.r[(col + 1, col)] = 0.0;
            for k in col + 1..q - 1 {
                let (a, b) = (self.r[(col, k)], self.r[(col + 1, k)]);
                self.r[(col, k)] = c * a + s * b;
                self.r[(col + 1, k)] = -s * a + c * b;
            }
            rotate_columns(&mut self.j, col, col + 1, c, s);
        }
        self.q -= 1;
    }
}

/// QP with equality and inequality constraints.
pub fn solve_qp_eq(
    h: &DMatrix<f64>,
    f: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    let n = h.nrows();
    if h.ncols() != n || f.len() != n {
        return Err(QpError::Dimension("H must be n×n and f of length n"));
    }
    if a.ncols() != n || a.nrows() != b.len() {
        return Err(QpError::Dimension("A must be me×n and b of length me"));
    }
    if c.ncols() != n || c.nrows() != d.len() {
        return Err(QpError::Dimension("C must be m×n and d of length m"));
    }
    let (me, mi) = (a.nrows(), c.nrows());
    if me > n {
        return Err(QpError::DependentEqualities);
    }

    let sym = (h + h.transpose()) * 0.5;
    let chol = sym.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
    let l = chol.l();
    let l_inv = l.clone().solve_lower_triangular(&DMatrix::identity(n, n)).ok_or(QpError::NotPositiveDefinite)?;
    let mut fac = Factor { j: l_inv.transpose(), r: DMatrix::zeros(n, n), q: 0 };

    // unconstrained minimizer
    let mut x = -chol.solve(f);

    // constraint normals in "≥" form: nᵀx ≥ β
    let normal = |k: usize| -> (DVector<f64>, f64) {
        if k < me {
            (a.row(k).transpose(), b[k])
        } else {
            let i = k - me;
            (-c.row(i).transpose(), -d[i])
        }
    };

    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut u: Vec<f64> = Vec::with_capacity(n);

    for k in 0..me {
        let (nk, bk) = normal(k);
        let dvec = fac.project(&nk);
        let (z, r) = fac.directions(&dvec);
        let denom = z.dot(&nk);
        if libm::fabs(denom) <= 1e-14 * nk.norm_squared().max(1e-300) {
            return Err(QpError::DependentEqualities);
        }
        let t = (bk - nk.dot(&x)) / denom;
        x += &z * t;
        for (ui, ri) in u.iter_mut().zip(r.iter()) {
            *ui -= t * ri;
        }
        if !fac.add(dvec) {
            return Err(QpError::DependentEqualities);
        }
        active.push(k);
        u.push(t);
    }

    let scale_b: Vec<f64> = (0..mi).map(|i| 1.0 + libm::fabs(d[i]) + c.row(i).amax()).collect();
    let tol = 1e-12;
    let max_iter = 50 * (n + mi + me) + 100;
    let mut iterations = 0usize;

    loop {
        // most violated inequality, scaled by its row size
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..mi {
            let k = me + i;
            if active.contains(&k) {
                continue;
            }
            let s = d[i] - c.row(i).dot(&x.transpose());
            let scaled = s / scale_b[i];
            if scaled < -tol && pick.map_or(true, |(_, v)| scaled < v) {
                pick = Some((k, scaled));
            }
        }
        let Some((p, _)) = pick else { break };
        let (np, bp) = normal(p);
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                let violation = (c * &x - d).iter().fold(0.0f64, |m, s| m.max(*s));
                return Err(QpError::MaxIterations { iterations, violation, best: x });
            }
            let dvec = fac.project(&np);
            let (z, r) = fac.directions(&dvec);
            let zn = z.dot(&np);
            let s_p = np.dot(&x) - bp;

            // partial (dual) step: first active inequality multiplier to hit zero
            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (pos, &k) in active.iter().enumerate() {
                if k < me {
                    continue;
                }
                if r[pos] > 0.0 {
                    let ratio = u[pos] / r[pos];
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(pos);
                    }
                }
            }
            let primal_ok = zn > 1e-14 * np.norm_squared();
            let t2 = if primal_ok { -s_p / zn } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }

            if !primal_ok {
                for (ui, ri) in u.iter_mut().zip(r.iter()) {
                    *ui -= t * ri;
                }
                u_plus += t;
                let pos = drop_at.expect("finite dual step implies a blocking constraint");
                fac.drop(pos);
                active.remove(pos);
                u.remove(pos);
                continue;
            }

            x += &z * t;
            for (ui, ri) in u.iter_mut().zip(r.iter()) {
                *ui -= t * ri;
            }
            u_plus += t;

            if t2 <= t1 {
                if fac.add(dvec) {
                    active.push(p);
                    u.push(u_plus);
                }
                break;
            }
            let pos = drop_at.expect("partial step implies a blocking constraint");
            fac.drop(pos);
            active.remove(pos);
            u.remove(pos);
        }
    }

    let mut lambda = DVector::zeros(mi);
    let mut mu = DVector::zeros(me);
    let mut act = Vec::new();
    for (pos, &k) in active.iter().enumerate() {
        if k < me {
            mu[k] = u[pos];
        } else {
            lambda[k - me] = u[pos].max(0.0);
            act.push(k - me);
        }
    }
    act.sort_unstable();
    let objective = 0.5 * x.dot(&(&sym * &x)) + f.dot(&x);
    Ok(QpSolution { x, lambda, mu, objective, iterations, active: act })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unconstrained_quadratic() {
        let n = 8;
        let h = DMatrix::identity(n, n);
        let f = DVector::from_element(n, -1.0);
        let s = solve_qp(&h, &f, &DMatrix::zeros(0, n), &DVector::zeros(0)).unwrap();
        assert!((s.x - DVector::from_element(n, 1.0)).amax() < 1e-14);
    }

    #[test]
    fn active_upper_bound() {
        // (x-2)² = x² - 4x + 4  →  H = 2, f = -4
        let h = DMatrix::from_element(1, 1, 2.0);
        let f = DVector::from_element(1, -4.0);
        let c = DMatrix::from_element(1, 1, 1.0);
        let d = DVector::from_element(1, 1.0);
        let s = solve_qp(&h, &f, &c, &d).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-14);
        assert!((s.lambda[0] - 2.0).abs() < 1e-12);
        assert_eq!(s.active, alloc::vec![0]);
    }

    #[test]
    fn detects_infeasible() {
        let h = DMatrix::identity(1, 1);
        let f = DVector::zeros(1);
        let c = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let d = DVector::from_column_slice(&[-1.0, -1.0]);
        assert_eq!(solve_qp(&h, &f, &c, &d), Err(QpError::Infeasible));
    }

    #[test]
    fn rejects_indefinite() {
        let h = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, -1.0]));
        let f = DVector::zeros(2);
        assert_eq!(solve_qp(&h, &f, &DMatrix::zeros(0, 2), &DVector::zeros(0)), Err(QpError::NotPositiveDefinite));
    }

    #[test]
    fn equality_and_inequality() {
        // min x² + y² s.t. x + y = 1, x ≤ 0.2
        let h = DMatrix::identity(2, 2) * 2.0;
        let f = DVector::zeros(2);
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DVector::from_element(1, 1.0);
        let c = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let d = DVector::from_element(1, 0.2);
        let s = solve_qp_eq(&h, &f, &a, &b, &c, &d).unwrap();
        assert!((s.x[0] - 0.2).abs() < 1e-12);
        assert!((s.x[1] - 0.8).abs() < 1e-12);
        // stationarity: Hx + f + Cᵀλ - Aᵀμ = 0
        let g = &h * &s.x + &f + c.transpose() * &s.lambda - a.transpose() * &s.mu;
        assert!(g.amax() < 1e-12);
    }

    #[test]
    fn duplicate_constraints_are_harmless() {
        let h = DMatrix::identity(2, 2);
        let f = DVector::from_column_slice(&[-3.0, -3.0]);
        let c = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let d = DVector::from_column_slice(&[1.0, 1.0, 1.5]);
        let s = solve_qp(&h, &f, &c, &d).unwrap();
        let k = s.kkt(&h, &f, &c, &d);
        assert!(k.primal < 1e-10 && k.stationarity < 1e-10 && k.complementarity < 1e-10);
        assert!((s.x[0] - 0.75).abs() < 1e-10 && (s.x[1] - 0.75).abs() < 1e-10);
    }

    /// Accelerated projected gradient on a box, long-run, as an oracle.
    fn box_oracle(h: &DMatrix<f64>, f: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
        let n = f.len();
        let lmax = h.clone().symmetric_eigenvalues().max();
        let step = 1.0 / lmax;
        let proj = |v: DVector<f64>| DVector::from_fn(n, |i, _| v[i].clamp(lo[i], hi[i]));
        let mut x = proj(DVector::zeros(n));
        let mut y = x.clone();
        let mut t = 1.0f64;
        for _ in 0..200_000 {
            let g = h * &y + f;
            let xn = proj(&y - g * step);
            let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &xn + (&xn - &x) * ((t - 1.0) / tn);
            x = xn;
            t = tn;
        }
        x
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn random_box_qps_match_oracle(seed in prop::collection::vec(-1.0f64..1.0, 8 * 8 + 8 + 16)) {
            let n = 8;
            let m = DMatrix::from_column_slice(n, n, &seed[..64]);
            let h = &m * m.transpose() + DMatrix::identity(n, n) * 0.5;
            let f = DVector::from_column_slice(&seed[64..72]) * 5.0;
            let lo = DVector::from_fn(n, |i, _| -0.2 - seed[72 + i].abs());
            let hi = DVector::from_fn(n, |i, _| 0.2 + seed[80 + i].abs());
            let mut c = DMatrix::zeros(2 * n, n);
            let mut d = DVector::zeros(2 * n);
            for i in 0..n {
                c[(2 * i, i)] = 1.0;
                d[2 * i] = hi[i];
                c[(2 * i + 1, i)] = -1.0;
                d[2 * i + 1] = -lo[i];
            }
            let s = solve_qp(&h, &f, &c, &d).unwrap();
            let k = s.kkt(&h, &f, &c, &d);
            prop_assert!(k.stationarity < 1e-8 && k.primal < 1e-8 && k.dual <= 0.0 && k.complementarity < 1e-8);
            let xo = box_oracle(&h, &f, &lo, &hi);
            let obj = |x: &DVector<f64>| 0.5 * x.dot(&(&h * x)) + f.dot(x);
            prop_assert!((obj(&s.x) - obj(&xo)).abs() < 1e-6);
        }

        #[test]
        fn random_general_qps_satisfy_kkt(seed in prop::collection::vec(-1.0f64..1.0, 6 * 6 + 6 + 12 * 6 + 12)) {
            let n = 6;
            let m = DMatrix::from_column_slice(n, n, &seed[..36]);
            let h = &m * m.transpose() + DMatrix::identity(n, n) * 1e-2;
            let f = DVector::from_column_slice(&seed[36..42]) * 3.0;
            let c = DMatrix::from_row_slice(12, n, &seed[42..42 + 72]);
            // origin is strictly feasible
            let d = DVector::from_fn(12, |i, _| 0.1 + seed[114 + i].abs());
            let s = solve_qp(&h, &f, &c, &d).unwrap();
            let k = s.kkt(&h, &f, &c, &d);
            prop_assert!(k.stationarity < 1e-8, "stationarity {}", k.stationarity);
            prop_assert!(k.primal < 1e-8 && k.complementarity < 1e-8);
        }
    }
}
