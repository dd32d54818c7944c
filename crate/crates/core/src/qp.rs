//! Dense strictly convex quadratic programs.
//!
//! Solves `min 1/2 x'Hx + g'x` subject to `A x = b` and `C x >= d` with the
//! dual active-set method of Goldfarb and Idnani. The method starts from the
//! unconstrained minimizer, adds violated constraints one at a time and never
//! needs a primal feasible starting point, so it doubles as a feasibility
//! test: an empty feasible set is reported as [`QpError::Infeasible`].
//!
//! Problems here are tiny (tens of variables, a few hundred constraints), so
//! every step recomputes its projections from scratch instead of updating
//! factorizations.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("equality constraints are linearly dependent")]
    DependentEqualities,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("iteration limit reached")]
    IterationLimit,
}

/// `min 1/2 x'Hx + g'x  s.t.  eq_matrix x = eq_rhs,  ineq_matrix x >= ineq_rhs`.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Indices of inequality rows active at the solution.
    pub active_inequalities: Vec<usize>,
    pub iterations: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum Row {
    Eq,
    Ineq(usize),
}

impl QuadraticProgram {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn solve(&self) -> Result<QpSolution, QpError> {
        let n = self.dim();
        let chol = self.hessian.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?;
        let hinv = chol.inverse();
        let mut x = -(&hinv * &self.linear);

        let mut rows: Vec<Row> = Vec::new();
        let mut normals: Vec<DVector<f64>> = Vec::new();
        let mut mult: Vec<f64> = Vec::new();

        let neq = self.eq_matrix.nrows();
        if neq > 0 {
            let nmat = self.eq_matrix.transpose();
            let hn = &hinv * &nmat;
            let m = nmat.transpose() * &hn;
            let rhs = &self.eq_rhs - nmat.transpose() * &x;
            let mu = m.cholesky().ok_or(QpError::DependentEqualities)?.solve(&rhs);
            x += &hn * &mu;
            for i in 0..neq {
                rows.push(Row::Eq);
                normals.push(self.eq_matrix.row(i).transpose());
                mult.push(mu[i]);
            }
        }

        let nin = self.ineq_matrix.nrows();
        let ineq_rows: Vec<DVector<f64>> = (0..nin).map(|i| self.ineq_matrix.row(i).transpose()).collect();
        let norms: Vec<f64> = ineq_rows.iter().map(|r| r.norm().max(1e-300)).collect();
        let max_iter = 50 * (n + nin + neq) + 100;
        let mut iterations = 0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit);
            }
            let xnorm = x.norm();
            let mut worst: Option<(usize, f64)> = None;
            for (i, c) in ineq_rows.iter().enumerate() {
                if rows.contains(&Row::Ineq(i)) {
                    continue;
                }
                let s = c.dot(&x) - self.ineq_rhs[i];
                let tol = 1e-11 * (1.0 + self.ineq_rhs[i].abs() + norms[i] * xnorm);
                if s < -tol {
                    let scaled = s / norms[i];
                    if worst.is_none_or(|(_, w)| scaled < w) {
                        worst = Some((i, scaled));
                    }
                }
            }
            let Some((p, _)) = worst else {
                let active_inequalities = rows
                    .iter()
                    .filter_map(|r| match r {
                        Row::Ineq(i) => Some(*i),
                        Row::Eq => None,
                    })
                    .collect();
                return Ok(QpSolution { x, active_inequalities, iterations });
            };
            let np = &ineq_rows[p];
            let hnp = &hinv * np;
            let scale = np.dot(&hnp).max(1e-300);
            let mut up = 0.0;
            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Err(QpError::IterationLimit);
                }
                let (z, r) = if normals.is_empty() {
                    (hnp.clone(), DVector::zeros(0))
                } else {
                    let nmat = DMatrix::from_columns(&normals);
                    let hn = &hinv * &nmat;
                    let m = nmat.transpose() * &hn;
                    let rhs = hn.transpose() * np;
                    let r = match m.clone().cholesky() {
                        Some(c) => c.solve(&rhs),
                        None => m.lu().solve(&rhs).ok_or(QpError::DependentEqualities)?,
                    };
                    (&hnp - &hn * &r, r)
                };
                let mut t1 = f64::INFINITY;
                let mut drop = None;
                for (j, row) in rows.iter().enumerate() {
                    if matches!(row, Row::Ineq(_)) && r[j] > 0.0 {
                        let t = mult[j] / r[j];
                        if t < t1 {
                            t1 = t;
                            drop = Some(j);
                        }
                    }
                }
                let zn = z.dot(np);
                let t2 = if zn <= 1e-12 * scale {
                    f64::INFINITY
                } else {
                    -(np.dot(&x) - self.ineq_rhs[p]) / zn
                };
                if t1.is_infinite() && t2.is_infinite() {
                    return Err(QpError::Infeasible);
                }
                if t2.is_infinite() {
                    for j in 0..mult.len() {
                        mult[j] -= t1 * r[j];
                    }
                    up += t1;
                    let k = drop.expect("finite partial step has a blocking row");
                    rows.remove(k);
                    normals.remove(k);
                    mult.remove(k);
                    continue;
                }
                let t = t1.min(t2);
                x += &z * t;
                for j in 0..mult.len() {
                    mult[j] -= t * r[j];
                }
                up += t;
                if t2 <= t1 {
                    rows.push(Row::Ineq(p));
                    normals.push(np.clone());
                    mult.push(up);
                    break;
                }
                let k = drop.expect("partial step has a blocking row");
                rows.remove(k);
                normals.remove(k);
                mult.remove(k);
            }
        }
    }
}
