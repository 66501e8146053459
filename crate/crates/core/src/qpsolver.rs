//! Dense strictly convex QP solver for the small problems of the control loop:
//!
//! ```text
//! minimize ½ zᵀHz + gᵀz   subject to   aᵢᵀz ≥ bᵢ
//! ```
//!
//! Uses the dual active-set method of Goldfarb and Idnani. It starts from the
//! unconstrained minimizer, so no feasible starting point is needed, and adds
//! the most violated constraint at each major iteration while keeping the
//! multipliers nonnegative. The active set of the previous solve can seed the
//! next one.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

pub const MAX_VARIABLES: usize = 8;
pub const MAX_CONSTRAINTS: usize = 16;
const MIN_EIGENVALUE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// One row per inequality `aᵢᵀz ≥ bᵢ`.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("problem has {0} variables, at most {MAX_VARIABLES} are supported")]
    TooManyVariables(usize),
    #[error("problem has {0} constraints, at most {MAX_CONSTRAINTS} are supported")]
    TooManyConstraints(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error("Hessian is not symmetric")]
    NotSymmetric,
    #[error("Hessian minimum eigenvalue {0:e} is below {MIN_EIGENVALUE:e}")]
    NotPositiveDefinite(f64),
    #[error("problem data contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl QpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// Indices of the constraints active at the solution, ascending.
    pub active_set: Vec<usize>,
    /// Lagrange multiplier of every constraint (zero when inactive).
    pub multipliers: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        QpProblem { hessian, linear, a, b }
    }

    /// Unconstrained problem with `n` variables.
    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        QpProblem { hessian, linear, a: DMatrix::zeros(0, n), b: DVector::zeros(0) }
    }

    pub fn dimension(&self) -> usize {
        self.linear.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.hessian * z)) + self.linear.dot(z)
    }

    /// `aᵢᵀz − bᵢ` for every constraint.
    pub fn slacks(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.a * z - &self.b
    }

    fn validate(&self) -> Result<Cholesky<f64, Dyn>, QpError> {
        let n = self.dimension();
        let m = self.num_constraints();
        if n > MAX_VARIABLES {
            return Err(QpError::TooManyVariables(n));
        }
        if m > MAX_CONSTRAINTS {
            return Err(QpError::TooManyConstraints(m));
        }
        if self.hessian.nrows() != n || self.hessian.ncols() != n {
            return Err(QpError::Dimension("Hessian must be n×n"));
        }
        if self.a.nrows() != m || self.a.ncols() != n {
            return Err(QpError::Dimension("constraint matrix must be m×n"));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|x| x.is_finite());
        if !finite(&self.hessian) || !finite(&self.a) || self.linear.iter().chain(self.b.iter()).any(|x| !x.is_finite()) {
            return Err(QpError::NonFinite);
        }
        let scale = self.hessian.amax().max(1.0);
        if (&self.hessian - self.hessian.transpose()).amax() > 1e-12 * scale {
            return Err(QpError::NotSymmetric);
        }
        let min_eig = self.hessian.clone().symmetric_eigenvalues().min();
        if min_eig < MIN_EIGENVALUE {
            return Err(QpError::NotPositiveDefinite(min_eig));
        }
        Cholesky::new(self.hessian.clone()).ok_or(QpError::NotPositiveDefinite(min_eig))
    }
}

/// Solves from scratch.
pub fn solve(p: &QpProblem) -> Result<QpSolution, QpError> {
    QpSolver::new().solve(p)
}

/// Solver carrying the previous active set between calls.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    warm: Vec<usize>,
}

struct State {
    z: DVector<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
}

impl QpSolver {
    pub fn new() -> Self {
        QpSolver::default()
    }

    pub fn reset(&mut self) {
        self.warm.clear();
    }

    pub fn solve(&mut self, p: &QpProblem) -> Result<QpSolution, QpError> {
        let chol = p.validate()?;
        let m = p.num_constraints();
        let start = self.warm_start(p, &chol).unwrap_or_else(|| State { z: -chol.solve(&p.linear), active: Vec::new(), u: Vec::new() });
        let (state, status, iterations) = dual_active_set(p, &chol, start);
        let mut multipliers = DVector::zeros(m);
        for (&i, &ui) in state.active.iter().zip(&state.u) {
            multipliers[i] = ui;
        }
        let mut active_set = state.active.clone();
        active_set.sort_unstable();
        self.warm = if status == QpStatus::Optimal { active_set.clone() } else { Vec::new() };
        Ok(QpSolution { z: state.z, active_set, multipliers, status, iterations })
    }

    /// Equality-constrained solve on the previous active set; usable as a
    /// starting point when its multipliers are nonnegative.
    fn warm_start(&self, p: &QpProblem, chol: &Cholesky<f64, Dyn>) -> Option<State> {
        if self.warm.is_empty() || self.warm.iter().any(|&i| i >= p.num_constraints()) {
            return None;
        }
        let n_mat = active_columns(p, &self.warm);
        let hinv_n = chol.solve(&n_mat);
        let schur = n_mat.transpose() * &hinv_n;
        let z0 = -chol.solve(&p.linear);
        // Nᵀz = b with z = z0 + H⁻¹N u
        let rhs = DVector::from_iterator(self.warm.len(), self.warm.iter().map(|&i| p.b[i])) - n_mat.transpose() * &z0;
        let u = schur.lu().solve(&rhs)?;
        if u.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return None;
        }
        let z = z0 + hinv_n * &u;
        Some(State { z, active: self.warm.clone(), u: u.iter().copied().collect() })
    }
}

fn active_columns(p: &QpProblem, active: &[usize]) -> DMatrix<f64> {
    let n = p.dimension();
    DMatrix::from_fn(n, active.len(), |r, c| p.a[(active[c], r)])
}

fn violation_tolerance(p: &QpProblem, i: usize, z: &DVector<f64>) -> f64 {
    1e-12 * (1.0 + p.a.row(i).norm() * z.norm() + p.b[i].abs())
}

fn dual_active_set(p: &QpProblem, chol: &Cholesky<f64, Dyn>, mut s: State) -> (State, QpStatus, usize) {
    let n = p.dimension();
    let m = p.num_constraints();
    let max_iter = 100 * (n + m).max(1);
    let mut iterations = 0;
    loop {
        // Most violated inactive constraint.
        let slacks = p.slacks(&s.z);
        let candidate = (0..m)
            .filter(|i| !s.active.contains(i))
            .filter(|&i| slacks[i] < -violation_tolerance(p, i, &s.z))
            .min_by(|&i, &j| {
                let si = slacks[i] / p.a.row(i).norm().max(1e-300);
                let sj = slacks[j] / p.a.row(j).norm().max(1e-300);
                si.total_cmp(&sj).then(i.cmp(&j))
            });
        let Some(q) = candidate else {
            return (s, QpStatus::Optimal, iterations);
        };
        let normal = DVector::from_iterator(n, p.a.row(q).iter().copied());
        let mut u_q = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return (s, QpStatus::MaxIter, iterations);
            }
            let hinv_nq = chol.solve(&normal);
            let (d, r) = if s.active.is_empty() {
                (hinv_nq.clone(), DVector::zeros(0))
            } else {
                let n_mat = active_columns(p, &s.active);
                let hinv_n = chol.solve(&n_mat);
                let schur = n_mat.transpose() * &hinv_n;
                let r = match schur.clone().cholesky() {
                    Some(c) => c.solve(&(n_mat.transpose() * &hinv_nq)),
                    None => schur.pseudo_inverse(1e-14).expect("pseudo-inverse of a square matrix") * (n_mat.transpose() * &hinv_nq),
                };
                (&hinv_nq - hinv_n * &r, r)
            };
            // Largest dual step keeping active multipliers nonnegative.
            let mut t_dual = f64::INFINITY;
            let mut blocking = None;
            for (k, &rk) in r.iter().enumerate() {
                if rk > 1e-14 {
                    let t = s.u[k] / rk;
                    if t < t_dual {
                        t_dual = t;
                        blocking = Some(k);
                    }
                }
            }
            let curvature = normal.dot(&d);
            let slack_q = normal.dot(&s.z) - p.b[q];
            let primal_possible = curvature > 1e-14 * normal.norm_squared().max(1e-300) * hinv_nq.norm().max(1.0) / normal.norm().max(1e-300);
            if !primal_possible {
                // Constraint normal lies in the span of the active normals.
                let Some(k) = blocking else {
                    return (s, QpStatus::Infeasible, iterations);
                };
                for (j, rj) in r.iter().enumerate() {
                    s.u[j] -= t_dual * rj;
                }
                u_q += t_dual;
                s.active.remove(k);
                s.u.remove(k);
                continue;
            }
            let t_full = -slack_q / curvature;
            let t = t_full.min(t_dual);
            s.z += &d * t;
            for (j, rj) in r.iter().enumerate() {
                s.u[j] -= t * rj;
            }
            u_q += t;
            if t_full <= t_dual {
                s.active.push(q);
                s.u.push(u_q);
                break;
            }
            let k = blocking.expect("finite dual step has a blocking constraint");
            s.active.remove(k);
            s.u.remove(k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem::unconstrained(DMatrix::identity(3, 3), DVector::zeros(3));
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.z, DVector::zeros(3));
        assert!(s.active_set.is_empty());
    }

    #[test]
    fn single_active_constraint() {
        // min v² s.t. v ≥ 3
        let p = QpProblem::new(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1), DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 3.0));
        let s = solve(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z[0] - 3.0).abs() < 1e-12);
        assert_eq!(s.active_set, vec![0]);
        assert!((s.multipliers[0] - 6.0).abs() < 1e-12);
    }

    #[test]
    fn detects_infeasibility() {
        // z ≥ 1 and -z ≥ 0
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let p = QpProblem::new(DMatrix::identity(1, 1), DVector::zeros(1), a, DVector::from_vec(vec![1.0, 0.0]));
        assert_eq!(solve(&p).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn rejects_invalid_problems() {
        let p = QpProblem::unconstrained(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]), DVector::zeros(2));
        assert!(matches!(solve(&p), Err(QpError::NotPositiveDefinite(_))));
        let p = QpProblem::unconstrained(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]), DVector::zeros(2));
        assert_eq!(solve(&p), Err(QpError::NotSymmetric));
        let p = QpProblem::unconstrained(DMatrix::identity(9, 9), DVector::zeros(9));
        assert_eq!(solve(&p), Err(QpError::TooManyVariables(9)));
    }

    #[test]
    fn warm_start_reuses_active_set() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2), a, DVector::from_vec(vec![1.0, 2.0]));
        let mut solver = QpSolver::new();
        let cold = solver.solve(&p).unwrap();
        let warm = solver.solve(&p).unwrap();
        assert_eq!(cold.z, warm.z);
        assert_eq!(warm.iterations, 0);
        assert_eq!(warm.active_set, vec![0, 1]);
    }
}
