//! Dense convex quadratic programs.
//!
//! ```text
//! minimize    ½ xᵀHx + fᵀx
//! subject to  A_eq x  = b_eq
//!             A_in x ≥ b_in
//!             lb ≤ x ≤ ub
//! ```
//!
//! Solved with a dual active-set method in the style of Goldfarb and Idnani:
//! start at the unconstrained minimizer and add violated constraints one at a
//! time, dropping active inequalities whose multiplier would turn negative.
//! The active-set factorization is rebuilt from scratch on every change; the
//! problems this crate produces have at most a few dozen variables.
//!
//! Equality rows are first reduced to an orthonormal, full-row-rank set via
//! SVD so that redundant but consistent rows are accepted.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    /// Rows of `A_in x ≥ b_in`.
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem.
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let n = f.len();
        Self {
            h,
            f,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let shape = |what: &str, rows: usize, cols: usize, er: usize, ec: usize| {
            if rows != er {
                Err(Error::dim(format!("{what} rows"), er, rows))
            } else if cols != ec {
                Err(Error::dim(format!("{what} columns"), ec, cols))
            } else {
                Ok(())
            }
        };
        shape("H", self.h.nrows(), self.h.ncols(), n, n)?;
        shape("A_eq", self.a_eq.nrows(), self.a_eq.ncols(), self.b_eq.len(), n)?;
        shape("A_in", self.a_in.nrows(), self.a_in.ncols(), self.b_in.len(), n)?;
        shape("lb", self.lb.len(), 1, n, 1)?;
        shape("ub", self.ub.len(), 1, n, 1)?;
        let scale = self.h.amax().max(1.0);
        if (&self.h - self.h.transpose()).amax() > 1e-10 * scale {
            return Err(Error::Validation("H is not symmetric".into()));
        }
        if self.lb.iter().zip(self.ub.iter()).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
            return Err(Error::Validation("lb > ub".into()));
        }
        Ok(())
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.f.dot(x)
    }

    /// Largest violation over all constraints (0 when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let eq = (&self.a_eq * x - &self.b_eq).amax();
        let ineq = (&self.b_in - &self.a_in * x).iter().fold(0.0_f64, |m, &v| m.max(v));
        let bounds = (0..self.dim()).fold(0.0_f64, |m, i| m.max(self.lb[i] - x[i]).max(x[i] - self.ub[i]));
        eq.max(ineq).max(bounds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QpStatus {
    Optimal,
    PrimalInfeasible,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub iterations: usize,
    /// ‖Gx + f − Σ uᵢcᵢ‖∞ over the final active set, `G` being the
    /// (possibly regularized) Hessian the solver factored.
    pub kkt_residual: f64,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iterations: usize,
    /// Added to the diagonal of `H` when it is not numerically positive definite.
    pub regularization: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 4000,
            regularization: 1e-9,
        }
    }
}

pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(problem, &QpSettings::default())
}

/// Equality rows whose right-hand side lies outside the row space by more than this are inconsistent.
const EQ_CONSISTENCY_TOL: f64 = 1e-9;
const RANK_TOL: f64 = 1e-10;
/// Relative size of the new normal's component outside the active span below which it counts as dependent.
const DEPENDENCE_TOL: f64 = 1e-10;
const VIOLATION_TOL: f64 = 1e-11;
/// A constraint dependent on the active set and violated by less than this
/// (relative) is left inactive instead of declaring the problem infeasible.
const DEGENERATE_TOL: f64 = 1e-10;

pub fn solve_qp_with(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    problem.validate()?;
    let n = problem.dim();

    let (g, chol) = factor_hessian(&problem.h, settings.regularization)?;
    let infeasible = |x: DVector<f64>, iterations| {
        let objective = problem.objective(&x);
        Ok(QpSolution {
            x,
            status: QpStatus::PrimalInfeasible,
            objective,
            iterations,
            kkt_residual: f64::NAN,
        })
    };

    let constraints = match ConstraintSet::build(problem) {
        Some(c) => c,
        None => return infeasible(DVector::zeros(n), 0),
    };

    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Validation("singular Cholesky factor".into()))?;

    let mut state = ActiveSet {
        x: -chol.solve(&problem.f),
        active: Vec::new(),
        signs: Vec::new(),
        multipliers: Vec::new(),
        l_inv,
        g: g.clone(),
        f: problem.f.clone(),
    };

    let mut iterations = 0;
    for p in 0..constraints.n_eq {
        iterations += 1;
        if state.add(&constraints, p)? != Added::Yes {
            return infeasible(state.x, iterations);
        }
    }

    let mut tolerated = Vec::new();
    let status = loop {
        let Some(p) = constraints.most_violated(&state.x, &state.active, &tolerated) else {
            break QpStatus::Optimal;
        };
        iterations += 1;
        if iterations > settings.max_iterations {
            break QpStatus::MaxIterations;
        }
        match state.add(&constraints, p)? {
            Added::Yes => {}
            Added::Tolerated => tolerated.push(p),
            Added::Infeasible => return infeasible(state.x, iterations),
        }
    };

    let mut grad = &g * &state.x + &problem.f;
    for k in 0..state.active.len() {
        grad.axpy(-state.multipliers[k], &state.normal(&constraints, k), 1.0);
    }
    let objective = problem.objective(&state.x);
    Ok(QpSolution {
        x: state.x,
        status,
        objective,
        iterations,
        kkt_residual: grad.amax(),
    })
}

fn factor_hessian(h: &DMatrix<f64>, reg: f64) -> Result<(DMatrix<f64>, Cholesky<f64, Dyn>)> {
    let sym = (h + h.transpose()) * 0.5;
    if let Some(chol) = Cholesky::new(sym.clone()) {
        // Reject factors that are numerically singular.
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if lo > 1e-6 * hi.max(1.0) {
            return Ok((sym, chol));
        }
    }
    let n = h.nrows();
    let g = sym + DMatrix::identity(n, n) * reg;
    Cholesky::new(g.clone())
        .map(|c| (g, c))
        .ok_or_else(|| Error::Validation("H is not positive semidefinite".into()))
}

/// Constraints in the normalized form `cᵢᵀx ≥ bᵢ` (or `=` for the first `n_eq`).
struct ConstraintSet {
    normals: DMatrix<f64>,
    rhs: Vec<f64>,
    n_eq: usize,
}

impl ConstraintSet {
    /// `None` when the equality rows are inconsistent.
    fn build(problem: &QpProblem) -> Option<Self> {
        let n = problem.dim();
        let mut cols: Vec<DVector<f64>> = Vec::new();
        let mut rhs = Vec::new();

        // Fixed variables join the equality rows before reduction.
        let mut free = Vec::new();
        let mut eq_rows: Vec<DVector<f64>> = (0..problem.a_eq.nrows()).map(|r| problem.a_eq.row(r).transpose()).collect();
        let mut eq_rhs: Vec<f64> = problem.b_eq.iter().copied().collect();
        for i in 0..n {
            let (lo, hi) = (problem.lb[i], problem.ub[i]);
            if lo.is_finite() && hi.is_finite() && hi - lo <= 1e-14 * (1.0 + lo.abs()) {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                eq_rows.push(e);
                eq_rhs.push(0.5 * (lo + hi));
            } else {
                free.push(i);
            }
        }

        if !eq_rows.is_empty() {
            let a_eq = DMatrix::from_columns(&eq_rows).transpose();
            let b_eq = DVector::from_vec(eq_rhs);
            let svd = SVD::new(a_eq, true, true);
            let u = svd.u.as_ref().expect("requested U");
            let vt = svd.v_t.as_ref().expect("requested Vᵀ");
            let smax = svd.singular_values.max();
            let mut projected = DVector::zeros(b_eq.len());
            for (k, &s) in svd.singular_values.iter().enumerate() {
                if s > RANK_TOL * smax.max(1e-300) {
                    let uk = u.column(k);
                    let beta = uk.dot(&b_eq);
                    projected.axpy(beta, &uk, 1.0);
                    cols.push(vt.row(k).transpose());
                    rhs.push(beta / s);
                }
            }
            if (&b_eq - projected).norm() > EQ_CONSISTENCY_TOL * (1.0 + b_eq.norm()) {
                return None;
            }
        }
        let n_eq = cols.len();

        for r in 0..problem.a_in.nrows() {
            cols.push(problem.a_in.row(r).transpose());
            rhs.push(problem.b_in[r]);
        }
        for &i in &free {
            if problem.lb[i].is_finite() {
                let mut e = DVector::zeros(n);
                e[i] = 1.0;
                cols.push(e);
                rhs.push(problem.lb[i]);
            }
            if problem.ub[i].is_finite() {
                let mut e = DVector::zeros(n);
                e[i] = -1.0;
                cols.push(e);
                rhs.push(-problem.ub[i]);
            }
        }

        let normals = if cols.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        Some(Self { normals, rhs, n_eq })
    }

    fn normal(&self, i: usize) -> DVector<f64> {
        self.normals.column(i).into_owned()
    }

    fn slack(&self, x: &DVector<f64>, i: usize) -> f64 {
        self.normals.column(i).dot(x) - self.rhs[i]
    }

    /// Most violated inactive inequality. Constraints in `tolerated` only
    /// count once their violation exceeds the degenerate tolerance.
    fn most_violated(&self, x: &DVector<f64>, active: &[usize], tolerated: &[usize]) -> Option<usize> {
        let mut worst = None;
        let mut worst_val = 0.0;
        for i in self.n_eq..self.rhs.len() {
            if active.contains(&i) {
                continue;
            }
            let s = self.slack(x, i);
            let rel = if tolerated.contains(&i) { DEGENERATE_TOL } else { VIOLATION_TOL };
            let tol = rel * (1.0 + self.rhs[i].abs());
            if s < -tol && s < worst_val {
                worst_val = s;
                worst = Some(i);
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Added {
    Yes,
    /// Dependent on the active set and violated only at rounding level.
    Tolerated,
    Infeasible,
}

struct ActiveSet {
    x: DVector<f64>,
    active: Vec<usize>,
    /// Orientation of each active normal; equalities may enter negated.
    signs: Vec<f64>,
    multipliers: Vec<f64>,
    l_inv: DMatrix<f64>,
    g: DMatrix<f64>,
    f: DVector<f64>,
}

impl ActiveSet {
    /// Makes constraint `p` active, dropping blocking inequalities along the
    /// way.
    fn add(&mut self, cs: &ConstraintSet, p: usize) -> Result<Added> {
        let is_eq = p < cs.n_eq;
        let mut normal = cs.normal(p);
        let mut rhs = cs.rhs[p];
        let mut sign = 1.0;
        // Equalities may be approached from either side.
        if is_eq && normal.dot(&self.x) - rhs > 0.0 {
            normal = -normal;
            rhs = -rhs;
            sign = -1.0;
        }
        let mut u_new = 0.0;

        loop {
            let slack = normal.dot(&self.x) - rhs;
            let w = &self.l_inv * &normal;
            let (w_perp, r) = self.project(cs, &w)?;

            // Dual step length limited by active inequalities.
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (k, (&a, &rk)) in self.active.iter().zip(r.iter()).enumerate() {
                if a >= cs.n_eq && rk > 0.0 {
                    let t = self.multipliers[k] / rk;
                    if t < t1 {
                        t1 = t;
                        drop = Some(k);
                    }
                }
            }

            let dependent = w_perp.norm() <= DEPENDENCE_TOL * w.norm();
            let t2 = if dependent {
                f64::INFINITY
            } else {
                (-slack / w_perp.norm_squared()).max(0.0)
            };

            let t = t1.min(t2);
            if t.is_infinite() {
                if !is_eq && slack >= -DEGENERATE_TOL * (1.0 + rhs.abs()) {
                    return Ok(Added::Tolerated);
                }
                return Ok(Added::Infeasible);
            }

            if !dependent {
                let z = self.l_inv.tr_mul(&w_perp);
                self.x.axpy(t, &z, 1.0);
            }
            for (m, rk) in self.multipliers.iter_mut().zip(r.iter()) {
                *m -= t * rk;
            }
            u_new += t;

            if t2 <= t1 {
                self.active.push(p);
                self.signs.push(sign);
                self.multipliers.push(u_new);
                self.resolve_primal(cs);
                return Ok(Added::Yes);
            }
            let k = drop.expect("finite t1 implies a blocking constraint");
            self.active.remove(k);
            self.signs.remove(k);
            self.multipliers.remove(k);
        }
    }

    /// Recomputes `x` as the minimizer over the active constraints taken as
    /// equalities, by a null-space solve. The dual updates accumulate error
    /// proportional to the conditioning of `G`; this keeps the active rows
    /// satisfied to the conditioning of the active normals instead.
    fn resolve_primal(&mut self, cs: &ConstraintSet) {
        let n = self.x.len();
        let k = self.active.len();
        if k == 0 || k > n {
            return;
        }
        let cols: Vec<DVector<f64>> = (0..k).map(|i| self.normal(cs, i)).collect();
        let rhs = DVector::from_iterator(k, (0..k).map(|i| cs.rhs[self.active[i]] * self.signs[i]));
        let qr = DMatrix::from_columns(&cols).qr();
        let q = qr.q();
        let Some(y) = qr.r().tr_solve_upper_triangular(&rhs) else {
            return;
        };
        let mut full_q = DMatrix::identity(n, n);
        qr.q_tr_mul(&mut full_q);
        // Rows k.. of Qᵀ span the null space of the active normals.
        let z = full_q.rows(k, n - k).transpose();
        let mut x = &q * y;
        if n > k {
            let reduced = z.tr_mul(&(&self.g * &z));
            let grad = z.tr_mul(&(&self.g * &x + &self.f));
            match reduced.cholesky() {
                Some(c) => x -= &z * c.solve(&grad),
                None => return,
            }
        }
        self.x = x;
    }

    fn normal(&self, cs: &ConstraintSet, k: usize) -> DVector<f64> {
        cs.normal(self.active[k]) * self.signs[k]
    }

    /// Splits `w = L⁻¹n` into the part orthogonal to the span of the active
    /// normals (in the `L⁻¹` metric) and the dual direction `r = R⁻¹Q₁ᵀw`.
    fn project(&self, cs: &ConstraintSet, w: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        if self.active.is_empty() {
            return Ok((w.clone(), DVector::zeros(0)));
        }
        let b_cols: Vec<DVector<f64>> = (0..self.active.len()).map(|k| &self.l_inv * self.normal(cs, k)).collect();
        let b = DMatrix::from_columns(&b_cols);
        let qr = b.qr();
        let q1 = qr.q();
        let rmat = qr.r();
        let d1 = q1.tr_mul(w);
        let mut w_perp = w - &q1 * &d1;
        let fix = q1.tr_mul(&w_perp);
        w_perp -= &q1 * &fix;
        let r = rmat
            .solve_upper_triangular(&(d1 + fix))
            .ok_or_else(|| Error::InvalidState("active constraint normals became dependent".into()))?;
        Ok((w_perp, r))
    }
}
