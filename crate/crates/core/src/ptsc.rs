//! Constrained prioritized task-space control.
//!
//! Each priority level is a least-squares objective `‖b − J·x‖²`. Levels are
//! solved in order; once level `k` is solved with minimizer `x*ₖ`, the equality
//! `Jₖ·x = Jₖ·x*ₖ` is added for every later level. For a least-squares
//! objective over a convex feasible set the optimal value of `Jₖ·x` is unique,
//! so this equality is exactly the set of minimizers of level `k` and the
//! cascade needs no quadratic constraints.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::{local_xy_rows, JointLimits, JointState, KinematicChain};
use crate::qp::{solve_qp_with, QpProblem, QpSettings, QpSolution, QpStatus};
use crate::tasks::{joint_velocity_command, Gains};

#[derive(Debug, Clone, PartialEq)]
pub struct PriorityLevel {
    pub j: DMatrix<f64>,
    pub b: DVector<f64>,
    pub blend: Option<LevelBlend>,
}

/// Secondary term `weight · ‖b − J·x‖²` sharing a priority level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelBlend {
    pub j: DMatrix<f64>,
    pub b: DVector<f64>,
    pub weight: f64,
}

impl PriorityLevel {
    pub fn new(j: DMatrix<f64>, b: DVector<f64>) -> Self {
        Self { j, b, blend: None }
    }

    pub fn with_blend(mut self, j: DMatrix<f64>, b: DVector<f64>, weight: f64) -> Self {
        self.blend = Some(LevelBlend { j, b, weight });
        self
    }

    /// The level as one stacked least-squares system `‖c − M·x‖²`.
    fn stacked(&self) -> (DMatrix<f64>, DVector<f64>) {
        match &self.blend {
            None => (self.j.clone(), self.b.clone()),
            Some(bl) => {
                let s = bl.weight.sqrt();
                let n = self.j.ncols();
                let (m1, m2) = (self.j.nrows(), bl.j.nrows());
                let mut m = DMatrix::zeros(m1 + m2, n);
                m.rows_mut(0, m1).copy_from(&self.j);
                m.rows_mut(m1, m2).copy_from(&(&bl.j * s));
                let mut c = DVector::zeros(m1 + m2);
                c.rows_mut(0, m1).copy_from(&self.b);
                c.rows_mut(m1, m2).copy_from(&(&bl.b * s));
                (m, c)
            }
        }
    }

    /// `‖b − J·x‖`, including the weighted blend term when present.
    pub fn residual(&self, x: &DVector<f64>) -> f64 {
        let (m, c) = self.stacked();
        (c - m * x).norm()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrioritizedProblem {
    /// Highest priority first.
    pub levels: Vec<PriorityLevel>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    /// Rows of `A_in·x ≥ b_in`.
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl PrioritizedProblem {
    /// Unconstrained problem in `n` variables.
    pub fn new(n: usize, levels: Vec<PriorityLevel>) -> Self {
        Self {
            levels,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.lb.len()
    }

    pub fn with_bounds(mut self, lb: DVector<f64>, ub: DVector<f64>) -> Self {
        self.lb = lb;
        self.ub = ub;
        self
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

    /// Appends one `a·x ≥ b` row.
    pub fn push_inequality(&mut self, row: &LinearInequality) {
        let n = self.dim();
        let m = self.a_in.nrows();
        let mut a = DMatrix::zeros(m + 1, n);
        a.rows_mut(0, m).copy_from(&self.a_in);
        a.row_mut(m).copy_from(&row.a.transpose());
        self.a_in = a;
        self.b_in = self.b_in.push(row.b);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if self.levels.is_empty() {
            return Err(Error::Validation("prioritized problem has no levels".into()));
        }
        for (i, level) in self.levels.iter().enumerate() {
            if level.j.ncols() != n {
                return Err(Error::dim(format!("level {} columns", i + 1), n, level.j.ncols()));
            }
            if level.j.nrows() != level.b.len() {
                return Err(Error::dim(format!("level {} target", i + 1), level.j.nrows(), level.b.len()));
            }
            if let Some(bl) = &level.blend {
                if bl.j.ncols() != n || bl.j.nrows() != bl.b.len() {
                    return Err(Error::dim(format!("level {} blend", i + 1), n, bl.j.ncols()));
                }
                if !(bl.weight > 0.0) {
                    return Err(Error::Validation(format!("level {} blend weight must be positive", i + 1)));
                }
            }
        }
        Ok(())
    }
}

/// One row of `a·x ≥ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearInequality {
    pub a: DVector<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeSolution {
    pub x: DVector<f64>,
    /// `‖b − J·x‖` of every level at `x`, including levels not solved.
    pub level_residuals: Vec<f64>,
    /// QP status of each level that was attempted.
    pub statuses: Vec<QpStatus>,
}

impl CascadeSolution {
    /// Number of levels whose minimizer set `x` lies in.
    pub fn solved_levels(&self) -> usize {
        self.statuses.iter().take_while(|s| **s == QpStatus::Optimal).count()
    }

    pub fn is_complete(&self) -> bool {
        self.solved_levels() == self.level_residuals.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CascadeSettings {
    /// εI added to every level's Hessian.
    pub regularization: f64,
    /// Re-solves of each level with the εI term centered on the previous
    /// solution; each shrinks the regularization bias by roughly `ε/σ²`.
    pub refinements: usize,
    pub qp: QpSettings,
}

impl Default for CascadeSettings {
    fn default() -> Self {
        Self {
            regularization: 1e-9,
            refinements: 2,
            qp: QpSettings::default(),
        }
    }
}

pub fn solve_ptsc(problem: &PrioritizedProblem) -> Result<CascadeSolution> {
    solve_ptsc_with(problem, &CascadeSettings::default(), None)
}

/// Called with the 1-based level index and each QP solved for it.
pub type QpObserver<'a> = &'a mut dyn FnMut(usize, &QpProblem, &QpSolution);

pub fn solve_ptsc_with(
    problem: &PrioritizedProblem,
    settings: &CascadeSettings,
    mut observer: Option<QpObserver<'_>>,
) -> Result<CascadeSolution> {
    problem.validate()?;
    let n = problem.dim();
    let eye = DMatrix::<f64>::identity(n, n);

    let mut eq_rows: Vec<DMatrix<f64>> = vec![problem.a_eq.clone()];
    let mut eq_rhs: Vec<DVector<f64>> = vec![problem.b_eq.clone()];
    let mut x = None;
    let mut statuses = Vec::with_capacity(problem.levels.len());

    for (i, level) in problem.levels.iter().enumerate() {
        let (m, c) = level.stacked();
        let h = m.tr_mul(&m) + &eye * settings.regularization;
        let lsq_f = -m.tr_mul(&c);
        let (a_eq, b_eq) = (vstack(&eq_rows, n), vcat(&eq_rhs));

        let mut qp = QpProblem::new(h, lsq_f.clone())
            .with_equalities(a_eq, b_eq)
            .with_inequalities(problem.a_in.clone(), problem.b_in.clone())
            .with_bounds(problem.lb.clone(), problem.ub.clone());

        let mut sol = solve_qp_with(&qp, &settings.qp)?;
        if let Some(obs) = observer.as_mut() {
            obs(i + 1, &qp, &sol);
        }
        for _ in 0..settings.refinements {
            if !sol.is_optimal() {
                break;
            }
            qp.f = &lsq_f - &sol.x * settings.regularization;
            let next = solve_qp_with(&qp, &settings.qp)?;
            if let Some(obs) = observer.as_mut() {
                obs(i + 1, &qp, &next);
            }
            sol = next;
        }

        statuses.push(sol.status);
        if !sol.is_optimal() {
            if i == 0 && sol.status == QpStatus::PrimalInfeasible {
                return Err(Error::Infeasible { level: 1 });
            }
            break;
        }
        // Rounding can leave the optimum a hair outside the box; the fixed
        // residual must stay attainable inside it.
        let inside = sol.x.zip_zip_map(&problem.lb, &problem.ub, |v, l, u| v.clamp(l, u));
        eq_rhs.push(&m * &inside);
        eq_rows.push(m);
        x = Some(sol.x);
    }

    let x = match x {
        Some(x) => x,
        None => return Err(Error::Infeasible { level: 1 }),
    };
    let level_residuals = problem.levels.iter().map(|l| l.residual(&x)).collect();
    Ok(CascadeSolution {
        x,
        level_residuals,
        statuses,
    })
}

fn vstack(blocks: &[DMatrix<f64>], n: usize) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, n);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}

fn vcat(blocks: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_iterator(blocks.iter().map(|b| b.len()).sum(), blocks.iter().flat_map(|b| b.iter().copied()))
}

/// Box bounds on joint velocity for one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityBounds {
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
    /// Joints whose velocity and acceleration limits did not intersect; both
    /// bounds were pinned to the nearest velocity limit.
    pub collapsed: Vec<bool>,
}

/// Intersection of the velocity limits with the one-step acceleration limits
/// `qd_prev + acc·dt`.
pub fn build_velocity_constraints(limits: &[JointLimits], qd_prev: &DVector<f64>, dt: f64) -> Result<VelocityBounds> {
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    if limits.len() != qd_prev.len() {
        return Err(Error::dim("previous joint velocity", limits.len(), qd_prev.len()));
    }
    let n = limits.len();
    let mut lb = DVector::zeros(n);
    let mut ub = DVector::zeros(n);
    let mut collapsed = vec![false; n];
    for (i, lim) in limits.iter().enumerate() {
        let lo = lim.velocity.lo.max(qd_prev[i] + lim.acceleration.lo * dt);
        let hi = lim.velocity.hi.min(qd_prev[i] + lim.acceleration.hi * dt);
        if lo > hi {
            let v = if qd_prev[i] > lim.velocity.hi {
                lim.velocity.hi
            } else {
                lim.velocity.lo
            };
            lb[i] = v;
            ub[i] = v;
            collapsed[i] = true;
        } else {
            lb[i] = lo;
            ub[i] = hi;
        }
    }
    Ok(VelocityBounds { lb, ub, collapsed })
}

/// Tightens velocity bounds so that one step of `dt` stays inside the joint
/// position limits. Joints where that would empty the box keep their bounds.
pub fn apply_position_limits(bounds: &mut VelocityBounds, limits: &[JointLimits], q: &DVector<f64>, dt: f64) {
    for (i, lim) in limits.iter().enumerate() {
        let lo = bounds.lb[i].max((lim.position.lo - q[i]) / dt);
        let hi = bounds.ub[i].min((lim.position.hi - q[i]) / dt);
        if lo <= hi {
            bounds.lb[i] = lo;
            bounds.ub[i] = hi;
        }
    }
}

/// Linearized one-step floor on a frame's height: `J_z·q̇·dt ≥ z_min − z`.
pub fn build_height_constraint(
    chain: &KinematicChain,
    q: &DVector<f64>,
    frame: &str,
    z_min: f64,
    dt: f64,
) -> Result<LinearInequality> {
    if !(dt > 0.0) {
        return Err(Error::Validation(format!("dt must be positive, got {dt}")));
    }
    let (pose, jac) = chain.pose_and_jacobian(q, frame)?;
    Ok(LinearInequality {
        a: jac.row(2).transpose() * dt,
        b: z_min - pose.position.z,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelMode {
    /// Translation, then rotation, then joint posture.
    ThreeLevel,
    /// Translation, then rotation blended with joint posture at `weight`.
    TwoLevelBlend { weight: f64 },
}

/// Static configuration of the spraying controller.
#[derive(Debug, Clone, PartialEq)]
pub struct SprayingSetup {
    pub frame: String,
    pub gains: Gains,
    pub dt: f64,
    pub mode: LevelMode,
    pub position_limits: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SprayingProblem {
    pub problem: PrioritizedProblem,
    pub bounds: VelocityBounds,
    /// Translational, local x/y rotational and posture Jacobians.
    pub j_translation: DMatrix<f64>,
    pub j_rotation: DMatrix<f64>,
    /// Posture command `K_P,q·(q_d − q)`.
    pub qd_command: DVector<f64>,
}

impl SprayingProblem {
    /// Residuals of the translational, rotational and posture tasks at `qd`,
    /// independent of how they were grouped into levels.
    pub fn task_residuals(&self, qd: &DVector<f64>, v_c: &Vector3<f64>, omega_c: &Vector2<f64>) -> [f64; 3] {
        let vt = DVector::from_column_slice(v_c.as_slice());
        let wr = DVector::from_column_slice(omega_c.as_slice());
        [
            (vt - &self.j_translation * qd).norm(),
            (wr - &self.j_rotation * qd).norm(),
            (&self.qd_command - qd).norm(),
        ]
    }
}

/// Builds the velocity-level spraying problem for one control step.
pub fn spraying_problem(
    chain: &KinematicChain,
    state: &JointState,
    setup: &SprayingSetup,
    v_c: &Vector3<f64>,
    omega_c: &Vector2<f64>,
    q_d: &DVector<f64>,
    extra_ineq: &[LinearInequality],
) -> Result<SprayingProblem> {
    let n = chain.dof();
    if state.dof() != n {
        return Err(Error::dim("joint state", n, state.dof()));
    }
    if !v_c.iter().all(|v| v.is_finite()) || !omega_c.iter().all(|v| v.is_finite()) {
        return Err(Error::Validation("non-finite velocity command".into()));
    }
    let (pose, jac) = chain.pose_and_jacobian(&state.q, &setup.frame)?;
    let j_translation = jac.rows(0, 3).into_owned();
    let j_rotation = local_xy_rows(&pose, &jac);
    let qd_command = joint_velocity_command(&state.q, q_d, &setup.gains)?;

    let limits: Vec<JointLimits> = chain.joints().iter().map(|j| j.limits).collect();
    let mut bounds = build_velocity_constraints(&limits, &state.qd, setup.dt)?;
    if setup.position_limits {
        apply_position_limits(&mut bounds, &limits, &state.q, setup.dt);
    }

    let translation = PriorityLevel::new(j_translation.clone(), DVector::from_column_slice(v_c.as_slice()));
    let rotation = PriorityLevel::new(j_rotation.clone(), DVector::from_column_slice(omega_c.as_slice()));
    let eye = DMatrix::identity(n, n);
    let levels = match setup.mode {
        LevelMode::ThreeLevel => vec![translation, rotation, PriorityLevel::new(eye, qd_command.clone())],
        LevelMode::TwoLevelBlend { weight } => {
            vec![translation, rotation.with_blend(eye, qd_command.clone(), weight)]
        }
    };

    let mut problem = PrioritizedProblem::new(n, levels).with_bounds(bounds.lb.clone(), bounds.ub.clone());
    for row in extra_ineq {
        if row.a.len() != n {
            return Err(Error::dim("inequality row", n, row.a.len()));
        }
        problem.push_inequality(row);
    }
    Ok(SprayingProblem {
        problem,
        bounds,
        j_translation,
        j_rotation,
        qd_command,
    })
}
