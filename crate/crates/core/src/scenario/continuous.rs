//! Closed-loop continuous spraying: one prioritized velocity solve per
//! control step, integrated with explicit Euler.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{LoadedScenario, Mode, TraceRow};
use crate::error::{Error, Result};
use crate::kinematics::JointState;
use crate::ptsc::{build_height_constraint, solve_ptsc_with, spraying_problem, CascadeSettings, SprayingSetup};
use crate::qp::{QpProblem, QpSolution, QpStatus};
use crate::tasks::{angular_velocity_command, approach_axis_error};

/// Relative distance below which a velocity counts as sitting on its bound.
const ACTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// The step at `t` had no feasible solution; the trace stops before it.
    Truncated { step: usize, t: f64, reason: String },
}

#[derive(Debug, Clone)]
pub struct ContinuousRun {
    pub trace: Vec<TraceRow>,
    pub status: RunStatus,
    /// s
    pub wall_time: f64,
}

/// One QP solved inside the cascade, in plain arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpRecord {
    pub step: usize,
    pub level: usize,
    pub h: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_in: Vec<Vec<f64>>,
    pub b_in: Vec<f64>,
    pub lb: Vec<f64>,
    pub ub: Vec<f64>,
    pub x: Vec<f64>,
    pub status: QpStatus,
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
}

impl QpRecord {
    pub fn new(step: usize, level: usize, qp: &QpProblem, sol: &QpSolution) -> Self {
        let rows = |m: &nalgebra::DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect()).collect();
        let vec = |v: &DVector<f64>| v.iter().copied().collect();
        Self {
            step,
            level,
            h: rows(&qp.h),
            f: vec(&qp.f),
            a_eq: rows(&qp.a_eq),
            b_eq: vec(&qp.b_eq),
            a_in: rows(&qp.a_in),
            b_in: vec(&qp.b_in),
            lb: vec(&qp.lb),
            ub: vec(&qp.ub),
            x: vec(&sol.x),
            status: sol.status,
            objective: sol.objective,
            iterations: sol.iterations,
            kkt_residual: sol.kkt_residual,
        }
    }
}

pub fn run_continuous(loaded: &LoadedScenario) -> Result<ContinuousRun> {
    run_continuous_with(loaded, None)
}

/// As [`run_continuous`]; `qp_sink` receives every QP the cascade solves.
pub fn run_continuous_with(
    loaded: &LoadedScenario,
    mut qp_sink: Option<&mut dyn FnMut(QpRecord)>,
) -> Result<ContinuousRun> {
    let s = &loaded.scenario;
    let chain = &loaded.chain;
    if s.mode != Mode::ContinuousSpraying {
        return Err(Error::Validation("scenario is not a continuous_spraying run".into()));
    }
    s.validate_with(chain)?;
    let start = Instant::now();

    let q0 = DVector::from_vec(s.initial_q.clone().unwrap_or_default());
    let posture = s.posture.clone().map_or_else(|| q0.clone(), DVector::from_vec);
    let profile = s.velocity_profile.as_ref().expect("validated");
    let setup = SprayingSetup {
        frame: s.frame.clone(),
        gains: s.gains()?,
        dt: s.dt,
        mode: s.ptsc_mode.into(),
        position_limits: s.position_limits,
    };
    let settings = CascadeSettings::default();

    let mut state = JointState::at_rest(q0);
    let mut trace = Vec::with_capacity(s.steps() + 1);
    let mut status = RunStatus::Completed;

    for step in 0..=s.steps() {
        let t = step as f64 * s.dt;
        let pose = chain.forward_kinematics(&state.q, &s.frame)?;
        let v_c = profile.sample(t);
        let err = approach_axis_error(&pose, &s.desired_axis.sample(t));
        let omega_c = angular_velocity_command(&err.local, &setup.gains);

        let height = match &s.height_constraint {
            Some(h) => Some(build_height_constraint(chain, &state.q, &h.frame, h.z_min, h.horizon(s.dt))?),
            None => None,
        };
        let problem = spraying_problem(chain, &state, &setup, &v_c, &omega_c, &posture, height.as_slice())?;

        let mut observer = |level: usize, qp: &QpProblem, sol: &QpSolution| {
            if let Some(sink) = qp_sink.as_mut() {
                sink(QpRecord::new(step, level, qp, sol));
            }
        };
        let solution = match solve_ptsc_with(&problem.problem, &settings, Some(&mut observer)) {
            Ok(sol) => sol,
            Err(Error::Infeasible { level }) => {
                status = RunStatus::Truncated {
                    step,
                    t,
                    reason: format!("no feasible joint velocity at priority level {level}"),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        let bounds = &problem.bounds;
        let qd = solution.x.zip_zip_map(&bounds.lb, &bounds.ub, |v, l, u| v.clamp(l, u));

        let on_bound = |v: f64, b: f64| (v - b).abs() <= ACTIVE_TOL * (1.0 + b.abs());
        let active_bounds = (0..chain.dof())
            .filter(|&i| on_bound(qd[i], bounds.lb[i]) || on_bound(qd[i], bounds.ub[i]))
            .fold(0u64, |mask, i| mask | (1 << i));
        let height_flag = height
            .as_ref()
            .is_some_and(|row| row.a.dot(&qd) - row.b <= ACTIVE_TOL * (1.0 + row.b.abs()));

        trace.push(TraceRow {
            t,
            q: state.q.iter().copied().collect(),
            qd: qd.iter().copied().collect(),
            spray_pos: pose.position.into(),
            spray_axis: pose.approach_axis().into(),
            level_residuals: problem.task_residuals(&qd, &v_c, &omega_c),
            active_bounds,
            height_flag,
        });

        state.q += &qd * s.dt;
        state.qd = qd;
    }

    Ok(ContinuousRun {
        trace,
        status,
        wall_time: start.elapsed().as_secs_f64(),
    })
}
