//! Prioritized positional inverse kinematics.
//!
//! Each iteration linearizes every task at the current joint positions,
//! clamps the task errors, solves the prioritized cascade for a bounded joint
//! step and applies it. The solve stops once the summed task errors or the
//! summed change of the task errors between iterations drops below its
//! threshold. Close to a fixed point the step bound is tightened ("polishing")
//! to refine the answer.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::KinematicChain;
use crate::ptsc::{solve_ptsc_with, CascadeSettings, PrioritizedProblem, PriorityLevel};
use crate::tasks::{clamp_task_error, task_error_and_jacobian, Clamps, Task, TaskError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PikParams {
    /// Enforce joint position limits on every iterate.
    pub use_constrained: bool,
    /// Stop once the summed task error norms fall below this.
    pub err_norm_threshold: f64,
    /// Stop once the summed norms of the per-iteration error change fall below this.
    pub grad_threshold: f64,
    /// Largest change of any joint per iteration, rad.
    pub step_bound: f64,
    pub polish: bool,
    pub polish_grad_threshold: f64,
    /// rad
    pub polish_step_bound: f64,
    /// m
    pub pos_clamp: f64,
    /// rad
    pub ori_clamp: f64,
    pub max_iterations: usize,
    /// s
    pub max_time: f64,
}

impl Default for PikParams {
    fn default() -> Self {
        Self {
            use_constrained: true,
            err_norm_threshold: 1e-4,
            grad_threshold: 1e-3,
            step_bound: 10f64.to_radians(),
            polish: true,
            polish_grad_threshold: 1e-2,
            polish_step_bound: 3f64.to_radians(),
            pos_clamp: 0.3,
            ori_clamp: 30f64.to_radians(),
            max_iterations: 500,
            max_time: 1.0,
        }
    }
}

impl PikParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("err_norm_threshold", self.err_norm_threshold),
            ("grad_threshold", self.grad_threshold),
            ("step_bound", self.step_bound),
            ("polish_grad_threshold", self.polish_grad_threshold),
            ("polish_step_bound", self.polish_step_bound),
            ("pos_clamp", self.pos_clamp),
            ("ori_clamp", self.ori_clamp),
            ("max_time", self.max_time),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Validation(format!("{name} must be positive, got {v}")));
        }
        if self.polish_step_bound > self.step_bound {
            return Err(Error::Validation("polish_step_bound exceeds step_bound".into()));
        }
        Ok(())
    }

    fn clamps(&self) -> Clamps {
        Clamps {
            position: self.pos_clamp,
            orientation: self.ori_clamp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    ErrorBelowThreshold,
    GradientStalled,
    MaxIterations,
    MaxTime,
    /// The cascade failed at the top level; `q_final` is the last valid iterate.
    SolverFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskResidual {
    pub task: usize,
    pub kind: String,
    /// Unclamped error norm at `q_final` (m, rad or joint-space rad by task kind).
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkReport {
    pub q_final: Vec<f64>,
    pub per_task_error: Vec<TaskResidual>,
    pub iterations: usize,
    pub termination: Termination,
    /// s
    pub wall_time: f64,
    pub polished: bool,
}

/// State handed to an observer before each step is taken.
#[derive(Debug, Clone)]
pub struct IkIterate<'a> {
    pub iteration: usize,
    pub q: &'a DVector<f64>,
    /// Raw (unclamped) task errors at `q`.
    pub errors: &'a [TaskError],
    pub step_bound: f64,
    /// Joint step about to be applied.
    pub step: &'a DVector<f64>,
}

pub fn solve_pik(chain: &KinematicChain, q_initial: &DVector<f64>, tasks: &[Task], params: &PikParams) -> Result<IkReport> {
    solve_pik_with(chain, q_initial, tasks, params, None)
}

struct Evaluated {
    errors: Vec<TaskError>,
    jacobians: Vec<DMatrix<f64>>,
    blends: Vec<Option<(TaskError, DMatrix<f64>, f64)>>,
}

fn evaluate(chain: &KinematicChain, q: &DVector<f64>, tasks: &[Task]) -> Result<Evaluated> {
    let mut out = Evaluated {
        errors: Vec::with_capacity(tasks.len()),
        jacobians: Vec::with_capacity(tasks.len()),
        blends: Vec::with_capacity(tasks.len()),
    };
    for task in tasks {
        let (e, j) = task_error_and_jacobian(chain, q, &task.kind)?;
        if !e.e.iter().chain(j.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite {} error at q = {q:?}", task.kind.name())));
        }
        out.errors.push(e);
        out.jacobians.push(j);
        out.blends.push(match &task.blend {
            Some(b) => {
                let (e, j) = task_error_and_jacobian(chain, q, &b.kind)?;
                Some((e, j, b.weight))
            }
            None => None,
        });
    }
    Ok(out)
}

pub fn solve_pik_with(
    chain: &KinematicChain,
    q_initial: &DVector<f64>,
    tasks: &[Task],
    params: &PikParams,
    mut observer: Option<&mut dyn FnMut(&IkIterate<'_>)>,
) -> Result<IkReport> {
    params.validate()?;
    if tasks.is_empty() {
        return Err(Error::Validation("no tasks given".into()));
    }
    let n = chain.dof();
    if q_initial.len() != n {
        return Err(Error::dim("initial joint vector", n, q_initial.len()));
    }
    for task in tasks {
        task.kind.validate(chain)?;
        if let Some(b) = &task.blend {
            b.kind.validate(chain)?;
            if !(b.weight > 0.0) {
                return Err(Error::InvalidTask("blend weight must be positive".into()));
            }
        }
    }

    let start = Instant::now();
    let max_time = Duration::from_secs_f64(params.max_time);
    let clamps = params.clamps();
    let limits = chain.position_limits();
    let settings = CascadeSettings::default();

    let mut q = q_initial.clone();
    if params.use_constrained {
        for (qi, lim) in q.iter_mut().zip(&limits) {
            *qi = qi.clamp(lim.lo, lim.hi);
        }
    }

    let mut step_bound = params.step_bound;
    let mut polished = false;
    let mut iterations = 0;
    let mut previous: Option<Vec<TaskError>> = None;

    let (termination, last) = loop {
        let eval = evaluate(chain, &q, tasks)?;
        let err_sum: f64 = eval.errors.iter().map(|e| e.raw_norm).sum();
        let grad_sum = previous.as_ref().map(|prev| {
            eval.errors
                .iter()
                .zip(prev)
                .map(|(cur, prev)| gradient_update(cur, prev).norm())
                .sum::<f64>()
        });

        if err_sum < params.err_norm_threshold {
            break (Termination::ErrorBelowThreshold, eval.errors);
        }
        if grad_sum.is_some_and(|g| g < params.grad_threshold) {
            break (Termination::GradientStalled, eval.errors);
        }
        if params.polish && !polished && grad_sum.is_some_and(|g| g < params.polish_grad_threshold) {
            step_bound = params.polish_step_bound;
            polished = true;
        }
        if iterations >= params.max_iterations {
            break (Termination::MaxIterations, eval.errors);
        }
        if start.elapsed() > max_time {
            break (Termination::MaxTime, eval.errors);
        }

        let levels = tasks
            .iter()
            .enumerate()
            .map(|(i, task)| {
                let target = clamp_task_error(&eval.errors[i], &task.kind, &clamps).e;
                let level = PriorityLevel::new(eval.jacobians[i].clone(), target);
                match (&eval.blends[i], &task.blend) {
                    (Some((e, j, w)), Some(b)) => {
                        let target = clamp_task_error(e, &b.kind, &clamps).e;
                        level.with_blend(j.clone(), target, *w)
                    }
                    _ => level,
                }
            })
            .collect();

        let mut lb = DVector::from_element(n, -step_bound);
        let mut ub = DVector::from_element(n, step_bound);
        if params.use_constrained {
            for i in 0..n {
                lb[i] = lb[i].max(limits[i].lo - q[i]).min(0.0);
                ub[i] = ub[i].min(limits[i].hi - q[i]).max(0.0);
            }
        }
        let problem = PrioritizedProblem::new(n, levels).with_bounds(lb.clone(), ub.clone());
        let step = match solve_ptsc_with(&problem, &settings, None) {
            Ok(sol) => sol.x.zip_zip_map(&lb, &ub, |x, l, u| x.clamp(l, u)),
            Err(Error::Infeasible { .. }) => break (Termination::SolverFailed, eval.errors),
            Err(e) => return Err(e),
        };

        if let Some(obs) = observer.as_mut() {
            obs(&IkIterate {
                iteration: iterations,
                q: &q,
                errors: &eval.errors,
                step_bound,
                step: &step,
            });
        }
        q += step;
        iterations += 1;
        previous = Some(eval.errors);
    };

    let per_task_error = tasks
        .iter()
        .zip(&last)
        .enumerate()
        .map(|(i, (task, e))| TaskResidual {
            task: i,
            kind: task.kind.name().to_string(),
            error: e.raw_norm,
        })
        .collect();

    Ok(IkReport {
        q_final: q.iter().copied().collect(),
        per_task_error,
        iterations,
        termination,
        wall_time: start.elapsed().as_secs_f64(),
        polished,
    })
}

/// Change of a task's raw error between consecutive iterations.
pub fn gradient_update(current: &TaskError, previous: &TaskError) -> DVector<f64> {
    &current.e - &previous.e
}
