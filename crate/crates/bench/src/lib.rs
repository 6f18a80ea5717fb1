//! Fixtures shared by the benchmarks.

use std::path::PathBuf;

use lexispray_core::nalgebra::{DMatrix, DVector, Vector2, Vector3};
use lexispray_core::ptsc::{spraying_problem, LevelMode, SprayingSetup};
use lexispray_core::scenario::LoadedScenario;
use lexispray_core::{Gains, JointState, PrioritizedProblem, QpProblem, Task};

pub fn scenario(name: &str) -> LoadedScenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    LoadedScenario::from_file(path).expect("shipped scenario")
}

/// Chain, task stack and first initial guess of an IK example scenario.
pub fn ik_case(n: usize) -> (LoadedScenario, Vec<Task>, DVector<f64>) {
    let l = scenario(&format!("ik_example_{n}.json"));
    let tasks = l.tasks().expect("valid tasks");
    let q0 = DVector::from_vec(l.scenario.initial_guesses[0].clone());
    (l, tasks, q0)
}

/// Deterministic, well-spread entries in `[-1, 1]`.
fn entry(i: usize, j: usize, salt: f64) -> f64 {
    ((i as f64 + 1.0) * 12.9898 + (j as f64 + 1.0) * 78.233 + salt).sin()
}

/// Strictly convex `n`-variable QP with a box and `m` general inequalities,
/// several of them active at the optimum.
pub fn box_qp(n: usize, m: usize) -> QpProblem {
    let a = DMatrix::from_fn(n + 2, n, |i, j| entry(i, j, 0.3));
    let h = a.transpose() * &a + DMatrix::identity(n, n) * 0.1;
    let f = DVector::from_fn(n, |i, _| 3.0 * entry(i, 7, 1.1));
    let c = DMatrix::from_fn(m, n, |i, j| entry(i, j, 2.7));
    let d = DVector::from_fn(m, |i, _| -0.2 + 0.1 * entry(i, 3, 0.9));
    QpProblem::new(h, f)
        .with_inequalities(c, d)
        .with_bounds(DVector::from_element(n, -0.5), DVector::from_element(n, 0.5))
}

/// One control step of the slow spraying scenario, mid-sweep.
pub fn spraying_step(mode: LevelMode) -> PrioritizedProblem {
    let l = scenario("spray_slow.json");
    let q = DVector::from_vec(l.scenario.initial_q.clone().expect("initial_q"));
    let state = JointState::new(q.clone(), DVector::from_element(q.len(), 0.05)).expect("state");
    let setup = SprayingSetup {
        frame: l.scenario.frame.clone(),
        gains: Gains::new(1.0, 2.0).expect("gains"),
        dt: l.scenario.dt,
        mode,
        position_limits: true,
    };
    let v_c = Vector3::new(0.0, 0.0, -0.2);
    let omega_c = Vector2::new(0.05, -0.02);
    spraying_problem(&l.chain, &state, &setup, &v_c, &omega_c, &q, &[])
        .expect("spraying problem")
        .problem
}
