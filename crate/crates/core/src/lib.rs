//! Prioritized (lexicographic) task-space control and positional inverse
//! kinematics for 3T2R pointing tasks on serial revolute chains.
//!
//! * [`kinematics`] – chain model, forward kinematics, geometric Jacobians
//! * [`qp`] – dense convex QP kernel
//! * [`tasks`] – task errors/Jacobians, approach-axis control, error clamping
//! * [`ptsc`] – the prioritized cascade and velocity-level constraint builders
//! * [`pik`] – iterative prioritized positional IK
//! * [`scenario`] – scenario files, closed-loop runs, trace output

// `!(x > 0.0)` style checks are intentional: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod chain_file;
pub mod error;
pub mod kinematics;
pub mod pik;
pub mod ptsc;
pub mod qp;
pub mod scenario;
pub mod tasks;

pub use error::{Error, Result};
pub use kinematics::{AttachedFrame, Bounds, FramePose, JointLimits, JointSpec, JointState, KinematicChain};
pub use pik::{solve_pik, IkReport, PikParams, Termination};
pub use ptsc::{solve_ptsc, CascadeSolution, PrioritizedProblem, PriorityLevel};
pub use qp::{solve_qp, QpProblem, QpSolution, QpStatus};
pub use tasks::{Gains, Task, TaskError, TaskType};

pub use nalgebra;
