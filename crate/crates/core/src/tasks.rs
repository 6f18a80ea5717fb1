//! Task definitions: errors, Jacobians, approach-axis control and error clamping.
//!
//! Every task error `e` is oriented so that a joint step `Δq` with `J·Δq = e`
//! drives the task toward its target to first order.

use nalgebra::{DMatrix, DVector, Unit, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::kinematics::{local_xy_rows, FramePose, KinematicChain};

/// Below this `app_z · desired` the approach axes count as antiparallel.
const ANTIPARALLEL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum TaskType {
    FramePose { frame: String, target: FramePose },
    FramePosition { frame: String, target: Vector3<f64> },
    FrameOrientation { frame: String, target: UnitQuaternion<f64> },
    /// Only the local z-axis of the frame is controlled.
    FrameApproachAxis { frame: String, target: Unit<Vector3<f64>> },
    JointPosture { target: DVector<f64> },
}

impl TaskType {
    pub fn frame_position(frame: impl Into<String>, target: Vector3<f64>) -> Self {
        TaskType::FramePosition {
            frame: frame.into(),
            target,
        }
    }

    /// `axis` is normalized; it must be non-zero.
    pub fn approach_axis(frame: impl Into<String>, axis: Vector3<f64>) -> Result<Self> {
        let n = axis.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::InvalidTask(format!("approach axis {axis:?} has no direction")));
        }
        Ok(TaskType::FrameApproachAxis {
            frame: frame.into(),
            target: Unit::new_normalize(axis),
        })
    }

    pub fn frame(&self) -> Option<&str> {
        match self {
            TaskType::FramePose { frame, .. }
            | TaskType::FramePosition { frame, .. }
            | TaskType::FrameOrientation { frame, .. }
            | TaskType::FrameApproachAxis { frame, .. } => Some(frame),
            TaskType::JointPosture { .. } => None,
        }
    }

    /// Length of the error vector.
    pub fn dim(&self, dof: usize) -> usize {
        match self {
            TaskType::FramePose { .. } => 6,
            TaskType::FramePosition { .. } | TaskType::FrameOrientation { .. } => 3,
            TaskType::FrameApproachAxis { .. } => 2,
            TaskType::JointPosture { .. } => dof,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskType::FramePose { .. } => "frame_pose",
            TaskType::FramePosition { .. } => "frame_position",
            TaskType::FrameOrientation { .. } => "frame_orientation",
            TaskType::FrameApproachAxis { .. } => "frame_approach_axis",
            TaskType::JointPosture { .. } => "joint_posture",
        }
    }

    /// Checks the task against a chain: frame exists, posture length matches.
    pub fn validate(&self, chain: &KinematicChain) -> Result<()> {
        match self {
            TaskType::JointPosture { target } if target.len() != chain.dof() => {
                Err(Error::dim("joint posture target", chain.dof(), target.len()))
            }
            TaskType::JointPosture { .. } => Ok(()),
            _ => chain.frame(self.frame().expect("frame task")).map(|_| ()),
        }
    }
}

/// A task with an optional secondary term blended into the same priority
/// level as `weight · ‖e₂ − J₂Δq‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub kind: TaskType,
    pub blend: Option<Blend>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blend {
    pub kind: TaskType,
    pub weight: f64,
}

impl From<TaskType> for Task {
    fn from(kind: TaskType) -> Self {
        Task { kind, blend: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskError {
    pub e: DVector<f64>,
    /// Norm before clamping.
    pub raw_norm: f64,
    pub clamped: bool,
}

impl TaskError {
    pub fn new(e: DVector<f64>) -> Self {
        let raw_norm = e.norm();
        Self {
            e,
            raw_norm,
            clamped: false,
        }
    }
}

/// Proportional gains, both in 1/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gains {
    pub kp_joint: f64,
    pub kp_omega: f64,
}

impl Gains {
    pub fn new(kp_joint: f64, kp_omega: f64) -> Result<Self> {
        if !(kp_joint > 0.0 && kp_omega > 0.0) {
            return Err(Error::Validation(format!(
                "gains must be positive (kp_joint {kp_joint}, kp_omega {kp_omega})"
            )));
        }
        Ok(Self { kp_joint, kp_omega })
    }
}

impl Default for Gains {
    fn default() -> Self {
        Self {
            kp_joint: 1.0,
            kp_omega: 2.0,
        }
    }
}

/// Clamp magnitudes: meters for position-like errors, radians for the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamps {
    pub position: f64,
    pub orientation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproachError {
    /// Angle between the current and desired approach axes.
    pub alpha: f64,
    /// `alpha · axis` expressed in the current frame, z dropped.
    pub local: Vector2<f64>,
}

pub fn approach_axis_error(current: &FramePose, desired: &Unit<Vector3<f64>>) -> ApproachError {
    let app = current.approach_axis();
    let cross = app.cross(desired);
    let dot = app.dot(desired);
    let rot = current.rotation_matrix();

    if dot < -1.0 + ANTIPARALLEL_TOL {
        // The rotation axis is undefined; use the frame's own x-axis.
        return ApproachError {
            alpha: std::f64::consts::PI,
            local: Vector2::new(std::f64::consts::PI, 0.0),
        };
    }
    // atan2 form of arccos(app · desired); accurate near alignment.
    let alpha = cross.norm().atan2(dot);
    let sin = cross.norm();
    if sin == 0.0 {
        return ApproachError {
            alpha,
            local: Vector2::zeros(),
        };
    }
    let local = rot.transpose() * (cross * (alpha / sin));
    debug_assert!(local.z.abs() <= 1e-9 * (1.0 + alpha), "local z error {}", local.z);
    ApproachError {
        alpha,
        local: local.xy(),
    }
}

pub fn angular_velocity_command(alpha_local: &Vector2<f64>, gains: &Gains) -> Vector2<f64> {
    alpha_local * gains.kp_omega
}

pub fn joint_velocity_command(q: &DVector<f64>, q_d: &DVector<f64>, gains: &Gains) -> Result<DVector<f64>> {
    if q.len() != q_d.len() {
        return Err(Error::dim("desired joint posture", q.len(), q_d.len()));
    }
    Ok((q_d - q) * gains.kp_joint)
}

/// Rotation vector of `target · currentᵀ`.
fn orientation_error(current: &UnitQuaternion<f64>, target: &UnitQuaternion<f64>) -> Vector3<f64> {
    (target * current.inverse()).scaled_axis()
}

pub fn task_error_and_jacobian(
    chain: &KinematicChain,
    q: &DVector<f64>,
    task: &TaskType,
) -> Result<(TaskError, DMatrix<f64>)> {
    if let TaskType::JointPosture { target } = task {
        if target.len() != chain.dof() || q.len() != chain.dof() {
            return Err(Error::dim("joint posture", chain.dof(), target.len().min(q.len())));
        }
        return Ok((TaskError::new(target - q), DMatrix::identity(chain.dof(), chain.dof())));
    }
    let frame = task.frame().expect("frame task");
    let (pose, jac) = chain.pose_and_jacobian(q, frame)?;
    let (e, j) = match task {
        TaskType::FramePose { target, .. } => {
            let mut e = DVector::zeros(6);
            e.fixed_rows_mut::<3>(0).copy_from(&(target.position - pose.position));
            e.fixed_rows_mut::<3>(3)
                .copy_from(&orientation_error(&pose.rotation, &target.rotation));
            (e, jac)
        }
        TaskType::FramePosition { target, .. } => (
            DVector::from_column_slice((target - pose.position).as_slice()),
            jac.rows(0, 3).into_owned(),
        ),
        TaskType::FrameOrientation { target, .. } => (
            DVector::from_column_slice(orientation_error(&pose.rotation, target).as_slice()),
            jac.rows(3, 3).into_owned(),
        ),
        TaskType::FrameApproachAxis { target, .. } => {
            let err = approach_axis_error(&pose, target);
            (
                DVector::from_column_slice(err.local.as_slice()),
                local_xy_rows(&pose, &jac),
            )
        }
        TaskType::JointPosture { .. } => unreachable!(),
    };
    Ok((TaskError::new(e), j))
}

/// Scales `v` down to norm `limit` if it is longer. Returns whether it did.
fn clamp_norm(v: &mut [f64], limit: f64) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Slack keeps a second application a no-op after rounding.
    if norm > limit * (1.0 + 1e-12) {
        let s = limit / norm;
        v.iter_mut().for_each(|x| *x *= s);
        true
    } else {
        false
    }
}

/// Rescales a task error to the clamp magnitude of its kind. Frame pose
/// errors clamp their position and rotation halves independently; joint
/// posture errors use the orientation clamp.
pub fn clamp_task_error(err: &TaskError, task: &TaskType, clamps: &Clamps) -> TaskError {
    let mut out = err.clone();
    let e = out.e.as_mut_slice();
    let clamped = match task {
        TaskType::FramePosition { .. } => clamp_norm(e, clamps.position),
        TaskType::FrameOrientation { .. } | TaskType::FrameApproachAxis { .. } | TaskType::JointPosture { .. } => {
            clamp_norm(e, clamps.orientation)
        }
        TaskType::FramePose { .. } => {
            let (p, r) = e.split_at_mut(3);
            let a = clamp_norm(p, clamps.position);
            let b = clamp_norm(r, clamps.orientation);
            a || b
        }
    };
    out.clamped |= clamped;
    out
}
