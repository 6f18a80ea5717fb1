//! Serial revolute chains: forward kinematics and geometric Jacobians.
//!
//! A joint frame is obtained from the previous one by the joint's fixed
//! `origin` transform followed by a rotation of `q_i` about the joint `axis`
//! (both expressed in the joint frame). Named frames hang off a parent joint
//! through a fixed offset.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

const UNIT_TOL: f64 = 1e-9;

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn symmetric(mag: f64) -> Self {
        Self { lo: -mag, hi: mag }
    }

    pub fn unbounded() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn is_valid(&self) -> bool {
        !self.lo.is_nan() && !self.hi.is_nan() && self.lo <= self.hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLimits {
    /// rad
    pub position: Bounds,
    /// rad/s
    pub velocity: Bounds,
    /// rad/s²
    pub acceleration: Bounds,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            position: Bounds::unbounded(),
            velocity: Bounds::unbounded(),
            acceleration: Bounds::unbounded(),
        }
    }
}

/// Only revolute joints exist today; the tag keeps room for other kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JointKind {
    #[default]
    Revolute,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub kind: JointKind,
    pub axis: Unit<Vector3<f64>>,
    pub origin: Isometry3<f64>,
    pub limits: JointLimits,
}

impl JointSpec {
    /// Revolute joint; `axis` must be non-zero and is normalized.
    pub fn revolute(axis: Vector3<f64>, origin: Isometry3<f64>, limits: JointLimits) -> Result<Self> {
        let norm = axis.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidChain(format!("joint axis {axis:?} has no direction")));
        }
        Ok(Self {
            kind: JointKind::Revolute,
            axis: Unit::new_normalize(axis),
            origin,
            limits,
        })
    }
}

/// A named frame rigidly attached to a joint.
#[derive(Debug, Clone, PartialEq)]
pub struct AttachedFrame {
    pub parent_joint: usize,
    pub offset: Isometry3<f64>,
}

/// Position and orientation (body-to-base) of a frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FramePose {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl FramePose {
    pub fn identity() -> Self {
        Self {
            position: Vector3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self {
            position: iso.translation.vector,
            rotation: iso.rotation,
        }
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.rotation)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Local z-axis in base coordinates.
    pub fn approach_axis(&self) -> Vector3<f64> {
        self.rotation * Vector3::z()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Result<Self> {
        if q.len() != qd.len() {
            return Err(Error::dim("joint state velocity", q.len(), qd.len()));
        }
        Ok(Self { q, qd })
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: DVector::zeros(n),
        }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }
}

/// Immutable serial revolute chain with named attached frames.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    joints: Vec<JointSpec>,
    frames: BTreeMap<String, AttachedFrame>,
}

impl KinematicChain {
    pub fn new(joints: Vec<JointSpec>, frames: BTreeMap<String, AttachedFrame>) -> Result<Self> {
        if joints.is_empty() {
            return Err(Error::InvalidChain("chain has no joints".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidChain(format!("joint {i}: axis is not unit length")));
            }
            if (j.origin.rotation.coords.norm() - 1.0).abs() > UNIT_TOL {
                return Err(Error::InvalidChain(format!("joint {i}: origin quaternion is not unit")));
            }
            let l = &j.limits;
            for (name, b) in [("position", l.position), ("velocity", l.velocity), ("acceleration", l.acceleration)] {
                if !b.is_valid() {
                    return Err(Error::InvalidChain(format!(
                        "joint {i}: {name} limits [{}, {}] are not ordered",
                        b.lo, b.hi
                    )));
                }
            }
        }
        for (name, f) in &frames {
            if f.parent_joint >= joints.len() {
                return Err(Error::InvalidChain(format!(
                    "frame `{name}`: parent joint {} out of range (dof {})",
                    f.parent_joint,
                    joints.len()
                )));
            }
        }
        Ok(Self { joints, frames })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn frames(&self) -> &BTreeMap<String, AttachedFrame> {
        &self.frames
    }

    pub fn frame(&self, name: &str) -> Result<&AttachedFrame> {
        self.frames.get(name).ok_or_else(|| Error::NotFound(name.to_string()))
    }

    pub fn position_limits(&self) -> Vec<Bounds> {
        self.joints.iter().map(|j| j.limits.position).collect()
    }

    /// Upper bound on the distance any frame can reach from the first joint's origin.
    pub fn reach(&self) -> f64 {
        let links: f64 = self.joints.iter().skip(1).map(|j| j.origin.translation.vector.norm()).sum();
        let tool = self
            .frames
            .values()
            .map(|f| f.offset.translation.vector.norm())
            .fold(0.0_f64, f64::max);
        links + tool
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::dim("joint vector", self.dof(), q.len()));
        }
        Ok(())
    }

    /// World poses of the joint frames `0..=last` (after each joint's rotation),
    /// together with each joint's world axis and origin.
    fn joint_chain(&self, q: &DVector<f64>, last: usize) -> Vec<JointWorld> {
        let mut out = Vec::with_capacity(last + 1);
        let mut t = Isometry3::identity();
        for (i, joint) in self.joints.iter().take(last + 1).enumerate() {
            let before = t * joint.origin;
            let axis = before.rotation * joint.axis.into_inner();
            t = before * UnitQuaternion::from_axis_angle(&joint.axis, q[i]);
            out.push(JointWorld {
                frame: t,
                axis,
                origin: before.translation.vector,
            });
        }
        out
    }

    pub fn forward_kinematics(&self, q: &DVector<f64>, frame: &str) -> Result<FramePose> {
        self.check_q(q)?;
        let f = self.frame(frame)?;
        let joints = self.joint_chain(q, f.parent_joint);
        let pose = joints[f.parent_joint].frame * f.offset;
        Ok(FramePose::from_isometry(&pose))
    }

    /// 6×dof geometric Jacobian of `frame`: rows 0–2 give the linear velocity
    /// of the frame origin, rows 3–5 the angular velocity, both in the base frame.
    pub fn geometric_jacobian(&self, q: &DVector<f64>, frame: &str) -> Result<DMatrix<f64>> {
        self.pose_and_jacobian(q, frame).map(|(_, j)| j)
    }

    /// Forward kinematics and Jacobian from a single pass over the chain.
    pub fn pose_and_jacobian(&self, q: &DVector<f64>, frame: &str) -> Result<(FramePose, DMatrix<f64>)> {
        self.check_q(q)?;
        let f = self.frame(frame)?;
        let joints = self.joint_chain(q, f.parent_joint);
        let pose = FramePose::from_isometry(&(joints[f.parent_joint].frame * f.offset));
        let mut jac = DMatrix::zeros(6, self.dof());
        for (i, jw) in joints.iter().enumerate() {
            let lin = jw.axis.cross(&(pose.position - jw.origin));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&jw.axis);
        }
        Ok((pose, jac))
    }

    /// Rows of `Rᵀ·J_R` for the frame's local x and y axes, where `R` is the
    /// frame orientation and `J_R` the angular block of the geometric Jacobian.
    pub fn local_rotational_rows(&self, q: &DVector<f64>, frame: &str) -> Result<DMatrix<f64>> {
        let (pose, jac) = self.pose_and_jacobian(q, frame)?;
        Ok(local_xy_rows(&pose, &jac))
    }
}

/// `Rᵀ·J_R` restricted to the local x/y rows.
pub(crate) fn local_xy_rows(pose: &FramePose, jac: &DMatrix<f64>) -> DMatrix<f64> {
    let rt = pose.rotation_matrix().transpose();
    let local = rt * jac.fixed_rows::<3>(3);
    local.rows(0, 2).into_owned()
}

struct JointWorld {
    frame: Isometry3<f64>,
    axis: Vector3<f64>,
    origin: Vector3<f64>,
}
