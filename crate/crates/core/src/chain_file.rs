//! JSON chain description.
//!
//! ```json
//! {
//!   "joints": [
//!     {"axis": [0, 0, 1],
//!      "origin": {"xyz": [0, 0, 0.3], "rpy": [0, 0, 0]},
//!      "limits": {"pos": [-3.1, 3.1], "vel": [-1.5, 1.5], "acc": [-6, 6]}}
//!   ],
//!   "frames": {"tool": {"parent_joint": 0, "xyz": [0.1, 0, 0], "rpy": [0, 0, 0]}}
//! }
//! ```
//!
//! `rpy` is roll/pitch/yaw about the fixed X, Y and Z axes (applied in that
//! order), in radians. `origin` and every `limits` entry are optional; missing
//! limits are unbounded.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{AttachedFrame, Bounds, JointLimits, JointSpec, KinematicChain};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub joints: Vec<JointEntry>,
    #[serde(default)]
    pub frames: BTreeMap<String, FrameEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointEntry {
    pub axis: [f64; 3],
    #[serde(default)]
    pub origin: OriginEntry,
    #[serde(default)]
    pub limits: LimitsEntry,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginEntry {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vel: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub parent_joint: usize,
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

pub(crate) fn isometry(xyz: [f64; 3], rpy: [f64; 3]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(xyz[0], xyz[1], xyz[2]),
        UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
    )
}

fn bounds(pair: Option<[f64; 2]>) -> Bounds {
    pair.map_or_else(Bounds::unbounded, |[lo, hi]| Bounds::new(lo, hi))
}

impl ChainFile {
    pub fn into_chain(self) -> Result<KinematicChain> {
        let joints = self
            .joints
            .into_iter()
            .enumerate()
            .map(|(i, j)| {
                let limits = JointLimits {
                    position: bounds(j.limits.pos),
                    velocity: bounds(j.limits.vel),
                    acceleration: bounds(j.limits.acc),
                };
                JointSpec::revolute(Vector3::from(j.axis), isometry(j.origin.xyz, j.origin.rpy), limits)
                    .map_err(|e| Error::InvalidChain(format!("joint {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let frames = self
            .frames
            .into_iter()
            .map(|(name, f)| {
                (
                    name,
                    AttachedFrame {
                        parent_joint: f.parent_joint,
                        offset: isometry(f.xyz, f.rpy),
                    },
                )
            })
            .collect();
        KinematicChain::new(joints, frames)
    }
}

impl KinematicChain {
    /// Parses a chain description. `origin` names the source in error messages.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        let file: ChainFile = Error::parse_json(origin, text)?;
        file.into_chain()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, &path.display().to_string())
    }
}
