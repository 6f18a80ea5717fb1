//! Scenario files and closed-loop runs.
//!
//! A scenario is a JSON document naming a chain file (resolved relative to
//! the scenario file) and either a continuous-spraying run or a set of
//! selective-spraying IK solves:
//!
//! ```json
//! {
//!   "mode": "continuous_spraying",
//!   "chain_file": "demo_chain.json",
//!   "frame": "spray",
//!   "duration": 10.0,
//!   "dt": 0.01,
//!   "initial_q": [0.0, 0.6, 1.2, 0.0, 1.0, 0.0],
//!   "velocity_profile": [[0, 0, 0, 0], [0.5, 0, 0, -0.2], [10, 0, 0, -0.2]],
//!   "desired_axis": [1, 0, 0],
//!   "gains": {"kp_joint": 1.0, "kp_omega": 2.0},
//!   "ptsc_mode": "three_level",
//!   "height_constraint": {"frame": "nozzle", "z_min": 0.3}
//! }
//! ```
//!
//! `velocity_profile` and time-varying `desired_axis` are lists of
//! `[t, x, y, z]` knots. `ptsc_mode` is `"three_level"` or
//! `{"two_level_blend": {"weight": w}}`. Selective runs list `tasks` in
//! decreasing priority plus `initial_guesses`, and optionally `pik_params`
//! and a `random_batch`.

mod continuous;
mod profile;
mod selective;
mod trace;

use std::path::{Path, PathBuf};

use nalgebra::{DVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{FramePose, KinematicChain};
use crate::pik::PikParams;
use crate::ptsc::LevelMode;
use crate::tasks::{Blend, Gains, Task, TaskType};

pub use continuous::{run_continuous, run_continuous_with, ContinuousRun, QpRecord, RunStatus};
pub use profile::{AxisProfile, PiecewiseLinear};
pub use selective::{run_selective, write_selective, BatchReport, BatchSolve, GuessReport, SelectiveRun};
pub use trace::{emit_trace, trace_csv_header, write_trace, TraceFormat, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ContinuousSpraying,
    SelectiveIk,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PtscMode {
    ThreeLevel,
    TwoLevelBlend { weight: f64 },
}

impl From<PtscMode> for LevelMode {
    fn from(m: PtscMode) -> Self {
        match m {
            PtscMode::ThreeLevel => LevelMode::ThreeLevel,
            PtscMode::TwoLevelBlend { weight } => LevelMode::TwoLevelBlend { weight },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsEntry {
    /// 1/s
    pub kp_joint: f64,
    /// 1/s
    pub kp_omega: f64,
}

impl Default for GainsEntry {
    fn default() -> Self {
        let g = Gains::default();
        Self {
            kp_joint: g.kp_joint,
            kp_omega: g.kp_omega,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeightConstraint {
    #[serde(default = "default_height_frame")]
    pub frame: String,
    /// m
    pub z_min: f64,
    /// Lookahead replacing `dt` in the height row, s. With `dt` the row only
    /// binds one step before contact; a longer horizon caps the descent rate
    /// at `(z − z_min)/horizon` so the frame slows down ahead of the floor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

impl HeightConstraint {
    pub fn horizon(&self, dt: f64) -> f64 {
        self.horizon.unwrap_or(dt)
    }
}

fn default_height_frame() -> String {
    "nozzle".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKindName {
    FramePose,
    FramePosition,
    FrameOrientation,
    FrameApproachAxis,
    JointPosture,
}

/// One task of a selective stack.
///
/// `target` is a point for `frame_position`, a direction for
/// `frame_approach_axis`, roll/pitch/yaw for `frame_orientation`,
/// `[x, y, z, roll, pitch, yaw]` for `frame_pose` and joint positions for
/// `joint_posture`. `priority` 1 is the most important; without priorities
/// the list order is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    #[serde(rename = "type")]
    pub kind: TaskKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
    pub target: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<usize>,
    /// Secondary term solved in the same level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_blend: Option<Box<BlendSpec>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlendSpec {
    pub weight: f64,
    pub task: TaskSpec,
}

fn rpy_rotation(r: &[f64]) -> UnitQuaternion<f64> {
    UnitQuaternion::from_euler_angles(r[0], r[1], r[2])
}

impl TaskSpec {
    pub fn to_task_type(&self) -> Result<TaskType> {
        let name = serde_json::to_string(&self.kind).unwrap_or_default();
        let frame = || {
            self.frame
                .clone()
                .ok_or_else(|| Error::InvalidTask(format!("{name} task needs a `frame`")))
        };
        let t = &self.target;
        let expect = |len: usize| {
            if t.len() == len {
                Ok(())
            } else {
                Err(Error::dim(format!("{name} target"), len, t.len()))
            }
        };
        if !t.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidTask(format!("{name} target is not finite")));
        }
        Ok(match self.kind {
            TaskKindName::FramePosition => {
                expect(3)?;
                TaskType::frame_position(frame()?, Vector3::new(t[0], t[1], t[2]))
            }
            TaskKindName::FrameApproachAxis => {
                expect(3)?;
                TaskType::approach_axis(frame()?, Vector3::new(t[0], t[1], t[2]))?
            }
            TaskKindName::FrameOrientation => {
                expect(3)?;
                TaskType::FrameOrientation {
                    frame: frame()?,
                    target: rpy_rotation(t),
                }
            }
            TaskKindName::FramePose => {
                expect(6)?;
                TaskType::FramePose {
                    frame: frame()?,
                    target: FramePose {
                        position: Vector3::new(t[0], t[1], t[2]),
                        rotation: rpy_rotation(&t[3..]),
                    },
                }
            }
            TaskKindName::JointPosture => TaskType::JointPosture {
                target: DVector::from_column_slice(t),
            },
        })
    }

    pub fn to_task(&self) -> Result<Task> {
        let blend = match &self.weight_blend {
            Some(b) => Some(Blend {
                kind: b.task.to_task_type()?,
                weight: b.weight,
            }),
            None => None,
        };
        Ok(Task {
            kind: self.to_task_type()?,
            blend,
        })
    }
}

/// Orders a task list by priority. Priorities must be given for all tasks or
/// none, and must be distinct.
pub fn ordered_tasks(specs: &[TaskSpec]) -> Result<Vec<Task>> {
    let given = specs.iter().filter(|s| s.priority.is_some()).count();
    if given != 0 && given != specs.len() {
        return Err(Error::InvalidTask("priority must be set on every task or on none".into()));
    }
    let mut order: Vec<&TaskSpec> = specs.iter().collect();
    order.sort_by_key(|s| s.priority);
    if let Some(w) = order.windows(2).find(|w| w[0].priority.is_some() && w[0].priority == w[1].priority) {
        return Err(Error::InvalidTask(format!("two tasks share priority {}", w[0].priority.unwrap_or_default())));
    }
    order.into_iter().map(TaskSpec::to_task).collect()
}

/// Random reachable targets for a batch of IK solves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomBatch {
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_frame")]
    pub frame: String,
    /// Position error below which a solve counts as a success, m.
    #[serde(default = "default_success_tol")]
    pub success_tol: f64,
}

fn default_frame() -> String {
    "spray".into()
}

fn default_dt() -> f64 {
    0.01
}

fn default_true() -> bool {
    true
}

fn default_success_tol() -> f64 {
    1e-4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub mode: Mode,
    pub chain_file: PathBuf,

    /// Controlled frame of a continuous run.
    #[serde(default = "default_frame")]
    pub frame: String,
    /// s
    #[serde(default)]
    pub duration: f64,
    /// s
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub initial_q: Option<Vec<f64>>,
    /// Posture target; the initial configuration when absent.
    #[serde(default)]
    pub posture: Option<Vec<f64>>,
    /// Commanded linear velocity of `frame`, m/s.
    #[serde(default)]
    pub velocity_profile: Option<PiecewiseLinear>,
    #[serde(default)]
    pub desired_axis: AxisProfile,
    #[serde(default)]
    pub gains: GainsEntry,
    #[serde(default = "default_ptsc_mode")]
    pub ptsc_mode: PtscMode,
    #[serde(default)]
    pub height_constraint: Option<HeightConstraint>,
    /// Also keep each step inside the joint position limits.
    #[serde(default = "default_true")]
    pub position_limits: bool,

    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub initial_guesses: Vec<Vec<f64>>,
    #[serde(default)]
    pub pik_params: Option<PikParams>,
    #[serde(default)]
    pub random_batch: Option<RandomBatch>,
}

fn default_ptsc_mode() -> PtscMode {
    PtscMode::ThreeLevel
}

/// A parsed and validated scenario together with its chain.
#[derive(Debug, Clone)]
pub struct LoadedScenario {
    pub scenario: Scenario,
    pub chain: KinematicChain,
    /// Path the scenario was read from, if any.
    pub path: Option<PathBuf>,
}

impl Scenario {
    /// Parses a scenario; `origin` names the source in error messages.
    pub fn from_json_str(text: &str, origin: &str) -> Result<Self> {
        Error::parse_json(origin, text)
    }

    pub fn gains(&self) -> Result<Gains> {
        Gains::new(self.gains.kp_joint, self.gains.kp_omega)
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Checks everything that does not need the chain.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Validation(msg));
        match self.mode {
            Mode::ContinuousSpraying => {
                if !(self.dt > 0.0) {
                    return bad(format!("dt must be positive, got {}", self.dt));
                }
                if !(self.duration >= self.dt) || !self.duration.is_finite() {
                    return bad(format!("duration {} must be at least dt {}", self.duration, self.dt));
                }
                let Some(profile) = &self.velocity_profile else {
                    return bad("continuous_spraying needs a velocity_profile".into());
                };
                profile.validate("velocity_profile", self.duration)?;
                self.desired_axis.validate(self.duration)?;
                self.gains()?;
                if self.initial_q.is_none() {
                    return bad("continuous_spraying needs initial_q".into());
                }
                if let PtscMode::TwoLevelBlend { weight } = self.ptsc_mode {
                    if !(weight > 0.0) || !weight.is_finite() {
                        return bad(format!("blend weight must be positive, got {weight}"));
                    }
                }
                if let Some(h) = &self.height_constraint {
                    if !h.z_min.is_finite() {
                        return bad("height_constraint.z_min must be finite".into());
                    }
                    if !(h.horizon(self.dt) >= self.dt) || !h.horizon(self.dt).is_finite() {
                        return bad(format!("height_constraint.horizon must be at least dt {}", self.dt));
                    }
                }
            }
            Mode::SelectiveIk => {
                if self.tasks.is_empty() {
                    return bad("selective_ik needs at least one task".into());
                }
                ordered_tasks(&self.tasks)?;
                if self.initial_guesses.is_empty() {
                    return bad("selective_ik needs at least one initial guess".into());
                }
                if let Some(p) = &self.pik_params {
                    p.validate()?;
                }
                if let Some(b) = &self.random_batch {
                    if b.count == 0 || !(b.success_tol > 0.0) {
                        return bad("random_batch needs a positive count and success_tol".into());
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks the scenario against a loaded chain.
    pub fn validate_with(&self, chain: &KinematicChain) -> Result<()> {
        self.validate()?;
        let n = chain.dof();
        let check_len = |what: &str, v: &[f64]| {
            if v.len() != n {
                Err(Error::dim(what, n, v.len()))
            } else if !v.iter().all(|x| x.is_finite()) {
                Err(Error::Validation(format!("{what} is not finite")))
            } else {
                Ok(())
            }
        };
        match self.mode {
            Mode::ContinuousSpraying => {
                chain.frame(&self.frame)?;
                if let Some(q) = &self.initial_q {
                    check_len("initial_q", q)?;
                }
                if let Some(q) = &self.posture {
                    check_len("posture", q)?;
                }
                if let Some(h) = &self.height_constraint {
                    chain.frame(&h.frame)?;
                }
            }
            Mode::SelectiveIk => {
                for g in &self.initial_guesses {
                    check_len("initial guess", g)?;
                }
                for task in ordered_tasks(&self.tasks)? {
                    task.kind.validate(chain)?;
                    if let Some(b) = &task.blend {
                        b.kind.validate(chain)?;
                    }
                }
                if let Some(b) = &self.random_batch {
                    chain.frame(&b.frame)?;
                }
            }
        }
        Ok(())
    }
}

impl LoadedScenario {
    /// Reads a scenario file and the chain it names.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let scenario = Scenario::from_json_str(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        let chain = KinematicChain::from_json_file(base.join(&scenario.chain_file))?;
        let mut loaded = Self::new(scenario, chain)?;
        loaded.path = Some(path.to_path_buf());
        Ok(loaded)
    }

    pub fn new(scenario: Scenario, chain: KinematicChain) -> Result<Self> {
        scenario.validate_with(&chain)?;
        Ok(Self {
            scenario,
            chain,
            path: None,
        })
    }

    /// The task stack in decreasing priority.
    pub fn tasks(&self) -> Result<Vec<Task>> {
        ordered_tasks(&self.scenario.tasks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONTINUOUS: &str = r#"{
        "mode": "continuous_spraying",
        "chain_file": "chain.json",
        "duration": 1.0,
        "initial_q": [0.1],
        "velocity_profile": [[0, 0, 0, 0], [1, 0, 0, 0.1]]
    }"#;

    #[test]
    fn defaults() {
        let s = Scenario::from_json_str(CONTINUOUS, "s").unwrap();
        s.validate().unwrap();
        assert_eq!(s.dt, 0.01);
        assert_eq!(s.steps(), 100);
        assert_eq!(s.frame, "spray");
        assert_eq!(s.ptsc_mode, PtscMode::ThreeLevel);
        assert_eq!(s.desired_axis, AxisProfile::Constant([1.0, 0.0, 0.0]));
        assert!(s.position_limits);
    }

    #[test]
    fn modes_parse() {
        let m: PtscMode = serde_json::from_str(r#"{"two_level_blend": {"weight": 0.01}}"#).unwrap();
        assert_eq!(m, PtscMode::TwoLevelBlend { weight: 0.01 });
        let m: PtscMode = serde_json::from_str(r#""three_level""#).unwrap();
        assert_eq!(m, PtscMode::ThreeLevel);
    }

    #[test]
    fn rejects_unknown_fields_with_location() {
        let text = CONTINUOUS.replace("\"duration\"", "\"durration\"");
        match Scenario::from_json_str(&text, "s.json") {
            Err(Error::Parse { file, line, .. }) => {
                assert_eq!(file, "s.json");
                assert_eq!(line, 4);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_timing() {
        let mut s = Scenario::from_json_str(CONTINUOUS, "s").unwrap();
        s.dt = 0.0;
        assert!(s.validate().is_err());
        s.dt = 0.5;
        s.duration = 0.1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn empty_task_list_is_rejected() {
        let text = r#"{"mode": "selective_ik", "chain_file": "c.json", "tasks": [], "initial_guesses": [[0]]}"#;
        let s = Scenario::from_json_str(text, "s").unwrap();
        assert!(matches!(s.validate(), Err(Error::Validation(_))));
    }

    #[test]
    fn task_specs() {
        let spec: TaskSpec = serde_json::from_str(r#"{"type": "frame_approach_axis", "frame": "spray", "target": [0, 2, 0]}"#).unwrap();
        match spec.to_task_type().unwrap() {
            TaskType::FrameApproachAxis { target, .. } => assert_eq!(target.into_inner(), Vector3::y()),
            other => panic!("{other:?}"),
        }
        let spec: TaskSpec = serde_json::from_str(r#"{"type": "frame_position", "target": [1, 2, 3]}"#).unwrap();
        assert!(matches!(spec.to_task_type(), Err(Error::InvalidTask(_))));
        let spec: TaskSpec = serde_json::from_str(r#"{"type": "frame_position", "frame": "spray", "target": [1, 2]}"#).unwrap();
        assert!(spec.to_task_type().is_err());
        let spec: TaskSpec = serde_json::from_str(r#"{"type": "frame_pose", "frame": "spray", "target": [1, 2, 3, 0, 0, 0.5]}"#).unwrap();
        match spec.to_task_type().unwrap() {
            TaskType::FramePose { target, .. } => assert!((target.rotation.angle() - 0.5).abs() < 1e-15),
            other => panic!("{other:?}"),
        }
        let spec: TaskSpec = serde_json::from_str(
            r#"{"type": "frame_approach_axis", "frame": "spray", "target": [1, 0, 0],
                "weight_blend": {"weight": 0.01, "task": {"type": "joint_posture", "target": [0, 0]}}}"#,
        )
        .unwrap();
        assert_eq!(spec.to_task().unwrap().blend.unwrap().weight, 0.01);
    }

    #[test]
    fn priorities_order_the_stack() {
        let specs: Vec<TaskSpec> = serde_json::from_str(
            r#"[{"type": "joint_posture", "target": [0], "priority": 2},
                {"type": "frame_position", "frame": "a", "target": [1, 2, 3], "priority": 1}]"#,
        )
        .unwrap();
        let tasks = ordered_tasks(&specs).unwrap();
        assert_eq!(tasks[0].kind.name(), "frame_position");
        let mut dup = specs.clone();
        dup[0].priority = Some(1);
        assert!(ordered_tasks(&dup).is_err());
        let mut partial = specs;
        partial[0].priority = None;
        assert!(ordered_tasks(&partial).is_err());
    }
}
