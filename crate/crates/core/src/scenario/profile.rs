//! Piecewise-linear time profiles.

use nalgebra::{Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Knots `[t, x, y, z]` with strictly increasing `t`, linearly interpolated.
/// Values are held constant outside the knot range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PiecewiseLinear {
    pub knots: Vec<[f64; 4]>,
}

impl PiecewiseLinear {
    pub fn constant(v: Vector3<f64>) -> Self {
        Self {
            knots: vec![[0.0, v.x, v.y, v.z]],
        }
    }

    /// Checks ordering and that the knots cover `[0, duration]`.
    pub fn validate(&self, what: &str, duration: f64) -> Result<()> {
        let err = |msg: String| Err(Error::Validation(format!("{what}: {msg}")));
        let (Some(first), Some(last)) = (self.knots.first(), self.knots.last()) else {
            return err("no knots".into());
        };
        if !self.knots.iter().flatten().all(|v| v.is_finite()) {
            return err("non-finite knot".into());
        }
        if let Some(w) = self.knots.windows(2).find(|w| w[1][0] <= w[0][0]) {
            return err(format!("knot times must increase ({} then {})", w[0][0], w[1][0]));
        }
        if self.knots.len() > 1 && (first[0] > 0.0 || last[0] < duration) {
            return err(format!("knots span [{}, {}] but the run covers [0, {duration}]", first[0], last[0]));
        }
        Ok(())
    }

    pub fn sample(&self, t: f64) -> Vector3<f64> {
        let k = &self.knots;
        let i = k.partition_point(|knot| knot[0] <= t);
        if i == 0 {
            return Vector3::new(k[0][1], k[0][2], k[0][3]);
        }
        if i == k.len() {
            let l = k[k.len() - 1];
            return Vector3::new(l[1], l[2], l[3]);
        }
        let (a, b) = (k[i - 1], k[i]);
        let s = (t - a[0]) / (b[0] - a[0]);
        Vector3::new(a[1], a[2], a[3]).lerp(&Vector3::new(b[1], b[2], b[3]), s)
    }
}

/// Desired approach axis: one direction, or knots interpolated then normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisProfile {
    Constant([f64; 3]),
    Knots(PiecewiseLinear),
}

impl Default for AxisProfile {
    fn default() -> Self {
        AxisProfile::Constant([1.0, 0.0, 0.0])
    }
}

impl AxisProfile {
    pub fn validate(&self, duration: f64) -> Result<()> {
        let check = |v: Vector3<f64>| {
            if v.iter().all(|c| c.is_finite()) && v.norm() > 1e-9 {
                Ok(())
            } else {
                Err(Error::Validation(format!("desired_axis: {v:?} has no direction")))
            }
        };
        match self {
            AxisProfile::Constant(a) => check(Vector3::from(*a)),
            AxisProfile::Knots(p) => {
                p.validate("desired_axis", duration)?;
                for w in p.knots.windows(2) {
                    let a = Vector3::new(w[0][1], w[0][2], w[0][3]).normalize();
                    let b = Vector3::new(w[1][1], w[1][2], w[1][3]).normalize();
                    if a.dot(&b) < -1.0 + 1e-9 {
                        return Err(Error::Validation(format!(
                            "desired_axis: knots at t = {} and {} are antiparallel",
                            w[0][0], w[1][0]
                        )));
                    }
                }
                p.knots.iter().try_for_each(|k| check(Vector3::new(k[1], k[2], k[3])))
            }
        }
    }

    pub fn sample(&self, t: f64) -> Unit<Vector3<f64>> {
        match self {
            AxisProfile::Constant(a) => Unit::new_normalize(Vector3::from(*a)),
            AxisProfile::Knots(p) => Unit::new_normalize(p.sample(t)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> PiecewiseLinear {
        PiecewiseLinear {
            knots: vec![[0.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, -0.2], [3.0, 0.4, 0.0, -0.2]],
        }
    }

    #[test]
    fn interpolates_and_holds() {
        let p = ramp();
        assert_eq!(p.sample(-1.0), Vector3::zeros());
        assert!((p.sample(0.5) - Vector3::new(0.0, 0.0, -0.1)).norm() < 1e-15);
        assert!((p.sample(2.0) - Vector3::new(0.2, 0.0, -0.2)).norm() < 1e-15);
        assert_eq!(p.sample(10.0), Vector3::new(0.4, 0.0, -0.2));
        assert_eq!(p.sample(1.0), Vector3::new(0.0, 0.0, -0.2));
    }

    #[test]
    fn validation() {
        assert!(ramp().validate("v", 3.0).is_ok());
        assert!(ramp().validate("v", 3.5).is_err());
        let mut p = ramp();
        p.knots[2][0] = 1.0;
        assert!(p.validate("v", 1.0).is_err());
        assert!(PiecewiseLinear { knots: vec![] }.validate("v", 1.0).is_err());
        assert!(PiecewiseLinear::constant(Vector3::x()).validate("v", 5.0).is_ok());
    }

    #[test]
    fn axis_profiles() {
        let a: AxisProfile = serde_json::from_str("[2, 0, 0]").unwrap();
        assert_eq!(a.sample(3.0).into_inner(), Vector3::x());
        let k: AxisProfile = serde_json::from_str("[[0, 1, 0, 0], [2, 0, 1, 0]]").unwrap();
        k.validate(2.0).unwrap();
        let mid = k.sample(1.0);
        assert!((mid.into_inner() - Vector3::new(1.0, 1.0, 0.0).normalize()).norm() < 1e-15);
        let flip: AxisProfile = serde_json::from_str("[[0, 1, 0, 0], [2, -1, 0, 0]]").unwrap();
        assert!(flip.validate(2.0).is_err());
        assert!(AxisProfile::Constant([0.0; 3]).validate(1.0).is_err());
    }
}
