//! Small geometric helpers shared by the scene, the ray tracer and the channel model.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// A direction in the global frame.
///
/// Azimuth is measured counterclockwise from +x in (−π, π]; elevation is measured
/// from the horizontal plane in [−π/2, π/2].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Direction {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self {
            azimuth: wrap_angle(azimuth),
            elevation,
        }
    }

    /// Direction of a (nonzero) vector.
    pub fn from_vector(v: &Vector3<f64>) -> Self {
        let norm = v.norm();
        let elevation = (v.z / norm).clamp(-1.0, 1.0).asin();
        Self::new(v.y.atan2(v.x), elevation)
    }

    pub fn unit_vector(&self) -> Vector3<f64> {
        let (se, ce) = self.elevation.sin_cos();
        let (sa, ca) = self.azimuth.sin_cos();
        Vector3::new(ce * ca, ce * sa, se)
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = a % (2.0 * PI);
    if x <= -PI {
        x += 2.0 * PI;
    } else if x > PI {
        x -= 2.0 * PI;
    }
    x
}
