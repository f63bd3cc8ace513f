//! Rotation representations and the geodesic pose distance.
//!
//! A pose is the 3D orientation of the camera with respect to an object,
//! given by azimuth, elevation and in-plane rotation angles. The fixed
//! composition convention used throughout the crate is
//!
//! ```text
//! R = Rz(inplane) · Rx(elevation) · Ry(azimuth)
//! ```
//!
//! i.e. azimuth rotates about the world Y axis first, then elevation about
//! X, then in-plane about Z. Only internal consistency matters: the geodesic
//! distance between two rotations is invariant under the choice of
//! convention.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Orientation as azimuth / elevation / in-plane angles, in radians.
///
/// Azimuth is stored wrapped to `[0, 2π)`. Elevation and in-plane are kept
/// as given; the viewing-sphere configuration bounds them at generation time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerPose {
    pub azimuth: f64,
    pub elevation: f64,
    pub inplane: f64,
}

impl EulerPose {
    pub fn new(azimuth: f64, elevation: f64, inplane: f64) -> Self {
        Self {
            azimuth: wrap_azimuth(azimuth),
            elevation,
            inplane,
        }
    }

    pub fn from_degrees(azimuth: f64, elevation: f64, inplane: f64) -> Self {
        Self::new(
            azimuth.to_radians(),
            elevation.to_radians(),
            inplane.to_radians(),
        )
    }

    /// Pose of the horizontally mirrored view: azimuth negates, the other
    /// angles are unchanged.
    pub fn mirrored(&self) -> Self {
        Self::new(-self.azimuth, self.elevation, self.inplane)
    }
}

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_azimuth(a: f64) -> f64 {
    let mut r = a % TAU;
    if r < 0.0 {
        r += TAU;
    }
    // -1e-17 % TAU is -1e-17, and adding TAU rounds to TAU itself.
    if r >= TAU {
        r = 0.0;
    }
    r
}

/// Unit quaternion (w, x, y, z). `q` and `-q` denote the same rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Quat {
    pub const IDENTITY: Self = Self {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Construct and normalize. The stored quaternion has unit norm to
    /// within 1e-9. Panics on a zero-norm input, which does not denote any
    /// rotation.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        assert!(n > 0.0, "zero-norm quaternion");
        Self {
            w: w / n,
            x: x / n,
            y: y / n,
            z: z / n,
        }
    }

    pub fn about_x(angle: f64) -> Self {
        let h = 0.5 * angle;
        Self {
            w: h.cos(),
            x: h.sin(),
            y: 0.0,
            z: 0.0,
        }
    }

    pub fn about_y(angle: f64) -> Self {
        let h = 0.5 * angle;
        Self {
            w: h.cos(),
            x: 0.0,
            y: h.sin(),
            z: 0.0,
        }
    }

    pub fn about_z(angle: f64) -> Self {
        let h = 0.5 * angle;
        Self {
            w: h.cos(),
            x: 0.0,
            y: 0.0,
            z: h.sin(),
        }
    }

    /// Hamilton product `self * rhs` (applies `rhs` first).
    pub fn mul(&self, rhs: &Quat) -> Quat {
        Quat {
            w: self.w * rhs.w - self.x * rhs.x - self.y * rhs.y - self.z * rhs.z,
            x: self.w * rhs.x + self.x * rhs.w + self.y * rhs.z - self.z * rhs.y,
            y: self.w * rhs.y - self.x * rhs.z + self.y * rhs.w + self.z * rhs.x,
            z: self.w * rhs.z + self.x * rhs.y - self.y * rhs.x + self.z * rhs.w,
        }
    }

    pub fn dot(&self, rhs: &Quat) -> f64 {
        self.w * rhs.w + self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn negated(&self) -> Quat {
        Quat {
            w: -self.w,
            x: -self.x,
            y: -self.y,
            z: -self.z,
        }
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Row-major 3x3 rotation matrix.
    pub fn to_matrix(&self) -> [[f64; 3]; 3] {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        [
            [
                1.0 - 2.0 * (y * y + z * z),
                2.0 * (x * y - w * z),
                2.0 * (x * z + w * y),
            ],
            [
                2.0 * (x * y + w * z),
                1.0 - 2.0 * (x * x + z * z),
                2.0 * (y * z - w * x),
            ],
            [
                2.0 * (x * z - w * y),
                2.0 * (y * z + w * x),
                1.0 - 2.0 * (x * x + y * y),
            ],
        ]
    }
}

/// Unit quaternion for `Rz(inplane) · Rx(elevation) · Ry(azimuth)`.
pub fn euler_to_quat(p: &EulerPose) -> Quat {
    let qy = Quat::about_y(p.azimuth);
    let qx = Quat::about_x(p.elevation);
    let qz = Quat::about_z(p.inplane);
    qz.mul(&qx).mul(&qy)
}

/// Inverse of [`euler_to_quat`] for poses with elevation strictly inside
/// `(-π/2, π/2)`; the viewing sphere used here never reaches the gimbal
/// singularity.
pub fn quat_to_euler(q: &Quat) -> EulerPose {
    let m = q.to_matrix();
    let elevation = m[2][1].clamp(-1.0, 1.0).asin();
    let azimuth = (-m[2][0]).atan2(m[2][2]);
    let inplane = (-m[0][1]).atan2(m[1][1]);
    EulerPose::new(azimuth, elevation, inplane)
}

/// Geodesic distance between two rotations: `2·acos(|q1 · q2|)`, in
/// radians, in `[0, π]`.
///
/// The absolute value handles the quaternion double cover (`q` and `-q`
/// are the same rotation); the dot product is clamped into `[0, 1]` before
/// `acos` so that floating-point drift at identical or antipodal inputs
/// cannot produce NaN.
pub fn geodesic_distance(q1: &Quat, q2: &Quat) -> f64 {
    let d = q1.dot(q2).abs().clamp(0.0, 1.0);
    2.0 * d.acos()
}

/// Geodesic distance between two Euler poses, in radians.
pub fn pose_distance(p1: &EulerPose, p2: &EulerPose) -> f64 {
    geodesic_distance(&euler_to_quat(p1), &euler_to_quat(p2))
}

/// Uniform random rotation (Shoemake's method).
pub fn random_unit_quat<R: rand::Rng + ?Sized>(rng: &mut R) -> Quat {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    Quat {
        w: a * (TAU * u2).sin(),
        x: a * (TAU * u2).cos(),
        y: b * (TAU * u3).sin(),
        z: b * (TAU * u3).cos(),
    }
}

/// Largest viewing-sphere-safe elevation magnitude, used by tests that draw
/// random in-range poses.
pub const MAX_SAFE_ELEVATION: f64 = PI / 2.0 - 1e-3;
