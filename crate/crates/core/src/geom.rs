//! Quaternion, rotation and inertia algebra shared by the dynamics modules.
//!
//! Quaternions are scalar-first and kept in canonical form (unit norm,
//! `w >= 0`) so that `2 acos(w)` is the shortest rotation angle.

use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance used when accepting `|w| > 1` from round-off.
const UNIT_TOL: f64 = 1e-9;

/// Unit quaternion, scalar first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Default for Quat {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    /// Raw constructor; no normalization.
    pub const fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Self { w, x, y, z }
    }

    /// Normalizes and flips to `w >= 0`.
    pub fn canonical(self) -> Self {
        let n = self.norm();
        let s = if self.w < 0.0 { -1.0 / n } else { 1.0 / n };
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 || angle == 0.0 {
            return Self::IDENTITY;
        }
        let (s, c) = (0.5 * angle).sin_cos();
        let a = axis / n;
        Self::new(c, s * a.x, s * a.y, s * a.z).canonical()
    }

    /// Exponential map of a rotation vector (axis times angle).
    pub fn from_rotation_vector(v: &Vec3) -> Self {
        let angle = v.norm();
        if angle < 1e-12 {
            // second-order series keeps tiny rotations accurate
            let h = 0.5;
            return Self::new(1.0 - angle * angle / 8.0, h * v.x, h * v.y, h * v.z).canonical();
        }
        Self::from_axis_angle(v, angle)
    }

    /// Logarithm: rotation vector of the (canonical) quaternion.
    pub fn to_rotation_vector(&self) -> Vec3 {
        let q = self.canonical();
        let s = (q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
        if s < 1e-15 {
            return Vec3::new(2.0 * q.x, 2.0 * q.y, 2.0 * q.z);
        }
        let angle = 2.0 * s.atan2(q.w);
        Vec3::new(q.x, q.y, q.z) * (angle / s)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conj(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn vector(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    /// Hamilton product without canonicalization.
    pub fn mul_raw(&self, r: &Quat) -> Quat {
        let (a, b) = (self, r);
        Quat::new(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    /// Rotates a vector from the quaternion's child frame into its parent frame.
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.to_matrix() * v
    }

    pub fn to_matrix(&self) -> Mat3 {
        let Quat { w, x, y, z } = *self;
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Signed rotation angle about a unit axis (twist of a swing-twist split).
    pub fn twist_angle(&self, axis: &Vec3) -> f64 {
        let a = axis.normalize();
        let p = self.vector().dot(&a);
        let angle = 2.0 * p.atan2(self.w);
        wrap_angle(angle)
    }

    /// Roll, pitch, yaw (ZYX convention) in radians.
    pub fn to_euler(&self) -> Vec3 {
        let Quat { w, x, y, z } = *self;
        let roll = (2.0 * (w * x + y * z)).atan2(1.0 - 2.0 * (x * x + y * y));
        let pitch = (2.0 * (w * y - z * x)).clamp(-1.0, 1.0).asin();
        let yaw = (2.0 * (w * z + x * y)).atan2(1.0 - 2.0 * (y * y + z * z));
        Vec3::new(roll, pitch, yaw)
    }

    pub fn from_euler(roll: f64, pitch: f64, yaw: f64) -> Self {
        let qz = Self::from_axis_angle(&Vec3::z(), yaw);
        let qy = Self::from_axis_angle(&Vec3::y(), pitch);
        let qx = Self::from_axis_angle(&Vec3::x(), roll);
        qz * qy * qx
    }
}

impl Mul for Quat {
    type Output = Quat;

    fn mul(self, rhs: Quat) -> Quat {
        self.mul_raw(&rhs).canonical()
    }
}

/// Canonical Hamilton product.
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    a.mul_raw(b).canonical()
}

fn check_finite(q: &Quat, what: &'static str) -> Result<()> {
    if q.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Orientation of the body relative to the reference: `q_ref* ⊗ q_body`.
pub fn quat_error(q_ref: &Quat, q_body: &Quat) -> Result<Quat> {
    check_finite(q_ref, "reference quaternion")?;
    check_finite(q_body, "body quaternion")?;
    Ok(q_ref.conj().mul_raw(q_body).canonical())
}

/// Rotation angle `2 acos(w)` in `[0, π]`.
pub fn quat_angle(q: &Quat) -> Result<f64> {
    check_finite(q, "quaternion")?;
    let w = q.w.abs();
    if w > 1.0 + UNIT_TOL {
        return Err(Error::InvalidQuat(format!("|w| = {w} exceeds 1")));
    }
    Ok(2.0 * w.min(1.0).acos())
}

/// Exact exponential-map update for a constant body rate over `dt`.
pub fn integrate_quat(q: &Quat, omega_body: &Vec3, dt: f64) -> Result<Quat> {
    check_finite(q, "quaternion")?;
    if !omega_body.iter().all(|v| v.is_finite()) || !dt.is_finite() {
        return Err(Error::NonFinite("angular rate"));
    }
    if dt <= 0.0 {
        return Err(Error::InvalidParam(format!("dt must be positive, got {dt}")));
    }
    let dq = Quat::from_rotation_vector(&(omega_body * dt));
    Ok((q.mul_raw(&dq)).canonical())
}

pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = (a + std::f64::consts::PI).rem_euclid(two_pi) - std::f64::consts::PI;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    }
    r
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rigid placement of a part: rotation then translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }
}

/// Mass properties: mass, center of mass, and moment about the center of mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inertia {
    pub mass: f64,
    pub com: Vec3,
    pub moment: Mat3,
}

impl Inertia {
    pub fn point(mass: f64, at: Vec3) -> Self {
        Self {
            mass,
            com: at,
            moment: Mat3::zeros(),
        }
    }

    /// Solid cuboid with edge lengths `(a, b, c)` along its local x, y, z.
    pub fn cuboid(mass: f64, a: f64, b: f64, c: f64) -> Self {
        let k = mass / 12.0;
        Self {
            mass,
            com: Vec3::zeros(),
            moment: Mat3::from_diagonal(&Vec3::new(
                k * (b * b + c * c),
                k * (a * a + c * c),
                k * (a * a + b * b),
            )),
        }
    }

    /// Solid cylinder with its axis along local z.
    pub fn cylinder(mass: f64, radius: f64, length: f64) -> Self {
        let trans = mass * (3.0 * radius * radius + length * length) / 12.0;
        Self {
            mass,
            com: Vec3::zeros(),
            moment: Mat3::from_diagonal(&Vec3::new(trans, trans, 0.5 * mass * radius * radius)),
        }
    }

    pub fn sphere(mass: f64, radius: f64) -> Self {
        let i = 0.4 * mass * radius * radius;
        Self {
            mass,
            com: Vec3::zeros(),
            moment: Mat3::from_diagonal(&Vec3::new(i, i, i)),
        }
    }

    pub fn transformed(&self, pose: &Pose) -> Self {
        let r = pose.rotation;
        Self {
            mass: self.mass,
            com: r * self.com + pose.translation,
            moment: r * self.moment * r.transpose(),
        }
    }

    /// Moment about an arbitrary point (parallel-axis theorem).
    pub fn moment_about(&self, point: &Vec3) -> Mat3 {
        let d = self.com - point;
        self.moment + parallel_axis(self.mass, &d)
    }
}

/// `m (|d|² E − d dᵀ)`.
pub fn parallel_axis(mass: f64, d: &Vec3) -> Mat3 {
    mass * (Mat3::identity() * d.norm_squared() - d * d.transpose())
}

/// Composite of posed parts about the composite center of mass.
pub fn compose_inertia(parts: &[(Inertia, Pose)]) -> Result<Inertia> {
    let posed: Vec<Inertia> = parts.iter().map(|(i, p)| i.transformed(p)).collect();
    sum_inertia(&posed)
}

/// Composite of parts already expressed in a common frame.
pub fn sum_inertia(parts: &[Inertia]) -> Result<Inertia> {
    let mass: f64 = parts.iter().map(|p| p.mass).sum();
    if !(mass > 0.0) {
        return Err(Error::ZeroMass);
    }
    let com = parts.iter().fold(Vec3::zeros(), |acc, p| acc + p.com * p.mass) / mass;
    let mut moment = parts
        .iter()
        .fold(Mat3::zeros(), |acc, p| acc + p.moment_about(&com));
    // stay exactly symmetric despite round-off
    moment = 0.5 * (moment + moment.transpose());
    Ok(Inertia { mass, com, moment })
}
