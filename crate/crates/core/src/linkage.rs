//! Five-bar diamond leg: kinematics, Jacobian and the inter-knee spring.
//!
//! Leg-plane frame: origin midway between the two motor axes, `x` along the
//! motor baseline (motor 1 at `-l0/2`, motor 2 at `+l0/2`), `y` pointing down
//! along the extended leg. Both motor angles use a mirrored convention: zero
//! is the link hanging vertically and a positive angle swings the knee
//! outward, away from the leg's symmetry axis. With this convention
//! `theta1 == theta2` is always a symmetric pose and the same joint limits
//! apply to both motors.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Ratio `σ_min / max(σ_max, reach)` of the Jacobian below which a pose counts as singular.
pub const SINGULAR_RATIO: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LegGeometry {
    /// Motor-axis separation.
    pub l0: f64,
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    /// Spring stiffness, N/m.
    pub spring_k: f64,
    /// Knee separation at which the cord goes taut.
    pub spring_rest: f64,
}

impl Default for LegGeometry {
    fn default() -> Self {
        Self::design()
    }
}

impl LegGeometry {
    /// The built robot's leg.
    pub fn design() -> Self {
        Self::diamond(0.09, 0.175, 0.3, 800.0)
    }

    /// Diamond leg with `l1 == l2` and `l3 == l4`.
    pub fn diamond(l0: f64, upper: f64, lower: f64, spring_k: f64) -> Self {
        Self {
            l0,
            l1: upper,
            l2: upper,
            l3: lower,
            l4: lower,
            spring_k,
            spring_rest: 0.18,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lens = [self.l0, self.l1, self.l2, self.l3, self.l4, self.spring_rest];
        if lens.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidParam("leg lengths must be positive".into()));
        }
        if self.l1 != self.l2 || self.l3 != self.l4 {
            return Err(Error::InvalidParam(
                "diamond leg requires l1 == l2 and l3 == l4".into(),
            ));
        }
        if self.l3 <= 0.5 * self.l0 {
            return Err(Error::InvalidParam(
                "lower links must exceed half the motor separation".into(),
            ));
        }
        if !(self.spring_k >= 0.0) {
            return Err(Error::InvalidParam("spring stiffness must be >= 0".into()));
        }
        Ok(())
    }

    pub fn motor1(&self) -> Vec2 {
        Vec2::new(-0.5 * self.l0, 0.0)
    }

    pub fn motor2(&self) -> Vec2 {
        Vec2::new(0.5 * self.l0, 0.0)
    }

    pub fn knee1(&self, theta1: f64) -> Vec2 {
        let (s, c) = theta1.sin_cos();
        self.motor1() + self.l1 * Vec2::new(-s, c)
    }

    pub fn knee2(&self, theta2: f64) -> Vec2 {
        let (s, c) = theta2.sin_cos();
        self.motor2() + self.l2 * Vec2::new(s, c)
    }

    /// `d knee1 / d theta1`.
    pub fn knee1_rate(&self, theta1: f64) -> Vec2 {
        let (s, c) = theta1.sin_cos();
        self.l1 * Vec2::new(-c, -s)
    }

    /// `d knee2 / d theta2`.
    pub fn knee2_rate(&self, theta2: f64) -> Vec2 {
        let (s, c) = theta2.sin_cos();
        self.l2 * Vec2::new(c, -s)
    }

    /// Paw depth with both chains fully stretched in the symmetric pose.
    pub fn extended_length(&self) -> f64 {
        let reach = self.l1 + self.l3;
        (reach * reach - 0.25 * self.l0 * self.l0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPose {
    pub theta1: f64,
    pub theta2: f64,
    pub knee1: Vec2,
    pub knee2: Vec2,
    pub paw: Vec2,
}

impl LegPose {
    pub fn knee_distance(&self) -> f64 {
        (self.knee2 - self.knee1).norm()
    }
}

/// Distal intersection of the circles `|p - c1| = r1` and `|p - c2| = r2`.
fn distal_intersection(c1: Vec2, r1: f64, c2: Vec2, r2: f64) -> Result<Vec2> {
    let delta = c2 - c1;
    let d = delta.norm();
    if d < 1e-12 {
        return Err(Error::Infeasible("knee circles coincide".into()));
    }
    if d > r1 + r2 || d < (r1 - r2).abs() {
        return Err(Error::Infeasible(format!(
            "knee separation {d:.4} m out of reach"
        )));
    }
    let a = (r1 * r1 - r2 * r2 + d * d) / (2.0 * d);
    let h = (r1 * r1 - a * a).max(0.0).sqrt();
    let u = delta / d;
    let mid = c1 + a * u;
    let perp = Vec2::new(-u.y, u.x);
    let p1 = mid + h * perp;
    let p2 = mid - h * perp;
    Ok(if p1.y >= p2.y { p1 } else { p2 })
}

pub fn forward_kinematics(geom: &LegGeometry, theta1: f64, theta2: f64) -> Result<LegPose> {
    if !(theta1.is_finite() && theta2.is_finite()) {
        return Err(Error::NonFinite("motor angle"));
    }
    let knee1 = geom.knee1(theta1);
    let knee2 = geom.knee2(theta2);
    let paw = distal_intersection(knee1, geom.l3, knee2, geom.l4)?;
    Ok(LegPose {
        theta1,
        theta2,
        knee1,
        knee2,
        paw,
    })
}

/// Motor angles placing the paw at `paw`, knees on the outer branch (knee 1
/// left of the motor-1-to-paw line, knee 2 right of the motor-2 line).
pub fn inverse_kinematics(geom: &LegGeometry, paw: &Vec2) -> Result<(f64, f64)> {
    if !(paw.x.is_finite() && paw.y.is_finite()) {
        return Err(Error::NonFinite("paw position"));
    }
    let outer = |motor: Vec2, upper: f64, lower: f64, sign: f64| -> Result<Vec2> {
        let delta = paw - motor;
        let d = delta.norm();
        if d < 1e-12 || d > upper + lower || d < (upper - lower).abs() {
            return Err(Error::Infeasible(format!("paw at distance {d:.4} m out of reach")));
        }
        let a = (upper * upper - lower * lower + d * d) / (2.0 * d);
        let h = (upper * upper - a * a).max(0.0).sqrt();
        let u = delta / d;
        let perp = Vec2::new(-u.y, u.x);
        Ok(motor + a * u + sign * h * perp)
    };
    let k1 = outer(geom.motor1(), geom.l1, geom.l3, 1.0)? - geom.motor1();
    let k2 = outer(geom.motor2(), geom.l2, geom.l4, -1.0)? - geom.motor2();
    Ok(((-k1.x).atan2(k1.y), k2.x.atan2(k2.y)))
}

/// Jacobian without the conditioning check, for an already-solved pose.
pub fn jacobian_at(geom: &LegGeometry, pose: &LegPose) -> Option<Mat2> {
    let a = pose.paw - pose.knee1;
    let b = pose.paw - pose.knee2;
    // rows of the closure constraint normals
    let m = Mat2::new(a.x, a.y, b.x, b.y);
    let rhs = Mat2::new(
        a.dot(&geom.knee1_rate(pose.theta1)),
        0.0,
        0.0,
        b.dot(&geom.knee2_rate(pose.theta2)),
    );
    m.try_inverse().map(|inv| inv * rhs)
}

/// `∂paw / ∂(theta1, theta2)`; errors near singular configurations.
pub fn jacobian(geom: &LegGeometry, theta1: f64, theta2: f64) -> Result<Mat2> {
    let pose = forward_kinematics(geom, theta1, theta2)?;
    let j = jacobian_at(geom, &pose).ok_or(Error::Singular(0.0))?;
    let sv = j.singular_values();
    let (hi, lo) = (sv.max(), sv.min());
    // scale by the leg reach so a fully stretched (vanishing) Jacobian also counts
    let ratio = lo / hi.max(geom.l1 + geom.l3);
    if !(ratio > SINGULAR_RATIO) {
        return Err(Error::Singular(ratio));
    }
    Ok(j)
}

/// Spring potential energy at a pose. The cord only pulls.
pub fn spring_energy(geom: &LegGeometry, pose: &LegPose) -> f64 {
    let stretch = pose.knee_distance() - geom.spring_rest;
    if stretch > 0.0 {
        0.5 * geom.spring_k * stretch * stretch
    } else {
        0.0
    }
}

/// Joint torques produced by the inter-knee cord at a solved pose.
pub fn spring_torque_at(geom: &LegGeometry, pose: &LegPose) -> (f64, f64) {
    let delta = pose.knee2 - pose.knee1;
    let d = delta.norm();
    let stretch = d - geom.spring_rest;
    if stretch <= 0.0 || d == 0.0 {
        return (0.0, 0.0);
    }
    let tension = geom.spring_k * stretch;
    let u = delta / d;
    // dd/dθ1 = -u·knee1', dd/dθ2 = u·knee2'
    let dd1 = -u.dot(&geom.knee1_rate(pose.theta1));
    let dd2 = u.dot(&geom.knee2_rate(pose.theta2));
    (-tension * dd1, -tension * dd2)
}

pub fn spring_torque(geom: &LegGeometry, theta1: f64, theta2: f64) -> Result<(f64, f64)> {
    let pose = forward_kinematics(geom, theta1, theta2)?;
    Ok(spring_torque_at(geom, &pose))
}

/// Inclusive per-joint motion range, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointLimits {
    pub min: f64,
    pub max: f64,
}

impl JointLimits {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    /// `[-30°, 125°]`, shared by every motor.
    pub fn motor() -> Self {
        Self::new((-30.0f64).to_radians(), 125.0f64.to_radians())
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

impl Default for JointLimits {
    fn default() -> Self {
        Self::motor()
    }
}

/// Grid-sampled feasibility map over a square of motor angles.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub limits: JointLimits,
    pub resolution: usize,
    /// Feasible `(theta1, theta2)` grid nodes, row-major over `theta1`.
    pub feasible: Vec<(f64, f64)>,
}

impl Workspace {
    pub fn fraction(&self) -> f64 {
        self.feasible.len() as f64 / (self.resolution * self.resolution) as f64
    }

    pub fn contains(&self, theta1: f64, theta2: f64) -> bool {
        self.feasible
            .iter()
            .any(|&(a, b)| (a - theta1).abs() < 1e-12 && (b - theta2).abs() < 1e-12)
    }
}

pub fn grid_values(limits: &JointLimits, resolution: usize) -> Vec<f64> {
    let n = resolution.max(2);
    let mut v: Vec<f64> = (0..n)
        .map(|i| limits.min + limits.span() * i as f64 / (n - 1) as f64)
        .collect();
    // keep the nominal zero pose on the grid when it lies inside the limits
    if limits.contains(0.0) {
        if let Some(closest) = v
            .iter_mut()
            .min_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
        {
            *closest = 0.0;
        }
    }
    v
}

pub fn workspace_sample(geom: &LegGeometry, limits: &JointLimits, resolution: usize) -> Workspace {
    let values = grid_values(limits, resolution);
    let mut feasible = Vec::new();
    for &t1 in &values {
        for &t2 in &values {
            if forward_kinematics(geom, t1, t2).is_ok() {
                feasible.push((t1, t2));
            }
        }
    }
    Workspace {
        limits: *limits,
        resolution: values.len(),
        feasible,
    }
}
