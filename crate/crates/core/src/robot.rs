//! Physical robot model built from design parameters.
//!
//! Body frame: origin at the torso's geometric center, `x` forward, `y` left,
//! `z` up. Legs are indexed front-left, front-right, back-left, back-right and
//! joints as `3 * leg + {hip, motor1, motor2}`. Each hip rotates its leg plane
//! about an axis parallel to body `x`; a positive hip angle abducts the leg
//! (swings it outward) on both sides.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{parallel_axis, sum_inertia, Inertia, Mat3, Pose, Vec3};
use crate::linkage::{self, LegGeometry, LegPose, Vec2};

pub const NUM_LEGS: usize = 4;
pub const NUM_JOINTS: usize = 12;

pub const HIP: usize = 0;
pub const MOTOR1: usize = 1;
pub const MOTOR2: usize = 2;

pub type Joints = [f64; NUM_JOINTS];

pub fn joint_index(leg: usize, which: usize) -> usize {
    3 * leg + which
}

// Baseline link lengths the leg mass is quoted at.
const BASE_UPPER: f64 = 0.175;
const BASE_LOWER: f64 = 0.3;
const PAW_BASE_MASS: f64 = 0.05;
pub const PAW_RADIUS: f64 = 0.025;

const UPPER_WIDTH: f64 = 0.03;
const UPPER_THICKNESS: f64 = 0.015;
const LOWER_RADIUS: f64 = 0.01;
const MOTOR_RADIUS: f64 = 0.04;
const MOTOR_LENGTH: f64 = 0.04;
/// Lateral offset of the leg plane from the hip axis.
pub const LEG_OFFSET: f64 = 0.06;

const BODY_HEIGHT: f64 = 0.1;
const RAIL_WIDTH: f64 = 0.04;
const ELECTRONICS_DIMS: [f64; 3] = [0.25, 0.15, 0.08];
/// Structural mass per metre of frame (`2 l_body + w_f + w_b`), calibrated so
/// the design point weighs what the built robot weighs.
pub const STRUCTURE_DENSITY: f64 = 2.46 / 1.71;

pub const LINK_PROXY_RADIUS: f64 = 0.015;
pub const TORSO_MARGIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesignParams {
    pub l_body: f64,
    pub w_body_f: f64,
    pub w_body_b: f64,
    pub leg: LegGeometry,
    /// Leg mass at the baseline link lengths; link mass scales with length.
    pub mass_leg: f64,
    pub mass_electronics: f64,
    pub mass_motors: f64,
    pub paw_extra_mass: f64,
}

impl Default for DesignParams {
    fn default() -> Self {
        Self::design()
    }
}

impl DesignParams {
    /// The built robot.
    pub fn design() -> Self {
        Self {
            l_body: 0.6,
            w_body_f: 0.21,
            w_body_b: 0.3,
            leg: LegGeometry::design(),
            mass_leg: 0.63,
            mass_electronics: 2.0,
            mass_motors: 6.82,
            paw_extra_mass: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.leg.validate()?;
        for (name, v) in [
            ("l_body", self.l_body),
            ("w_body_f", self.w_body_f),
            ("w_body_b", self.w_body_b),
            ("mass_leg", self.mass_leg),
            ("mass_electronics", self.mass_electronics),
            ("mass_motors", self.mass_motors),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParam(format!("{name} must be positive")));
            }
        }
        if self.mass_leg <= PAW_BASE_MASS {
            return Err(Error::InvalidParam("mass_leg must exceed the paw mass".into()));
        }
        if !(self.paw_extra_mass >= 0.0) {
            return Err(Error::InvalidParam("paw_extra_mass must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotorSpec {
    pub tau_max: f64,
    pub speed_max: f64,
    pub kp: f64,
    pub kd: f64,
    /// Rotor inertia reflected through the gearbox, kg·m².
    pub rotor_inertia: f64,
}

impl MotorSpec {
    /// Five-bar actuator (310 RPM).
    pub fn ak70_10() -> Self {
        Self {
            tau_max: 24.8,
            speed_max: 310.0 * std::f64::consts::TAU / 60.0,
            kp: 40.0,
            kd: 1.0,
            rotor_inertia: 0.005,
        }
    }

    /// Hip actuator (390 RPM).
    pub fn ak80_9() -> Self {
        Self {
            tau_max: 18.0,
            speed_max: 390.0 * std::f64::consts::TAU / 60.0,
            kp: 40.0,
            kd: 1.0,
            rotor_inertia: 0.005,
        }
    }

    pub fn with_tau_max(mut self, tau_max: f64) -> Self {
        self.tau_max = tau_max;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegMount {
    /// Hip axis point in the body frame.
    pub hip: Vec3,
    /// `+1` for left legs, `-1` for right legs.
    pub side: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegMasses {
    pub upper: f64,
    pub lower: f64,
    pub paw: f64,
    pub motor: f64,
}

impl LegMasses {
    pub fn total(&self) -> f64 {
        2.0 * (self.upper + self.lower + self.motor) + self.paw
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub params: DesignParams,
    /// Torso, electronics, structure and hip motors.
    pub body: Inertia,
    pub legs: [LegMount; NUM_LEGS],
    pub leg_masses: LegMasses,
    pub motors: [MotorSpec; NUM_JOINTS],
    /// Half extents of the torso collision box (before the margin).
    pub torso_half: Vec3,
    pub total_mass: f64,
}

pub fn build_model(p: &DesignParams) -> Result<RobotModel> {
    p.validate()?;
    let g = &p.leg;
    // every joint pose must be reachable from the nominal stance
    linkage::forward_kinematics(g, 0.0, 0.0)?;

    let motor_mass = p.mass_motors / NUM_JOINTS as f64;
    let link_density = (p.mass_leg - PAW_BASE_MASS) / (2.0 * (BASE_UPPER + BASE_LOWER));
    let leg_masses = LegMasses {
        upper: link_density * g.l1,
        lower: link_density * g.l3,
        paw: PAW_BASE_MASS + p.paw_extra_mass,
        motor: motor_mass,
    };

    let (l, wf, wb) = (p.l_body, p.w_body_f, p.w_body_b);
    let legs = [
        LegMount { hip: Vec3::new(0.5 * l, 0.5 * wf, 0.0), side: 1.0 },
        LegMount { hip: Vec3::new(0.5 * l, -0.5 * wf, 0.0), side: -1.0 },
        LegMount { hip: Vec3::new(-0.5 * l, 0.5 * wb, 0.0), side: 1.0 },
        LegMount { hip: Vec3::new(-0.5 * l, -0.5 * wb, 0.0), side: -1.0 },
    ];

    let rail_y = 0.25 * (wf + wb);
    let mut parts: Vec<(Inertia, Pose)> = vec![
        (
            Inertia::cuboid(
                p.mass_electronics,
                ELECTRONICS_DIMS[0],
                ELECTRONICS_DIMS[1],
                ELECTRONICS_DIMS[2],
            ),
            Pose::identity(),
        ),
        (
            Inertia::cuboid(STRUCTURE_DENSITY * l, l, RAIL_WIDTH, BODY_HEIGHT),
            Pose::from_translation(Vec3::new(0.0, rail_y, 0.0)),
        ),
        (
            Inertia::cuboid(STRUCTURE_DENSITY * l, l, RAIL_WIDTH, BODY_HEIGHT),
            Pose::from_translation(Vec3::new(0.0, -rail_y, 0.0)),
        ),
        (
            Inertia::cuboid(STRUCTURE_DENSITY * wf, RAIL_WIDTH, wf, BODY_HEIGHT),
            Pose::from_translation(Vec3::new(0.5 * l, 0.0, 0.0)),
        ),
        (
            Inertia::cuboid(STRUCTURE_DENSITY * wb, RAIL_WIDTH, wb, BODY_HEIGHT),
            Pose::from_translation(Vec3::new(-0.5 * l, 0.0, 0.0)),
        ),
    ];
    for leg in &legs {
        // hip motor stator, axis along x
        let rot = Mat3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0);
        parts.push((
            Inertia::cylinder(motor_mass, MOTOR_RADIUS, MOTOR_LENGTH),
            Pose::new(rot, leg.hip),
        ));
    }
    let body = crate::geom::compose_inertia(&parts)?;

    let mut motors = [MotorSpec::ak70_10(); NUM_JOINTS];
    for leg in 0..NUM_LEGS {
        motors[joint_index(leg, HIP)] = MotorSpec::ak80_9();
    }

    let total_mass = body.mass + NUM_LEGS as f64 * leg_masses.total();
    Ok(RobotModel {
        params: *p,
        body,
        legs,
        leg_masses,
        motors,
        torso_half: Vec3::new(0.5 * l, 0.5 * wf.min(wb), 0.5 * BODY_HEIGHT),
        total_mass,
    })
}

/// One leg's joint coordinates and rates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LegState {
    pub hip: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub hip_rate: f64,
    pub theta1_rate: f64,
    pub theta2_rate: f64,
}

impl LegState {
    pub fn from_joints(leg: usize, q: &Joints, qd: &Joints) -> Self {
        let i = 3 * leg;
        Self {
            hip: q[i],
            theta1: q[i + 1],
            theta2: q[i + 2],
            hip_rate: qd[i],
            theta1_rate: qd[i + 1],
            theta2_rate: qd[i + 2],
        }
    }
}

/// Rigid map from leg-plane coordinates `(u, v)` to the body frame.
#[derive(Debug, Clone, Copy)]
pub struct LegFrame {
    pub rotation: Mat3,
    pub origin: Vec3,
    pub hip: Vec3,
    /// Hip angular velocity, body frame.
    pub spin: Vec3,
}

impl LegFrame {
    pub fn new(mount: &LegMount, hip_angle: f64, hip_rate: f64) -> Self {
        let (s, c) = (mount.side * hip_angle).sin_cos();
        let rotation = Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c);
        let origin = mount.hip + rotation * Vec3::new(0.0, mount.side * LEG_OFFSET, 0.0);
        Self {
            rotation,
            origin,
            hip: mount.hip,
            spin: Vec3::new(mount.side * hip_rate, 0.0, 0.0),
        }
    }

    pub fn point(&self, p: &Vec2) -> Vec3 {
        self.origin + self.rotation * Vec3::new(p.x, 0.0, -p.y)
    }

    /// Body-frame velocity (relative to the torso) of a plane point moving at `rate`.
    pub fn velocity(&self, p: &Vec2, rate: &Vec2) -> Vec3 {
        let r = self.point(p);
        self.spin.cross(&(r - self.hip)) + self.rotation * Vec3::new(rate.x, 0.0, -rate.y)
    }

    pub fn normal(&self) -> Vec3 {
        self.rotation * Vec3::y()
    }
}

/// Mass, pose and relative motion of one rigid leg part.
#[derive(Debug, Clone, Copy)]
pub struct PartMotion {
    pub inertia: Inertia,
    /// Velocity of the part's center relative to the torso, body frame.
    pub velocity: Vec3,
    /// Angular velocity relative to the torso, body frame.
    pub spin: Vec3,
}

#[derive(Debug, Clone, Copy)]
enum Section {
    Cuboid { width: f64, thickness: f64 },
    Cylinder { radius: f64 },
}

/// Body-frame moment of a slender link with long axis `e` lying in the plane with normal `n`.
fn link_moment(mass: f64, length: f64, section: Section, e: &Vec3, n: &Vec3) -> Mat3 {
    let w = e.cross(n);
    let (ie, in_, iw) = match section {
        Section::Cuboid { width, thickness } => (
            mass * (width * width + thickness * thickness) / 12.0,
            mass * (length * length + width * width) / 12.0,
            mass * (length * length + thickness * thickness) / 12.0,
        ),
        Section::Cylinder { radius } => {
            let t = mass * (3.0 * radius * radius + length * length) / 12.0;
            (0.5 * mass * radius * radius, t, t)
        }
    };
    ie * e * e.transpose() + in_ * n * n.transpose() + iw * w * w.transpose()
}

/// Leg-plane geometry and rates needed for momentum and collision work.
#[derive(Debug, Clone, Copy)]
pub struct LegKinematics {
    pub frame: LegFrame,
    pub pose: LegPose,
    pub knee1_rate: Vec2,
    pub knee2_rate: Vec2,
    pub paw_rate: Vec2,
}

impl RobotModel {
    pub fn leg_geometry(&self) -> &LegGeometry {
        &self.params.leg
    }

    pub fn leg_kinematics(&self, leg: usize, s: &LegState) -> Result<LegKinematics> {
        let g = &self.params.leg;
        let pose = linkage::forward_kinematics(g, s.theta1, s.theta2)?;
        let jac = linkage::jacobian_at(g, &pose).ok_or(Error::Singular(0.0))?;
        let rates = Vec2::new(s.theta1_rate, s.theta2_rate);
        Ok(LegKinematics {
            frame: LegFrame::new(&self.legs[leg], s.hip, s.hip_rate),
            pose,
            knee1_rate: g.knee1_rate(s.theta1) * s.theta1_rate,
            knee2_rate: g.knee2_rate(s.theta2) * s.theta2_rate,
            paw_rate: jac * rates,
        })
    }

    /// Every rigid leg part with its body-frame placement and relative motion.
    pub fn leg_parts(&self, leg: usize, s: &LegState) -> Result<[PartMotion; 7]> {
        let k = self.leg_kinematics(leg, s)?;
        let g = &self.params.leg;
        let m = &self.leg_masses;
        let f = &k.frame;
        let n = f.normal();

        let motor = |at: Vec2| {
            // stator: axis along the plane normal, rotates with the hip only
            let axial = 0.5 * m.motor * MOTOR_RADIUS * MOTOR_RADIUS;
            let trans = m.motor * (3.0 * MOTOR_RADIUS * MOTOR_RADIUS + MOTOR_LENGTH * MOTOR_LENGTH) / 12.0;
            let moment = trans * Mat3::identity() + (axial - trans) * n * n.transpose();
            PartMotion {
                inertia: Inertia { mass: m.motor, com: f.point(&at), moment },
                velocity: f.velocity(&at, &Vec2::zeros()),
                spin: f.spin,
            }
        };
        let link = |a: Vec2, ad: Vec2, b: Vec2, bd: Vec2, mass: f64, section: Section| {
            let mid = 0.5 * (a + b);
            let mid_rate = 0.5 * (ad + bd);
            let d = b - a;
            let dd = bd - ad;
            let length = d.norm();
            // in-plane (x, z) = (u, -v); rotation rate about the plane normal
            let (ax, az) = (d.x, -d.y);
            let (axd, azd) = (dd.x, -dd.y);
            let beta = (az * axd - ax * azd) / (length * length);
            let e = f.rotation * Vec3::new(ax, 0.0, az) / length;
            PartMotion {
                inertia: Inertia {
                    mass,
                    com: f.point(&mid),
                    moment: link_moment(mass, length, section, &e, &n),
                },
                velocity: f.velocity(&mid, &mid_rate),
                spin: f.spin + beta * n,
            }
        };
        let upper = Section::Cuboid { width: UPPER_WIDTH, thickness: UPPER_THICKNESS };
        let lower = Section::Cylinder { radius: LOWER_RADIUS };
        let zero = Vec2::zeros();
        let p = &k.pose;
        Ok([
            motor(g.motor1()),
            motor(g.motor2()),
            link(g.motor1(), zero, p.knee1, k.knee1_rate, m.upper, upper),
            link(g.motor2(), zero, p.knee2, k.knee2_rate, m.upper, upper),
            link(p.knee1, k.knee1_rate, p.paw, k.paw_rate, m.lower, lower),
            link(p.knee2, k.knee2_rate, p.paw, k.paw_rate, m.lower, lower),
            PartMotion {
                inertia: Inertia {
                    mass: m.paw,
                    com: f.point(&p.paw),
                    moment: Mat3::identity() * 0.4 * m.paw * PAW_RADIUS * PAW_RADIUS,
                },
                velocity: f.velocity(&p.paw, &k.paw_rate),
                spin: f.spin,
            },
        ])
    }
}

/// Composite leg inertia plus its motion relative to the torso.
#[derive(Debug, Clone, Copy)]
pub struct LegMomentum {
    /// Body-frame mass properties (moment about the leg's own center of mass).
    pub inertia: Inertia,
    /// Linear momentum relative to the torso.
    pub linear: Vec3,
    /// Angular momentum of the relative motion about the leg's center of mass.
    pub angular: Vec3,
}

impl LegMomentum {
    /// Relative angular momentum about an arbitrary body-frame point.
    pub fn angular_about(&self, point: &Vec3) -> Vec3 {
        self.angular + (self.inertia.com - point).cross(&self.linear)
    }
}

/// Leg inertia and angular momentum from joint motion, body frame.
pub fn leg_momentum_terms(
    model: &RobotModel,
    leg: usize,
    hip: f64,
    theta1: f64,
    theta2: f64,
    rates: [f64; 3],
) -> Result<LegMomentum> {
    let s = LegState {
        hip,
        theta1,
        theta2,
        hip_rate: rates[0],
        theta1_rate: rates[1],
        theta2_rate: rates[2],
    };
    leg_momentum(model, leg, &s)
}

pub fn leg_momentum(model: &RobotModel, leg: usize, s: &LegState) -> Result<LegMomentum> {
    let parts = model.leg_parts(leg, s)?;
    let inertias = parts.map(|p| p.inertia);
    let inertia = sum_inertia(&inertias)?;
    let mut linear = Vec3::zeros();
    let mut angular = Vec3::zeros();
    for p in &parts {
        linear += p.inertia.mass * p.velocity;
        angular += p.inertia.mass * (p.inertia.com - inertia.com).cross(&p.velocity)
            + p.inertia.moment * p.spin;
    }
    Ok(LegMomentum {
        inertia,
        linear,
        angular,
    })
}

/// Whole-robot mass properties and internal momentum at a joint state.
#[derive(Debug, Clone, Copy)]
pub struct SystemMomentum {
    /// About the system center of mass, body frame.
    pub inertia: Inertia,
    /// Relative angular momentum about the system center of mass, body frame.
    pub internal: Vec3,
    /// Relative linear momentum (mass times center-of-mass velocity in the body frame).
    pub linear: Vec3,
}

impl SystemMomentum {
    /// Moment about a body-frame point rather than the center of mass.
    pub fn moment_about(&self, point: &Vec3) -> Mat3 {
        self.inertia.moment_about(point)
    }

    pub fn internal_about(&self, point: &Vec3) -> Vec3 {
        self.internal + (self.inertia.com - point).cross(&self.linear)
    }
}

pub fn system_momentum(model: &RobotModel, q: &Joints, qd: &Joints) -> Result<SystemMomentum> {
    let mut legs = [None; NUM_LEGS];
    for (leg, slot) in legs.iter_mut().enumerate() {
        *slot = Some(leg_momentum(model, leg, &LegState::from_joints(leg, q, qd))?);
    }
    let legs = legs.map(|l| l.expect("filled above"));
    let parts = [
        model.body,
        legs[0].inertia,
        legs[1].inertia,
        legs[2].inertia,
        legs[3].inertia,
    ];
    let inertia = sum_inertia(&parts)?;
    let mut internal = Vec3::zeros();
    let mut linear = Vec3::zeros();
    for l in &legs {
        internal += l.angular_about(&inertia.com);
        linear += l.linear;
    }
    Ok(SystemMomentum {
        inertia,
        internal,
        linear,
    })
}

/// Diagonal joint-space inertia of each joint with the rest of the robot frozen.
pub fn joint_inertias(model: &RobotModel, q: &Joints) -> Result<Joints> {
    let mut out = [0.0; NUM_JOINTS];
    for leg in 0..NUM_LEGS {
        for which in 0..3 {
            let mut qd = [0.0; NUM_JOINTS];
            qd[joint_index(leg, which)] = 1.0;
            let s = LegState::from_joints(leg, q, &qd);
            let parts = model.leg_parts(leg, &s)?;
            let mut ke2 = 0.0;
            for p in &parts {
                ke2 += p.inertia.mass * p.velocity.norm_squared()
                    + p.spin.dot(&(p.inertia.moment * p.spin));
            }
            let j = joint_index(leg, which);
            out[j] = ke2 + model.motors[j].rotor_inertia;
        }
    }
    Ok(out)
}

/// Outcome of a self-collision query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision {
    pub colliding: bool,
    /// Largest proxy overlap, metres; zero when separated or exactly touching.
    pub depth: f64,
}

/// Closest distance between segments `p0-p1` and `q0-q1`.
pub fn segment_distance(p0: &Vec3, p1: &Vec3, q0: &Vec3, q1: &Vec3) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let eps = 1e-18;
    let (s, t);
    if a <= eps && e <= eps {
        return r.norm();
    }
    if a <= eps {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= eps {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > eps {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

/// Distance from a point to an origin-centered axis-aligned box.
pub fn point_box_distance(p: &Vec3, half: &Vec3) -> f64 {
    let d = Vec3::new(
        (p.x.abs() - half.x).max(0.0),
        (p.y.abs() - half.y).max(0.0),
        (p.z.abs() - half.z).max(0.0),
    );
    d.norm()
}

/// Distance from a segment to a box; the distance is convex along the segment.
pub fn segment_box_distance(a: &Vec3, b: &Vec3, half: &Vec3) -> f64 {
    let f = |t: f64| point_box_distance(&(a + (b - a) * t), half);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    f(0.5 * (lo + hi)).min(f(0.0)).min(f(1.0))
}

/// Penetration depth of a sphere against the margin-inflated torso box.
pub fn sphere_box_depth(center: &Vec3, radius: f64, half: &Vec3, margin: f64) -> f64 {
    radius + margin - point_box_distance(center, half)
}

#[derive(Debug, Clone, Copy)]
struct LegProxies {
    /// motor1-knee1, motor2-knee2, knee1-paw, knee2-paw
    segments: [(Vec3, Vec3); 4],
    paw: Vec3,
}

fn leg_proxies(model: &RobotModel, leg: usize, q: &Joints) -> Result<LegProxies> {
    let g = &model.params.leg;
    let i = 3 * leg;
    let pose = linkage::forward_kinematics(g, q[i + 1], q[i + 2])?;
    let f = LegFrame::new(&model.legs[leg], q[i], 0.0);
    let (m1, m2) = (f.point(&g.motor1()), f.point(&g.motor2()));
    let (k1, k2, paw) = (f.point(&pose.knee1), f.point(&pose.knee2), f.point(&pose.paw));
    Ok(LegProxies {
        segments: [(m1, k1), (m2, k2), (k1, paw), (k2, paw)],
        paw,
    })
}

/// Proxy-geometry self-collision test: leg capsules and paw spheres against
/// each other and against the torso box.
pub fn self_collision(model: &RobotModel, q: &Joints) -> Collision {
    let mut proxies = Vec::with_capacity(NUM_LEGS);
    for leg in 0..NUM_LEGS {
        match leg_proxies(model, leg, q) {
            Ok(p) => proxies.push(p),
            // an unassemblable leg is treated as a crash
            Err(_) => {
                return Collision {
                    colliding: true,
                    depth: f64::INFINITY,
                }
            }
        }
    }
    let half = model.torso_half;
    let mut depth = f64::NEG_INFINITY;
    for p in &proxies {
        // upper links and motors are mounted on the torso; only distal parts can hit it
        for (a, b) in &p.segments[2..] {
            let d = LINK_PROXY_RADIUS + TORSO_MARGIN - segment_box_distance(a, b, &half);
            depth = depth.max(d);
        }
        depth = depth.max(sphere_box_depth(&p.paw, PAW_RADIUS, &half, TORSO_MARGIN));
    }
    for i in 0..NUM_LEGS {
        for j in (i + 1)..NUM_LEGS {
            let (a, b) = (&proxies[i], &proxies[j]);
            for (s0, s1) in &a.segments {
                for (t0, t1) in &b.segments {
                    let d = 2.0 * LINK_PROXY_RADIUS - segment_distance(s0, s1, t0, t1);
                    depth = depth.max(d);
                }
                let d = LINK_PROXY_RADIUS + PAW_RADIUS - segment_distance(s0, s1, &b.paw, &b.paw);
                depth = depth.max(d);
            }
            for (t0, t1) in &b.segments {
                let d = LINK_PROXY_RADIUS + PAW_RADIUS - segment_distance(t0, t1, &a.paw, &a.paw);
                depth = depth.max(d);
            }
            depth = depth.max(2.0 * PAW_RADIUS - (a.paw - b.paw).norm());
        }
    }
    Collision {
        colliding: depth > 0.0,
        depth: depth.max(0.0),
    }
}

/// Mirror a joint vector left-right (swap FL/FR and BL/BR).
pub fn mirror_joints(q: &Joints) -> Joints {
    let mut out = *q;
    for (a, b) in [(0usize, 1usize), (2, 3)] {
        for k in 0..3 {
            out[3 * a + k] = q[3 * b + k];
            out[3 * b + k] = q[3 * a + k];
        }
    }
    out
}

/// Human-readable mass and inertia summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MassReport {
    pub total_mass: f64,
    pub body_mass: f64,
    pub leg_mass: f64,
    pub com: [f64; 3],
    /// Principal-axis diagonal of the stance inertia about the center of mass.
    pub inertia_diag: [f64; 3],
}

pub fn mass_report(model: &RobotModel) -> Result<MassReport> {
    let zero = [0.0; NUM_JOINTS];
    let sys = system_momentum(model, &zero, &zero)?;
    let i = sys.inertia.moment;
    Ok(MassReport {
        total_mass: model.total_mass,
        body_mass: model.body.mass,
        leg_mass: model.leg_masses.total(),
        com: [sys.inertia.com.x, sys.inertia.com.y, sys.inertia.com.z],
        inertia_diag: [i[(0, 0)], i[(1, 1)], i[(2, 2)]],
    })
}

/// Point-mass contribution helper used by oracles and tests.
pub fn point_cloud_moment(points: &[(f64, Vec3)], about: &Vec3) -> Mat3 {
    points
        .iter()
        .fold(Mat3::zeros(), |acc, (m, p)| acc + parallel_axis(*m, &(p - about)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design() -> RobotModel {
        build_model(&DesignParams::design()).unwrap()
    }

    #[test]
    fn design_mass_matches_built_robot() {
        let m = design();
        assert!((m.total_mass - 13.8).abs() < 0.15 * 13.8);
        assert!((12.0..=16.0).contains(&m.total_mass));
        assert_abs_diff_eq!(m.total_mass, 13.8, epsilon = 1e-9);
    }

    #[test]
    fn total_mass_is_sum_of_parts() {
        let m = design();
        let zero = [0.0; NUM_JOINTS];
        let sys = system_momentum(&m, &zero, &zero).unwrap();
        assert_abs_diff_eq!(sys.inertia.mass, m.total_mass, epsilon = 1e-12);
    }

    #[test]
    fn longer_body_is_heavier() {
        let mut p = DesignParams::design();
        let a = build_model(&p).unwrap().body.mass;
        p.l_body *= 2.0;
        assert!(build_model(&p).unwrap().body.mass > a);
    }

    #[test]
    fn wider_body_rolls_harder() {
        let zero = [0.0; NUM_JOINTS];
        let roll = |wf: f64, wb: f64| {
            let p = DesignParams { w_body_f: wf, w_body_b: wb, ..DesignParams::design() };
            let m = build_model(&p).unwrap();
            system_momentum(&m, &zero, &zero).unwrap().inertia.moment[(0, 0)]
        };
        assert!(roll(0.4, 0.4) > roll(0.21, 0.3));
        assert!(roll(0.6, 0.6) > roll(0.4, 0.4));
    }

    #[test]
    fn infeasible_leg_rejected() {
        let p = DesignParams {
            leg: LegGeometry { l3: 0.04, l4: 0.04, ..LegGeometry::design() },
            ..DesignParams::design()
        };
        assert!(build_model(&p).is_err());
    }

    #[test]
    fn deterministic_build() {
        assert_eq!(design(), design());
    }

    #[test]
    fn resting_leg_has_no_momentum() {
        let m = design();
        let lm = leg_momentum_terms(&m, 0, 0.3, 0.5, 0.2, [0.0; 3]).unwrap();
        assert_eq!(lm.angular, Vec3::zeros());
        assert_eq!(lm.linear, Vec3::zeros());
    }

    #[test]
    fn paw_mass_increases_leg_inertia() {
        let about_hip = |extra: f64| {
            let p = DesignParams { paw_extra_mass: extra, ..DesignParams::design() };
            let m = build_model(&p).unwrap();
            let lm = leg_momentum_terms(&m, 0, 0.0, 0.0, 0.0, [0.0; 3]).unwrap();
            lm.inertia.moment_about(&m.legs[0].hip)[(0, 0)]
        };
        assert!(about_hip(0.2) > about_hip(0.0));
    }

    /// Sample points in each solid in its local frame and map them through the
    /// endpoint positions only; velocities by central differences in time.
    fn leg_cloud(m: &RobotModel, leg: usize, s: &LegState, rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, Vec3, Vec3)> {
        let g = m.params.leg;
        let lm = m.leg_masses;
        let h = 1e-6;
        let at = |t: f64| {
            let st = LegState {
                hip: s.hip + t * s.hip_rate,
                theta1: s.theta1 + t * s.theta1_rate,
                theta2: s.theta2 + t * s.theta2_rate,
                ..*s
            };
            let pose = linkage::forward_kinematics(&g, st.theta1, st.theta2).unwrap();
            let f = LegFrame::new(&m.legs[leg], st.hip, 0.0);
            (f, pose)
        };
        let mut samples: Vec<(f64, Box<dyn Fn(&LegFrame, &LegPose) -> Vec3>)> = Vec::new();
        let links: [(usize, f64, bool); 4] = [(0, lm.upper, true), (1, lm.upper, true), (2, lm.lower, false), (3, lm.lower, false)];
        for &(which, mass, cuboid) in &links {
            for k in 0..n {
                // stratified along the link axis
                let t = (k as f64 + rng.gen::<f64>()) / n as f64;
                let (a, b): (f64, f64) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
                let (a, b) = if cuboid {
                    (a * UPPER_WIDTH, b * UPPER_THICKNESS)
                } else {
                    // uniform in a disc
                    let r = LOWER_RADIUS * rng.gen::<f64>().sqrt();
                    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
                    (r * phi.cos(), r * phi.sin())
                };
                let gg = g;
                samples.push((mass / n as f64, Box::new(move |f: &LegFrame, p: &LegPose| {
                    let (s0, s1) = match which {
                        0 => (gg.motor1(), p.knee1),
                        1 => (gg.motor2(), p.knee2),
                        2 => (p.knee1, p.paw),
                        _ => (p.knee2, p.paw),
                    };
                    let (a3, b3) = (f.point(&s0), f.point(&s1));
                    let e = (b3 - a3).normalize();
                    let nrm = f.normal();
                    let w = e.cross(&nrm);
                    a3 + (b3 - a3) * t + w * a + nrm * b
                })));
            }
        }
        for _ in 0..n {
            // paw sphere
            let v = loop {
                let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                if v.norm() <= 1.0 { break v * PAW_RADIUS; }
            };
            samples.push((lm.paw / n as f64, Box::new(move |f: &LegFrame, p: &LegPose| f.point(&p.paw) + f.rotation * v)));
        }
        for k in 0..2 {
            for _ in 0..n {
                let r = MOTOR_RADIUS * rng.gen::<f64>().sqrt();
                let phi = rng.gen::<f64>() * std::f64::consts::TAU;
                let y = rng.gen_range(-0.5..0.5) * MOTOR_LENGTH;
                let gg = g;
                samples.push((lm.motor / n as f64, Box::new(move |f: &LegFrame, _p: &LegPose| {
                    let c = if k == 0 { gg.motor1() } else { gg.motor2() };
                    f.point(&c) + f.rotation * Vec3::new(r * phi.cos(), y, r * phi.sin())
                })));
            }
        }
        let (f0, p0) = at(0.0);
        let (fp, pp) = at(h);
        let (fm, pm) = at(-h);
        samples
            .iter()
            .map(|(mass, place)| (*mass, place(&f0, &p0), (place(&fp, &pp) - place(&fm, &pm)) / (2.0 * h)))
            .collect()
    }

    #[test]
    fn leg_momentum_matches_point_cloud() {
        let m = build_model(&DesignParams { paw_extra_mass: 0.1, ..DesignParams::design() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..6 {
            let leg = trial % 4;
            let s = LegState {
                hip: rng.gen_range(-0.5..1.5),
                theta1: rng.gen_range(-0.5..2.0),
                theta2: rng.gen_range(-0.5..2.0),
                hip_rate: rng.gen_range(-5.0..5.0),
                theta1_rate: rng.gen_range(-5.0..5.0),
                theta2_rate: rng.gen_range(-5.0..5.0),
            };
            let lm = leg_momentum(&m, leg, &s).unwrap();
            let cloud = leg_cloud(&m, leg, &s, &mut rng, 500);
            let mass: f64 = cloud.iter().map(|c| c.0).sum();
            let com = cloud.iter().fold(Vec3::zeros(), |a, c| a + c.1 * c.0) / mass;
            let h = cloud.iter().fold(Vec3::zeros(), |a, c| a + c.0 * (c.1 - com).cross(&c.2));
            let pts: Vec<(f64, Vec3)> = cloud.iter().map(|c| (c.0, c.1)).collect();
            let i = point_cloud_moment(&pts, &com);
            assert_abs_diff_eq!(mass, lm.inertia.mass, epsilon = 1e-9);
            assert!((com - lm.inertia.com).norm() < 2e-3, "com {}", (com - lm.inertia.com).norm());
            assert!((i - lm.inertia.moment).norm() / i.norm() < 0.02, "{} {}", i, lm.inertia.moment);
            assert!((h - lm.angular).norm() / h.norm() < 0.02, "{} vs {}", h, lm.angular);
        }
    }

    #[test]
    fn nominal_stance_is_collision_free() {
        let c = self_collision(&design(), &[0.0; NUM_JOINTS]);
        assert!(!c.colliding);
        assert_eq!(c.depth, 0.0);
    }

    #[test]
    fn front_legs_adducted_collide() {
        let mut q = [0.0; NUM_JOINTS];
        q[joint_index(0, HIP)] = (-30f64).to_radians();
        q[joint_index(1, HIP)] = (-30f64).to_radians();
        // oracle: lateral paw position from the hip rotation alone
        let m = design();
        let depth = m.params.leg.extended_length();
        let a = 30f64.to_radians();
        let paw_y = m.legs[0].hip.y + LEG_OFFSET * a.cos() - depth * a.sin();
        assert!(paw_y < 0.0, "left paw crosses the mid-plane");
        let c = self_collision(&m, &q);
        assert!(c.colliding && c.depth > 0.0);
    }

    #[test]
    fn sphere_box_tangency() {
        let half = Vec3::new(0.3, 0.1, 0.05);
        let c = Vec3::new(0.0, 0.0, -0.05 - TORSO_MARGIN - PAW_RADIUS);
        let d = sphere_box_depth(&c, PAW_RADIUS, &half, TORSO_MARGIN);
        assert_abs_diff_eq!(d, 0.0, epsilon = 1e-15);
        let corner = Vec3::new(0.3, 0.1, 0.05) + Vec3::new(1.0, 1.0, 1.0).normalize() * (PAW_RADIUS + TORSO_MARGIN);
        assert_abs_diff_eq!(sphere_box_depth(&corner, PAW_RADIUS, &half, TORSO_MARGIN), 0.0, epsilon = 1e-15);
        assert!(sphere_box_depth(&(c * 0.99), PAW_RADIUS, &half, TORSO_MARGIN) > 0.0);
    }

    #[test]
    fn segment_distance_cases() {
        let d = segment_distance(
            &Vec3::new(0.0, 0.0, 0.0), &Vec3::new(1.0, 0.0, 0.0),
            &Vec3::new(0.5, 1.0, -1.0), &Vec3::new(0.5, 1.0, 1.0),
        );
        assert_abs_diff_eq!(d, 1.0, epsilon = 1e-15);
        let parallel = segment_distance(
            &Vec3::zeros(), &Vec3::x(), &Vec3::new(2.0, 0.5, 0.0), &Vec3::new(3.0, 0.5, 0.0),
        );
        assert_abs_diff_eq!(parallel, (1.0f64 + 0.25).sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn collision_mirror_symmetric() {
        let m = design();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let lim = linkage::JointLimits::motor();
        for _ in 0..500 {
            let mut q = [0.0; NUM_JOINTS];
            for v in q.iter_mut() {
                *v = rng.gen_range(lim.min..lim.max);
            }
            let a = self_collision(&m, &q);
            let b = self_collision(&m, &mirror_joints(&q));
            assert_eq!(a.colliding, b.colliding);
            assert_abs_diff_eq!(a.depth, b.depth, epsilon = 1e-12);
        }
    }

    #[test]
    fn joint_inertia_positive() {
        let m = design();
        let j = joint_inertias(&m, &[0.3; NUM_JOINTS]).unwrap();
        assert!(j.iter().all(|&v| v > 0.005));
        // hip swings the entire leg
        assert!(j[0] > j[1]);
    }
}
