//! Flight-phase attitude dynamics.
//!
//! Joints are advanced by the servo model; the torso's angular velocity is
//! whatever keeps the total angular momentum consistent with the joint
//! motion. In free flight the momentum about the center of mass is constant
//! (gravity exerts no torque about it). The rod rig locks rotation to one body
//! axis through the torso origin and lets gravity act about it; the rope rig
//! adds a pendulum-like restoring torque on roll and pitch with free yaw.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{integrate_quat, Mat3, Quat, Vec3};
use crate::linkage::JointLimits;
use crate::robot::{
    joint_inertias, self_collision, system_momentum, Collision, Joints, MotorSpec, RobotModel,
    SystemMomentum, NUM_JOINTS,
};
use crate::servo::{step_joint_with, JointState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Roll,
    Pitch,
    Yaw,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Roll, Axis::Pitch, Axis::Yaw];

    pub fn unit(&self) -> Vec3 {
        match self {
            Axis::Roll => Vec3::x(),
            Axis::Pitch => Vec3::y(),
            Axis::Yaw => Vec3::z(),
        }
    }

    pub fn index(&self) -> usize {
        match self {
            Axis::Roll => 0,
            Axis::Pitch => 1,
            Axis::Yaw => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Axis::Roll => "roll",
            Axis::Pitch => "pitch",
            Axis::Yaw => "yaw",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "roll" => Ok(Axis::Roll),
            "pitch" => Ok(Axis::Pitch),
            "yaw" => Ok(Axis::Yaw),
            other => Err(Error::InvalidParam(format!("unknown axis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "axis")]
pub enum Mode {
    FreeFloat,
    Rod(Axis),
    Rope,
}

impl Mode {
    pub fn has_gravity(&self) -> bool {
        !matches!(self, Mode::FreeFloat)
    }
}

/// Swivel-rope suspension: restoring torque on roll and pitch, free yaw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RopeRig {
    pub stiffness: f64,
    pub damping: f64,
}

impl Default for RopeRig {
    fn default() -> Self {
        Self {
            stiffness: 2.0,
            damping: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlightConfig {
    pub physics_hz: f64,
    pub control_hz: f64,
    /// Gravity used by the ground-based test rigs, m/s².
    pub rig_gravity: f64,
    pub rope: RopeRig,
    pub limits: JointLimits,
}

impl Default for FlightConfig {
    fn default() -> Self {
        Self {
            physics_hz: 800.0,
            control_hz: 50.0,
            rig_gravity: 9.81,
            rope: RopeRig::default(),
            limits: JointLimits::motor(),
        }
    }
}

impl FlightConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.physics_hz >= 400.0) {
            return Err(Error::Config(format!(
                "physics rate {} Hz below the 400 Hz floor",
                self.physics_hz
            )));
        }
        if !(self.control_hz > 0.0 && self.control_hz <= self.physics_hz) {
            return Err(Error::Config("control rate must be in (0, physics rate]".into()));
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.physics_hz / self.control_hz).round().max(1.0) as usize
    }

    pub fn dt_ctrl(&self) -> f64 {
        1.0 / self.control_hz
    }

    pub fn dt_physics(&self) -> f64 {
        self.dt_ctrl() / self.substeps() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Body to inertial.
    pub q_body: Quat,
    /// Body angular velocity, body frame.
    pub omega_body: Vec3,
    pub joints: [JointState; NUM_JOINTS],
    pub time: f64,
    pub mode: Mode,
    /// Inertial angular momentum: about the center of mass in free flight and
    /// on the rope, about the rod pivot on the rod.
    pub momentum: Vec3,
}

impl SimState {
    /// Resting state with the given attitude and joint angles.
    pub fn at_rest(model: &RobotModel, mode: Mode, q_body: Quat, joints: &Joints) -> Result<Self> {
        Self::with_rate(model, mode, q_body, joints, Vec3::zeros())
    }

    /// State with frozen joints spinning rigidly at `omega_body`.
    pub fn with_rate(
        model: &RobotModel,
        mode: Mode,
        q_body: Quat,
        joints: &Joints,
        omega_body: Vec3,
    ) -> Result<Self> {
        let mut s = Self {
            q_body: q_body.canonical(),
            omega_body,
            joints: joints.map(JointState::at_rest),
            time: 0.0,
            mode,
            momentum: Vec3::zeros(),
        };
        s = constrain(mode, s);
        s.momentum = state_momentum(model, &s)?;
        Ok(s)
    }

    pub fn positions(&self) -> Joints {
        self.joints.map(|j| j.theta)
    }

    pub fn velocities(&self) -> Joints {
        self.joints.map(|j| j.theta_dot)
    }
}

/// Momentum reference point for a mode, body frame.
fn pivot(mode: Mode, sys: &SystemMomentum) -> Vec3 {
    match mode {
        Mode::Rod(_) => Vec3::zeros(),
        _ => sys.inertia.com,
    }
}

fn momentum_from(mode: Mode, sys: &SystemMomentum, q: &Quat, omega: &Vec3) -> Vec3 {
    let o = pivot(mode, sys);
    let body = sys.moment_about(&o) * omega + sys.internal_about(&o);
    q.rotate(&body)
}

/// Momentum the state's own velocities imply (the quantity `momentum` tracks).
fn state_momentum(model: &RobotModel, s: &SimState) -> Result<Vec3> {
    let sys = system_momentum(model, &s.positions(), &s.velocities())?;
    Ok(momentum_from(s.mode, &sys, &s.q_body, &s.omega_body))
}

/// Inertial angular momentum about the system center of mass.
pub fn total_angular_momentum(model: &RobotModel, s: &SimState) -> Result<Vec3> {
    let sys = system_momentum(model, &s.positions(), &s.velocities())?;
    let body = sys.inertia.moment * s.omega_body + sys.internal;
    Ok(s.q_body.rotate(&body))
}

/// Peak magnitude of the internal (joint-driven) momentum at a state, used to
/// scale conservation tolerances.
pub fn internal_momentum(model: &RobotModel, s: &SimState) -> Result<f64> {
    let sys = system_momentum(model, &s.positions(), &s.velocities())?;
    Ok(sys.internal.norm())
}

/// Applies the rig's kinematic constraint to a state.
pub fn constrain(mode: Mode, mut s: SimState) -> SimState {
    if let Mode::Rod(axis) = mode {
        let w = s.omega_body[axis.index()];
        let mut omega = Vec3::zeros();
        omega[axis.index()] = w;
        s.omega_body = omega;
    }
    s
}

/// Rope-rig torque in the inertial frame.
pub fn rope_torque(rig: &RopeRig, q: &Quat, omega_body: &Vec3) -> Vec3 {
    let up = Vec3::z();
    let z_body = q.rotate(&up);
    let restoring = rig.stiffness * z_body.cross(&up);
    let w = q.rotate(omega_body);
    let horizontal = w - up * w.dot(&up);
    restoring - rig.damping * horizontal
}

fn solve_rate(mode: Mode, sys: &SystemMomentum, q: &Quat, momentum: &Vec3) -> Result<Vec3> {
    let o = pivot(mode, sys);
    let inertia: Mat3 = sys.moment_about(&o);
    let h = sys.internal_about(&o);
    let body_l = q.to_matrix().transpose() * momentum;
    match mode {
        Mode::Rod(axis) => {
            let e = axis.unit();
            let k = axis.index();
            let w = (body_l[k] - h[k]) / (e.dot(&(inertia * e)));
            let mut omega = Vec3::zeros();
            omega[k] = w;
            Ok(omega)
        }
        _ => inertia
            .cholesky()
            .map(|c| c.solve(&(body_l - h)))
            .ok_or_else(|| Error::InvalidParam("system inertia not positive definite".into())),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FlightStep {
    pub state: SimState,
    /// Present when the end-of-tick pose self-collides.
    pub collision: Option<Collision>,
    /// Motor work over the tick, summed over joints.
    pub work: f64,
}

/// Advances one control tick: holds `theta_cmd` and substeps the physics.
pub fn step_flight(
    model: &RobotModel,
    motors: &[MotorSpec; NUM_JOINTS],
    cfg: &FlightConfig,
    s: &SimState,
    theta_cmd: &Joints,
) -> Result<FlightStep> {
    if theta_cmd.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("joint command"));
    }
    let n = cfg.substeps();
    let dt = cfg.dt_physics();
    let mut st = *s;
    for (j, cmd) in st.joints.iter_mut().zip(theta_cmd) {
        j.theta_cmd = *cmd;
    }
    let inertia = joint_inertias(model, &st.positions())?;
    let mut work = 0.0;
    for _ in 0..n {
        for (k, j) in st.joints.iter_mut().enumerate() {
            let r = step_joint_with(j, &motors[k], inertia[k], 0.0, &cfg.limits, dt)?;
            *j = r.state;
            work += r.work;
        }
        let sys = system_momentum(model, &st.positions(), &st.velocities())?;
        st = substep_attitude(model, cfg, st, &sys, dt)?;
    }
    let collision = self_collision(model, &st.positions());
    Ok(FlightStep {
        state: st,
        collision: collision.colliding.then_some(collision),
        work,
    })
}

/// External torque and attitude update for one substep, joints already advanced.
fn substep_attitude(
    model: &RobotModel,
    cfg: &FlightConfig,
    mut st: SimState,
    sys: &SystemMomentum,
    dt: f64,
) -> Result<SimState> {
    match st.mode {
        Mode::FreeFloat => {}
        Mode::Rod(_) => {
            // gravity about the pivot, from the center of mass offset
            let g_body = st.q_body.to_matrix().transpose() * Vec3::new(0.0, 0.0, -cfg.rig_gravity);
            let torque = sys.inertia.com.cross(&(model.total_mass * g_body));
            st.momentum += st.q_body.rotate(&torque) * dt;
        }
        Mode::Rope => {
            st.momentum += rope_torque(&cfg.rope, &st.q_body, &st.omega_body) * dt;
        }
    }
    let omega_old = st.omega_body;
    let q_pred = integrate_quat(&st.q_body, &omega_old, dt)?;
    let omega_pred = solve_rate(st.mode, sys, &q_pred, &st.momentum)?;
    let mut omega_mid = 0.5 * (omega_old + omega_pred);
    if let Mode::Rod(axis) = st.mode {
        for k in 0..3 {
            if k != axis.index() {
                omega_mid[k] = 0.0;
            }
        }
    }
    st.q_body = integrate_quat(&st.q_body, &omega_mid, dt)?;
    st.omega_body = solve_rate(st.mode, sys, &st.q_body, &st.momentum)?;
    st = constrain(st.mode, st);
    st.time += dt;
    Ok(st)
}

/// Zero-momentum body attitude after moving the joints through `path`, one
/// sample every `dt`. Joint rates are the finite differences and the body
/// rate is evaluated at each segment midpoint, so running the reversed path
/// undoes the rotation.
pub fn follow_joint_path(model: &RobotModel, start: Quat, path: &[Joints], dt: f64) -> Result<Quat> {
    let mut q = start;
    for w in path.windows(2) {
        let mut mid = [0.0; NUM_JOINTS];
        let mut rate = [0.0; NUM_JOINTS];
        for k in 0..NUM_JOINTS {
            mid[k] = 0.5 * (w[0][k] + w[1][k]);
            rate[k] = (w[1][k] - w[0][k]) / dt;
        }
        let sys = system_momentum(model, &mid, &rate)?;
        let omega = solve_rate(Mode::FreeFloat, &sys, &q, &Vec3::zeros())?;
        q = integrate_quat(&q, &omega, dt)?;
    }
    Ok(q)
}
