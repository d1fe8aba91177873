//! Open-loop paddle-stroke reorientation primitives.
//!
//! Each cycle runs four equal phases: extend the legs, sweep them extended
//! (high inertia), retract, then return them retracted (low inertia). The
//! extended stroke moves the body less than the retracted return moves it
//! back, so each cycle leaves a net rotation about the chosen axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flight::{
    internal_momentum, step_flight, total_angular_momentum, Axis, FlightConfig, Mode, SimState,
};
use crate::geom::{wrap_angle, Quat};
use crate::linkage::{forward_kinematics, JointLimits};
use crate::robot::{
    joint_index, self_collision, Joints, MotorSpec, RobotModel, HIP, MOTOR1, MOTOR2, NUM_LEGS,
};
use crate::trace::TraceRow;

/// Phase resolution; setpoints are a function of the quantized phase so
/// that `t` and `t + period` land on the same sample.
const PHASE_QUANTUM: f64 = (1u64 << 32) as f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokeShape {
    /// 5-bar base angle with the leg extended, rad.
    pub extended: f64,
    /// 5-bar base angle with the leg retracted, rad.
    pub retracted: f64,
    /// Fore-aft 5-bar sweep half-amplitude, rad.
    pub sweep: f64,
    /// Hip sweep half-amplitude used by roll, rad.
    pub hip_sweep: f64,
    /// Hip abduction that turns the legs sideways for yaw, rad.
    pub yaw_hip: f64,
}

impl Default for StrokeShape {
    fn default() -> Self {
        Self {
            extended: 0.0,
            retracted: 95f64.to_radians(),
            sweep: 30f64.to_radians(),
            hip_sweep: 30f64.to_radians(),
            yaw_hip: 80f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub axis: Axis,
    pub period: f64,
    pub shape: StrokeShape,
    /// Fraction of a cycle added to the phase.
    pub phase_offset: f64,
    /// Runs the cycle backwards, rotating the other way.
    pub reversed: bool,
}

impl Primitive {
    pub fn new(axis: Axis) -> Self {
        Self {
            axis,
            period: 1.0,
            shape: StrokeShape::default(),
            phase_offset: 0.0,
            reversed: false,
        }
    }

    /// Default primitive with the retracted angle pulled in until every
    /// stroke corner is reachable and the cycle is free of self-collision.
    pub fn for_model(axis: Axis, model: &RobotModel) -> Result<Self> {
        let mut p = Self::new(axis);
        let g = &model.params.leg;
        let limits = JointLimits::motor();
        loop {
            let s = p.shape;
            let corners = [
                (s.extended + s.sweep, s.extended - s.sweep),
                (s.extended - s.sweep, s.extended + s.sweep),
                (s.retracted + s.sweep, s.retracted - s.sweep),
                (s.retracted - s.sweep, s.retracted + s.sweep),
            ];
            let ok = corners.iter().all(|&(a, b)| {
                limits.contains(a) && limits.contains(b) && forward_kinematics(g, a, b).is_ok()
            });
            let clear = ok
                && (0..32).all(|k| {
                    let q = primitive_setpoints(&p, p.period * k as f64 / 32.0, model);
                    !self_collision(model, &q).colliding
                });
            if clear {
                return Ok(p);
            }
            p.shape.retracted -= 5f64.to_radians();
            if p.shape.retracted <= p.shape.extended + p.shape.sweep {
                return Err(Error::Infeasible(format!(
                    "no feasible {} stroke for this leg",
                    axis.name()
                )));
            }
        }
    }

    pub fn reversed(mut self) -> Self {
        self.reversed = !self.reversed;
        self
    }

    pub fn with_phase(mut self, offset: f64) -> Self {
        self.phase_offset = offset;
        self
    }

    fn phase(&self, t: f64) -> f64 {
        let raw = (t / self.period + self.phase_offset).rem_euclid(1.0);
        let q = (raw * PHASE_QUANTUM).round() / PHASE_QUANTUM;
        let q = if q >= 1.0 { 0.0 } else { q };
        if self.reversed && q > 0.0 {
            1.0 - q
        } else {
            q
        }
    }
}

/// Extension in `[0, 1]` and sweep in `[-1, 1]` at phase `phi`.
pub fn stroke(phi: f64) -> (f64, f64) {
    let u = 4.0 * phi;
    if u < 1.0 {
        (u, -1.0)
    } else if u < 2.0 {
        (1.0, -1.0 + 2.0 * (u - 1.0))
    } else if u < 3.0 {
        (1.0 - (u - 2.0), 1.0)
    } else {
        (0.0, 1.0 - 2.0 * (u - 3.0))
    }
}

pub fn primitive_setpoints(p: &Primitive, t: f64, model: &RobotModel) -> Joints {
    let (e, s) = stroke(p.phase(t));
    let sh = &p.shape;
    let base = sh.retracted + e * (sh.extended - sh.retracted);
    let mut q = [0.0; 12];
    for leg in 0..NUM_LEGS {
        let side = model.legs[leg].side;
        let (hip, d) = match p.axis {
            // same physical sweep on both sides: left abducts while right adducts
            Axis::Roll => (side * s * sh.hip_sweep, 0.0),
            Axis::Pitch => (0.0, s * sh.sweep),
            Axis::Yaw => (sh.yaw_hip, side * s * sh.sweep),
        };
        q[joint_index(leg, HIP)] = hip;
        q[joint_index(leg, MOTOR1)] = base + d;
        q[joint_index(leg, MOTOR2)] = base - d;
    }
    q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReorientationConfig {
    pub duration: f64,
    pub tau_max: f64,
    pub flight: FlightConfig,
    pub record_trace: bool,
}

impl Default for ReorientationConfig {
    fn default() -> Self {
        Self {
            duration: 5.0,
            tau_max: 8.0,
            flight: FlightConfig::default(),
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reorientation {
    /// Net rotation about the primitive axis, unwrapped, rad.
    pub theta: f64,
    pub collided: bool,
    pub final_attitude: Quat,
    /// Largest `|L| / peak internal momentum` seen during the run.
    pub momentum_drift: f64,
    pub trace: Vec<TraceRow>,
}

/// Zero-momentum free-flight run of a primitive starting at its cycle start.
pub fn run_reorientation(
    model: &RobotModel,
    primitive: &Primitive,
    cfg: &ReorientationConfig,
) -> Result<Reorientation> {
    cfg.flight.validate()?;
    let motors: [MotorSpec; 12] = model.motors.map(|m| m.with_tau_max(cfg.tau_max));
    let axis = primitive.axis.unit();
    let q0 = primitive_setpoints(primitive, 0.0, model);
    let mut s = SimState::at_rest(model, Mode::FreeFloat, Quat::IDENTITY, &q0)?;
    let ticks = (cfg.duration * cfg.flight.control_hz).round() as usize;
    let dt = cfg.flight.dt_ctrl();
    let mut trace = Vec::new();
    if cfg.record_trace {
        trace.push(TraceRow::from_state(&s, 0.0));
    }
    let (mut theta, mut last) = (0.0, 0.0);
    let (mut peak, mut drift) = (0.0f64, 0.0f64);
    let mut collided = false;
    for k in 0..ticks {
        let cmd = primitive_setpoints(primitive, (k + 1) as f64 * dt, model);
        let out = step_flight(model, &motors, &cfg.flight, &s, &cmd)?;
        s = out.state;
        peak = peak.max(internal_momentum(model, &s)?);
        let l = total_angular_momentum(model, &s)?.norm();
        if peak > 0.0 {
            drift = drift.max(l / peak);
        }
        let now = s.q_body.twist_angle(&axis);
        theta += wrap_angle(now - last);
        last = now;
        if cfg.record_trace {
            trace.push(TraceRow::from_state(&s, 0.0));
        }
        if out.collision.is_some() {
            collided = true;
            break;
        }
    }
    Ok(Reorientation {
        theta: if collided { 0.0 } else { theta },
        collided,
        final_attitude: s.q_body,
        momentum_drift: drift,
        trace,
    })
}

/// Net rotations about roll, pitch and yaw from the three primitives.
pub fn reorientation_scores(model: &RobotModel, cfg: &ReorientationConfig) -> Result<[Reorientation; 3]> {
    let run = |axis| run_reorientation(model, &Primitive::for_model(axis, model)?, cfg);
    Ok([run(Axis::Roll)?, run(Axis::Pitch)?, run(Axis::Yaw)?])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flight::follow_joint_path;
    use crate::geom::quat_angle;
    use crate::robot::{build_model, DesignParams};

    fn model() -> RobotModel {
        build_model(&DesignParams::design()).unwrap()
    }

    #[test]
    fn stroke_is_continuous() {
        let n = 4000;
        let mut prev = stroke(0.0);
        for k in 1..=n {
            let phi = (k as f64 / n as f64) % 1.0;
            let cur = stroke(phi);
            assert!((cur.0 - prev.0).abs() < 1e-2 && (cur.1 - prev.1).abs() < 1e-2);
            prev = cur;
        }
    }

    #[test]
    fn start_within_limits_and_periodic() {
        let m = model();
        let lim = JointLimits::motor();
        for axis in Axis::ALL {
            let p = Primitive::for_model(axis, &m).unwrap();
            assert!(primitive_setpoints(&p, 0.0, &m).iter().all(|v| lim.contains(*v)));
            for k in 0..200 {
                let t = 0.0137 * k as f64;
                let a = primitive_setpoints(&p, t, &m);
                assert_eq!(a, primitive_setpoints(&p, t + p.period, &m));
                assert!(a.iter().all(|v| lim.contains(*v)));
            }
        }
    }

    #[test]
    fn cycles_are_collision_free() {
        let m = model();
        for axis in Axis::ALL {
            let p = Primitive::for_model(axis, &m).unwrap();
            for k in 0..100 {
                let q = primitive_setpoints(&p, k as f64 / 100.0, &m);
                assert!(!self_collision(&m, &q).colliding, "{axis:?} at {k}");
            }
        }
    }

    #[test]
    fn frozen_primitive_does_nothing() {
        let m = model();
        let p = Primitive { period: f64::INFINITY, ..Primitive::new(Axis::Roll) };
        let r = run_reorientation(&m, &p, &ReorientationConfig { duration: 1.0, ..Default::default() })
            .unwrap();
        assert_eq!(r.theta, 0.0);
    }

    #[test]
    fn roll_cycle_rotates_with_little_leakage() {
        let m = model();
        let p = Primitive::for_model(Axis::Roll, &m).unwrap();
        let cfg = ReorientationConfig { duration: 1.0, ..Default::default() };
        let r = run_reorientation(&m, &p, &cfg).unwrap();
        assert!(!r.collided);
        assert!(r.theta.abs() > 1f64.to_radians(), "roll {}", r.theta.to_degrees());
        let e = r.final_attitude.to_euler();
        assert!(e.y.abs() <= 0.5f64.to_radians() && e.z.abs() <= 0.5f64.to_radians(), "{e:?}");
    }

    #[test]
    fn every_axis_reorients_and_conserves_momentum() {
        let m = model();
        let cfg = ReorientationConfig::default();
        for r in reorientation_scores(&m, &cfg).unwrap() {
            assert!(!r.collided);
            assert!(r.theta.abs() > 2f64.to_radians());
            assert!(r.momentum_drift < 1e-4);
        }
    }

    #[test]
    fn reversed_primitive_negates() {
        let m = model();
        let cfg = ReorientationConfig::default();
        for axis in Axis::ALL {
            let p = Primitive::for_model(axis, &m).unwrap();
            let a = run_reorientation(&m, &p, &cfg).unwrap().theta;
            let b = run_reorientation(&m, &p.reversed(), &cfg).unwrap().theta;
            assert!((a + b).abs() < 1f64.to_radians(), "{axis:?}: {a} vs {b}");
        }
    }

    #[test]
    fn phase_offset_only_shifts_transient() {
        let m = model();
        let cfg = ReorientationConfig::default();
        let p = Primitive::for_model(Axis::Roll, &m).unwrap();
        let transient = ReorientationConfig { duration: p.period, ..cfg };
        let steady = |p: &Primitive| {
            run_reorientation(&m, p, &cfg).unwrap().theta
                - run_reorientation(&m, p, &transient).unwrap().theta
        };
        let (a, b) = (steady(&p), steady(&p.with_phase(0.5)));
        assert!((a - b).abs() < 2f64.to_radians(), "{a} vs {b}");
    }

    #[test]
    fn halving_dt_converges() {
        let m = model();
        let p = Primitive::for_model(Axis::Yaw, &m).unwrap();
        let base = ReorientationConfig { duration: 2.0, ..Default::default() };
        let fine = ReorientationConfig {
            flight: FlightConfig { physics_hz: 1600.0, ..base.flight },
            ..base
        };
        let a = run_reorientation(&m, &p, &base).unwrap().final_attitude;
        let b = run_reorientation(&m, &p, &fine).unwrap().final_attitude;
        let diff = quat_angle(&crate::geom::quat_error(&a, &b).unwrap()).unwrap();
        assert!(diff < 0.1f64.to_radians(), "{}", diff.to_degrees());
    }

    #[test]
    fn reversed_joint_path_returns_home() {
        let m = model();
        let p = Primitive::for_model(Axis::Pitch, &m).unwrap();
        let dt = 1.0 / 800.0;
        let path: Vec<Joints> = (0..=1600)
            .map(|k| primitive_setpoints(&p, 0.3 + k as f64 * dt * 0.7, &m))
            .collect();
        let mut back = path.clone();
        back.reverse();
        let out = follow_joint_path(&m, Quat::IDENTITY, &path, dt).unwrap();
        assert!(quat_angle(&out).unwrap() > 1f64.to_radians());
        let home = follow_joint_path(&m, out, &back, dt).unwrap();
        assert!(quat_angle(&home).unwrap() < 1e-6, "{}", quat_angle(&home).unwrap());
    }
}
