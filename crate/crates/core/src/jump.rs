//! Planar (sagittal) stance and ballistic flight for jump sequences.
//!
//! The squat, lean and hold phases are slow and end settled, so they are
//! not integrated: the push-off starts from rest with the joints on the hold
//! setpoints. The torso is a rigid body with the whole robot's mass and pitch
//! inertia.
//! Legs are massless with paws pinned to the ground; motor angles follow
//! from the torso pose by inverse kinematics, and the ground reaction at each
//! paw is `-J⁻ᵀ (τ_motor + τ_spring)`. Front and back pairs act as one leg
//! each with the two legs' forces summed. A pair leaves the ground as soon as
//! its vertical reaction would pull.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Quat, Vec3};
use crate::linkage::{
    forward_kinematics, inverse_kinematics, jacobian_at, spring_energy, spring_torque_at,
    LegGeometry, Vec2,
};
use crate::robot::{system_momentum, MotorSpec, RobotModel, NUM_JOINTS, NUM_LEGS};

pub const MARS_GRAVITY: f64 = 3.721;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub duration: f64,
    /// Motor 1 and motor 2 setpoints at the end of the phase, rad.
    pub target: (f64, f64),
    /// Interpolate linearly from the previous target instead of stepping.
    pub ramp: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSequence {
    pub phases: Vec<Phase>,
    pub gravity: f64,
    pub tau_max: f64,
    /// Time the final setpoint is held waiting for liftoff.
    pub tail: f64,
}

impl JumpSequence {
    /// Squat to 120° over 1 s, hold 0.5 s, step to 10°.
    pub fn vertical() -> Self {
        let squat = 120f64.to_radians();
        let push = 10f64.to_radians();
        Self {
            phases: vec![
                Phase { duration: 1.0, target: (squat, squat), ramp: true },
                Phase { duration: 0.5, target: (squat, squat), ramp: false },
                Phase { duration: 1.0, target: (push, push), ramp: false },
            ],
            gravity: MARS_GRAVITY,
            tau_max: 24.0,
            tail: 0.0,
        }
    }

    /// Vertical sequence with a lean phase after the squat: both motor
    /// setpoints shifted by `lean` over 1 s, held 0.5 s, and kept through the
    /// push-off.
    pub fn forward(lean: f64) -> Self {
        let squat = 120f64.to_radians();
        let push = 10f64.to_radians();
        let leaned = (squat + lean, squat - lean);
        Self {
            phases: vec![
                Phase { duration: 1.0, target: (squat, squat), ramp: true },
                Phase { duration: 0.5, target: (squat, squat), ramp: false },
                Phase { duration: 1.0, target: leaned, ramp: true },
                Phase { duration: 0.5, target: leaned, ramp: false },
                Phase { duration: 1.0, target: (push + lean, push - lean), ramp: false },
            ],
            gravity: MARS_GRAVITY,
            tau_max: 24.0,
            tail: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::InvalidParam("jump sequence has no phases".into()));
        }
        if self.phases.iter().any(|p| !(p.duration > 0.0)) {
            return Err(Error::InvalidParam("phase durations must be positive".into()));
        }
        if !(self.gravity > 0.0) || !(self.tau_max >= 0.0) {
            return Err(Error::InvalidParam("gravity must be > 0 and tau_max >= 0".into()));
        }
        Ok(())
    }

    /// Start of the final (push-off) phase; paws are held to the ground
    /// before it.
    pub fn push_start(&self) -> f64 {
        let n = self.phases.len();
        self.phases[..n.saturating_sub(1)].iter().map(|p| p.duration).sum()
    }

    pub fn duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum::<f64>() + self.tail
    }

    /// Commanded motor angles at time `t`, starting from the zero pose.
    pub fn setpoint(&self, t: f64) -> (f64, f64) {
        let mut start = (0.0, 0.0);
        let mut t0 = 0.0;
        for p in &self.phases {
            if t < t0 + p.duration {
                if !p.ramp {
                    return p.target;
                }
                let s = (t - t0) / p.duration;
                return (
                    start.0 + s * (p.target.0 - start.0),
                    start.1 + s * (p.target.1 - start.1),
                );
            }
            start = p.target;
            t0 += p.duration;
        }
        start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JumpConfig {
    /// Stance and flight integration rate, Hz.
    pub rate_hz: f64,
    /// Half-width of the uniform per-leg torque scaling on forward jumps.
    pub asymmetry: f64,
    pub seed: u64,
    /// Longest simulated flight, s.
    pub max_flight: f64,
}

impl Default for JumpConfig {
    fn default() -> Self {
        Self {
            rate_hz: 4000.0,
            asymmetry: 0.02,
            seed: 0,
            max_flight: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JumpMetrics {
    pub h_max: f64,
    pub d_max: f64,
    pub h_y: f64,
    pub pitch_err: f64,
    pub takeoff_rates: [f64; 3],
    pub liftoff: bool,
    pub liftoff_time: f64,
    /// Center-of-mass rise from the initial stance to the apex.
    pub apex_rise: f64,
    /// Motor work up to liftoff, J.
    pub motor_work: f64,
    /// Rise the injected energy could pay for: `(W + E_spring,0) / (m g)`.
    pub energy_bound: f64,
    /// Largest `E(t) - E(0) - W(t)` seen, J.
    pub energy_excess: f64,
}

/// Rigid planar torso carrying the robot's lumped mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarBody {
    pub mass: f64,
    pub pitch_inertia: f64,
    /// Center of mass in the body (x, z) plane.
    pub com: Vec2,
    /// Hip x positions of the front and back pairs.
    pub hips: [f64; 2],
    pub leg: LegGeometry,
    pub motor: MotorSpec,
}

impl PlanarBody {
    pub fn from_model(model: &RobotModel) -> Result<Self> {
        let sys = system_momentum(model, &[0.0; NUM_JOINTS], &[0.0; NUM_JOINTS])?;
        let c = sys.inertia.com;
        Ok(Self {
            mass: sys.inertia.mass,
            pitch_inertia: sys.inertia.moment[(1, 1)],
            com: Vec2::new(c.x, c.z),
            hips: [model.legs[0].hip.x, model.legs[2].hip.x],
            leg: model.params.leg,
            motor: model.motors[1],
        })
    }

    pub fn with_mass_scale(mut self, s: f64) -> Self {
        self.mass *= s;
        self.pitch_inertia *= s;
        self
    }
}

/// Torso state: center of mass (x, z), pitch, their rates, accumulated work.
type State = [f64; 7];

// Pitch rotates body x toward -z for positive angles (right-hand about +y).
fn rotate(phi: f64, v: Vec2) -> Vec2 {
    let (s, c) = phi.sin_cos();
    Vec2::new(c * v.x + s * v.y, -s * v.x + c * v.y)
}

fn rotate_back(phi: f64, v: Vec2) -> Vec2 {
    rotate(-phi, v)
}

/// `ω × r` for a rotation rate about +y, in the (x, z) plane.
fn spin(rate: f64, r: Vec2) -> Vec2 {
    Vec2::new(rate * r.y, -rate * r.x)
}

struct Sim<'a> {
    body: &'a PlanarBody,
    seq: &'a JumpSequence,
    /// Torque scale of each leg.
    scales: [f64; NUM_LEGS],
    paws: [Vec2; 2],
    contact: [bool; 2],
}

struct PairEval {
    force: Vec2,
    power: f64,
    spring: f64,
}

impl Sim<'_> {
    fn origin(&self, y: &State) -> (Vec2, Vec2) {
        let c = Vec2::new(y[0], y[1]);
        let v = Vec2::new(y[3], y[4]);
        let rc = rotate(y[2], self.body.com);
        (c - rc, v - spin(y[5], rc))
    }

    fn pair(&self, k: usize, y: &State, t: f64) -> Result<PairEval> {
        let b = self.body;
        let (o, vo) = self.origin(y);
        let hip_b = Vec2::new(b.hips[k], 0.0);
        let rh = rotate(y[2], hip_b);
        let hip = o + rh;
        let hip_v = vo + spin(y[5], rh);
        // paw relative to the hip in the body frame, then the leg plane (u, v down)
        let r = rotate_back(y[2], self.paws[k] - hip);
        let r_dot = rotate_back(y[2], -hip_v) - spin(y[5], r);
        let paw = Vec2::new(r.x, -r.y);
        let paw_rate = Vec2::new(r_dot.x, -r_dot.y);
        let (t1, t2) = inverse_kinematics(&b.leg, &paw)?;
        let pose = forward_kinematics(&b.leg, t1, t2)?;
        let j = jacobian_at(&b.leg, &pose).ok_or(Error::Singular(0.0))?;
        let jinv = j.try_inverse().ok_or(Error::Singular(0.0))?;
        let rates = jinv * paw_rate;
        let cmd = self.seq.setpoint(t);
        let servo = |theta: f64, rate: f64, target: f64| {
            (b.motor.kp * (target - theta) - b.motor.kd * rate).clamp(-self.seq.tau_max, self.seq.tau_max)
        };
        let base = Vec2::new(servo(t1, rates.x, cmd.0), servo(t2, rates.y, cmd.1));
        let (s1, s2) = spring_torque_at(&b.leg, &pose);
        let spring = Vec2::new(s1, s2);
        let jt_inv = jinv.transpose();
        let mut force = Vec2::zeros();
        let mut power = 0.0;
        for leg in [2 * k, 2 * k + 1] {
            let motor = base * self.scales[leg];
            let f = -(jt_inv * (motor + spring));
            force += Vec2::new(f.x, -f.y);
            power += motor.dot(&rates);
        }
        Ok(PairEval {
            force: rotate(y[2], force),
            power,
            spring: 2.0 * spring_energy(&b.leg, &pose),
        })
    }

    fn deriv(&self, y: &State, t: f64) -> Result<State> {
        let b = self.body;
        let g = self.seq.gravity;
        let c = Vec2::new(y[0], y[1]);
        let mut f = Vec2::new(0.0, -b.mass * g);
        let mut torque = 0.0;
        let mut power = 0.0;
        for k in 0..2 {
            if !self.contact[k] {
                continue;
            }
            let e = self.pair(k, y, t)?;
            let arm = self.paws[k] - c;
            f += e.force;
            // y component of arm × force in (x, z)
            torque += arm.y * e.force.x - arm.x * e.force.y;
            power += e.power;
        }
        Ok([y[3], y[4], y[5], f.x / b.mass, f.y / b.mass, torque / b.pitch_inertia, power])
    }

    fn rk4(&self, y: &State, t: f64, h: f64) -> Result<State> {
        let add = |a: &State, k: &State, s: f64| {
            let mut o = *a;
            for i in 0..7 {
                o[i] += s * k[i];
            }
            o
        };
        let k1 = self.deriv(y, t)?;
        let k2 = self.deriv(&add(y, &k1, 0.5 * h), t + 0.5 * h)?;
        let k3 = self.deriv(&add(y, &k2, 0.5 * h), t + 0.5 * h)?;
        let k4 = self.deriv(&add(y, &k3, h), t + h)?;
        let mut o = *y;
        for i in 0..7 {
            o[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        Ok(o)
    }

    fn energy(&self, y: &State, t: f64) -> f64 {
        let b = self.body;
        let ke = 0.5 * b.mass * (y[3] * y[3] + y[4] * y[4]) + 0.5 * b.pitch_inertia * y[5] * y[5];
        let pe = b.mass * self.seq.gravity * y[1];
        let spring: f64 = (0..2)
            .filter(|&k| self.contact[k])
            .filter_map(|k| self.pair(k, y, t).ok())
            .map(|e| e.spring)
            .sum();
        ke + pe + spring
    }

    fn hip_height(&self, y: &State) -> f64 {
        let (o, _) = self.origin(y);
        let mut z = 0.0;
        for x in self.body.hips {
            z += 0.5 * (o + rotate(y[2], Vec2::new(x, 0.0))).y;
        }
        z
    }
}

/// Pre-push state: torso at rest with the joints on the hold setpoints and
/// both paws on the ground.
fn settled_start(body: &PlanarBody, seq: &JumpSequence) -> Result<(State, [Vec2; 2])> {
    let n = seq.phases.len();
    let hold = if n >= 2 { seq.phases[n - 2].target } else { (0.0, 0.0) };
    let p = forward_kinematics(&body.leg, hold.0, hold.1)?.paw;
    // body-frame offsets from the origin to each paw
    let rel = body.hips.map(|x| Vec2::new(x + p.x, -p.y));
    let origin = Vec2::new(0.0, -rel[0].y);
    let com = origin + body.com;
    let paws = rel.map(|r| origin + r);
    Ok(([com.x, com.y, 0.0, 0.0, 0.0, 0.0, 0.0], paws))
}

/// Ballistic sample of the torso after both pairs have left the ground.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightSample {
    pub time: f64,
    pub com: Vec2,
    pub pitch: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpRun {
    pub metrics: JumpMetrics,
    /// Liftoff state: com, com velocity, pitch, pitch rate.
    pub takeoff: Option<(Vec2, Vec2, f64, f64)>,
    pub flight: Vec<FlightSample>,
    /// Vertical ground force of each pair on the step it lifted, and the time.
    pub liftoffs: [Option<(f64, f64)>; 2],
    /// Vertical ground force of each pair on the step before it lifted.
    pub last_contact: [Option<f64>; 2],
}

/// Simulates the push-off from the settled hold pose, then the flight.
pub fn simulate_jump(
    body: &PlanarBody,
    seq: &JumpSequence,
    scales: [f64; NUM_LEGS],
    cfg: &JumpConfig,
) -> Result<JumpRun> {
    seq.validate()?;
    if !(cfg.rate_hz >= 400.0) {
        return Err(Error::InvalidParam("jump rate below 400 Hz".into()));
    }
    let mut liftoffs = [None, None];
    let mut last_contact = [None, None];
    let failed = |m: JumpMetrics, liftoffs, last_contact| JumpRun {
        metrics: m,
        takeoff: None,
        flight: Vec::new(),
        liftoffs,
        last_contact,
    };
    let Ok((mut y, paws)) = settled_start(body, seq) else {
        return Ok(failed(JumpMetrics::default(), liftoffs, last_contact));
    };
    let mut sim = Sim { body, seq, scales, paws, contact: [true, true] };
    let h = 1.0 / cfg.rate_hz;
    let mut t = seq.push_start();
    let e0 = sim.energy(&y, t);
    let com0 = Vec2::new(y[0], y[1]);
    let spring0 = e0 - body.mass * seq.gravity * com0.y;
    let mut excess = f64::NEG_INFINITY;
    let end = seq.duration();
    let mut collapsed = false;

    while sim.contact.iter().any(|c| *c) && t < end {
        let forces: Vec<Option<f64>> = (0..2)
            .map(|k| sim.pair(k, &y, t).ok().map(|e| e.force.y))
            .collect();
        let next = match sim.rk4(&y, t, h) {
            Ok(n) => n,
            Err(_) => {
                collapsed = true;
                break;
            }
        };
        t += h;
        y = next;
        excess = excess.max(sim.energy(&y, t) - e0 - y[6]);
        for k in 0..2 {
            if !sim.contact[k] {
                continue;
            }
            match sim.pair(k, &y, t) {
                Ok(e) if e.force.y < 0.0 => {
                    sim.contact[k] = false;
                    liftoffs[k] = Some((e.force.y, t));
                    last_contact[k] = forces[k];
                }
                Ok(_) => {}
                Err(_) => collapsed = true,
            }
        }
        if collapsed || sim.hip_height(&y) <= 0.0 {
            collapsed = true;
            break;
        }
    }

    // legs folding away from a sinking torso is a fall, not a jump
    let airborne = !collapsed && sim.contact.iter().all(|c| !c) && y[4] > 0.0;
    let mut m = JumpMetrics {
        motor_work: y[6],
        energy_bound: (y[6] + spring0) / (body.mass * seq.gravity),
        energy_excess: excess.max(0.0),
        ..JumpMetrics::default()
    };
    if !airborne {
        return Ok(failed(m, liftoffs, last_contact));
    }

    m.liftoff = true;
    m.liftoff_time = t;
    m.takeoff_rates = [0.0, y[5], 0.0];
    let takeoff = (Vec2::new(y[0], y[1]), Vec2::new(y[3], y[4]), y[2], y[5]);
    let z_takeoff = y[1];
    let mut flight = vec![FlightSample { time: t, com: takeoff.0, pitch: y[2] }];
    let (mut apex_com, mut apex_hip) = (y[1], sim.hip_height(&y));
    let mut pitch_peak = y[2].abs();
    let t_lift = t;
    loop {
        let prev = y;
        y = sim.rk4(&y, t, h)?;
        t += h;
        flight.push(FlightSample { time: t, com: Vec2::new(y[0], y[1]), pitch: y[2] });
        pitch_peak = pitch_peak.max(y[2].abs());
        if y[1] > apex_com {
            apex_com = y[1];
            apex_hip = sim.hip_height(&y);
        }
        if (y[4] < 0.0 && y[1] <= z_takeoff) || t - t_lift > cfg.max_flight {
            // interpolate the landing crossing
            let s = if prev[1] != y[1] { (prev[1] - z_takeoff) / (prev[1] - y[1]) } else { 0.0 };
            let x_land = prev[0] + s.clamp(0.0, 1.0) * (y[0] - prev[0]);
            m.d_max = (x_land - com0.x).max(0.0);
            break;
        }
    }
    let adjusted = (apex_hip - body.leg.extended_length()).max(0.0);
    m.h_max = adjusted;
    m.h_y = adjusted;
    m.apex_rise = apex_com - com0.y;
    m.pitch_err = pitch_peak;
    Ok(JumpRun { metrics: m, takeoff: Some(takeoff), flight, liftoffs, last_contact })
}

pub fn run_vertical_jump(model: &RobotModel, seq: &JumpSequence, cfg: &JumpConfig) -> Result<JumpMetrics> {
    let body = PlanarBody::from_model(model)?;
    Ok(simulate_jump(&body, seq, [1.0; NUM_LEGS], cfg)?.metrics)
}

/// Per-leg torque scales drawn uniformly within `±asymmetry`.
pub fn leg_scales(cfg: &JumpConfig) -> [f64; NUM_LEGS] {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let a = cfg.asymmetry;
    std::array::from_fn(|_| if a > 0.0 { 1.0 + rng.gen_range(-a..=a) } else { 1.0 })
}

pub fn run_forward_jump(model: &RobotModel, seq: &JumpSequence, cfg: &JumpConfig) -> Result<JumpMetrics> {
    let body = PlanarBody::from_model(model)?;
    Ok(simulate_jump(&body, seq, leg_scales(cfg), cfg)?.metrics)
}

/// `time, x, z, pitch` per flight sample.
pub fn write_flight_csv<W: std::io::Write>(out: W, samples: &[FlightSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "x", "z", "pitch"])?;
    for s in samples {
        w.write_record([s.time, s.com.x, s.com.y, s.pitch].map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("flight samples", e))?;
    Ok(())
}

/// Takeoff attitude as a quaternion, for handing a jump to the flight module.
pub fn takeoff_attitude(pitch: f64) -> Quat {
    Quat::from_axis_angle(&Vec3::y(), pitch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::{build_model, DesignParams};

    fn body() -> PlanarBody {
        PlanarBody::from_model(&build_model(&DesignParams::design()).unwrap()).unwrap()
    }

    fn cfg() -> JumpConfig {
        JumpConfig::default()
    }

    #[test]
    fn setpoint_schedule() {
        let s = JumpSequence::vertical();
        assert_eq!(s.setpoint(0.0), (0.0, 0.0));
        let half = s.setpoint(0.5);
        assert!((half.0 - 60f64.to_radians()).abs() < 1e-12);
        assert_eq!(s.setpoint(1.2), (120f64.to_radians(), 120f64.to_radians()));
        assert_eq!(s.setpoint(1.6), (10f64.to_radians(), 10f64.to_radians()));
        assert!(JumpSequence { phases: vec![], ..s.clone() }.validate().is_err());
    }

    #[test]
    fn zero_torque_never_lifts() {
        let seq = JumpSequence { tau_max: 0.0, ..JumpSequence::vertical() };
        let m = simulate_jump(&body(), &seq, [1.0; 4], &cfg()).unwrap().metrics;
        assert!(!m.liftoff);
        assert_eq!(m.h_max, 0.0);
    }

    #[test]
    fn vertical_jump_lifts_and_respects_energy() {
        let run = simulate_jump(&body(), &JumpSequence::vertical(), [1.0; 4], &cfg()).unwrap();
        let m = run.metrics;
        assert!(m.liftoff, "{m:?}");
        assert!(m.h_max > 0.0 && m.apex_rise > 0.0);
        assert!(m.apex_rise <= m.energy_bound * 1.01, "{m:?}");
        assert!(m.energy_excess <= 0.01 * m.motor_work.abs().max(1.0), "{m:?}");
        assert!(m.d_max < 1e-6, "straight up: {}", m.d_max);
    }

    #[test]
    fn heavier_robot_jumps_lower() {
        let b = body();
        let seq = JumpSequence::vertical();
        let a = simulate_jump(&b, &seq, [1.0; 4], &cfg()).unwrap().metrics;
        let h = simulate_jump(&b.with_mass_scale(2.0), &seq, [1.0; 4], &cfg()).unwrap().metrics;
        assert!(h.h_max < a.h_max, "{} vs {}", h.h_max, a.h_max);
    }

    #[test]
    fn flight_is_ballistic() {
        let b = body();
        let run = simulate_jump(&b, &JumpSequence::forward(45f64.to_radians()), [1.0; 4], &cfg()).unwrap();
        let (c0, v0, p0, w0) = run.takeoff.unwrap();
        let g = MARS_GRAVITY;
        let t0 = run.flight[0].time;
        for s in &run.flight {
            let dt = s.time - t0;
            let x = c0.x + v0.x * dt;
            let z = c0.y + v0.y * dt - 0.5 * g * dt * dt;
            assert!((s.com.x - x).abs() < 1e-9 && (s.com.y - z).abs() < 1e-9);
            assert!((s.pitch - (p0 + w0 * dt)).abs() < 1e-9);
        }
    }

    #[test]
    fn liftoff_matches_force_sign_change() {
        let b = body();
        let c = cfg();
        let run = simulate_jump(&b, &JumpSequence::vertical(), [1.0; 4], &c).unwrap();
        assert!(run.metrics.liftoff);
        let last = run.liftoffs.iter().flatten().map(|l| l.1).fold(0.0, f64::max);
        assert_eq!(last, run.metrics.liftoff_time);
        for k in 0..2 {
            let (f, _) = run.liftoffs[k].unwrap();
            assert!(f < 0.0);
            assert!(run.last_contact[k].unwrap() >= 0.0, "one step before liftoff still pushing");
        }
    }

    #[test]
    fn lean_moves_forward() {
        let b = body();
        let zero = simulate_jump(&b, &JumpSequence::forward(0.0), [1.0; 4], &cfg()).unwrap().metrics;
        assert!(zero.d_max < 1e-6, "{}", zero.d_max);
        let lean = simulate_jump(&b, &JumpSequence::forward(45f64.to_radians()), [1.0; 4], &cfg())
            .unwrap()
            .metrics;
        assert!(lean.liftoff && lean.d_max > 0.05, "{lean:?}");
    }

    #[test]
    fn forward_jump_is_deterministic() {
        let m = build_model(&DesignParams::design()).unwrap();
        let seq = JumpSequence::forward(45f64.to_radians());
        let a = run_forward_jump(&m, &seq, &cfg()).unwrap();
        let b = run_forward_jump(&m, &seq, &cfg()).unwrap();
        assert_eq!(a, b);
        let other = run_forward_jump(&m, &seq, &JumpConfig { seed: 3, ..cfg() }).unwrap();
        assert_ne!(a.pitch_err, other.pitch_err);
    }
}
