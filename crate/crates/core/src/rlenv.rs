//! Attitude-control environment for reinforcement learning.
//!
//! Observation layout (31 values): `q_err` as `w, x, y, z` (0..4), body rate
//! in the body frame (4..7), joint angles (7..19), joint rates (19..31).
//! Joints follow the robot's `3 * leg + {hip, motor1, motor2}` order.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flight::{step_flight, FlightConfig, Mode, SimState};
use crate::geom::{quat_angle, quat_error, Quat, Vec3};
use crate::linkage::JointLimits;
use crate::robot::{build_model, self_collision, DesignParams, Joints, MotorSpec, RobotModel, HIP, NUM_JOINTS};

pub const OBS_DIM: usize = 31;
pub const ACT_DIM: usize = NUM_JOINTS;
/// Consecutive colliding spawn draws before `reset` gives up.
pub const MAX_SPAWN_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub q_err: Quat,
    pub omega: [f64; 3],
    pub joint_pos: Joints,
    pub joint_vel: Joints,
}

impl Observation {
    pub fn to_array(&self) -> [f64; OBS_DIM] {
        let mut o = [0.0; OBS_DIM];
        o[..4].copy_from_slice(&self.q_err.to_array());
        o[4..7].copy_from_slice(&self.omega);
        o[7..19].copy_from_slice(&self.joint_pos);
        o[19..31].copy_from_slice(&self.joint_vel);
        o
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != OBS_DIM {
            return Err(Error::Shape { expected: OBS_DIM, got: v.len() });
        }
        let mut joint_pos = [0.0; NUM_JOINTS];
        let mut joint_vel = [0.0; NUM_JOINTS];
        joint_pos.copy_from_slice(&v[7..19]);
        joint_vel.copy_from_slice(&v[19..31]);
        Ok(Self {
            q_err: Quat::new(v[0], v[1], v[2], v[3]),
            omega: [v[4], v[5], v[6]],
            joint_pos,
            joint_vel,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub nu_q: f64,
    pub mu_q: f64,
    pub nu_omega: f64,
    pub mu_omega: f64,
    /// Added once when an episode ends in self-collision.
    pub penalty: f64,
    /// Attitude error (rad) below which the rate term pays `gate_reward`.
    pub angle_gate: f64,
    pub gate_reward: f64,
    /// Episode length, seconds.
    pub episode_length: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            nu_q: 5.0,
            mu_q: 2.0,
            nu_omega: 2.0,
            mu_omega: 0.1,
            penalty: -15.0,
            angle_gate: 0.1,
            gate_reward: 10.0,
            episode_length: 6.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        let tuning = [self.nu_q, self.mu_q, self.nu_omega, self.mu_omega];
        if tuning.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("reward tuning parameters must be positive".into()));
        }
        if !(self.episode_length > 0.0 && self.angle_gate >= 0.0) {
            return Err(Error::Config("episode length and angle gate must be positive".into()));
        }
        Ok(())
    }
}

/// Observation noise standard deviations (rad, rad/s) and the relative PD
/// gain randomization half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub orientation: f64,
    pub rate: f64,
    pub joint_pos: f64,
    pub joint_vel: f64,
    pub gain_range: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            orientation: 3f64.to_radians(),
            rate: 10f64.to_radians(),
            joint_pos: 3f64.to_radians(),
            joint_vel: 20f64.to_radians(),
            gain_range: 0.5,
        }
    }
}

impl NoiseSpec {
    pub fn off() -> Self {
        Self {
            orientation: 0.0,
            rate: 0.0,
            joint_pos: 0.0,
            joint_vel: 0.0,
            gain_range: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = [self.orientation, self.rate, self.joint_pos, self.joint_vel, self.gain_range];
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || self.gain_range >= 1.0 {
            return Err(Error::Config("noise levels must be >= 0 and gain range < 1".into()));
        }
        Ok(())
    }
}

pub fn uniform_quat<R: Rng + ?Sized>(rng: &mut R) -> Quat {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return Quat::new(v[0] / n, v[1] / n, v[2] / n, v[3] / n).canonical();
        }
    }
}

/// Rotation whose rotation vector has i.i.d. `N(0, sigma²)` components.
pub fn gaussian_rotation<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Quat {
    if sigma == 0.0 {
        return Quat::IDENTITY;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Quat::from_rotation_vector(&Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng)))
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        sigma * rng.sample::<f64, _>(StandardNormal)
    }
}

/// Observation of `s` against `q_ref`, with noise drawn from `rng` when enabled.
pub fn observe<R: Rng + ?Sized>(
    s: &SimState,
    q_ref: &Quat,
    noise: Option<&NoiseSpec>,
    rng: &mut R,
) -> Result<Observation> {
    let mut o = Observation {
        q_err: quat_error(q_ref, &s.q_body)?,
        omega: [s.omega_body.x, s.omega_body.y, s.omega_body.z],
        joint_pos: s.positions(),
        joint_vel: s.velocities(),
    };
    if let Some(n) = noise {
        let q_noisy = s.q_body.mul_raw(&gaussian_rotation(rng, n.orientation));
        o.q_err = quat_error(q_ref, &q_noisy)?;
        for w in &mut o.omega {
            *w += gauss(rng, n.rate);
        }
        for p in &mut o.joint_pos {
            *p += gauss(rng, n.joint_pos);
        }
        for v in &mut o.joint_vel {
            *v += gauss(rng, n.joint_vel);
        }
    }
    Ok(o)
}

/// Clip to `[-1, 1]`, then map affinely onto the joint limits.
pub fn map_action(a: &[f64], limits: &JointLimits) -> Result<Joints> {
    if a.len() != ACT_DIM {
        return Err(Error::Shape { expected: ACT_DIM, got: a.len() });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("action"));
    }
    Ok(std::array::from_fn(|k| {
        let u = a[k].clamp(-1.0, 1.0);
        limits.min + 0.5 * (u + 1.0) * limits.span()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardComponents {
    pub angle: f64,
    pub r_q: f64,
    pub r_omega: f64,
    pub penalty: f64,
    pub total: f64,
}

/// `r_q + r_ω`; the collision penalty is added by `Env::step`.
pub fn reward(s: &SimState, q_ref: &Quat, p: &RewardParams) -> Result<RewardComponents> {
    let angle = quat_angle(&quat_error(q_ref, &s.q_body)?)?;
    Ok(reward_terms(angle, &s.omega_body, p))
}

pub fn reward_terms(angle: f64, omega: &Vec3, p: &RewardParams) -> RewardComponents {
    let r_q = p.nu_q * (-p.mu_q * angle * angle).exp();
    let r_omega = if angle.abs() > p.angle_gate {
        1.0 - p.nu_omega * (-p.mu_omega * omega.norm_squared()).exp()
    } else {
        p.gate_reward
    };
    RewardComponents { angle, r_q, r_omega, penalty: 0.0, total: r_q + r_omega }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttitudeSpawn {
    /// Uniform on SO(3); on a rod rig, a uniform angle about the rod axis.
    Uniform,
    Fixed(Quat),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointSpawn {
    Uniform,
    Fixed(Joints),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpawnSpec {
    pub attitude: AttitudeSpawn,
    pub joints: JointSpawn,
    pub reference: AttitudeSpawn,
}

impl Default for SpawnSpec {
    fn default() -> Self {
        Self {
            attitude: AttitudeSpawn::Uniform,
            joints: JointSpawn::Uniform,
            reference: AttitudeSpawn::Uniform,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub design: DesignParams,
    pub flight: FlightConfig,
    pub mode: Mode,
    pub reward: RewardParams,
    /// `None` disables observation noise and gain randomization.
    pub noise: Option<NoiseSpec>,
    pub spawn: SpawnSpec,
    pub motor_five_bar: MotorSpec,
    pub motor_hip: MotorSpec,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            design: DesignParams::design(),
            flight: FlightConfig::default(),
            mode: Mode::FreeFloat,
            reward: RewardParams::default(),
            noise: Some(NoiseSpec::default()),
            spawn: SpawnSpec::default(),
            motor_five_bar: MotorSpec::ak70_10(),
            motor_hip: MotorSpec::ak80_9(),
        }
    }
}

impl EnvConfig {
    /// Noise-free, nominal gains, target fixed at identity.
    pub fn evaluation(mut self) -> Self {
        self.noise = None;
        self.spawn.reference = AttitudeSpawn::Fixed(Quat::IDENTITY);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.flight.validate()?;
        self.reward.validate()?;
        if let Some(n) = &self.noise {
            n.validate()?;
        }
        self.design.validate()
    }

    pub fn horizon(&self) -> usize {
        (self.reward.episode_length * self.flight.control_hz).round() as usize
    }

    pub fn nominal_motors(&self) -> [MotorSpec; NUM_JOINTS] {
        std::array::from_fn(|k| if k % 3 == HIP { self.motor_hip } else { self.motor_five_bar })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub components: RewardComponents,
    pub collided: bool,
    pub truncated: bool,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct Env {
    pub cfg: EnvConfig,
    model: Arc<RobotModel>,
    motors: [MotorSpec; NUM_JOINTS],
    state: SimState,
    q_ref: Quat,
    rng: ChaCha8Rng,
    steps: usize,
    done: bool,
}

impl Env {
    pub fn new(cfg: EnvConfig, seed: u64) -> Result<Self> {
        let model = Arc::new(build_model(&cfg.design)?);
        Self::with_model(cfg, model, seed)
    }

    /// Shares an already built model; `model` must come from `cfg.design`.
    pub fn with_model(cfg: EnvConfig, model: Arc<RobotModel>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let state = SimState::at_rest(&model, cfg.mode, Quat::IDENTITY, &[0.0; NUM_JOINTS])?;
        Ok(Self {
            motors: cfg.nominal_motors(),
            cfg,
            model,
            state,
            q_ref: Quat::IDENTITY,
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps: 0,
            done: true,
        })
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn reference(&self) -> Quat {
        self.q_ref
    }

    /// Changes the target mid-episode (evaluation setpoint schedules).
    pub fn set_reference(&mut self, q_ref: Quat) {
        self.q_ref = q_ref.canonical();
    }

    pub fn motors(&self) -> &[MotorSpec; NUM_JOINTS] {
        &self.motors
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn sample_joints(&mut self) -> Result<Joints> {
        let lim = self.cfg.flight.limits;
        for _ in 0..MAX_SPAWN_ATTEMPTS {
            let q: Joints = std::array::from_fn(|_| self.rng.gen_range(lim.min..=lim.max));
            if !self_collision(&self.model, &q).colliding {
                return Ok(q);
            }
        }
        Err(Error::SpawnFailed(MAX_SPAWN_ATTEMPTS))
    }

    pub fn reset(&mut self) -> Result<Observation> {
        let q_body = self.sample_attitude(self.cfg.spawn.attitude);
        let joints = match self.cfg.spawn.joints {
            JointSpawn::Uniform => self.sample_joints()?,
            JointSpawn::Fixed(q) => q,
        };
        let q_ref = self.sample_attitude(self.cfg.spawn.reference);
        self.motors = self.cfg.nominal_motors();
        if let Some(n) = self.cfg.noise {
            for m in &mut self.motors {
                m.kp *= 1.0 + self.rng.gen_range(-n.gain_range..=n.gain_range);
                m.kd *= 1.0 + self.rng.gen_range(-n.gain_range..=n.gain_range);
            }
        }
        self.start(q_body, &joints, q_ref)
    }

    fn sample_attitude(&mut self, spawn: AttitudeSpawn) -> Quat {
        match (spawn, self.cfg.mode) {
            (AttitudeSpawn::Fixed(q), _) => q,
            (AttitudeSpawn::Uniform, Mode::Rod(axis)) => {
                Quat::from_axis_angle(&axis.unit(), self.rng.gen_range(-PI..PI))
            }
            (AttitudeSpawn::Uniform, _) => uniform_quat(&mut self.rng),
        }
    }

    /// Starts an episode from an explicit pose, at rest.
    pub fn start(&mut self, q_body: Quat, joints: &Joints, q_ref: Quat) -> Result<Observation> {
        self.state = SimState::at_rest(&self.model, self.cfg.mode, q_body, joints)?;
        self.q_ref = q_ref.canonical();
        self.steps = 0;
        self.done = false;
        self.observe()
    }

    pub fn observe(&mut self) -> Result<Observation> {
        observe(&self.state, &self.q_ref, self.cfg.noise.as_ref(), &mut self.rng)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<(Observation, f64, bool, StepInfo)> {
        if self.done {
            return Err(Error::EnvDone);
        }
        let cmd = map_action(action, &self.cfg.flight.limits)?;
        let out = step_flight(&self.model, &self.motors, &self.cfg.flight, &self.state, &cmd)?;
        self.state = out.state;
        self.steps += 1;
        let mut c = reward(&self.state, &self.q_ref, &self.cfg.reward)?;
        let collided = out.collision.is_some();
        if collided {
            c.penalty = self.cfg.reward.penalty;
            c.total += c.penalty;
        }
        let truncated = !collided && self.steps >= self.cfg.horizon();
        self.done = collided || truncated;
        let obs = self.observe()?;
        let info = StepInfo { components: c, collided, truncated, steps: self.steps };
        Ok((obs, c.total, self.done, info))
    }
}

/// Outcome of one vectorized step for a single env.
#[derive(Debug, Clone, Copy)]
pub struct VecStep {
    /// Observation to act on next (already reset when the episode ended).
    pub obs: [f64; OBS_DIM],
    pub reward: f64,
    pub done: bool,
    /// Last observation of the finished episode, for bootstrapping truncations.
    pub final_obs: Option<[f64; OBS_DIM]>,
    pub info: StepInfo,
}

/// Independent envs stepped in parallel with automatic reset.
#[derive(Debug, Clone)]
pub struct VecEnv {
    pub envs: Vec<Env>,
}

impl VecEnv {
    /// `n` envs seeded from `seed` by index.
    pub fn new(cfg: &EnvConfig, n: usize, seed: u64) -> Result<Self> {
        let model = Arc::new(build_model(&cfg.design)?);
        let envs = (0..n)
            .map(|i| Env::with_model(cfg.clone(), model.clone(), env_seed(seed, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { envs })
    }

    /// Each env gets exactly `seed`; useful for determinism checks.
    pub fn replicated(cfg: &EnvConfig, n: usize, seed: u64) -> Result<Self> {
        let model = Arc::new(build_model(&cfg.design)?);
        let envs = (0..n)
            .map(|_| Env::with_model(cfg.clone(), model.clone(), seed))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { envs })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn reset_all(&mut self) -> Result<Vec<[f64; OBS_DIM]>> {
        self.envs.par_iter_mut().map(|e| e.reset().map(|o| o.to_array())).collect()
    }

    pub fn step_all(&mut self, actions: &[[f64; ACT_DIM]]) -> Result<Vec<VecStep>> {
        if actions.len() != self.envs.len() {
            return Err(Error::Shape { expected: self.envs.len(), got: actions.len() });
        }
        self.envs
            .par_iter_mut()
            .zip(actions.par_iter())
            .map(|(e, a)| {
                let (obs, reward, done, info) = e.step(a)?;
                let (obs, final_obs) = if done {
                    (e.reset()?.to_array(), Some(obs.to_array()))
                } else {
                    (obs.to_array(), None)
                };
                Ok(VecStep { obs, reward, done, final_obs, info })
            })
            .collect()
    }
}

pub fn env_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use crate::flight::Axis;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    #[test]
    fn action_mapping_endpoints() {
        let lim = JointLimits::motor();
        let lo = map_action(&[-1.0; 12], &lim).unwrap();
        let hi = map_action(&[1.0; 12], &lim).unwrap();
        let mid = map_action(&[0.0; 12], &lim).unwrap();
        for k in 0..12 {
            assert_abs_diff_eq!(lo[k], deg(-30.0), epsilon = 1e-15);
            assert_abs_diff_eq!(hi[k], deg(125.0), epsilon = 1e-15);
            assert_abs_diff_eq!(mid[k], deg(47.5), epsilon = 1e-15);
        }
        assert_eq!(map_action(&[5.0; 12], &lim).unwrap(), hi);
        assert!(map_action(&[f64::NAN; 12], &lim).is_err());
        assert!(map_action(&[0.0; 11], &lim).is_err());
    }

    #[test]
    fn reward_examples() {
        let p = RewardParams::default();
        let r = reward_terms(0.0, &Vec3::zeros(), &p);
        assert_eq!(r.r_q, p.nu_q);
        assert_eq!(r.r_omega, 10.0);
        assert_eq!(r.total, p.nu_q + 10.0);
        let r = reward_terms(0.05, &Vec3::new(40.0, 0.0, 0.0), &p);
        assert_eq!(r.r_omega, 10.0);
        let pi = std::f64::consts::PI;
        assert_eq!(reward_terms(pi, &Vec3::zeros(), &p).r_omega, 1.0 - p.nu_omega);
        assert_abs_diff_eq!(reward_terms(pi, &Vec3::new(1e3, 0.0, 0.0), &p).r_omega, 1.0, epsilon = 1e-12);
    }

    fn eval_cfg() -> EnvConfig {
        EnvConfig::default().evaluation()
    }

    #[test]
    fn observe_identity_and_passthrough() {
        let mut env = Env::new(eval_cfg(), 1).unwrap();
        let q = Quat::from_euler(0.3, -0.2, 1.0);
        env.start(q, &[0.1; 12], q).unwrap();
        env.state.omega_body = Vec3::new(0.5, -1.0, 2.0);
        let o = env.observe().unwrap();
        assert_abs_diff_eq!(o.q_err.w, 1.0, epsilon = 1e-12);
        assert_eq!(o.omega, [0.5, -1.0, 2.0]);
        assert_eq!(o.joint_pos, [0.1; 12]);
        assert_eq!(env.observe().unwrap(), o);
    }

    #[test]
    fn orientation_noise_statistics() {
        // Maxwell mean of an isotropic 3D Gaussian rotation vector: 2σ√(2/π)
        let sigma = deg(3.0);
        let expect = 2.0 * sigma * (2.0 / std::f64::consts::PI).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = build_model(&DesignParams::design()).unwrap();
        let s = SimState::at_rest(&model, Mode::FreeFloat, Quat::IDENTITY, &[0.0; 12]).unwrap();
        let noise = NoiseSpec::default();
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let o = observe(&s, &Quat::IDENTITY, Some(&noise), &mut rng).unwrap();
            sum += quat_angle(&o.q_err).unwrap();
        }
        let mean = sum / n as f64;
        assert!((mean - expect).abs() < 0.01 * expect, "{mean} vs {expect}");
    }

    #[test]
    fn uniform_spawn_mean_angle() {
        // E[θ] = π/2 + 2/π for the Haar measure on SO(3)
        let expect = std::f64::consts::FRAC_PI_2 + 2.0 / std::f64::consts::PI;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mean = (0..n).map(|_| quat_angle(&uniform_quat(&mut rng)).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - expect).abs() < 0.005, "{mean} vs {expect}");
    }

    #[test]
    fn spawns_are_deterministic_and_collision_free() {
        let cfg = EnvConfig::default();
        let mut a = Env::new(cfg.clone(), 5).unwrap();
        let mut b = Env::new(cfg, 5).unwrap();
        for _ in 0..50 {
            let (oa, ob) = (a.reset().unwrap(), b.reset().unwrap());
            assert_eq!(oa, ob);
            assert_eq!(a.motors(), b.motors());
            assert!(!self_collision(a.model(), &a.state().positions()).colliding);
            assert!(a.state().velocities().iter().all(|v| *v == 0.0));
            for m in a.motors() {
                assert!(m.kp >= 20.0 - 1e-12 && m.kp <= 60.0 + 1e-12);
            }
        }
    }

    #[test]
    fn rod_spawns_stay_on_the_rod_axis() {
        let cfg = EnvConfig { mode: Mode::Rod(Axis::Roll), ..EnvConfig::default() };
        let mut env = Env::new(cfg, 3).unwrap();
        for _ in 0..50 {
            env.reset().unwrap();
            for q in [env.state().q_body, env.reference()] {
                assert_abs_diff_eq!(q.y, 0.0, epsilon = 1e-15);
                assert_abs_diff_eq!(q.z, 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn full_episode_without_collision() {
        let mut env = Env::new(eval_cfg(), 0).unwrap();
        let a = [0.0; 12];
        let mid = map_action(&a, &env.cfg.flight.limits).unwrap();
        env.start(Quat::from_euler(1.0, 0.5, -0.5), &mid, Quat::IDENTITY).unwrap();
        let mut n = 0;
        loop {
            let (_, r, done, info) = env.step(&a).unwrap();
            n += 1;
            assert!(!info.collided);
            assert!(r >= 1.0 - env.cfg.reward.nu_omega);
            if done {
                assert!(info.truncated);
                break;
            }
        }
        assert_eq!(n, 300);
        assert!(matches!(env.step(&a), Err(Error::EnvDone)));
    }

    #[test]
    fn zero_error_hold_pays_maximum() {
        let mut env = Env::new(eval_cfg(), 0).unwrap();
        let a = [0.0; 12];
        let mid = map_action(&a, &env.cfg.flight.limits).unwrap();
        env.start(Quat::IDENTITY, &mid, Quat::IDENTITY).unwrap();
        let best = env.cfg.reward.nu_q + 10.0;
        for _ in 0..300 {
            let (_, r, _, _) = env.step(&a).unwrap();
            assert_eq!(r, best);
        }
    }

    #[test]
    fn collision_terminates_with_penalty() {
        let mut env = Env::new(eval_cfg(), 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        // find a colliding pose and command it
        let lim = env.cfg.flight.limits;
        let q = loop {
            let q: Joints = std::array::from_fn(|_| rng.gen_range(lim.min..=lim.max));
            if self_collision(env.model(), &q).colliding {
                break q;
            }
        };
        let a: Vec<f64> = q.iter().map(|v| 2.0 * (v - lim.min) / lim.span() - 1.0).collect();
        env.start(Quat::IDENTITY, &q, Quat::IDENTITY).unwrap();
        let (_, r, done, info) = env.step(&a).unwrap();
        assert!(done && info.collided && !info.truncated);
        assert_eq!(info.components.penalty, -15.0);
        assert_abs_diff_eq!(r, info.components.r_q + info.components.r_omega - 15.0, epsilon = 1e-12);
    }

    #[test]
    fn replicated_vec_env_is_identical() {
        let mut v = VecEnv::replicated(&EnvConfig::default(), 3, 9).unwrap();
        v.reset_all().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let a: [f64; 12] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let out = v.step_all(&[a; 3]).unwrap();
            assert_eq!(out[0].obs, out[1].obs);
            assert_eq!(out[1].obs, out[2].obs);
            assert_eq!(out[0].reward, out[2].reward);
        }
    }

    proptest! {
        #[test]
        fn observation_roundtrip(v in prop::collection::vec(-10.0f64..10.0, OBS_DIM)) {
            let o = Observation::from_slice(&v).unwrap();
            prop_assert_eq!(o.to_array().to_vec(), v);
            let json = serde_json::to_string(&o).unwrap();
            let back: Observation = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, o);
        }

        #[test]
        fn map_action_monotone_and_idempotent(a in prop::array::uniform12(-3.0f64..3.0), k in 0usize..12, d in 0.0f64..2.0) {
            let lim = JointLimits::motor();
            let base = map_action(&a, &lim).unwrap();
            let mut b = a;
            b[k] += d;
            prop_assert!(map_action(&b, &lim).unwrap()[k] >= base[k]);
            let clipped: Vec<f64> = a.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            prop_assert_eq!(map_action(&clipped, &lim).unwrap(), base);
        }

        #[test]
        fn reward_is_bounded(angle in 0.0f64..std::f64::consts::PI, w in prop::array::uniform3(-50.0f64..50.0)) {
            let p = RewardParams::default();
            let r = reward_terms(angle, &Vec3::new(w[0], w[1], w[2]), &p);
            prop_assert!(r.total >= 1.0 - p.nu_omega - 1e-12);
            prop_assert!(r.total <= p.nu_q + 10.0 + 1e-12);
        }
    }
}
