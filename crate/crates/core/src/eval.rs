//! Policy evaluation: scripted rig scenarios and batch free-float statistics.
//!
//! Step-response summaries use the attitude error angle `e(t)` against the
//! active setpoint (the twist about the rod axis on the rod rig). For a
//! segment starting with error `e0`:
//! rise time is the first time `|e| <= 0.1 e0`, overshoot is the largest
//! signed excursion past the target as a fraction of `e0`, and settle time is
//! the first time after which `|e|` stays within `max(0.05 e0, 2°)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flight::{Axis, FlightConfig, Mode};
use crate::geom::{quat_angle, quat_error, wrap_angle, Quat};
use crate::linkage::JointLimits;
use crate::ppo::Checkpoint;
use crate::rlenv::{env_seed, map_action, AttitudeSpawn, Env, EnvConfig, JointSpawn, NoiseSpec, ACT_DIM, OBS_DIM};
use crate::robot::{Joints, NUM_JOINTS};
use crate::trace::TraceRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Setpoint {
    /// Seconds from scenario start.
    pub time: f64,
    /// Roll, pitch, yaw in degrees.
    pub rpy_deg: [f64; 3],
}

/// Restricts the commanded angle of some joints (degrees).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointClip {
    pub joints: Vec<usize>,
    pub min_deg: f64,
    pub max_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub mode: Mode,
    pub duration: f64,
    #[serde(default)]
    pub initial_rpy_deg: [f64; 3],
    /// Defaults to the middle of the joint range.
    #[serde(default)]
    pub initial_joints_deg: Option<Joints>,
    pub setpoints: Vec<Setpoint>,
    /// Added to each paw, kg.
    #[serde(default)]
    pub paw_extra_mass: f64,
    #[serde(default)]
    pub clips: Vec<JointClip>,
}

fn step(name: &str, mode: Mode, rpy: [f64; 3]) -> Scenario {
    Scenario {
        name: name.into(),
        mode,
        duration: 6.0,
        initial_rpy_deg: [0.0; 3],
        initial_joints_deg: None,
        setpoints: vec![Setpoint { time: 0.0, rpy_deg: rpy }],
        paw_extra_mass: 0.0,
        clips: Vec::new(),
    }
}

pub const BUILTIN: [&str; 7] = [
    "free_float_step",
    "rod_roll_step",
    "rod_pitch_step",
    "rod_yaw_step",
    "rope_roll_step",
    "rope_yaw_step",
    "paw_mass_staircase",
];

impl Scenario {
    pub fn builtin(name: &str) -> Result<Self> {
        Ok(match name {
            "free_float_step" => {
                let mut s = step(name, Mode::FreeFloat, [0.0; 3]);
                s.initial_rpy_deg = [60.0, -30.0, 45.0];
                s
            }
            "rod_roll_step" => step(name, Mode::Rod(Axis::Roll), [90.0, 0.0, 0.0]),
            "rod_pitch_step" => {
                let mut s = step(name, Mode::Rod(Axis::Pitch), [0.0, 30.0, 0.0]);
                // the motors facing the rod mount are kept out of it
                s.clips = vec![JointClip { joints: vec![1, 4], min_deg: -30.0, max_deg: 40.0 }];
                s
            }
            "rod_yaw_step" => step(name, Mode::Rod(Axis::Yaw), [0.0, 0.0, 45.0]),
            "rope_roll_step" => step(name, Mode::Rope, [30.0, 0.0, 0.0]),
            "rope_yaw_step" => step(name, Mode::Rope, [0.0, 0.0, 90.0]),
            "paw_mass_staircase" => {
                let mut s = step(name, Mode::Rod(Axis::Roll), [0.0; 3]);
                s.duration = 24.0;
                s.setpoints = [0.0, 30.0, 60.0, 90.0]
                    .iter()
                    .enumerate()
                    .map(|(k, d)| Setpoint { time: 6.0 * k as f64, rpy_deg: [*d, 0.0, 0.0] })
                    .collect();
                s.paw_extra_mass = 0.1;
                s
            }
            other => return Err(Error::Config(format!("unknown scenario {other:?}; builtins: {BUILTIN:?}"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) || self.setpoints.is_empty() {
            return Err(Error::Config("scenario needs a positive duration and a setpoint".into()));
        }
        if self.setpoints[0].time != 0.0 || self.setpoints.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::Config("setpoint times must start at 0 and increase".into()));
        }
        if !(self.paw_extra_mass >= 0.0) {
            return Err(Error::Config("paw_extra_mass must be >= 0".into()));
        }
        for c in &self.clips {
            if c.joints.iter().any(|j| *j >= NUM_JOINTS) || !(c.min_deg <= c.max_deg) {
                return Err(Error::Config("invalid joint clip".into()));
            }
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Scenario = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    fn reference_at(&self, t: f64) -> usize {
        self.setpoints.iter().rposition(|s| s.time <= t + 1e-9).unwrap_or(0)
    }
}

fn rpy_quat(d: &[f64; 3]) -> Quat {
    Quat::from_euler(d[0].to_radians(), d[1].to_radians(), d[2].to_radians())
}

/// Tracking error: signed twist about the rod axis, otherwise the error angle.
fn tracking_error(mode: Mode, q_ref: &Quat, q_body: &Quat) -> Result<f64> {
    match mode {
        Mode::Rod(axis) => {
            let a = axis.unit();
            Ok(wrap_angle(q_body.twist_angle(&a) - q_ref.twist_angle(&a)))
        }
        _ => quat_angle(&quat_error(q_ref, q_body)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub start: f64,
    pub initial_error_deg: f64,
    pub final_error_deg: f64,
    pub rise_time: Option<f64>,
    pub overshoot: f64,
    pub settle_time: Option<f64>,
}

/// Summary of one segment from `(time since segment start, signed error)`.
pub fn summarize_step(start: f64, samples: &[(f64, f64)]) -> StepSummary {
    let e0 = samples.first().map(|s| s.1).unwrap_or(0.0);
    let mag = e0.abs();
    let band = (0.05 * mag).max(2f64.to_radians());
    let rise = samples.iter().find(|(_, e)| e.abs() <= 0.1 * mag).map(|s| s.0);
    let sign = if e0 >= 0.0 { 1.0 } else { -1.0 };
    let past = samples.iter().map(|(_, e)| -sign * e).fold(0.0f64, f64::max);
    let overshoot = if mag > 0.0 { past / mag } else { 0.0 };
    let settle = match samples.iter().rposition(|(_, e)| e.abs() > band) {
        None => Some(0.0),
        Some(k) if k + 1 < samples.len() => Some(samples[k + 1].0),
        Some(_) => None,
    };
    StepSummary {
        start,
        initial_error_deg: e0.to_degrees(),
        final_error_deg: samples.last().map(|s| s.1).unwrap_or(0.0).to_degrees(),
        rise_time: rise,
        overshoot,
        settle_time: settle,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: Scenario,
    pub steps: Vec<StepSummary>,
    pub collided: bool,
    pub collision_time: Option<f64>,
    pub final_error_deg: f64,
    pub total_reward: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

/// Evaluation env config for a scenario on top of the checkpoint's config.
pub fn scenario_env(base: &EnvConfig, sc: &Scenario) -> EnvConfig {
    let mut cfg = base.clone().evaluation();
    cfg.mode = sc.mode;
    cfg.design.paw_extra_mass = sc.paw_extra_mass;
    cfg.reward.episode_length = sc.duration;
    cfg
}

fn limits_to_action(theta: &Joints, lim: &JointLimits) -> [f64; ACT_DIM] {
    std::array::from_fn(|k| 2.0 * (theta[k] - lim.min) / lim.span() - 1.0)
}

/// Clips a policy action so the commanded angles respect `clips`.
pub fn apply_clips(a: &[f64; ACT_DIM], clips: &[JointClip], lim: &JointLimits) -> Result<[f64; ACT_DIM]> {
    if clips.is_empty() {
        return Ok(*a);
    }
    let mut theta = map_action(a, lim)?;
    for c in clips {
        for &j in &c.joints {
            theta[j] = theta[j].clamp(c.min_deg.to_radians(), c.max_deg.to_radians());
        }
    }
    Ok(limits_to_action(&theta, lim))
}

/// Closed-loop run of the checkpoint policy through a scenario.
pub fn run_scenario(ck: &Checkpoint, sc: &Scenario, flight: Option<&FlightConfig>) -> Result<ScenarioReport> {
    run_scenario_noisy(ck, sc, flight, None, 0)
}

/// [`run_scenario`] with observation noise drawn from `seed`.
pub fn run_scenario_noisy(
    ck: &Checkpoint,
    sc: &Scenario,
    flight: Option<&FlightConfig>,
    noise: Option<&NoiseSpec>,
    seed: u64,
) -> Result<ScenarioReport> {
    sc.validate()?;
    let mut cfg = scenario_env(&ck.env, sc);
    if let Some(f) = flight {
        cfg.flight = *f;
    }
    cfg.noise = noise.copied();
    let lim = cfg.flight.limits;
    let mode = cfg.mode;
    let joints = match sc.initial_joints_deg {
        Some(j) => j.map(f64::to_radians),
        None => [0.5 * (lim.min + lim.max); NUM_JOINTS],
    };
    let mut env = Env::new(cfg, seed)?;
    let refs: Vec<Quat> = sc.setpoints.iter().map(|s| rpy_quat(&s.rpy_deg)).collect();
    let mut obs = env.start(rpy_quat(&sc.initial_rpy_deg), &joints, refs[0])?;
    let mut trace = vec![TraceRow::from_state(env.state(), 0.0)];
    let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new(); refs.len()];
    let mut seg = 0;
    segments[0].push((0.0, tracking_error(mode, &refs[0], &env.state().q_body)?));
    let (mut collided, mut collision_time, mut total) = (false, None, 0.0);
    loop {
        let a = apply_clips(&ck.act(&obs.to_array())?, &sc.clips, &lim)?;
        let (o, r, done, info) = env.step(&a)?;
        obs = o;
        total += r;
        let t = env.state().time;
        trace.push(TraceRow::from_state(env.state(), r));
        let k = sc.reference_at(t);
        if k != seg {
            seg = k;
            env.set_reference(refs[k]);
            obs = env.observe()?;
        }
        let e = tracking_error(mode, &refs[seg], &env.state().q_body)?;
        segments[seg].push((t - sc.setpoints[seg].time, e));
        if info.collided {
            collided = true;
            collision_time = Some(t);
        }
        if done {
            break;
        }
    }
    let steps = segments
        .iter()
        .zip(&sc.setpoints)
        .filter(|(s, _)| !s.is_empty())
        .map(|(s, sp)| summarize_step(sp.time, s))
        .collect();
    let final_error_deg = quat_angle(&quat_error(&env.reference(), &env.state().q_body)?)?.to_degrees();
    Ok(ScenarioReport { scenario: sc.clone(), steps, collided, collision_time, final_error_deg, total_reward: total, trace })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FreeFloatReport {
    pub episodes: usize,
    pub seed: u64,
    pub median_final_angle_deg: f64,
    pub mean_final_angle_deg: f64,
    pub p90_final_angle_deg: f64,
    pub mean_initial_angle_deg: f64,
    pub collision_rate: f64,
    pub final_angles_deg: Vec<f64>,
}

/// Deterministic-policy episodes from uniform attitude and joint spawns with
/// the identity as target. Collided episodes keep the error at collision.
pub fn evaluate_free_float(ck: &Checkpoint, episodes: usize, seed: u64) -> Result<FreeFloatReport> {
    let mut cfg = ck.env.clone().evaluation();
    cfg.mode = Mode::FreeFloat;
    cfg.spawn.attitude = AttitudeSpawn::Uniform;
    cfg.spawn.joints = JointSpawn::Uniform;
    let model = std::sync::Arc::new(crate::robot::build_model(&cfg.design)?);
    let mut envs = (0..episodes)
        .map(|i| Env::with_model(cfg.clone(), model.clone(), env_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let mut obs: Vec<[f64; OBS_DIM]> = Vec::with_capacity(episodes);
    let mut initial = 0.0;
    for e in &mut envs {
        obs.push(e.reset()?.to_array());
        initial += quat_angle(&quat_error(&e.reference(), &e.state().q_body)?)?.to_degrees();
    }
    let mut final_angle = vec![0.0; episodes];
    let mut collided = vec![false; episodes];
    let mut live: Vec<usize> = (0..episodes).collect();
    while !live.is_empty() {
        let batch: Vec<[f64; OBS_DIM]> = live.iter().map(|&i| obs[i]).collect();
        let acts = ck.act_batch(&batch)?;
        let mut next = Vec::with_capacity(live.len());
        for (&i, a) in live.iter().zip(&acts) {
            let (o, _, done, info) = envs[i].step(a)?;
            obs[i] = o.to_array();
            if done {
                final_angle[i] = info.components.angle.to_degrees();
                collided[i] = info.collided;
            } else {
                next.push(i);
            }
        }
        live = next;
    }
    let mut sorted = final_angle.clone();
    sorted.sort_by(f64::total_cmp);
    let n = episodes.max(1) as f64;
    let pick = |q: f64| {
        if sorted.is_empty() {
            0.0
        } else {
            let pos = q * (sorted.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    };
    Ok(FreeFloatReport {
        episodes,
        seed,
        median_final_angle_deg: pick(0.5),
        mean_final_angle_deg: final_angle.iter().sum::<f64>() / n,
        p90_final_angle_deg: pick(0.9),
        mean_initial_angle_deg: initial / n,
        collision_rate: collided.iter().filter(|c| **c).count() as f64 / n,
        final_angles_deg: final_angle,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PawMassPoint {
    pub paw_extra_mass: f64,
    pub settle_time: Option<f64>,
    pub rise_time: Option<f64>,
    pub final_error_deg: f64,
    pub collided: bool,
}

/// Runs `base` once per paw mass and reports the first step's response.
pub fn paw_mass_sweep(ck: &Checkpoint, base: &Scenario, masses: &[f64]) -> Result<Vec<PawMassPoint>> {
    masses
        .iter()
        .map(|&m| {
            let sc = Scenario { paw_extra_mass: m, ..base.clone() };
            let r = run_scenario(ck, &sc, None)?;
            let s = r.steps.first().copied();
            Ok(PawMassPoint {
                paw_extra_mass: m,
                settle_time: s.and_then(|s| s.settle_time),
                rise_time: s.and_then(|s| s.rise_time),
                final_error_deg: r.final_error_deg,
                collided: r.collided,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PawMassTrend {
    pub paw_extra_mass: f64,
    pub trials: usize,
    pub settled: usize,
    /// Mean first-step settle time; a run that never settles counts the
    /// whole step duration.
    pub mean_settle_time: f64,
    pub mean_final_error_deg: f64,
    pub collisions: usize,
}

/// Repeats `base` with observation noise `trials` times per paw mass; trial
/// `i` uses the same noise seed at every mass.
pub fn paw_mass_trials(
    ck: &Checkpoint,
    base: &Scenario,
    masses: &[f64],
    noise: &NoiseSpec,
    trials: usize,
    seed: u64,
) -> Result<Vec<PawMassTrend>> {
    if trials == 0 {
        return Err(Error::InvalidParam("need at least one trial".into()));
    }
    let step_end = base.setpoints.get(1).map_or(base.duration, |s| s.time) - base.setpoints[0].time;
    masses
        .iter()
        .map(|&m| {
            let sc = Scenario { paw_extra_mass: m, ..base.clone() };
            let runs: Vec<ScenarioReport> = (0..trials as u64)
                .into_par_iter()
                .map(|i| run_scenario_noisy(ck, &sc, None, Some(noise), env_seed(seed, i as usize)))
                .collect::<Result<_>>()?;
            let settle: Vec<Option<f64>> = runs.iter().map(|r| r.steps.first().and_then(|s| s.settle_time)).collect();
            let n = trials as f64;
            Ok(PawMassTrend {
                paw_extra_mass: m,
                trials,
                settled: settle.iter().flatten().count(),
                mean_settle_time: settle.iter().map(|s| s.unwrap_or(step_end)).sum::<f64>() / n,
                mean_final_error_deg: runs.iter().map(|r| r.final_error_deg).sum::<f64>() / n,
                collisions: runs.iter().filter(|r| r.collided).count(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::{PolicyNet, RunningNorm, CHECKPOINT_FORMAT, CHECKPOINT_VERSION, PpoConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_policy() -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            ppo: PpoConfig::default(),
            env: EnvConfig::default(),
            net: PolicyNet::zeros(OBS_DIM, ACT_DIM, &[8, 8, 8]),
            obs_norm: RunningNorm::new(OBS_DIM, 5.0),
            value_norm: RunningNorm::new(1, 1e6),
            updates: 0,
            env_steps: 0,
            rng: ChaCha8Rng::seed_from_u64(0),
            metrics: None,
        }
    }

    #[test]
    fn summary_of_ideal_step() {
        let s: Vec<(f64, f64)> = (0..=100).map(|k| (k as f64 * 0.02, (1.0 - k as f64 / 50.0).max(0.0))).collect();
        let r = summarize_step(0.0, &s);
        assert_eq!(r.rise_time, Some(0.9));
        assert_eq!(r.overshoot, 0.0);
        assert_eq!(r.settle_time, Some(0.96));
        let never: Vec<(f64, f64)> = (0..10).map(|k| (k as f64, 1.0)).collect();
        assert_eq!(summarize_step(0.0, &never).settle_time, None);
        let over = vec![(0.0, 1.0), (0.5, -0.2), (1.0, 0.0)];
        assert!((summarize_step(0.0, &over).overshoot - 0.2).abs() < 1e-12);
    }

    #[test]
    fn builtins_validate_and_roundtrip() {
        for name in BUILTIN {
            let s = Scenario::builtin(name).unwrap();
            s.validate().unwrap();
            let back: Scenario = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
            assert_eq!(back, s);
        }
        assert!(Scenario::builtin("nope").is_err());
    }

    #[test]
    fn clips_restrict_commands() {
        let lim = JointLimits::motor();
        let clips = vec![JointClip { joints: vec![1], min_deg: -30.0, max_deg: 40.0 }];
        let a = apply_clips(&[1.0; ACT_DIM], &clips, &lim).unwrap();
        let th = map_action(&a, &lim).unwrap();
        assert!((th[1].to_degrees() - 40.0).abs() < 1e-9);
        assert!((th[0].to_degrees() - 125.0).abs() < 1e-9);
    }

    #[test]
    fn zero_policy_holds_attitude_on_free_float() {
        let ck = zero_policy();
        let mut sc = Scenario::builtin("free_float_step").unwrap();
        sc.duration = 1.0;
        let r = run_scenario(&ck, &sc, None).unwrap();
        assert!(!r.collided);
        assert_eq!(r.trace.len(), 51);
        // mid-range hold from rest does not rotate the body
        assert!((r.final_error_deg - r.steps[0].initial_error_deg).abs() < 1e-6);
    }

    #[test]
    fn staircase_segments() {
        let ck = zero_policy();
        let mut sc = Scenario::builtin("paw_mass_staircase").unwrap();
        sc.duration = 3.0;
        sc.setpoints = vec![
            Setpoint { time: 0.0, rpy_deg: [0.0; 3] },
            Setpoint { time: 1.0, rpy_deg: [30.0, 0.0, 0.0] },
            Setpoint { time: 2.0, rpy_deg: [60.0, 0.0, 0.0] },
        ];
        let r = run_scenario(&ck, &sc, None).unwrap();
        assert_eq!(r.steps.len(), 3);
        assert!((r.steps[1].initial_error_deg.abs() - 30.0).abs() < 1.0);
    }

    #[test]
    fn free_float_batch_is_deterministic() {
        let ck = zero_policy();
        let a = evaluate_free_float(&ck, 4, 3).unwrap();
        let b = evaluate_free_float(&ck, 4, 3).unwrap();
        assert_eq!(a.final_angles_deg, b.final_angles_deg);
        assert!(a.mean_initial_angle_deg > 0.0);
    }

    #[test]
    fn paw_mass_trials_count_unsettled_runs() {
        let ck = zero_policy();
        let mut sc = Scenario::builtin("rod_roll_step").unwrap();
        sc.duration = 1.0;
        let noise = NoiseSpec::default();
        let a = paw_mass_trials(&ck, &sc, &[0.0, 0.1], &noise, 3, 5).unwrap();
        let b = paw_mass_trials(&ck, &sc, &[0.0, 0.1], &noise, 3, 5).unwrap();
        assert_eq!(a, b);
        for p in &a {
            // a zero policy never reaches a 90 degree step
            assert_eq!((p.trials, p.settled), (3, 0));
            assert_eq!(p.mean_settle_time, 1.0);
        }
        assert!(paw_mass_trials(&ck, &sc, &[0.0], &noise, 0, 5).is_err());
    }
}
