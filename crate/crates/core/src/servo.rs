//! Saturated PD position servo and per-joint integration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linkage::JointLimits;
use crate::robot::MotorSpec;

/// Slowest physics step the joint integrator accepts (400 Hz).
pub const MAX_DT: f64 = 1.0 / 400.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    pub theta: f64,
    pub theta_dot: f64,
    pub theta_cmd: f64,
}

impl JointState {
    pub fn at_rest(theta: f64) -> Self {
        Self {
            theta,
            theta_dot: 0.0,
            theta_cmd: theta,
        }
    }
}

/// `sat(kp (θr − θ) − kd θ̇, τmax)`.
pub fn motor_torque(s: &JointState, spec: &MotorSpec) -> f64 {
    let raw = spec.kp * (s.theta_cmd - s.theta) - spec.kd * s.theta_dot;
    let cap = spec.tau_max;
    if raw.is_nan() {
        return 0.0;
    }
    raw.clamp(-cap, cap)
}

/// Result of a joint step, including the work the motor did over it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointStep {
    pub state: JointState,
    pub torque: f64,
    /// `τ · θ̇_new · dt`, consistent with the semi-implicit position update.
    pub work: f64,
}

/// Semi-implicit Euler on `θ̈ = (τ_motor + τ_ext) / I`, with speed and hard-stop clamps.
pub fn step_joint_with(
    s: &JointState,
    spec: &MotorSpec,
    effective_inertia: f64,
    external_torque: f64,
    limits: &JointLimits,
    dt: f64,
) -> Result<JointStep> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParam(format!("dt must be positive, got {dt}")));
    }
    if dt > MAX_DT + 1e-15 {
        return Err(Error::InvalidParam(format!(
            "dt {dt} exceeds the 400 Hz physics floor"
        )));
    }
    if !(effective_inertia > 0.0) {
        return Err(Error::InvalidParam("effective inertia must be positive".into()));
    }
    let torque = motor_torque(s, spec);
    let accel = (torque + external_torque) / effective_inertia;
    let mut vel = (s.theta_dot + accel * dt).clamp(-spec.speed_max, spec.speed_max);
    let mut pos = s.theta + vel * dt;
    if pos > limits.max {
        pos = limits.max;
        vel = 0.0;
    } else if pos < limits.min {
        pos = limits.min;
        vel = 0.0;
    }
    let work = torque * (pos - s.theta);
    Ok(JointStep {
        state: JointState {
            theta: pos,
            theta_dot: vel,
            theta_cmd: s.theta_cmd,
        },
        torque,
        work,
    })
}

pub fn step_joint(
    s: &JointState,
    spec: &MotorSpec,
    effective_inertia: f64,
    dt: f64,
) -> Result<JointState> {
    step_joint_with(s, spec, effective_inertia, 0.0, &JointLimits::motor(), dt).map(|r| r.state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec8() -> MotorSpec {
        MotorSpec::ak70_10().with_tau_max(8.0)
    }

    #[test]
    fn zero_error_zero_torque() {
        assert_eq!(motor_torque(&JointState::at_rest(0.4), &spec8()), 0.0);
    }

    #[test]
    fn saturates() {
        let s = JointState { theta: 0.0, theta_dot: 0.0, theta_cmd: 10.0 };
        assert_eq!(motor_torque(&s, &spec8()), 8.0);
        let s = JointState { theta_cmd: -10.0, ..s };
        assert_eq!(motor_torque(&s, &spec8()), -8.0);
    }

    #[test]
    fn linear_regime_arithmetic() {
        let s = JointState { theta: 0.0, theta_dot: 1.0, theta_cmd: 0.1 };
        assert_abs_diff_eq!(motor_torque(&s, &spec8()), 3.0, epsilon = 1e-14);
    }

    #[test]
    fn rest_is_fixed_point() {
        let s = JointState::at_rest(0.2);
        assert_eq!(step_joint(&s, &spec8(), 0.02, 1.0 / 800.0).unwrap(), s);
    }

    #[test]
    fn rejects_bad_dt() {
        let s = JointState::at_rest(0.0);
        assert!(step_joint(&s, &spec8(), 0.02, 0.0).is_err());
        assert!(step_joint(&s, &spec8(), 0.02, -1e-3).is_err());
        assert!(step_joint(&s, &spec8(), 0.02, 1.0 / 100.0).is_err());
    }

    /// Analytic oracle: `I θ̈ + kd θ̇ + kp θ = kp θr` from rest.
    #[test]
    fn step_response_tracks_linear_ode() {
        let spec = spec8();
        let inertia = 0.05;
        let step = 0.1;
        let (kp, kd) = (spec.kp, spec.kd);
        let wn = (kp / inertia).sqrt();
        let zeta = kd / (2.0 * (kp * inertia).sqrt());
        assert!(zeta < 1.0);
        let wd = wn * (1.0 - zeta * zeta).sqrt();
        let analytic = |t: f64| {
            step * (1.0
                - (-zeta * wn * t).exp()
                    * ((wd * t).cos() + zeta / (1.0 - zeta * zeta).sqrt() * (wd * t).sin()))
        };
        let dt = 1.0 / 800.0;
        let mut s = JointState { theta: 0.0, theta_dot: 0.0, theta_cmd: step };
        let mut worst = 0.0f64;
        let (mut peak_sim, mut peak_ref) = (0.0f64, 0.0f64);
        for k in 1..=1600 {
            s = step_joint(&s, &spec, inertia, dt).unwrap();
            let t = k as f64 * dt;
            worst = worst.max((s.theta - analytic(t)).abs());
            peak_sim = peak_sim.max(s.theta);
            peak_ref = peak_ref.max(analytic(t));
        }
        assert!(worst < 0.02 * step, "max deviation {worst}");
        let (os_sim, os_ref) = (peak_sim / step - 1.0, peak_ref / step - 1.0);
        assert!((os_sim - os_ref).abs() < 0.02, "{os_sim} vs {os_ref}");
        assert!((s.theta - step).abs() < 1e-6, "no steady-state offset");
    }

    #[test]
    fn upper_stop_is_exact() {
        let mut s = JointState { theta: 1.0, theta_dot: 0.0, theta_cmd: 3.0 };
        for _ in 0..4000 {
            s = step_joint(&s, &spec8(), 0.02, 1.0 / 800.0).unwrap();
        }
        assert_eq!(s.theta, 125f64.to_radians());
        assert_eq!(s.theta_dot, 0.0);
    }

    #[test]
    fn fuzz_saturation_and_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lim = JointLimits::motor();
        for _ in 0..100_000 {
            let spec = MotorSpec {
                tau_max: rng.gen_range(0.1..30.0),
                kp: rng.gen_range(0.0..200.0),
                kd: rng.gen_range(0.0..10.0),
                ..MotorSpec::ak70_10()
            };
            let s = JointState {
                theta: rng.gen_range(lim.min..lim.max),
                theta_dot: rng.gen_range(-50.0..50.0),
                theta_cmd: rng.gen_range(-20.0..20.0),
            };
            assert!(motor_torque(&s, &spec).abs() <= spec.tau_max);
            let n = step_joint(&s, &spec, rng.gen_range(1e-3..1.0), 1.0 / 800.0).unwrap();
            assert!(lim.contains(n.theta));
            assert!(n.theta_dot.abs() <= spec.speed_max);
        }
    }

    #[test]
    fn work_matches_trapezoid_reintegration() {
        let spec = spec8();
        let dt = 1.0 / 800.0;
        let mut s = JointState { theta: 0.0, theta_dot: 0.0, theta_cmd: 1.2 };
        let mut work = 0.0;
        let mut samples = vec![(0.0, motor_torque(&s, &spec) * s.theta_dot)];
        for k in 1..=2000 {
            if k == 800 {
                s.theta_cmd = 0.1;
            }
            let r = step_joint_with(&s, &spec, 0.03, 0.0, &JointLimits::motor(), dt).unwrap();
            work += r.work;
            samples.push((k as f64 * dt, r.torque * r.state.theta_dot));
            s = r.state;
        }
        let trap: f64 = samples.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * dt).sum();
        assert!((work - trap).abs() <= 0.01 * work.abs().max(trap.abs()), "{work} vs {trap}");
    }
}
