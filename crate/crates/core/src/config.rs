//! Run configuration in TOML.
//!
//! Every field has a default, so a config file only lists what it changes.
//! `RunConfig::default().to_toml()` is the documented schema. Seeds must fit
//! in a signed 64-bit integer to round-trip through TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::designopt::{GridSpec, ScoreWeights, SimsConfig};
use crate::error::{Error, Result};
use crate::flight::{FlightConfig, Mode};
use crate::jump::JumpConfig;
use crate::ppo::PpoConfig;
use crate::primitives::ReorientationConfig;
use crate::rlenv::{EnvConfig, NoiseSpec, RewardParams, SpawnSpec};
use crate::robot::{DesignParams, MotorSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub mode: Mode,
    /// Observation noise and gain randomization during training.
    pub noise_enabled: bool,
    pub design: DesignParams,
    pub flight: FlightConfig,
    pub motor_five_bar: MotorSpec,
    pub motor_hip: MotorSpec,
    pub reward: RewardParams,
    pub noise: NoiseSpec,
    pub ppo: PpoConfig,
    pub jump: JumpConfig,
    /// Forward-jump lean, degrees.
    pub lean_deg: f64,
    pub reorientation: ReorientationConfig,
    pub grid: GridSpec,
    pub weights: ScoreWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            mode: Mode::FreeFloat,
            noise_enabled: true,
            design: DesignParams::design(),
            flight: FlightConfig::default(),
            motor_five_bar: MotorSpec::ak70_10(),
            motor_hip: MotorSpec::ak80_9(),
            reward: RewardParams::default(),
            noise: NoiseSpec::default(),
            ppo: PpoConfig::default(),
            jump: JumpConfig::default(),
            lean_deg: 45.0,
            reorientation: ReorientationConfig::default(),
            grid: GridSpec::default(),
            weights: ScoreWeights::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Writes the resolved config as `config.toml` into `dir`.
    pub fn save_resolved(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config("seed must be below 2^63".into()));
        }
        self.design.validate()?;
        self.env().validate()?;
        self.ppo.validate()?;
        self.reorientation.flight.validate()
    }

    pub fn env(&self) -> EnvConfig {
        EnvConfig {
            design: self.design,
            flight: self.flight,
            mode: self.mode,
            reward: self.reward,
            noise: self.noise_enabled.then_some(self.noise),
            spawn: SpawnSpec::default(),
            motor_five_bar: self.motor_five_bar,
            motor_hip: self.motor_hip,
        }
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig { seed: self.seed, ..self.ppo }
    }

    pub fn sims(&self) -> SimsConfig {
        SimsConfig {
            jump: JumpConfig { seed: self.seed, ..self.jump },
            reorientation: self.reorientation,
            lean: self.lean_deg.to_radians(),
            seed: self.seed,
        }
    }
}

/// A grid file is a bare `GridSpec` table, or a run config whose `grid` table is used.
pub fn load_grid(path: &Path) -> Result<GridSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let table = match v.get("grid") {
        Some(toml::Value::Table(t)) => t.clone(),
        _ => v,
    };
    table.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))
}

/// A design file is a bare `DesignParams` table, or a run config whose `design` table is used.
pub fn load_design(path: &Path) -> Result<DesignParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let table = match v.get("design") {
        Some(toml::Value::Table(t)) => t.clone(),
        _ => v,
    };
    let d: DesignParams =
        table.try_into().map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
    d.validate()?;
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designopt::Dim;
    use crate::flight::Axis;

    #[test]
    fn defaults_roundtrip() {
        let c = RunConfig::default();
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        assert!(text.contains("[ppo]"));
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = RunConfig::from_toml(
            "seed = 7\n[ppo]\ntotal_steps = 1000\n[mode]\nkind = \"rod\"\naxis = \"roll\"\n[design.leg]\nspring_k = 700.0\n",
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.ppo.total_steps, 1000);
        assert_eq!(c.ppo.widths, [512, 256, 128]);
        assert_eq!(c.mode, Mode::Rod(Axis::Roll));
        assert_eq!(c.design.leg.spring_k, 700.0);
        assert_eq!(c.design.leg.l1, 0.175);
        assert_eq!(c.ppo().seed, 7);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml("[flight]\nphysics_hz = 200.0\n").is_err());
        assert!(RunConfig::from_toml("[reward]\nnu_q = -1.0\n").is_err());
        assert!(RunConfig::from_toml("bogus = [").is_err());
    }

    #[test]
    fn grid_and_design_files() {
        let dir = tempfile::tempdir().unwrap();
        let g = dir.path().join("g.toml");
        std::fs::write(&g, "l_body = { min = 0.4, max = 1.0, steps = 3 }\nw_body_f = 0.3\nw_body_b = [0.2, 0.4]\n").unwrap();
        let spec = load_grid(&g).unwrap();
        assert_eq!(spec.l_body, Dim::Range { min: 0.4, max: 1.0, steps: 3 });
        assert_eq!(spec.w_body_f, Dim::Fixed(0.3));
        assert_eq!(spec.w_body_b, Dim::Values(vec![0.2, 0.4]));
        let d = dir.path().join("d.toml");
        std::fs::write(&d, RunConfig::default().to_toml().unwrap()).unwrap();
        assert_eq!(load_design(&d).unwrap(), DesignParams::design());
    }
}
