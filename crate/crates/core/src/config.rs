//! Run configuration: one TOML file holding the robot, gait, controller, integrator and
//! output settings. Unknown keys are rejected in every section.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::{GaitAllocation, GaitParams, GaitPd, PdGains, TrackingMode};
use crate::model::{LinkSpec, RobotModel, State, BASE_DOF, DEFAULT_LINKS};
use crate::penalty::{simulate_penalty, PenaltyConfig};
use crate::stepper::{simulate, StepConfig};
use crate::trajectory::TrajectoryLog;

/// Uniform box-like module used when no explicit link list is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleSpec {
    /// kg
    pub mass: f64,
    /// m
    pub length: f64,
    /// m; the contact sphere radius is half of it
    pub height: f64,
}

impl Default for ModuleSpec {
    fn default() -> Self {
        Self {
            mass: 0.6,
            length: 0.15,
            height: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_links: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub module: Option<ModuleSpec>,
    /// Explicit per-link parameters, tail first. Excludes `n_links` and `module`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub links: Option<Vec<LinkSpec>>,
    /// m/s²
    pub gravity: [f64; 2],
}

impl Default for RobotSection {
    fn default() -> Self {
        Self {
            n_links: None,
            module: None,
            links: None,
            gravity: [0.0, -9.81],
        }
    }
}

impl RobotSection {
    pub fn build(&self) -> Result<RobotModel> {
        let links = match &self.links {
            Some(links) => {
                if self.n_links.is_some() || self.module.is_some() {
                    return Err(Error::Config(
                        "robot: give either `links` or `n_links`/`module`, not both".into(),
                    ));
                }
                links.clone()
            }
            None => {
                let m = self.module.unwrap_or_default();
                vec![
                    LinkSpec::module(m.mass, m.length, m.height);
                    self.n_links.unwrap_or(DEFAULT_LINKS)
                ]
            }
        };
        let model = RobotModel {
            links,
            gravity: self.gravity,
            wrench_link: None,
            wrench_offset: None,
        };
        model.validate().map_err(|e| section_error("robot", e))?;
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    #[default]
    Moreau,
    Penalty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TorqueMode {
    #[default]
    Pd,
    Allocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingKind {
    #[default]
    Constraint,
    Cost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocationSection {
    pub tracking: TrackingKind,
    /// Weight on the squared joint-velocity miss when `tracking = "cost"`.
    pub weight: f64,
}

impl Default for AllocationSection {
    fn default() -> Self {
        Self {
            tracking: TrackingKind::Constraint,
            weight: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    /// rad; joint angles start uniformly perturbed within ±this, drawn from the run seed
    pub joint_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub engine: Engine,
    pub mode: TorqueMode,
    /// s; defaults to the gait duration
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    /// `trajectory.csv` and `contacts.csv`
    Csv,
    /// `summary.json`
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub robot: RobotSection,
    pub gait: GaitParams,
    pub pd: PdGains,
    pub stepping: StepConfig,
    pub penalty: PenaltyConfig,
    pub allocation: AllocationSection,
    pub initial: InitialSection,
    pub run: RunSection,
    pub outputs: OutputSection,
}

fn section_error(section: &str, e: Error) -> Error {
    match e {
        Error::InvalidInput(msg) | Error::Config(msg) => Error::Config(format!("{section}: {msg}")),
        other => other,
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a file. Unreadable files are I/O errors; malformed or
    /// invalid contents are config errors.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| section_error(&path.display().to_string(), e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.robot.build()?;
        self.gait.validate().map_err(|e| section_error("gait", e))?;
        self.pd.validate().map_err(|e| section_error("pd", e))?;
        self.stepping
            .validate()
            .map_err(|e| section_error("stepping", e))?;
        self.penalty
            .validate()
            .map_err(|e| section_error("penalty", e))?;
        if !(self.allocation.weight >= 0.0 && self.allocation.weight.is_finite()) {
            return Err(Error::Config(
                "allocation: weight must be finite and >= 0".into(),
            ));
        }
        if !(self.initial.joint_noise >= 0.0 && self.initial.joint_noise.is_finite()) {
            return Err(Error::Config(
                "initial: joint_noise must be finite and >= 0".into(),
            ));
        }
        if let Some(h) = self.run.horizon {
            if !(h >= 0.0 && h.is_finite()) {
                return Err(Error::Config("run: horizon must be finite and >= 0".into()));
            }
        }
        if self.outputs.formats.is_empty() {
            return Err(Error::Config("outputs: formats must not be empty".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<RobotModel> {
        self.robot.build()
    }

    pub fn horizon(&self) -> f64 {
        self.run.horizon.unwrap_or(self.gait.duration)
    }

    pub fn tracking_mode(&self) -> TrackingMode {
        match self.allocation.tracking {
            TrackingKind::Constraint => TrackingMode::Constraint,
            TrackingKind::Cost => TrackingMode::Cost {
                weight: self.allocation.weight,
            },
        }
    }

    /// Resting straight chain with joint angles perturbed uniformly within
    /// `±initial.joint_noise`, drawn from `run.seed`. The base is raised so the lowest
    /// contact sphere just touches the ground.
    pub fn initial_state(&self, model: &RobotModel) -> State {
        let mut state = model.resting_state();
        let noise = self.initial.joint_noise;
        if noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.run.seed);
            for j in 0..model.n_joints() {
                state.q[BASE_DOF + j] = rng.random_range(-noise..=noise);
            }
            let lowest = model
                .sphere_gaps(&state.q)
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            state.q[1] -= lowest;
        }
        state
    }

    /// Runs the configured engine and torque mode from `initial`.
    pub fn simulate(&self, model: &RobotModel, initial: &State) -> Result<TrajectoryLog> {
        let horizon = self.horizon();
        let mut pd = GaitPd {
            params: self.gait,
            gains: self.pd,
        };
        match (self.run.engine, self.run.mode) {
            (Engine::Moreau, TorqueMode::Pd) => {
                simulate(model, initial, &mut pd, horizon, &self.stepping)
            }
            (Engine::Moreau, TorqueMode::Allocation) => {
                let mut ctl = GaitAllocation {
                    params: self.gait,
                    gains: self.pd,
                    step: self.stepping.clone(),
                    mode: self.tracking_mode(),
                };
                simulate(model, initial, &mut ctl, horizon, &self.stepping)
            }
            (Engine::Penalty, TorqueMode::Pd) => {
                simulate_penalty(model, initial, &mut pd, horizon, &self.penalty)
            }
            (Engine::Penalty, TorqueMode::Allocation) => Err(Error::Config(
                "allocation mode needs the moreau engine".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.model().unwrap(), RobotModel::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "bogus = 1",
            "[gait]\namplitud = 0.3",
            "[stepping]\ndt = 0.001\nfoo = 2",
        ] {
            assert!(
                matches!(RunConfig::from_toml_str(text), Err(Error::Config(_))),
                "{text}"
            );
        }
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = RunConfig::from_toml_str("[gait]\namplitude = 3.0").unwrap_err();
        assert!(
            matches!(err, Error::Config(ref m) if m.starts_with("gait")),
            "{err}"
        );
    }

    #[test]
    fn links_and_module_are_exclusive() {
        let text = "[robot]\nn_links = 4\n[[robot.links]]\nmass = 1.0\nlength = 0.1\ninertia_about_com = 0.001\ncom_offset = 0.05\nsphere_radius = 0.02\nsphere_center_offset = 0.05\n";
        assert!(matches!(
            RunConfig::from_toml_str(text),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seeded_noise_is_reproducible_and_grounded() {
        let mut cfg = RunConfig::default();
        let model = cfg.model().unwrap();
        assert_eq!(cfg.initial_state(&model), model.resting_state());
        cfg.initial.joint_noise = 0.1;
        cfg.run.seed = 7;
        let a = cfg.initial_state(&model);
        assert_eq!(a, cfg.initial_state(&model));
        assert!(a.q.rows(BASE_DOF, model.n_joints()).amax() <= 0.1);
        let lowest = model
            .sphere_gaps(&a.q)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        assert!(lowest.abs() < 1e-12);
        cfg.run.seed = 8;
        assert_ne!(a, cfg.initial_state(&model));
    }

    #[test]
    fn shipped_default_file_matches_builtin_defaults() {
        let text = include_str!("../../../configs/default.toml");
        let cfg = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.model().unwrap(), RobotModel::default());
        let mut builtin = RunConfig::default();
        builtin.robot = cfg.robot.clone();
        assert_eq!(cfg, builtin);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.run.engine = Engine::Penalty;
        cfg.run.horizon = Some(2.0);
        cfg.gait.amplitude = 0.3;
        let back = RunConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
