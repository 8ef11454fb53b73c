//! Vertical-undulation joint trajectories and the controllers that follow them.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::contact::Tracking;
use crate::error::{Error, Result};
use crate::model::{RobotModel, State, BASE_DOF};
use crate::stepper::{step, Command, Controller, StepConfig};

/// Traveling wave `θ_j(t) = ramp(t)·A·sin(ω t + j φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitParams {
    /// rad
    pub amplitude: f64,
    /// rad/s
    pub temporal_frequency: f64,
    /// rad, added per joint index
    pub phase_offset_per_joint: f64,
    /// s
    pub duration: f64,
    /// s; the amplitude rises smoothly from 0 to A over this interval
    pub ramp_time: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            amplitude: 0.5,
            temporal_frequency: 3.0 * std::f64::consts::PI,
            phase_offset_per_joint: -0.8,
            duration: 10.0,
            ramp_time: 1.0,
        }
    }
}

impl GaitParams {
    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.amplitude,
            self.temporal_frequency,
            self.phase_offset_per_joint,
            self.duration,
            self.ramp_time,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !all_finite {
            return Err(Error::invalid("gait parameters must be finite"));
        }
        if !(self.amplitude > 0.0 && self.amplitude < std::f64::consts::FRAC_PI_2) {
            return Err(Error::invalid("gait amplitude must lie in (0, π/2)"));
        }
        if self.temporal_frequency <= 0.0 {
            return Err(Error::invalid("gait frequency must be > 0"));
        }
        if self.duration <= 0.0 {
            return Err(Error::invalid("gait duration must be > 0"));
        }
        if self.ramp_time < 0.0 {
            return Err(Error::invalid("gait ramp time must be >= 0"));
        }
        Ok(())
    }

    /// Amplitude envelope and its time derivative: `3s² − 2s³` with `s = t / ramp_time`.
    fn ramp(&self, t: f64) -> (f64, f64) {
        if self.ramp_time <= 0.0 || t >= self.ramp_time {
            return (1.0, 0.0);
        }
        if t <= 0.0 {
            return (0.0, 0.0);
        }
        let s = t / self.ramp_time;
        (
            s * s * (3.0 - 2.0 * s),
            6.0 * s * (1.0 - s) / self.ramp_time,
        )
    }
}

/// Desired joint angles and rates for `n_joints` joints at time `t`.
pub fn desired_joint_state(
    params: &GaitParams,
    n_joints: usize,
    t: f64,
) -> (DVector<f64>, DVector<f64>) {
    let (r, dr) = params.ramp(t);
    let a = params.amplitude;
    let w = params.temporal_frequency;
    let mut theta = DVector::zeros(n_joints);
    let mut rate = DVector::zeros(n_joints);
    for j in 0..n_joints {
        let phase = w * t + j as f64 * params.phase_offset_per_joint;
        theta[j] = r * a * phase.sin();
        rate[j] = dr * a * phase.sin() + r * a * w * phase.cos();
    }
    (theta, rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdGains {
    /// N·m/rad
    pub kp: f64,
    /// N·m·s/rad
    pub kd: f64,
    /// N·m
    pub torque_limit: f64,
}

impl Default for PdGains {
    fn default() -> Self {
        Self {
            kp: 25.0,
            kd: 0.5,
            torque_limit: 10.0,
        }
    }
}

impl PdGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp >= 0.0 && self.kp.is_finite() && self.kd >= 0.0 && self.kd.is_finite()) {
            return Err(Error::invalid("PD gains must be finite and >= 0"));
        }
        if !(self.torque_limit > 0.0) {
            return Err(Error::invalid("PD torque limit must be > 0"));
        }
        Ok(())
    }
}

/// `clamp(kp (θ_des − θ) + kd (θ̇_des − θ̇), ±limit)` on the joint coordinates of `measured`.
pub fn pd_torques(
    desired: &(DVector<f64>, DVector<f64>),
    measured: &State,
    gains: &PdGains,
) -> Result<DVector<f64>> {
    let (theta, rate) = desired;
    let nj = theta.len();
    if rate.len() != nj || measured.q.len() != nj + BASE_DOF || measured.v.len() != nj + BASE_DOF {
        return Err(Error::invalid(
            "desired and measured joint dimensions differ",
        ));
    }
    let limit = gains.torque_limit;
    Ok(DVector::from_fn(nj, |j, _| {
        let e = theta[j] - measured.q[BASE_DOF + j];
        let de = rate[j] - measured.v[BASE_DOF + j];
        (gains.kp * e + gains.kd * de).clamp(-limit, limit)
    }))
}

/// Follows the gait with PD torques.
#[derive(Debug, Clone)]
pub struct GaitPd {
    pub params: GaitParams,
    pub gains: PdGains,
}

impl Controller for GaitPd {
    fn command(&mut self, model: &RobotModel, state: &State) -> Result<Command> {
        let desired = desired_joint_state(&self.params, model.n_joints(), state.t);
        pd_torques(&desired, state, &self.gains).map(Command::Torques)
    }
}

/// How the allocation controller imposes the gait.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrackingMode {
    Constraint,
    Cost { weight: f64 },
}

/// Follows the gait through the minimum-effort allocator.
///
/// The joint-velocity target for a step is the velocity the saturated PD law would reach
/// from the current state. Exact tracking is therefore always achievable within the
/// torque bounds, and the allocator returns the least-effort torques producing that motion.
#[derive(Debug, Clone)]
pub struct GaitAllocation {
    pub params: GaitParams,
    pub gains: PdGains,
    /// Must match the configuration of the simulation that consumes the commands.
    pub step: StepConfig,
    pub mode: TrackingMode,
}

impl GaitAllocation {
    /// Joint-velocity target for the step from `state`, and the PD torques that reach it.
    pub fn target(&self, model: &RobotModel, state: &State) -> Result<(Vec<f64>, DVector<f64>)> {
        let desired = desired_joint_state(&self.params, model.n_joints(), state.t);
        let u = pd_torques(&desired, state, &self.gains)?;
        let predicted = step(model, state, &u, &DVector::zeros(3), &self.step)?;
        Ok((predicted.state.v.as_slice()[BASE_DOF..].to_vec(), u))
    }
}

impl Controller for GaitAllocation {
    fn command(&mut self, model: &RobotModel, state: &State) -> Result<Command> {
        let (target, u_pd) = self.target(model, state)?;
        let tracking = match self.mode {
            TrackingMode::Constraint => Tracking::Constraint { target },
            TrackingMode::Cost { weight } => Tracking::Cost { target, weight },
        };
        Ok(Command::Allocate {
            tracking,
            guess: Some(u_pd),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn starts_straight() {
        let (theta, rate) = desired_joint_state(&GaitParams::default(), 11, 0.0);
        assert_eq!(theta.amax(), 0.0);
        assert_eq!(rate.amax(), 0.0);
    }

    #[test]
    fn zero_phase_gives_identical_joints() {
        let p = GaitParams {
            phase_offset_per_joint: 0.0,
            ..Default::default()
        };
        let (theta, rate) = desired_joint_state(&p, 5, 1.7);
        for j in 1..5 {
            assert_eq!(theta[j], theta[0]);
            assert_eq!(rate[j], rate[0]);
        }
    }

    #[test]
    fn pd_zero_error_and_saturation() {
        let model = RobotModel::default();
        let state = model.resting_state();
        let nj = model.n_joints();
        let gains = PdGains::default();
        let zero = (DVector::zeros(nj), DVector::zeros(nj));
        assert_eq!(pd_torques(&zero, &state, &gains).unwrap().amax(), 0.0);
        let big = (
            DVector::from_element(nj, 2.0),
            DVector::from_element(nj, -1000.0),
        );
        let u = pd_torques(&big, &state, &gains).unwrap();
        assert!(u.iter().all(|x| *x == -10.0));
        let big = (DVector::from_element(nj, 2.0), DVector::zeros(nj));
        assert!(pd_torques(&big, &state, &gains)
            .unwrap()
            .iter()
            .all(|x| *x == 10.0));
        let off = PdGains {
            kp: 0.0,
            kd: 0.0,
            torque_limit: 10.0,
        };
        assert_eq!(pd_torques(&big, &state, &off).unwrap().amax(), 0.0);
    }

    #[test]
    fn rejects_out_of_range_amplitude() {
        let p = GaitParams {
            amplitude: 2.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
