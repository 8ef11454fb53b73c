//! Compliant-contact reference engine: spring-damper normal force with regularized
//! stick-slip friction, integrated with semi-implicit Euler at a small fixed step.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::model::{ContactPoint, RobotModel, State};
use crate::stepper::{contact_thresholds, sample, step_count, Command, Controller};
use crate::trajectory::TrajectoryLog;

/// Largest integration step accepted for the stiff penalty forces.
pub const MAX_PENALTY_DT: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    /// N/m
    pub stiffness: f64,
    /// N·s/m
    pub damping: f64,
    pub mu_static: f64,
    pub mu_dynamic: f64,
    /// m/s; below this slip speed friction ramps linearly from zero
    pub stick_velocity_threshold: f64,
    /// s
    pub dt: f64,
    /// Joint torques are saturated to `±torque_limit`.
    pub torque_limit: Option<f64>,
    /// s between recorded samples
    pub log_interval: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            stiffness: 1e4,
            damping: 1e3,
            mu_static: 0.5,
            mu_dynamic: 0.5,
            stick_velocity_threshold: 1e-3,
            dt: 1e-4,
            torque_limit: Some(10.0),
            log_interval: 1e-3,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stiffness > 0.0 && self.stiffness.is_finite()) {
            return Err(Error::invalid("penalty stiffness must be > 0"));
        }
        if !(self.damping >= 0.0 && self.damping.is_finite()) {
            return Err(Error::invalid("penalty damping must be >= 0"));
        }
        if !(self.mu_dynamic >= 0.0
            && self.mu_static >= self.mu_dynamic
            && self.mu_static.is_finite())
        {
            return Err(Error::invalid("need mu_static >= mu_dynamic >= 0"));
        }
        if !(self.stick_velocity_threshold > 0.0) {
            return Err(Error::invalid("stick velocity threshold must be > 0"));
        }
        if !(self.dt > 0.0 && self.dt <= MAX_PENALTY_DT) {
            return Err(Error::invalid(format!(
                "penalty dt must lie in (0, {MAX_PENALTY_DT}]"
            )));
        }
        if let Some(l) = self.torque_limit {
            if !(l > 0.0) {
                return Err(Error::invalid("torque limit must be > 0"));
            }
        }
        if !(self.log_interval >= self.dt) {
            return Err(Error::invalid("log interval must be >= dt"));
        }
        Ok(())
    }

    /// Integration steps per recorded sample.
    pub fn stride(&self) -> usize {
        ((self.log_interval / self.dt).round() as usize).max(1)
    }
}

/// Normal and tangential contact force, N.
pub fn penalty_force(contact: &ContactPoint, cfg: &PenaltyConfig) -> (f64, f64) {
    if contact.gap >= 0.0 {
        return (0.0, 0.0);
    }
    let f_n = (-cfg.stiffness * contact.gap - cfg.damping * contact.normal_velocity).max(0.0);
    let vt = contact.tangent_velocity;
    let f_t = if vt.abs() < cfg.stick_velocity_threshold {
        -cfg.mu_static * f_n * vt / cfg.stick_velocity_threshold
    } else {
        -cfg.mu_dynamic * f_n * vt.signum()
    };
    (f_n, f_t)
}

/// Runs a controller against the penalty contact model.
pub fn simulate_penalty<C: Controller + ?Sized>(
    model: &RobotModel,
    initial: &State,
    controller: &mut C,
    horizon: f64,
    cfg: &PenaltyConfig,
) -> Result<TrajectoryLog> {
    model.validate_body()?;
    cfg.validate()?;
    model.check_state(initial)?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon must be >= 0 and finite"));
    }
    let dt = cfg.dt;
    let stride = cfg.stride();
    let n_steps = step_count(horizon, dt);
    let nl = model.n_links();
    let nj = model.n_joints();
    let mut log = TrajectoryLog::new("penalty", dt, stride, model);
    log.samples.push(sample(
        model,
        initial,
        &DVector::zeros(nj),
        &vec![[0.0; 2]; nl],
    ));
    let thresholds = contact_thresholds(model);
    let zero_w = DVector::zeros(3);
    let mut state = initial.clone();
    state.t = 0.0;

    for k in 0..n_steps {
        let wrap = |e: Error| Error::Step {
            index: k,
            source: Box::new(e),
        };
        let u = match controller.command(model, &state).map_err(wrap)? {
            Command::Torques(u) => u,
            Command::Allocate { .. } => {
                return Err(wrap(Error::invalid(
                    "torque allocation needs the time-stepping engine",
                )))
            }
        };
        if u.len() != nj || !u.iter().all(|x| x.is_finite()) {
            return Err(wrap(Error::invalid(
                "controller returned a malformed torque",
            )));
        }
        let u = match cfg.torque_limit {
            Some(l) => u.map(|x| x.clamp(-l, l)),
            None => u,
        };
        let m = model.mass_matrix_unchecked(&state.q);
        let factor = SpdFactor::new(&m).map_err(wrap)?;
        let mut f = model.generalized_force_unchecked(&state.q, &u, &zero_w)
            - model.bias_forces_unchecked(&state.q, &state.v);
        let mut forces = vec![[0.0; 2]; nl];
        for c in model.contact_candidates_unchecked(&state.q, &state.v) {
            let (f_n, f_t) = penalty_force(&c, cfg);
            if f_n == 0.0 {
                continue;
            }
            for (i, fi) in f.iter_mut().enumerate() {
                *fi += c.jacobian_normal[i] * f_n + c.jacobian_tangent[i] * f_t;
            }
            forces[c.link_index] = [f_n, f_t];
        }
        for (i, fc) in forces.iter().enumerate() {
            log.contact_stats[i].observe(fc[0], thresholds[i], dt);
        }
        let v = &state.v + factor.solve(&f) * dt;
        let q = &state.q + &v * dt;
        state = State::new(q, v, (k + 1) as f64 * dt);
        if !state.is_finite() {
            return Err(wrap(Error::Numerical {
                message: "non-finite state in penalty integration".into(),
                condition_estimate: factor.condition_estimate,
            }));
        }
        if (k + 1) % stride == 0 || k + 1 == n_steps {
            log.samples.push(sample(model, &state, &u, &forces));
        }
    }
    Ok(log)
}
