//! Moreau-Jean time stepping: one impulse solve per step, semi-implicit position update.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::contact::{
    solve_allocation, solve_impulses_factored, AllocationProblem, AllocationSolution,
    ContactProblem, ImpulseSolution, SolveStatus, SolverTolerances, Tracking,
};
use crate::error::{Error, NonConvergence, Result};
use crate::linalg::SpdFactor;
use crate::model::{ContactSet, RobotModel, State};
use crate::trajectory::{Sample, StepRecord, TrajectoryLog, CONTACT_THRESHOLD_FRACTION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    pub dt: f64,
    pub mu: f64,
    pub restitution: f64,
    /// A sphere joins the contact problem when `min(g, g + Δt·γ̃) ≤ activation_gap`.
    pub activation_gap: f64,
    /// Joint torques are saturated to `±torque_limit` before integration.
    pub torque_limit: Option<f64>,
    pub tolerances: SolverTolerances,
    /// On non-convergence, retry once as two half steps before giving up.
    pub retry_on_failure: bool,
    pub warm_start: bool,
    /// Trial solves per step used to estimate the second-order gap change along the
    /// post-step velocity; 0 keeps the purely linear gap update.
    pub gap_correction: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            mu: 0.5,
            restitution: 0.0,
            activation_gap: 1e-3,
            torque_limit: Some(10.0),
            tolerances: SolverTolerances::default(),
            retry_on_failure: true,
            warm_start: true,
            gap_correction: 1,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive and finite"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("mu must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return Err(Error::invalid("restitution must be in [0, 1]"));
        }
        if !(self.activation_gap >= 0.0) {
            return Err(Error::invalid("activation gap must be >= 0"));
        }
        if let Some(l) = self.torque_limit {
            if !(l > 0.0) {
                return Err(Error::invalid("torque limit must be > 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: State,
    /// Torque actually applied, after saturation.
    pub torque: DVector<f64>,
    /// Contacts that entered the impulse problem (last substep when retried).
    pub contacts: ContactSet,
    pub impulses: ImpulseSolution,
    /// `[λ_n, λ_t]` per link, summed over substeps, N·s.
    pub link_impulses: Vec<[f64; 2]>,
    pub free_velocity: DVector<f64>,
    /// Base-x row of `M (v⁺ − ṽ)`, summed over substeps.
    pub contact_momentum_x: f64,
    /// Kinetic energy change caused by the contact impulses, summed over substeps.
    pub contact_energy: f64,
    pub substeps: usize,
}

/// `ṽ = v + Δt M⁻¹ (S u + W w − h)`.
pub fn free_velocity(
    model: &RobotModel,
    state: &State,
    u: &DVector<f64>,
    w: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    model.check_state(state)?;
    let m = model.mass_matrix(&state.q)?;
    let factor = SpdFactor::new(&m)?;
    let f = model.actuation_and_wrench(&state.q, u, w)?;
    let h = model.bias_forces(&state.q, &state.v)?;
    Ok(&state.v + factor.solve(&(f - h)) * dt)
}

/// Contact-free right-hand side `M⁻¹ (S u + W w − h)`.
fn acceleration(
    model: &RobotModel,
    q: &DVector<f64>,
    v: &DVector<f64>,
    f: &DVector<f64>,
) -> Result<DVector<f64>> {
    let m = model.mass_matrix_unchecked(q);
    let factor = SpdFactor::new(&m)?;
    Ok(factor.solve(&(f - model.bias_forces_unchecked(q, v))))
}

/// Classical fourth-order Runge-Kutta step of the contact-free dynamics, used as a
/// reference integrator.
pub fn rk4_step(
    model: &RobotModel,
    state: &State,
    u: &DVector<f64>,
    w: &DVector<f64>,
    dt: f64,
) -> Result<State> {
    model.check_state(state)?;
    let f = model.actuation_and_wrench(&state.q, u, w)?;
    let force = |q: &DVector<f64>| -> DVector<f64> {
        if w.iter().any(|x| *x != 0.0) {
            model.generalized_force_unchecked(q, u, w)
        } else {
            f.clone()
        }
    };
    let (q0, v0) = (&state.q, &state.v);
    let k1q = v0.clone();
    let k1v = acceleration(model, q0, v0, &force(q0))?;
    let q2 = q0 + &k1q * (dt / 2.0);
    let v2 = v0 + &k1v * (dt / 2.0);
    let k2v = acceleration(model, &q2, &v2, &force(&q2))?;
    let q3 = q0 + &v2 * (dt / 2.0);
    let v3 = v0 + &k2v * (dt / 2.0);
    let k3v = acceleration(model, &q3, &v3, &force(&q3))?;
    let q4 = q0 + &v3 * dt;
    let v4 = v0 + &k3v * dt;
    let k4v = acceleration(model, &q4, &v4, &force(&q4))?;
    let q = q0 + (k1q + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
    let v = v0 + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
    Ok(State::new(q, v, state.t + dt))
}

/// A step's contact problem before it is solved.
struct Prepared {
    problem: ContactProblem,
    factor: SpdFactor,
    torque: DVector<f64>,
    /// Free velocity without actuation, used by the allocator.
    passive_free_velocity: DVector<f64>,
}

/// Steps a model while carrying impulse warm starts between calls.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    pub model: &'a RobotModel,
    pub config: StepConfig,
    warm: Vec<Option<[f64; 2]>>,
    warm_torque: Option<DVector<f64>>,
}

impl<'a> Stepper<'a> {
    pub fn new(model: &'a RobotModel, config: StepConfig) -> Result<Self> {
        model.validate_body()?;
        config.validate()?;
        Ok(Self {
            model,
            config,
            warm: vec![None; model.n_links()],
            warm_torque: None,
        })
    }

    fn saturate(&self, u: &DVector<f64>) -> DVector<f64> {
        match self.config.torque_limit {
            Some(l) => u.map(|x| x.clamp(-l, l)),
            None => u.clone(),
        }
    }

    fn prepare(
        &self,
        state: &State,
        u: &DVector<f64>,
        w: &DVector<f64>,
        dt: f64,
        active: Option<&[usize]>,
    ) -> Result<Prepared> {
        let model = self.model;
        model.check_state(state)?;
        if u.len() != model.n_joints() || w.len() != 3 {
            return Err(Error::invalid(format!(
                "u must have {} entries and w 3, got {} and {}",
                model.n_joints(),
                u.len(),
                w.len()
            )));
        }
        if !u.iter().chain(w.iter()).all(|x| x.is_finite()) {
            return Err(Error::invalid("non-finite torque or wrench"));
        }
        let torque = self.saturate(u);
        let m = model.mass_matrix_unchecked(&state.q);
        let factor = SpdFactor::new(&m)?;
        let h = model.bias_forces_unchecked(&state.q, &state.v);
        let zero_u = DVector::zeros(model.n_joints());
        let passive = model.generalized_force_unchecked(&state.q, &zero_u, w);
        let passive_free_velocity = &state.v + factor.solve(&(passive - &h)) * dt;
        let actuated = model.generalized_force_unchecked(&state.q, &torque, w);
        let free = &state.v + factor.solve(&(actuated - &h)) * dt;

        // Candidates carry the pre-step normal velocity (the restitution reference).
        // Activation looks ahead with the unactuated free velocity, so the contact set
        // does not depend on the torques being evaluated.
        let candidates = model.contact_candidates_unchecked(&state.q, &state.v);
        let contacts: ContactSet = candidates
            .into_iter()
            .filter(|c| match active {
                Some(set) => set.contains(&c.link_index),
                None => {
                    let predicted: f64 = c
                        .jacobian_normal
                        .iter()
                        .zip(passive_free_velocity.iter())
                        .map(|(a, b)| a * b)
                        .sum();
                    c.gap.min(c.gap + dt * predicted) <= self.config.activation_gap
                }
            })
            .collect();
        let warm_start = if self.config.warm_start {
            let w: Vec<[f64; 2]> = contacts
                .iter()
                .map(|c| self.warm[c.link_index].unwrap_or([0.0, 0.0]))
                .collect();
            w.iter().any(|x| x[0] != 0.0).then_some(w)
        } else {
            None
        };
        let n = contacts.len();
        let problem = ContactProblem {
            schema_version: crate::contact::PROBLEM_SCHEMA_VERSION,
            mass_matrix: m,
            free_velocity: free,
            contacts,
            dt,
            mu: vec![self.config.mu; n],
            restitution: vec![self.config.restitution; n],
            warm_start,
        };
        Ok(Prepared {
            problem,
            factor,
            torque,
            passive_free_velocity,
        })
    }

    fn finish_step(
        &mut self,
        state: &State,
        prep: Prepared,
        sol: ImpulseSolution,
    ) -> Result<StepResult> {
        let dt = prep.problem.dt;
        let m = &prep.problem.mass_matrix;
        let dv = &sol.v_next - &prep.problem.free_velocity;
        let contact_momentum_x = (m.row(0) * &dv)[0];
        let ke = |v: &DVector<f64>| 0.5 * v.dot(&(m * v));
        let contact_energy = ke(&sol.v_next) - ke(&prep.problem.free_velocity);
        let q = &state.q + &sol.v_next * dt;
        let next = State::new(q, sol.v_next.clone(), state.t + dt);
        if !next.is_finite() {
            return Err(Error::Numerical {
                message: "non-finite state after step".into(),
                condition_estimate: prep.factor.condition_estimate,
            });
        }
        let mut link_impulses = vec![[0.0; 2]; self.model.n_links()];
        self.warm.iter_mut().for_each(|w| *w = None);
        for (k, c) in prep.problem.contacts.iter().enumerate() {
            link_impulses[c.link_index] = [sol.f_n[k], sol.f_t[k]];
            if sol.f_n[k] > 0.0 {
                self.warm[c.link_index] = Some([sol.f_n[k], sol.f_t[k]]);
            }
        }
        Ok(StepResult {
            state: next,
            torque: prep.torque,
            contacts: prep.problem.contacts,
            impulses: sol,
            link_impulses,
            free_velocity: prep.problem.free_velocity,
            contact_momentum_x,
            contact_energy,
            substeps: 1,
        })
    }

    /// Sets each contact's `gap_curvature` to the part of the gap change along `v` that
    /// the linear update misses: `g(q + Δt v) − g(q) − Δt J_n v`.
    fn set_gap_curvature(&self, prep: &mut Prepared, q: &DVector<f64>, v: &DVector<f64>) {
        let dt = prep.problem.dt;
        let ahead = self.model.sphere_gaps(&(q + v * dt));
        for c in prep.problem.contacts.iter_mut() {
            let linear: f64 = c
                .jacobian_normal
                .iter()
                .zip(v.iter())
                .map(|(a, b)| a * b)
                .sum();
            c.gap_curvature = ahead[c.link_index] - c.gap - dt * linear;
        }
    }

    /// Solves the step's contact problem after refining the gap curvature with trial solves.
    fn solve_corrected(&self, prep: &mut Prepared, q: &DVector<f64>) -> Result<ImpulseSolution> {
        if !prep.problem.contacts.is_empty() {
            for _ in 0..self.config.gap_correction {
                let trial = self.solve(prep)?;
                self.set_gap_curvature(prep, q, &trial.v_next);
                if self.config.warm_start {
                    prep.problem.warm_start = Some(
                        trial
                            .f_n
                            .iter()
                            .zip(&trial.f_t)
                            .map(|(n, t)| [*n, *t])
                            .collect(),
                    );
                }
            }
        }
        self.solve(prep)
    }

    fn solve(&self, prep: &Prepared) -> Result<ImpulseSolution> {
        let sol = solve_impulses_factored(&prep.problem, &prep.factor, &self.config.tolerances)?;
        if sol.status != SolveStatus::Converged {
            return Err(Error::NonConvergence(Box::new(NonConvergence {
                problem: prep.problem.clone(),
                last: sol,
            })));
        }
        Ok(sol)
    }

    /// One step. With `curvature`, the contact set is `active` and the gap curvature is
    /// taken as given instead of being estimated.
    fn advance(
        &mut self,
        state: &State,
        u: &DVector<f64>,
        w: &DVector<f64>,
        active: Option<&[usize]>,
        curvature: Option<&[f64]>,
    ) -> Result<StepResult> {
        let dt = self.config.dt;
        let mut prep = self.prepare(state, u, w, dt, active)?;
        let solved = match curvature {
            Some(k) => {
                for (c, k) in prep.problem.contacts.iter_mut().zip(k) {
                    c.gap_curvature = *k;
                }
                self.solve(&prep)
            }
            None => self.solve_corrected(&mut prep, &state.q),
        };
        match solved {
            Ok(sol) => self.finish_step(state, prep, sol),
            Err(err @ Error::NonConvergence(_)) if self.config.retry_on_failure => {
                self.retry_halved(state, u, w).map_err(|_| err)
            }
            Err(err) => Err(err),
        }
    }

    /// Two half steps, each without further retries.
    fn retry_halved(
        &mut self,
        state: &State,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<StepResult> {
        let half = self.config.dt / 2.0;
        let mut current = state.clone();
        let mut total: Option<StepResult> = None;
        for _ in 0..2 {
            let mut prep = self.prepare(&current, u, w, half, None)?;
            let sol = self.solve_corrected(&mut prep, &current.q)?;
            let mut r = self.finish_step(&current, prep, sol)?;
            current = r.state.clone();
            if let Some(prev) = total {
                for (a, b) in r.link_impulses.iter_mut().zip(&prev.link_impulses) {
                    a[0] += b[0];
                    a[1] += b[1];
                }
                r.contact_momentum_x += prev.contact_momentum_x;
                r.contact_energy += prev.contact_energy;
                r.substeps += prev.substeps;
            }
            total = Some(r);
        }
        let mut r = total.unwrap();
        r.state.t = state.t + self.config.dt;
        Ok(r)
    }

    pub fn step(
        &mut self,
        state: &State,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<StepResult> {
        self.advance(state, u, w, None, None)
    }

    /// Chooses torques with the minimum-effort allocator, then steps the impulse solver
    /// with them over the same contact set. `guess` adds candidate torques to the
    /// allocator's mode search. Returns the step, the allocation, and the round-trip
    /// velocity mismatch between the two.
    pub fn step_allocated(
        &mut self,
        state: &State,
        tracking: &Tracking,
        guess: Option<&DVector<f64>>,
        w: &DVector<f64>,
    ) -> Result<(StepResult, AllocationSolution, f64)> {
        let zero = DVector::zeros(self.model.n_joints());
        let dt = self.config.dt;
        let prep = self.prepare(state, &zero, w, dt, None)?;
        let mut contact = prep.problem;
        contact.free_velocity = prep.passive_free_velocity;
        let active: Vec<usize> = contact.contacts.iter().map(|c| c.link_index).collect();
        // The gap curvature comes from the velocity the candidate torques produce and is
        // then held fixed, so the allocator and the impulse solver see the same problem.
        if self.config.gap_correction > 0 && !active.is_empty() {
            let trial_u = guess.or(self.warm_torque.as_ref()).unwrap_or(&zero);
            let mut trial = self.prepare(state, trial_u, w, dt, Some(&active))?;
            self.solve_corrected(&mut trial, &state.q)?;
            for (c, t) in contact.contacts.iter_mut().zip(&trial.problem.contacts) {
                c.gap_curvature = t.gap_curvature;
            }
        }
        let curvature: Vec<f64> = contact.contacts.iter().map(|c| c.gap_curvature).collect();
        let problem = AllocationProblem {
            contact,
            actuation: self.model.actuation_map(),
            torque_limit: self.config.torque_limit.unwrap_or(f64::MAX.sqrt()),
            torque_guesses: self.warm_torque.iter().chain(guess).cloned().collect(),
        };
        let alloc = solve_allocation(&problem, tracking, &self.config.tolerances)?;
        let u = DVector::from_column_slice(&alloc.u);
        self.warm_torque = Some(u.clone());
        let result = self.advance(state, &u, w, Some(&active), Some(&curvature))?;
        let roundtrip = result
            .state
            .v
            .iter()
            .zip(&alloc.v_next)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        Ok((result, alloc, roundtrip))
    }
}

/// One step without warm-start history.
pub fn step(
    model: &RobotModel,
    state: &State,
    u: &DVector<f64>,
    w: &DVector<f64>,
    config: &StepConfig,
) -> Result<StepResult> {
    Stepper::new(model, config.clone())?.step(state, u, w)
}

/// What a controller asks for at the start of a step.
#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Torques(DVector<f64>),
    /// Let the allocator choose torques, optionally seeding it with candidate torques.
    Allocate {
        tracking: Tracking,
        guess: Option<DVector<f64>>,
    },
}

pub trait Controller {
    fn command(&mut self, model: &RobotModel, state: &State) -> Result<Command>;
}

/// Zero torque.
#[derive(Debug, Clone, Copy, Default)]
pub struct Passive;

impl Controller for Passive {
    fn command(&mut self, model: &RobotModel, _state: &State) -> Result<Command> {
        Ok(Command::Torques(DVector::zeros(model.n_joints())))
    }
}

/// Open-loop torques as a function of time.
pub struct TorqueSchedule<F>(pub F);

impl<F: FnMut(f64) -> DVector<f64>> Controller for TorqueSchedule<F> {
    fn command(&mut self, _model: &RobotModel, state: &State) -> Result<Command> {
        Ok(Command::Torques((self.0)(state.t)))
    }
}

pub(crate) fn sample(
    model: &RobotModel,
    state: &State,
    u: &DVector<f64>,
    forces: &[[f64; 2]],
) -> Sample {
    let head = model.head_position(&state.q);
    Sample {
        t: state.t,
        q: state.q.iter().copied().collect(),
        v: state.v.iter().copied().collect(),
        u: u.iter().copied().collect(),
        f_n: forces.iter().map(|f| f[0]).collect(),
        f_t: forces.iter().map(|f| f[1]).collect(),
        gap: model.sphere_gaps(&state.q),
        energy: model.mechanical_energy(state),
        head: [head.x, head.y],
    }
}

pub(crate) fn contact_thresholds(model: &RobotModel) -> Vec<f64> {
    let g = model.gravity[0].hypot(model.gravity[1]);
    model
        .links
        .iter()
        .map(|l| CONTACT_THRESHOLD_FRACTION * l.mass * g)
        .collect()
}

/// Number of steps covering `horizon` at `dt`.
pub(crate) fn step_count(horizon: f64, dt: f64) -> usize {
    (horizon / dt - 1e-9).ceil().max(0.0) as usize
}

/// Runs a controller for `horizon` seconds, recording every step.
pub fn simulate<C: Controller + ?Sized>(
    model: &RobotModel,
    initial: &State,
    controller: &mut C,
    horizon: f64,
    config: &StepConfig,
) -> Result<TrajectoryLog> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon must be >= 0 and finite"));
    }
    let mut stepper = Stepper::new(model, config.clone())?;
    model.check_state(initial)?;
    let dt = config.dt;
    let n_steps = step_count(horizon, dt);
    let mut log = TrajectoryLog::new("moreau", dt, 1, model);
    let zero_w = DVector::zeros(3);
    let nl = model.n_links();
    log.samples.push(sample(
        model,
        initial,
        &DVector::zeros(model.n_joints()),
        &vec![[0.0; 2]; nl],
    ));
    let thresholds = contact_thresholds(model);
    let mut state = initial.clone();
    state.t = 0.0;
    for k in 0..n_steps {
        let wrap = |e: Error| Error::Step {
            index: k,
            source: Box::new(e),
        };
        let command = controller.command(model, &state).map_err(wrap)?;
        let (result, alloc) = match command {
            Command::Torques(u) => (stepper.step(&state, &u, &zero_w).map_err(wrap)?, None),
            Command::Allocate { tracking, guess } => {
                let (r, a, rt) = stepper
                    .step_allocated(&state, &tracking, guess.as_ref(), &zero_w)
                    .map_err(wrap)?;
                (r, Some((a.objective, rt)))
            }
        };
        let mut next = result.state.clone();
        next.t = (k + 1) as f64 * dt;
        let forces: Vec<[f64; 2]> = result
            .link_impulses
            .iter()
            .map(|l| [l[0] / dt, l[1] / dt])
            .collect();
        for (i, f) in forces.iter().enumerate() {
            log.contact_stats[i].observe(f[0], thresholds[i], dt);
        }
        let r = &result.impulses.residuals;
        log.steps.push(StepRecord {
            active_contacts: result.contacts.len(),
            iterations: result.impulses.diagnostics.iterations,
            complementarity: r.complementarity,
            cone: r.cone,
            nonnegativity: r.nonnegativity,
            penetration: r.penetration,
            dynamics: r.dynamics,
            force_scale: r.force_scale,
            contact_momentum_x: result.contact_momentum_x,
            contact_energy: result.contact_energy,
            allocation_roundtrip: alloc.map(|a| a.1),
            allocation_objective: alloc.map(|a| a.0),
        });
        log.samples
            .push(sample(model, &next, &result.torque, &forces));
        state = next;
    }
    Ok(log)
}
