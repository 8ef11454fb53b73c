//! Per-step contact impulses and torque allocation.
//!
//! Decision variables are impulses (N·s). A reported contact force is the impulse
//! divided by the step size.

mod allocation;
pub mod ipm;
mod lemke;
mod ncp;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{plain_vec, row_major, SpdFactor};
use crate::model::ContactPoint;

pub use allocation::{
    solve_allocation, AllocationProblem, AllocationResiduals, AllocationSolution, Tracking,
};
pub use ncp::ContactMode;
pub(crate) use ncp::{Ncp, NcpOptions};

pub const PROBLEM_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverTolerances {
    /// Complementarity `|g·λ_n|`, relative to `max(1, max λ_n)`.
    pub complementarity: f64,
    /// Allowed post-step penetration, m.
    pub penetration: f64,
    /// Allowed cone violation `|λ_t| − μ λ_n`, N·s.
    pub cone: f64,
    /// `‖M (v⁺ − ṽ) − Jᵀλ‖∞`.
    pub dynamics: f64,
    /// Gauss-Seidel stopping tolerance on the contact-law violation in velocity units,
    /// relative to the largest free contact velocity.
    pub fixed_point: f64,
    pub max_iter: usize,
    pub ipm_max_iter: usize,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            complementarity: 1e-8,
            penetration: 1e-6,
            cone: 1e-10,
            dynamics: 1e-8,
            fixed_point: 1e-8,
            max_iter: 200,
            ipm_max_iter: 50,
        }
    }
}

/// One step's contact program, self-contained so it can be archived and replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactProblem {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    #[serde(with = "row_major")]
    pub mass_matrix: DMatrix<f64>,
    #[serde(with = "plain_vec")]
    pub free_velocity: DVector<f64>,
    /// Active contacts; `gap` is the pre-step gap `g_i^n`.
    pub contacts: Vec<ContactPoint>,
    pub dt: f64,
    pub mu: Vec<f64>,
    pub restitution: Vec<f64>,
    /// Initial impulses `[λ_n, λ_t]` per contact.
    #[serde(default)]
    pub warm_start: Option<Vec<[f64; 2]>>,
}

fn schema_version() -> u32 {
    PROBLEM_SCHEMA_VERSION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub complementarity: f64,
    pub cone: f64,
    pub nonnegativity: f64,
    /// Most negative post-step gap (0 when none is negative).
    pub penetration: f64,
    pub dynamics: f64,
    pub force_scale: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub iterations: usize,
    pub final_residual: f64,
    pub polished: bool,
    pub residual_history: Vec<f64>,
    /// `½ λᵀ(W λ + 2q)` after each sweep; non-increasing for frictionless problems.
    pub merit_history: Vec<f64>,
    pub merit_monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseSolution {
    /// Normal impulses, N·s.
    pub f_n: Vec<f64>,
    /// Tangential impulses, N·s.
    pub f_t: Vec<f64>,
    #[serde(with = "plain_vec")]
    pub v_next: DVector<f64>,
    pub gaps_next: Vec<f64>,
    pub modes: Vec<ContactMode>,
    pub status: SolveStatus,
    pub residuals: Residuals,
    pub diagnostics: SolverDiagnostics,
}

impl ImpulseSolution {
    pub fn impulses(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.f_n.len(),
            self.f_n.iter().zip(&self.f_t).flat_map(|(n, t)| [*n, *t]),
        )
    }
}

/// Euclidean projection of `(f_n, f_t)` onto the planar cone `|f_t| ≤ μ f_n`.
pub fn project_friction_cone(f_n: f64, f_t: f64, mu: f64) -> (f64, f64) {
    if f_t.abs() <= mu * f_n {
        return (f_n, f_t);
    }
    if mu * f_t.abs() <= -f_n {
        return (0.0, 0.0);
    }
    let n = (f_n + mu * f_t.abs()) / (1.0 + mu * mu);
    (n, f_t.signum() * mu * n)
}

impl ContactProblem {
    pub fn n_contacts(&self) -> usize {
        self.contacts.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.mass_matrix.nrows();
        if self.mass_matrix.ncols() != n || self.free_velocity.len() != n {
            return Err(Error::invalid(
                "mass matrix / free velocity dimensions disagree",
            ));
        }
        let c = self.contacts.len();
        if self.mu.len() != c || self.restitution.len() != c {
            return Err(Error::invalid(
                "mu / restitution must have one entry per contact",
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt must be positive"));
        }
        for (i, cp) in self.contacts.iter().enumerate() {
            if cp.jacobian_normal.len() != n || cp.jacobian_tangent.len() != n {
                return Err(Error::invalid(format!(
                    "contact {i}: Jacobian has wrong width"
                )));
            }
            if !cp.gap.is_finite()
                || !cp.normal_velocity.is_finite()
                || !cp.gap_curvature.is_finite()
            {
                return Err(Error::invalid(format!("contact {i}: non-finite gap")));
            }
            if !(self.mu[i] >= 0.0) {
                return Err(Error::invalid(format!("contact {i}: mu must be >= 0")));
            }
            if !(0.0..=1.0).contains(&self.restitution[i]) {
                return Err(Error::invalid(format!(
                    "contact {i}: restitution outside [0, 1]"
                )));
            }
        }
        if let Some(ws) = &self.warm_start {
            if ws.len() != c {
                return Err(Error::invalid("warm start must have one entry per contact"));
            }
        }
        Ok(())
    }

    /// Stacked Jacobian, rows `(normal_i, tangent_i)` per contact.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let n = self.mass_matrix.nrows();
        let mut j = DMatrix::zeros(2 * self.contacts.len(), n);
        for (i, cp) in self.contacts.iter().enumerate() {
            for k in 0..n {
                j[(2 * i, k)] = cp.jacobian_normal[k];
                j[(2 * i + 1, k)] = cp.jacobian_tangent[k];
            }
        }
        j
    }

    /// Constant term of the normal contact velocity: the gap rate that closes the
    /// predicted gap within the step, plus the Newton restitution target once the
    /// contact is closed.
    pub fn normal_bias(&self) -> Vec<f64> {
        self.contacts
            .iter()
            .zip(&self.restitution)
            .map(|(cp, e)| {
                let b = (cp.gap + cp.gap_curvature) / self.dt;
                if cp.gap > 0.0 {
                    b
                } else {
                    b + e * cp.normal_velocity.min(0.0)
                }
            })
            .collect()
    }

    pub(crate) fn warm_vector(&self) -> Option<DVector<f64>> {
        self.warm_start
            .as_ref()
            .map(|ws| DVector::from_iterator(2 * ws.len(), ws.iter().flat_map(|p| [p[0], p[1]])))
    }
}

/// Quantities shared by the impulse and allocation solvers.
pub(crate) struct Delassus {
    pub jacobian: DMatrix<f64>,
    /// `M⁻¹ Jᵀ`
    pub minv_jt: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl Delassus {
    pub fn new(factor: &SpdFactor, jacobian: DMatrix<f64>) -> Self {
        let minv_jt = factor.solve_mat(&jacobian.transpose());
        let w = &jacobian * &minv_jt;
        let w = (&w + w.transpose()) * 0.5;
        Self {
            jacobian,
            minv_jt,
            w,
        }
    }
}

/// Resolve contact impulses for one step.
pub fn solve_impulses(problem: &ContactProblem, tol: &SolverTolerances) -> Result<ImpulseSolution> {
    problem.validate()?;
    let factor = SpdFactor::new(&problem.mass_matrix)?;
    solve_impulses_factored(problem, &factor, tol)
}

pub(crate) fn solve_impulses_factored(
    problem: &ContactProblem,
    factor: &SpdFactor,
    tol: &SolverTolerances,
) -> Result<ImpulseSolution> {
    let c = problem.n_contacts();
    if c == 0 {
        return Ok(ImpulseSolution {
            f_n: Vec::new(),
            f_t: Vec::new(),
            v_next: problem.free_velocity.clone(),
            gaps_next: Vec::new(),
            modes: Vec::new(),
            status: SolveStatus::Converged,
            residuals: Residuals::default(),
            diagnostics: SolverDiagnostics {
                merit_monotone: true,
                ..Default::default()
            },
        });
    }
    let del = Delassus::new(factor, problem.jacobian());
    let bias = problem.normal_bias();
    let mut q = &del.jacobian * &problem.free_velocity;
    for i in 0..c {
        q[2 * i] += bias[i];
    }
    let ncp = Ncp {
        w: &del.w,
        q: &q,
        mu: &problem.mu,
    };
    let warm = problem.warm_vector();
    let out = ncp.solve(
        warm.as_ref(),
        NcpOptions {
            max_iter: tol.max_iter,
            tol: tol.fixed_point,
        },
    );
    Ok(finish(problem, &del, &bias, out, tol))
}

fn finish(
    problem: &ContactProblem,
    del: &Delassus,
    bias: &[f64],
    out: ncp::NcpOutcome,
    tol: &SolverTolerances,
) -> ImpulseSolution {
    let c = problem.n_contacts();
    let lambda = out.lambda;
    let v_next = &problem.free_velocity + &del.minv_jt * &lambda;
    let contact_vel = &del.jacobian * &v_next;

    let f_n: Vec<f64> = (0..c).map(|i| lambda[2 * i]).collect();
    let f_t: Vec<f64> = (0..c).map(|i| lambda[2 * i + 1]).collect();
    let gaps_next: Vec<f64> = (0..c)
        .map(|i| {
            let cp = &problem.contacts[i];
            cp.gap + cp.gap_curvature + problem.dt * contact_vel[2 * i]
        })
        .collect();

    let force_scale = f_n.iter().fold(1.0f64, |a, b| a.max(*b));
    let mut r = Residuals {
        force_scale,
        ..Default::default()
    };
    for i in 0..c {
        let effective_gap = problem.dt * (contact_vel[2 * i] + bias[i]);
        r.complementarity = r.complementarity.max((effective_gap * f_n[i]).abs());
        r.cone = r.cone.max(f_t[i].abs() - problem.mu[i] * f_n[i]);
        r.nonnegativity = r.nonnegativity.max(-f_n[i]);
        r.penetration = r.penetration.min(gaps_next[i]);
    }
    let momentum = &problem.mass_matrix * (&v_next - &problem.free_velocity);
    r.dynamics = (momentum - del.jacobian.transpose() * &lambda).amax();

    let ok = out.converged
        && r.complementarity <= tol.complementarity * force_scale
        && r.cone <= tol.cone
        && r.nonnegativity <= 0.0
        && r.penetration >= -tol.penetration
        && r.dynamics <= tol.dynamics;
    let merit_monotone = out
        .merit_history
        .windows(2)
        .all(|p| p[1] <= p[0] + 1e-12 * p[0].abs().max(1e-300));
    ImpulseSolution {
        f_n,
        f_t,
        v_next,
        gaps_next,
        modes: out.modes,
        status: if ok {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIterations
        },
        residuals: r,
        diagnostics: SolverDiagnostics {
            iterations: out.iterations,
            final_residual: out.residual_history.last().copied().unwrap_or(0.0),
            polished: out.polished,
            residual_history: out.residual_history,
            merit_history: out.merit_history,
            merit_monotone,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinkSpec, RobotModel};

    fn ball_problem(vx: f64, mu: f64, dt: f64) -> ContactProblem {
        let model = RobotModel::single_body(
            LinkSpec {
                mass: 2.0,
                length: 0.2,
                inertia_about_com: 0.008,
                com_offset: 0.0,
                sphere_radius: 0.1,
                sphere_center_offset: 0.0,
            },
            [0.0, -9.81],
        )
        .unwrap();
        let q = DVector::from_vec(vec![0.0, 0.1, 0.0]);
        let v = DVector::from_vec(vec![vx, 0.0, 0.0]);
        let contacts = model.contact_candidates(&q, &v).unwrap();
        let free = DVector::from_vec(vec![vx, -9.81 * dt, 0.0]);
        ContactProblem {
            schema_version: 1,
            mass_matrix: model.mass_matrix(&q).unwrap(),
            free_velocity: free,
            contacts,
            dt,
            mu: vec![mu],
            restitution: vec![0.0],
            warm_start: None,
        }
    }

    #[test]
    fn zero_contacts_is_identity() {
        let mut p = ball_problem(0.0, 0.5, 1e-3);
        p.contacts.clear();
        p.mu.clear();
        p.restitution.clear();
        let s = solve_impulses(&p, &SolverTolerances::default()).unwrap();
        assert_eq!(s.v_next, p.free_velocity);
        assert!(s.f_n.is_empty());
    }

    #[test]
    fn resting_ball_takes_weight_impulse() {
        let dt = 1e-3;
        let p = ball_problem(0.0, 0.5, dt);
        let s = solve_impulses(&p, &SolverTolerances::default()).unwrap();
        assert_eq!(s.status, SolveStatus::Converged);
        assert!((s.f_n[0] - 2.0 * 9.81 * dt).abs() < 1e-15);
        assert_eq!(s.f_t[0], 0.0);
        assert!(s.v_next.amax() < 1e-15);
    }

    #[test]
    fn sliding_ball_friction_saturates_against_motion() {
        let dt = 1e-3;
        let p = ball_problem(1.0, 0.5, dt);
        let s = solve_impulses(&p, &SolverTolerances::default()).unwrap();
        let fnorm = 2.0 * 9.81 * dt;
        assert!((s.f_n[0] - fnorm).abs() < 1e-14);
        assert!((s.f_t[0] + 0.5 * fnorm).abs() < 1e-14);
        assert!((s.v_next[0] - (1.0 - 0.5 * 9.81 * dt)).abs() < 1e-12);
        assert_eq!(s.modes[0], ContactMode::SlidePositive);
    }

    #[test]
    fn cone_projection_cases() {
        assert_eq!(project_friction_cone(1.0, 0.3, 0.5), (1.0, 0.3));
        assert_eq!(project_friction_cone(-1.0, 0.0, 0.5), (0.0, 0.0));
        let (n, t) = project_friction_cone(1.0, 2.0, 0.5);
        assert!((n - 1.6).abs() < 1e-15 && (t - 0.8).abs() < 1e-15);
        let (n, t) = project_friction_cone(1.0, -2.0, 0.5);
        assert!((n - 1.6).abs() < 1e-15 && (t + 0.8).abs() < 1e-15);
    }

    #[test]
    fn malformed_problem_is_rejected() {
        let mut p = ball_problem(0.0, 0.5, 1e-3);
        p.mu.push(0.1);
        assert!(solve_impulses(&p, &SolverTolerances::default()).is_err());
        let mut p = ball_problem(0.0, 0.5, 1e-3);
        p.restitution[0] = 2.0;
        assert!(solve_impulses(&p, &SolverTolerances::default()).is_err());
    }

    #[test]
    fn problem_json_round_trip() {
        let p = ball_problem(0.3, 0.5, 1e-3);
        let s = serde_json::to_string(&p).unwrap();
        let back: ContactProblem = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }
}
