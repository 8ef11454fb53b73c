//! Minimum-effort joint torques consistent with the contact program.
//!
//! The torque `u` enters the step as `M (v⁺ − ṽ₀) = Δt S u + Jᵀλ`, where `ṽ₀` is the free
//! velocity without actuation. Among all torques whose resulting contact state satisfies
//! nonpenetration, complementarity and the Coulomb law, the allocation picks the one
//! minimizing `uᵀu` (plus an optional velocity-tracking cost).
//!
//! Contact modes are resolved first; with modes fixed the remaining program is convex
//! and is solved by the interior-point method in [`super::ipm`]. Torque bounds are
//! enforced through one elastic slack whose optimal value certifies infeasibility.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ipm::{self, Cones, ConicQp, IpmSettings, IpmStatus};
use super::{
    solve_impulses_factored, ContactMode, ContactProblem, Delassus, ImpulseSolution, Ncp,
    NcpOptions, SolverTolerances,
};
use crate::error::{Error, Result};
use crate::linalg::SpdFactor;

/// Penalty on the elastic torque-bound slack.
const SLACK_PENALTY: f64 = 1e4;
/// Mode-update rounds per starting assignment.
const MAX_OUTER: usize = 12;
/// Largest velocity disagreement, relative to `max(‖v‖∞, 1)`, between the program and
/// the impulse solver for which a mode assignment is accepted.
const ROUNDTRIP_ACCEPT: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Tracking {
    /// Pure effort minimization.
    None,
    /// Actuated-coordinate velocities must equal the target after the step.
    Constraint { target: Vec<f64> },
    /// Adds `weight · ‖v_actuated − target‖²` to the objective.
    Cost { target: Vec<f64>, weight: f64 },
}

#[derive(Debug, Clone)]
pub struct AllocationProblem {
    /// `free_velocity` here excludes actuation.
    pub contact: ContactProblem,
    /// Selection map `S` (n_q × n_u).
    pub actuation: DMatrix<f64>,
    pub torque_limit: f64,
    /// Candidate torques, such as the previous step's or a feedback law's. The contact
    /// modes each one produces seed the mode search; zero torque is used when empty.
    pub torque_guesses: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AllocationResiduals {
    /// `‖M (v⁺ − ṽ₀) − Δt S u − Jᵀλ‖∞` for the allocated impulses.
    pub dynamics: f64,
    pub complementarity: f64,
    pub cone: f64,
    /// Largest `|u_j| − u_max` before clamping (≤ 0 when inside the bounds).
    pub torque_excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    pub u: Vec<f64>,
    pub v_next: Vec<f64>,
    pub f_n: Vec<f64>,
    pub f_t: Vec<f64>,
    pub modes: Vec<ContactMode>,
    /// `uᵀu`
    pub objective: f64,
    pub residuals: AllocationResiduals,
    /// The impulse solver's answer for the allocated torques.
    pub physics: ImpulseSolution,
    /// `‖v⁺(allocation) − v⁺(impulse solver)‖∞`
    pub roundtrip_error: f64,
    pub ipm_iterations: usize,
    pub outer_iterations: usize,
}

impl AllocationProblem {
    fn validate(&self) -> Result<()> {
        self.contact.validate()?;
        let n = self.contact.mass_matrix.nrows();
        if self.actuation.nrows() != n {
            return Err(Error::invalid("actuation map has wrong row count"));
        }
        if !(self.torque_limit > 0.0) {
            return Err(Error::invalid("torque limit must be > 0"));
        }
        for j in 0..self.actuation.ncols() {
            let col = self.actuation.column(j);
            let ones = col.iter().filter(|x| **x == 1.0).count();
            let zeros = col.iter().filter(|x| **x == 0.0).count();
            if ones != 1 || ones + zeros != n {
                return Err(Error::invalid("actuation map must be a selection matrix"));
            }
        }
        Ok(())
    }

    fn n_u(&self) -> usize {
        self.actuation.ncols()
    }

    /// Coordinate driven by each torque.
    fn actuated_coords(&self) -> Vec<usize> {
        (0..self.n_u())
            .map(|j| {
                self.actuation
                    .column(j)
                    .iter()
                    .position(|x| *x == 1.0)
                    .unwrap()
            })
            .collect()
    }

    /// Contact problem seen by the impulse solver once `u` is applied.
    pub fn with_torques(&self, factor: &SpdFactor, u: &DVector<f64>) -> ContactProblem {
        let mut p = self.contact.clone();
        let force = &self.actuation * u * self.contact.dt;
        p.free_velocity += factor.solve(&force);
        p
    }
}

/// Convex subproblem with contact modes fixed.
struct ModeProgram<'a> {
    problem: &'a AllocationProblem,
    modes: &'a [ContactMode],
    jacobian: &'a DMatrix<f64>,
    bias: &'a [f64],
}

/// Column layout of the subproblem variables.
struct Layout {
    n_u: usize,
    /// Index of `λ_n` for each closed contact.
    normal: Vec<Option<usize>>,
    /// Index of `λ_t` for each sticking contact with friction.
    tangent: Vec<Option<usize>>,
    /// Start of the velocity block, when velocities are decision variables.
    velocity: Option<usize>,
    slack: usize,
    n: usize,
}

impl ModeProgram<'_> {
    fn layout(&self, with_velocity: bool) -> Layout {
        let n_u = self.problem.n_u();
        let mut next = n_u;
        let mut normal = Vec::new();
        let mut tangent = Vec::new();
        for (i, m) in self.modes.iter().enumerate() {
            if m.is_closed() {
                normal.push(Some(next));
                next += 1;
                if *m == ContactMode::Stick && self.problem.contact.mu[i] > 0.0 {
                    tangent.push(Some(next));
                    next += 1;
                } else {
                    tangent.push(None);
                }
            } else {
                normal.push(None);
                tangent.push(None);
            }
        }
        let velocity = with_velocity.then(|| {
            let v = next;
            next += self.problem.contact.mass_matrix.nrows();
            v
        });
        let slack = next;
        Layout {
            n_u,
            normal,
            tangent,
            velocity,
            slack,
            n: next + 1,
        }
    }

    /// `Jᵀλ` as a linear map of the impulse variables (n_q × n).
    fn impulse_map(&self, layout: &Layout) -> DMatrix<f64> {
        let nq = self.jacobian.ncols();
        let mut map = DMatrix::zeros(nq, layout.n);
        for (i, m) in self.modes.iter().enumerate() {
            let Some(kn) = layout.normal[i] else { continue };
            let jn = self.jacobian.row(2 * i);
            let jt = self.jacobian.row(2 * i + 1);
            let mut col = jn.transpose();
            if let Some(s) = m.slide_sign() {
                col -= jt.transpose() * (s * self.problem.contact.mu[i]);
            }
            map.set_column(kn, &col);
            if let Some(kt) = layout.tangent[i] {
                map.set_column(kt, &jt.transpose());
            }
        }
        map
    }

    /// Shared inequality rows: λ_n ≥ 0, slack ≥ 0, elastic torque bounds, friction cones.
    fn common_inequalities(
        &self,
        layout: &Layout,
        extra_nonneg: &[(DVector<f64>, f64)],
    ) -> (DMatrix<f64>, DVector<f64>, Cones) {
        let mu = &self.problem.contact.mu;
        let umax = self.problem.torque_limit;
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
        for k in layout.normal.iter().flatten() {
            let mut g = DVector::zeros(layout.n);
            g[*k] = -1.0;
            rows.push((g, 0.0));
        }
        let mut g = DVector::zeros(layout.n);
        g[layout.slack] = -1.0;
        rows.push((g, 0.0));
        for j in 0..layout.n_u {
            for sign in [1.0, -1.0] {
                let mut g = DVector::zeros(layout.n);
                g[j] = sign;
                g[layout.slack] = -1.0;
                rows.push((g, umax));
            }
        }
        rows.extend(extra_nonneg.iter().cloned());
        let nonneg = rows.len();
        let mut soc = Vec::new();
        for (i, kt) in layout.tangent.iter().enumerate() {
            let Some(kt) = kt else { continue };
            let kn = layout.normal[i].unwrap();
            let mut g0 = DVector::zeros(layout.n);
            g0[kn] = -mu[i];
            let mut g1 = DVector::zeros(layout.n);
            g1[*kt] = -1.0;
            rows.push((g0, 0.0));
            rows.push((g1, 0.0));
            soc.push(2);
        }
        let mut g = DMatrix::zeros(rows.len(), layout.n);
        let mut h = DVector::zeros(rows.len());
        for (r, (row, hv)) in rows.into_iter().enumerate() {
            g.set_row(r, &row.transpose());
            h[r] = hv;
        }
        (g, h, Cones { nonneg, soc })
    }

    /// Velocities are decision variables. The actuated ones either equal the target
    /// (`weight = None`) or are pulled toward it by `weight · ‖v_a − target‖²`.
    fn program(&self, target: &[f64], weight: Option<f64>) -> (ConicQp, Layout) {
        let layout = self.layout(true);
        let p = &self.problem.contact;
        let nq = p.mass_matrix.nrows();
        let vs = layout.velocity.unwrap();
        let jac = self.jacobian;
        let vtol = 1e-10;

        let mut eq_rows: Vec<(DVector<f64>, f64)> = Vec::new();
        // M v / Δt − S u − Jᵀf = M ṽ₀ / Δt
        let imap = self.impulse_map(&layout);
        let mv0 = &p.mass_matrix * &p.free_velocity / p.dt;
        let coords = self.problem.actuated_coords();
        for r in 0..nq {
            let mut row = -imap.row(r).transpose();
            for k in 0..nq {
                row[vs + k] = p.mass_matrix[(r, k)] / p.dt;
            }
            if let Some(j) = coords.iter().position(|c| *c == r) {
                row[j] = -1.0;
            }
            eq_rows.push((row, mv0[r]));
        }
        let mut extra = Vec::new();
        for (i, m) in self.modes.iter().enumerate() {
            let mut wn = DVector::zeros(layout.n);
            let mut wt = DVector::zeros(layout.n);
            for k in 0..nq {
                wn[vs + k] = jac[(2 * i, k)];
                wt[vs + k] = jac[(2 * i + 1, k)];
            }
            match m {
                ContactMode::Open => extra.push((-wn, self.bias[i] + vtol)),
                _ => {
                    eq_rows.push((wn, -self.bias[i]));
                    if p.mu[i] > 0.0 {
                        match m.slide_sign() {
                            None => eq_rows.push((wt, 0.0)),
                            Some(s) => extra.push((-wt * s, vtol)),
                        }
                    }
                }
            }
        }
        if weight.is_none() {
            for (j, coord) in coords.iter().enumerate() {
                let mut row = DVector::zeros(layout.n);
                row[vs + coord] = 1.0;
                eq_rows.push((row, target[j]));
            }
        }
        let (g, h, cones) = self.common_inequalities(&layout, &extra);
        let mut a = DMatrix::zeros(eq_rows.len(), layout.n);
        let mut b = DVector::zeros(eq_rows.len());
        for (r, (row, bv)) in eq_rows.into_iter().enumerate() {
            a.set_row(r, &row.transpose());
            b[r] = bv;
        }
        let mut pm = DMatrix::zeros(layout.n, layout.n);
        let mut c = DVector::zeros(layout.n);
        for j in 0..layout.n_u {
            pm[(j, j)] = 2.0;
        }
        if let Some(weight) = weight {
            for (j, coord) in coords.iter().enumerate() {
                pm[(vs + coord, vs + coord)] += 2.0 * weight;
                c[vs + coord] -= 2.0 * weight * target[j];
            }
        }
        c[layout.slack] = SLACK_PENALTY;
        (
            ConicQp {
                p: pm,
                c,
                a,
                b,
                g,
                h,
                cones,
            },
            layout,
        )
    }
}

struct Allocated {
    u: DVector<f64>,
    lambda: DVector<f64>,
    v: Option<DVector<f64>>,
    slack: f64,
    iterations: usize,
}

fn run_ipm(
    qp: &ConicQp,
    layout: &Layout,
    modes: &[ContactMode],
    mu: &[f64],
    dt: f64,
    tol: &SolverTolerances,
) -> Result<Allocated> {
    let settings = IpmSettings {
        max_iter: tol.ipm_max_iter,
        ..Default::default()
    };
    let sol = ipm::solve(qp, &settings);
    match sol.status {
        IpmStatus::Solved => {}
        IpmStatus::InconsistentEqualities => {
            return Err(Error::Infeasible(
                "contact modes admit no impulses satisfying the dynamics".into(),
            ))
        }
        other => {
            return Err(Error::Infeasible(format!(
            "interior point {other:?} after {} iterations (primal {:.2e}, dual {:.2e}, gap {:.2e})",
            sol.iterations, sol.primal_residual, sol.dual_residual, sol.gap
        )))
        }
    }
    let x = &sol.x;
    let u = x.rows(0, layout.n_u).into_owned();
    // The program works in forces; impulses are force times the step.
    let x = &x.map(|v| v * dt);
    let c = modes.len();
    let mut lambda = DVector::zeros(2 * c);
    for i in 0..c {
        if let Some(kn) = layout.normal[i] {
            let n = x[kn].max(0.0);
            lambda[2 * i] = n;
            lambda[2 * i + 1] = match (layout.tangent[i], modes[i].slide_sign()) {
                (Some(kt), _) => x[kt].clamp(-mu[i] * n, mu[i] * n),
                (None, Some(s)) => -s * mu[i] * n,
                _ => 0.0,
            };
        }
    }
    let v = layout
        .velocity
        .map(|vs| sol.x.rows(vs, qp.p.nrows() - vs - 1).into_owned());
    Ok(Allocated {
        u,
        lambda,
        v,
        slack: sol.x[layout.slack].max(0.0),
        iterations: sol.iterations,
    })
}

/// Minimum-effort torques for one step.
pub fn solve_allocation(
    problem: &AllocationProblem,
    tracking: &Tracking,
    tol: &SolverTolerances,
) -> Result<AllocationSolution> {
    problem.validate()?;
    let n_u = problem.n_u();
    let check_target = |t: &[f64]| {
        if t.len() != n_u {
            Err(Error::invalid(format!(
                "tracking target has dimension {}, expected {n_u}",
                t.len()
            )))
        } else {
            Ok(())
        }
    };
    let factor = SpdFactor::new(&problem.contact.mass_matrix)?;
    match tracking {
        Tracking::None => {
            let u = DVector::zeros(n_u);
            let physics = solve_impulses_factored(&problem.contact, &factor, tol)?;
            let v_next = physics.v_next.clone();
            finish(
                problem,
                &factor,
                u,
                physics.impulses(),
                v_next,
                physics.modes.clone(),
                0,
                0,
                tol,
            )
        }
        Tracking::Constraint { target } => {
            check_target(target)?;
            allocate_tracking(problem, &factor, target, None, tol)
        }
        Tracking::Cost { target, weight } => {
            check_target(target)?;
            if !(*weight >= 0.0) {
                return Err(Error::invalid("tracking weight must be >= 0"));
            }
            allocate_tracking(problem, &factor, target, Some(*weight), tol)
        }
    }
}

/// Post-step velocity when the actuated coordinates reach `target` exactly and the
/// unactuated ones respond through the contacts.
fn tracked_velocity(
    problem: &AllocationProblem,
    target: &[f64],
    tol: &SolverTolerances,
) -> Result<DVector<f64>> {
    let p = &problem.contact;
    let nq = p.mass_matrix.nrows();
    let coords = problem.actuated_coords();
    let free: Vec<usize> = (0..nq).filter(|k| !coords.contains(k)).collect();
    let mut v_next = p.free_velocity.clone();
    for (j, &k) in coords.iter().enumerate() {
        v_next[k] = target[j];
    }
    if free.is_empty() {
        return Ok(v_next);
    }
    let m = &p.mass_matrix;
    let m_ff = m.select_rows(&free).select_columns(&free);
    let m_fa = m.select_rows(&free).select_columns(&coords);
    let dva = DVector::from_iterator(
        coords.len(),
        coords.iter().map(|&k| v_next[k] - p.free_velocity[k]),
    );
    let sub = SpdFactor::new(&m_ff)?;
    let shift = sub.solve(&(&m_fa * dva));
    for (r, &k) in free.iter().enumerate() {
        v_next[k] = p.free_velocity[k] - shift[r];
    }
    let c = p.n_contacts();
    if c == 0 {
        return Ok(v_next);
    }
    let jac = p.jacobian();
    let bias = p.normal_bias();
    let del = Delassus::new(&sub, jac.select_columns(&free));
    let mut q = &jac * &v_next;
    for i in 0..c {
        q[2 * i] += bias[i];
    }
    let ncp = Ncp {
        w: &del.w,
        q: &q,
        mu: &p.mu,
    };
    let out = ncp.solve(
        p.warm_vector().as_ref(),
        NcpOptions {
            max_iter: tol.max_iter,
            tol: tol.fixed_point,
        },
    );
    if !out.converged {
        return Err(Error::Infeasible(
            "contact response to the tracked shape did not converge".into(),
        ));
    }
    let dv = &del.minv_jt * &out.lambda;
    for (r, &k) in free.iter().enumerate() {
        v_next[k] += dv[r];
    }
    Ok(v_next)
}

/// Alternates between the convex program for a fixed mode assignment and the impulse
/// solver's answer for the resulting torques until the two agree.
fn allocate_tracking(
    problem: &AllocationProblem,
    factor: &SpdFactor,
    target: &[f64],
    weight: Option<f64>,
    tol: &SolverTolerances,
) -> Result<AllocationSolution> {
    let p = &problem.contact;
    let jac = p.jacobian();
    let bias = p.normal_bias();
    let limit = problem.torque_limit;
    let clamp = |u: &DVector<f64>| u.map(|x| x.clamp(-limit, limit));

    let mut guesses: Vec<DVector<f64>> = problem
        .torque_guesses
        .iter()
        .filter(|u| u.len() == problem.n_u())
        .map(clamp)
        .collect();
    if guesses.is_empty() {
        guesses.push(DVector::zeros(problem.n_u()));
    }
    let mut starts: Vec<Vec<ContactMode>> = Vec::new();
    for guess in &guesses {
        let modes =
            solve_impulses_factored(&problem.with_torques(factor, guess), factor, tol)?.modes;
        if !starts.contains(&modes) {
            starts.push(modes);
        }
    }
    if let Ok(v) = tracked_velocity(problem, target, tol) {
        let modes = velocity_modes(p, &jac, &bias, &v);
        if !starts.contains(&modes) {
            starts.push(modes);
        }
    }

    let mut visited: Vec<Vec<ContactMode>> = Vec::new();
    let mut total_iters = 0;
    let mut outer = 0;
    let mut last_error = None;
    let mut last_u = None;
    let coords = problem.actuated_coords();
    let mut best: Option<(f64, AllocationSolution)> = None;
    'starts: for start in starts {
        let mut modes = start;
        let mut rounds = 0;
        while rounds < MAX_OUTER && !visited.contains(&modes) {
            rounds += 1;
            outer += 1;
            visited.push(modes.clone());
            let program = ModeProgram {
                problem,
                modes: &modes,
                jacobian: &jac,
                bias: &bias,
            };
            let (qp, layout) = program.program(target, weight);
            let alloc = match run_ipm(&qp, &layout, &modes, &p.mu, p.dt, tol) {
                Ok(a) => a,
                Err(e) => {
                    last_error = Some(e);
                    break;
                }
            };
            total_iters += alloc.iterations;
            let u = clamp(&alloc.u);
            let physics = solve_impulses_factored(&problem.with_torques(factor, &u), factor, tol)?;
            let v = alloc.v.clone().unwrap();
            let scale = v.amax().max(1.0);
            let consistent = (&physics.v_next - &v).amax() <= ROUNDTRIP_ACCEPT * scale;
            match check_slack(&alloc, limit) {
                Ok(()) if consistent => {
                    let sol = finish(
                        problem,
                        factor,
                        u,
                        alloc.lambda,
                        v,
                        modes,
                        total_iters,
                        outer,
                        tol,
                    )?;
                    // Different starting assignments can close different contact sets;
                    // keep the cheapest consistent answer.
                    let miss: f64 = coords
                        .iter()
                        .zip(target)
                        .map(|(&k, t)| (sol.v_next[k] - t).powi(2))
                        .sum();
                    let cost = sol.objective + weight.map_or(0.0, |w| w * miss);
                    if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                        best = Some((cost, sol));
                    }
                    continue 'starts;
                }
                Ok(()) => {}
                Err(e) => last_error = Some(e),
            }
            last_u = Some(u);
            // Equal modes with unequal velocities means a degenerate assignment; the
            // solver's velocity separates sticking from sliding more sharply.
            modes = if physics.modes == modes {
                velocity_modes(p, &jac, &bias, &physics.v_next)
            } else {
                physics.modes
            };
        }
    }
    if let Some((_, sol)) = best {
        return Ok(sol);
    }
    match (weight, last_u) {
        // Soft tracking always has an answer: the physical response to the last torques.
        (Some(_), Some(u)) => {
            let physics = solve_impulses_factored(&problem.with_torques(factor, &u), factor, tol)?;
            let v = physics.v_next.clone();
            finish(
                problem,
                factor,
                u,
                physics.impulses(),
                v,
                physics.modes.clone(),
                total_iters,
                outer,
                tol,
            )
        }
        _ => Err(last_error.unwrap_or_else(|| {
            Error::Infeasible("no contact mode assignment reproduces the tracked velocity".into())
        })),
    }
}

/// Contact modes implied by a post-step velocity. Every contact whose normal velocity
/// meets its bias counts as closed, so redundant supports may share the load.
fn velocity_modes(
    p: &ContactProblem,
    jac: &DMatrix<f64>,
    bias: &[f64],
    v_next: &DVector<f64>,
) -> Vec<ContactMode> {
    let w = jac * v_next;
    let scale = (jac * &p.free_velocity)
        .amax()
        .max(bias.iter().fold(0.0, |a: f64, b| a.max(b.abs())))
        .max(f64::MIN_POSITIVE);
    let vtol = 1e-9 * scale;
    (0..p.n_contacts())
        .map(|i| {
            let (wn, wt) = (w[2 * i] + bias[i], w[2 * i + 1]);
            if wn > vtol {
                ContactMode::Open
            } else if p.mu[i] == 0.0 || wt.abs() <= vtol {
                ContactMode::Stick
            } else if wt > 0.0 {
                ContactMode::SlidePositive
            } else {
                ContactMode::SlideNegative
            }
        })
        .collect()
}

fn check_slack(alloc: &Allocated, limit: f64) -> Result<()> {
    if alloc.slack > 1e-6 * limit {
        return Err(Error::Infeasible(format!(
            "torque bounds must be relaxed by {:.6e} N·m to track the target",
            alloc.slack
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &AllocationProblem,
    factor: &SpdFactor,
    u: DVector<f64>,
    lambda: DVector<f64>,
    v_next: DVector<f64>,
    modes: Vec<ContactMode>,
    ipm_iterations: usize,
    outer_iterations: usize,
    tol: &SolverTolerances,
) -> Result<AllocationSolution> {
    let p = &problem.contact;
    let limit = problem.torque_limit;
    let torque_excess = u
        .iter()
        .fold(f64::NEG_INFINITY, |a, x| a.max(x.abs() - limit));
    let u = u.map(|x| x.clamp(-limit, limit));
    let jac = p.jacobian();
    let bias = p.normal_bias();
    let c = p.n_contacts();

    let dynamics = (&p.mass_matrix * (&v_next - &p.free_velocity)
        - &problem.actuation * &u * p.dt
        - jac.transpose() * &lambda)
        .amax();
    let w = &jac * &v_next;
    let mut complementarity: f64 = 0.0;
    let mut cone: f64 = 0.0;
    for i in 0..c {
        complementarity = complementarity.max((p.dt * (w[2 * i] + bias[i]) * lambda[2 * i]).abs());
        cone = cone.max(lambda[2 * i + 1].abs() - p.mu[i] * lambda[2 * i]);
    }

    let physics = solve_impulses_factored(&problem.with_torques(factor, &u), factor, tol)?;
    let roundtrip_error = (&physics.v_next - &v_next).amax();
    Ok(AllocationSolution {
        objective: u.norm_squared(),
        u: u.iter().copied().collect(),
        v_next: v_next.iter().copied().collect(),
        f_n: (0..c).map(|i| lambda[2 * i]).collect(),
        f_t: (0..c).map(|i| lambda[2 * i + 1]).collect(),
        modes,
        residuals: AllocationResiduals {
            dynamics,
            complementarity,
            cone,
            torque_excess: if c == 0 && u.is_empty() {
                0.0
            } else {
                torque_excess.max(-limit)
            },
        },
        physics,
        roundtrip_error,
        ipm_iterations,
        outer_iterations,
    })
}
