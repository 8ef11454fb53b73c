//! Planar Coulomb contact problem in Delassus form.
//!
//! Unknown impulses `λ = (λ_n0, λ_t0, λ_n1, λ_t1, ..)` and contact velocities
//! `w = W λ + q` must satisfy, per contact,
//!
//! ```text
//! 0 ≤ λ_n ⊥ w_n ≥ 0,   |λ_t| ≤ μ λ_n,   λ_t = -μ λ_n sign(w_t) when w_t ≠ 0
//! ```
//!
//! Solved by a nonsmooth block Gauss-Seidel sweep with an exact 2×2 local solver, and
//! finished by an active-set polish that makes the identified contact modes exact.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::linalg::min_change_solve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContactMode {
    Open,
    Stick,
    /// Sliding with tangential velocity sign `+1` or `-1`; friction opposes it.
    SlidePositive,
    SlideNegative,
}

impl ContactMode {
    fn slide(sign: f64) -> Self {
        if sign >= 0.0 {
            ContactMode::SlidePositive
        } else {
            ContactMode::SlideNegative
        }
    }

    pub fn slide_sign(self) -> Option<f64> {
        match self {
            ContactMode::SlidePositive => Some(1.0),
            ContactMode::SlideNegative => Some(-1.0),
            _ => None,
        }
    }

    pub fn is_closed(self) -> bool {
        self != ContactMode::Open
    }
}

pub(crate) struct Ncp<'a> {
    pub w: &'a DMatrix<f64>,
    pub q: &'a DVector<f64>,
    pub mu: &'a [f64],
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct NcpOptions {
    pub max_iter: usize,
    /// Fixed-point tolerance relative to the impulse scale.
    pub tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct NcpOutcome {
    pub lambda: DVector<f64>,
    pub modes: Vec<ContactMode>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub merit_history: Vec<f64>,
    pub polished: bool,
    pub converged: bool,
}

/// Exact solution of a single planar contact `w = A λ + r`.
pub(crate) fn local_solve(a: &Matrix2<f64>, r: &Vector2<f64>, mu: f64) -> Vector2<f64> {
    if r.x >= 0.0 {
        return Vector2::zeros();
    }
    if mu == 0.0 {
        return Vector2::new(-r.x / a[(0, 0)], 0.0);
    }
    if let Some(inv) = a.try_inverse() {
        let stick = -(inv * r);
        if stick.x >= 0.0 && stick.y.abs() <= mu * stick.x {
            return stick;
        }
        // The slip direction is opposite to the violated tangential impulse.
        let first = -stick.y.signum();
        for s in [first, -first] {
            let denom = a[(0, 0)] - s * mu * a[(0, 1)];
            if denom <= 0.0 {
                continue;
            }
            let ln = -r.x / denom;
            let lt = -s * mu * ln;
            let wt = a[(1, 0)] * ln + a[(1, 1)] * lt + r.y;
            if s * wt >= 0.0 {
                return Vector2::new(ln, lt);
            }
        }
    }
    // Degenerate block: projected fixed-point iteration on the local problem.
    let step = 1.0 / a.diagonal().max().max(f64::MIN_POSITIVE);
    let mut lam = Vector2::zeros();
    for _ in 0..200 {
        let w = a * lam + r;
        let (n, t) = super::project_friction_cone(lam.x - step * w.x, lam.y - step * w.y, mu);
        lam = Vector2::new(n, t);
    }
    lam
}

impl Ncp<'_> {
    fn n_contacts(&self) -> usize {
        self.mu.len()
    }

    fn block(&self, i: usize) -> Matrix2<f64> {
        self.w.fixed_view::<2, 2>(2 * i, 2 * i).into_owned()
    }

    /// Impulse scale used to normalize residuals.
    fn impulse_scale(&self, lambda: &DVector<f64>) -> f64 {
        let mut scale = f64::MIN_POSITIVE;
        for i in 0..self.n_contacts() {
            scale = scale.max(lambda[2 * i].abs());
            let wnn = self.w[(2 * i, 2 * i)];
            if wnn > 0.0 {
                scale = scale.max((-self.q[2 * i]).max(0.0) / wnn);
            }
        }
        scale
    }

    fn velocity_tol(&self) -> f64 {
        1e-10 * self.q.amax().max(1.0)
    }

    pub fn solve(&self, warm_start: Option<&DVector<f64>>, opts: NcpOptions) -> NcpOutcome {
        let c = self.n_contacts();
        let mut lambda = match warm_start {
            Some(l) if l.len() == 2 * c => l.map(|x| if x.is_finite() { x } else { 0.0 }),
            _ => DVector::zeros(2 * c),
        };
        for i in 0..c {
            let (n, t) = super::project_friction_cone(lambda[2 * i], lambda[2 * i + 1], self.mu[i]);
            lambda[2 * i] = n;
            lambda[2 * i + 1] = t;
        }
        let mut velocity = self.w * &lambda + self.q;
        let mut residual_history = Vec::new();
        let mut merit_history = Vec::new();

        if c == 0 {
            return NcpOutcome {
                lambda,
                modes: Vec::new(),
                iterations: 0,
                residual_history,
                merit_history,
                polished: false,
                converged: true,
            };
        }

        let blocks: Vec<Matrix2<f64>> = (0..c).map(|i| self.block(i)).collect();
        // Redundant contacts make impulses non-unique and Gauss-Seidel may keep moving
        // along that null space, so convergence is judged on the contact law itself.
        let velocity_scale = self.q.amax().max(f64::MIN_POSITIVE);
        let law_residual = |lam: &DVector<f64>| {
            self.coulomb_residual(lam, &(self.w * lam + self.q)) / velocity_scale
        };

        if warm_start.is_some() {
            if let Some(out) = self.polish(&lambda) {
                residual_history.push(law_residual(&out.lambda));
                return NcpOutcome {
                    iterations: 0,
                    residual_history,
                    merit_history,
                    converged: true,
                    ..out
                };
            }
        }

        for iter in 1..=opts.max_iter {
            for i in 0..c {
                let old = Vector2::new(lambda[2 * i], lambda[2 * i + 1]);
                let wi = Vector2::new(velocity[2 * i], velocity[2 * i + 1]);
                let r = wi - blocks[i] * old;
                let new = local_solve(&blocks[i], &r, self.mu[i]);
                let delta = new - old;
                if delta.x != 0.0 || delta.y != 0.0 {
                    lambda[2 * i] = new.x;
                    lambda[2 * i + 1] = new.y;
                    velocity += self.w.column(2 * i) * delta.x + self.w.column(2 * i + 1) * delta.y;
                }
            }
            let residual = self.coulomb_residual(&lambda, &velocity) / velocity_scale;
            residual_history.push(residual);
            merit_history.push(0.5 * lambda.dot(&(&velocity + self.q)));

            let done = residual <= opts.tol;
            if done || iter.is_power_of_two() || iter == opts.max_iter {
                if let Some(out) = self.polish(&lambda) {
                    residual_history.push(law_residual(&out.lambda));
                    return NcpOutcome {
                        iterations: iter,
                        residual_history,
                        merit_history,
                        converged: true,
                        ..out
                    };
                }
            }
            if done {
                let modes = self.classify(&lambda);
                return NcpOutcome {
                    lambda,
                    modes,
                    iterations: iter,
                    residual_history,
                    merit_history,
                    polished: false,
                    converged: true,
                };
            }
        }
        // Gauss-Seidel stalled: solve the equivalent LCP by pivoting.
        if let Some(lam) = self.pivot_solve() {
            let residual = law_residual(&lam);
            residual_history.push(residual);
            if let Some(out) = self.polish(&lam) {
                residual_history.push(law_residual(&out.lambda));
                return NcpOutcome {
                    iterations: opts.max_iter,
                    residual_history,
                    merit_history,
                    converged: true,
                    ..out
                };
            }
            if residual <= opts.tol {
                return NcpOutcome {
                    modes: self.classify(&lam),
                    lambda: lam,
                    iterations: opts.max_iter,
                    residual_history,
                    merit_history,
                    polished: false,
                    converged: true,
                };
            }
        }
        let modes = self.classify(&lambda);
        NcpOutcome {
            lambda,
            modes,
            iterations: opts.max_iter,
            residual_history,
            merit_history,
            polished: false,
            converged: false,
        }
    }

    /// Planar Coulomb contact as an LCP over `(λ_n, λ_t⁺, λ_t⁻, β)` per contact, where
    /// `β` bounds the slip speed, solved with Lemke's method.
    fn pivot_solve(&self) -> Option<DVector<f64>> {
        let c = self.n_contacts();
        let mut m = DMatrix::zeros(4 * c, 4 * c);
        let mut q = DVector::zeros(4 * c);
        let (n0, p0, m0, b0) = (0, c, 2 * c, 3 * c);
        for i in 0..c {
            for j in 0..c {
                let wnn = self.w[(2 * i, 2 * j)];
                let wnt = self.w[(2 * i, 2 * j + 1)];
                let wtn = self.w[(2 * i + 1, 2 * j)];
                let wtt = self.w[(2 * i + 1, 2 * j + 1)];
                m[(n0 + i, n0 + j)] = wnn;
                m[(n0 + i, p0 + j)] = wnt;
                m[(n0 + i, m0 + j)] = -wnt;
                m[(p0 + i, n0 + j)] = wtn;
                m[(p0 + i, p0 + j)] = wtt;
                m[(p0 + i, m0 + j)] = -wtt;
                m[(m0 + i, n0 + j)] = -wtn;
                m[(m0 + i, p0 + j)] = -wtt;
                m[(m0 + i, m0 + j)] = wtt;
            }
            m[(p0 + i, b0 + i)] = 1.0;
            m[(m0 + i, b0 + i)] = 1.0;
            m[(b0 + i, n0 + i)] = self.mu[i];
            m[(b0 + i, p0 + i)] = -1.0;
            m[(b0 + i, m0 + i)] = -1.0;
            q[n0 + i] = self.q[2 * i];
            q[p0 + i] = self.q[2 * i + 1];
            q[m0 + i] = -self.q[2 * i + 1];
        }
        // A degenerate basis can end in ray termination with z0 already at zero, so the
        // returned point is judged by its LCP residual rather than the pivot status.
        let (z, _) = super::lemke::lemke(&m, &q, 50 * 4 * c + 50);
        let w = &m * &z + &q;
        let tol = 1e-10 * q.amax().max(f64::MIN_POSITIVE);
        let feasible = w.iter().all(|x| *x >= -tol);
        let complementary = z.iter().zip(w.iter()).all(|(a, b)| a.min(*b) <= tol);
        if !(feasible && complementary) {
            return None;
        }
        let mut lam = DVector::zeros(2 * c);
        for i in 0..c {
            lam[2 * i] = z[n0 + i];
            lam[2 * i + 1] = z[p0 + i] - z[m0 + i];
        }
        Some(lam)
    }

    /// Largest violation of the contact law in velocity units: normal velocity of a
    /// loaded or penetrating contact, slip of an interior sticking contact, and slip
    /// that does not oppose the friction impulse.
    pub fn coulomb_residual(&self, lambda: &DVector<f64>, velocity: &DVector<f64>) -> f64 {
        let scale = self.impulse_scale(lambda);
        let mut r: f64 = 0.0;
        for i in 0..self.n_contacts() {
            let (n, t) = (lambda[2 * i], lambda[2 * i + 1]);
            let (wn, wt) = (velocity[2 * i], velocity[2 * i + 1]);
            r = r.max(-wn);
            if n <= 1e-12 * scale {
                continue;
            }
            r = r.max(wn.abs());
            let mu = self.mu[i];
            if mu == 0.0 {
                continue;
            }
            if t.abs() < mu * n - 1e-10 * scale {
                r = r.max(wt.abs());
            } else {
                r = r.max((wt * t.signum()).max(0.0));
            }
        }
        r
    }

    pub fn classify(&self, lambda: &DVector<f64>) -> Vec<ContactMode> {
        let scale = self.impulse_scale(lambda);
        (0..self.n_contacts())
            .map(|i| {
                let (n, t) = (lambda[2 * i], lambda[2 * i + 1]);
                let mu = self.mu[i];
                if n <= 1e-12 * scale {
                    ContactMode::Open
                } else if mu == 0.0 || t.abs() < mu * n - 1e-10 * scale {
                    ContactMode::Stick
                } else {
                    ContactMode::slide(-t)
                }
            })
            .collect()
    }

    /// Solve the linear system implied by a mode assignment, closest to `start`.
    fn solve_modes(&self, modes: &[ContactMode], start: &DVector<f64>) -> Option<DVector<f64>> {
        let c = self.n_contacts();
        let mut a = DMatrix::zeros(2 * c, 2 * c);
        let mut b = DVector::zeros(2 * c);
        for (i, mode) in modes.iter().enumerate() {
            let (rn, rt) = (2 * i, 2 * i + 1);
            match mode {
                ContactMode::Open => {
                    a[(rn, rn)] = 1.0;
                    a[(rt, rt)] = 1.0;
                }
                _ => {
                    a.row_mut(rn).copy_from(&self.w.row(rn));
                    b[rn] = -self.q[rn];
                    if self.mu[i] == 0.0 {
                        a[(rt, rt)] = 1.0;
                    } else if let Some(s) = mode.slide_sign() {
                        a[(rt, rt)] = 1.0;
                        a[(rt, rn)] = s * self.mu[i];
                    } else {
                        a.row_mut(rt).copy_from(&self.w.row(rt));
                        b[rt] = -self.q[rt];
                    }
                }
            }
        }
        min_change_solve(&a, &b, start, 1e-9)
    }

    /// Active-set polish: repeatedly solve the mode system and repair violated modes.
    pub fn polish(&self, lambda: &DVector<f64>) -> Option<NcpOutcome> {
        let c = self.n_contacts();
        let mut modes = self.classify(lambda);
        let vtol = self.velocity_tol();
        let mut start = lambda.clone();
        for _ in 0..(4 * c + 4) {
            let mut lam = self.solve_modes(&modes, &start)?;
            let scale = self.impulse_scale(&lam);
            let ftol = 1e-10 * scale;
            let vel = self.w * &lam + self.q;
            let mut changed = false;
            for i in 0..c {
                let (n, t) = (lam[2 * i], lam[2 * i + 1]);
                let mu = self.mu[i];
                let next = match modes[i] {
                    ContactMode::Open => (vel[2 * i] < -vtol).then_some(ContactMode::Stick),
                    _ if n < -ftol => Some(ContactMode::Open),
                    ContactMode::Stick if mu > 0.0 && t.abs() > mu * n.max(0.0) + ftol => {
                        Some(ContactMode::slide(-t))
                    }
                    m @ (ContactMode::SlidePositive | ContactMode::SlideNegative) if mu > 0.0 => {
                        let s = m.slide_sign().unwrap();
                        (s * vel[2 * i + 1] < -vtol).then_some(ContactMode::Stick)
                    }
                    _ => None,
                };
                if let Some(m) = next {
                    modes[i] = m;
                    changed = true;
                }
            }
            if changed {
                start = lam;
                continue;
            }
            // Snap to the exact mode manifolds.
            for i in 0..c {
                let mu = self.mu[i];
                match modes[i] {
                    ContactMode::Open => {
                        lam[2 * i] = 0.0;
                        lam[2 * i + 1] = 0.0;
                    }
                    m => {
                        lam[2 * i] = lam[2 * i].max(0.0);
                        if mu == 0.0 {
                            lam[2 * i + 1] = 0.0;
                        } else if let Some(s) = m.slide_sign() {
                            lam[2 * i + 1] = -s * mu * lam[2 * i];
                        } else {
                            let bound = mu * lam[2 * i];
                            lam[2 * i + 1] = lam[2 * i + 1].clamp(-bound, bound);
                        }
                    }
                }
            }
            return Some(NcpOutcome {
                lambda: lam,
                modes,
                iterations: 0,
                residual_history: Vec::new(),
                merit_history: Vec::new(),
                polished: true,
                converged: true,
            });
        }
        None
    }
}
