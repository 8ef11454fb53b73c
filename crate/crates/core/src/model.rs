//! Planar serial-chain robot model.
//!
//! Generalized coordinates are `q = (base x, base z, base pitch, joint_1, .., joint_{n-1})`
//! where the base is the proximal end of link 0 and each joint angle is relative to the
//! previous link. Links are ordered tail to head; the head is the last link and the chain
//! points along +x when straight.
//!
//! Mass matrix and bias forces come from a planar recursive Newton-Euler pass. Contact
//! geometry uses one sphere per link against the flat ground plane `z = 0`.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BASE_DOF: usize = 3;

/// Default chain length used by the shipped configuration.
pub const DEFAULT_LINKS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    /// kg
    pub mass: f64,
    /// m
    pub length: f64,
    /// kg·m²
    pub inertia_about_com: f64,
    /// Distance of the center of mass from the proximal joint along the link axis.
    pub com_offset: f64,
    pub sphere_radius: f64,
    pub sphere_center_offset: f64,
}

impl LinkSpec {
    /// A uniform box-like module: COM and contact sphere at the midpoint, sphere radius
    /// equal to half the module height.
    pub fn module(mass: f64, length: f64, height: f64) -> Self {
        Self {
            mass,
            length,
            inertia_about_com: mass * (length * length + height * height) / 12.0,
            com_offset: 0.5 * length,
            sphere_radius: 0.5 * height,
            sphere_center_offset: 0.5 * length,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("link {index}: {what}")));
        let finite = [
            self.mass,
            self.length,
            self.inertia_about_com,
            self.com_offset,
            self.sphere_radius,
            self.sphere_center_offset,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return bad("non-finite parameter");
        }
        if self.mass <= 0.0 {
            return bad("mass must be > 0");
        }
        if self.length <= 0.0 {
            return bad("length must be > 0");
        }
        if self.inertia_about_com <= 0.0 {
            return bad("inertia must be > 0");
        }
        if self.sphere_radius <= 0.0 {
            return bad("sphere radius must be > 0");
        }
        if !(0.0..=self.length).contains(&self.com_offset) {
            return bad("com_offset must lie in [0, length]");
        }
        if self.sphere_radius > self.length {
            return bad("sphere radius must not exceed link length");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotModel {
    pub links: Vec<LinkSpec>,
    /// m/s², world frame (x forward, z up).
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 2],
    /// Link on which the external wrench acts; defaults to the head.
    #[serde(default)]
    pub wrench_link: Option<usize>,
    /// Offset of the wrench point from that link's proximal joint along its axis.
    #[serde(default)]
    pub wrench_offset: Option<f64>,
}

fn default_gravity() -> [f64; 2] {
    [0.0, -9.81]
}

impl Default for RobotModel {
    fn default() -> Self {
        Self::uniform(DEFAULT_LINKS, LinkSpec::module(0.6, 0.15, 0.10))
    }
}

/// Pose of one link: proximal joint position and absolute pitch.
#[derive(Debug, Clone, Copy)]
pub struct LinkFrame {
    pub origin: Vector2<f64>,
    pub angle: f64,
}

impl LinkFrame {
    pub fn axis(&self) -> Vector2<f64> {
        Vector2::new(self.angle.cos(), self.angle.sin())
    }

    pub fn point(&self, offset: f64) -> Vector2<f64> {
        self.origin + self.axis() * offset
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub t: f64,
}

impl State {
    pub fn new(q: DVector<f64>, v: DVector<f64>, t: f64) -> Self {
        Self { q, v, t }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.q.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// One sphere-versus-ground contact candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint {
    pub link_index: usize,
    /// Lowest point of the sphere, world frame.
    pub position: [f64; 2],
    /// Signed distance to the ground; negative means penetration.
    pub gap: f64,
    pub normal: [f64; 2],
    /// Row of the contact Jacobian along the ground tangent (+x).
    pub jacobian_tangent: Vec<f64>,
    /// Row of the contact Jacobian along the normal (+z).
    pub jacobian_normal: Vec<f64>,
    /// Normal velocity `n·J v` at the state the candidate was built from.
    pub normal_velocity: f64,
    /// Tangential velocity `t·J v`.
    pub tangent_velocity: f64,
    /// Second-order part of the gap change over the step, added to the linear update
    /// `gap + Δt·J_n v⁺`. Zero unless the stepper estimates it from a trial velocity.
    #[serde(default)]
    pub gap_curvature: f64,
}

pub type ContactSet = Vec<ContactPoint>;

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn perp(a: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(-a.y, a.x)
}

impl RobotModel {
    pub fn new(links: Vec<LinkSpec>, gravity: [f64; 2]) -> Result<Self> {
        let model = Self {
            links,
            gravity,
            wrench_link: None,
            wrench_offset: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn uniform(n_links: usize, link: LinkSpec) -> Self {
        Self {
            links: vec![link; n_links],
            gravity: default_gravity(),
            wrench_link: None,
            wrench_offset: None,
        }
    }

    /// A single free rigid body (ball or block). Below the chain minimum of two links, so
    /// it is checked with [`RobotModel::validate_body`] instead of [`RobotModel::validate`]; used for analytic test scenarios.
    pub fn single_body(link: LinkSpec, gravity: [f64; 2]) -> Result<Self> {
        link.validate(0)?;
        Ok(Self {
            links: vec![link],
            gravity,
            wrench_link: None,
            wrench_offset: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.len() < 2 {
            return Err(Error::invalid("a chain needs at least two links"));
        }
        self.validate_body()
    }

    /// Checks everything except the minimum chain length, so single bodies pass.
    pub fn validate_body(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(Error::invalid("model has no links"));
        }
        for (i, l) in self.links.iter().enumerate() {
            l.validate(i)?;
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::invalid("gravity must be finite"));
        }
        if let Some(k) = self.wrench_link {
            if k >= self.links.len() {
                return Err(Error::invalid(format!("wrench_link {k} out of range")));
            }
        }
        Ok(())
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn n_joints(&self) -> usize {
        self.links.len() - 1
    }

    pub fn n_q(&self) -> usize {
        self.n_joints() + BASE_DOF
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn head_index(&self) -> usize {
        self.links.len() - 1
    }

    fn gravity_vec(&self) -> Vector2<f64> {
        Vector2::new(self.gravity[0], self.gravity[1])
    }

    fn check_dim(&self, what: &str, len: usize, expected: usize) -> Result<()> {
        if len != expected {
            return Err(Error::invalid(format!(
                "{what} has dimension {len}, expected {expected}"
            )));
        }
        Ok(())
    }

    fn check_q(&self, q: &DVector<f64>) -> Result<()> {
        self.check_dim("q", q.len(), self.n_q())?;
        if !q.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("q has non-finite entries"));
        }
        Ok(())
    }

    pub fn check_state(&self, state: &State) -> Result<()> {
        self.check_q(&state.q)?;
        self.check_dim("v", state.v.len(), self.n_q())?;
        if !state.is_finite() {
            return Err(Error::invalid("state has non-finite entries"));
        }
        Ok(())
    }

    /// State of the straight chain lying on the ground at rest.
    pub fn resting_state(&self) -> State {
        let mut q = DVector::zeros(self.n_q());
        q[1] = self.links[0].sphere_radius;
        State::new(q, DVector::zeros(self.n_q()), 0.0)
    }

    pub fn link_frames(&self, q: &DVector<f64>) -> Vec<LinkFrame> {
        let mut frames = Vec::with_capacity(self.n_links());
        let mut origin = Vector2::new(q[0], q[1]);
        let mut angle = q[2];
        for (i, link) in self.links.iter().enumerate() {
            if i > 0 {
                angle += q[BASE_DOF + i - 1];
            }
            let frame = LinkFrame { origin, angle };
            origin = frame.point(link.length);
            frames.push(frame);
        }
        frames
    }

    /// Absolute angular velocity of every link.
    pub fn link_rates(&self, v: &DVector<f64>) -> Vec<f64> {
        let mut rates = Vec::with_capacity(self.n_links());
        let mut omega = v[2];
        for i in 0..self.n_links() {
            if i > 0 {
                omega += v[BASE_DOF + i - 1];
            }
            rates.push(omega);
        }
        rates
    }

    pub fn com_positions(&self, q: &DVector<f64>) -> Vec<Vector2<f64>> {
        self.link_frames(q)
            .iter()
            .zip(&self.links)
            .map(|(f, l)| f.point(l.com_offset))
            .collect()
    }

    /// Signed ground clearance of every contact sphere.
    pub fn sphere_gaps(&self, q: &DVector<f64>) -> Vec<f64> {
        self.link_frames(q)
            .iter()
            .zip(&self.links)
            .map(|(f, l)| f.point(l.sphere_center_offset).y - l.sphere_radius)
            .collect()
    }

    pub fn head_position(&self, q: &DVector<f64>) -> Vector2<f64> {
        let frames = self.link_frames(q);
        let k = self.head_index();
        frames[k].point(self.links[k].com_offset)
    }

    /// Recursive Newton-Euler inverse dynamics: generalized force required to produce
    /// acceleration `a` at `(q, v)`, optionally including gravity.
    fn inverse_dynamics(
        &self,
        frames: &[LinkFrame],
        v: &DVector<f64>,
        a: &DVector<f64>,
        with_gravity: bool,
    ) -> DVector<f64> {
        let n = self.n_links();
        let g = if with_gravity {
            self.gravity_vec()
        } else {
            Vector2::zeros()
        };

        // Outward pass: joint accelerations and COM accelerations.
        let mut omega = v[2];
        let mut alpha = a[2];
        let mut joint_acc = Vector2::new(a[0], a[1]);
        let mut alphas = Vec::with_capacity(n);
        let mut com_acc = Vec::with_capacity(n);
        for (i, (frame, link)) in frames.iter().zip(&self.links).enumerate() {
            if i > 0 {
                omega += v[BASE_DOF + i - 1];
                alpha += a[BASE_DOF + i - 1];
            }
            let e = frame.axis();
            let tangential = perp(&e) * alpha - e * (omega * omega);
            com_acc.push(joint_acc + tangential * link.com_offset);
            alphas.push(alpha);
            joint_acc += tangential * link.length;
        }

        // Inward pass: force and moment transmitted through each joint.
        let mut tau = DVector::zeros(self.n_q());
        let mut force = Vector2::zeros();
        let mut moment = 0.0;
        for i in (0..n).rev() {
            let link = &self.links[i];
            let e = frames[i].axis();
            let inertial = (com_acc[i] - g) * link.mass;
            moment += link.inertia_about_com * alphas[i]
                + cross(&(e * link.com_offset), &inertial)
                + cross(&(e * link.length), &force);
            force += inertial;
            if i > 0 {
                tau[BASE_DOF + i - 1] = moment;
            }
        }
        tau[0] = force.x;
        tau[1] = force.y;
        tau[2] = moment;
        tau
    }

    pub fn mass_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_q(q)?;
        Ok(self.mass_matrix_unchecked(q))
    }

    pub(crate) fn mass_matrix_unchecked(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let nq = self.n_q();
        let frames = self.link_frames(q);
        let zero = DVector::zeros(nq);
        let mut m = DMatrix::zeros(nq, nq);
        let mut unit = DVector::zeros(nq);
        for k in 0..nq {
            unit[k] = 1.0;
            let col = self.inverse_dynamics(&frames, &zero, &unit, false);
            m.set_column(k, &col);
            unit[k] = 0.0;
        }
        // Exact up to rounding; symmetrize so downstream Cholesky sees a symmetric matrix.
        (&m + m.transpose()) * 0.5
    }

    /// Coriolis, centrifugal and gravity terms `h(q, v)`.
    pub fn bias_forces(&self, q: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_q(q)?;
        self.check_dim("v", v.len(), self.n_q())?;
        Ok(self.bias_forces_unchecked(q, v))
    }

    pub(crate) fn bias_forces_unchecked(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let frames = self.link_frames(q);
        self.inverse_dynamics(&frames, v, &DVector::zeros(self.n_q()), true)
    }

    /// Translational Jacobian (2×n_q) of a point at `offset` along link `link`.
    pub fn point_jacobian(&self, q: &DVector<f64>, link: usize, offset: f64) -> DMatrix<f64> {
        let frames = self.link_frames(q);
        self.point_jacobian_with(&frames, link, offset)
    }

    fn point_jacobian_with(&self, frames: &[LinkFrame], link: usize, offset: f64) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(2, self.n_q());
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1.0;
        let p = frames[link].point(offset);
        for (i, frame) in frames.iter().enumerate().take(link + 1) {
            let col = if i == 0 { 2 } else { BASE_DOF + i - 1 };
            let d = perp(&(p - frame.origin));
            jac[(0, col)] = d.x;
            jac[(1, col)] = d.y;
        }
        jac
    }

    /// Angular-velocity row of link `link`.
    pub fn angular_jacobian(&self, link: usize) -> DVector<f64> {
        let mut row = DVector::zeros(self.n_q());
        row[2] = 1.0;
        for i in 1..=link {
            row[BASE_DOF + i - 1] = 1.0;
        }
        row
    }

    /// One candidate per contact sphere, with gap, Jacobian rows and velocities at `v`.
    pub fn contact_candidates(&self, q: &DVector<f64>, v: &DVector<f64>) -> Result<ContactSet> {
        self.check_q(q)?;
        self.check_dim("v", v.len(), self.n_q())?;
        Ok(self.contact_candidates_unchecked(q, v))
    }

    pub(crate) fn contact_candidates_unchecked(
        &self,
        q: &DVector<f64>,
        v: &DVector<f64>,
    ) -> ContactSet {
        let frames = self.link_frames(q);
        self.links
            .iter()
            .enumerate()
            .map(|(i, link)| {
                let center = frames[i].point(link.sphere_center_offset);
                let jac = self.point_jacobian_with(&frames, i, link.sphere_center_offset);
                let jt: Vec<f64> = jac.row(0).iter().copied().collect();
                let jn: Vec<f64> = jac.row(1).iter().copied().collect();
                let dot = |row: &[f64]| row.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>();
                ContactPoint {
                    link_index: i,
                    position: [center.x, center.y - link.sphere_radius],
                    gap: center.y - link.sphere_radius,
                    normal: [0.0, 1.0],
                    normal_velocity: dot(&jn),
                    tangent_velocity: dot(&jt),
                    gap_curvature: 0.0,
                    jacobian_tangent: jt,
                    jacobian_normal: jn,
                }
            })
            .collect()
    }

    /// Selection map `S` (n_q × n_joints): unit entries on the joint rows, zero base rows.
    pub fn actuation_map(&self) -> DMatrix<f64> {
        let nj = self.n_joints();
        let mut s = DMatrix::zeros(self.n_q(), nj);
        for j in 0..nj {
            s[(BASE_DOF + j, j)] = 1.0;
        }
        s
    }

    /// Wrench map `W(q)` (n_q × 3) for a planar wrench `(f_x, f_z, torque)` at the
    /// configured frame.
    pub fn wrench_map(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let link = self.wrench_link.unwrap_or(self.head_index());
        let offset = self.wrench_offset.unwrap_or(self.links[link].com_offset);
        let jp = self.point_jacobian(q, link, offset);
        let jw = self.angular_jacobian(link);
        let mut w = DMatrix::zeros(self.n_q(), 3);
        w.view_mut((0, 0), (self.n_q(), 2))
            .copy_from(&jp.transpose());
        w.set_column(2, &jw);
        w
    }

    /// Generalized force `S u + W(q) w`.
    pub fn actuation_and_wrench(
        &self,
        q: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_q(q)?;
        self.check_dim("u", u.len(), self.n_joints())?;
        self.check_dim("w", w.len(), 3)?;
        Ok(self.generalized_force_unchecked(q, u, w))
    }

    pub(crate) fn generalized_force_unchecked(
        &self,
        q: &DVector<f64>,
        u: &DVector<f64>,
        w: &DVector<f64>,
    ) -> DVector<f64> {
        let mut f = DVector::zeros(self.n_q());
        for (j, uj) in u.iter().enumerate() {
            f[BASE_DOF + j] = *uj;
        }
        if w.iter().any(|x| *x != 0.0) {
            f += self.wrench_map(q) * w;
        }
        f
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, v: &DVector<f64>) -> f64 {
        0.5 * v.dot(&(self.mass_matrix_unchecked(q) * v))
    }

    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        let g = self.gravity_vec();
        self.com_positions(q)
            .iter()
            .zip(&self.links)
            .map(|(c, l)| -l.mass * g.dot(c))
            .sum()
    }

    pub fn mechanical_energy(&self, state: &State) -> f64 {
        self.kinetic_energy(&state.q, &state.v) + self.potential_energy(&state.q)
    }

    /// Total horizontal linear momentum, i.e. the base-x row of `M v`.
    pub fn horizontal_momentum(&self, q: &DVector<f64>, v: &DVector<f64>) -> f64 {
        (self.mass_matrix_unchecked(q).row(0) * v)[0]
    }
}
