//! Shared fixtures and independent reference computations for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use snakesim::contact::ContactProblem;
use snakesim::model::{ContactPoint, LinkSpec, RobotModel, State, BASE_DOF};

pub const G: f64 = 9.81;

/// Solid ball with its contact sphere at the center of mass.
pub fn ball(mass: f64, radius: f64) -> RobotModel {
    RobotModel::single_body(
        LinkSpec {
            mass,
            length: 2.0 * radius,
            inertia_about_com: 0.4 * mass * radius * radius,
            com_offset: radius,
            sphere_radius: radius,
            sphere_center_offset: radius,
        },
        [0.0, -G],
    )
    .unwrap()
}

/// Ball whose base frame sits at its center, so the mass matrix is constant.
pub fn centered_ball(mass: f64, radius: f64) -> RobotModel {
    let link = LinkSpec {
        mass,
        length: 2.0 * radius,
        inertia_about_com: 0.4 * mass * radius * radius,
        com_offset: 0.0,
        sphere_radius: radius,
        sphere_center_offset: 0.0,
    };
    RobotModel::single_body(link, [0.0, -G]).unwrap()
}

/// Block whose contact point sits directly below the center of mass at a tiny radius,
/// so friction produces almost no spin.
pub fn point_block(mass: f64) -> RobotModel {
    let (l, h) = (0.2, 0.1);
    RobotModel::single_body(
        LinkSpec {
            mass,
            length: l,
            inertia_about_com: mass * (l * l + h * h) / 12.0,
            com_offset: 0.5 * l,
            sphere_radius: 1e-4,
            sphere_center_offset: 0.5 * l,
        },
        [0.0, -G],
    )
    .unwrap()
}

/// Single body resting on the ground with the given velocity.
pub fn body_state(model: &RobotModel, height: f64, v: [f64; 3]) -> State {
    let link = &model.links[0];
    let q = DVector::from_vec(vec![
        -link.sphere_center_offset,
        link.sphere_radius + height,
        0.0,
    ]);
    State::new(q, DVector::from_vec(v.to_vec()), 0.0)
}

pub fn random_chain(rng: &mut ChaCha8Rng) -> RobotModel {
    let n = rng.random_range(2..=6);
    let links = (0..n)
        .map(|_| {
            let length: f64 = rng.random_range(0.05..0.4);
            let mass = rng.random_range(0.1..2.0);
            let height = rng.random_range(0.02..length.min(0.2));
            LinkSpec {
                mass,
                length,
                inertia_about_com: mass * (length * length + height * height) / 12.0
                    * rng.random_range(0.5..2.0),
                com_offset: rng.random_range(0.0..length),
                sphere_radius: 0.5 * height,
                sphere_center_offset: rng.random_range(0.0..length),
            }
        })
        .collect();
    RobotModel::new(links, [0.0, -G]).unwrap()
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Absolute pitch of every link, from the joint-angle convention alone.
pub fn link_angles(model: &RobotModel, q: &DVector<f64>) -> Vec<f64> {
    let mut angle = q[2];
    (0..model.n_links())
        .map(|i| {
            if i > 0 {
                angle += q[BASE_DOF + i - 1];
            }
            angle
        })
        .collect()
}

/// Central-difference Jacobian of `f` at `q`.
pub fn fd_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    q: &DVector<f64>,
    h: f64,
) -> DMatrix<f64> {
    let m = f(q).len();
    let mut jac = DMatrix::zeros(m, q.len());
    for k in 0..q.len() {
        let mut qp = q.clone();
        let mut qm = q.clone();
        qp[k] += h;
        qm[k] -= h;
        jac.set_column(k, &((f(&qp) - f(&qm)) / (2.0 * h)));
    }
    jac
}

/// Mass matrix assembled from finite-difference kinematics:
/// `Σ m_i J_iᵀ J_i + I_i ω_iᵀ ω_i` with `J_i` the COM Jacobian.
pub fn fd_mass_matrix(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
    let n = model.n_q();
    let mut m = DMatrix::zeros(n, n);
    for (i, link) in model.links.iter().enumerate() {
        let com = |q: &DVector<f64>| {
            let c = model.com_positions(q)[i];
            DVector::from_vec(vec![c.x, c.y])
        };
        let angle = |q: &DVector<f64>| DVector::from_vec(vec![link_angles(model, q)[i]]);
        let jc = fd_jacobian(com, q, 1e-6);
        let jw = fd_jacobian(angle, q, 1e-6);
        m += jc.transpose() * &jc * link.mass + jw.transpose() * &jw * link.inertia_about_com;
    }
    m
}

/// `max |a − b| / max(1, max |b|)`
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1.0)
}

/// Random contact problem with `n_contacts` generic contacts on an `n`-DOF body with
/// `n ≥ 2 n_contacts`, so the contact Jacobian has full row rank and a solution exists.
pub fn random_problem(rng: &mut ChaCha8Rng, n_contacts: usize) -> ContactProblem {
    let n = rng.random_range((2 * n_contacts).max(3)..=7);
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mass_matrix = &a * a.transpose() + DMatrix::identity(n, n) * rng.random_range(0.05..1.0);
    let dt = 1e-3;
    let free_velocity = random_vector(rng, n, 1.0);
    let contacts = (0..n_contacts)
        .map(|k| {
            let jn: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let jt: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let gap = if rng.random_bool(0.7) {
                -rng.random_range(0.0..1e-4)
            } else {
                rng.random_range(0.0..1e-3)
            };
            let vn = rng.random_range(-1.0..0.5);
            let gap_curvature = if rng.random_bool(0.3) {
                rng.random_range(-1e-5..1e-5)
            } else {
                0.0
            };
            ContactPoint {
                link_index: k,
                position: [0.0, gap],
                gap,
                normal: [0.0, 1.0],
                jacobian_tangent: jt,
                jacobian_normal: jn,
                normal_velocity: vn,
                tangent_velocity: 0.0,
                gap_curvature,
            }
        })
        .collect();
    ContactProblem {
        schema_version: snakesim::contact::PROBLEM_SCHEMA_VERSION,
        mass_matrix,
        free_velocity,
        contacts,
        dt,
        mu: (0..n_contacts)
            .map(|_| rng.random_range(0.0..1.2))
            .collect(),
        restitution: (0..n_contacts)
            .map(|_| {
                if rng.random_bool(0.5) {
                    0.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect(),
        warm_start: None,
    }
}

/// Per-contact law for the enumeration oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Mode {
    Open,
    Stick,
    /// Sliding with positive (+1) or negative (−1) tangential velocity.
    Slide(f64),
}

/// Every solution of the Coulomb contact problem found by enumerating all
/// open/stick/slide mode combinations and solving each as a linear system.
/// Returns the post-step velocities of the feasible combinations.
pub fn enumerate_solutions(p: &ContactProblem, tol: f64) -> Vec<DVector<f64>> {
    let c = p.contacts.len();
    let n = p.mass_matrix.nrows();
    let minv = p.mass_matrix.clone().try_inverse().unwrap();
    let mut jac = DMatrix::zeros(2 * c, n);
    for (i, cp) in p.contacts.iter().enumerate() {
        for k in 0..n {
            jac[(2 * i, k)] = cp.jacobian_normal[k];
            jac[(2 * i + 1, k)] = cp.jacobian_tangent[k];
        }
    }
    let w = &jac * &minv * jac.transpose();
    let mut bias = &jac * &p.free_velocity;
    for (i, cp) in p.contacts.iter().enumerate() {
        let mut b = (cp.gap + cp.gap_curvature) / p.dt;
        if cp.gap <= 0.0 {
            b += p.restitution[i] * cp.normal_velocity.min(0.0);
        }
        bias[2 * i] += b;
    }
    let modes = [Mode::Open, Mode::Stick, Mode::Slide(1.0), Mode::Slide(-1.0)];
    let mut found = Vec::new();
    for combo in 0..4usize.pow(c as u32) {
        let assign: Vec<Mode> = (0..c)
            .map(|i| modes[(combo / 4usize.pow(i as u32)) % 4])
            .collect();
        // Unknown impulses: λ = E x, with equations on the closed velocity rows.
        let mut cols: Vec<DVector<f64>> = Vec::new();
        let mut rows: Vec<usize> = Vec::new();
        for (i, m) in assign.iter().enumerate() {
            match *m {
                Mode::Open => {}
                Mode::Stick => {
                    let mut e = DVector::zeros(2 * c);
                    e[2 * i] = 1.0;
                    cols.push(e);
                    let mut e = DVector::zeros(2 * c);
                    e[2 * i + 1] = 1.0;
                    cols.push(e);
                    rows.extend([2 * i, 2 * i + 1]);
                }
                Mode::Slide(s) => {
                    let mut e = DVector::zeros(2 * c);
                    e[2 * i] = 1.0;
                    e[2 * i + 1] = -s * p.mu[i];
                    cols.push(e);
                    rows.push(2 * i);
                }
            }
        }
        let k = cols.len();
        let lambda = if k == 0 {
            DVector::zeros(2 * c)
        } else {
            let e = DMatrix::from_columns(&cols);
            let we = &w * &e;
            let a = DMatrix::from_fn(k, k, |r, col| we[(rows[r], col)]);
            let b = DVector::from_fn(k, |r, _| -bias[rows[r]]);
            match a.lu().solve(&b) {
                Some(x) => e * x,
                None => continue,
            }
        };
        let vel = &w * &lambda + &bias;
        let scale = bias.amax().max(1.0);
        let ok = assign.iter().enumerate().all(|(i, m)| {
            let (ln, lt) = (lambda[2 * i], lambda[2 * i + 1]);
            let (wn, wt) = (vel[2 * i], vel[2 * i + 1]);
            match *m {
                Mode::Open => wn >= -tol * scale,
                Mode::Stick => ln >= -tol && lt.abs() <= p.mu[i] * ln + tol,
                Mode::Slide(s) => ln >= -tol && s * wt >= -tol * scale,
            }
        });
        if ok {
            found.push(&p.free_velocity + &minv * jac.transpose() * lambda);
        }
    }
    found
}

/// Contact problem of a random chain lying near the ground, with `n_contacts` of its
/// spheres (chosen at random) in the active set.
pub fn chain_problem(rng: &mut ChaCha8Rng, n_contacts: usize) -> ContactProblem {
    let model = loop {
        let m = random_chain(rng);
        if m.n_q() >= 2 * n_contacts && m.n_links() >= n_contacts {
            break m;
        }
    };
    let mut q = random_vector(rng, model.n_q(), 0.1);
    q[0] = rng.random_range(-1.0..1.0);
    q[1] = model.links[0].sphere_radius;
    let v = random_vector(rng, model.n_q(), 1.0);
    let mut links: Vec<usize> = (0..model.n_links()).collect();
    for i in (1..links.len()).rev() {
        links.swap(i, rng.random_range(0..=i));
    }
    links.truncate(n_contacts);
    links.sort_unstable();
    let candidates = model.contact_candidates(&q, &v).unwrap();
    let contacts: Vec<ContactPoint> = links
        .iter()
        .map(|&i| {
            let mut c = candidates[i].clone();
            c.gap = rng.random_range(-1e-4..1e-3);
            c
        })
        .collect();
    let dt = 1e-3;
    let m = model.mass_matrix(&q).unwrap();
    let minv_f = m
        .clone()
        .cholesky()
        .unwrap()
        .solve(&-model.bias_forces(&q, &v).unwrap());
    ContactProblem {
        schema_version: snakesim::contact::PROBLEM_SCHEMA_VERSION,
        mass_matrix: m,
        free_velocity: &v + minv_f * dt,
        contacts,
        dt,
        mu: vec![rng.random_range(0.0..1.2); n_contacts],
        restitution: vec![if rng.random_bool(0.5) { 0.0 } else { 0.5 }; n_contacts],
        warm_start: None,
    }
}

/// Half generic problems, half chain-on-ground problems, each with 1 to 3 contacts.
pub fn mixed_problem(rng: &mut ChaCha8Rng) -> ContactProblem {
    let c = rng.random_range(1..=3);
    if rng.random_bool(0.5) {
        random_problem(rng, c)
    } else {
        chain_problem(rng, c)
    }
}
