mod common;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use snakesim::model::{LinkSpec, RobotModel};

const SAMPLES: usize = 1000;

fn random_config(rng: &mut ChaCha8Rng, model: &RobotModel) -> DVector<f64> {
    let mut q = random_vector(rng, model.n_q(), 1.5);
    q[0] *= 5.0;
    q[1] = rng.random_range(-0.5..1.0);
    q
}

#[test]
fn mass_matrix_matches_finite_difference_kinematics() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..SAMPLES {
        let model = random_chain(&mut rng);
        let q = random_config(&mut rng, &model);
        let m = model.mass_matrix(&q).unwrap();
        worst = worst.max(rel_err(&m, &fd_mass_matrix(&model, &q)));
    }
    assert!(worst <= 1e-6, "worst relative error {worst:e}");
}

#[test]
fn mass_matrix_is_symmetric_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..SAMPLES {
        let model = random_chain(&mut rng);
        let q = random_config(&mut rng, &model);
        let m = model.mass_matrix(&q).unwrap();
        assert_eq!(m, m.transpose());
        assert!(m.clone().cholesky().is_some());
        // Kinetic energy of a pure base translation is ½ (Σm) |v|².
        let mut v = DVector::zeros(model.n_q());
        v[0] = 0.3;
        v[1] = -0.4;
        let ke = model.kinetic_energy(&q, &v);
        assert!((ke - 0.5 * model.total_mass() * 0.25).abs() < 1e-12);
    }
}

#[test]
fn contact_jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for _ in 0..SAMPLES {
        let model = random_chain(&mut rng);
        let q = random_config(&mut rng, &model);
        let v = DVector::zeros(model.n_q());
        let candidates = model.contact_candidates(&q, &v).unwrap();
        for (i, c) in candidates.iter().enumerate() {
            let point = |q: &DVector<f64>| {
                let p = model.contact_candidates(q, &v).unwrap()[i].position;
                DVector::from_vec(p.to_vec())
            };
            let fd = fd_jacobian(point, &q, 1e-6);
            let analytic = DMatrix::from_rows(&[
                DVector::from_vec(c.jacobian_tangent.clone()).transpose(),
                DVector::from_vec(c.jacobian_normal.clone()).transpose(),
            ]);
            worst = worst.max(rel_err(&analytic, &fd));
        }
    }
    assert!(worst <= 1e-6, "worst relative error {worst:e}");
}

#[test]
fn gravity_term_is_potential_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..200 {
        let model = random_chain(&mut rng);
        let q = random_config(&mut rng, &model);
        let h = model.bias_forces(&q, &DVector::zeros(model.n_q())).unwrap();
        let grad = fd_jacobian(
            |q| DVector::from_element(1, model.potential_energy(q)),
            &q,
            1e-6,
        );
        let err = (&h - grad.transpose()).amax() / h.amax().max(1.0);
        assert!(err < 1e-6, "{err:e}");
    }
}

#[test]
fn velocity_terms_match_lagrangian_identity() {
    // h(q, v) − g(q) = Ṁ v − ½ ∂(vᵀ M v)/∂q, with Ṁ = Σ_k ∂M/∂q_k v_k.
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..200 {
        let model = random_chain(&mut rng);
        let q = random_config(&mut rng, &model);
        let v = random_vector(&mut rng, model.n_q(), 2.0);
        let n = model.n_q();
        let zero = DVector::zeros(n);
        let coriolis = model.bias_forces(&q, &v).unwrap() - model.bias_forces(&q, &zero).unwrap();
        let step = 1e-6;
        let mut mdot = DMatrix::zeros(n, n);
        for k in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += step;
            qm[k] -= step;
            let dm =
                (model.mass_matrix(&qp).unwrap() - model.mass_matrix(&qm).unwrap()) / (2.0 * step);
            mdot += dm * v[k];
        }
        let grad = fd_jacobian(
            |q| DVector::from_element(1, model.kinetic_energy(q, &v)),
            &q,
            step,
        );
        let expected = mdot * &v - grad.transpose();
        let err = (&coriolis - &expected).amax() / expected.amax().max(1.0);
        assert!(err < 1e-6, "{err:e}");
    }
}

#[test]
fn two_link_chain_matches_closed_form_inertia() {
    // Two uniform rods, base fixed at the origin; the joint-space block of M for
    // (base pitch, joint) follows the textbook double-pendulum expressions.
    let (m, l) = (1.3, 0.7);
    let link = LinkSpec {
        mass: m,
        length: l,
        inertia_about_com: m * l * l / 12.0,
        com_offset: 0.5 * l,
        sphere_radius: 0.01,
        sphere_center_offset: 0.5 * l,
    };
    let model = RobotModel::new(vec![link.clone(), link], [0.0, -G]).unwrap();
    for theta2 in [0.0, 0.4, -1.1, 2.5] {
        let q = DVector::from_vec(vec![0.2, 0.1, 0.3, theta2]);
        let mm = model.mass_matrix(&q).unwrap();
        let i_c = m * l * l / 12.0;
        let lc = 0.5 * l;
        let m11 = 2.0 * i_c + m * lc * lc + m * (l * l + lc * lc + 2.0 * l * lc * theta2.cos());
        let m12 = i_c + m * (lc * lc + l * lc * theta2.cos());
        let m22 = i_c + m * lc * lc;
        assert!((mm[(2, 2)] - m11).abs() < 1e-12);
        assert!((mm[(2, 3)] - m12).abs() < 1e-12);
        assert!((mm[(3, 3)] - m22).abs() < 1e-12);
    }
}
