mod common;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;
use snakesim::model::{RobotModel, State};
use snakesim::stepper::{rk4_step, simulate, Passive, StepConfig};
use snakesim::RunConfig;

fn frictionless() -> StepConfig {
    StepConfig {
        mu: 0.0,
        ..Default::default()
    }
}

/// Default snake with perturbed joints, released `height` above the ground.
fn dropped_snake(seed: u64, noise: f64, height: f64) -> (RobotModel, State) {
    let mut cfg = RunConfig::default();
    cfg.initial.joint_noise = noise;
    cfg.run.seed = seed;
    let model = cfg.model().unwrap();
    let mut state = cfg.initial_state(&model);
    state.q[1] += height;
    (model, state)
}

#[test]
fn frictionless_ball_keeps_its_horizontal_momentum() {
    let model = centered_ball(1.3, 0.05);
    let state = body_state(&model, 0.3, [1.7, -0.5, 4.0]);
    for e in [0.0, 0.7] {
        let cfg = StepConfig {
            restitution: e,
            ..frictionless()
        };
        let log = simulate(&model, &state, &mut Passive, 1.0, &cfg).unwrap();
        assert!(log.samples.iter().any(|s| s.f_n[0] > 0.0));
        let p0 = model.horizontal_momentum(&state.q, &state.v);
        for s in &log.samples {
            let q = DVector::from_vec(s.q.clone());
            let v = DVector::from_vec(s.v.clone());
            let p = model.horizontal_momentum(&q, &v);
            assert!((p - p0).abs() <= 1e-8, "t = {}: {p} vs {p0}", s.t);
        }
    }
}

#[test]
fn frictionless_contact_impulses_carry_no_horizontal_momentum() {
    for seed in 0..4 {
        let (model, state) = dropped_snake(seed, 0.3, 0.05);
        let log = simulate(&model, &state, &mut Passive, 0.5, &frictionless()).unwrap();
        assert!(log.steps.iter().any(|s| s.active_contacts > 0));
        for (k, s) in log.steps.iter().enumerate() {
            assert!(
                s.contact_momentum_x.abs() <= 1e-8,
                "step {k}: {:e}",
                s.contact_momentum_x
            );
        }
    }
}

#[test]
fn rk4_conserves_energy_in_free_flight() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let dt: f64 = 1e-4;
    for _ in 0..3 {
        let model = random_chain(&mut rng);
        let mut q = random_vector(&mut rng, model.n_q(), 0.8);
        q[1] = 2.0;
        let v = random_vector(&mut rng, model.n_q(), 1.0);
        let mut state = State::new(q, v, 0.0);
        let e0 = model.mechanical_energy(&state);
        let u = DVector::zeros(model.n_joints());
        let w = DVector::zeros(3);
        for _ in 0..(1.0 / dt).round() as usize {
            state = rk4_step(&model, &state, &u, &w, dt).unwrap();
        }
        let drift = (model.mechanical_energy(&state) - e0).abs() / e0.abs();
        assert!(drift <= 1e-5, "relative drift {drift:e}");
    }
}

/// Largest increase of mechanical energy between consecutive samples.
fn largest_energy_rise(energy: &[f64]) -> f64 {
    energy
        .windows(2)
        .fold(f64::NEG_INFINITY, |a, w| a.max(w[1] - w[0]))
}

#[test]
fn inelastic_passive_ball_never_gains_energy() {
    let model = centered_ball(1.0, 0.05);
    let state = body_state(&model, 0.2, [2.0, 0.0, -3.0]);
    let log = simulate(&model, &state, &mut Passive, 1.0, &StepConfig::default()).unwrap();
    assert!(log.samples.iter().any(|s| s.f_n[0] > 0.0));
    let energy: Vec<f64> = log.samples.iter().map(|s| s.energy).collect();
    assert!(
        largest_energy_rise(&energy) <= 0.0,
        "{:e}",
        largest_energy_rise(&energy)
    );
}

#[test]
fn inelastic_contact_impulses_remove_energy_from_the_snake() {
    for (seed, mu) in [(0, 0.0), (1, 0.0), (2, 0.5), (3, 0.5)] {
        let (model, state) = dropped_snake(seed, 0.3, 0.02);
        let cfg = StepConfig {
            mu,
            ..Default::default()
        };
        let log = simulate(&model, &state, &mut Passive, 1.0, &cfg).unwrap();
        assert!(log.steps.iter().any(|s| s.active_contacts > 0));
        for (k, s) in log.steps.iter().enumerate() {
            assert!(
                s.contact_energy <= 1e-12,
                "seed {seed}, step {k}: {:e}",
                s.contact_energy
            );
        }
    }
}

#[test]
fn continuous_energy_rate_vanishes_without_forcing() {
    // dE/dt = vᵀ M v̇ + ½ vᵀ Ṁ v + ∇V · v with M v̇ = −h(q, v); Ṁ from finite differences.
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let model = random_chain(&mut rng);
        let q = random_vector(&mut rng, model.n_q(), 1.5);
        let v = random_vector(&mut rng, model.n_q(), 2.0);
        let n = model.n_q();
        let step = 1e-6;
        let mut mdot = nalgebra::DMatrix::zeros(n, n);
        for k in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[k] += step;
            qm[k] -= step;
            mdot += (model.mass_matrix(&qp).unwrap() - model.mass_matrix(&qm).unwrap())
                * (v[k] / (2.0 * step));
        }
        let grad_v = fd_jacobian(
            |q| DVector::from_element(1, model.potential_energy(q)),
            &q,
            step,
        );
        let h = model.bias_forces(&q, &v).unwrap();
        let rate = -v.dot(&h) + 0.5 * v.dot(&(&mdot * &v)) + (grad_v * &v)[0];
        let scale = v.dot(&h).abs().max(1.0);
        assert!(rate.abs() / scale <= 1e-6, "{:e}", rate / scale);
    }
}
