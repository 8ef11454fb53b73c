use std::f64::consts::PI;

use nalgebra::DVector;

use snakesim::gait::{desired_joint_state, pd_torques, GaitParams, GaitPd, PdGains};
use snakesim::stepper::{simulate, StepConfig};
use snakesim::RunConfig;

#[test]
fn rate_is_the_time_derivative_of_the_angles() {
    let p = GaitParams::default();
    let h = 1e-6;
    for &t in &[0.1, 0.5, 0.99, 1.0, 1.3, 4.7, 9.9] {
        let (_, rate) = desired_joint_state(&p, 11, t);
        let fd = (desired_joint_state(&p, 11, t + h).0 - desired_joint_state(&p, 11, t - h).0)
            / (2.0 * h);
        let err = (&rate - &fd).amax() / rate.amax().max(1.0);
        assert!(err < 1e-6, "t = {t}: {err:e}");
    }
}

#[test]
fn zero_phase_offset_moves_all_joints_together() {
    let p = GaitParams {
        phase_offset_per_joint: 0.0,
        ..Default::default()
    };
    for &t in &[0.3, 2.0, 7.5] {
        let (theta, rate) = desired_joint_state(&p, 11, t);
        assert!(theta.iter().all(|x| *x == theta[0]));
        assert!(rate.iter().all(|x| *x == rate[0]));
    }
}

#[test]
fn wave_repeats_every_k_joints_when_the_offset_divides_a_turn() {
    for k in [2usize, 3, 4, 6] {
        let p = GaitParams {
            phase_offset_per_joint: 2.0 * PI / k as f64,
            ..Default::default()
        };
        for &t in &[0.4, 1.5, 6.1] {
            let (theta, rate) = desired_joint_state(&p, 12, t);
            for j in 0..12 - k {
                assert!((theta[j] - theta[j + k]).abs() < 1e-12);
                assert!((rate[j] - rate[j + k]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn amplitude_ramps_up_then_holds() {
    let p = GaitParams::default();
    let peak = |t0: f64| {
        (0..200)
            .map(|i| desired_joint_state(&p, 11, t0 + i as f64 * 1e-3).0.amax())
            .fold(0.0, f64::max)
    };
    assert!(peak(0.0) < 0.5 * p.amplitude);
    let settled = peak(3.0);
    assert!(settled <= p.amplitude + 1e-15 && settled > 0.99 * p.amplitude);
}

#[test]
fn pd_torques_saturate_exactly_at_the_limit() {
    let cfg = RunConfig::default();
    let model = cfg.model().unwrap();
    let state = model.resting_state();
    let nj = model.n_joints();
    let desired = (
        DVector::from_fn(nj, |j, _| if j % 2 == 0 { 1.0 } else { -1.0 }),
        DVector::zeros(nj),
    );
    let u = pd_torques(&desired, &state, &cfg.pd).unwrap();
    for j in 0..nj {
        assert_eq!(u[j], if j % 2 == 0 { 10.0 } else { -10.0 });
    }
}

#[test]
fn simulated_torques_respect_the_limit_and_reach_it() {
    // Stiff gains make the controller saturate during the ramp.
    let cfg = RunConfig::default();
    let model = cfg.model().unwrap();
    let gains = PdGains {
        kp: 200.0,
        ..cfg.pd
    };
    let mut ctl = GaitPd {
        params: cfg.gait,
        gains,
    };
    let log = simulate(
        &model,
        &model.resting_state(),
        &mut ctl,
        1.0,
        &StepConfig::default(),
    )
    .unwrap();
    let all: Vec<f64> = log
        .samples
        .iter()
        .flat_map(|s| s.u.iter().copied())
        .collect();
    assert!(all.iter().all(|u| u.abs() <= 10.0));
    assert!(all.contains(&10.0) && all.contains(&-10.0));
}
