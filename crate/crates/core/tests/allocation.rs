use nalgebra::DVector;

use snakesim::config::TorqueMode;
use snakesim::contact::Tracking;
use snakesim::gait::{desired_joint_state, pd_torques, GaitAllocation, GaitPd};
use snakesim::model::BASE_DOF;
use snakesim::stepper::{simulate, Controller, Stepper};
use snakesim::RunConfig;

/// States visited by the PD gait, every `every` steps over `horizon` seconds.
fn pd_states(cfg: &RunConfig, horizon: f64, every: usize) -> Vec<snakesim::State> {
    let model = cfg.model().unwrap();
    let mut ctl = GaitPd {
        params: cfg.gait,
        gains: cfg.pd,
    };
    let log = simulate(
        &model,
        &cfg.initial_state(&model),
        &mut ctl,
        horizon,
        &cfg.stepping,
    )
    .unwrap();
    log.samples
        .iter()
        .step_by(every)
        .map(|s| {
            snakesim::State::new(
                DVector::from_vec(s.q.clone()),
                DVector::from_vec(s.v.clone()),
                s.t,
            )
        })
        .collect()
}

#[test]
fn allocation_run_round_trips_through_the_impulse_solver() {
    let mut cfg = RunConfig::default();
    cfg.run.mode = TorqueMode::Allocation;
    cfg.run.horizon = Some(0.5);
    let model = cfg.model().unwrap();
    let log = cfg.simulate(&model, &cfg.initial_state(&model)).unwrap();
    assert_eq!(log.steps.len(), 500);
    for (k, s) in log.steps.iter().enumerate() {
        let rt = s
            .allocation_roundtrip
            .expect("allocation steps record the round trip");
        assert!(rt <= 1e-6, "step {k}: {rt:e}");
    }
    assert!(log
        .samples
        .iter()
        .flat_map(|s| &s.u)
        .all(|u| u.abs() <= 10.0));
}

#[test]
fn allocated_effort_never_exceeds_the_pd_effort_for_the_same_motion() {
    let cfg = RunConfig::default();
    let model = cfg.model().unwrap();
    let alloc = GaitAllocation {
        params: cfg.gait,
        gains: cfg.pd,
        step: cfg.stepping.clone(),
        mode: cfg.tracking_mode(),
    };
    let mut checked = 0;
    for state in pd_states(&cfg, 2.0, 50) {
        let (target, u_pd) = alloc.target(&model, &state).unwrap();
        let desired = desired_joint_state(&cfg.gait, model.n_joints(), state.t);
        assert_eq!(u_pd, pd_torques(&desired, &state, &cfg.pd).unwrap());
        let mut stepper = Stepper::new(&model, cfg.stepping.clone()).unwrap();
        let (result, solution, roundtrip) = stepper
            .step_allocated(
                &state,
                &Tracking::Constraint {
                    target: target.clone(),
                },
                Some(&u_pd),
                &DVector::zeros(3),
            )
            .unwrap();
        assert!(roundtrip <= 1e-6);
        assert!(
            solution.objective <= u_pd.norm_squared() * (1.0 + 1e-9) + 1e-9,
            "t = {}: {} > {}",
            state.t,
            solution.objective,
            u_pd.norm_squared()
        );
        let reached = &result.state.v.as_slice()[BASE_DOF..];
        let miss = reached
            .iter()
            .zip(&target)
            .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        assert!(miss <= 1e-6, "t = {}: tracking miss {miss:e}", state.t);
        checked += 1;
    }
    assert!(checked >= 40);
}

#[test]
fn cost_tracking_trades_effort_for_accuracy() {
    let cfg = RunConfig::default();
    let model = cfg.model().unwrap();
    let state = pd_states(&cfg, 1.5, 1500).pop().unwrap();
    let alloc = GaitAllocation {
        params: cfg.gait,
        gains: cfg.pd,
        step: cfg.stepping.clone(),
        mode: cfg.tracking_mode(),
    };
    let (target, u_pd) = alloc.target(&model, &state).unwrap();
    let mut effort = Vec::new();
    for weight in [1.0, 100.0, 1e4] {
        let mut stepper = Stepper::new(&model, cfg.stepping.clone()).unwrap();
        let (_, sol, rt) = stepper
            .step_allocated(
                &state,
                &Tracking::Cost {
                    target: target.clone(),
                    weight,
                },
                Some(&u_pd),
                &DVector::zeros(3),
            )
            .unwrap();
        assert!(rt <= 1e-6);
        effort.push(sol.objective);
    }
    assert!(
        effort[0] <= effort[1] + 1e-9 && effort[1] <= effort[2] + 1e-9,
        "{effort:?}"
    );
}

#[test]
fn pure_effort_minimisation_is_zero_torque_when_resting() {
    let cfg = RunConfig::default();
    let model = cfg.model().unwrap();
    let mut stepper = Stepper::new(&model, cfg.stepping.clone()).unwrap();
    let (_, sol, rt) = stepper
        .step_allocated(
            &model.resting_state(),
            &Tracking::None,
            None,
            &DVector::zeros(3),
        )
        .unwrap();
    assert!(rt <= 1e-6);
    assert!(sol.u.iter().all(|u| u.abs() <= 1e-6), "{:?}", sol.u);
}

#[test]
fn allocation_controller_requests_allocation() {
    let cfg = RunConfig::default();
    let model = cfg.model().unwrap();
    let mut ctl = GaitAllocation {
        params: cfg.gait,
        gains: cfg.pd,
        step: cfg.stepping.clone(),
        mode: cfg.tracking_mode(),
    };
    let command = ctl.command(&model, &model.resting_state()).unwrap();
    let snakesim::stepper::Command::Allocate { tracking, guess } = command else {
        panic!()
    };
    assert!(matches!(tracking, Tracking::Constraint { .. }));
    assert_eq!(guess.map(|u| u.len()), Some(model.n_joints()));
}
