use std::sync::Arc;

use dgd_core::dynamics::{Clock, DgdField, FnField, Schedule};
use dgd_core::graph::Graph;
use dgd_core::integrator::{integrate, integrate_with_events, order_check, Event, IntegratorOptions, Termination};
use dgd_core::objective::{make_preset, Preset, PresetSpec};
use proptest::prelude::*;

fn rotation() -> FnField<impl Fn(f64, &[f64], &mut [f64]) + Send + Sync> {
    FnField::new(2, |_t, x: &[f64], out: &mut [f64]| {
        out[0] = -x[1];
        out[1] = x[0];
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn integration_is_deterministic(seed in 0u64..1000, tau_b in 0.0f64..0.6) {
        let obj = make_preset(&PresetSpec::new(Preset::QuarticSaddle, 3, 2).with_seed(seed)).unwrap();
        let f = DgdField::new(Arc::new(Graph::ring(3).unwrap()), Arc::new(obj), Schedule::new(0.7, tau_b).unwrap(), Clock::Original).unwrap();
        let x0: Vec<f64> = (0..6).map(|i| ((seed + i) as f64).sin()).collect();
        let a = integrate(&f, &x0, 0.0, 50.0, &IntegratorOptions::default()).unwrap();
        let b = integrate(&f, &x0, 0.0, 50.0, &IntegratorOptions::default()).unwrap();
        prop_assert_eq!(a.times, b.times);
        prop_assert_eq!(a.states, b.states);
    }

    #[test]
    fn dense_output_tracks_the_solution(r in 0.1f64..2.0, phase in 0.0f64..6.0, t in 0.0f64..10.0) {
        let tol = 1e-8;
        let x0 = [r * phase.cos(), r * phase.sin()];
        let traj = integrate(&rotation(), &x0, 0.0, 10.0, &IntegratorOptions::default().with_tol(tol).with_dense(true)).unwrap();
        let x = traj.interpolate(t).unwrap();
        let exact = [r * (phase + t).cos(), r * (phase + t).sin()];
        let err = (x[0] - exact[0]).abs().max((x[1] - exact[1]).abs());
        prop_assert!(err <= 10.0 * tol * (1.0 + r), "err {:e}", err);
    }

    #[test]
    fn times_increase_and_states_are_finite(x0 in proptest::collection::vec(-2.0f64..2.0, 2), stride in 1usize..20) {
        let traj = integrate(&rotation(), &x0, 0.0, 30.0, &IntegratorOptions::default().with_stride(stride)).unwrap();
        prop_assert!(traj.times.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(traj.states.iter().flatten().all(|v| v.is_finite()));
        prop_assert_eq!(traj.final_time(), 30.0);
        prop_assert_eq!(&traj.states[0], &x0);
    }
}

#[test]
fn rk4_has_fourth_order() {
    let f = FnField::new(1, |t, x: &[f64], out: &mut [f64]| out[0] = -t * x[0]);
    let exact = [(-0.5f64 * 4.0).exp()];
    let rep = order_check(&f, &[1.0], 0.0, 2.0, &exact, 0.2, 5).unwrap();
    assert!((3.8..=4.2).contains(&rep.slope), "slope {}", rep.slope);
}

#[test]
fn long_power_law_horizon_stays_within_step_budget() {
    let obj = make_preset(&PresetSpec::new(Preset::QuarticSaddle, 4, 2).with_seed(1)).unwrap();
    let f = DgdField::new(Arc::new(Graph::ring(4).unwrap()), Arc::new(obj), Schedule::new(0.8, 0.3).unwrap(), Clock::Original).unwrap();
    let x0: Vec<f64> = (0..8).map(|i| 0.25 * i as f64 - 1.0).collect();
    let opts = IntegratorOptions { max_steps: 20_000, ..IntegratorOptions::default() }.with_stride(usize::MAX);
    let traj = integrate(&f, &x0, 0.0, 1e4, &opts).unwrap();
    assert_eq!(traj.termination, Termination::HorizonReached);
    assert!(traj.accepted_steps < 20_000);
}

#[test]
fn events_stop_the_run() {
    let ev = [Event::new("crossed", |_t, x: &[f64]| x[1] > 0.5)];
    let traj = integrate_with_events(&rotation(), &[1.0, 0.0], 0.0, 10.0, &ev, &IntegratorOptions::default()).unwrap();
    assert_eq!(traj.termination, Termination::EventFired("crossed".into()));
    assert!(traj.final_time() < 1.0);
}

#[test]
fn invalid_options_are_rejected() {
    let bad = IntegratorOptions { rel_tol: 0.0, ..IntegratorOptions::default() };
    assert!(integrate(&rotation(), &[1.0, 0.0], 0.0, 1.0, &bad).is_err());
    assert!(integrate(&rotation(), &[1.0], 0.0, 1.0, &IntegratorOptions::default()).is_err());
}
