use std::sync::Arc;

use dgd_core::dynamics::{consensus_projection, penalized_field, Clock, DgdField, FlowField, Penalty, Schedule, TimeChange, Weight};
use dgd_core::graph::{consensus_vector, Graph};
use dgd_core::objective::{make_preset, ObjectiveSet, Preset, PresetSpec, StackedObjective};
use proptest::prelude::*;

fn schedule_strategy() -> impl Strategy<Value = Schedule> {
    (0.05f64..=1.0, 0.0f64..1.0).prop_map(|(a, frac)| Schedule::new(a, a * frac * 0.999).unwrap())
}

fn preset_strategy() -> impl Strategy<Value = Preset> {
    prop_oneof![Just(Preset::QuarticSaddle), Just(Preset::RandomQuartic), Just(Preset::QuadraticConvex)]
}

fn field(n: usize, preset: Preset, seed: u64, s: Schedule, clock: Clock) -> DgdField {
    let d = 2;
    let obj = make_preset(&PresetSpec::new(preset, n, d).with_seed(seed)).unwrap();
    DgdField::new(Arc::new(Graph::ring(n).unwrap()), Arc::new(obj), s, clock).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn per_agent_matches_kronecker(
        s in schedule_strategy(),
        preset in preset_strategy(),
        seed in 0u64..1000,
        t in 0.0f64..500.0,
        x in proptest::collection::vec(-3.0f64..3.0, 8),
    ) {
        let f = field(4, preset, seed, s, Clock::Original);
        let mut a = vec![0.0; 8];
        f.eval(t, &x, &mut a);
        let b = f.eval_kron(t, &x);
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()), "{} vs {}", u, v);
        }
    }

    #[test]
    fn consensus_term_cancels_in_the_average(
        s in schedule_strategy(),
        seed in 0u64..1000,
        t in 0.0f64..100.0,
        x in proptest::collection::vec(-3.0f64..3.0, 10),
    ) {
        let f = field(5, Preset::QuarticSaddle, seed, s, Clock::Original);
        let mut c = vec![0.0; 10];
        f.consensus_term(&x, &mut c);
        let (avg, _) = consensus_projection(&c, 5, 2).unwrap();
        prop_assert!(avg.iter().all(|v| v.abs() <= 1e-12));

        // d/dt avg = −(α/N) Σ ∇f_n(x_n).
        let mut dx = vec![0.0; 10];
        f.eval(t, &x, &mut dx);
        let (davg, _) = consensus_projection(&dx, 5, 2).unwrap();
        let grad = f.objectives().stacked_gradient(&x).unwrap();
        let (gavg, _) = consensus_projection(&grad, 5, 2).unwrap();
        let alpha = s.alpha(t);
        for i in 0..2 {
            prop_assert!((davg[i] + alpha * gavg[i]).abs() <= 1e-12 * (1.0 + gavg[i].abs()));
        }
    }

    #[test]
    fn time_change_round_trip(exponent in 0.0f64..=1.0, tau in 0.0f64..1e4) {
        let tc = TimeChange::power(exponent);
        let t = tc.forward(tau);
        let back = tc.inverse(t);
        prop_assert!((back - tau).abs() <= 1e-8 * (1.0 + tau), "{} -> {} -> {}", tau, t, back);
        let s = tc.forward(tc.inverse(t));
        prop_assert!((s - t).abs() <= 1e-8 * (1.0 + t));
    }

    #[test]
    fn time_change_is_increasing(exponent in 0.0f64..=1.0, a in 0.0f64..1e3, b in 0.0f64..1e3) {
        let tc = TimeChange::power(exponent);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(tc.forward(lo) <= tc.forward(hi));
        prop_assert!(tc.inverse_derivative(tc.forward(lo)) > 0.0);
    }

    #[test]
    fn beta_clock_ratio_decays_as_a_power(s in schedule_strategy()) {
        let tc = s.time_change(Weight::Beta);
        let tg = s.tau_gamma();
        prop_assert!(tg > 0.0);
        for k in 0..30 {
            let t = 10f64.powf(-1.0 + 0.2 * k as f64);
            let g = tc.gamma(t).unwrap();
            prop_assert!(g <= (t + 1.0).powf(-tg) * (1.0 + 1e-9), "t {} gamma {} bound {}", t, g, (t + 1.0).powf(-tg));
        }
    }

    #[test]
    fn consensus_of_critical_points_is_an_equilibrium(n in 2usize..6, beta in 0.1f64..100.0, which in 0usize..3) {
        let obj = make_preset(&PresetSpec::new(Preset::QuarticSaddle, n, 2)).unwrap();
        let a = [[0.0, 0.0], [0.0, 2f64.sqrt()], [0.0, -(2f64.sqrt())]][which];
        let q = Graph::ring(n).unwrap().kron_laplacian(2);
        let f = penalized_field(StackedObjective::new(Arc::new(obj)), q, Penalty::Constant(beta)).unwrap();
        let x = consensus_vector(&a, n);
        let v = f.eval_checked(0.0, x.as_slice()).unwrap();
        prop_assert!(v.iter().all(|c| c.abs() <= 1e-12), "{:?}", v);
    }
}

#[test]
fn alpha_clock_field_is_the_penalized_field() {
    let s = Schedule::new(0.8, 0.3).unwrap();
    let n = 4;
    let obj: Arc<ObjectiveSet> = Arc::new(make_preset(&PresetSpec::new(Preset::QuarticSaddle, n, 2).with_seed(3)).unwrap());
    let g = Arc::new(Graph::ring(n).unwrap());
    let dgd = DgdField::new(g.clone(), obj.clone(), s, Clock::Alpha).unwrap();
    let pen = penalized_field(StackedObjective::new(obj), g.kron_laplacian(2), Penalty::AlphaClock(s)).unwrap();
    let x: Vec<f64> = (0..8).map(|i| 0.3 * (i as f64 - 3.5)).collect();
    for t in [0.0, 1.0, 5.0, 12.0] {
        let a = dgd.eval_checked(t, &x).unwrap();
        let b = pen.eval_checked(t, &x).unwrap();
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() <= 1e-9 * (1.0 + u.abs()), "t = {t}: {u} vs {v}");
        }
    }
}

#[test]
fn inadmissible_schedules_are_rejected() {
    assert!(Schedule::new(0.5, 0.5).is_err());
    assert!(Schedule::new(1.2, 0.3).is_err());
    assert!(Schedule::new(0.5, -0.1).is_err());
    assert!(Schedule::new(1.0, 0.0).is_ok());
}

#[test]
fn leaving_the_validity_box_is_an_error() {
    let f = field(3, Preset::QuarticSaddle, 0, Schedule::new(0.8, 0.3).unwrap(), Clock::Original);
    let mut x = vec![0.0; 6];
    x[0] = 11.0;
    assert!(f.eval_checked(0.0, &x).is_err());
    assert!(f.eval_checked(0.0, &[0.0; 5]).is_err());
}
