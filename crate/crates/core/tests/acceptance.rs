//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use dgd_core::analysis::{
    classify_limit, consensus_report_with_envelope, convert_clock, find_critical_points, gradient_bound, monte_carlo_basins, perturbation_residual,
    BasinExperiment, ClassifyOptions, CriticalPointAtlas, LimitClass,
};
use dgd_core::dynamics::{Clock, DgdField, Penalty, Schedule, Weight};
use dgd_core::graph::{consensus_vector, Graph};
use dgd_core::integrator::{integrate, IntegratorOptions, Trajectory};
use dgd_core::manifold::{
    build_chart, chart_consistency, critical_path, linearize, shooting_probe, LinearizeOptions, LinearizedSystem, ManifoldError, ManifoldProblem,
    PicardOptions, ProbeSetup, DELTA_SADDLE, TOL_S,
};
use dgd_core::objective::{make_preset, CriticalKind, ObjectiveSet, Preset, PresetSpec, SeparableQuartic, StackedObjective};
use dgd_core::selftest::run_selftest;

const N: usize = 4;
const D: usize = 2;
const HETERO_SEED: u64 = 7;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn ring() -> Arc<Graph> {
    Arc::new(Graph::ring(N).unwrap())
}

fn quartic(seed: Option<u64>) -> Arc<ObjectiveSet> {
    let mut spec = PresetSpec::new(Preset::QuarticSaddle, N, D);
    spec.seed = seed;
    Arc::new(make_preset(&spec).unwrap())
}

fn uniform(seed: u64, m: usize, half: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m).map(|_| rng.random_range(-half..=half)).collect()
}

fn atlas(obj: &ObjectiveSet) -> CriticalPointAtlas {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    find_critical_points(obj, &[(-3.0, 3.0), (-3.0, 3.0)], 64, &mut rng).unwrap()
}

/// The run shared by the consensus and perturbation criteria.
fn consensus_run() -> (DgdField, Trajectory) {
    let field = DgdField::new(ring(), quartic(None), Schedule::new(0.8, 0.3).unwrap(), Clock::Original).unwrap();
    let x0 = uniform(7, N * D, 2.0);
    let traj = integrate(&field, &x0, 0.0, 1e3, &IntegratorOptions::default()).unwrap();
    (field, traj)
}

fn consensus() -> Outcome {
    let (field, traj) = consensus_run();
    let rep = consensus_report_with_envelope(&traj, field.graph(), &field.schedule(), gradient_bound(field.objectives(), 10.0, 201), D).unwrap();
    let below = rep.envelope_holds().unwrap();
    outcome(
        rep.final_residual < 1e-3 && below,
        format!(
            "final |y_perp| = {:.3e} (< 1e-3), envelope holds at all {} samples: {below} (worst gap {:.2e})",
            rep.final_residual,
            rep.times.len(),
            rep.worst_envelope_gap().unwrap()
        ),
    )
}

fn perturbation() -> Outcome {
    let (field, traj) = consensus_run();
    let alpha_clock = convert_clock(&traj, &field.schedule().time_change(Weight::Alpha));
    let rep = perturbation_residual(&alpha_clock, field.objectives(), N, D).unwrap();
    let check = rep.descent_check(0.1);
    outcome(
        rep.final_norm() < 1e-3 && check.violations == 0,
        format!(
            "final |r| = {:.3e} (< 1e-3), increases after burn-in {} with {} beyond slack (worst excess {:.2e})",
            rep.final_norm(),
            check.increases,
            check.violations,
            check.worst_excess
        ),
    )
}

fn critical_points() -> Outcome {
    let schedule = Schedule::new(0.5, 0.0).unwrap();
    let expected = [[0.0, -2f64.sqrt()], [0.0, 0.0], [0.0, 2f64.sqrt()]];
    let mut passed = true;
    let mut parts = Vec::new();
    for (label, seed) in [("homogeneous", None), ("heterogeneous", Some(HETERO_SEED))] {
        let obj = quartic(seed);
        let at = atlas(&obj);
        let atlas_ok = at.points.len() == 3
            && at.points.iter().zip(&expected).all(|(p, e)| norm(&[p.location[0] - e[0], p.location[1] - e[1]]) < 1e-4)
            && at.saddles().count() == 1;
        let field = DgdField::new(ring(), obj.clone(), schedule, Clock::Original).unwrap();
        let results: Vec<(f64, LimitClass)> = (0..100u64)
            .into_par_iter()
            .map(|i| {
                let traj = integrate(&field, &uniform(1000 + i, N * D, 2.0), 0.0, 1e3, &IntegratorOptions::default().with_stride(usize::MAX)).unwrap();
                let avg = dgd_core::dynamics::consensus_projection(traj.final_state(), N, D).unwrap().0;
                let class = classify_limit(&traj, &obj, &at, N, D, &ClassifyOptions::default()).unwrap();
                (norm(&obj.sum_gradient(&avg)), class)
            })
            .collect();
        let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
        let classified = results.iter().filter(|r| r.0 < 1e-4 && matches!(r.1, LimitClass::Point(_))).count();
        passed &= atlas_ok && classified == 100;
        parts.push(format!("{label}: atlas ok {atlas_ok}, {classified}/100 classified, worst |grad f| {worst:.2e}"));
    }
    outcome(passed, parts.join("; "))
}

fn basins() -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for (label, seed) in [("homogeneous", None), ("heterogeneous", Some(HETERO_SEED))] {
        let obj = quartic(seed);
        let exp = BasinExperiment {
            field: DgdField::new(ring(), obj.clone(), Schedule::new(0.5, 0.0).unwrap(), Clock::Original).unwrap(),
            atlas: atlas(&obj),
            init_box: 2.0,
            horizon: 1e3,
            integrator: IntegratorOptions::default(),
            classify: ClassifyOptions::default(),
        };
        let s = monte_carlo_basins(&exp, 200, 11).unwrap();
        passed &= s.saddle_hits == 0 && s.minimum_hits == 200 && s.unresolved == 0;
        let counts: Vec<String> = s.hits.iter().filter(|h| h.kind == CriticalKind::Minimum).map(|h| h.count.to_string()).collect();
        parts.push(format!(
            "{label}: saddle {}, minima {} ({}), unresolved {}",
            s.saddle_hits,
            s.minimum_hits,
            counts.join("+"),
            s.unresolved
        ));
    }
    outcome(passed, parts.join("; "))
}

fn probe() -> Outcome {
    let obj = quartic(None);
    let at = atlas(&obj);
    let scale = 1.0 / (N as f64).sqrt();
    let lift = |v: [f64; 2]| -> Vec<f64> { consensus_vector(&v, N).as_slice().iter().map(|x| x * scale).collect() };
    let unstable = lift([0.0, 1.0]);
    let stable = lift([1.0, 0.0]);
    let x_star = vec![0.0; N * D];
    let mut base = uniform(5, N * D, 1.0);
    let proj: f64 = base.iter().zip(&unstable).map(|(a, b)| a * b).sum();
    base.iter_mut().zip(&unstable).for_each(|(a, b)| *a -= proj * b);
    let bn = norm(&base);
    base.iter_mut().for_each(|v| *v *= 0.02 / bn);
    let setup = ProbeSetup {
        field: DgdField::new(ring(), obj, Schedule::new(0.8, 0.3).unwrap(), Clock::Original).unwrap(),
        x_star,
        label_direction: unstable.clone(),
        minima: at.minima().map(|(_, p)| consensus_vector(&p.location, N).as_slice().to_vec()).collect(),
        t0: 0.0,
        horizon: 1e3,
        integrator: IntegratorOptions::default().with_tol(1e-12),
        delta: DELTA_SADDLE,
        offset: 1e-2,
    };
    let out = match shooting_probe(&setup, &base, &unstable, (-0.5, 0.5), TOL_S) {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("unstable probe failed: {e}")),
    };
    let width = out.bracket.1 - out.bracket.0;
    let moved: Vec<f64> = base.iter().zip(&unstable).map(|(b, u)| b + out.s_star * u).collect();
    let stable_result = shooting_probe(&setup, &moved, &stable, (-0.5, 0.5), TOL_S);
    let no_boundary = matches!(stable_result, Err(ManifoldError::NoSignChange { .. }));
    outcome(
        width < 1e-6 && out.validates(DELTA_SADDLE, 0.5) && no_boundary,
        format!(
            "bracket width {width:.2e}, s* = {:.3e}, max dist at s* {:.3e} (< 0.05), s*-1e-2 -> {:.3} / s*+1e-2 -> {:.3} at minima {:?}/{:?}, stable direction boundary found: {}",
            out.s_star,
            out.at_star.max_distance,
            out.minus.final_distance,
            out.plus.final_distance,
            out.minus.nearest_minimum,
            out.plus.nearest_minimum,
            !no_boundary
        ),
    )
}

/// Linearization of the heterogeneous quartic saddle on `[10, 30]` with `points` nodes.
fn quartic_system(points: usize) -> LinearizedSystem {
    let prob = Arc::new(ManifoldProblem::dgd(&ring(), quartic(Some(HETERO_SEED)), Schedule::new(0.5, 0.0).unwrap(), &[0.0, 0.0]).unwrap());
    let (b0, b1) = (prob.penalty.value(10.0), prob.penalty.value(30.0));
    let betas: Vec<f64> = (0..80).map(|i| b0 * (b1 / b0).powf(i as f64 / 79.0)).collect();
    let path = critical_path(prob, &betas).unwrap();
    let times: Vec<f64> = (0..points).map(|i| 10.0 + 20.0 * i as f64 / (points - 1) as f64).collect();
    linearize(&path, &times, &LinearizeOptions::default()).unwrap()
}

fn stable_coords(sys: &LinearizedSystem, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ball = 0.9 * sys.constants.radius / 3.0;
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..sys.k).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let s = ball * rng.random_range(0.0..=1.0f64) / norm(&v);
            v.iter().map(|x| x * s).collect()
        })
        .collect()
}

fn contraction() -> Outcome {
    // f = x² − y²/2: z_s(t) = a e^{−2(t−t₀)}, z_u ≡ 0.
    let local = SeparableQuartic {
        quartic: vec![0.0, 0.0],
        quadratic: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, -1.0])),
        linear: vec![0.0, 0.0],
    };
    let h = StackedObjective::new(Arc::new(ObjectiveSet::new(vec![Arc::new(local)]).unwrap()));
    let prob = Arc::new(ManifoldProblem::new(h, DMatrix::zeros(2, 2), Penalty::Constant(1.0), DVector::zeros(2)).unwrap());
    let path = critical_path(prob, &[1.0]).unwrap();
    let times: Vec<f64> = (0..=400).map(|i| i as f64 * 0.05).collect();
    let lin = linearize(&path, &times, &LinearizeOptions::default()).unwrap();
    let a = 0.02;
    let sol = dgd_core::manifold::solve_stable_solution(&lin, &[a], 0.0, 20.0, &PicardOptions::default()).unwrap();
    let linear_err = sol
        .times
        .iter()
        .zip(&sol.u)
        .map(|(t, u)| (u[0] - a * (-2.0 * t).exp()).abs().max(u[1].abs()))
        .fold(0.0, f64::max);
    let linear_ok = linear_err < 1e-8 && sol.iterations == 1;

    let coarse = quartic_system(2001);
    let fine = quartic_system(4001);
    let c = fine.constants;
    let coords = stable_coords(&fine, 5, 3);
    let mut worst_ratio = 0.0f64;
    let mut worst_halving = 0.0f64;
    for a_s in &coords {
        let sf = dgd_core::manifold::solve_stable_solution(&fine, a_s, 10.0, 20.0, &PicardOptions::default()).unwrap();
        let sc = dgd_core::manifold::solve_stable_solution(&coarse, a_s, 10.0, 20.0, &PicardOptions::default()).unwrap();
        worst_ratio = worst_ratio.max(sf.contraction_ratio);
        worst_halving = worst_halving.max(sf.ode_residual / sc.ode_residual);
    }
    let quartic_ok = worst_ratio < c.contraction_bound() && c.contraction_bound() < 1.0 && c.admissible();
    outcome(
        linear_ok && quartic_ok && worst_halving <= 0.5,
        format!(
            "linear: max err {linear_err:.2e} in {} iteration(s); quartic: ratio {worst_ratio:.2e} < 2eK/sigma = {:.3e} < 1, eps {:.3e} < sigma/(6K) = {:.3e}; residual(h/2)/residual(h) <= {worst_halving:.3}",
            sol.iterations,
            c.contraction_bound(),
            c.epsilon,
            c.epsilon_limit()
        ),
    )
}

fn chart() -> Outcome {
    let sys = quartic_system(4001);
    let coords = stable_coords(&sys, 5, 3);
    let chart = build_chart(&sys, 10.0, 20.0, &coords, &PicardOptions::default()).unwrap();
    let opts = IntegratorOptions::default().with_tol(1e-12);
    let checks: Vec<_> = (0..chart.samples.len()).map(|i| chart_consistency(&sys, &chart, i, 20.0, 1e-2, &opts).unwrap()).collect();
    let stay = checks.iter().map(|c| c.on_chart_max).fold(0.0, f64::max);
    let escape = checks.iter().flat_map(|c| c.perturbed_final.iter().copied()).fold(f64::INFINITY, f64::min);
    let max_a = coords.iter().map(|a| norm(a)).fold(0.0, f64::max);
    outcome(
        checks.iter().all(|c| c.passes(DELTA_SADDLE, 0.5)) && max_a < sys.constants.radius / 3.0,
        format!(
            "{} samples with |a_s| <= {max_a:.3e} (< r/3 = {:.3e}): max on-chart distance {stay:.3e} (< 0.05), min perturbed final distance {escape:.3} (> 0.5)",
            checks.len(),
            sys.constants.radius / 3.0
        ),
    )
}

fn oracles() -> Outcome {
    let start = Instant::now();
    let report = run_selftest(0);
    let secs = start.elapsed().as_secs_f64();
    let parts: Vec<String> = report.checks.iter().map(|c| format!("{} {:.2e}/{:.0e} {}", c.name, c.worst, c.tolerance, if c.passed { "ok" } else { "FAILED" })).collect();
    outcome(report.passed() && report.checks.len() >= 5 && secs < 30.0, format!("{} in {secs:.2}s", parts.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, f64, fn() -> Outcome); 8] = [
        ("1 consensus", 10.0, consensus),
        ("2 critical-point convergence", 60.0, critical_points),
        ("3 saddle avoidance", f64::INFINITY, basins),
        ("4 shooting probe", f64::INFINITY, probe),
        ("5 contraction solver", f64::INFINITY, contraction),
        ("6 chart consistency", f64::INFINITY, chart),
        ("7 oracle suite", 30.0, oracles),
        ("8 perturbed solution", f64::INFINITY, perturbation),
    ];
    let mut failures = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let out = run();
        let secs = start.elapsed().as_secs_f64();
        let ok = out.passed && secs < budget;
        if !ok {
            failures += 1;
        }
        let limit = if budget.is_finite() { format!(" (limit {budget}s)") } else { String::new() };
        println!("{} {name} [{secs:.2}s{limit}]: {}", if ok { "PASS" } else { "FAIL" }, out.detail);
    }
    println!("{} of 8 criteria passed", 8 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
