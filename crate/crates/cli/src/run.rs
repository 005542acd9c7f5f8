use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use dgd_core::analysis::{
    consensus_report_with_envelope, consensus_residual, find_critical_points, gradient_bound, monte_carlo_basins, perturbation_residual,
    sample_diagnostics, BasinExperiment, CriticalPointAtlas,
};
use dgd_core::dynamics::{Clock, DgdField};
use dgd_core::graph::consensus_vector;
use dgd_core::integrator::integrate;
use dgd_core::manifold::{
    build_chart, chart_consistency, critical_path, forcing_term, linearize, shooting_probe, LinearizeOptions, ManifoldError, ManifoldProblem,
    PicardOptions, ProbeSetup,
};
use dgd_core::objective::ObjectiveSet;

use crate::artifacts::{num, Artifacts};
use crate::scenario::{ExperimentKind, ProbeDirection, Scenario};

/// Headline numbers of a run, used for sweep aggregation.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    pub metrics: BTreeMap<String, f64>,
}

impl RunSummary {
    fn put(&mut self, key: &str, v: f64) {
        self.metrics.insert(key.to_string(), v);
    }
}

fn uniform_state(seed: u64, m: usize, half: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m).map(|_| rng.random_range(-half..=half)).collect()
}

fn atlas_for(obj: &ObjectiveSet, half: f64, seeds: usize, seed: u64) -> Result<CriticalPointAtlas> {
    let region = vec![(-half, half); obj.dim()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    find_critical_points(obj, &region, seeds, &mut rng).context("analysis: critical point search")
}

/// Runs the scenario's experiment into `arts`.
pub fn run_experiment(scn: &Scenario, arts: &mut Artifacts) -> Result<RunSummary> {
    arts.text("scenario.toml", &scn.to_toml())?;
    match scn.kind {
        ExperimentKind::Simulate => simulate(scn, arts),
        ExperimentKind::Basins => basins(scn, arts),
        ExperimentKind::ConsensusReport => consensus(scn, arts),
        ExperimentKind::Manifold => manifold(scn, arts),
        ExperimentKind::Probe => probe(scn, arts),
    }
}

/// Runs and writes the manifest.
pub fn execute(scn: &Scenario, out: &Path, command: &str) -> Result<RunSummary> {
    let start = Instant::now();
    let mut arts = Artifacts::create(out)?;
    let summary = run_experiment(scn, &mut arts)?;
    arts.finish(command, scn.seed, &scn.hash(), start.elapsed().as_secs_f64())?;
    Ok(summary)
}

fn simulate(scn: &Scenario, arts: &mut Artifacts) -> Result<RunSummary> {
    let spec = &scn.simulate;
    let g = scn.graph()?;
    let obj = scn.objectives()?;
    let (n, d) = (obj.agent_count(), obj.dim());
    let field = DgdField::new(g.clone(), obj.clone(), scn.schedule, spec.clock).context("dynamics")?;
    let x0 = spec.x0.clone().unwrap_or_else(|| uniform_state(scn.seed, n * d, spec.init_box));
    let traj = integrate(&field, &x0, 0.0, spec.horizon, &scn.integrator).context("integrator")?;
    let diag = sample_diagnostics(&traj, &obj).context("analysis")?;
    let mut header: Vec<String> = vec!["t".into()];
    header.extend((0..n * d).map(|i| format!("x{}_{}", i / d + 1, i % d + 1)));
    header.extend(["perp_norm", "grad_norm", "f_avg"].map(String::from));
    arts.csv(
        "trajectory.csv",
        &header,
        traj.times.iter().zip(&traj.states).zip(&diag).map(|((t, x), s)| {
            let mut row = vec![num(*t)];
            row.extend(x.iter().map(|v| num(*v)));
            row.extend([num(s.perp_norm), num(s.grad_norm), num(s.f_avg)]);
            row
        }),
    )?;
    let report = if spec.clock == Clock::Original {
        let c = gradient_bound(&obj, scn.consensus.gradient_box, scn.consensus.gradient_grid);
        consensus_report_with_envelope(&traj, &g, &scn.schedule, c, d).context("analysis")?
    } else {
        consensus_residual(&traj, n, d).context("analysis")?
    };
    write_consensus_csv(arts, &report)?;
    let pert = perturbation_residual(&traj, &obj, n, d).context("analysis")?;
    let last = diag.last().ok_or_else(|| anyhow!("integrator: empty trajectory"))?;
    let mut s = RunSummary::default();
    s.put("final_time", traj.final_time());
    s.put("final_residual", report.final_residual);
    s.put("final_grad_norm", last.grad_norm);
    s.put("final_f_avg", last.f_avg);
    s.put("final_perturbation", pert.final_norm());
    if let Some(gap) = report.worst_envelope_gap() {
        s.put("worst_envelope_gap", gap);
    }
    arts.json(
        "summary.json",
        &json!({
            "scenario": scn,
            "termination": traj.termination,
            "accepted_steps": traj.accepted_steps,
            "rejected_steps": traj.rejected_steps,
            "metrics": s.metrics,
        }),
    )?;
    Ok(s)
}

fn write_consensus_csv(arts: &mut Artifacts, report: &dgd_core::analysis::ConsensusReport) -> Result<()> {
    let mut header = vec!["t".to_string(), "perp_norm".to_string()];
    if report.bound_envelope.is_some() {
        header.push("envelope".into());
    }
    let env = report.bound_envelope.clone();
    arts.csv(
        "consensus.csv",
        &header,
        report.times.iter().zip(&report.perp_norms).enumerate().map(|(i, (t, p))| {
            let mut row = vec![num(*t), num(*p)];
            if let Some(e) = &env {
                row.push(num(e[i]));
            }
            row
        }),
    )
}

fn consensus(scn: &Scenario, arts: &mut Artifacts) -> Result<RunSummary> {
    let spec = &scn.consensus;
    let g = scn.graph()?;
    let obj = scn.objectives()?;
    let (n, d) = (obj.agent_count(), obj.dim());
    let field = DgdField::new(g.clone(), obj.clone(), scn.schedule, Clock::Original).context("dynamics")?;
    let x0 = uniform_state(scn.seed, n * d, spec.init_box);
    let traj = integrate(&field, &x0, 0.0, spec.horizon, &scn.integrator).context("integrator")?;
    let c = gradient_bound(&obj, spec.gradient_box, spec.gradient_grid);
    let report = consensus_report_with_envelope(&traj, &g, &scn.schedule, c, d).context("analysis")?;
    write_consensus_csv(arts, &report)?;
    let lambda2 = g.laplacian().context("graph")?.lambda2().unwrap_or(0.0);
    let mut s = RunSummary::default();
    s.put("final_residual", report.final_residual);
    s.put("worst_envelope_gap", report.worst_envelope_gap().unwrap_or(f64::NAN));
    s.put("lambda2", lambda2);
    s.put("gradient_bound", c);
    arts.json(
        "summary.json",
        &json!({
            "scenario": scn,
            "termination": traj.termination,
            "samples": report.times.len(),
            "envelope_holds": report.envelope_holds().unwrap_or(false),
            "metrics": s.metrics,
        }),
    )?;
    Ok(s)
}

fn basins(scn: &Scenario, arts: &mut Artifacts) -> Result<RunSummary> {
    let spec = &scn.basins;
    let g = scn.graph()?;
    let obj = scn.objectives()?;
    let atlas = atlas_for(&obj, spec.atlas_box, spec.atlas_seeds, scn.seed)?;
    let exp = BasinExperiment {
        field: DgdField::new(g, obj, scn.schedule, Clock::Original).context("dynamics")?,
        atlas: atlas.clone(),
        init_box: spec.init_box,
        horizon: spec.horizon,
        integrator: scn.integrator.clone(),
        classify: spec.classify,
    };
    let stats = monte_carlo_basins(&exp, spec.trials, scn.seed).context("analysis")?;
    arts.csv(
        "basins.csv",
        &["location".into(), "kind".into(), "count".into()],
        stats.hits.iter().map(|h| {
            let loc: Vec<String> = h.location.iter().map(|v| num(*v)).collect();
            vec![loc.join(" "), h.kind.to_string(), h.count.to_string()]
        }),
    )?;
    let mut s = RunSummary::default();
    s.put("trials", stats.trials as f64);
    s.put("saddle_hits", stats.saddle_hits as f64);
    s.put("minimum_hits", stats.minimum_hits as f64);
    s.put("unresolved", stats.unresolved as f64);
    arts.json("summary.json", &json!({ "scenario": scn, "atlas": atlas, "stats": stats }))?;
    Ok(s)
}

fn manifold(scn: &Scenario, arts: &mut Artifacts) -> Result<RunSummary> {
    let spec = &scn.manifold;
    let g = scn.graph()?;
    let obj = scn.objectives()?;
    let m_err = |e: ManifoldError| anyhow!("manifold: {e}");
    let problem = std::sync::Arc::new(ManifoldProblem::dgd(&g, obj, scn.schedule, &spec.saddle).map_err(m_err)?);
    let t_end = spec.t0 + spec.horizon;
    let (b0, b1) = (problem.penalty.value(spec.t0), problem.penalty.value(t_end));
    let betas: Vec<f64> = if b1 > b0 {
        (0..80).map(|i| b0 * (b1 / b0).powf(i as f64 / 79.0)).collect()
    } else {
        vec![b0]
    };
    let path = critical_path(problem, &betas).map_err(m_err)?;
    let times: Vec<f64> = (0..spec.grid_points)
        .map(|i| spec.t0 + spec.horizon * i as f64 / (spec.grid_points - 1) as f64)
        .collect();
    let opts = LinearizeOptions {
        radius: spec.radius,
        seed: scn.seed,
        ..LinearizeOptions::default()
    };
    let sys = linearize(&path, &times, &opts).map_err(m_err)?;
    let forcing = forcing_term(&sys, spec.t0, spec.horizon).map_err(m_err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    let ball = 0.9 * spec.radius / 3.0;
    let coords: Vec<Vec<f64>> = (0..spec.samples)
        .map(|_| {
            let v: Vec<f64> = (0..sys.k).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let len = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let scale = ball * rng.random_range(0.0..=1.0f64);
            v.iter().map(|x| x / len * scale).collect()
        })
        .collect();
    let chart = build_chart(&sys, spec.t0, spec.horizon, &coords, &PicardOptions::default()).map_err(m_err)?;
    let tight = scn.integrator.clone().with_tol(1e-12);
    let checks = (0..chart.samples.len())
        .into_par_iter()
        .map(|i| chart_consistency(&sys, &chart, i, spec.check_horizon, spec.offset, &tight))
        .collect::<Result<Vec<_>, _>>()
        .map_err(m_err)?;
    let (k, p) = (chart.k, chart.p);
    let mut header: Vec<String> = (1..=k).map(|i| format!("a_s{i}")).collect();
    header.extend((1..=p).map(|i| format!("psi{i}")));
    header.extend((1..=sys.dim()).map(|i| format!("x0_{i}")));
    header.extend(
        ["iterations", "contraction_ratio", "ode_residual", "on_chart_max_dist", "on_chart_final_dist", "perturbed_min_final_dist"].map(String::from),
    );
    arts.csv(
        "chart.csv",
        &header,
        chart.samples.iter().zip(&checks).map(|(s, c)| {
            let mut row: Vec<String> = s.a_s.iter().chain(&s.psi).chain(&s.x0).map(|v| num(*v)).collect();
            row.push(s.iterations.to_string());
            row.extend([s.contraction_ratio, s.ode_residual, c.on_chart_max, c.on_chart_final].map(num));
            row.push(num(c.perturbed_final.iter().copied().fold(f64::INFINITY, f64::min)));
            row
        }),
    )?;
    let c = sys.constants;
    let ratios: Vec<f64> = chart.samples.iter().map(|s| s.contraction_ratio).collect();
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let consistent = checks.iter().all(|c| c.passes(dgd_core::manifold::DELTA_SADDLE, 0.5));
    arts.json(
        "constants.json",
        &json!({
            "scenario": scn,
            "k": k,
            "p": p,
            "constants": c,
            "epsilon_limit": c.epsilon_limit(),
            "contraction_bound": c.contraction_bound(),
            "contraction_ratios": ratios,
            "decomposition_residual": sys.decomposition_residual,
            "max_alignment_jump": sys.max_alignment_jump,
            "forcing_sup": forcing.sup,
            "forcing_tail_bound": forcing.tail_bound,
            "chart_consistent": consistent,
        }),
    )?;
    let mut s = RunSummary::default();
    s.put("k", k as f64);
    s.put("p", p as f64);
    s.put("epsilon", c.epsilon);
    s.put("epsilon_limit", c.epsilon_limit());
    s.put("max_contraction_ratio", max_ratio);
    s.put("max_psi", chart.max_psi());
    s.put("chart_consistent", if consistent { 1.0 } else { 0.0 });
    Ok(s)
}

/// Unit eigenvectors of the sum Hessian at `a`, most negative eigenvalue first.
fn hessian_directions(obj: &ObjectiveSet, a: &[f64]) -> (Vec<f64>, Vec<DVector<f64>>) {
    let h: DMatrix<f64> = obj.sum_hessian(a);
    let eig = SymmetricEigen::new(h);
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    (
        idx.iter().map(|&i| eig.eigenvalues[i]).collect(),
        idx.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect(),
    )
}

fn probe(scn: &Scenario, arts: &mut Artifacts) -> Result<RunSummary> {
    let spec = &scn.probe;
    let g = scn.graph()?;
    let obj = scn.objectives()?;
    let (n, d) = (obj.agent_count(), obj.dim());
    let (vals, vecs) = hessian_directions(&obj, &spec.saddle);
    if !(vals[0] < 0.0) {
        bail!("probe.saddle: the sum Hessian there has no negative eigenvalue");
    }
    let lift = |v: &DVector<f64>| -> Vec<f64> { consensus_vector(v.as_slice(), n).as_slice().iter().map(|x| x / (n as f64).sqrt()).collect() };
    let unstable = lift(&vecs[0]);
    let stable = lift(vecs.last().unwrap());
    let x_star = consensus_vector(&spec.saddle, n).as_slice().to_vec();
    // Seeded base perturbation, orthogonal to the unstable direction.
    let mut rng = ChaCha8Rng::seed_from_u64(scn.seed);
    let mut w: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let proj: f64 = w.iter().zip(&unstable).map(|(a, b)| a * b).sum();
    w.iter_mut().zip(&unstable).for_each(|(a, b)| *a -= proj * b);
    let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let base: Vec<f64> = x_star.iter().zip(&w).map(|(x, v)| x + spec.base_offset * v / wn).collect();
    let atlas = atlas_for(&obj, scn.basins.atlas_box, scn.basins.atlas_seeds, scn.seed)?;
    let minima: Vec<Vec<f64>> = atlas.minima().map(|(_, p)| consensus_vector(&p.location, n).as_slice().to_vec()).collect();
    let setup = ProbeSetup {
        field: DgdField::new(g, obj, scn.schedule, Clock::Original).context("dynamics")?,
        x_star,
        label_direction: unstable.clone(),
        minima,
        t0: 0.0,
        horizon: spec.horizon,
        integrator: scn.integrator.clone().with_tol(1e-12),
        delta: spec.delta,
        offset: spec.offset,
    };
    let direction = match spec.direction {
        ProbeDirection::Unstable => &unstable,
        ProbeDirection::Stable => &stable,
    };
    let mut s = RunSummary::default();
    match shooting_probe(&setup, &base, direction, (spec.s_range[0], spec.s_range[1]), spec.tol_s) {
        Ok(out) => {
            s.put("s_star", out.s_star);
            s.put("bracket_width", out.bracket.1 - out.bracket.0);
            s.put("at_star_max_dist", out.at_star.max_distance);
            s.put("minus_final_dist", out.minus.final_distance);
            s.put("plus_final_dist", out.plus.final_distance);
            s.put("validated", if out.validates(spec.delta, 0.5) { 1.0 } else { 0.0 });
            arts.json(
                "probe.json",
                &json!({ "scenario": scn, "base": base, "direction": direction, "boundary": true, "outcome": out }),
            )?;
        }
        Err(ManifoldError::NoSignChange { lo, hi }) if spec.direction == ProbeDirection::Stable => {
            s.put("boundary", 0.0);
            arts.json(
                "probe.json",
                &json!({ "scenario": scn, "base": base, "direction": direction, "boundary": false, "end_labels": [lo, hi] }),
            )?;
        }
        Err(e) => return Err(anyhow!("manifold: {e}")),
    }
    Ok(s)
}

/// Sets the scalar at dotted `path` in a TOML table, keeping the value type.
fn set_path(table: &mut toml::Table, path: &str, raw: &str) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let leaf = parts.pop().ok_or_else(|| anyhow!("sweep: empty parameter path"))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .get_mut(p)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| anyhow!("sweep: {path} is not a config path (no table {p})"))?;
    }
    let new = match cur.get(leaf) {
        Some(toml::Value::Integer(_)) => toml::Value::Integer(raw.parse().map_err(|_| anyhow!("sweep: {path} expects an integer, got {raw:?}"))?),
        Some(toml::Value::Float(_)) => toml::Value::Float(raw.parse().map_err(|_| anyhow!("sweep: {path} expects a number, got {raw:?}"))?),
        Some(toml::Value::Boolean(_)) => toml::Value::Boolean(raw.parse().map_err(|_| anyhow!("sweep: {path} expects a boolean, got {raw:?}"))?),
        Some(toml::Value::String(_)) => toml::Value::String(raw.to_string()),
        Some(_) => bail!("sweep: {path} is not a scalar"),
        None => bail!("sweep: {path} is not a config path"),
    };
    cur.insert(leaf.to_string(), new);
    Ok(())
}

/// Builds every swept scenario, rejecting the whole sweep on the first
/// inadmissible value.
pub fn sweep_scenarios(base: &Scenario, param: &str, values: &[String]) -> Result<Vec<Scenario>> {
    let table: toml::Table = toml::Table::try_from(base).context("sweep: serializing scenario")?;
    values
        .iter()
        .map(|v| {
            let mut t = table.clone();
            set_path(&mut t, param, v)?;
            let text = toml::to_string(&t)?;
            Scenario::from_toml(&text).with_context(|| format!("sweep: {param} = {v} rejected"))
        })
        .collect()
}

/// One run per value under `out/run_<i>`, plus `aggregate.csv`.
pub fn sweep(base: &Scenario, param: &str, values: &[String], out: &Path) -> Result<Vec<RunSummary>> {
    let scenarios = sweep_scenarios(base, param, values)?;
    if scenarios.is_empty() {
        return Ok(Vec::new());
    }
    let start = Instant::now();
    let mut summaries = Vec::with_capacity(scenarios.len());
    for (i, scn) in scenarios.iter().enumerate() {
        summaries.push(execute(scn, &out.join(format!("run_{i}")), &format!("sweep {param}={}", values[i]))?);
    }
    let keys: Vec<String> = summaries
        .iter()
        .flat_map(|s| s.metrics.keys().cloned())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut arts = Artifacts::create(out)?;
    let mut header = vec![param.to_string(), "run".to_string()];
    header.extend(keys.iter().cloned());
    arts.csv(
        "aggregate.csv",
        &header,
        values.iter().zip(&summaries).enumerate().map(|(i, (v, s))| {
            let mut row = vec![v.clone(), format!("run_{i}")];
            row.extend(keys.iter().map(|k| s.metrics.get(k).map_or(String::new(), |x| num(*x))));
            row
        }),
    )?;
    arts.text("scenario.toml", &base.to_toml())?;
    arts.finish(&format!("sweep {param}"), base.seed, &base.hash(), start.elapsed().as_secs_f64())?;
    Ok(summaries)
}
