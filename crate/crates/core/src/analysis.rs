//! Diagnostics on stored trajectories: consensus residuals and their bound
//! envelope, critical-point atlases, the perturbation residual `r(t)`, limit
//! classification and Monte-Carlo basin statistics.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{consensus_projection, DgdField, FlowField, Schedule, TimeChange, Weight};
use crate::graph::{Graph, GraphError};
use crate::integrator::{integrate, IntegratorError, IntegratorOptions, Termination, Trajectory};
use crate::objective::{classify_symmetric, norm, CriticalKind, ObjectiveError, ObjectiveSet, TOL_CRIT};
use crate::quadrature::{adaptive_simpson, cumulative_trapezoid};

/// Capture radius around an atlas point.
pub const R_CAPTURE: f64 = 0.1;
/// Consensus residual below which a final state counts as agreed.
pub const TOL_CONSENSUS: f64 = 1e-2;
/// Gradient norm of `f` at the final average below which a run counts as converged.
pub const TOL_LIMIT_GRAD: f64 = 1e-4;
/// Newton iterates closer than this are the same critical point.
pub const DEDUP_RADIUS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("trajectory state has {got} entries, expected N·d = {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("graph is not connected (lambda_2 = {0:e})")]
    Disconnected(f64),
    #[error("critical point atlas is empty")]
    EmptyAtlas,
    #[error("need at least one trial")]
    NoTrials,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
}

fn check_dims(traj: &Trajectory, n: usize, d: usize) -> Result<(), AnalysisError> {
    match traj.states.iter().find(|s| s.len() != n * d) {
        Some(s) => Err(AnalysisError::Dimension {
            expected: n * d,
            got: s.len(),
        }),
        None => Ok(()),
    }
}

fn perp_norm(x: &[f64], n: usize, d: usize) -> f64 {
    let (_, perp) = consensus_projection(x, n, d).expect("dimensions checked");
    norm(&perp)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusReport {
    pub times: Vec<f64>,
    pub perp_norms: Vec<f64>,
    pub bound_envelope: Option<Vec<f64>>,
    pub final_residual: f64,
}

impl ConsensusReport {
    /// Largest `perp − envelope` over the samples (negative when the bound holds).
    pub fn worst_envelope_gap(&self) -> Option<f64> {
        let env = self.bound_envelope.as_ref()?;
        Some(
            self.perp_norms
                .iter()
                .zip(env)
                .map(|(p, e)| p - e)
                .fold(f64::NEG_INFINITY, f64::max),
        )
    }

    /// Whether every sample lies below the envelope, up to rounding
    /// (`1e-12` relative to the envelope value).
    pub fn envelope_holds(&self) -> Option<bool> {
        let env = self.bound_envelope.as_ref()?;
        Some(self.perp_norms.iter().zip(env).all(|(p, e)| *p <= e + 1e-12 * e.abs().max(f64::MIN_POSITIVE)))
    }
}

/// `‖y^⊥(t)‖` at every stored sample.
pub fn consensus_residual(traj: &Trajectory, n: usize, d: usize) -> Result<ConsensusReport, AnalysisError> {
    check_dims(traj, n, d)?;
    let perp_norms: Vec<f64> = traj.states.iter().map(|x| perp_norm(x, n, d)).collect();
    Ok(ConsensusReport {
        times: traj.times.clone(),
        final_residual: *perp_norms.last().unwrap_or(&0.0),
        perp_norms,
        bound_envelope: None,
    })
}

/// Largest stacked-gradient norm over the box `[−r, r]^{Nd}`.
///
/// The stacked gradient is separable across agents, so the maximum is the
/// root-sum-square of per-agent maxima over `[−r, r]^d`, each taken on a grid
/// with `per_axis` points (random samples when the grid would be too large).
pub fn gradient_bound(obj: &ObjectiveSet, r: f64, per_axis: usize) -> f64 {
    let d = obj.dim();
    let per_axis = per_axis.max(2);
    let grid_size = (per_axis as f64).powi(d as i32);
    let points: Vec<Vec<f64>> = if grid_size <= 2e5 {
        let total = grid_size as usize;
        (0..total)
            .map(|mut idx| {
                (0..d)
                    .map(|_| {
                        let i = idx % per_axis;
                        idx /= per_axis;
                        -r + 2.0 * r * i as f64 / (per_axis - 1) as f64
                    })
                    .collect()
            })
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (0..200_000).map(|_| (0..d).map(|_| rng.random_range(-r..=r)).collect()).collect()
    };
    let mut total = 0.0;
    let mut g = vec![0.0; d];
    for l in obj.locals() {
        let mut best = 0.0f64;
        for p in &points {
            l.gradient(p, &mut g);
            best = best.max(norm(&g));
        }
        total += best * best;
    }
    total.sqrt()
}

/// Two-term consensus bound in the β-clock,
/// `‖e^{−(L⊗I)t} x₀^⊥‖ + C ∫_0^t e^{−λ₂(t−s)} (s+1)^{−τ_γ} ds`,
/// evaluated at every entry of the increasing grid `t_grid`.
pub fn consensus_bound_envelope(
    g: &Graph,
    s: &Schedule,
    x0: &[f64],
    t_grid: &[f64],
    c: f64,
) -> Result<Vec<f64>, AnalysisError> {
    let n = g.node_count();
    if n == 0 || x0.len() % n != 0 {
        return Err(AnalysisError::Dimension {
            expected: n,
            got: x0.len(),
        });
    }
    let d = x0.len() / n;
    let spec = g.laplacian()?;
    let l2 = spec.lambda2().unwrap_or(0.0);
    if !(l2 > crate::graph::TOL_SPECTRAL) {
        return Err(AnalysisError::Disconnected(l2));
    }
    // Coefficients of x0 in the Laplacian eigenbasis, one row per mode.
    let xm = DMatrix::from_fn(n, d, |i, k| x0[i * d + k]);
    let coeff = spec.eigenvectors.transpose() * xm;
    let tg = s.tau_gamma();
    let kernel = |s: f64| (s + 1.0).powf(-tg);
    let width = 40.0 / l2;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut conv = 0.0;
    let mut prev = 0.0;
    for &t in t_grid {
        let homog = (1..n)
            .map(|j| {
                let e = (-spec.eigenvalues[j] * t).exp();
                (0..d).map(|k| (e * coeff[(j, k)]).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt();
        if t > prev {
            let tail = |a: f64, b: f64| adaptive_simpson(|s| (-l2 * (t - s)).exp() * kernel(s), a, b, 1e-12);
            let split = (t - width).max(prev);
            let piece = tail(split, t) + if split > prev { tail(prev, split) } else { 0.0 };
            conv = (-l2 * (t - prev)).exp() * conv + piece;
            prev = t;
        }
        out.push(homog + c * conv);
    }
    Ok(out)
}

/// Compares each sample of an original-clock trajectory with the envelope at
/// the corresponding β-clock time `S_β(t)`.
pub fn consensus_report_with_envelope(
    traj: &Trajectory,
    g: &Graph,
    s: &Schedule,
    c: f64,
    d: usize,
) -> Result<ConsensusReport, AnalysisError> {
    let n = g.node_count();
    let mut report = consensus_residual(traj, n, d)?;
    let tc = s.time_change(Weight::Beta);
    let grid: Vec<f64> = traj.times.iter().map(|&t| tc.forward(t)).collect();
    report.bound_envelope = Some(consensus_bound_envelope(g, s, &traj.states[0], &grid, c)?);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    pub kind: CriticalKind,
    /// Number of negative Hessian eigenvalues.
    pub negative: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPointAtlas {
    pub points: Vec<CriticalPoint>,
    /// Search box `[lo_i, hi_i]`.
    pub region: Vec<(f64, f64)>,
    pub tol_crit: f64,
    pub failed_seeds: usize,
}

impl CriticalPointAtlas {
    /// Index of the atlas point nearest to `a` within `radius`.
    pub fn locate(&self, a: &[f64], radius: f64) -> Option<usize> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, dist(&p.location, a)))
            .filter(|(_, r)| *r <= radius)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    pub fn minima(&self) -> impl Iterator<Item = (usize, &CriticalPoint)> {
        self.points.iter().enumerate().filter(|(_, p)| p.kind == CriticalKind::Minimum)
    }

    pub fn saddles(&self) -> impl Iterator<Item = (usize, &CriticalPoint)> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p.kind, CriticalKind::Saddle { .. }))
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Newton's method on `∇f = 0` from one start. Returns the limit if the
/// gradient is tiny there.
fn newton_critical(obj: &ObjectiveSet, start: Vec<f64>) -> Option<Vec<f64>> {
    let mut a = start;
    let mut g = obj.sum_gradient(&a);
    for _ in 0..300 {
        let gn = norm(&g);
        if gn == 0.0 {
            break;
        }
        let h = obj.sum_hessian(&a);
        let step = h
            .lu()
            .solve(&DVector::from_column_slice(&g))
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .unwrap_or_else(|| DVector::from_column_slice(&g));
        let mut t = 1.0;
        let mut next: Vec<f64> = a.iter().zip(step.iter()).map(|(x, s)| x - s).collect();
        let mut gnext = obj.sum_gradient(&next);
        for _ in 0..30 {
            if norm(&gnext) < gn {
                break;
            }
            t *= 0.5;
            next = a.iter().zip(step.iter()).map(|(x, s)| x - t * s).collect();
            gnext = obj.sum_gradient(&next);
        }
        let moved = dist(&next, &a);
        a = next;
        g = gnext;
        if moved <= 1e-15 * (1.0 + norm(&a)) {
            break;
        }
    }
    (norm(&g) < 1e-2 * TOL_CRIT && a.iter().all(|v| v.is_finite())).then_some(a)
}

/// Multi-start Newton search for critical points of `f` in a box.
pub fn find_critical_points<R: Rng>(
    obj: &ObjectiveSet,
    region: &[(f64, f64)],
    n_seeds: usize,
    rng: &mut R,
) -> Result<CriticalPointAtlas, AnalysisError> {
    let d = obj.dim();
    if region.len() != d {
        return Err(AnalysisError::Dimension {
            expected: d,
            got: region.len(),
        });
    }
    let mut points: Vec<CriticalPoint> = Vec::new();
    let mut failed = 0;
    let inside = |a: &[f64]| a.iter().zip(region).all(|(v, (lo, hi))| *v >= lo - 1e-9 && *v <= hi + 1e-9);
    for _ in 0..n_seeds {
        let start: Vec<f64> = region.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect();
        let Some(a) = newton_critical(obj, start) else {
            failed += 1;
            continue;
        };
        if !inside(&a) || points.iter().any(|p| dist(&p.location, &a) < DEDUP_RADIUS) {
            continue;
        }
        let kind = classify_symmetric(&obj.sum_hessian(&a))?;
        let negative = match kind {
            CriticalKind::Saddle { negative } => negative,
            CriticalKind::Maximum => d,
            _ => 0,
        };
        points.push(CriticalPoint {
            value: obj.eval_sum(&a),
            location: a,
            kind,
            negative,
        });
    }
    points.sort_by(|p, q| {
        p.location
            .iter()
            .zip(&q.location)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(CriticalPointAtlas {
        points,
        region: region.to_vec(),
        tol_crit: TOL_CRIT,
        failed_seeds: failed,
    })
}

/// The perturbation series `r(t) = −(1/N) Σ_n (∇f_n(y_n) − ∇f_n(y_avg))`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub times: Vec<f64>,
    pub residual: Vec<Vec<f64>>,
    pub norms: Vec<f64>,
    /// `f(y_avg(t))` at each sample.
    pub f_avg: Vec<f64>,
    /// `‖∇f(y_avg(t))‖` at each sample.
    pub grad_norms: Vec<f64>,
    cumulative: Vec<Vec<f64>>,
}

pub fn perturbation_residual(traj: &Trajectory, obj: &ObjectiveSet, n: usize, d: usize) -> Result<PerturbationReport, AnalysisError> {
    check_dims(traj, n, d)?;
    let mut residual = Vec::with_capacity(traj.len());
    let mut f_avg = Vec::with_capacity(traj.len());
    let mut grad_norms = Vec::with_capacity(traj.len());
    let (mut ga, mut gb) = (vec![0.0; d], vec![0.0; d]);
    for x in &traj.states {
        let (avg, _) = consensus_projection(x, n, d).expect("dimensions checked");
        let mut r = vec![0.0; d];
        for (k, l) in obj.locals().iter().enumerate() {
            l.gradient(&x[k * d..(k + 1) * d], &mut ga);
            l.gradient(&avg, &mut gb);
            for i in 0..d {
                r[i] -= (ga[i] - gb[i]) / n as f64;
            }
        }
        residual.push(r);
        f_avg.push(obj.eval_sum(&avg));
        grad_norms.push(norm(&obj.sum_gradient(&avg)));
    }
    let cumulative: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let comp: Vec<f64> = residual.iter().map(|r| r[i]).collect();
            cumulative_trapezoid(&traj.times, &comp)
        })
        .collect();
    Ok(PerturbationReport {
        times: traj.times.clone(),
        norms: residual.iter().map(|r| norm(r)).collect(),
        residual,
        f_avg,
        grad_norms,
        cumulative,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescentCheck {
    /// Sample pairs after burn-in where `f(y_avg)` increased.
    pub increases: usize,
    /// Pairs whose increase exceeded the slack.
    pub violations: usize,
    /// Largest `Δf − slack` over the checked pairs.
    pub worst_excess: f64,
}

impl PerturbationReport {
    pub fn final_norm(&self) -> f64 {
        *self.norms.last().unwrap_or(&0.0)
    }

    /// `sup_{0≤v≤window} ‖∫_t^{t+v} r‖`, with integrals by trapezoid on the samples.
    pub fn windowed_sup(&self, t: f64, window: f64) -> f64 {
        let i0 = self.times.partition_point(|&s| s < t).min(self.times.len().saturating_sub(1));
        let base: Vec<f64> = self.cumulative.iter().map(|c| c[i0]).collect();
        let mut best = 0.0f64;
        for j in i0..self.times.len() {
            if self.times[j] > self.times[i0] + window {
                break;
            }
            let v: Vec<f64> = self.cumulative.iter().zip(&base).map(|(c, b)| c[j] - b).collect();
            best = best.max(norm(&v));
        }
        best
    }

    /// Checks `f(y_avg)` against perturbed descent: after the first
    /// `burn_in` fraction of the horizon, any increase between consecutive
    /// samples must stay below `∫ 2‖r‖‖∇f‖ dt` plus a rounding floor. Times
    /// must be in the α-clock.
    pub fn descent_check(&self, burn_in: f64) -> DescentCheck {
        let (t0, t1) = (self.times[0], *self.times.last().unwrap());
        let start = t0 + burn_in * (t1 - t0);
        let mut out = DescentCheck {
            increases: 0,
            violations: 0,
            worst_excess: f64::NEG_INFINITY,
        };
        for i in 0..self.times.len().saturating_sub(1) {
            if self.times[i] < start {
                continue;
            }
            let df = self.f_avg[i + 1] - self.f_avg[i];
            let dt = self.times[i + 1] - self.times[i];
            let slack = dt * (self.norms[i] * self.grad_norms[i] + self.norms[i + 1] * self.grad_norms[i + 1]);
            let floor = 1e-12 * (1.0 + self.f_avg[i].abs());
            if df > 0.0 {
                out.increases += 1;
            }
            let excess = df - slack - floor;
            out.worst_excess = out.worst_excess.max(excess);
            if excess > 0.0 {
                out.violations += 1;
            }
        }
        out
    }
}

/// Re-expresses sample times of an original-clock trajectory in a new clock.
pub fn convert_clock(traj: &Trajectory, change: &TimeChange) -> Trajectory {
    let mut out = traj.clone();
    out.times = traj.times.iter().map(|&t| change.forward(t)).collect();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifyOptions {
    pub r_capture: f64,
    pub tol_grad: f64,
    pub tol_consensus: f64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        Self {
            r_capture: R_CAPTURE,
            tol_grad: TOL_LIMIT_GRAD,
            tol_consensus: TOL_CONSENSUS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitClass {
    Point(usize),
    Unresolved,
}

/// Classifies a final state against the atlas.
pub fn classify_state(x: &[f64], obj: &ObjectiveSet, atlas: &CriticalPointAtlas, n: usize, d: usize, opts: &ClassifyOptions) -> LimitClass {
    let (avg, perp) = consensus_projection(x, n, d).expect("caller checks dimensions");
    if !(norm(&perp) < opts.tol_consensus) || !(norm(&obj.sum_gradient(&avg)) < opts.tol_grad) {
        return LimitClass::Unresolved;
    }
    atlas.locate(&avg, opts.r_capture).map_or(LimitClass::Unresolved, LimitClass::Point)
}

/// Classifies the final sample of a trajectory.
pub fn classify_limit(
    traj: &Trajectory,
    obj: &ObjectiveSet,
    atlas: &CriticalPointAtlas,
    n: usize,
    d: usize,
    opts: &ClassifyOptions,
) -> Result<LimitClass, AnalysisError> {
    if atlas.points.is_empty() {
        return Err(AnalysisError::EmptyAtlas);
    }
    check_dims(traj, n, d)?;
    if traj.termination.is_failure() {
        return Ok(LimitClass::Unresolved);
    }
    Ok(classify_state(traj.final_state(), obj, atlas, n, d, opts))
}

/// Everything needed to run independent basin trials.
#[derive(Debug, Clone)]
pub struct BasinExperiment {
    pub field: DgdField,
    pub atlas: CriticalPointAtlas,
    /// Initial states are uniform in `[−init_box, init_box]^{Nd}`.
    pub init_box: f64,
    pub horizon: f64,
    pub integrator: IntegratorOptions,
    pub classify: ClassifyOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinHit {
    pub location: Vec<f64>,
    pub kind: CriticalKind,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinStats {
    pub trials: usize,
    pub hits: Vec<BasinHit>,
    pub saddle_hits: usize,
    pub minimum_hits: usize,
    pub unresolved: usize,
    pub init: String,
    pub seed: u64,
}

impl BasinExperiment {
    /// Initial state of trial `i`; each trial owns its own ChaCha stream.
    pub fn initial_state(&self, seed: u64, trial: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        (0..self.field.dim()).map(|_| rng.random_range(-self.init_box..=self.init_box)).collect()
    }

    /// Integrates and classifies one trial.
    pub fn run_trial(&self, seed: u64, trial: usize) -> Result<LimitClass, AnalysisError> {
        let x0 = self.initial_state(seed, trial);
        let traj = integrate(&self.field, &x0, 0.0, self.horizon, &self.integrator.clone().with_stride(usize::MAX))?;
        let obj = self.field.objectives();
        classify_limit(&traj, obj, &self.atlas, obj.agent_count(), obj.dim(), &self.classify)
    }
}

/// Runs `trials` independent uniform initializations in parallel.
pub fn monte_carlo_basins(exp: &BasinExperiment, trials: usize, seed: u64) -> Result<BasinStats, AnalysisError> {
    if trials == 0 {
        return Err(AnalysisError::NoTrials);
    }
    if exp.atlas.points.is_empty() {
        return Err(AnalysisError::EmptyAtlas);
    }
    let classes: Vec<LimitClass> = (0..trials)
        .into_par_iter()
        .map(|i| exp.run_trial(seed, i))
        .collect::<Result<_, _>>()?;
    let mut hits: Vec<BasinHit> = exp
        .atlas
        .points
        .iter()
        .map(|p| BasinHit {
            location: p.location.clone(),
            kind: p.kind,
            count: 0,
        })
        .collect();
    let mut unresolved = 0;
    for c in classes {
        match c {
            LimitClass::Point(i) => hits[i].count += 1,
            LimitClass::Unresolved => unresolved += 1,
        }
    }
    let count = |pred: fn(&CriticalKind) -> bool| hits.iter().filter(|h| pred(&h.kind)).map(|h| h.count).sum();
    Ok(BasinStats {
        trials,
        saddle_hits: count(|k| matches!(k, CriticalKind::Saddle { .. })),
        minimum_hits: count(|k| *k == CriticalKind::Minimum),
        hits,
        unresolved,
        init: format!("uniform [-{b}, {b}]^{}", exp.field.dim(), b = exp.init_box),
        seed,
    })
}

/// Per-sample diagnostics used for CSV output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleDiagnostics {
    pub t: f64,
    pub perp_norm: f64,
    pub grad_norm: f64,
    pub f_avg: f64,
}

pub fn sample_diagnostics(traj: &Trajectory, obj: &ObjectiveSet) -> Result<Vec<SampleDiagnostics>, AnalysisError> {
    let (n, d) = (obj.agent_count(), obj.dim());
    check_dims(traj, n, d)?;
    Ok(traj
        .times
        .iter()
        .zip(&traj.states)
        .map(|(&t, x)| {
            let (avg, perp) = consensus_projection(x, n, d).expect("dimensions checked");
            SampleDiagnostics {
                t,
                perp_norm: norm(&perp),
                grad_norm: norm(&obj.sum_gradient(&avg)),
                f_avg: obj.eval_sum(&avg),
            }
        })
        .collect())
}

/// True when the trajectory ended normally at its horizon.
pub fn reached_horizon(traj: &Trajectory) -> bool {
    traj.termination == Termination::HorizonReached
}
