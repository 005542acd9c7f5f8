//! Explicit Runge–Kutta integration of non-autonomous ODEs.
//!
//! Two methods: Dormand–Prince 5(4) with step-size control, FSAL and optional
//! dense output, and classical fixed-step RK4. Events are predicates checked
//! after every accepted step; there is no root polishing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{inside_box, FlowField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("invalid integrator options: {0}")]
    Options(String),
    #[error("t_end ({t_end}) must exceed t0 ({t0})")]
    Interval { t0: f64, t_end: f64 },
    #[error("initial state has {got} entries, field expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("initial state is not finite")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "rk4", alias = "rk4_fixed")]
    Rk4Fixed,
    #[serde(rename = "rk45", alias = "rk45_adaptive")]
    Rk45Adaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    pub method: Method,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Initial step for the adaptive method, the step for RK4.
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Keep every `stride`-th accepted step (the first and last are always kept).
    pub stride: usize,
    /// Store per-step interpolants (adaptive method only).
    pub dense: bool,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            method: Method::Rk45Adaptive,
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 50.0,
            max_steps: 2_000_000,
            stride: 1,
            dense: false,
        }
    }
}

impl IntegratorOptions {
    pub fn rk4(h: f64) -> Self {
        Self {
            method: Method::Rk4Fixed,
            h_init: h,
            h_min: h.min(1e-12),
            h_max: h,
            ..Self::default()
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.abs_tol = tol;
        self.rel_tol = tol;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dense(mut self, dense: bool) -> Self {
        self.dense = dense;
        self
    }

    pub fn validate(&self) -> Result<(), IntegratorError> {
        let bad = |m: &str| Err(IntegratorError::Options(m.to_string()));
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.h_min > 0.0 && self.h_min <= self.h_init && self.h_init <= self.h_max) {
            return bad("step bounds must satisfy 0 < h_min <= h_init <= h_max");
        }
        if self.max_steps == 0 || self.stride == 0 {
            return bad("max_steps and stride must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepFailureKind {
    StepTooSmall,
    MaxSteps,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "detail")]
pub enum Termination {
    HorizonReached,
    EventFired(String),
    BoxExit,
    StepFailure(StepFailureKind),
}

impl Termination {
    pub fn is_failure(&self) -> bool {
        matches!(self, Termination::BoxExit | Termination::StepFailure(_))
    }
}

/// One accepted step's quartic interpolant (Hairer's DOPRI5 continuous extension).
#[derive(Debug, Clone, PartialEq)]
struct DenseStep {
    t: f64,
    h: f64,
    rcont: [Vec<f64>; 5],
}

impl DenseStep {
    fn eval(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t) / self.h;
        let th1 = 1.0 - th;
        let r = &self.rcont;
        (0..r[0].len())
            .map(|i| r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i]))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub termination: Termination,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    dense: Vec<DenseStep>,
}

impl Trajectory {
    pub fn final_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one sample")
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least one sample")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn has_dense_output(&self) -> bool {
        !self.dense.is_empty()
    }

    /// Value at `t` from the stored interpolants, if dense output was requested
    /// and `t` lies in the integrated range.
    pub fn interpolate(&self, t: f64) -> Option<Vec<f64>> {
        let first = self.dense.first()?;
        let last = self.dense.last()?;
        if t < first.t || t > last.t + last.h {
            return None;
        }
        let idx = self.dense.partition_point(|s| s.t + s.h < t).min(self.dense.len() - 1);
        Some(self.dense[idx].eval(t))
    }
}

/// A named stopping predicate.
pub struct Event<'a> {
    pub name: String,
    pub predicate: Box<dyn Fn(f64, &[f64]) -> bool + Send + Sync + 'a>,
}

impl<'a> Event<'a> {
    pub fn new(name: impl Into<String>, predicate: impl Fn(f64, &[f64]) -> bool + Send + Sync + 'a) -> Self {
        Self {
            name: name.into(),
            predicate: Box::new(predicate),
        }
    }
}

/// Integrates `field` from `(t0, x0)` to `t_end`.
pub fn integrate<F: FlowField + ?Sized>(
    field: &F,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    opts: &IntegratorOptions,
) -> Result<Trajectory, IntegratorError> {
    integrate_with_events(field, x0, t0, t_end, &[], opts)
}

/// Integrates until `predicate` holds at an accepted step, or `t_end`.
pub fn integrate_until<F: FlowField + ?Sized>(
    field: &F,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    predicate: impl Fn(f64, &[f64]) -> bool + Send + Sync,
    opts: &IntegratorOptions,
) -> Result<Trajectory, IntegratorError> {
    integrate_with_events(field, x0, t0, t_end, &[Event::new("predicate", predicate)], opts)
}

struct Recorder {
    traj: Trajectory,
    stride: usize,
    since_kept: usize,
}

impl Recorder {
    fn push(&mut self, t: f64, x: &[f64]) {
        self.since_kept += 1;
        if self.since_kept >= self.stride {
            self.keep(t, x);
        }
    }

    fn keep(&mut self, t: f64, x: &[f64]) {
        self.since_kept = 0;
        self.traj.times.push(t);
        self.traj.states.push(x.to_vec());
    }

    fn finish(mut self, t: f64, x: &[f64], termination: Termination) -> Trajectory {
        if self.traj.times.last() != Some(&t) {
            self.keep(t, x);
        }
        self.traj.termination = termination;
        self.traj
    }
}

fn fired(events: &[Event], t: f64, x: &[f64]) -> Option<String> {
    events.iter().find(|e| (e.predicate)(t, x)).map(|e| e.name.clone())
}

/// Integrates with named events; the first event to hold terminates the run.
pub fn integrate_with_events<F: FlowField + ?Sized>(
    field: &F,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    events: &[Event],
    opts: &IntegratorOptions,
) -> Result<Trajectory, IntegratorError> {
    opts.validate()?;
    if !(t_end > t0) {
        return Err(IntegratorError::Interval { t0, t_end });
    }
    if x0.len() != field.dim() {
        return Err(IntegratorError::Dimension {
            expected: field.dim(),
            got: x0.len(),
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(IntegratorError::NonFinite);
    }
    let mut rec = Recorder {
        traj: Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            termination: Termination::HorizonReached,
            accepted_steps: 0,
            rejected_steps: 0,
            dense: Vec::new(),
        },
        stride: opts.stride,
        since_kept: 0,
    };
    rec.keep(t0, x0);
    if let Some(r) = field.validity_box() {
        if !inside_box(x0, r) {
            return Ok(rec.finish(t0, x0, Termination::BoxExit));
        }
    }
    if let Some(name) = fired(events, t0, x0) {
        return Ok(rec.finish(t0, x0, Termination::EventFired(name)));
    }
    match opts.method {
        Method::Rk4Fixed => Ok(run_rk4(field, x0, t0, t_end, events, opts, rec)),
        Method::Rk45Adaptive => Ok(run_dopri(field, x0, t0, t_end, events, opts, rec)),
    }
}

/// Shared bookkeeping after an accepted step. Returns a termination if the run must stop.
fn after_step<F: FlowField + ?Sized>(field: &F, events: &[Event], t: f64, x: &[f64]) -> Option<Termination> {
    if x.iter().any(|v| !v.is_finite()) {
        return Some(Termination::StepFailure(StepFailureKind::NonFinite));
    }
    if let Some(r) = field.validity_box() {
        if !inside_box(x, r) {
            return Some(Termination::BoxExit);
        }
    }
    fired(events, t, x).map(Termination::EventFired)
}

fn axpy(out: &mut [f64], x: &[f64], terms: &[(f64, &[f64])]) {
    for i in 0..out.len() {
        out[i] = x[i] + terms.iter().map(|(c, k)| c * k[i]).sum::<f64>();
    }
}

fn run_rk4<F: FlowField + ?Sized>(
    field: &F,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    events: &[Event],
    opts: &IntegratorOptions,
    mut rec: Recorder,
) -> Trajectory {
    let steps = ((t_end - t0) / opts.h_init).ceil().max(1.0) as usize;
    let h = (t_end - t0) / steps as f64;
    let m = x0.len();
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for i in 0..steps {
        if i >= opts.max_steps {
            let t = t0 + i as f64 * h;
            return rec.finish(t, &x, Termination::StepFailure(StepFailureKind::MaxSteps));
        }
        let t = t0 + i as f64 * h;
        field.eval(t, &x, &mut k1);
        axpy(&mut tmp, &x, &[(0.5 * h, &k1)]);
        field.eval(t + 0.5 * h, &tmp, &mut k2);
        axpy(&mut tmp, &x, &[(0.5 * h, &k2)]);
        field.eval(t + 0.5 * h, &tmp, &mut k3);
        axpy(&mut tmp, &x, &[(h, &k3)]);
        field.eval(t + h, &tmp, &mut k4);
        for j in 0..m {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        let t_new = if i + 1 == steps { t_end } else { t0 + (i + 1) as f64 * h };
        rec.traj.accepted_steps += 1;
        if let Some(term) = after_step(field, events, t_new, &x) {
            return rec.finish(t_new, &x, term);
        }
        rec.push(t_new, &x);
    }
    rec.finish(t_end, &x, Termination::HorizonReached)
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

fn run_dopri<F: FlowField + ?Sized>(
    field: &F,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    events: &[Event],
    opts: &IntegratorOptions,
    mut rec: Recorder,
) -> Trajectory {
    let m = x0.len();
    let mut x = x0.to_vec();
    let mut t = t0;
    let mut h = opts.h_init.min(t_end - t0);
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; m]; 7];
    let mut tmp = vec![0.0; m];
    let mut x_new = vec![0.0; m];
    field.eval(t, &x, &mut k[0]);
    let mut attempts = 0usize;
    loop {
        if attempts >= opts.max_steps {
            return rec.finish(t, &x, Termination::StepFailure(StepFailureKind::MaxSteps));
        }
        attempts += 1;
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        {
            let (k1, rest) = k.split_at_mut(1);
            let k1 = &k1[0];
            axpy(&mut tmp, &x, &[(h * A21, k1)]);
            field.eval(t + C2 * h, &tmp, &mut rest[0]);
            axpy(&mut tmp, &x, &[(h * A31, k1), (h * A32, &rest[0])]);
            field.eval(t + C3 * h, &tmp, &mut rest[1]);
            axpy(&mut tmp, &x, &[(h * A41, k1), (h * A42, &rest[0]), (h * A43, &rest[1])]);
            field.eval(t + C4 * h, &tmp, &mut rest[2]);
            axpy(
                &mut tmp,
                &x,
                &[(h * A51, k1), (h * A52, &rest[0]), (h * A53, &rest[1]), (h * A54, &rest[2])],
            );
            field.eval(t + C5 * h, &tmp, &mut rest[3]);
            axpy(
                &mut tmp,
                &x,
                &[
                    (h * A61, k1),
                    (h * A62, &rest[0]),
                    (h * A63, &rest[1]),
                    (h * A64, &rest[2]),
                    (h * A65, &rest[3]),
                ],
            );
            field.eval(t + h, &tmp, &mut rest[4]);
            axpy(
                &mut x_new,
                &x,
                &[
                    (h * A71, k1),
                    (h * A73, &rest[1]),
                    (h * A74, &rest[2]),
                    (h * A75, &rest[3]),
                    (h * A76, &rest[4]),
                ],
            );
            field.eval(t + h, &x_new, &mut rest[5]);
        }
        let mut err = 0.0f64;
        let mut finite = true;
        for i in 0..m {
            let e = h * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
            let sc = opts.abs_tol + opts.rel_tol * x[i].abs().max(x_new[i].abs());
            if !e.is_finite() || !x_new[i].is_finite() {
                finite = false;
            }
            err = err.max(e.abs() / sc);
        }
        if !finite {
            err = f64::INFINITY;
        }
        if err <= 1.0 {
            if opts.dense {
                let ydiff: Vec<f64> = (0..m).map(|i| x_new[i] - x[i]).collect();
                let bspl: Vec<f64> = (0..m).map(|i| h * k[0][i] - ydiff[i]).collect();
                let r4: Vec<f64> = (0..m).map(|i| ydiff[i] - h * k[6][i] - bspl[i]).collect();
                let r5: Vec<f64> = (0..m)
                    .map(|i| h * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]))
                    .collect();
                rec.traj.dense.push(DenseStep {
                    t,
                    h,
                    rcont: [x.clone(), ydiff, bspl, r4, r5],
                });
            }
            t = if last { t_end } else { t + h };
            std::mem::swap(&mut x, &mut x_new);
            k.swap(0, 6);
            rec.traj.accepted_steps += 1;
            if let Some(term) = after_step(field, events, t, &x) {
                return rec.finish(t, &x, term);
            }
            if last {
                return rec.finish(t, &x, Termination::HorizonReached);
            }
            rec.push(t, &x);
            let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (h * fac).min(opts.h_max);
        } else {
            rec.traj.rejected_steps += 1;
            let fac = if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
            h *= fac;
            if h < opts.h_min {
                return rec.finish(t, &x, Termination::StepFailure(StepFailureKind::StepTooSmall));
            }
        }
    }
}

/// Result of an empirical order-of-accuracy measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderReport {
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log(error)` against `log(h)`.
    pub slope: f64,
}

/// Measures the global-error order of fixed-step RK4 on a problem with known
/// solution, halving the step `levels` times from `h0`.
pub fn order_check<F: FlowField + ?Sized>(
    field: &F,
    x0: &[f64],
    t0: f64,
    t_end: f64,
    exact: &[f64],
    h0: f64,
    levels: usize,
) -> Result<OrderReport, IntegratorError> {
    let mut steps = Vec::new();
    let mut errors = Vec::new();
    for l in 0..levels {
        let h = h0 / 2f64.powi(l as i32);
        let traj = integrate(field, x0, t0, t_end, &IntegratorOptions::rk4(h).with_stride(usize::MAX))?;
        let err = traj
            .final_state()
            .iter()
            .zip(exact)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        steps.push(h);
        errors.push(err);
    }
    let lx: Vec<f64> = steps.iter().map(|h| h.ln()).collect();
    let ly: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    Ok(OrderReport {
        slope: fit_slope(&lx, &ly),
        steps,
        errors,
    })
}

/// Ordinary least-squares slope.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FnField;

    fn decay() -> FnField<impl Fn(f64, &[f64], &mut [f64]) + Send + Sync> {
        FnField::new(1, |_t, x: &[f64], o: &mut [f64]| o[0] = -x[0])
    }

    #[test]
    fn scalar_decay_adaptive() {
        let tr = integrate(&decay(), &[1.0], 0.0, 1.0, &IntegratorOptions::default()).unwrap();
        assert_eq!(tr.termination, Termination::HorizonReached);
        assert_eq!(tr.final_time(), 1.0);
        assert!((tr.final_state()[0] - (-1f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn p2_consensus_mode() {
        let f = FnField::new(2, |_t, x: &[f64], o: &mut [f64]| {
            o[0] = -(x[0] - x[1]);
            o[1] = -(x[1] - x[0]);
        });
        let tr = integrate(&f, &[1.0, -1.0], 0.0, 1.0, &IntegratorOptions::default()).unwrap();
        let e = (-2f64).exp();
        assert!((tr.final_state()[0] - e).abs() < 1e-7 && (tr.final_state()[1] + e).abs() < 1e-7);
    }

    #[test]
    fn zero_field_is_constant() {
        let f = FnField::new(3, |_t, _x: &[f64], o: &mut [f64]| o.iter_mut().for_each(|v| *v = 0.0));
        for opts in [IntegratorOptions::default(), IntegratorOptions::rk4(0.1)] {
            let tr = integrate(&f, &[1.0, 2.0, 3.0], 0.0, 5.0, &opts).unwrap();
            assert!(tr.states.iter().all(|s| s == &vec![1.0, 2.0, 3.0]));
        }
    }

    #[test]
    fn rk4_order() {
        let r = order_check(&decay(), &[1.0], 0.0, 1.0, &[(-1f64).exp()], 0.1, 5).unwrap();
        assert!(r.slope > 3.8 && r.slope < 4.2, "slope {}", r.slope);
    }

    #[test]
    fn until_fires_and_boundary_cases() {
        let opts = IntegratorOptions::default();
        let tr = integrate_until(&decay(), &[1.0], 0.0, 50.0, |_, x| x[0] < 1e-3, &opts).unwrap();
        assert_eq!(tr.termination, Termination::EventFired("predicate".into()));
        assert!(tr.final_state()[0] < 1e-3);
        let tr = integrate_until(&decay(), &[1.0], 0.0, 1.0, |_, _| false, &opts).unwrap();
        assert_eq!(tr.termination, Termination::HorizonReached);
        let tr = integrate_until(&decay(), &[1.0], 0.0, 1.0, |_, _| true, &opts).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.termination, Termination::EventFired("predicate".into()));
    }

    #[test]
    fn stride_keeps_endpoints() {
        let opts = IntegratorOptions::default().with_stride(7);
        let tr = integrate(&decay(), &[1.0], 0.0, 10.0, &opts).unwrap();
        assert_eq!(tr.times[0], 0.0);
        assert_eq!(tr.final_time(), 10.0);
        assert!(tr.len() < tr.accepted_steps);
        assert!(tr.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn failures_are_reported() {
        let blow = FnField::new(1, |_t, x: &[f64], o: &mut [f64]| o[0] = x[0] * x[0]);
        let tr = integrate(&blow, &[1.0], 0.0, 2.0, &IntegratorOptions::default()).unwrap();
        assert!(tr.termination.is_failure());
        let opts = IntegratorOptions {
            max_steps: 3,
            ..IntegratorOptions::default()
        };
        let tr = integrate(&decay(), &[1.0], 0.0, 100.0, &opts).unwrap();
        assert_eq!(tr.termination, Termination::StepFailure(StepFailureKind::MaxSteps));
        assert!(integrate(&decay(), &[1.0], 1.0, 1.0, &IntegratorOptions::default()).is_err());
        assert!(integrate(&decay(), &[f64::NAN], 0.0, 1.0, &IntegratorOptions::default()).is_err());
        assert!(integrate(&decay(), &[1.0, 2.0], 0.0, 1.0, &IntegratorOptions::default()).is_err());
    }

    #[test]
    fn dense_output_accuracy() {
        let opts = IntegratorOptions::default().with_tol(1e-8).with_dense(true);
        let f = FnField::new(2, |_t, x: &[f64], o: &mut [f64]| {
            o[0] = x[1];
            o[1] = -x[0];
        });
        let tr = integrate(&f, &[0.0, 1.0], 0.0, 10.0, &opts).unwrap();
        assert!(tr.has_dense_output());
        for i in 0..200 {
            let t = i as f64 * 0.05 + 0.013;
            let y = tr.interpolate(t).unwrap();
            assert!((y[0] - t.sin()).abs() < 1e-7 && (y[1] - t.cos()).abs() < 1e-7, "t={t}");
        }
        assert!(tr.interpolate(11.0).is_none());
    }

    #[test]
    fn deterministic() {
        let opts = IntegratorOptions::default();
        let a = integrate(&decay(), &[0.3], 0.0, 7.0, &opts).unwrap();
        let b = integrate(&decay(), &[0.3], 0.0, 7.0, &opts).unwrap();
        assert_eq!(a, b);
    }
}
