//! Weight schedules, time changes, and the flow fields of the consensus +
//! innovations dynamics.
//!
//! The per-agent field is
//!
//! ```text
//! ẋ_n = β_t Σ_{ℓ∈Ω_n} (x_ℓ − x_n) − α_t ∇f_n(x_n),
//! ```
//!
//! or in stacked form `ẋ = −β_t (L⊗I_d) x − α_t ∇h(x)`. Trajectories are
//! integrated in the original clock; the β- and α-clocks are reparametrizations
//! `t ↦ T(t)` where `T` inverts `S(τ) = ∫_0^τ w_r dr`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::objective::{ObjectiveSet, StackedObjective};
use crate::quadrature::adaptive_simpson;

/// Default half-width of the validity box `[−R, R]^{Nd}`.
pub const DEFAULT_BOX: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("schedule exponents must satisfy 0 ≤ tau_beta < tau_alpha ≤ 1 (got tau_alpha = {tau_alpha}, tau_beta = {tau_beta})")]
    Exponents { tau_alpha: f64, tau_beta: f64 },
    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("state left the validity box [-{half_width}, {half_width}]")]
    OutsideBox { half_width: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Mismatch { expected: usize, got: usize },
    #[error("graph has {graph} nodes but the objective has {agents} agents")]
    AgentCount { graph: usize, agents: usize },
}

/// Power-law weights `α_t = (t+1)^{−τ_α}` and `β_t = (t+1)^{−τ_β}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub tau_alpha: f64,
    pub tau_beta: f64,
}

impl Schedule {
    pub fn new(tau_alpha: f64, tau_beta: f64) -> Result<Self, DynamicsError> {
        let s = Self { tau_alpha, tau_beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let (a, b) = (self.tau_alpha, self.tau_beta);
        if !(0.0 <= b && b < a && a <= 1.0) {
            return Err(DynamicsError::Exponents {
                tau_alpha: a,
                tau_beta: b,
            });
        }
        Ok(())
    }

    /// `(α(t), β(t))`, rejecting negative times.
    pub fn eval(&self, t: f64) -> Result<(f64, f64), DynamicsError> {
        if !(t >= 0.0) {
            return Err(DynamicsError::NegativeTime(t));
        }
        Ok((self.alpha(t), self.beta(t)))
    }

    pub fn alpha(&self, t: f64) -> f64 {
        (t + 1.0).powf(-self.tau_alpha)
    }

    pub fn beta(&self, t: f64) -> f64 {
        (t + 1.0).powf(-self.tau_beta)
    }

    pub fn alpha_dot(&self, t: f64) -> f64 {
        -self.tau_alpha * (t + 1.0).powf(-self.tau_alpha - 1.0)
    }

    pub fn beta_dot(&self, t: f64) -> f64 {
        -self.tau_beta * (t + 1.0).powf(-self.tau_beta - 1.0)
    }

    /// Decay exponent of `α/β`.
    pub fn tau_gamma(&self) -> f64 {
        self.tau_alpha - self.tau_beta
    }

    pub fn time_change(&self, which: Weight) -> TimeChange {
        time_change(*self, which)
    }
}

/// Which schedule component drives a time change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    Alpha,
    Beta,
}

/// Clock in which a field is expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clock {
    #[default]
    Original,
    Beta,
    Alpha,
}

impl fmt::Display for Clock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Clock::Original => "original",
            Clock::Beta => "beta",
            Clock::Alpha => "alpha",
        })
    }
}

#[derive(Clone)]
enum Rate {
    Power(f64),
    General(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

/// The pair `S(τ) = ∫_0^τ w_r dr` and its inverse `T`.
#[derive(Clone)]
pub struct TimeChange {
    rate: Rate,
    /// Schedule and weight, when built from a schedule; enables `gamma`.
    origin: Option<(Schedule, Weight)>,
}

impl fmt::Debug for TimeChange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.rate {
            Rate::Power(e) => write!(f, "TimeChange(power {e})"),
            Rate::General(_) => f.write_str("TimeChange(general)"),
        }
    }
}

/// Builds the time change driven by `α` or `β` of a schedule.
pub fn time_change(s: Schedule, which: Weight) -> TimeChange {
    let e = match which {
        Weight::Alpha => s.tau_alpha,
        Weight::Beta => s.tau_beta,
    };
    TimeChange {
        rate: Rate::Power(e),
        origin: Some((s, which)),
    }
}

impl TimeChange {
    /// Time change for the rate `(τ+1)^{−exponent}`.
    pub fn power(exponent: f64) -> Self {
        Self {
            rate: Rate::Power(exponent),
            origin: None,
        }
    }

    /// Time change for an arbitrary positive rate; `S` uses adaptive quadrature.
    pub fn from_rate(rate: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            rate: Rate::General(Arc::new(rate)),
            origin: None,
        }
    }

    /// The integrand `w(τ)`.
    pub fn rate(&self, tau: f64) -> f64 {
        match &self.rate {
            Rate::Power(e) => (tau + 1.0).powf(-e),
            Rate::General(f) => f(tau),
        }
    }

    /// `S(τ)`.
    pub fn forward(&self, tau: f64) -> f64 {
        match &self.rate {
            Rate::Power(e) => {
                let u = 1.0 - e;
                let l = tau.ln_1p();
                if u.abs() < 1e-12 {
                    l
                } else {
                    (u * l).exp_m1() / u
                }
            }
            Rate::General(f) => adaptive_simpson(|r| f(r), 0.0, tau, 1e-13 * tau.max(1.0)),
        }
    }

    /// `T(t)`, the inverse of `S`, by safeguarded Newton iteration.
    pub fn inverse(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0f64, t.max(1.0));
        while self.forward(hi) < t {
            lo = hi;
            hi *= 2.0;
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let r = self.forward(x) - t;
            if r.abs() <= 1e-15 * t.max(1.0) {
                break;
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let newton = x - r / self.rate(x);
            x = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
        }
        x
    }

    /// `dT/dt = 1 / w(T(t))`.
    pub fn inverse_derivative(&self, t: f64) -> f64 {
        1.0 / self.rate(self.inverse(t))
    }

    /// Ratio process in the new clock: `α(T)/β(T)` for the β-clock, `β(T)/α(T)`
    /// for the α-clock. `None` for time changes not built from a schedule.
    pub fn gamma(&self, t: f64) -> Option<f64> {
        let (s, which) = self.origin?;
        let tau = self.inverse(t);
        Some(match which {
            Weight::Beta => s.alpha(tau) / s.beta(tau),
            Weight::Alpha => s.beta(tau) / s.alpha(tau),
        })
    }
}

/// A time-dependent vector field on `R^M`.
pub trait FlowField: Send + Sync {
    fn dim(&self) -> usize;
    /// Writes `F(t, x)` into `out`.
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]);
    /// Half-width of the validity box, if any.
    fn validity_box(&self) -> Option<f64> {
        None
    }

    /// Evaluates after checking dimension and validity box.
    fn eval_checked(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        if x.len() != self.dim() {
            return Err(DynamicsError::Mismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if let Some(r) = self.validity_box() {
            if !inside_box(x, r) {
                return Err(DynamicsError::OutsideBox { half_width: r });
            }
        }
        let mut out = vec![0.0; x.len()];
        self.eval(t, x, &mut out);
        Ok(out)
    }
}

pub(crate) fn inside_box(x: &[f64], r: f64) -> bool {
    x.iter().all(|v| v.abs() <= r)
}

impl<F: FlowField + ?Sized> FlowField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (**self).eval(t, x, out)
    }
    fn validity_box(&self) -> Option<f64> {
        (**self).validity_box()
    }
}

/// A field given by a closure, for tests and ad hoc problems.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Send + Sync> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64]) + Send + Sync> FlowField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.f)(t, x, out)
    }
}

/// The distributed gradient descent field, optionally in a changed clock.
#[derive(Debug, Clone)]
pub struct DgdField {
    graph: Arc<Graph>,
    objectives: Arc<ObjectiveSet>,
    schedule: Schedule,
    clock: Clock,
    change: Option<TimeChange>,
    box_half: Option<f64>,
}

/// Builds the field of the consensus + innovations dynamics in the original clock.
pub fn dgd_field(graph: Arc<Graph>, objectives: Arc<ObjectiveSet>, schedule: Schedule) -> Result<DgdField, DynamicsError> {
    DgdField::new(graph, objectives, schedule, Clock::Original)
}

impl DgdField {
    pub fn new(graph: Arc<Graph>, objectives: Arc<ObjectiveSet>, schedule: Schedule, clock: Clock) -> Result<Self, DynamicsError> {
        schedule.validate()?;
        if graph.node_count() != objectives.agent_count() {
            return Err(DynamicsError::AgentCount {
                graph: graph.node_count(),
                agents: objectives.agent_count(),
            });
        }
        let change = match clock {
            Clock::Original => None,
            Clock::Beta => Some(schedule.time_change(Weight::Beta)),
            Clock::Alpha => Some(schedule.time_change(Weight::Alpha)),
        };
        Ok(Self {
            graph,
            objectives,
            schedule,
            clock,
            change,
            box_half: Some(DEFAULT_BOX),
        })
    }

    pub fn with_box(mut self, half_width: Option<f64>) -> Self {
        self.box_half = half_width;
        self
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn objectives(&self) -> &ObjectiveSet {
        &self.objectives
    }

    pub fn schedule(&self) -> Schedule {
        self.schedule
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    /// Coefficients `(c_consensus, c_gradient)` at time `t` of this clock.
    pub fn weights(&self, t: f64) -> (f64, f64) {
        match &self.change {
            None => (self.schedule.beta(t), self.schedule.alpha(t)),
            Some(ch) => {
                let tau = ch.inverse(t);
                let (a, b) = (self.schedule.alpha(tau), self.schedule.beta(tau));
                match self.clock {
                    Clock::Beta => (1.0, a / b),
                    _ => (b / a, 1.0),
                }
            }
        }
    }

    /// `Σ_{ℓ∈Ω_n}(x_ℓ − x_n)` for every agent, without weights.
    pub fn consensus_term(&self, x: &[f64], out: &mut [f64]) {
        let d = self.objectives.dim();
        for n in 0..self.graph.node_count() {
            let block = &mut out[n * d..(n + 1) * d];
            block.iter_mut().for_each(|v| *v = 0.0);
            for &l in self.graph.neighbors(n) {
                for k in 0..d {
                    block[k] += x[l * d + k] - x[n * d + k];
                }
            }
        }
    }

    /// The Kronecker form `−c_β (L⊗I_d) x − c_α ∇h(x)`, used to cross-check `eval`.
    pub fn eval_kron(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let (cb, ca) = self.weights(t);
        let lk = self.graph.kron_laplacian(self.objectives.dim());
        let xv = nalgebra::DVector::from_column_slice(x);
        let mut g = vec![0.0; x.len()];
        self.objectives.stacked_gradient_into(x, &mut g);
        let lx = lk * xv;
        (0..x.len()).map(|i| -cb * lx[i] - ca * g[i]).collect()
    }
}

impl FlowField for DgdField {
    fn dim(&self) -> usize {
        self.objectives.stacked_dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (cb, ca) = self.weights(t);
        let mut grad = vec![0.0; x.len()];
        self.objectives.stacked_gradient_into(x, &mut grad);
        self.consensus_term(x, out);
        for (o, g) in out.iter_mut().zip(&grad) {
            *o = cb * *o - ca * g;
        }
    }

    fn validity_box(&self) -> Option<f64> {
        self.box_half
    }
}

/// The penalty weight `β(t)` multiplying `Q` in the penalized field.
#[derive(Debug, Clone)]
pub enum Penalty {
    Constant(f64),
    /// `β̃(t) = β(T(t))/α(T(t)) = (T(t)+1)^{τ_α−τ_β}`, the consensus weight of
    /// the DGD field in the α-clock.
    AlphaClock(Schedule),
}

impl Penalty {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Penalty::Constant(b) => *b,
            Penalty::AlphaClock(s) => {
                let tau = s.time_change(Weight::Alpha).inverse(t);
                (tau + 1.0).powf(s.tau_gamma())
            }
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Penalty::Constant(_) => 0.0,
            Penalty::AlphaClock(s) => {
                let tau = s.time_change(Weight::Alpha).inverse(t);
                s.tau_gamma() * (tau + 1.0).powf(2.0 * s.tau_alpha - s.tau_beta - 1.0)
            }
        }
    }

    /// Smallest `t` with `value(t) ≥ beta`; `None` if never reached.
    pub fn time_for(&self, beta: f64) -> Option<f64> {
        match self {
            Penalty::Constant(b) => (*b >= beta).then_some(0.0),
            Penalty::AlphaClock(s) => {
                if beta <= 1.0 {
                    return Some(0.0);
                }
                let tau = beta.powf(1.0 / s.tau_gamma()) - 1.0;
                Some(s.time_change(Weight::Alpha).forward(tau))
            }
        }
    }
}

/// The penalized gradient flow `ẋ = −∇h(x) − β(t) Q x`.
#[derive(Debug, Clone)]
pub struct PenalizedField {
    h: StackedObjective,
    q: DMatrix<f64>,
    penalty: Penalty,
    box_half: Option<f64>,
}

/// Builds `−∇h − β(t)Q x`.
pub fn penalized_field(h: StackedObjective, q: DMatrix<f64>, penalty: Penalty) -> Result<PenalizedField, DynamicsError> {
    if q.nrows() != h.dim() || q.ncols() != h.dim() {
        return Err(DynamicsError::Mismatch {
            expected: h.dim(),
            got: q.nrows(),
        });
    }
    Ok(PenalizedField {
        h,
        q,
        penalty,
        box_half: Some(DEFAULT_BOX),
    })
}

impl PenalizedField {
    pub fn with_box(mut self, half_width: Option<f64>) -> Self {
        self.box_half = half_width;
        self
    }

    pub fn objective(&self) -> &StackedObjective {
        &self.h
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn penalty(&self) -> &Penalty {
        &self.penalty
    }
}

impl FlowField for PenalizedField {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let b = self.penalty.value(t);
        self.h.objectives().stacked_gradient_into(x, out);
        let m = x.len();
        for i in 0..m {
            let qx: f64 = (0..m).map(|j| self.q[(i, j)] * x[j]).sum();
            out[i] = -out[i] - b * qx;
        }
    }

    fn validity_box(&self) -> Option<f64> {
        self.box_half
    }
}

/// Splits `x ∈ R^{Nd}` into the block mean and the part orthogonal to consensus.
pub fn consensus_projection(x: &[f64], n: usize, d: usize) -> Result<(Vec<f64>, Vec<f64>), DynamicsError> {
    if x.len() != n * d || n == 0 {
        return Err(DynamicsError::Mismatch {
            expected: n * d,
            got: x.len(),
        });
    }
    let mut avg = vec![0.0; d];
    for block in x.chunks(d) {
        for (a, v) in avg.iter_mut().zip(block) {
            *a += v;
        }
    }
    avg.iter_mut().for_each(|a| *a /= n as f64);
    let perp = x.iter().enumerate().map(|(i, v)| v - avg[i % d]).collect();
    Ok((avg, perp))
}
