//! Stable manifolds of saddle points for the penalized flow
//! `ẋ = −∇h(x) − β_t Q x`.
//!
//! The construction follows the recenter / diagonalize / solve pipeline:
//!
//! 1. [`critical_path`]: the branch `g(β)` of zeros of `∇h(x) + βQx` tracking
//!    the constrained saddle `x*`, with `g'` by implicit differentiation.
//! 2. [`linearize`]: `A(t) = −(∇²h(g(β_t)) + β_t Q)`, the Jacobian of the flow
//!    at `g(β_t)`, diagonalized as `U A Uᵀ = Λ` with eigenvectors aligned along
//!    the time grid, plus the constants `(α, σ, K, ε, r)`.
//! 3. [`solve_stable_solution`]: Picard iteration for
//!    `u = V^s(·,t₀)(a;0) + ∫_{t₀}^t V^s (F̃(u) − w) − ∫_t^∞ V^u (F̃(u) − w)`,
//!    where `w = U g' β̇`.
//! 4. [`build_chart`]: the graph `ψ(t₀, a) = u^u(t₀, a)` of the local stable
//!    manifold, mapped back by `x = U(t₀)ᵀ z + g(β_{t₀})`.
//!
//! [`shooting_probe`] is the independent check: bisection between basins along
//! an unstable direction in the original DGD flow.

mod chart;
mod linearize;
mod path;
mod picard;
mod probe;

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{DynamicsError, Penalty, Schedule};
use crate::graph::{consensus_vector, sorted_symmetric_eigen, Graph};
use crate::integrator::IntegratorError;
use crate::objective::{classify_symmetric, CriticalKind, ObjectiveSet, StackedObjective};

pub use chart::{build_chart, chart_consistency, ChartCheck, ChartSample, ManifoldChart};
pub use linearize::{linearize, Constants, LinearizeOptions, LinearizedSystem, Which};
pub use path::{critical_path, PenalizedPath, TOL_NEWTON};
pub use picard::{forcing_term, forcing_term_at, solve_stable_solution, ForcingTerm, PicardOptions, StableSolution};
pub use probe::{shooting_probe, ProbeOutcome, ProbeSetup, ShotLabel, DELTA_SADDLE, TOL_S};

/// Eigenvalues of `Q` below this count as null directions.
pub const TOL_NULL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error("dim N(Q) = {0}, the stable-manifold construction needs at least 2")]
    NullSpaceTooSmall(usize),
    #[error("x* is not a critical point of h restricted to N(Q): projected gradient norm {0:e}")]
    NotCritical(f64),
    #[error("x* is not a nondegenerate saddle of h restricted to N(Q) ({0})")]
    NotSaddle(CriticalKind),
    #[error("Newton continuation failed at beta = {beta} (residual {residual:e})")]
    NewtonFailed { beta: f64, residual: f64 },
    #[error("singular Jacobian at beta = {0}")]
    SingularJacobian(f64),
    #[error("beta = {beta} outside the computed path [{lo}, {hi}]")]
    BetaOutOfRange { beta: f64, lo: f64, hi: f64 },
    #[error("beta grid must be positive and strictly increasing")]
    BadBetaGrid,
    #[error("time grid must be strictly increasing with at least 3 nodes")]
    BadTimeGrid,
    #[error("eigenvalue branch {component} changes sign near t = {t}")]
    EigenSignChange { t: f64, component: usize },
    #[error("eigenvector alignment is ambiguous near t = {0}")]
    AmbiguousAlignment(f64),
    #[error("symmetric eigensolver did not converge")]
    EigenSolver,
    #[error("transition factor domain violated: {0}")]
    Domain(&'static str),
    #[error("time {0} is not a node of the linearization grid")]
    NotGridNode(f64),
    #[error("time {t} outside the linearization grid [{lo}, {hi}]")]
    OutsideGrid { t: f64, lo: f64, hi: f64 },
    #[error("point of norm {norm} outside the ball of radius {radius}")]
    OutsideBall { norm: f64, radius: f64 },
    #[error("constants violate epsilon < sigma/(6K): epsilon = {epsilon:e}, sigma/(6K) = {bound:e}; shrink the radius or increase t0")]
    Constants { epsilon: f64, bound: f64 },
    #[error("|a_s| = {norm} must be below r/3 = {limit}")]
    InitialTooLarge { norm: f64, limit: f64 },
    #[error("|c(t)| reaches {max:e}, above r/3 = {limit:e}; increase t0")]
    ForcingTooLarge { max: f64, limit: f64 },
    #[error("stable coordinate vector has length {got}, expected k = {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("Picard iteration is not contracting (measured ratio {0})")]
    NotContracting(f64),
    #[error("Picard iteration did not converge in {iterations} iterations (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("forcing integrand does not decay along the grid")]
    NonDecayingTail,
    #[error("probe ends do not escape to opposite sides ({lo:?} at the lower end, {hi:?} at the upper end)")]
    NoSignChange { lo: ShotLabel, hi: ShotLabel },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
}

/// The penalized problem around a constrained saddle.
#[derive(Debug, Clone)]
pub struct ManifoldProblem {
    pub h: StackedObjective,
    pub q: DMatrix<f64>,
    pub penalty: Penalty,
    pub x_star: DVector<f64>,
    /// Orthonormal basis of `N(Q)`, one column per direction.
    pub null_basis: DMatrix<f64>,
    /// Number of negative eigenvalues of the restricted Hessian.
    pub p: usize,
}

impl ManifoldProblem {
    /// Validates `x*` as a nondegenerate saddle of `h` restricted to `N(Q)`.
    pub fn new(h: StackedObjective, q: DMatrix<f64>, penalty: Penalty, x_star: DVector<f64>) -> Result<Self, ManifoldError> {
        let (vals, vecs) = sorted_symmetric_eigen(&q).map_err(|_| ManifoldError::EigenSolver)?;
        let null: Vec<usize> = (0..vals.len()).filter(|&i| vals[i].abs() <= TOL_NULL * (1.0 + vals[vals.len() - 1].abs())).collect();
        if null.len() < 2 {
            return Err(ManifoldError::NullSpaceTooSmall(null.len()));
        }
        let null_basis = DMatrix::from_fn(q.nrows(), null.len(), |i, j| vecs[(i, null[j])]);
        let grad = h.gradient(x_star.as_slice());
        let restricted = null_basis.transpose() * &grad;
        if restricted.norm() > 1e-8 {
            return Err(ManifoldError::NotCritical(restricted.norm()));
        }
        let hess = null_basis.transpose() * h.hessian(x_star.as_slice()) * &null_basis;
        let kind = classify_symmetric(&hess).map_err(|_| ManifoldError::EigenSolver)?;
        let p = match kind {
            CriticalKind::Saddle { negative } => negative,
            other => return Err(ManifoldError::NotSaddle(other)),
        };
        Ok(Self {
            h,
            q,
            penalty,
            x_star,
            null_basis,
            p,
        })
    }

    /// The DGD special case in the α-clock: `Q = L⊗I_d`, `β̃ = β/α`, and
    /// `x* = 1⊗a*` for a saddle `a*` of the sum objective.
    pub fn dgd(graph: &Graph, objectives: Arc<ObjectiveSet>, schedule: Schedule, saddle: &[f64]) -> Result<Self, ManifoldError> {
        let d = objectives.dim();
        if graph.node_count() != objectives.agent_count() {
            return Err(DynamicsError::AgentCount {
                graph: graph.node_count(),
                agents: objectives.agent_count(),
            }
            .into());
        }
        schedule.validate()?;
        let q = graph.kron_laplacian(d);
        let x_star = consensus_vector(saddle, graph.node_count());
        Self::new(StackedObjective::new(objectives), q, Penalty::AlphaClock(schedule), x_star)
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    /// `−(∇²h(x) + βQ)`.
    pub fn flow_jacobian(&self, x: &[f64], beta: f64) -> DMatrix<f64> {
        -(self.h.hessian(x) + &self.q * beta)
    }

    /// `∇h(x) + βQx`.
    pub fn penalized_gradient(&self, x: &DVector<f64>, beta: f64) -> DVector<f64> {
        self.h.gradient(x.as_slice()) + &self.q * x * beta
    }
}
