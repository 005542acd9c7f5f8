use nalgebra::DVector;
use serde::Serialize;

use super::{LinearizedSystem, ManifoldError, PenalizedPath};
use crate::dynamics::FnField;
use crate::integrator::{integrate, IntegratorOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PicardOptions {
    /// Stop once `sup_t |u_{j+1} − u_j|` drops below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 100 }
    }
}

/// `c(t) = −∫_{t₀}^t V^s(t,τ) w dτ + ∫_t^∞ V^u(t,τ) w dτ` on grid nodes,
/// with the improper integral truncated at the last node.
#[derive(Debug, Clone)]
pub struct ForcingTerm {
    pub times: Vec<f64>,
    pub values: Vec<DVector<f64>>,
    /// `sup_t |c(t)|`.
    pub sup: f64,
    /// Bound on the dropped tail `∫_{t_end}^∞` at `t₀`.
    pub tail_bound: f64,
}

/// The converged Picard fixed point on `[t₀, t₀ + horizon]`.
#[derive(Debug, Clone, Serialize)]
pub struct StableSolution {
    pub t0: f64,
    pub a_s: Vec<f64>,
    pub times: Vec<f64>,
    #[serde(skip)]
    pub u: Vec<DVector<f64>>,
    pub iterations: usize,
    /// Largest ratio of successive sup-norm changes.
    pub contraction_ratio: f64,
    pub final_change: f64,
    /// Sup over interior nodes of the centered-difference ODE defect, outside
    /// the initial layer of stiff stable rows (`|λ| > 10 max(μ_s, μ_u)`).
    pub ode_residual: f64,
    pub forcing_sup: f64,
    pub tail_bound: f64,
}

impl StableSolution {
    /// `z(t₀) = (a_s, ψ)`.
    pub fn z0(&self) -> &[f64] {
        self.u[0].as_slice()
    }

    /// The unstable coordinates `ψ(t₀, a_s)`.
    pub fn psi(&self) -> &[f64] {
        &self.u[0].as_slice()[self.a_s.len()..]
    }

    pub fn sup_norm(&self) -> f64 {
        self.u.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

fn sub_range(sys: &LinearizedSystem, t0: f64, horizon: f64) -> Result<(usize, usize), ManifoldError> {
    let i0 = sys.node_index(t0)?;
    let t_end = t0 + horizon;
    let last = *sys.times.last().unwrap();
    if t_end > last + 1e-9 * (1.0 + last.abs()) {
        return Err(ManifoldError::OutsideGrid { t: t_end, lo: sys.times[0], hi: last });
    }
    let i1 = sys.times.partition_point(|&s| s <= t_end + 1e-9 * (1.0 + t_end.abs())) - 1;
    if i1 < i0 + 2 {
        return Err(ManifoldError::BadTimeGrid);
    }
    Ok((i0, i1))
}

/// `∫_0^1 e^{lσ} dσ`.
fn phi1(l: f64) -> f64 {
    if l.abs() < 1e-8 {
        1.0 + 0.5 * l
    } else {
        l.exp_m1() / l
    }
}

/// `∫_0^1 σ e^{lσ} dσ`.
fn psi1(l: f64) -> f64 {
    if l.abs() < 1e-2 {
        // Σ lⁿ / (n! (n+2))
        let mut term = 1.0;
        let mut sum = 0.0;
        for n in 0..8 {
            sum += term / (n as f64 + 2.0);
            term *= l / (n as f64 + 1.0);
        }
        sum
    } else {
        (l.exp() * (l - 1.0) + 1.0) / (l * l)
    }
}

/// `∫_{t₀}^t V^s G` (stable rows) and `−∫_t^{t_end} V^u G` (unstable rows)
/// on nodes `i0..=i1`, exact for `λ` constant and `G` linear on each step.
fn duhamel(sys: &LinearizedSystem, i0: usize, i1: usize, g: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let m = sys.dim();
    let n = i1 - i0 + 1;
    let mut out = vec![DVector::zeros(m); n];
    for j in 0..m {
        let phi = sys.phi(j);
        if j < sys.k {
            let mut acc = 0.0;
            for s in 0..n - 1 {
                let (a, b) = (i0 + s, i0 + s + 1);
                let l = phi[b] - phi[a];
                let h = sys.times[b] - sys.times[a];
                acc = l.exp() * acc + h * (g[s + 1][j] * phi1(l) + (g[s][j] - g[s + 1][j]) * psi1(l));
                out[s + 1][j] = acc;
            }
        } else {
            let mut acc = 0.0;
            for s in (0..n - 1).rev() {
                let (a, b) = (i0 + s, i0 + s + 1);
                let l = phi[a] - phi[b];
                let h = sys.times[b] - sys.times[a];
                acc = l.exp() * acc + h * (g[s][j] * phi1(l) + (g[s + 1][j] - g[s][j]) * psi1(l));
                out[s][j] = -acc;
            }
        }
    }
    out
}

/// `max_j e^{Φ_j(t₀)−Φ_j(t_end)} |G_j(t_end)| / λ_j(t_end)` over unstable rows.
fn tail(sys: &LinearizedSystem, i0: usize, i1: usize, g_end: &DVector<f64>) -> f64 {
    (sys.k..sys.dim())
        .map(|j| {
            let decay = (sys.phi(j)[i0] - sys.phi(j)[i1]).exp();
            decay * g_end[j].abs() / sys.lambda[i1][j]
        })
        .fold(0.0, f64::max)
}

/// The forcing term on the nodes of `[t₀, t₀ + horizon]`.
pub fn forcing_term(sys: &LinearizedSystem, t0: f64, horizon: f64) -> Result<ForcingTerm, ManifoldError> {
    let (i0, i1) = sub_range(sys, t0, horizon)?;
    let g: Vec<DVector<f64>> = (i0..=i1).map(|m| -sys.forcing_integrand(m)).collect();
    let (w0, w1) = (g[0].norm(), g[g.len() - 1].norm());
    if w1 > w0 && w1 > 1e-14 {
        return Err(ManifoldError::NonDecayingTail);
    }
    let values = duhamel(sys, i0, i1, &g);
    let sup = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    Ok(ForcingTerm {
        times: sys.times[i0..=i1].to_vec(),
        tail_bound: tail(sys, i0, i1, &g[g.len() - 1]),
        values,
        sup,
    })
}

/// `c(t)` by adaptive integration of `ċ_j = λ_j c_j − w_j` in a frame
/// recomputed at every evaluation time: forward from `c_j(t₀) = 0` for
/// stable rows, backward from `c_j(t_end) = 0` for unstable rows.
pub fn forcing_term_at(
    sys: &LinearizedSystem,
    path: &PenalizedPath,
    t0: f64,
    t_end: f64,
    t: f64,
    tol: f64,
) -> Result<DVector<f64>, ManifoldError> {
    if !(t0 <= t && t <= t_end) {
        return Err(ManifoldError::Domain("forcing time must lie in [t0, t_end]"));
    }
    let m = sys.dim();
    let k = sys.k;
    let rhs = |tau: f64, c: &[f64], out: &mut [f64], rows: std::ops::Range<usize>, sign: f64| match sys.frame_at(path, tau) {
        Ok((_, lam, w)) => {
            for (i, j) in rows.enumerate() {
                out[i] = sign * (lam[j] * c[i] - w[j]);
            }
        }
        Err(_) => out.fill(f64::NAN),
    };
    let opts = IntegratorOptions::default().with_tol(tol);
    let mut c = DVector::zeros(m);
    if k > 0 && t > t0 {
        let field = FnField::new(k, |tau, c: &[f64], out: &mut [f64]| rhs(tau, c, out, 0..k, 1.0));
        let traj = integrate(&field, &vec![0.0; k], t0, t, &opts)?;
        if traj.termination.is_failure() {
            return Err(ManifoldError::Domain("forcing integration failed"));
        }
        c.rows_mut(0, k).copy_from_slice(traj.final_state());
    }
    if k < m && t < t_end {
        let p = m - k;
        let field = FnField::new(p, |s, c: &[f64], out: &mut [f64]| rhs(t_end - s, c, out, k..m, -1.0));
        let traj = integrate(&field, &vec![0.0; p], 0.0, t_end - t, &opts)?;
        if traj.termination.is_failure() {
            return Err(ManifoldError::Domain("forcing integration failed"));
        }
        c.rows_mut(k, p).copy_from_slice(traj.final_state());
    }
    Ok(c)
}

/// Solves `u = V^s(·,t₀)(a_s;0) + Duhamel(F̃(u) − w)` on `[t₀, t₀ + horizon]`
/// by Picard iteration.
pub fn solve_stable_solution(
    sys: &LinearizedSystem,
    a_s: &[f64],
    t0: f64,
    horizon: f64,
    opts: &PicardOptions,
) -> Result<StableSolution, ManifoldError> {
    let c = sys.constants;
    if a_s.len() != sys.k {
        return Err(ManifoldError::Dimension { expected: sys.k, got: a_s.len() });
    }
    if !c.admissible() {
        return Err(ManifoldError::Constants {
            epsilon: c.epsilon,
            bound: c.epsilon_limit(),
        });
    }
    if t0 < c.t_start {
        return Err(ManifoldError::OutsideGrid {
            t: t0,
            lo: c.t_start,
            hi: *sys.times.last().unwrap(),
        });
    }
    let limit = c.radius / 3.0;
    let a_norm = a_s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if a_norm >= limit {
        return Err(ManifoldError::InitialTooLarge { norm: a_norm, limit });
    }
    let forcing = forcing_term(sys, t0, horizon)?;
    if forcing.sup > limit {
        return Err(ManifoldError::ForcingTooLarge { max: forcing.sup, limit });
    }
    let (i0, i1) = sub_range(sys, t0, horizon)?;
    let mdim = sys.dim();
    let mut a0 = DVector::zeros(mdim);
    a0.rows_mut(0, sys.k).copy_from_slice(a_s);
    let free: Vec<DVector<f64>> = (i0..=i1)
        .map(|m| DVector::from_fn(mdim, |j, _| a0[j] * (sys.phi(j)[m] - sys.phi(j)[i0]).exp()))
        .collect();
    let w: Vec<DVector<f64>> = (i0..=i1).map(|m| sys.forcing_integrand(m)).collect();
    let integrand = |u: &[DVector<f64>]| -> Result<Vec<DVector<f64>>, ManifoldError> {
        u.iter()
            .enumerate()
            .map(|(s, z)| {
                let norm = z.norm();
                if norm > c.radius {
                    return Err(ManifoldError::OutsideBall { norm, radius: c.radius });
                }
                Ok(sys.f_tilde(i0 + s, z) - &w[s])
            })
            .collect()
    };
    let mut u = free.clone();
    let mut prev_change = f64::NAN;
    let mut ratio = 0.0f64;
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    while iterations < opts.max_iter {
        iterations += 1;
        let g = integrand(&u)?;
        let next: Vec<DVector<f64>> = duhamel(sys, i0, i1, &g).into_iter().zip(&free).map(|(d, f)| d + f).collect();
        change = u.iter().zip(&next).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        u = next;
        if prev_change > 1e-14 && change > 1e-14 {
            ratio = ratio.max(change / prev_change);
            if ratio >= 1.0 {
                return Err(ManifoldError::NotContracting(ratio));
            }
        }
        if change < opts.tol {
            break;
        }
        prev_change = change;
    }
    if !(change < opts.tol) {
        return Err(ManifoldError::NoConvergence { iterations, change });
    }
    let g = integrand(&u)?;
    let stiff = 10.0 * c.mu_s.max(c.mu_u);
    let mut ode_residual = 0.0f64;
    for s in 1..u.len() - 1 {
        let (a, b) = (i0 + s - 1, i0 + s + 1);
        let du = (&u[s + 1] - &u[s - 1]) / (sys.times[b] - sys.times[a]);
        let lam = DVector::from_column_slice(&sys.lambda[i0 + s]);
        let mut defect = du - lam.component_mul(&u[s]) - &g[s];
        for j in 0..sys.k {
            // Skip the initial layer of stiff stable rows.
            let transient = (sys.phi(j)[i0 + s] - sys.phi(j)[i0]).exp();
            if lam[j].abs() > stiff && transient > 1e-10 {
                defect[j] = 0.0;
            }
        }
        ode_residual = ode_residual.max(defect.norm());
    }
    Ok(StableSolution {
        t0,
        a_s: a_s.to_vec(),
        times: sys.times[i0..=i1].to_vec(),
        iterations,
        contraction_ratio: ratio,
        final_change: change,
        ode_residual,
        forcing_sup: forcing.sup,
        tail_bound: tail(sys, i0, i1, &g[g.len() - 1]),
        u,
    })
}
