use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{ManifoldError, ManifoldProblem, PenalizedPath};
use crate::graph::sorted_symmetric_eigen;
use crate::quadrature::cumulative_trapezoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Stable,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizeOptions {
    /// Ball radius `r` for the Lipschitz estimate of `F̃`.
    pub radius: f64,
    /// Grid nodes at which `ε` is sampled.
    pub epsilon_nodes: usize,
    /// Ball samples per node.
    pub epsilon_samples: usize,
    pub seed: u64,
}

impl Default for LinearizeOptions {
    fn default() -> Self {
        Self {
            radius: 0.1,
            epsilon_nodes: 64,
            epsilon_samples: 48,
            seed: 0,
        }
    }
}

/// Constants of the exponential estimates and the Lipschitz bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Constants {
    pub alpha: f64,
    pub sigma: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub epsilon: f64,
    pub radius: f64,
    /// First time at which the estimates are enforced.
    pub t_start: f64,
    /// `inf_t min_j |λ_j(t)|` over stable branches.
    pub mu_s: f64,
    /// `inf_t min_j λ_j(t)` over unstable branches.
    pub mu_u: f64,
}

impl Constants {
    /// `σ / (6K)`, the admissible Lipschitz level.
    pub fn epsilon_limit(&self) -> f64 {
        self.sigma / (6.0 * self.k)
    }

    /// `2εK/σ`, the contraction bound.
    pub fn contraction_bound(&self) -> f64 {
        2.0 * self.epsilon * self.k / self.sigma
    }

    pub fn admissible(&self) -> bool {
        self.epsilon < self.epsilon_limit()
    }
}

/// The linearization along the penalized critical path on a time grid.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    problem: Arc<ManifoldProblem>,
    pub times: Vec<f64>,
    pub beta: Vec<f64>,
    pub beta_dot: Vec<f64>,
    pub g: Vec<DVector<f64>>,
    pub g_prime: Vec<DVector<f64>>,
    /// `A(t)` per node.
    pub a: Vec<DMatrix<f64>>,
    /// `U(t)` per node; rows are eigenvectors, so `U A Uᵀ = Λ`.
    pub u: Vec<DMatrix<f64>>,
    /// `λ_j(t)` per node, branch-ordered; the first `k` are stable.
    pub lambda: Vec<Vec<f64>>,
    /// Number of stable (negative) branches.
    pub k: usize,
    pub constants: Constants,
    /// `max_t ‖U A Uᵀ − Λ‖_max`.
    pub decomposition_residual: f64,
    /// `max_i ‖U(t_{i+1}) − U(t_i)‖_F`.
    pub max_alignment_jump: f64,
    u_dot_ut: Vec<DMatrix<f64>>,
    grad_g: Vec<DVector<f64>>,
    hess_g: Vec<DMatrix<f64>>,
    phi: Vec<Vec<f64>>,
}

/// Eigendecomposition of a symmetric matrix with rows aligned to `prev`.
///
/// Columns are matched greedily by `|⟨u_i, v_j⟩|`, signs fixed to positive
/// overlap, and near-degenerate clusters rotated onto the previous frame by
/// orthogonal Procrustes.
pub(crate) fn aligned_eigen(a: &DMatrix<f64>, prev: Option<&DMatrix<f64>>) -> Result<(DMatrix<f64>, Vec<f64>), ManifoldError> {
    let (vals, vecs) = sorted_symmetric_eigen(a).map_err(|_| ManifoldError::EigenSolver)?;
    let m = vals.len();
    let Some(prev) = prev else {
        let mut u = vecs.transpose();
        for i in 0..m {
            let pivot = (0..m).max_by(|&p, &q| u[(i, p)].abs().total_cmp(&u[(i, q)].abs())).unwrap();
            if u[(i, pivot)] < 0.0 {
                u.row_mut(i).neg_mut();
            }
        }
        return Ok((u, vals));
    };
    let overlap = prev * &vecs;
    let mut row_of_col = vec![usize::MAX; m];
    let mut used_row = vec![false; m];
    for _ in 0..m {
        let mut best = (usize::MAX, usize::MAX, -1.0);
        for i in (0..m).filter(|&i| !used_row[i]) {
            for j in (0..m).filter(|&j| row_of_col[j] == usize::MAX) {
                let o = overlap[(i, j)].abs();
                if o > best.2 {
                    best = (i, j, o);
                }
            }
        }
        used_row[best.0] = true;
        row_of_col[best.1] = best.0;
    }
    let scale = 1.0 + vals.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let mut clusters: Vec<Vec<usize>> = vec![vec![0]];
    for j in 1..m {
        if vals[j] - vals[j - 1] <= 1e-8 * scale {
            clusters.last_mut().unwrap().push(j);
        } else {
            clusters.push(vec![j]);
        }
    }
    let mut u = DMatrix::zeros(m, m);
    let mut lam = vec![0.0; m];
    for cl in clusters {
        let rows: Vec<usize> = cl.iter().map(|&j| row_of_col[j]).collect();
        if cl.len() == 1 {
            let (j, i) = (cl[0], rows[0]);
            let o = overlap[(i, j)];
            if o.abs() < 0.5 {
                return Err(ManifoldError::AmbiguousAlignment(f64::NAN));
            }
            let v = vecs.column(j) * o.signum();
            u.row_mut(i).copy_from(&v.transpose());
            lam[i] = vals[j];
        } else {
            let w = DMatrix::from_fn(m, cl.len(), |r, c| vecs[(r, cl[c])]);
            let p = DMatrix::from_fn(m, rows.len(), |r, c| prev[(rows[c], r)]);
            let svd = (w.transpose() * &p).svd(true, true);
            let rot = svd.u.ok_or(ManifoldError::EigenSolver)? * svd.v_t.ok_or(ManifoldError::EigenSolver)?;
            let aligned = w * rot;
            for (c, &i) in rows.iter().enumerate() {
                let col = aligned.column(c);
                if col.dot(&p.column(c)).abs() < 0.5 {
                    return Err(ManifoldError::AmbiguousAlignment(f64::NAN));
                }
                u.row_mut(i).copy_from(&col.transpose());
                lam[i] = (col.transpose() * a * col)[(0, 0)];
            }
        }
    }
    Ok((u, lam))
}

fn spectral_norm(j: &DMatrix<f64>) -> f64 {
    let jtj = j.transpose() * j;
    sorted_symmetric_eigen(&jtj)
        .map(|(v, _)| v.last().copied().unwrap_or(0.0).max(0.0).sqrt())
        .unwrap_or(f64::INFINITY)
}

/// Builds `A(t)`, the aligned eigensystem, `Φ_j(t) = ∫ λ_j`, and the constants.
pub fn linearize(path: &PenalizedPath, t_grid: &[f64], opts: &LinearizeOptions) -> Result<LinearizedSystem, ManifoldError> {
    if t_grid.len() < 3 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ManifoldError::BadTimeGrid);
    }
    let problem = path.problem_arc();
    let n = t_grid.len();
    let penalty = &problem.penalty;
    let mut beta = Vec::with_capacity(n);
    let mut beta_dot = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut g_prime = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut u: Vec<DMatrix<f64>> = Vec::with_capacity(n);
    let mut lambda = Vec::with_capacity(n);
    let mut grad_g = Vec::with_capacity(n);
    let mut hess_g = Vec::with_capacity(n);
    let mut decomposition_residual = 0.0f64;
    let mut max_jump = 0.0f64;
    for (i, &t) in t_grid.iter().enumerate() {
        let b = penalty.value(t);
        let (gi, gpi) = path.solve_at(b)?;
        let ai = problem.flow_jacobian(gi.as_slice(), b);
        let (ui, li) = aligned_eigen(&ai, u.last()).map_err(|e| match e {
            ManifoldError::AmbiguousAlignment(_) => ManifoldError::AmbiguousAlignment(t),
            e => e,
        })?;
        let diag = &ui * &ai * ui.transpose();
        for r in 0..diag.nrows() {
            for c in 0..diag.ncols() {
                let target = if r == c { li[r] } else { 0.0 };
                decomposition_residual = decomposition_residual.max((diag[(r, c)] - target).abs());
            }
        }
        if let Some(prev) = u.last() {
            max_jump = max_jump.max((&ui - prev).norm());
        }
        if i > 0 {
            let prev: &Vec<f64> = &lambda[i - 1];
            if let Some(j) = (0..li.len()).find(|&j| li[j].signum() != prev[j].signum()) {
                return Err(ManifoldError::EigenSignChange { t, component: j });
            }
        }
        grad_g.push(problem.h.gradient(gi.as_slice()));
        hess_g.push(problem.h.hessian(gi.as_slice()));
        beta.push(b);
        beta_dot.push(penalty.derivative(t));
        g.push(gi);
        g_prime.push(gpi);
        a.push(ai);
        u.push(ui);
        lambda.push(li);
    }
    let m = problem.dim();
    let k = lambda[0].iter().filter(|&&l| l < 0.0).count();
    if lambda[0][..k].iter().any(|&l| l >= 0.0) {
        // Branches are ascending at the first node, so the stable ones lead.
        return Err(ManifoldError::EigenSignChange { t: t_grid[0], component: k });
    }
    let u_dot_ut = (0..n)
        .map(|i| {
            let (lo, hi) = (i.saturating_sub(1), (i + 1).min(n - 1));
            let ud = (&u[hi] - &u[lo]) / (t_grid[hi] - t_grid[lo]);
            ud * u[i].transpose()
        })
        .collect();
    let phi: Vec<Vec<f64>> = (0..m)
        .map(|j| {
            let lj: Vec<f64> = lambda.iter().map(|l| l[j]).collect();
            cumulative_trapezoid(t_grid, &lj)
        })
        .collect();
    let mu_s = lambda.iter().flat_map(|l| l[..k].iter().map(|v| v.abs())).fold(f64::INFINITY, f64::min);
    let mu_u = lambda.iter().flat_map(|l| l[k..].iter().copied()).fold(f64::INFINITY, f64::min);
    let sigma = 0.5 * mu_u.min(mu_s);
    let alpha = 0.9 * mu_s - sigma;
    let mut sys = LinearizedSystem {
        problem,
        times: t_grid.to_vec(),
        beta,
        beta_dot,
        g,
        g_prime,
        a,
        u,
        lambda,
        k,
        constants: Constants {
            alpha,
            sigma,
            k: 1.0,
            epsilon: 0.0,
            radius: opts.radius,
            t_start: t_grid[0],
            mu_s,
            mu_u,
        },
        decomposition_residual,
        max_alignment_jump: max_jump,
        u_dot_ut,
        grad_g,
        hess_g,
        phi,
    };
    sys.constants.k = sys.fit_k();
    sys.constants.epsilon = sys.sample_epsilon(opts);
    Ok(sys)
}

impl LinearizedSystem {
    pub fn problem(&self) -> &ManifoldProblem {
        &self.problem
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    /// Number of unstable branches `p = M − k`.
    pub fn p(&self) -> usize {
        self.dim() - self.k
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `Φ_j` at the grid nodes.
    pub fn phi(&self, j: usize) -> &[f64] {
        &self.phi[j]
    }

    fn range_err(&self, t: f64) -> ManifoldError {
        ManifoldError::OutsideGrid {
            t,
            lo: self.times[0],
            hi: *self.times.last().unwrap(),
        }
    }

    /// Index of the grid node at `t`.
    pub fn node_index(&self, t: f64) -> Result<usize, ManifoldError> {
        let i = self.nearest_node(t)?;
        let tol = 1e-9 * (1.0 + t.abs());
        if (self.times[i] - t).abs() > tol {
            return Err(ManifoldError::NotGridNode(t));
        }
        Ok(i)
    }

    pub fn nearest_node(&self, t: f64) -> Result<usize, ManifoldError> {
        let (lo, hi) = (self.times[0], *self.times.last().unwrap());
        let tol = 1e-9 * (1.0 + t.abs());
        if t < lo - tol || t > hi + tol {
            return Err(self.range_err(t));
        }
        let i = self.times.partition_point(|&s| s < t);
        Ok(match i {
            0 => 0,
            i if i == self.times.len() => i - 1,
            i if self.times[i] - t < t - self.times[i - 1] => i,
            i => i - 1,
        })
    }

    /// `∫_{t_0}^t λ_j` with `λ_j` linear between nodes.
    pub fn phi_at(&self, j: usize, t: f64) -> Result<f64, ManifoldError> {
        let (lo, hi) = (self.times[0], *self.times.last().unwrap());
        if t < lo - 1e-12 || t > hi + 1e-12 {
            return Err(self.range_err(t));
        }
        let t = t.clamp(lo, hi);
        let m = self.times.partition_point(|&s| s <= t).saturating_sub(1).min(self.times.len() - 2);
        let dt = t - self.times[m];
        let h = self.times[m + 1] - self.times[m];
        let (l0, l1) = (self.lambda[m][j], self.lambda[m + 1][j]);
        Ok(self.phi[j][m] + dt * l0 + 0.5 * dt * dt * (l1 - l0) / h)
    }

    fn components(&self, which: Which) -> std::ops::Range<usize> {
        match which {
            Which::Stable => 0..self.k,
            Which::Unstable => self.k..self.dim(),
        }
    }

    /// `V^s(t₂,t₁)` (needs `t₂ ≥ t₁`) or `V^u(t₂,t₁)` (needs `t₂ ≤ t₁`).
    pub fn transition_factor(&self, t2: f64, t1: f64, which: Which) -> Result<DMatrix<f64>, ManifoldError> {
        match which {
            Which::Stable if t2 < t1 => return Err(ManifoldError::Domain("stable factor needs t2 >= t1")),
            Which::Unstable if t2 > t1 => return Err(ManifoldError::Domain("unstable factor needs t2 <= t1")),
            _ => {}
        }
        let mut v = DMatrix::zeros(self.dim(), self.dim());
        for j in self.components(which) {
            v[(j, j)] = (self.phi_at(j, t2)? - self.phi_at(j, t1)?).exp();
        }
        Ok(v)
    }

    /// Largest ratio of `‖V‖` to its exponential estimate over node pairs
    /// `(m₁ ≤ m₂)`; the estimates hold iff this is at most 1.
    pub fn estimate_ratio(&self, which: Which, m1: usize, m2: usize) -> f64 {
        let c = self.constants;
        let (lo, hi) = (m1.min(m2), m1.max(m2));
        let dt = self.times[hi] - self.times[lo];
        self.components(which)
            .map(|j| {
                let dphi = self.phi[j][hi] - self.phi[j][lo];
                match which {
                    Which::Stable => (dphi + (c.alpha + c.sigma) * dt).exp() / c.k,
                    Which::Unstable => (-dphi + c.sigma * dt).exp() / c.k,
                }
            })
            .fold(0.0, f64::max)
    }

    fn fit_k(&self) -> f64 {
        let c = self.constants;
        let mut k = 1.0f64;
        for j in 0..self.k {
            let mut run_min = f64::INFINITY;
            for (m, &t) in self.times.iter().enumerate() {
                let psi = self.phi[j][m] + (c.alpha + c.sigma) * t;
                run_min = run_min.min(psi);
                k = k.max((psi - run_min).exp());
            }
        }
        for j in self.k..self.dim() {
            let mut run_max = f64::NEG_INFINITY;
            for (m, &t) in self.times.iter().enumerate() {
                let chi = self.phi[j][m] - c.sigma * t;
                run_max = run_max.max(chi);
                k = k.max((run_max - chi).exp());
            }
        }
        k
    }

    /// `Φ_j(t_m) − Φ_j(t_0)` through exp: the linear flow `z(t_m)` from `z(t_0) = z0`.
    pub fn linear_flow(&self, z0: &[f64], m: usize) -> DVector<f64> {
        DVector::from_fn(self.dim(), |j, _| z0[j] * (self.phi[j][m] - self.phi[j][0]).exp())
    }

    /// `w(t_m) = U(t_m) g'(β_m) β̇_m`.
    pub fn forcing_integrand(&self, m: usize) -> DVector<f64> {
        &self.u[m] * &self.g_prime[m] * self.beta_dot[m]
    }

    /// `F̃(z, t_m)` without the ball check.
    pub(crate) fn f_tilde(&self, m: usize, z: &DVector<f64>) -> DVector<f64> {
        let y = self.u[m].transpose() * z;
        let x = &self.g[m] + &y;
        let grad = self.problem.h.gradient(x.as_slice());
        let f = -(grad - &self.grad_g[m] - &self.hess_g[m] * &y);
        &self.u[m] * f + &self.u_dot_ut[m] * z
    }

    /// `F̃(z, t) = U F(Uᵀz, t) + U̇Uᵀ z` at a grid node `t`, for `‖z‖ ≤ r`.
    pub fn nonlinear_residual(&self, z: &[f64], t: f64) -> Result<DVector<f64>, ManifoldError> {
        let m = self.node_index(t)?;
        let zv = DVector::from_column_slice(z);
        let r = self.constants.radius;
        if zv.norm() > r * (1.0 + 1e-12) {
            return Err(ManifoldError::OutsideBall { norm: zv.norm(), radius: r });
        }
        Ok(self.f_tilde(m, &zv))
    }

    /// Jacobian of `F̃(·, t_m)` at `z`.
    fn f_tilde_jacobian(&self, m: usize, z: &DVector<f64>) -> DMatrix<f64> {
        let y = self.u[m].transpose() * z;
        let x = &self.g[m] + &y;
        let dh = self.problem.h.hessian(x.as_slice()) - &self.hess_g[m];
        -(&self.u[m] * dh * self.u[m].transpose()) + &self.u_dot_ut[m]
    }

    /// Sampled Lipschitz constant of `F̃` on the ball: spectral norms of the
    /// Jacobian on the sphere, in the interior, and along the axes, plus
    /// secant quotients of random pairs.
    fn sample_epsilon(&self, opts: &LinearizeOptions) -> f64 {
        let r = opts.radius;
        let mdim = self.dim();
        let n = self.times.len();
        let nodes = opts.epsilon_nodes.clamp(1, n);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut eps = 0.0f64;
        let random_in_ball = |rng: &mut ChaCha8Rng, on_sphere: bool| {
            let mut v = DVector::from_fn(mdim, |_, _| rng.random_range(-1.0..=1.0));
            while v.norm() == 0.0 {
                v = DVector::from_fn(mdim, |_, _| rng.random_range(-1.0..=1.0));
            }
            let len = if on_sphere { r } else { r * rng.random_range(0.0..=1.0f64) };
            v.normalize() * len
        };
        for q in 0..nodes {
            let m = if nodes == 1 { 0 } else { q * (n - 1) / (nodes - 1) };
            let mut points: Vec<DVector<f64>> = Vec::new();
            for i in 0..mdim {
                let mut e = DVector::zeros(mdim);
                e[i] = r;
                points.push(e.clone());
                points.push(-e);
            }
            for s in 0..opts.epsilon_samples {
                points.push(random_in_ball(&mut rng, s % 2 == 0));
            }
            for z in &points {
                eps = eps.max(spectral_norm(&self.f_tilde_jacobian(m, z)));
            }
            for _ in 0..opts.epsilon_samples / 2 {
                let (z1, z2) = (random_in_ball(&mut rng, false), random_in_ball(&mut rng, false));
                let dz = (&z1 - &z2).norm();
                if dz > 0.0 {
                    eps = eps.max((self.f_tilde(m, &z1) - self.f_tilde(m, &z2)).norm() / dz);
                }
            }
        }
        eps
    }

    /// `U(t)`, `λ(t)` and `g(β_t)`, `g'(β_t)` at an arbitrary grid time,
    /// aligned to the nearest node.
    pub(crate) fn frame_at(&self, path: &PenalizedPath, t: f64) -> Result<(DMatrix<f64>, Vec<f64>, DVector<f64>), ManifoldError> {
        let m = self.nearest_node(t)?;
        let b = self.problem.penalty.value(t);
        let (g, gp) = path.solve_at(b)?;
        let a = self.problem.flow_jacobian(g.as_slice(), b);
        let (u, lam) = aligned_eigen(&a, Some(&self.u[m]))?;
        let w = &u * gp * self.problem.penalty.derivative(t);
        Ok((u, lam, w))
    }
}
