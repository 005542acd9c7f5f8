use std::sync::Arc;

use nalgebra::DVector;

use super::{ManifoldError, ManifoldProblem};

/// Residual bound `‖∇h(g) + βQg‖` accepted at every path point.
pub const TOL_NEWTON: f64 = 1e-10;

/// The penalized critical path `g(β)` on a grid of penalty values.
#[derive(Debug, Clone)]
pub struct PenalizedPath {
    problem: Arc<ManifoldProblem>,
    pub beta_grid: Vec<f64>,
    pub g_values: Vec<DVector<f64>>,
    pub g_prime: Vec<DVector<f64>>,
    pub residuals: Vec<f64>,
}

/// Newton's method on `∇h(x) + βQx = 0` from `start`.
fn newton(problem: &ManifoldProblem, beta: f64, start: &DVector<f64>) -> Result<(DVector<f64>, f64), ManifoldError> {
    let mut x = start.clone();
    let mut res = problem.penalized_gradient(&x, beta);
    for _ in 0..100 {
        let scale = TOL_NEWTON * 1e-3 * (1.0 + beta);
        if res.norm() <= scale {
            break;
        }
        let jac = -problem.flow_jacobian(x.as_slice(), beta);
        let step = jac.lu().solve(&res).ok_or(ManifoldError::SingularJacobian(beta))?;
        let mut t = 1.0;
        let mut next = &x - &step;
        let mut next_res = problem.penalized_gradient(&next, beta);
        for _ in 0..20 {
            if next_res.norm() < res.norm() {
                break;
            }
            t *= 0.5;
            next = &x - &step * t;
            next_res = problem.penalized_gradient(&next, beta);
        }
        if next_res.norm() >= res.norm() {
            break;
        }
        x = next;
        res = next_res;
    }
    let r = res.norm();
    if !(r < TOL_NEWTON) {
        return Err(ManifoldError::NewtonFailed { beta, residual: r });
    }
    Ok((x, r))
}

/// `g'(β)` from `(∇²h(g) + βQ) g' = −Qg`.
fn implicit_derivative(problem: &ManifoldProblem, beta: f64, g: &DVector<f64>) -> Result<DVector<f64>, ManifoldError> {
    let jac = -problem.flow_jacobian(g.as_slice(), beta);
    let rhs = -(&problem.q * g);
    jac.lu().solve(&rhs).ok_or(ManifoldError::SingularJacobian(beta))
}

/// Newton continuation of the penalized critical path, from `x*` at the
/// largest `β` downward, warm-starting each grid point from its neighbor.
pub fn critical_path(problem: Arc<ManifoldProblem>, beta_grid: &[f64]) -> Result<PenalizedPath, ManifoldError> {
    if beta_grid.is_empty() || beta_grid[0] <= 0.0 || beta_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ManifoldError::BadBetaGrid);
    }
    let n = beta_grid.len();
    let mut g_values = vec![DVector::zeros(0); n];
    let mut g_prime = vec![DVector::zeros(0); n];
    let mut residuals = vec![0.0; n];
    let mut guess = problem.x_star.clone();
    for i in (0..n).rev() {
        let beta = beta_grid[i];
        let (g, r) = newton(&problem, beta, &guess)?;
        g_prime[i] = implicit_derivative(&problem, beta, &g)?;
        // First-order predictor for the next (smaller) β.
        guess = if i > 0 { &g + &g_prime[i] * (beta_grid[i - 1] - beta) } else { g.clone() };
        g_values[i] = g;
        residuals[i] = r;
    }
    Ok(PenalizedPath {
        problem,
        beta_grid: beta_grid.to_vec(),
        g_values,
        g_prime,
        residuals,
    })
}

impl PenalizedPath {
    pub fn problem(&self) -> &ManifoldProblem {
        &self.problem
    }

    pub(crate) fn problem_arc(&self) -> Arc<ManifoldProblem> {
        self.problem.clone()
    }

    /// `(g(β), g'(β))` at an arbitrary `β` in the grid range, by Newton from
    /// the predictor at the nearest grid point.
    pub fn solve_at(&self, beta: f64) -> Result<(DVector<f64>, DVector<f64>), ManifoldError> {
        let (lo, hi) = (self.beta_grid[0], *self.beta_grid.last().unwrap());
        let slack = 1e-9 * hi;
        if !(beta >= lo - slack && beta <= hi + slack) {
            return Err(ManifoldError::BetaOutOfRange { beta, lo, hi });
        }
        let i = self.beta_grid.partition_point(|&b| b < beta);
        let j = match i {
            0 => 0,
            i if i == self.beta_grid.len() => i - 1,
            i if (self.beta_grid[i] - beta) < (beta - self.beta_grid[i - 1]) => i,
            i => i - 1,
        };
        let guess = &self.g_values[j] + &self.g_prime[j] * (beta - self.beta_grid[j]);
        let (g, _) = newton(&self.problem, beta, &guess)?;
        let gp = implicit_derivative(&self.problem, beta, &g)?;
        Ok((g, gp))
    }

    /// `‖g(β) − x*‖` along the grid.
    pub fn distances(&self) -> Vec<f64> {
        self.g_values.iter().map(|g| (g - &self.problem.x_star).norm()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Schedule;
    use crate::graph::Graph;
    use crate::integrator::fit_slope;
    use crate::objective::{make_preset, Preset, PresetSpec};

    fn problem(seed: Option<u64>) -> Arc<ManifoldProblem> {
        let mut spec = PresetSpec::new(Preset::QuarticSaddle, 3, 2);
        spec.seed = seed;
        let obj = Arc::new(make_preset(&spec).unwrap());
        Arc::new(ManifoldProblem::dgd(&Graph::path(3).unwrap(), obj, Schedule::new(0.8, 0.3).unwrap(), &[0.0, 0.0]).unwrap())
    }

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
    }

    #[test]
    fn homogeneous_path_is_constant() {
        let path = critical_path(problem(None), &log_grid(5.0, 500.0, 20)).unwrap();
        assert!(path.distances().iter().all(|&d| d < 1e-14));
        assert!(path.g_prime.iter().all(|g| g.norm() < 1e-14));
    }

    #[test]
    fn heterogeneous_path_decays_like_inverse_beta() {
        let grid = log_grid(10.0, 1e4, 30);
        let path = critical_path(problem(Some(5)), &grid).unwrap();
        assert!(path.residuals.iter().all(|&r| r < TOL_NEWTON));
        let dist = path.distances();
        assert!(dist.windows(2).all(|w| w[1] < w[0]));
        let lx: Vec<f64> = grid.iter().map(|b| b.ln()).collect();
        let ly: Vec<f64> = dist.iter().map(|d| d.ln()).collect();
        let slope = fit_slope(&lx[10..], &ly[10..]);
        assert!((slope + 1.0).abs() < 0.02, "slope {slope}");
    }

    #[test]
    fn implicit_derivative_matches_differences() {
        let path = critical_path(problem(Some(2)), &log_grid(10.0, 100.0, 5)).unwrap();
        let b = 30.0;
        let h = 1e-4;
        let (_, gp) = path.solve_at(b).unwrap();
        let (gm, _) = path.solve_at(b - h).unwrap();
        let (gq, _) = path.solve_at(b + h).unwrap();
        let fd = (gq - gm) / (2.0 * h);
        assert!((fd - &gp).norm() < 1e-8 * (1.0 + gp.norm()));
        assert!(matches!(path.solve_at(1e3), Err(ManifoldError::BetaOutOfRange { .. })));
    }

    #[test]
    fn rejects_bad_grid() {
        assert!(matches!(critical_path(problem(None), &[3.0, 2.0]), Err(ManifoldError::BadBetaGrid)));
        assert!(matches!(critical_path(problem(None), &[]), Err(ManifoldError::BadBetaGrid)));
    }
}
