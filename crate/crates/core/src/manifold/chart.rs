use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::{solve_stable_solution, LinearizedSystem, ManifoldError, PicardOptions};
use crate::dynamics::penalized_field;
use crate::integrator::{integrate, IntegratorOptions};

/// One chart point: stable coordinates, the solved unstable coordinates,
/// and the point in original coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct ChartSample {
    pub a_s: Vec<f64>,
    pub psi: Vec<f64>,
    pub x0: Vec<f64>,
    pub iterations: usize,
    pub contraction_ratio: f64,
    pub ode_residual: f64,
}

/// Samples of the local stable manifold at `t₀`.
#[derive(Debug, Clone, Serialize)]
pub struct ManifoldChart {
    pub t0: f64,
    pub horizon: f64,
    pub k: usize,
    pub p: usize,
    pub samples: Vec<ChartSample>,
    #[serde(skip)]
    frame: DMatrix<f64>,
    #[serde(skip)]
    center: DVector<f64>,
}

impl ManifoldChart {
    /// `x = U(t₀)ᵀ z + g(β_{t₀})`.
    pub fn to_original(&self, z: &[f64]) -> Vec<f64> {
        (self.frame.transpose() * DVector::from_column_slice(z) + &self.center).as_slice().to_vec()
    }

    /// `z = U(t₀)(x − g(β_{t₀}))`.
    pub fn to_local(&self, x: &[f64]) -> Vec<f64> {
        (&self.frame * (DVector::from_column_slice(x) - &self.center)).as_slice().to_vec()
    }

    pub fn max_psi(&self) -> f64 {
        self.samples.iter().flat_map(|s| s.psi.iter().map(|v| v.abs())).fold(0.0, f64::max)
    }
}

/// Solves for `ψ(t₀, a_s)` at every sample in parallel.
pub fn build_chart(
    sys: &LinearizedSystem,
    t0: f64,
    horizon: f64,
    stable_coords: &[Vec<f64>],
    opts: &PicardOptions,
) -> Result<ManifoldChart, ManifoldError> {
    let i0 = sys.node_index(t0)?;
    let frame = sys.u[i0].clone();
    let center = sys.g[i0].clone();
    let samples = stable_coords
        .par_iter()
        .map(|a| {
            let sol = solve_stable_solution(sys, a, t0, horizon, opts)?;
            let z = DVector::from_column_slice(sol.z0());
            let x0 = frame.transpose() * z + &center;
            Ok(ChartSample {
                a_s: a.clone(),
                psi: sol.psi().to_vec(),
                x0: x0.as_slice().to_vec(),
                iterations: sol.iterations,
                contraction_ratio: sol.contraction_ratio,
                ode_residual: sol.ode_residual,
            })
        })
        .collect::<Result<Vec<_>, ManifoldError>>()?;
    Ok(ManifoldChart {
        t0,
        horizon,
        k: sys.k,
        p: sys.p(),
        samples,
        frame,
        center,
    })
}

/// Forward-integration check of one chart point.
#[derive(Debug, Clone, Serialize)]
pub struct ChartCheck {
    /// `max_t ‖x(t) − x*‖` starting on the chart.
    pub on_chart_max: f64,
    pub on_chart_final: f64,
    /// Final `‖x − x*‖` after adding `offset` to each unstable coordinate.
    pub perturbed_final: Vec<f64>,
    pub offset: f64,
}

impl ChartCheck {
    pub fn passes(&self, stay: f64, escape: f64) -> bool {
        self.on_chart_max < stay && self.perturbed_final.iter().all(|&d| d > escape)
    }
}

/// Integrates the penalized flow from a chart point and from copies pushed
/// off the chart along each unstable coordinate.
pub fn chart_consistency(
    sys: &LinearizedSystem,
    chart: &ManifoldChart,
    sample: usize,
    horizon: f64,
    offset: f64,
    integrator: &IntegratorOptions,
) -> Result<ChartCheck, ManifoldError> {
    let s = chart
        .samples
        .get(sample)
        .ok_or(ManifoldError::Domain("chart sample index out of range"))?;
    let prob = sys.problem();
    let field = penalized_field(prob.h.clone(), prob.q.clone(), prob.penalty.clone())?;
    let x_star = &prob.x_star;
    let distance = |x: &[f64]| (DVector::from_column_slice(x) - x_star).norm();
    let run = |x0: &[f64]| -> Result<(f64, f64), ManifoldError> {
        let traj = integrate(&field, x0, chart.t0, chart.t0 + horizon, integrator)?;
        let max = traj.states.iter().map(|x| distance(x)).fold(0.0, f64::max);
        Ok((max, distance(traj.final_state())))
    };
    let (on_chart_max, on_chart_final) = run(&s.x0)?;
    let mut z: Vec<f64> = s.a_s.iter().chain(&s.psi).copied().collect();
    let mut perturbed_final = Vec::with_capacity(chart.p);
    for j in chart.k..chart.k + chart.p {
        z[j] += offset;
        perturbed_final.push(run(&chart.to_original(&z))?.1);
        z[j] -= offset;
    }
    Ok(ChartCheck {
        on_chart_max,
        on_chart_final,
        perturbed_final,
        offset,
    })
}
