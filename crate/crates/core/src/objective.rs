//! Local objectives `f_n`, the sum objective `f = Σ f_n`, and the stacked
//! separable function `h(x) = Σ f_n(x_n)` on `R^{Nd}`.
//!
//! All derivatives are analytic. The built-in presets are smooth and coercive;
//! their gradients are Lipschitz on any compact box, which is all the
//! experiments need since trajectories never leave the working box.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::sorted_symmetric_eigen;

/// Gradient norm below which a point counts as critical.
pub const TOL_CRIT: f64 = 1e-6;
/// Smallest |eigenvalue|, relative to `max(‖H‖, 1)`, for a nondegenerate point.
pub const TOL_DEGENERATE: f64 = 1e-8;
/// Half-width of the box on which gradient Lipschitz bounds are stated.
pub const WORKING_BOX: f64 = 10.0;
/// Default magnitude of the zero-sum heterogeneity tilts.
pub const DEFAULT_HETEROGENEITY: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("unknown objective preset `{0}`")]
    UnknownPreset(String),
    #[error("preset `{preset}` requires dimension {required}, got {got}")]
    Dimension {
        preset: &'static str,
        required: usize,
        got: usize,
    },
    #[error("need at least one agent and a positive dimension")]
    EmptyProblem,
    #[error("not a critical point: gradient norm {0:e} exceeds {TOL_CRIT:e}")]
    NotCritical(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Mismatch { expected: usize, got: usize },
    #[error("symmetric eigensolver did not converge")]
    EigenSolver,
}

/// One agent's smooth objective `f_n: R^d → R` with analytic derivatives.
pub trait LocalObjective: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, a: &[f64]) -> f64;
    /// Writes `∇f_n(a)` into `out`.
    fn gradient(&self, a: &[f64], out: &mut [f64]);
    fn hessian(&self, a: &[f64]) -> DMatrix<f64>;
    fn is_coercive(&self) -> bool {
        true
    }
}

/// `w·(a₁² − a₂² + a₂⁴/4) + b·a`. With `w = 1` and `b = 0` this has a
/// nondegenerate saddle at the origin and minima at `(0, ±√2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarticSaddle {
    pub weight: f64,
    pub tilt: [f64; 2],
}

impl LocalObjective for QuarticSaddle {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, a: &[f64]) -> f64 {
        let (x, y) = (a[0], a[1]);
        self.weight * (x * x - y * y + 0.25 * y.powi(4)) + self.tilt[0] * x + self.tilt[1] * y
    }

    fn gradient(&self, a: &[f64], out: &mut [f64]) {
        let (x, y) = (a[0], a[1]);
        out[0] = self.weight * 2.0 * x + self.tilt[0];
        out[1] = self.weight * (y.powi(3) - 2.0 * y) + self.tilt[1];
    }

    fn hessian(&self, a: &[f64]) -> DMatrix<f64> {
        let y = a[1];
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            2.0 * self.weight,
            self.weight * (3.0 * y * y - 2.0),
        ]))
    }
}

/// `(w/2)‖a − c‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadratic {
    pub weight: f64,
    pub center: Vec<f64>,
}

impl LocalObjective for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn value(&self, a: &[f64]) -> f64 {
        0.5 * self.weight * a.iter().zip(&self.center).map(|(x, c)| (x - c).powi(2)).sum::<f64>()
    }

    fn gradient(&self, a: &[f64], out: &mut [f64]) {
        for ((o, x), c) in out.iter_mut().zip(a).zip(&self.center) {
            *o = self.weight * (x - c);
        }
    }

    fn hessian(&self, _a: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) * self.weight
    }
}

/// `Σ_i q_i a_i⁴/4 + ½ aᵀSa + l·a` with `q_i > 0`, which makes it coercive for
/// any symmetric `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableQuartic {
    pub quartic: Vec<f64>,
    pub quadratic: DMatrix<f64>,
    pub linear: Vec<f64>,
}

impl LocalObjective for SeparableQuartic {
    fn dim(&self) -> usize {
        self.quartic.len()
    }

    fn value(&self, a: &[f64]) -> f64 {
        let v = DVector::from_column_slice(a);
        let quartic: f64 = self.quartic.iter().zip(a).map(|(q, x)| 0.25 * q * x.powi(4)).sum();
        let linear: f64 = self.linear.iter().zip(a).map(|(l, x)| l * x).sum();
        quartic + 0.5 * v.dot(&(&self.quadratic * &v)) + linear
    }

    fn gradient(&self, a: &[f64], out: &mut [f64]) {
        let v = DVector::from_column_slice(a);
        let sv = &self.quadratic * &v;
        for i in 0..a.len() {
            out[i] = self.quartic[i] * a[i].powi(3) + sv[i] + self.linear[i];
        }
    }

    fn hessian(&self, a: &[f64]) -> DMatrix<f64> {
        let mut h = self.quadratic.clone();
        for i in 0..a.len() {
            h[(i, i)] += 3.0 * self.quartic[i] * a[i] * a[i];
        }
        h
    }
}

/// Built-in test problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    QuarticSaddle,
    RandomQuartic,
    QuadraticConvex,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::QuarticSaddle, Preset::RandomQuartic, Preset::QuadraticConvex];

    pub fn name(self) -> &'static str {
        match self {
            Preset::QuarticSaddle => "quartic_saddle",
            Preset::RandomQuartic => "random_quartic",
            Preset::QuadraticConvex => "quadratic_convex",
        }
    }
}

impl FromStr for Preset {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ObjectiveError::UnknownPreset(s.to_string()))
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parameters for [`make_preset`].
#[derive(Debug, Clone, PartialEq)]
pub struct PresetSpec {
    pub preset: Preset,
    pub agents: usize,
    pub dim: usize,
    /// Seed for the heterogeneity draw; `None` means a homogeneous split where
    /// that makes sense (`quartic_saddle`), seed 0 otherwise.
    pub seed: Option<u64>,
    pub heterogeneity: f64,
}

impl PresetSpec {
    pub fn new(preset: Preset, agents: usize, dim: usize) -> Self {
        Self {
            preset,
            agents,
            dim,
            seed: None,
            heterogeneity: DEFAULT_HETEROGENEITY,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_heterogeneity(mut self, scale: f64) -> Self {
        self.heterogeneity = scale;
        self
    }
}

/// Draws `N` vectors uniformly from `[−scale, scale]^d` and replaces the last
/// one so the left-to-right sum is exactly zero in floating point.
fn zero_sum_tilts(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> Vec<Vec<f64>> {
    let mut tilts: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| scale * rng.random_range(-1.0..=1.0)).collect())
        .collect();
    if n == 1 {
        tilts[0].iter_mut().for_each(|v| *v = 0.0);
        return tilts;
    }
    let mut partial = vec![0.0; d];
    for t in &tilts[..n - 1] {
        for (p, v) in partial.iter_mut().zip(t) {
            *p += v;
        }
    }
    tilts[n - 1] = partial.iter().map(|p| -p).collect();
    tilts
}

/// Builds one of the preset problems.
pub fn make_preset(spec: &PresetSpec) -> Result<ObjectiveSet, ObjectiveError> {
    let (n, d) = (spec.agents, spec.dim);
    if n == 0 || d == 0 {
        return Err(ObjectiveError::EmptyProblem);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(0));
    let weight = 1.0 / n as f64;
    let locals: Vec<Arc<dyn LocalObjective>> = match spec.preset {
        Preset::QuarticSaddle => {
            if d != 2 {
                return Err(ObjectiveError::Dimension {
                    preset: "quartic_saddle",
                    required: 2,
                    got: d,
                });
            }
            let tilts = match spec.seed {
                Some(_) => zero_sum_tilts(&mut rng, n, 2, spec.heterogeneity),
                None => vec![vec![0.0, 0.0]; n],
            };
            tilts
                .into_iter()
                .map(|b| Arc::new(QuarticSaddle { weight, tilt: [b[0], b[1]] }) as Arc<dyn LocalObjective>)
                .collect()
        }
        Preset::RandomQuartic => (0..n)
            .map(|_| {
                let quartic = (0..d).map(|_| rng.random_range(0.5..=1.5)).collect();
                let mut s = DMatrix::zeros(d, d);
                for i in 0..d {
                    for j in i..d {
                        let v = rng.random_range(-1.0..=1.0);
                        s[(i, j)] = v;
                        s[(j, i)] = v;
                    }
                }
                let linear = (0..d).map(|_| spec.heterogeneity * rng.random_range(-1.0..=1.0)).collect();
                Arc::new(SeparableQuartic { quartic, quadratic: s, linear }) as Arc<dyn LocalObjective>
            })
            .collect(),
        Preset::QuadraticConvex => (0..n)
            .map(|_| {
                let center = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
                Arc::new(Quadratic { weight: 1.0, center }) as Arc<dyn LocalObjective>
            })
            .collect(),
    };
    let lipschitz_bound = match spec.preset {
        Preset::QuarticSaddle => Some(weight * (3.0 * WORKING_BOX * WORKING_BOX - 2.0)),
        Preset::QuadraticConvex => Some(1.0),
        Preset::RandomQuartic => None,
    };
    let mut set = ObjectiveSet::new(locals)?;
    set.lipschitz_bound = lipschitz_bound;
    Ok(set)
}

/// Classification of a critical point by the signature of its Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CriticalKind {
    Minimum,
    Maximum,
    /// Saddle with `negative ≥ 1` negative Hessian eigenvalues.
    Saddle { negative: usize },
    Degenerate,
}

impl fmt::Display for CriticalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CriticalKind::Minimum => f.write_str("minimum"),
            CriticalKind::Maximum => f.write_str("maximum"),
            CriticalKind::Saddle { negative } => write!(f, "saddle({negative})"),
            CriticalKind::Degenerate => f.write_str("degenerate"),
        }
    }
}

/// Classifies a symmetric matrix by eigenvalue signs.
pub fn classify_symmetric(h: &DMatrix<f64>) -> Result<CriticalKind, ObjectiveError> {
    let (eigs, _) = sorted_symmetric_eigen(h).map_err(|_| ObjectiveError::EigenSolver)?;
    let scale = eigs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let smallest = eigs.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if smallest <= TOL_DEGENERATE * scale.max(1.0) {
        return Ok(CriticalKind::Degenerate);
    }
    let negative = eigs.iter().filter(|&&v| v < 0.0).count();
    Ok(match negative {
        0 => CriticalKind::Minimum,
        k if k == eigs.len() => CriticalKind::Maximum,
        k => CriticalKind::Saddle { negative: k },
    })
}

/// The collection of local objectives held by the agents.
#[derive(Debug, Clone)]
pub struct ObjectiveSet {
    dim: usize,
    locals: Vec<Arc<dyn LocalObjective>>,
    /// Gradient Lipschitz constant of every local on the working box, if known.
    pub lipschitz_bound: Option<f64>,
}

impl ObjectiveSet {
    pub fn new(locals: Vec<Arc<dyn LocalObjective>>) -> Result<Self, ObjectiveError> {
        let dim = locals.first().map(|l| l.dim()).ok_or(ObjectiveError::EmptyProblem)?;
        if dim == 0 {
            return Err(ObjectiveError::EmptyProblem);
        }
        if let Some(bad) = locals.iter().find(|l| l.dim() != dim) {
            return Err(ObjectiveError::Mismatch {
                expected: dim,
                got: bad.dim(),
            });
        }
        Ok(Self {
            dim,
            locals,
            lipschitz_bound: None,
        })
    }

    /// `N` copies of the same local.
    pub fn homogeneous(local: Arc<dyn LocalObjective>, agents: usize) -> Result<Self, ObjectiveError> {
        Self::new(vec![local; agents])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn agent_count(&self) -> usize {
        self.locals.len()
    }

    /// Stacked dimension `M = N·d`.
    pub fn stacked_dim(&self) -> usize {
        self.dim * self.locals.len()
    }

    pub fn local(&self, n: usize) -> &dyn LocalObjective {
        self.locals[n].as_ref()
    }

    pub fn locals(&self) -> &[Arc<dyn LocalObjective>] {
        &self.locals
    }

    /// `f(a) = Σ_n f_n(a)`.
    pub fn eval_sum(&self, a: &[f64]) -> f64 {
        self.locals.iter().map(|l| l.value(a)).sum()
    }

    pub fn sum_gradient(&self, a: &[f64]) -> Vec<f64> {
        let mut total = vec![0.0; self.dim];
        let mut buf = vec![0.0; self.dim];
        for l in &self.locals {
            l.gradient(a, &mut buf);
            for (t, b) in total.iter_mut().zip(&buf) {
                *t += b;
            }
        }
        total
    }

    pub fn sum_hessian(&self, a: &[f64]) -> DMatrix<f64> {
        self.locals
            .iter()
            .fold(DMatrix::zeros(self.dim, self.dim), |acc, l| acc + l.hessian(a))
    }

    /// Writes `(∇f_n(x_n))_{n=1}^N` into `out`.
    pub fn stacked_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (n, l) in self.locals.iter().enumerate() {
            l.gradient(&x[n * d..(n + 1) * d], &mut out[n * d..(n + 1) * d]);
        }
    }

    pub fn stacked_gradient(&self, x: &[f64]) -> Result<Vec<f64>, ObjectiveError> {
        self.check_stacked(x)?;
        let mut out = vec![0.0; x.len()];
        self.stacked_gradient_into(x, &mut out);
        Ok(out)
    }

    fn check_stacked(&self, x: &[f64]) -> Result<(), ObjectiveError> {
        if x.len() != self.stacked_dim() {
            return Err(ObjectiveError::Mismatch {
                expected: self.stacked_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Classifies the critical point `a` of the sum objective.
    pub fn classify_hessian(&self, a: &[f64]) -> Result<CriticalKind, ObjectiveError> {
        let gnorm = norm(&self.sum_gradient(a));
        if !(gnorm < TOL_CRIT) {
            return Err(ObjectiveError::NotCritical(gnorm));
        }
        classify_symmetric(&self.sum_hessian(a))
    }
}

/// The separable function `h(x) = Σ_n f_n(x_n)` on `R^{Nd}`.
#[derive(Debug, Clone)]
pub struct StackedObjective {
    set: Arc<ObjectiveSet>,
}

impl StackedObjective {
    pub fn new(set: Arc<ObjectiveSet>) -> Self {
        Self { set }
    }

    pub fn objectives(&self) -> &ObjectiveSet {
        &self.set
    }

    pub fn dim(&self) -> usize {
        self.set.stacked_dim()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let d = self.set.dim;
        self.set
            .locals
            .iter()
            .enumerate()
            .map(|(n, l)| l.value(&x[n * d..(n + 1) * d]))
            .sum()
    }

    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.set.stacked_gradient_into(x, out.as_mut_slice());
        out
    }

    /// Block-diagonal Hessian with blocks `∇²f_n(x_n)`.
    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.set.dim;
        let m = x.len();
        let mut h = DMatrix::zeros(m, m);
        for (n, l) in self.set.locals.iter().enumerate() {
            let block = l.hessian(&x[n * d..(n + 1) * d]);
            h.view_mut((n * d, n * d), (d, d)).copy_from(&block);
        }
        h
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::consensus_vector;

    fn quartic(n: usize, seed: Option<u64>) -> ObjectiveSet {
        let mut spec = PresetSpec::new(Preset::QuarticSaddle, n, 2);
        spec.seed = seed;
        make_preset(&spec).unwrap()
    }

    #[test]
    fn quartic_values() {
        let obj = quartic(4, None);
        assert!(obj.eval_sum(&[0.0, 0.0]).abs() < 1e-15);
        assert!((obj.eval_sum(&[0.0, 2f64.sqrt()]) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_copies_sum_to_f() {
        let f = QuarticSaddle { weight: 1.0, tilt: [0.0, 0.0] };
        let obj = quartic(5, None);
        for a in [[0.3, -1.2], [2.0, 0.5], [-1.1, 1.9]] {
            assert!((obj.eval_sum(&a) - f.value(&a)).abs() < 1e-12);
        }
    }

    #[test]
    fn heterogeneous_tilts_sum_to_zero_exactly() {
        for seed in 0..20 {
            let obj = quartic(5, Some(seed));
            let mut sum = [0.0, 0.0];
            for n in 0..5 {
                let mut g = [0.0; 2];
                obj.local(n).gradient(&[0.0, 0.0], &mut g);
                sum[0] += g[0];
                sum[1] += g[1];
            }
            assert_eq!(sum, [0.0, 0.0]);
            let hom = quartic(5, None);
            for a in [[0.4, 0.1], [-2.0, 1.3]] {
                assert!((obj.eval_sum(&a) - hom.eval_sum(&a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stacked_gradient_at_consensus_saddle() {
        let obj = quartic(3, None);
        let x = consensus_vector(&[0.0, 0.0], 3);
        assert!(obj.stacked_gradient(x.as_slice()).unwrap().iter().all(|&v| v == 0.0));

        let het = quartic(3, Some(7));
        let g = het.stacked_gradient(x.as_slice()).unwrap();
        assert!(norm(&g) > 1e-3);
        let block_sum: Vec<f64> = (0..2).map(|k| (0..3).map(|n| g[n * 2 + k]).sum()).collect();
        assert!(norm(&block_sum) < 1e-15);
        assert!(het.stacked_gradient(&[0.0; 5]).is_err());
    }

    #[test]
    fn block_sum_equals_sum_gradient() {
        let obj = make_preset(&PresetSpec::new(Preset::RandomQuartic, 3, 3).with_seed(4)).unwrap();
        let a = [0.7, -0.2, 1.5];
        let x = consensus_vector(&a, 3);
        let g = obj.stacked_gradient(x.as_slice()).unwrap();
        let expect = obj.sum_gradient(&a);
        for k in 0..3 {
            let s: f64 = (0..3).map(|n| g[n * 3 + k]).sum();
            assert!((s - expect[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_quartic_points() {
        let obj = quartic(4, None);
        assert_eq!(obj.classify_hessian(&[0.0, 0.0]).unwrap(), CriticalKind::Saddle { negative: 1 });
        assert_eq!(obj.classify_hessian(&[0.0, 2f64.sqrt()]).unwrap(), CriticalKind::Minimum);
        assert!(matches!(obj.classify_hessian(&[0.5, 0.0]), Err(ObjectiveError::NotCritical(_))));
        let h = obj.sum_hessian(&[0.0, 2f64.sqrt()]);
        assert!((h[(1, 1)] - 4.0).abs() < 1e-12 && (h[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn classify_convex_and_degenerate() {
        let q = ObjectiveSet::new(vec![Arc::new(Quadratic { weight: 2.0, center: vec![0.0, 0.0] })]).unwrap();
        assert_eq!(q.classify_hessian(&[0.0, 0.0]).unwrap(), CriticalKind::Minimum);
        assert_eq!(classify_symmetric(&DMatrix::zeros(1, 1)).unwrap(), CriticalKind::Degenerate);
        assert_eq!(
            classify_symmetric(&DMatrix::from_diagonal_element(2, 2, -1.0)).unwrap(),
            CriticalKind::Maximum
        );
    }

    #[test]
    fn quadratic_convex_minimum_is_mean_of_centers() {
        let obj = make_preset(&PresetSpec::new(Preset::QuadraticConvex, 4, 3).with_seed(11)).unwrap();
        let mut mean = vec![0.0; 3];
        for n in 0..4 {
            let mut g = vec![0.0; 3];
            obj.local(n).gradient(&[0.0; 3], &mut g);
            for k in 0..3 {
                mean[k] -= g[k] / 4.0;
            }
        }
        assert!(norm(&obj.sum_gradient(&mean)) < 1e-14);
    }

    #[test]
    fn stacked_hessian_is_block_diagonal() {
        let obj = Arc::new(make_preset(&PresetSpec::new(Preset::RandomQuartic, 3, 2).with_seed(2)).unwrap());
        let h = StackedObjective::new(obj.clone());
        let x = [0.1, 0.2, -0.3, 0.4, 1.0, -1.0];
        let hm = h.hessian(&x);
        for i in 0..6 {
            for j in 0..6 {
                if i / 2 != j / 2 {
                    assert_eq!(hm[(i, j)], 0.0);
                }
            }
        }
        let a = [0.3, -0.7];
        let xc = consensus_vector(&a, 3);
        assert!((h.value(xc.as_slice()) - obj.eval_sum(&a)).abs() < 1e-12);
    }

    #[test]
    fn preset_errors() {
        assert_eq!("nope".parse::<Preset>(), Err(ObjectiveError::UnknownPreset("nope".into())));
        assert!(matches!(
            make_preset(&PresetSpec::new(Preset::QuarticSaddle, 3, 3)),
            Err(ObjectiveError::Dimension { .. })
        ));
        assert_eq!(make_preset(&PresetSpec::new(Preset::QuadraticConvex, 0, 3)).unwrap_err(), ObjectiveError::EmptyProblem);
    }

    #[test]
    fn coercivity_smoke() {
        let big = 1e3;
        for preset in Preset::ALL {
            let d = if preset == Preset::QuarticSaddle { 2 } else { 3 };
            let obj = make_preset(&PresetSpec::new(preset, 3, d).with_seed(5)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            for _ in 0..50 {
                let dir: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let len = norm(&dir);
                let a: Vec<f64> = dir.iter().map(|v| big * v / len).collect();
                for n in 0..3 {
                    let l = obj.local(n);
                    assert!(l.is_coercive());
                    assert!(l.value(&a) > l.value(&vec![0.0; d]) + 1.0, "{preset} agent {n}");
                }
            }
        }
    }
}
