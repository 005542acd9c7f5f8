//! Oracle checks that can run outside `cargo test`.
//!
//! Each check compares a library routine against an independent route and
//! reports the worst discrepancy seen against a fixed tolerance.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{dgd_field, time_change, FlowField, FnField, Schedule, Weight};
use crate::graph::Graph;
use crate::integrator::order_check;
use crate::objective::{make_preset, Preset, PresetSpec, StackedObjective};

#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub cases: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfTestReport {
    pub seed: u64,
    pub checks: Vec<OracleCheck>,
    pub seconds: f64,
}

impl SelfTestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn timed(name: &'static str, tolerance: f64, f: impl FnOnce() -> (f64, usize)) -> OracleCheck {
    let start = Instant::now();
    let (worst, cases) = f();
    OracleCheck {
        name,
        worst,
        tolerance,
        passed: worst.is_finite() && worst < tolerance,
        cases,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Worst relative error of `∇` against central differences, `points` random
/// states per preset in `[−2, 2]^{Nd}`.
pub fn gradient_check(seed: u64, points: usize) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for preset in Preset::ALL {
        let spec = PresetSpec::new(preset, 3, 2).with_seed(seed);
        let h = StackedObjective::new(Arc::new(make_preset(&spec).expect("preset")));
        let m = h.dim();
        for _ in 0..points {
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..=2.0)).collect();
            let g = h.gradient(&x);
            let mut err = 0.0f64;
            let mut xp = x.clone();
            for i in 0..m {
                let step = 1e-5 * x[i].abs().max(1.0);
                xp[i] = x[i] + step;
                let fp = h.value(&xp);
                xp[i] = x[i] - step;
                let fm = h.value(&xp);
                xp[i] = x[i];
                err = err.max(((fp - fm) / (2.0 * step) - g[i]).abs());
            }
            worst = worst.max(err / g.amax().max(1.0));
            cases += 1;
        }
    }
    (worst, cases)
}

/// Characteristic polynomial `det(λI − A)` of an integer matrix, exactly,
/// by Faddeev–LeVerrier. Coefficients ascending: `c[0] + c[1]λ + … + λⁿ`.
pub fn char_poly(a: &[Vec<i64>]) -> Vec<Rational64> {
    let n = a.len();
    let a: Vec<Vec<Rational64>> = a.iter().map(|r| r.iter().map(|&v| Rational64::from_integer(v)).collect()).collect();
    let zero = Rational64::from_integer(0);
    let mul = |x: &Vec<Vec<Rational64>>, y: &Vec<Vec<Rational64>>| -> Vec<Vec<Rational64>> {
        (0..n).map(|i| (0..n).map(|j| (0..n).fold(zero, |s, k| s + x[i][k] * y[k][j])).collect()).collect()
    };
    let mut c = vec![zero; n + 1];
    c[n] = Rational64::from_integer(1);
    let mut m = vec![vec![zero; n]; n];
    for k in 1..=n {
        let mut next = mul(&a, &m);
        for (i, row) in next.iter_mut().enumerate() {
            row[i] += c[n - k + 1];
        }
        m = next;
        let am = mul(&a, &m);
        let tr = (0..n).fold(zero, |s, i| s + am[i][i]);
        c[n - k] = -tr / Rational64::from_integer(k as i64);
    }
    c
}

fn poly_rem(mut a: Vec<Rational64>, b: &[Rational64]) -> Vec<Rational64> {
    let zero = Rational64::from_integer(0);
    while a.len() >= b.len() && !a.is_empty() {
        let lead = *a.last().unwrap() / *b.last().unwrap();
        let shift = a.len() - b.len();
        for (i, &bi) in b.iter().enumerate() {
            a[shift + i] -= lead * bi;
        }
        a.pop();
        while a.last() == Some(&zero) {
            a.pop();
        }
    }
    a
}

fn poly_div(a: &[Rational64], b: &[Rational64]) -> Vec<Rational64> {
    let zero = Rational64::from_integer(0);
    let mut r = a.to_vec();
    let mut q = vec![zero; a.len() + 1 - b.len()];
    for s in (0..q.len()).rev() {
        let lead = r[s + b.len() - 1] / *b.last().unwrap();
        q[s] = lead;
        for (i, &bi) in b.iter().enumerate() {
            r[s + i] -= lead * bi;
        }
    }
    q
}

/// Square-free part `p / gcd(p, p')`.
fn square_free(p: &[Rational64]) -> Vec<Rational64> {
    let dp: Vec<Rational64> = (1..p.len()).map(|i| p[i] * Rational64::from_integer(i as i64)).collect();
    let (mut a, mut b) = (p.to_vec(), dp);
    while !b.is_empty() {
        let r = poly_rem(a, &b);
        a = b;
        b = r;
    }
    poly_div(p, &a)
}

/// Second-smallest Laplacian eigenvalue from the exact characteristic
/// polynomial: `0` when zero is a repeated root, otherwise the smallest
/// positive root of the square-free part, by scanning and bisection.
pub fn lambda2_exact(g: &Graph) -> Option<f64> {
    let n = g.node_count();
    if n < 2 {
        return None;
    }
    let l = g.laplacian_matrix();
    let a: Vec<Vec<i64>> = (0..n).map(|i| (0..n).map(|j| l[(i, j)].round() as i64).collect()).collect();
    let p = char_poly(&a);
    let zero = Rational64::from_integer(0);
    if p[0] == zero && p[1] == zero {
        return Some(0.0);
    }
    let q: Vec<f64> = square_free(&p).iter().map(|r| *r.numer() as f64 / *r.denom() as f64).collect();
    let eval = |x: f64| q.iter().rev().fold(0.0, |s, &c| s * x + c);
    let top = 2.0 * n as f64 + 1.0;
    let step = 1e-3;
    let mut lo = step;
    while lo < top {
        let hi = lo + step;
        if eval(lo).signum() != eval(hi).signum() {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let mid = 0.5 * (a + b);
                if eval(mid).signum() == eval(a).signum() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            return Some(0.5 * (a + b));
        }
        lo = hi;
    }
    None
}

/// Every simple graph on `2..=4` nodes: `|λ₂(eigensolver) − λ₂(exact)|`.
pub fn lambda2_check() -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for n in 2..=4usize {
        let pairs: Vec<(usize, usize)> = (1..=n).flat_map(|i| (i + 1..=n).map(move |j| (i, j))).collect();
        for mask in 0u32..(1 << pairs.len()) {
            let edges: Vec<(usize, usize)> = pairs.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, &e)| e).collect();
            let g = Graph::new(n, &edges).expect("graph");
            let numeric = g.laplacian().expect("spectrum").lambda2();
            let exact = lambda2_exact(&g);
            let err = match (numeric, exact) {
                (Some(a), Some(b)) => (a - b).abs(),
                _ => f64::INFINITY,
            };
            worst = worst.max(err);
            cases += 1;
        }
    }
    (worst, cases)
}

/// `T(S(τ))` and `S(T(t))` round trips, relative to `max(1, ·)`.
pub fn time_change_check() -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for &(ta, tb) in &[(0.8, 0.3), (0.5, 0.0), (1.0, 0.6), (0.95, 0.9)] {
        let s = Schedule::new(ta, tb).expect("schedule");
        for which in [Weight::Alpha, Weight::Beta] {
            let tc = time_change(s, which);
            for k in 0..=40 {
                let tau = 10f64.powf(-3.0 + 7.0 * k as f64 / 40.0);
                let back = tc.inverse(tc.forward(tau));
                worst = worst.max((back - tau).abs() / tau.max(1.0));
                cases += 1;
                // T(t) = e^t − 1 overflows for the unit exponent at large t.
                let inv = tc.inverse(tau);
                if inv.is_finite() {
                    worst = worst.max((tc.forward(inv) - tau).abs() / tau.max(1.0));
                    cases += 1;
                }
            }
        }
    }
    (worst, cases)
}

/// Fixed-step RK4 on `ẋ = x(1 − x)`, `ẏ = −ty`: least-squares order slope.
pub fn order_slope() -> f64 {
    let field = FnField::new(2, |t, x: &[f64], out: &mut [f64]| {
        out[0] = x[0] * (1.0 - x[0]);
        out[1] = -t * x[1];
    });
    let x0 = [0.1, 1.0];
    let t_end = 2.0f64;
    let exact = [1.0 / (1.0 + 9.0 * (-t_end).exp()), (-0.5 * t_end * t_end).exp()];
    order_check(&field, &x0, 0.0, t_end, &exact, 0.2, 5).map(|r| r.slope).unwrap_or(f64::NAN)
}

/// Per-agent DGD field against `−β(L⊗I)x − α∇h`, relative to `max(1, ‖·‖∞)`.
pub fn kron_check(seed: u64, points: usize) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut cases = 0;
    let graphs = [Graph::ring(4), Graph::path(5), Graph::complete(3), Graph::star(6)];
    for (gi, g) in graphs.into_iter().enumerate() {
        let g = Arc::new(g.expect("graph"));
        let preset = Preset::ALL[gi % Preset::ALL.len()];
        let spec = PresetSpec::new(preset, g.node_count(), 2).with_seed(seed + gi as u64);
        let obj = Arc::new(make_preset(&spec).expect("preset"));
        let field = dgd_field(g.clone(), obj, Schedule::new(0.8, 0.3).expect("schedule")).expect("field");
        let m = field.dim();
        let mut out = vec![0.0; m];
        for _ in 0..points {
            let t = rng.random_range(0.0..100.0);
            let x: Vec<f64> = (0..m).map(|_| rng.random_range(-2.0..=2.0)).collect();
            field.eval(t, &x, &mut out);
            let kron = field.eval_kron(t, &x);
            let scale = kron.iter().fold(1.0f64, |s, v| s.max(v.abs()));
            let err = out.iter().zip(&kron).fold(0.0f64, |s, (a, b)| s.max((a - b).abs()));
            worst = worst.max(err / scale);
            cases += 1;
        }
    }
    (worst, cases)
}

/// Laplacian sanity on random graphs: symmetric, zero row sums, PSD spectrum.
pub fn laplacian_check(seed: u64, graphs: usize) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..graphs {
        let n = rng.random_range(2..=12usize);
        let edges: Vec<(usize, usize)> = (1..=n)
            .flat_map(|i| (i + 1..=n).map(move |j| (i, j)))
            .filter(|_| rng.random_bool(0.35))
            .collect();
        let g = Graph::new(n, &edges).expect("graph");
        let l: DMatrix<f64> = g.laplacian_matrix();
        let asym = (&l - l.transpose()).amax();
        let rows = l.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max);
        let spec = g.laplacian().expect("spectrum");
        let neg = spec.eigenvalues.iter().fold(0.0f64, |s, &v| s.max(-v));
        worst = worst.max(asym).max(rows).max(neg - 1e-12 * n as f64).max(0.0);
    }
    (worst, graphs)
}

/// Runs the whole suite.
pub fn run_selftest(seed: u64) -> SelfTestReport {
    let start = Instant::now();
    let checks = vec![
        timed("gradient_vs_finite_differences", 1e-5, || gradient_check(seed, 50)),
        timed("lambda2_vs_exact_characteristic_polynomial", 1e-9, lambda2_check),
        timed("time_change_round_trip", 1e-8, time_change_check),
        timed("rk4_order_slope_deviation", 0.2, || ((order_slope() - 4.0).abs(), 5)),
        timed("per_agent_vs_kronecker_field", 1e-12, || kron_check(seed, 50)),
        timed("laplacian_structure", 1e-12, || laplacian_check(seed, 100)),
    ];
    SelfTestReport {
        seed,
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_poly_of_path3() {
        // L(P3) has spectrum {0, 1, 3}: λ³ − 4λ² + 3λ.
        let p = char_poly(&[vec![1, -1, 0], vec![-1, 2, -1], vec![0, -1, 1]]);
        let expect: Vec<Rational64> = [0, 3, -4, 1].iter().map(|&v| Rational64::from_integer(v)).collect();
        assert_eq!(p, expect);
    }

    #[test]
    fn exact_lambda2_handles_multiplicity() {
        assert!((lambda2_exact(&Graph::complete(4).unwrap()).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(lambda2_exact(&Graph::new(4, &[(1, 2)]).unwrap()), Some(0.0));
        assert!((lambda2_exact(&Graph::ring(4).unwrap()).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(lambda2_exact(&Graph::new(1, &[]).unwrap()), None);
    }

    #[test]
    fn suite_passes() {
        let r = run_selftest(1);
        for c in &r.checks {
            assert!(c.passed, "{c:?}");
        }
    }
}
