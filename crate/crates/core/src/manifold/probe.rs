use serde::Serialize;

use super::ManifoldError;
use crate::dynamics::FlowField;
use crate::integrator::{integrate, IntegratorOptions};

/// Final distance to the saddle below which a shot counts as staying near.
pub const DELTA_SADDLE: f64 = 0.05;
/// Bisection stops once the bracket is shorter than this.
pub const TOL_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ShotLabel {
    Near,
    Positive,
    Negative,
}

/// Integration setup shared by all shots.
#[derive(Debug, Clone)]
pub struct ProbeSetup<F> {
    pub field: F,
    pub x_star: Vec<f64>,
    /// Shots are labeled by the sign of `⟨x(t_end) − x*, label_direction⟩`.
    pub label_direction: Vec<f64>,
    /// Candidate limits, for naming where escaping shots end up.
    pub minima: Vec<Vec<f64>>,
    pub t0: f64,
    pub horizon: f64,
    pub integrator: IntegratorOptions,
    pub delta: f64,
    /// Offset of the two validation shots from `s*`.
    pub offset: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Shot {
    pub s: f64,
    pub label: ShotLabel,
    pub projection: f64,
    pub final_distance: f64,
    pub max_distance: f64,
    /// Index into `minima` of the nearest final limit.
    pub nearest_minimum: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeOutcome {
    pub s_star: f64,
    pub bracket: (f64, f64),
    pub shots: usize,
    pub at_star: Shot,
    pub minus: Shot,
    pub plus: Shot,
}

impl ProbeOutcome {
    /// `s*` stays within `stay` of the saddle while both offsets escape
    /// beyond `escape` toward different minima.
    pub fn validates(&self, stay: f64, escape: f64) -> bool {
        self.at_star.max_distance < stay
            && self.minus.final_distance > escape
            && self.plus.final_distance > escape
            && self.minus.nearest_minimum.is_some()
            && self.minus.nearest_minimum != self.plus.nearest_minimum
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

impl<F: FlowField> ProbeSetup<F> {
    pub fn shoot(&self, base: &[f64], direction: &[f64], s: f64) -> Result<Shot, ManifoldError> {
        let x0: Vec<f64> = base.iter().zip(direction).map(|(b, d)| b + s * d).collect();
        let traj = integrate(&self.field, &x0, self.t0, self.t0 + self.horizon, &self.integrator)?;
        let xf = traj.final_state();
        let final_distance = dist(xf, &self.x_star);
        let max_distance = traj.states.iter().map(|x| dist(x, &self.x_star)).fold(0.0, f64::max);
        let projection: f64 = xf.iter().zip(&self.x_star).zip(&self.label_direction).map(|((x, c), u)| (x - c) * u).sum();
        let label = if final_distance <= self.delta {
            ShotLabel::Near
        } else if projection > 0.0 {
            ShotLabel::Positive
        } else {
            ShotLabel::Negative
        };
        let nearest_minimum = (0..self.minima.len()).min_by(|&i, &j| dist(xf, &self.minima[i]).total_cmp(&dist(xf, &self.minima[j])));
        Ok(Shot {
            s,
            label,
            projection,
            final_distance,
            max_distance,
            nearest_minimum,
        })
    }
}

/// Bisection on `s ↦ sign⟨x(t_end; base + s·direction) − x*, u⟩` over `[lo, hi]`.
///
/// Both ends must escape the `δ`-ball on opposite sides; the returned `s*`
/// is the bracket midpoint once it is shorter than `tol_s`.
pub fn shooting_probe<F: FlowField>(
    setup: &ProbeSetup<F>,
    base: &[f64],
    direction: &[f64],
    range: (f64, f64),
    tol_s: f64,
) -> Result<ProbeOutcome, ManifoldError> {
    let (mut lo, mut hi) = range;
    if !(lo < hi) || base.len() != setup.field.dim() || direction.len() != base.len() {
        return Err(ManifoldError::Domain("probe needs lo < hi and matching dimensions"));
    }
    let (a, b) = rayon::join(|| setup.shoot(base, direction, lo), || setup.shoot(base, direction, hi));
    let (a, b) = (a?, b?);
    let opposite = matches!(
        (a.label, b.label),
        (ShotLabel::Positive, ShotLabel::Negative) | (ShotLabel::Negative, ShotLabel::Positive)
    );
    if !opposite {
        return Err(ManifoldError::NoSignChange { lo: a.label, hi: b.label });
    }
    let lo_sign = a.projection > 0.0;
    let mut shots = 2;
    while hi - lo > tol_s {
        let mid = 0.5 * (lo + hi);
        let m = setup.shoot(base, direction, mid)?;
        shots += 1;
        if (m.projection > 0.0) == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s_star = 0.5 * (lo + hi);
    let (at_star, (minus, plus)) = rayon::join(
        || setup.shoot(base, direction, s_star),
        || {
            rayon::join(
                || setup.shoot(base, direction, s_star - setup.offset),
                || setup.shoot(base, direction, s_star + setup.offset),
            )
        },
    );
    Ok(ProbeOutcome {
        s_star,
        bracket: (lo, hi),
        shots: shots + 3,
        at_star: at_star?,
        minus: minus?,
        plus: plus?,
    })
}
