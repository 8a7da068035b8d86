//! Radial fields of `(t, r)`, weights and sampling lattices for weighted sups.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// A (possibly expensive) radial field with its r-derivative.
pub trait RadialField: Send + Sync {
    fn value(&self, t: f64, r: f64) -> Result<f64>;
    fn r_derivative(&self, t: f64, r: f64) -> Result<f64>;
}

/// `1 + |y|`.
#[inline]
pub fn bracket(y: f64) -> f64 {
    1.0 + y.abs()
}

/// `<t+r>^{-1/2} <t-r>^{-kappa}`.
#[inline]
pub fn phi_kappa(t: f64, r: f64, kappa: f64) -> f64 {
    bracket(t + r).powf(-0.5) * bracket(t - r).powf(-kappa)
}

/// Finite set of `(t, r)` probe points.
#[derive(Debug, Clone, Serialize)]
pub struct SampleGrid {
    pub points: Vec<(f64, f64)>,
}

fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

impl SampleGrid {
    /// Tensor lattice `{0} U logspace(t_min, t_max)` by `logspace(r_min, r_max)`
    /// plus points on and next to the diagonal, `per_decade` per decade of t.
    pub fn log_lattice(t_min: f64, t_max: f64, r_min: f64, r_max: f64, nt: usize, nr: usize, per_decade: usize) -> Self {
        let mut points = Vec::new();
        let rs = logspace(r_min, r_max, nr);
        let mut ts = vec![0.0];
        ts.extend(logspace(t_min, t_max, nt));
        for &t in &ts {
            for &r in &rs {
                points.push((t, r));
            }
        }
        if per_decade > 0 {
            let lo = t_min.max(r_min);
            let hi = t_max.min(r_max);
            if hi > lo {
                let decades = (hi / lo).log10();
                let count = ((decades * per_decade as f64).ceil() as usize).max(1) + 1;
                for t in logspace(lo, hi, count) {
                    for off in [-1.0, -0.1, 0.0, 0.1, 1.0] {
                        let r = t + off;
                        if r >= r_min && r <= r_max {
                            points.push((t, r));
                        }
                    }
                }
            }
        }
        Self { points }
    }

    /// Points with `t <= t_cut`.
    pub fn restrict_t(&self, t_cut: f64) -> Self {
        Self {
            points: self.points.iter().copied().filter(|p| p.0 <= t_cut).collect(),
        }
    }
}

/// `amplitude r^{1-m} <r>^{-1} phi_kappa(t, r)`, the field that saturates the
/// weight of the value part of the X_kappa norm.
#[derive(Debug, Clone, Copy)]
pub struct CanonicalField {
    pub m: u32,
    pub kappa: f64,
    pub amplitude: f64,
}

impl RadialField for CanonicalField {
    fn value(&self, t: f64, r: f64) -> Result<f64> {
        Ok(self.amplitude * r.powi(1 - self.m as i32) / bracket(r) * phi_kappa(t, r, self.kappa))
    }

    fn r_derivative(&self, t: f64, r: f64) -> Result<f64> {
        let v = self.value(t, r)?;
        let m = self.m as f64;
        // One-sided at t = r where <t-r> has a kink.
        let sgn = if r >= t { 1.0 } else { -1.0 };
        let dlog = (1.0 - m) / r - 1.0 / bracket(r) - 0.5 / bracket(t + r) - self.kappa * sgn / bracket(t - r);
        Ok(v * dlog)
    }
}

/// Direction of the dissipative transformation `v = <t>^{mu/2} u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    /// `u -> v = <t>^{mu/2} u`.
    Forward,
    /// `v -> u = <t>^{-mu/2} v`.
    Inverse,
}

/// A field multiplied by `<t>^{+-mu/2}`.
#[derive(Clone)]
pub struct TransformedField {
    pub inner: Arc<dyn RadialField>,
    pub mu: f64,
    pub direction: Direction,
}

impl TransformedField {
    pub fn factor(&self, t: f64) -> f64 {
        let e = match self.direction {
            Direction::Forward => 0.5 * self.mu,
            Direction::Inverse => -0.5 * self.mu,
        };
        bracket(t).powf(e)
    }
}

impl RadialField for TransformedField {
    fn value(&self, t: f64, r: f64) -> Result<f64> {
        Ok(self.factor(t) * self.inner.value(t, r)?)
    }
    fn r_derivative(&self, t: f64, r: f64) -> Result<f64> {
        Ok(self.factor(t) * self.inner.r_derivative(t, r)?)
    }
}

/// Apply the dissipative transformation in the given direction.
pub fn dissipative_transform(field: Arc<dyn RadialField>, mu: f64, direction: Direction) -> TransformedField {
    TransformedField {
        inner: field,
        mu,
        direction,
    }
}

/// Sampled sup of `|field| * weight` with its argmax.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightedSup {
    pub value: f64,
    pub at: (f64, f64),
}

/// Sup over `grid` of `score(t, r, v, dv)`; reports non-finite values with their location.
pub fn weighted_sup<F>(field: &dyn RadialField, grid: &SampleGrid, need_derivative: bool, score: F) -> Result<WeightedSup>
where
    F: Fn(f64, f64, f64, f64) -> f64,
{
    let mut best = WeightedSup {
        value: 0.0,
        at: (f64::NAN, f64::NAN),
    };
    for &(t, r) in &grid.points {
        let v = field.value(t, r)?;
        let dv = if need_derivative { field.r_derivative(t, r)? } else { 0.0 };
        let s = score(t, r, v, dv);
        if !s.is_finite() {
            return Err(Error::NonFinite { t, r });
        }
        if s > best.value || best.at.0.is_nan() {
            best = WeightedSup { value: s, at: (t, r) };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_examples() {
        assert!((phi_kappa(2.0, 2.0, 0.7) - 5f64.powf(-0.5)).abs() < 1e-15);
        assert!((phi_kappa(0.0, 1.0, 0.5) - 0.5).abs() < 1e-15);
        assert!((phi_kappa(3.0, 1.0, 0.8) - 0.185_702_604_177).abs() < 1e-12);
    }

    #[test]
    fn round_trip_identity() {
        let f: Arc<dyn RadialField> = Arc::new(CanonicalField { m: 2, kappa: 0.6, amplitude: 1.3 });
        let v: Arc<dyn RadialField> = Arc::new(dissipative_transform(f.clone(), 2.7, Direction::Forward));
        let u = dissipative_transform(v, 2.7, Direction::Inverse);
        for &(t, r) in &[(0.0, 0.5), (3.0, 1.0), (400.0, 2.0), (1e3, 1e3)] {
            let a = f.value(t, r).unwrap();
            assert!((u.value(t, r).unwrap() - a).abs() <= 1e-14 * a.abs());
            let d = f.r_derivative(t, r).unwrap();
            assert!((u.r_derivative(t, r).unwrap() - d).abs() <= 1e-14 * d.abs());
        }
        let fwd = dissipative_transform(f, 2.0, Direction::Forward);
        assert_eq!(fwd.factor(0.0), 1.0);
    }

    #[test]
    fn canonical_derivative_matches_fd() {
        let f = CanonicalField { m: 2, kappa: 0.6, amplitude: 1.0 };
        for &(t, r) in &[(0.0, 0.5), (3.0, 1.0), (1.0, 3.0)] {
            let h = 1e-6;
            let fd = (f.value(t, r + h).unwrap() - f.value(t, r - h).unwrap()) / (2.0 * h);
            let d = f.r_derivative(t, r).unwrap();
            assert!((fd - d).abs() < 1e-7 * d.abs());
        }
    }

    #[test]
    fn lattice_contains_diagonal() {
        let g = SampleGrid::log_lattice(0.1, 100.0, 0.1, 100.0, 5, 5, 4);
        assert!(g.points.iter().any(|&(t, r)| t == r && t > 1.0));
        assert!(g.points.iter().all(|&(t, r)| t >= 0.0 && r >= 0.1));
        assert!(g.restrict_t(10.0).points.iter().all(|p| p.0 <= 10.0));
    }
}
