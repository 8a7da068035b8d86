//! Radial profiles `r -> f(r)` with up to two analytic derivatives.

use std::fmt::Debug;
use std::sync::Arc;

/// A radial function of `r > 0` with derivatives up to order two.
pub trait RadialProfile: Send + Sync + Debug {
    /// `d^order/dr^order` of the profile; `order <= 2`.
    fn derivative(&self, r: f64, order: u8) -> f64;

    fn eval(&self, r: f64) -> f64 {
        self.derivative(r, 0)
    }

    /// Power `a` with `|f| = O(r^a)` as `r -> 0+`.
    fn origin_exponent(&self) -> f64;

    /// Power `b` with `|f| = O(r^b)` as `r -> infinity`.
    fn tail_exponent(&self) -> f64;

    /// Closed interval outside of which the profile vanishes, if any.
    fn support(&self) -> Option<(f64, f64)> {
        None
    }

    /// True when the profile is identically zero.
    fn is_zero(&self) -> bool {
        false
    }
}

/// The zero function.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroProfile;

impl RadialProfile for ZeroProfile {
    fn derivative(&self, _r: f64, _order: u8) -> f64 {
        0.0
    }
    fn origin_exponent(&self) -> f64 {
        f64::INFINITY
    }
    fn tail_exponent(&self) -> f64 {
        f64::NEG_INFINITY
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// `amplitude * r^origin * (1 + r)^(-decay)`.
#[derive(Debug, Clone, Copy)]
pub struct PowerProfile {
    pub amplitude: f64,
    pub origin: f64,
    pub decay: f64,
}

impl PowerProfile {
    pub fn new(amplitude: f64, origin: f64, decay: f64) -> Self {
        Self {
            amplitude,
            origin,
            decay,
        }
    }
}

impl RadialProfile for PowerProfile {
    fn derivative(&self, r: f64, order: u8) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let f = self.amplitude * r.powf(self.origin) * (1.0 + r).powf(-self.decay);
        // Logarithmic derivative and its derivative.
        let l1 = self.origin / r - self.decay / (1.0 + r);
        match order {
            0 => f,
            1 => f * l1,
            2 => f * (l1 * l1 - self.origin / (r * r) + self.decay / ((1.0 + r) * (1.0 + r))),
            _ => panic!("profile derivatives above order 2 are not provided"),
        }
    }
    fn origin_exponent(&self) -> f64 {
        self.origin
    }
    fn tail_exponent(&self) -> f64 {
        self.origin - self.decay
    }
    fn is_zero(&self) -> bool {
        self.amplitude == 0.0
    }
}

/// Smooth bump `amplitude * exp(-1 / (1 - x^2))` with `x` mapping `[lo, hi]`
/// onto `[-1, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct BumpProfile {
    pub lo: f64,
    pub hi: f64,
    pub amplitude: f64,
}

impl BumpProfile {
    pub fn new(lo: f64, hi: f64, amplitude: f64) -> Self {
        assert!(hi > lo && lo >= 0.0, "bump needs 0 <= lo < hi");
        Self { lo, hi, amplitude }
    }
}

impl RadialProfile for BumpProfile {
    fn derivative(&self, r: f64, order: u8) -> f64 {
        let scale = 2.0 / (self.hi - self.lo);
        let x = (2.0 * r - self.lo - self.hi) / (self.hi - self.lo);
        if x.abs() >= 1.0 || self.amplitude == 0.0 {
            return 0.0;
        }
        let w = 1.0 - x * x;
        let phi = self.amplitude * (-1.0 / w).exp();
        let g1 = -2.0 * x / (w * w);
        match order {
            0 => phi,
            1 => phi * g1 * scale,
            2 => {
                let g2 = -2.0 / (w * w) - 8.0 * x * x / (w * w * w);
                phi * (g1 * g1 + g2) * scale * scale
            }
            _ => panic!("profile derivatives above order 2 are not provided"),
        }
    }
    fn origin_exponent(&self) -> f64 {
        f64::INFINITY
    }
    fn tail_exponent(&self) -> f64 {
        f64::NEG_INFINITY
    }
    fn support(&self) -> Option<(f64, f64)> {
        Some((self.lo, self.hi))
    }
    fn is_zero(&self) -> bool {
        self.amplitude == 0.0
    }
}

/// Finite linear combination of profiles.
#[derive(Debug, Clone)]
pub struct CombinedProfile {
    pub parts: Vec<(f64, Arc<dyn RadialProfile>)>,
}

impl RadialProfile for CombinedProfile {
    fn derivative(&self, r: f64, order: u8) -> f64 {
        self.parts.iter().map(|(c, p)| c * p.derivative(r, order)).sum()
    }
    fn origin_exponent(&self) -> f64 {
        self.parts
            .iter()
            .filter(|(c, p)| *c != 0.0 && !p.is_zero())
            .map(|(_, p)| p.origin_exponent())
            .fold(f64::INFINITY, f64::min)
    }
    fn tail_exponent(&self) -> f64 {
        self.parts
            .iter()
            .filter(|(c, p)| *c != 0.0 && !p.is_zero())
            .map(|(_, p)| p.tail_exponent())
            .fold(f64::NEG_INFINITY, f64::max)
    }
    fn support(&self) -> Option<(f64, f64)> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (c, p) in &self.parts {
            if *c == 0.0 || p.is_zero() {
                continue;
            }
            let (a, b) = p.support()?;
            lo = lo.min(a);
            hi = hi.max(b);
        }
        if lo > hi {
            Some((0.0, 0.0))
        } else {
            Some((lo, hi))
        }
    }
    fn is_zero(&self) -> bool {
        self.parts.iter().all(|(c, p)| *c == 0.0 || p.is_zero())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_derivatives(p: &dyn RadialProfile, rs: &[f64]) {
        for &r in rs {
            let h = 1e-5 * r.max(1e-2);
            let d1 = (p.eval(r + h) - p.eval(r - h)) / (2.0 * h);
            let d2 = (p.derivative(r + h, 1) - p.derivative(r - h, 1)) / (2.0 * h);
            let s1 = p.derivative(r, 1);
            let s2 = p.derivative(r, 2);
            assert!((d1 - s1).abs() <= 1e-6 * (s1.abs() + p.eval(r).abs() / r), "d1 at {r}");
            assert!((d2 - s2).abs() <= 1e-5 * (s2.abs() + s1.abs() / r + 1e-12), "d2 at {r}");
        }
    }

    #[test]
    fn power_profile_derivatives() {
        let p = PowerProfile::new(0.3, -1.0, 2.1);
        check_derivatives(&p, &[0.01, 0.3, 1.0, 7.0, 200.0]);
        assert_eq!(p.origin_exponent(), -1.0);
        assert!((p.tail_exponent() + 3.1).abs() < 1e-15);
    }

    #[test]
    fn bump_profile_derivatives() {
        let b = BumpProfile::new(2.0, 3.0, 1.5);
        check_derivatives(&b, &[2.1, 2.4, 2.5, 2.77, 2.95]);
        assert_eq!(b.eval(1.9), 0.0);
        assert_eq!(b.eval(3.0), 0.0);
        assert_eq!(b.support(), Some((2.0, 3.0)));
    }

    #[test]
    fn combination_is_linear() {
        let a: Arc<dyn RadialProfile> = Arc::new(PowerProfile::new(1.0, -1.0, 3.0));
        let b: Arc<dyn RadialProfile> = Arc::new(BumpProfile::new(1.0, 2.0, 1.0));
        let c = CombinedProfile {
            parts: vec![(2.0, a.clone()), (-0.5, b.clone())],
        };
        for r in [0.5, 1.2, 1.7, 4.0] {
            for o in 0..=2 {
                let want = 2.0 * a.derivative(r, o) - 0.5 * b.derivative(r, o);
                assert!((c.derivative(r, o) - want).abs() <= 1e-15 * want.abs().max(1.0));
            }
        }
        assert_eq!(c.support(), None);
        assert_eq!(c.origin_exponent(), -1.0);
    }
}
