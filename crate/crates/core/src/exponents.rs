//! Critical exponents, parameter windows and admissibility checks.

use serde::Serialize;

use crate::error::{Error, Result};

/// Positive root of `(d-1)p^2 - (d+1)p - 2 = 0`.
pub fn strauss_exponent(d: f64) -> Result<f64> {
    if !(d > 1.0) || !d.is_finite() {
        return Err(Error::Domain(format!("Strauss exponent needs d > 1, got {d}")));
    }
    let a = d - 1.0;
    let b = d + 1.0;
    // Both terms of the numerator are positive, so no cancellation occurs.
    Ok((b + (b * b + 8.0 * a).sqrt()) / (2.0 * a))
}

/// `1 + 2/d`.
pub fn fujita_exponent(d: f64) -> Result<f64> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::Domain(format!("Fujita exponent needs d > 0, got {d}")));
    }
    Ok(1.0 + 2.0 / d)
}

fn check_even_dimension(n: u32) -> Result<()> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::Domain(format!("dimension must be even and at least 4, got {n}")));
    }
    Ok(())
}

/// Upper bound `M(n)` for the damping coefficient.
pub fn mu_upper_bound(n: u32) -> Result<f64> {
    check_even_dimension(n)?;
    let n = n as f64;
    Ok(0.5 * (n - 1.0) * (1.0 + ((n + 7.0) / (n - 1.0)).sqrt()))
}

/// `(3n^2 - 5n + 2)/n`, below which `q >= -1/2` on the whole window.
pub fn mu_tilde_bound(n: u32) -> f64 {
    let n = n as f64;
    (3.0 * n * n - 5.0 * n + 2.0) / n
}

/// Mass coefficient giving `(mu-1)^2 - 4 nu^2 = 1`.
pub fn nu_for_unit_delta(mu: f64) -> Result<f64> {
    let s = (mu - 1.0).powi(2) - 1.0;
    if s < 0.0 {
        return Err(Error::Domain(format!("no real mass coefficient with delta = 1 for mu = {mu}")));
    }
    Ok(0.5 * s.sqrt())
}

/// `(mu-1)^2 - 4 nu^2`.
pub fn delta(mu: f64, nu: f64) -> f64 {
    (mu - 1.0).powi(2) - 4.0 * nu * nu
}

/// `q = (n-1)p/2 - (n+1)/2`.
pub fn q_exponent(n: u32, p: f64) -> f64 {
    let n = n as f64;
    0.5 * (n - 1.0) * p - 0.5 * (n + 1.0)
}

/// `2/(p-1) - (n+mu-1)/2`.
pub fn kappa1(n: u32, mu: f64, p: f64) -> f64 {
    2.0 / (p - 1.0) - 0.5 * (n as f64 + mu - 1.0)
}

/// `(n+mu-1)(p-1)/2 - 1`.
pub fn kappa2(n: u32, mu: f64, p: f64) -> f64 {
    0.5 * (n as f64 + mu - 1.0) * (p - 1.0) - 1.0
}

/// Exponents attached to a dimension and damping coefficient.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SecondaryExponents {
    pub p2: f64,
    pub p_crit: f64,
    pub mu_tilde: f64,
}

/// `p2(n)`, `p_crit(n, mu)` and the bound `M~(n)`.
pub fn secondary_exponents(n: u32, mu: f64) -> Result<SecondaryExponents> {
    if n < 1 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    if !(mu >= 0.0) {
        return Err(Error::Domain(format!("mu must be nonnegative, got {mu}")));
    }
    let nf = n as f64;
    let p2 = if n == 1 {
        fujita_exponent(1.0)?
    } else {
        fujita_exponent(nf)?.max(strauss_exponent(nf + 2.0)?)
    };
    let fuj_arg = nf + 0.5 * mu - 1.0;
    let fuj = if fuj_arg > 0.0 { fujita_exponent(fuj_arg)? } else { f64::INFINITY };
    // p0(d) grows without bound as d -> 1+, which is the natural value below.
    let strauss = if nf + mu > 1.0 { strauss_exponent(nf + mu)? } else { f64::INFINITY };
    let p_crit = fuj.max(strauss);
    Ok(SecondaryExponents {
        p2,
        p_crit,
        mu_tilde: mu_tilde_bound(n),
    })
}

/// Fujita exponent at `n + (mu-1)/2 - sqrt(delta)/2`, exposed for information only.
pub fn informational_blowup_exponent(n: u32, mu: f64, delta: f64) -> Result<f64> {
    if delta < 0.0 {
        return Err(Error::Domain(format!("delta must be nonnegative, got {delta}")));
    }
    fujita_exponent(n as f64 + 0.5 * (mu - 1.0) - 0.5 * delta.sqrt())
}

/// p-interval and, for a chosen p, the kappa-interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct AdmissibleWindow {
    pub p_low: f64,
    pub p_high: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub q: f64,
}

/// Window for `(n, mu)` evaluated at exponent `p`.
pub fn admissible_window(n: u32, mu: f64, p: f64) -> Result<AdmissibleWindow> {
    check_even_dimension(n)?;
    let nf = n as f64;
    let p_low = strauss_exponent(nf + mu)?;
    let p_high = fujita_exponent(0.5 * (nf + mu - 1.0))?.min(if mu > 0.0 {
        fujita_exponent(mu)?
    } else {
        f64::INFINITY
    });
    Ok(AdmissibleWindow {
        p_low,
        p_high,
        kappa1: kappa1(n, mu, p),
        kappa2: kappa2(n, mu, p),
        q: q_exponent(n, p),
    })
}

/// Geometric midpoint of the p-window.
pub fn default_p(n: u32, mu: f64) -> Result<f64> {
    let w = admissible_window(n, mu, 1.5)?;
    Ok((w.p_low * w.p_high).sqrt())
}

/// Midpoint of `(kappa1, kappa2]`.
pub fn default_kappa(n: u32, mu: f64, p: f64) -> f64 {
    0.5 * (kappa1(n, mu, p) + kappa2(n, mu, p))
}

/// Full parameter tuple of the damped semilinear problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    pub n: u32,
    pub m: u32,
    pub mu: f64,
    pub nu: f64,
    pub delta: f64,
    pub p: f64,
    pub kappa: f64,
    pub epsilon: f64,
}

impl ModelParams {
    /// Build parameters with `nu` derived from `mu` so that `delta = 1`.
    pub fn new(n: u32, mu: f64, p: f64, kappa: f64, epsilon: f64) -> Result<Self> {
        check_even_dimension(n)?;
        let nu = nu_for_unit_delta(mu)?;
        Ok(Self {
            n,
            m: (n - 2) / 2,
            mu,
            nu,
            delta: delta(mu, nu),
            p,
            kappa,
            epsilon,
        })
    }

    /// Parameters with the default p and kappa for `(n, mu)`.
    pub fn with_defaults(n: u32, mu: f64, epsilon: f64) -> Result<Self> {
        let p = default_p(n, mu)?;
        Self::new(n, mu, p, default_kappa(n, mu, p), epsilon)
    }

    pub fn q(&self) -> f64 {
        q_exponent(self.n, self.p)
    }

    /// `mu (p-1) / 2`, the power of the time weight in the Duhamel term.
    pub fn time_decay(&self) -> f64 {
        0.5 * self.mu * (self.p - 1.0)
    }

    pub fn window(&self) -> Result<AdmissibleWindow> {
        admissible_window(self.n, self.mu, self.p)
    }

    /// Names of violated existence hypotheses; empty when all hold.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n < 4 || self.n % 2 != 0 {
            v.push("n even and >= 4".to_string());
            return v;
        }
        if (self.delta - 1.0).abs() > 1e-12 {
            v.push("delta != 1".into());
        }
        if self.mu < 2.0 {
            v.push("mu < 2".into());
        }
        let big_m = mu_upper_bound(self.n).unwrap_or(f64::NAN);
        if !(self.mu < big_m) {
            v.push("mu >= M(n)".into());
        }
        let Ok(w) = self.window() else {
            v.push("window undefined".into());
            return v;
        };
        if !(self.p > w.p_low) {
            v.push("p <= p0(n+mu)".into());
        }
        let nf = self.n as f64;
        if !(self.p < fujita_exponent(0.5 * (nf + self.mu - 1.0)).unwrap_or(f64::NAN)) {
            v.push("p >= p_Fuj((n+mu-1)/2)".into());
        }
        if !(self.p < fujita_exponent(self.mu).unwrap_or(f64::INFINITY)) {
            v.push("p >= p_Fuj(mu)".into());
        }
        if !(self.kappa > w.kappa1) {
            v.push("kappa <= kappa1".into());
        }
        if !(self.kappa <= w.kappa2) {
            v.push("kappa > kappa2".into());
        }
        if !(w.kappa2 < self.m as f64 + 0.5) {
            v.push("kappa2 >= m+1/2".into());
        }
        if !(self.epsilon >= 0.0) {
            v.push("epsilon < 0".into());
        }
        v
    }

    /// Error unless every hypothesis holds.
    pub fn require_admissible(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Hypothesis(v))
        }
    }
}

/// Every exponent for `(n, mu, p)` in one serializable record.
#[derive(Debug, Clone, Serialize)]
pub struct ExponentSummary {
    pub n: u32,
    pub m: u32,
    pub mu: f64,
    pub nu: f64,
    pub delta: f64,
    pub p: f64,
    pub strauss_n_plus_mu: f64,
    pub fujita_half_shift: f64,
    pub fujita_mu: f64,
    pub mu_upper_bound: f64,
    pub secondary: SecondaryExponents,
    pub window: AdmissibleWindow,
    pub default_kappa: f64,
    pub informational_blowup_exponent: f64,
    pub violations: Vec<String>,
}

pub fn summary(n: u32, mu: f64, p: Option<f64>, kappa: Option<f64>) -> Result<ExponentSummary> {
    let p = match p {
        Some(p) => p,
        None => default_p(n, mu)?,
    };
    let kappa = kappa.unwrap_or_else(|| default_kappa(n, mu, p));
    let params = ModelParams::new(n, mu, p, kappa, 0.0)?;
    let nf = n as f64;
    Ok(ExponentSummary {
        n,
        m: params.m,
        mu,
        nu: params.nu,
        delta: params.delta,
        p,
        strauss_n_plus_mu: strauss_exponent(nf + mu)?,
        fujita_half_shift: fujita_exponent(0.5 * (nf + mu - 1.0))?,
        fujita_mu: if mu > 0.0 { fujita_exponent(mu)? } else { f64::INFINITY },
        mu_upper_bound: mu_upper_bound(n)?,
        secondary: secondary_exponents(n, mu)?,
        window: params.window()?,
        default_kappa: default_kappa(n, mu, p),
        informational_blowup_exponent: informational_blowup_exponent(n, mu, params.delta)?,
        violations: params.validate(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strauss_examples() {
        assert!((strauss_exponent(3.0).unwrap() - (1.0 + 2f64.sqrt())).abs() < 1e-14);
        assert!((strauss_exponent(6.0).unwrap() - 1.6433981132).abs() < 1e-9);
        assert!(strauss_exponent(1.0).is_err());
    }

    #[test]
    fn strauss_is_larger_root() {
        for d in 2..=12 {
            let d = d as f64;
            let p = strauss_exponent(d).unwrap();
            let poly = |x: f64| (d - 1.0) * x * x - (d + 1.0) * x - 2.0;
            assert!(poly(p).abs() < 1e-12);
            assert!(poly(p - 1e-6) < 0.0 && poly(p + 1e-6) > 0.0);
        }
    }

    #[test]
    fn fujita_examples() {
        assert_eq!(fujita_exponent(2.0).unwrap(), 2.0);
        assert!((fujita_exponent(2.5).unwrap() - 1.8).abs() < 1e-15);
        assert_eq!(fujita_exponent(1.0).unwrap(), 3.0);
        assert!(fujita_exponent(0.0).is_err());
    }

    #[test]
    fn mu_bound_examples() {
        assert!((mu_upper_bound(4).unwrap() - 4.3722813233).abs() < 1e-9);
        assert!((mu_upper_bound(6).unwrap() - 6.5311288741).abs() < 1e-9);
        assert!(mu_upper_bound(5).is_err());
        assert!(mu_upper_bound(2).is_err());
    }

    #[test]
    fn secondary_examples() {
        assert_eq!(secondary_exponents(1, 0.0).unwrap().p2, 3.0);
        // 3p^2 - 5p - 2 = (3p + 1)(p - 2), so both branches equal 2 at n = 2.
        let p2 = secondary_exponents(2, 0.0).unwrap().p2;
        assert!((strauss_exponent(4.0).unwrap() - 2.0).abs() < 1e-15);
        assert!((p2 - 2.0).abs() < 1e-15);
        let p2 = secondary_exponents(3, 0.0).unwrap().p2;
        assert_eq!(p2, strauss_exponent(5.0).unwrap());
        assert_eq!(secondary_exponents(4, 2.0).unwrap().mu_tilde, 7.5);
    }

    #[test]
    fn window_example() {
        let w = admissible_window(4, 2.0, 1.72).unwrap();
        assert!((w.p_low - 1.6433981).abs() < 1e-7);
        assert!((w.p_high - 1.8).abs() < 1e-14);
        assert!((w.kappa1 - (2.0 / 0.72 - 2.5)).abs() < 1e-12);
        assert!((w.kappa2 - 0.8).abs() < 1e-12);
        assert!((w.q - 0.08).abs() < 1e-12);
    }

    #[test]
    fn validation_names_violations() {
        let ok = ModelParams::new(4, 2.0, 1.72, 0.6, 1e-3).unwrap();
        assert!(ok.validate().is_empty(), "{:?}", ok.validate());
        assert_eq!(ok.delta, 1.0);
        let bad = ModelParams::new(4, 5.0, 1.72, 0.6, 1e-3).unwrap();
        assert!(bad.validate().iter().any(|s| s == "mu >= M(n)"));
        let k = ModelParams::new(4, 2.0, 1.72, 0.85, 1e-3).unwrap();
        assert!(k.validate().iter().any(|s| s == "kappa > kappa2"));
    }

    #[test]
    fn nu_gives_unit_delta() {
        for mu in [2.0, 2.5, 3.7, 4.3] {
            let nu = nu_for_unit_delta(mu).unwrap();
            assert!((delta(mu, nu) - 1.0).abs() < 1e-13);
        }
        assert_eq!(nu_for_unit_delta(2.0).unwrap(), 0.0);
    }

    #[test]
    fn crossover_at_upper_bound() {
        for n in [4u32, 6, 8] {
            let big_m = mu_upper_bound(n).unwrap();
            let a = strauss_exponent(n as f64 + big_m).unwrap();
            let b = fujita_exponent(big_m).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn defaults_are_interior() {
        let p = ModelParams::with_defaults(4, 2.0, 1e-3).unwrap();
        assert!(p.validate().is_empty(), "{:?}", p.validate());
    }

    proptest! {
        #[test]
        fn window_nonempty_and_kappa_ordered(k in 2u32..=6, frac in 0.0f64..1.0, pf in 0.01f64..0.99) {
            let n = 2 * k;
            let big_m = mu_upper_bound(n).unwrap();
            let mu = 2.0 + frac * (big_m - 2.0) * 0.999;
            let w = admissible_window(n, mu, 1.5).unwrap();
            prop_assert!(w.p_low < w.p_high);
            let p = w.p_low + pf * (w.p_high - w.p_low);
            let w = admissible_window(n, mu, p).unwrap();
            let m = (n - 2) / 2;
            prop_assert!(w.kappa1 < w.kappa2);
            prop_assert!(w.kappa1 > 0.0);
            prop_assert!(w.kappa2 < m as f64 + 0.5);
        }

        #[test]
        fn kappa_formulas_agree(n in prop::sample::select(vec![4u32, 6, 8, 10]), mu in 2.0f64..4.3, p in 1.1f64..2.0) {
            let q = q_exponent(n, p);
            let k2 = q + 0.5 * mu * (p - 1.0);
            let k1 = (1.0 - q) / (p - 1.0) - 0.5 * mu;
            prop_assert!((k2 - kappa2(n, mu, p)).abs() < 1e-12);
            prop_assert!((k1 - kappa1(n, mu, p)).abs() < 1e-12 * (1.0 + k1.abs()));
        }

        #[test]
        fn q_at_least_minus_half_below_mu_tilde(k in 2u32..=6, frac in 0.0f64..1.0, pf in 0.01f64..0.99) {
            let n = 2 * k;
            let mu = 2.0 + frac * (mu_upper_bound(n).unwrap().min(mu_tilde_bound(n)) - 2.0) * 0.999;
            let w = admissible_window(n, mu, 1.5).unwrap();
            let p = w.p_low + pf * (w.p_high - w.p_low);
            prop_assert!(q_exponent(n, p) >= -0.5);
        }

        #[test]
        fn nu_thresholds(k in 2u32..=6, frac in 0.0f64..1.0, pf in 0.01f64..0.99) {
            let n = 2 * k;
            let m = ((n - 2) / 2) as f64;
            let mu = 2.0 + frac * (mu_upper_bound(n).unwrap() - 2.0) * 0.999;
            let w = admissible_window(n, mu, 1.5).unwrap();
            let p = w.p_low + pf * (w.p_high - w.p_low);
            prop_assert!(m - (m - 1.0) * p > -1.0);
            prop_assert!(m + 1.0 - (m - 1.0) * p > -1.0);
        }
    }
}
