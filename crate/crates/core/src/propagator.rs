//! The free radial wave propagator `Theta` in even dimension and the linear
//! solution `v0 = c_n^{-1} (Theta(g) + d_t Theta(f))`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::exponents::ModelParams;
use crate::field::RadialField;
use crate::kernel::{build_hj, eval_kj, eval_kj_boundary_dr, eval_ktildej, KernelSum};
use crate::profile::{PowerProfile, RadialProfile};
use crate::quadrature::{integrate_graded, QuadOptions};

/// Radii below this are rejected by propagator evaluations.
pub const MIN_RADIUS: f64 = 1e-6;

/// Dimension-dependent constants of the representation formula.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorConstants {
    pub n: u32,
    pub m: u32,
    /// `sqrt(pi) * Gamma((n-1)/2)`.
    pub c_n: f64,
}

impl PropagatorConstants {
    pub fn new(n: u32) -> Result<Self> {
        if n < 4 || n % 2 != 0 {
            return Err(Error::Domain(format!("dimension must be even and at least 4, got {n}")));
        }
        let c_n = std::f64::consts::PI.sqrt() * libm::tgamma(0.5 * (n as f64 - 1.0));
        Ok(Self {
            n,
            m: (n - 2) / 2,
            c_n,
        })
    }

    /// `pi * 2^{-(n-2)/2} * (n-3)!!`, an independent route to `c_n`.
    pub fn c_n_double_factorial(n: u32) -> f64 {
        let mut df = 1.0;
        let mut k = n as i64 - 3;
        while k > 1 {
            df *= k as f64;
            k -= 2;
        }
        std::f64::consts::PI * 2f64.powi(-((n as i32 - 2) / 2)) * df
    }
}

/// Tolerances for the kernel (inner) and lambda (outer) quadratures.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagatorOptions {
    pub kernel: QuadOptions,
    pub outer: QuadOptions,
    /// Relative width of the band around `t = r` where the r-derivative falls
    /// back to a finite difference of `Theta`.
    pub diagonal_band: f64,
}

impl Default for PropagatorOptions {
    fn default() -> Self {
        Self {
            kernel: QuadOptions::new(1e-300, 1e-11),
            outer: QuadOptions::new(1e-300, 1e-9),
            diagonal_band: 1e-6,
        }
    }
}

impl PropagatorOptions {
    /// Tighter tolerances for identity checks.
    pub fn precise() -> Self {
        Self {
            kernel: QuadOptions::new(1e-300, 1e-13),
            outer: QuadOptions::new(1e-300, 1e-11),
            diagonal_band: 1e-6,
        }
    }
}

/// Kernel term lists and options for one dimension.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub consts: PropagatorConstants,
    pub opts: PropagatorOptions,
    km: Arc<KernelSum>,
    km1: Arc<KernelSum>,
    dr_km1: KernelSum,
}

/// Which end of an outer lambda interval carries a logarithmic singularity.
#[derive(Clone, Copy)]
struct Ends {
    left: bool,
    right: bool,
}

impl Propagator {
    pub fn new(n: u32) -> Result<Self> {
        Self::with_options(n, PropagatorOptions::default())
    }

    pub fn with_options(n: u32, opts: PropagatorOptions) -> Result<Self> {
        let consts = PropagatorConstants::new(n)?;
        let m = consts.m;
        let km1 = build_hj(m, m - 1)?;
        let dr_km1 = km1.r_derivative()?;
        Ok(Self {
            consts,
            opts,
            km: build_hj(m, m)?,
            km1,
            dr_km1,
        })
    }

    pub fn m(&self) -> u32 {
        self.consts.m
    }

    pub fn kernel_m(&self) -> &KernelSum {
        &self.km
    }

    pub fn kernel_m_minus_1(&self) -> &KernelSum {
        &self.km1
    }

    pub fn kernel_dr_m_minus_1(&self) -> &KernelSum {
        &self.dr_km1
    }

    fn check(&self, t: f64, r: f64) -> Result<()> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("propagator needs t >= 0, got {t}")));
        }
        if !(r >= MIN_RADIUS) || !r.is_finite() {
            return Err(Error::Domain(format!("propagator needs r >= {MIN_RADIUS:e}, got {r}")));
        }
        Ok(())
    }

    /// `int_a^b w(lambda) k(lambda) dlambda` restricted to the support of the
    /// weight, with graded meshes at flagged ends that survive clipping.
    fn outer<W, K>(&self, a: f64, b: f64, ends: Ends, support: Option<(f64, f64)>, w: W, mut k: K, what: &str) -> Result<f64>
    where
        W: Fn(f64) -> f64,
        K: FnMut(f64) -> Result<f64>,
    {
        let (lo, hi) = match support {
            Some((s0, s1)) => (a.max(s0), b.min(s1)),
            None => (a, b),
        };
        if !(hi > lo) {
            return Ok(0.0);
        }
        let ends = Ends {
            left: ends.left && lo == a,
            right: ends.right && hi == b,
        };
        let mut failure: Option<Error> = None;
        let est = integrate_graded(
            |lambda| {
                if failure.is_some() {
                    return 0.0;
                }
                // Nodes that round onto a flagged end sit on an integrable
                // singularity and carry no weight.
                if (ends.left && lambda <= lo) || (ends.right && lambda >= hi) {
                    return 0.0;
                }
                let wv = w(lambda);
                if wv == 0.0 {
                    return 0.0;
                }
                match k(lambda) {
                    Ok(kv) => wv * kv,
                    Err(e) => {
                        failure = Some(e);
                        0.0
                    }
                }
            },
            lo,
            hi,
            ends.left,
            ends.right,
            &self.opts.outer,
        );
        if let Some(e) = failure {
            return Err(e.context(format!("{what} at lambda in [{lo:.6e}, {hi:.6e}]")));
        }
        est.map(|e| e.value).map_err(|e| e.context(what))
    }

    /// Raw `(w1, w2)` so that `Theta(g) = r^{-2m} (w1 + w2)`.
    pub fn w12(&self, g: &dyn RadialProfile, t: f64, r: f64) -> Result<(f64, f64)> {
        self.check(t, r)?;
        if t == 0.0 || g.is_zero() {
            return Ok((0.0, 0.0));
        }
        let m = self.m() as i32;
        let o = self.opts.kernel;
        let weight = |l: f64| l.powi(2 * m + 1) * g.eval(l);
        let supp = g.support();
        let w1 = self.outer(
            (t - r).abs(),
            t + r,
            Ends { left: t > r, right: false },
            supp,
            weight,
            |l| eval_kj(&self.km, l, t, r, &o),
            "w1",
        )?;
        let w2 = if t > r {
            self.outer(
                0.0,
                t - r,
                Ends { left: false, right: true },
                supp,
                weight,
                |l| if l < t - r { eval_ktildej(&self.km, l, t, r, &o) } else { Ok(0.0) },
                "w2",
            )?
        } else {
            0.0
        };
        Ok((w1, w2))
    }

    fn density(&self, g: &dyn RadialProfile, l: f64) -> f64 {
        let m = self.m() as i32;
        2.0 * m as f64 * l.powi(2 * m - 1) * g.eval(l) + l.powi(2 * m) * g.derivative(l, 1)
    }

    fn off_diagonal(&self, t: f64, r: f64) -> Result<()> {
        self.check(t, r)?;
        if t == r {
            return Err(Error::Domain(format!("representation excluded at t = r = {t}")));
        }
        Ok(())
    }

    /// Raw `(w3, w4)` so that `2 r^{2m} Theta(g) = w3 + w4`, for `t != r`.
    pub fn w34(&self, g: &dyn RadialProfile, t: f64, r: f64) -> Result<(f64, f64)> {
        self.off_diagonal(t, r)?;
        if t == 0.0 || g.is_zero() {
            return Ok((0.0, 0.0));
        }
        let m = self.m() as i32;
        let o = self.opts.kernel;
        let supp = g.support();
        let dens = |l: f64| self.density(g, l);
        let w3 = self.outer(
            (t - r).abs(),
            t + r,
            Ends { left: t > r, right: false },
            supp,
            dens,
            |l| eval_kj(&self.km1, l, t, r, &o),
            "w3",
        )?;
        let w4 = if t > r {
            self.outer(
                0.0,
                t - r,
                Ends { left: false, right: true },
                supp,
                dens,
                |l| if l < t - r { eval_ktildej(&self.km1, l, t, r, &o) } else { Ok(0.0) },
                "w4",
            )?
        } else {
            let l = r - t;
            let gv = g.eval(l);
            if gv == 0.0 {
                0.0
            } else {
                l.powi(2 * m) * gv * eval_kj(&self.km1, l, t, r, &o)?
            }
        };
        Ok((w3, w4))
    }

    /// Raw `(w5, w6)` so that `d_r (2 r^{2m} Theta(g)) = w5 + w6`, for `t != r`.
    ///
    /// For `t < r` the boundary term differentiates `K_{m-1}(r - t, t, r)`
    /// along its moving first argument.
    pub fn w56(&self, g: &dyn RadialProfile, t: f64, r: f64) -> Result<(f64, f64)> {
        self.off_diagonal(t, r)?;
        if t == 0.0 || g.is_zero() {
            return Ok((0.0, 0.0));
        }
        let m = self.m() as i32;
        let o = self.opts.kernel;
        let supp = g.support();
        let dens = |l: f64| self.density(g, l);
        let w5 = self.outer(
            (t - r).abs(),
            t + r,
            Ends { left: t > r, right: false },
            supp,
            dens,
            |l| eval_kj(&self.dr_km1, l, t, r, &o),
            "w5",
        )?;
        let w6 = if t > r {
            self.outer(
                0.0,
                t - r,
                Ends { left: false, right: true },
                supp,
                dens,
                |l| if l < t - r { eval_ktildej(&self.dr_km1, l, t, r, &o) } else { Ok(0.0) },
                "w6",
            )?
        } else {
            let l = r - t;
            let gv = g.eval(l);
            if gv == 0.0 {
                0.0
            } else {
                l.powi(2 * m) * gv * eval_kj_boundary_dr(&self.km1, t, r, &o)?
            }
        };
        Ok((w5, w6))
    }

    /// `Theta(g)(t, r)` from the `K_m`, `K~_m` representation.
    pub fn theta_w12(&self, g: &dyn RadialProfile, t: f64, r: f64) -> Result<f64> {
        let (w1, w2) = self.w12(g, t, r)?;
        Ok(r.powi(-2 * self.m() as i32) * (w1 + w2))
    }

    /// `Theta(g)(t, r)` from the `K_{m-1}` representation, `t != r`.
    pub fn theta_w34(&self, g: &dyn RadialProfile, t: f64, r: f64) -> Result<f64> {
        let (w3, w4) = self.w34(g, t, r)?;
        Ok(0.5 * r.powi(-2 * self.m() as i32) * (w3 + w4))
    }

    /// `d_r Theta(g)(t, r)` for `t != r`.
    pub fn theta_r_derivative(&self, g: &dyn RadialProfile, t: f64, r: f64) -> Result<f64> {
        let (w5, w6) = self.w56(g, t, r)?;
        let theta = self.theta_w12(g, t, r)?;
        let m = self.m() as i32;
        Ok(0.5 * r.powi(-2 * m) * (w5 + w6) - 2.0 * m as f64 * theta / r)
    }

    /// `d_r Theta(g)` at any `(t, r)`; inside the diagonal band a Richardson
    /// central difference in `r` of `Theta` replaces the excluded formula.
    pub fn theta_r_derivative_any(&self, g: &dyn RadialProfile, t: f64, r: f64) -> Result<f64> {
        if (t - r).abs() > self.opts.diagonal_band * r.max(1.0) {
            return self.theta_r_derivative(g, t, r);
        }
        let h = 1e-3 * r;
        let d = |h: f64| -> Result<f64> {
            Ok((self.theta_w12(g, t, r + h)? - self.theta_w12(g, t, r - h)?) / (2.0 * h))
        };
        let (d1, d2) = (d(h)?, d(0.5 * h)?);
        Ok((4.0 * d2 - d1) / 3.0)
    }

    /// `Theta` extended to negative times as an odd function.
    fn theta_signed(&self, g: &dyn RadialProfile, t: f64, r: f64) -> Result<f64> {
        if t < 0.0 {
            Ok(-self.theta_w12(g, -t, r)?)
        } else {
            self.theta_w12(g, t, r)
        }
    }

    fn dr_theta_signed(&self, g: &dyn RadialProfile, t: f64, r: f64) -> Result<f64> {
        if t < 0.0 {
            Ok(-self.theta_r_derivative_any(g, -t, r)?)
        } else {
            self.theta_r_derivative_any(g, t, r)
        }
    }

    /// `d_t Theta(f)(t, r)` by Richardson-extrapolated central differences
    /// with `h = 1e-3 max(1, t)` and `h/2`.
    pub fn theta_dt(&self, f: &dyn RadialProfile, t: f64, r: f64) -> Result<f64> {
        richardson_t(t, |s| self.theta_signed(f, s, r))
    }

    /// `d_t d_r Theta(f)(t, r)`.
    pub fn theta_dt_dr(&self, f: &dyn RadialProfile, t: f64, r: f64) -> Result<f64> {
        richardson_t(t, |s| self.dr_theta_signed(f, s, r))
    }
}

fn richardson_t<F: Fn(f64) -> Result<f64>>(t: f64, f: F) -> Result<f64> {
    let h = 1e-3 * t.max(1.0);
    let d = |h: f64| -> Result<f64> { Ok((f(t + h)? - f(t - h)?) / (2.0 * h)) };
    let (d1, d2) = (d(h)?, d(0.5 * h)?);
    Ok((4.0 * d2 - d1) / 3.0)
}

/// `v0 = c_n^{-1} (Theta(g) + d_t Theta(f))` with its r-derivative.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub f: Arc<dyn RadialProfile>,
    pub g: Arc<dyn RadialProfile>,
    pub propagator: Arc<Propagator>,
}

/// Build the linear solution for data `(f, g)`.
pub fn v0(f: Arc<dyn RadialProfile>, g: Arc<dyn RadialProfile>, propagator: Arc<Propagator>) -> LinearSolution {
    LinearSolution { f, g, propagator }
}

impl LinearSolution {
    pub fn value(&self, t: f64, r: f64) -> Result<f64> {
        let p = &self.propagator;
        let mut acc = 0.0;
        if !self.g.is_zero() {
            acc += p.theta_w12(self.g.as_ref(), t, r)?;
        }
        if !self.f.is_zero() {
            acc += p.theta_dt(self.f.as_ref(), t, r)?;
        } else {
            p.check(t, r)?;
        }
        Ok(acc / p.consts.c_n)
    }

    pub fn r_derivative(&self, t: f64, r: f64) -> Result<f64> {
        let p = &self.propagator;
        let mut acc = 0.0;
        if !self.g.is_zero() {
            acc += p.theta_r_derivative_any(self.g.as_ref(), t, r)?;
        }
        if !self.f.is_zero() {
            acc += p.theta_dt_dr(self.f.as_ref(), t, r)?;
        } else {
            p.check(t, r)?;
        }
        Ok(acc / p.consts.c_n)
    }
}

impl RadialField for LinearSolution {
    fn value(&self, t: f64, r: f64) -> Result<f64> {
        LinearSolution::value(self, t, r)
    }
    fn r_derivative(&self, t: f64, r: f64) -> Result<f64> {
        LinearSolution::r_derivative(self, t, r)
    }
}

/// The canonical data pair of the existence theorem and its bound check.
#[derive(Debug, Clone)]
pub struct DataFamily {
    pub f: PowerProfile,
    pub g: PowerProfile,
    /// `sup |f^{(j)}| / (eps r^{1-m-j} <r>^{-kbar-3/2})` for `j = 0, 1, 2`.
    pub f_constants: [f64; 3],
    /// `sup |g^{(j)}| / (eps r^{-m-j} <r>^{-kbar-3/2})` for `j = 0, 1`.
    pub g_constants: [f64; 2],
    pub bounds_ok: bool,
}

/// `f = eps r^{1-m} <r>^{-kbar-3/2}`, `g = eps r^{-m} <r>^{-kbar-3/2}`.
pub fn data_family(params: &ModelParams, kappa_bar: f64) -> DataFamily {
    let m = params.m as f64;
    let decay = kappa_bar + 1.5;
    let f = PowerProfile::new(params.epsilon, 1.0 - m, decay);
    let g = PowerProfile::new(params.epsilon, -m, decay);
    // Constants are amplitude free; measure them on unit-amplitude copies.
    let f1 = PowerProfile::new(1.0, 1.0 - m, decay);
    let g1 = PowerProfile::new(1.0, -m, decay);
    let mut fc = [0.0f64; 3];
    let mut gc = [0.0f64; 2];
    let samples = 241;
    for i in 0..samples {
        let r = 10f64.powf(-3.0 + 6.0 * i as f64 / (samples - 1) as f64);
        let env = (1.0 + r).powf(-decay);
        for (j, c) in fc.iter_mut().enumerate() {
            let w = r.powf(1.0 - m - j as f64) * env;
            *c = c.max(f1.derivative(r, j as u8).abs() / w);
        }
        for (j, c) in gc.iter_mut().enumerate() {
            let w = r.powf(-m - j as f64) * env;
            *c = c.max(g1.derivative(r, j as u8).abs() / w);
        }
    }
    let bounds_ok = fc.iter().chain(gc.iter()).all(|&c| c <= 10.0);
    DataFamily {
        f,
        g,
        f_constants: fc,
        g_constants: gc,
        bounds_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{BumpProfile, ZeroProfile};

    #[test]
    fn normalization_constants_agree() {
        for n in [4u32, 6, 8, 10, 12] {
            let c = PropagatorConstants::new(n).unwrap().c_n;
            let d = PropagatorConstants::c_n_double_factorial(n);
            assert!((c - d).abs() <= 1e-12 * d, "n={n}: {c} vs {d}");
        }
        assert!(PropagatorConstants::new(5).is_err());
    }

    #[test]
    fn zero_and_degenerate_inputs() {
        let p = Propagator::new(4).unwrap();
        let z = ZeroProfile;
        let g = PowerProfile::new(1.0, -1.0, 3.0);
        assert_eq!(p.theta_w12(&z, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(p.theta_w12(&g, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(p.theta_w34(&z, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(p.theta_r_derivative(&z, 2.0, 1.0).unwrap(), 0.0);
        assert!(p.theta_w34(&g, 1.0, 1.0).is_err());
        assert!(p.theta_r_derivative(&g, 1.0, 1.0).is_err());
        assert!(p.theta_w12(&g, 1.0, 1e-7).is_err());
        assert!(p.theta_w12(&g, -1.0, 1.0).is_err());
    }

    #[test]
    fn dual_representation_example() {
        let p = Propagator::with_options(4, PropagatorOptions::precise()).unwrap();
        let g = PowerProfile::new(1.0, -1.0, 3.0);
        for &(t, r) in &[(2.0, 1.0), (0.5, 2.0), (5.0, 0.3)] {
            let a = p.theta_w12(&g, t, r).unwrap();
            let b = p.theta_w34(&g, t, r).unwrap();
            assert!((a - b).abs() <= 1e-8 * a.abs(), "({t},{r}): {a} vs {b}");
        }
    }

    #[test]
    fn r_derivative_matches_fd() {
        let p = Propagator::with_options(6, PropagatorOptions::precise()).unwrap();
        let g = PowerProfile::new(1.0, -2.0, 2.1);
        for &(t, r) in &[(3.0, 1.0), (0.7, 1.5)] {
            let d = p.theta_r_derivative(&g, t, r).unwrap();
            let h = 1e-4 * r;
            let fd = (p.theta_w12(&g, t, r + h).unwrap() - p.theta_w12(&g, t, r - h).unwrap()) / (2.0 * h);
            assert!((d - fd).abs() <= 1e-6 * fd.abs(), "({t},{r}): {d} vs {fd}");
        }
    }

    #[test]
    fn short_time_limit_recovers_data() {
        let prop = Arc::new(Propagator::new(4).unwrap());
        let c = prop.consts.c_n;
        let g = BumpProfile::new(0.5, 2.5, 1.0);
        for r in [0.9, 1.5, 2.2] {
            let h = 1e-3;
            let approx = prop.theta_w12(&g, h, r).unwrap() / (h * c);
            assert!((approx - g.eval(r)).abs() <= 1e-4 * g.eval(r).abs());
        }
        let f: Arc<dyn RadialProfile> = Arc::new(BumpProfile::new(0.5, 2.5, 1.0));
        let sol = v0(f.clone(), Arc::new(ZeroProfile), prop);
        for r in [0.9, 1.5, 2.2] {
            let v = sol.value(0.0, r).unwrap();
            assert!((v - f.eval(r)).abs() <= 1e-4 * f.eval(r).abs(), "{v} vs {}", f.eval(r));
        }
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let prop = Arc::new(Propagator::new(6).unwrap());
        let sol = v0(Arc::new(ZeroProfile), Arc::new(ZeroProfile), prop);
        for &(t, r) in &[(0.0, 1.0), (1.0, 1.0), (3.0, 0.2), (0.2, 4.0)] {
            assert_eq!(sol.value(t, r).unwrap(), 0.0);
            assert_eq!(sol.r_derivative(t, r).unwrap(), 0.0);
        }
    }

    #[test]
    fn data_family_example() {
        let params = ModelParams::new(4, 2.0, 1.72, 0.5, 0.01).unwrap();
        let fam = data_family(&params, 0.5);
        assert!((fam.f.eval(1.0) - 0.0025).abs() < 1e-15);
        assert_eq!(fam.f.origin_exponent(), 0.0);
        assert_eq!(fam.g.origin_exponent(), -1.0);
        assert!(fam.bounds_ok, "{:?} {:?}", fam.f_constants, fam.g_constants);
    }
}
