//! Closed-form term lists for `H_j` and quadrature of the kernels `K_j`, `K~_j`.
//!
//! `H_j(rho, t, r)` is a finite sum of terms
//! `c * rho^a * (rho - t)^b * (r^2 - (rho - t)^2)^e` with `a <= 0`, `b >= 0` and
//! half-integer `e`. Writing `e = k - 1/2` with integer `k >= 0`, every kernel
//! integral has the form `int P(rho) / sqrt(Q (rho^2 - lambda^2)) drho` with a
//! polynomial-like `P`. The substitution `rho = lo + (hi - lo) sin^2(theta/2)`
//! absorbs both inverse square roots at the ends of the interval, leaving a
//! bounded integrand on `[0, pi]`.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::quadrature::{gk21, integrate, QuadOptions};

/// A half-integer stored as twice its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HalfInteger(i32);

impl HalfInteger {
    pub fn from_twice(twice: i32) -> Self {
        assert!(twice % 2 != 0, "half-integer must have an odd double");
        Self(twice)
    }

    pub fn twice(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        0.5 * self.0 as f64
    }

    /// The integer `k` with `self = k - 1/2`.
    fn shifted(self) -> i32 {
        (self.0 + 1) / 2
    }
}

impl Serialize for HalfInteger {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

/// `coef * rho^pow_rho * (rho - t)^pow_shift * (r^2 - (rho - t)^2)^pow_quad`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelTerm {
    pub coef: f64,
    pub pow_rho: i32,
    pub pow_shift: u32,
    pub pow_quad: HalfInteger,
}

impl KernelTerm {
    pub fn eval(&self, rho: f64, t: f64, r: f64) -> f64 {
        let s = rho - t;
        self.coef
            * rho.powi(self.pow_rho)
            * s.powi(self.pow_shift as i32)
            * (r * r - s * s).powf(self.pow_quad.value())
    }
}

/// Term list of `H_j` (or of an r-derivative of it, carrying `r^r_power`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelSum {
    pub m: u32,
    pub j: u32,
    /// Power of an overall factor `r` in front of the sum.
    pub r_power: u32,
    pub terms: Vec<KernelTerm>,
}

type TermKey = (i32, u32, HalfInteger);

fn collect(m: u32, j: u32, r_power: u32, map: BTreeMap<TermKey, f64>) -> KernelSum {
    let terms = map
        .into_iter()
        .filter(|(_, c)| *c != 0.0)
        .map(|((a, b, e), coef)| KernelTerm {
            coef,
            pow_rho: a,
            pow_shift: b,
            pow_quad: e,
        })
        .collect();
    KernelSum {
        m,
        j,
        r_power,
        terms,
    }
}

impl KernelSum {
    /// `(r^2 - (rho - t)^2)^(m - 1/2)`.
    pub fn base(m: u32) -> Self {
        KernelSum {
            m,
            j: 0,
            r_power: 0,
            terms: vec![KernelTerm {
                coef: 1.0,
                pow_rho: 0,
                pow_shift: 0,
                pow_quad: HalfInteger::from_twice(2 * m as i32 - 1),
            }],
        }
    }

    /// Apply `f -> d/drho(-f / (2 rho))` term by term, combining like terms.
    pub fn apply_adjoint(&self) -> KernelSum {
        let mut map: BTreeMap<TermKey, f64> = BTreeMap::new();
        for t in &self.terms {
            let (c, a, b, e) = (t.coef, t.pow_rho, t.pow_shift, t.pow_quad);
            // -(c/2) rho^(a-1) s^b Q^e differentiated by the product rule.
            let c_rho = -0.5 * c * (a - 1) as f64;
            if c_rho != 0.0 {
                *map.entry((a - 2, b, e)).or_default() += c_rho;
            }
            if b > 0 {
                *map.entry((a - 1, b - 1, e)).or_default() += -0.5 * c * b as f64;
            }
            // dQ/drho = -2 s.
            let c_quad = c * e.value();
            if c_quad != 0.0 {
                let key = (a - 1, b + 1, HalfInteger::from_twice(e.twice() - 2));
                *map.entry(key).or_default() += c_quad;
            }
        }
        collect(self.m, self.j + 1, self.r_power, map)
    }

    /// Term list of the partial r-derivative (at fixed rho) of this sum.
    ///
    /// Requires `r_power == 0`; every term with `pow_quad = e` maps to
    /// `2 e c r rho^a s^b Q^(e-1)`.
    pub fn r_derivative(&self) -> Result<KernelSum> {
        if self.r_power != 0 {
            return Err(Error::Domain("r-derivative of an already differentiated kernel".into()));
        }
        let mut map: BTreeMap<TermKey, f64> = BTreeMap::new();
        for t in &self.terms {
            if t.pow_quad.twice() < 1 {
                return Err(Error::Domain(format!(
                    "r-derivative needs pow_quad >= 1/2, found {}",
                    t.pow_quad.value()
                )));
            }
            let key = (t.pow_rho, t.pow_shift, HalfInteger::from_twice(t.pow_quad.twice() - 2));
            *map.entry(key).or_default() += 2.0 * t.coef * t.pow_quad.value();
        }
        Ok(collect(self.m, self.j, 1, map))
    }

    /// Direct pointwise evaluation for `|rho - t| < r`.
    pub fn eval(&self, rho: f64, t: f64, r: f64) -> f64 {
        r.powi(self.r_power as i32) * self.terms.iter().map(|k| k.eval(rho, t, r)).sum::<f64>()
    }

    /// `sum c rho^a s^b Q^k` with `Q^(-1/2)` removed from every term.
    fn reduced(&self, rho: f64, s: f64, quad: f64) -> f64 {
        let mut acc = 0.0;
        for k in &self.terms {
            acc += k.coef
                * rho.powi(k.pow_rho)
                * s.powi(k.pow_shift as i32)
                * quad.powi(k.pow_quad.shifted());
        }
        acc
    }

    /// r-derivative of `reduced` along `rho = r - t + x`, `s = rho - t`, `Q = db * D`
    /// with `db` fixed and `dD/dr = 2`.
    fn reduced_total_dr(&self, rho: f64, s: f64, db: f64, big_d: f64) -> f64 {
        let quad = db * big_d;
        let mut acc = 0.0;
        for k in &self.terms {
            let (a, b, e) = (k.pow_rho, k.pow_shift as i32, k.pow_quad.shifted());
            let mut d = 0.0;
            if a != 0 {
                d += a as f64 * rho.powi(a - 1) * s.powi(b) * quad.powi(e);
            }
            if b != 0 {
                d += b as f64 * rho.powi(a) * s.powi(b - 1) * quad.powi(e);
            }
            if e != 0 {
                d += 2.0 * e as f64 * db * rho.powi(a) * s.powi(b) * quad.powi(e - 1);
            }
            acc += k.coef * d;
        }
        acc
    }

    /// Smallest `pow_quad` across terms.
    pub fn min_pow_quad(&self) -> Option<HalfInteger> {
        self.terms.iter().map(|t| t.pow_quad).min()
    }
}

fn cache() -> &'static Mutex<HashMap<(u32, u32), Arc<KernelSum>>> {
    static CACHE: OnceLock<Mutex<HashMap<(u32, u32), Arc<KernelSum>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Term list of `H_j` for `m >= 1`, `0 <= j <= m`, cached per `(m, j)`.
pub fn build_hj(m: u32, j: u32) -> Result<Arc<KernelSum>> {
    if m == 0 || j > m {
        return Err(Error::Domain(format!("need m >= 1 and 0 <= j <= m, got m={m}, j={j}")));
    }
    if let Some(hit) = cache().lock().unwrap().get(&(m, j)) {
        return Ok(hit.clone());
    }
    let sum = if j == 0 {
        KernelSum::base(m)
    } else {
        build_hj(m, j - 1)?.apply_adjoint()
    };
    debug_assert!(sum.min_pow_quad().map_or(true, |e| e.twice() >= -1));
    let sum = Arc::new(sum);
    // A concurrent builder may have inserted the same list; either copy is identical.
    Ok(cache()
        .lock()
        .unwrap()
        .entry((m, j))
        .or_insert(sum)
        .clone())
}

/// Default kernel quadrature tolerances.
pub fn default_options() -> QuadOptions {
    QuadOptions::new(1e-12, 1e-9)
}

#[inline]
fn half_angle_offsets(len: f64, theta: f64) -> (f64, f64) {
    let sh = (0.5 * theta).sin();
    let ch = (0.5 * theta).cos();
    (len * sh * sh, len * ch * ch)
}

fn theta_integral<F: FnMut(f64) -> f64>(mut f: F, opts: &QuadOptions, what: &str) -> Result<f64> {
    // Most substituted integrands are smooth enough for one panel.
    let e = gk21(&mut f, 0.0, PI);
    if e.value.is_finite() && e.error <= opts.abs_tol.max(opts.rel_tol * e.value.abs()) {
        return Ok(e.value);
    }
    integrate(f, &[0.0, 0.5 * PI, PI], opts)
        .map(|e| e.value)
        .map_err(|e| e.context(what))
}

fn check_r(r: f64, t: f64) -> Result<()> {
    if !(r > 0.0) || !(t >= 0.0) || !r.is_finite() || !t.is_finite() {
        return Err(Error::Domain(format!("kernel needs r > 0 and t >= 0, got t={t}, r={r}")));
    }
    Ok(())
}

/// `K_j(lambda,t,r) = int_lambda^{t+r} H_j / sqrt(rho^2 - lambda^2) drho` for
/// `|t - r| <= lambda <= t + r`.
pub fn eval_kj(ks: &KernelSum, lambda: f64, t: f64, r: f64, opts: &QuadOptions) -> Result<f64> {
    check_r(r, t)?;
    let hi = t + r;
    let lower = (t - r).abs();
    let slack = 1e-14 * hi;
    if !(lambda >= lower - slack) || !(lambda <= hi + slack) {
        return Err(Error::Domain(format!(
            "K_j needs |t-r| <= lambda <= t+r, got lambda={lambda}, t={t}, r={r}"
        )));
    }
    let lambda = lambda.max(lower);
    let len = hi - lambda;
    if len <= 1e-12 * hi {
        return Ok(0.0);
    }
    // lambda - (t - r) >= 0 measures the distance of the lower limit to t-r.
    let gap = lambda - (t - r);
    let rp = r.powi(ks.r_power as i32);
    let f = |theta: f64| {
        let (da, db) = half_angle_offsets(len, theta);
        let rho = if da < db { lambda + da } else { hi - db };
        let low = da + gap;
        let quad = db * low;
        ks.reduced(rho, rho - t, quad) / (low * (rho + lambda)).sqrt()
    };
    Ok(rp * theta_integral(f, opts, "K_j")?)
}

/// `K~_j(lambda,t,r) = int_{t-r}^{t+r} H_j / sqrt(rho^2 - lambda^2) drho` for
/// `t > r` and `0 <= lambda < t - r`.
pub fn eval_ktildej(ks: &KernelSum, lambda: f64, t: f64, r: f64, opts: &QuadOptions) -> Result<f64> {
    check_r(r, t)?;
    if !(t > r) {
        return Err(Error::Domain(format!("K~_j needs t > r, got t={t}, r={r}")));
    }
    let lo = t - r;
    if !(lambda >= 0.0) || !(lambda < lo) {
        return Err(Error::Domain(format!(
            "K~_j needs 0 <= lambda < t-r, got lambda={lambda}, t={t}, r={r}"
        )));
    }
    let len = 2.0 * r;
    let gap = lo - lambda;
    let rp = r.powi(ks.r_power as i32);
    let f = |theta: f64| {
        let (da, db) = half_angle_offsets(len, theta);
        let rho = if da < db { lo + da } else { t + r - db };
        let quad = da * db;
        ks.reduced(rho, rho - t, quad) / ((da + gap) * (rho + lambda)).sqrt()
    };
    Ok(rp * theta_integral(f, opts, "K~_j")?)
}

/// `d/dr K_j(lambda,t,r)` at fixed `lambda` for a level with `pow_quad >= 1/2`.
///
/// The moving upper limit contributes nothing because `H_j` vanishes at
/// `rho = t + r` for such levels.
pub fn eval_dr_kj(ks: &KernelSum, lambda: f64, t: f64, r: f64, opts: &QuadOptions) -> Result<f64> {
    eval_kj(&ks.r_derivative()?, lambda, t, r, opts)
}

/// `d/dr K~_j(lambda,t,r)` at fixed `lambda` for a level with `pow_quad >= 1/2`.
pub fn eval_dr_ktildej(ks: &KernelSum, lambda: f64, t: f64, r: f64, opts: &QuadOptions) -> Result<f64> {
    eval_ktildej(&ks.r_derivative()?, lambda, t, r, opts)
}

/// Total derivative `d/dr [K_j(r - t, t, r)]` for `t < r`, along the moving
/// lower limit `lambda = r - t`. Requires `pow_quad >= 1/2` on every term.
pub fn eval_kj_boundary_dr(ks: &KernelSum, t: f64, r: f64, opts: &QuadOptions) -> Result<f64> {
    check_r(r, t)?;
    if !(t < r) {
        return Err(Error::Domain(format!("boundary derivative needs t < r, got t={t}, r={r}")));
    }
    if ks.r_power != 0 || ks.min_pow_quad().map_or(false, |e| e.twice() < 1) {
        return Err(Error::Domain("boundary derivative needs a level with pow_quad >= 1/2".into()));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    // lo = r - t, hi = t + r: the length 2t is fixed, both ends move with r.
    let len = 2.0 * t;
    let base = 2.0 * (r - t);
    let parts = |theta: f64| {
        let (da, db) = half_angle_offsets(len, theta);
        let rho = if da < db { (r - t) + da } else { t + r - db };
        let big_d = base + da;
        let quad = db * big_d;
        let p = ks.reduced(rho, rho - t, quad);
        let dp = ks.reduced_total_dr(rho, rho - t, db, big_d);
        (dp / big_d, 2.0 * p / (big_d * big_d))
    };
    // The two parts may cancel exactly (they do for the lowest level), so the
    // attainable accuracy is relative to their magnitude, not to the result.
    let scale = gk21(&mut |th: f64| { let (a, b) = parts(th); a.abs() + b.abs() }, 0.0, PI).value;
    let local = QuadOptions {
        abs_tol: opts.abs_tol.max(1e-2 * opts.rel_tol * scale),
        ..*opts
    };
    theta_integral(|th| { let (a, b) = parts(th); a - b }, &local, "boundary d/dr K_j")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn term_set(ks: &KernelSum) -> Vec<(f64, i32, u32, f64)> {
        ks.terms
            .iter()
            .map(|t| (t.coef, t.pow_rho, t.pow_shift, t.pow_quad.value()))
            .collect()
    }

    #[test]
    fn base_case() {
        let h = build_hj(1, 0).unwrap();
        assert_eq!(term_set(&h), vec![(1.0, 0, 0, 0.5)]);
    }

    #[test]
    fn first_level_m1() {
        let h = build_hj(1, 1).unwrap();
        let mut got = term_set(&h);
        got.sort_by(|a, b| a.1.cmp(&b.1));
        assert_eq!(got, vec![(0.5, -2, 0, 0.5), (0.5, -1, 1, -0.5)]);
    }

    #[test]
    fn second_level_m2() {
        let h = build_hj(2, 2).unwrap();
        let mut got = term_set(&h);
        got.sort_by(|a, b| (a.1, a.2).cmp(&(b.1, b.2)));
        assert_eq!(
            got,
            vec![(0.75, -4, 0, 1.5), (2.25, -3, 1, 0.5), (-0.75, -2, 0, 0.5), (0.75, -2, 2, -0.5)]
        );
    }

    #[test]
    fn pow_quad_floor() {
        for m in 1..=5 {
            for j in 0..=m {
                let h = build_hj(m, j).unwrap();
                assert!(h.terms.iter().all(|t| t.pow_quad.twice() >= -1));
                assert!(h.terms.iter().all(|t| t.pow_rho <= 0));
            }
        }
        assert!(build_hj(2, 3).is_err());
        assert!(build_hj(0, 0).is_err());
    }

    #[test]
    fn empty_interval_gives_zero() {
        let h = build_hj(2, 2).unwrap();
        assert_eq!(eval_kj(&h, 3.0, 2.0, 1.0, &default_options()).unwrap(), 0.0);
    }

    #[test]
    fn domain_errors() {
        let h = build_hj(1, 1).unwrap();
        let o = default_options();
        assert!(eval_kj(&h, 0.5, 2.0, 1.0, &o).is_err());
        assert!(eval_kj(&h, 3.5, 2.0, 1.0, &o).is_err());
        assert!(eval_kj(&h, 1.5, 2.0, 0.0, &o).is_err());
        assert!(eval_ktildej(&h, 1.0, 2.0, 1.0, &o).is_err());
        assert!(eval_ktildej(&h, 0.2, 1.0, 1.0, &o).is_err());
    }

    #[test]
    fn ktilde0_positive() {
        let h = build_hj(2, 0).unwrap();
        for &(l, t, r) in &[(0.1, 3.0, 1.0), (1.9, 3.0, 1.0), (0.0, 10.0, 0.2)] {
            assert!(eval_ktildej(&h, l, t, r, &default_options()).unwrap() > 0.0);
        }
    }

    #[test]
    fn k0_against_plain_substitution() {
        // rho = sqrt(lambda^2 + u^2) removes the lower singularity; the upper
        // one is an integrable square root handled by the adaptive rule.
        let (lambda, t, r) = (1.0, 1.0, 1.0);
        let h = build_hj(1, 0).unwrap();
        let ours = eval_kj(&h, lambda, t, r, &QuadOptions::new(1e-14, 1e-12)).unwrap();
        let umax = ((t + r) * (t + r) - lambda * lambda).sqrt();
        let g = |u: f64| {
            let rho = (lambda * lambda + u * u).sqrt();
            let s = rho - t;
            (r * r - s * s).max(0.0).sqrt() / rho
        };
        let oracle = integrate(g, &[0.0, 0.5 * umax, umax], &QuadOptions::new(1e-14, 1e-12)).unwrap();
        assert!((ours - oracle.value).abs() < 1e-8 * oracle.value.abs());
    }

    #[test]
    fn dr_matches_finite_difference() {
        let o = QuadOptions::new(1e-14, 1e-12);
        for m in 1..=3u32 {
            let h = build_hj(m, m - 1).unwrap();
            for &(l, t, r) in &[(2.2, 2.0, 1.0), (1.5, 1.0, 1.2)] {
                let d = eval_dr_kj(&h, l, t, r, &o).unwrap();
                let step = 1e-4 * r;
                let fd = (eval_kj(&h, l, t, r + step, &o).unwrap() - eval_kj(&h, l, t, r - step, &o).unwrap())
                    / (2.0 * step);
                assert!((d - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "m={m}: {d} vs {fd}");
            }
            let (l, t, r) = (0.7, 3.0, 1.0);
            let d = eval_dr_ktildej(&h, l, t, r, &o).unwrap();
            let step = 1e-4 * r;
            let fd = (eval_ktildej(&h, l, t, r + step, &o).unwrap()
                - eval_ktildej(&h, l, t, r - step, &o).unwrap())
                / (2.0 * step);
            assert!((d - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "m={m}: {d} vs {fd}");
        }
    }

    #[test]
    fn boundary_total_derivative_matches_fd() {
        let o = QuadOptions::new(1e-14, 1e-12);
        for m in 1..=3u32 {
            let h = build_hj(m, m - 1).unwrap();
            let (t, r) = (0.6, 1.7);
            let k = |rr: f64| eval_kj(&h, rr - t, t, rr, &o).unwrap();
            let step = 1e-4;
            let fd = (k(r + step) - k(r - step)) / (2.0 * step);
            let d = eval_kj_boundary_dr(&h, t, r, &o).unwrap();
            assert!((d - fd).abs() <= 1e-6 * fd.abs().max(1e-3), "m={m}: {d} vs {fd}");
        }
    }

    #[test]
    fn tolerance_halving_within_estimate() {
        let h = build_hj(2, 2).unwrap();
        let a = eval_kj(&h, 1.3, 2.0, 1.0, &QuadOptions::new(1e-12, 1e-9)).unwrap();
        let b = eval_kj(&h, 1.3, 2.0, 1.0, &QuadOptions::new(0.5e-12, 0.5e-9)).unwrap();
        assert!((a - b).abs() <= 1e-9 * a.abs());
    }
}
