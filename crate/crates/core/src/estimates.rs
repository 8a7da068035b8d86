//! Numerical checks of the weighted integral inequalities behind the
//! existence proof.
//!
//! Each check samples `LHS * weight` on a probe set and on the same probe set
//! with every extent doubled. An inequality of the form `LHS <~ weight^{-1}`
//! passes when the sampled sup is finite and moves by less than a threshold
//! (10% by default) under the doubling.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::duhamel::thread_pool;
use crate::error::{Error, Result};
use crate::exponents::{fujita_exponent, ModelParams};
use crate::field::bracket;
use crate::kernel::{build_hj, eval_kj, eval_ktildej, KernelSum};
use crate::quadrature::{integrate, Estimate, QuadOptions};

/// Settings shared by every check.
#[derive(Debug, Clone, Serialize)]
pub struct HarnessOptions {
    /// Largest admissible relative change of the sup under domain doubling.
    pub threshold: f64,
    /// Largest `|y|` of the one-dimensional probe sets.
    pub y_extent: f64,
    /// Largest `t + r` of the `(t, r)` lattice.
    pub lattice_extent: f64,
    /// Largest `t + r` of the kernel probe lattice.
    pub kernel_extent: f64,
    /// Lattice lines per decade away from the diagonal.
    pub per_decade: usize,
    /// Diagonal-band points per decade.
    pub diagonal_per_decade: usize,
    /// Check hypotheses before computing; disabled by the negative controls.
    pub enforce_hypotheses: bool,
    #[serde(skip)]
    pub quad: QuadOptions,
}

impl Default for HarnessOptions {
    fn default() -> Self {
        Self {
            threshold: 0.10,
            y_extent: 1e3,
            lattice_extent: 1e3,
            kernel_extent: 2e2,
            per_decade: 4,
            diagonal_per_decade: 16,
            enforce_hypotheses: true,
            quad: QuadOptions {
                abs_tol: 1e-15,
                rel_tol: 1e-8,
                max_panels: 20_000,
            },
        }
    }
}

/// Result of one inequality check.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub name: String,
    /// Sup of `LHS * weight` over the doubled probe set.
    pub weighted_sup: f64,
    /// Probe point attaining it.
    pub argmax: Vec<f64>,
    /// Sup over the undoubled probe set.
    pub base_sup: f64,
    pub probe_set: String,
    /// `|weighted_sup - base_sup| / weighted_sup`.
    pub stability: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// A probe point with its weighted value; `base` marks points in the undoubled set.
#[derive(Debug, Clone)]
struct Sample {
    at: Vec<f64>,
    base: bool,
    value: f64,
}

fn make_report(name: impl Into<String>, probe_set: String, samples: &[Sample], threshold: f64) -> EstimateReport {
    let mut sup = 0.0f64;
    let mut argmax = Vec::new();
    let mut base_sup = 0.0f64;
    let mut finite = true;
    for s in samples {
        if !s.value.is_finite() {
            finite = false;
            sup = f64::INFINITY;
            argmax = s.at.clone();
            break;
        }
        if s.value > sup || argmax.is_empty() {
            sup = s.value.max(sup);
            argmax = s.at.clone();
        }
        if s.base {
            base_sup = base_sup.max(s.value);
        }
    }
    let stability = if !finite {
        f64::INFINITY
    } else if sup > 0.0 {
        (sup - base_sup).abs() / sup
    } else {
        0.0
    };
    EstimateReport {
        name: name.into(),
        weighted_sup: sup,
        argmax,
        base_sup,
        probe_set,
        stability,
        threshold,
        pass: finite && stability < threshold,
    }
}

/// Points `10^{k/per}` in `[lo, hi]`, aligned so smaller ranges are subsets.
fn decade_points(lo: f64, hi: f64, per: usize) -> Vec<f64> {
    let per = per.max(1) as f64;
    let k0 = (lo.log10() * per - 1e-9).ceil() as i64;
    let k1 = (hi.log10() * per + 1e-9).floor() as i64;
    (k0..=k1).map(|k| 10f64.powf(k as f64 / per)).collect()
}

/// `{0} U {+-10^{k/per}}` with `|y| <= extent`; negatives only when `two_sided`.
fn y_grid(extent: f64, per: usize, two_sided: bool) -> Vec<f64> {
    let pos = decade_points(1e-2, extent, per);
    let mut ys = vec![0.0];
    ys.extend(pos.iter().copied());
    if two_sided {
        ys.extend(pos.iter().map(|y| -y));
    }
    ys
}

/// Log lattice of `(t, r)` with `r > 0`, `t + r <= extent`, plus a band of
/// points around `t = r`.
pub fn probe_lattice(extent: f64, per_decade: usize, diagonal_per_decade: usize) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    let mut ts = vec![0.0];
    ts.extend(decade_points(1e-1, extent, per_decade));
    let rs = decade_points(1e-2, extent, per_decade);
    for &t in &ts {
        for &r in &rs {
            if t + r <= extent * (1.0 + 1e-12) {
                pts.push((t, r));
            }
        }
    }
    for t in decade_points(1.0, extent, diagonal_per_decade) {
        for d in [-3.0, -1.0, -0.3, 0.0, 0.3, 1.0, 3.0] {
            let r = t + d;
            if r > 0.0 && t + r <= extent * (1.0 + 1e-12) {
                pts.push((t, r));
            }
        }
    }
    pts
}

fn lattice_descriptor(extent: f64, opts: &HarnessOptions) -> String {
    format!(
        "(t,r) log lattice, t+r <= {extent} (base {}), {} lines/decade, {} diagonal points/decade",
        0.5 * extent,
        opts.per_decade,
        opts.diagonal_per_decade
    )
}

fn y_descriptor(extent: f64, per: usize, two_sided: bool) -> String {
    let range = if two_sided { "|y|" } else { "y >= 0," };
    format!("{range} <= {extent} (base {}), {per} points/decade", 0.5 * extent)
}

fn sample_all<F>(points: &[Vec<f64>], base: impl Fn(&[f64]) -> bool + Sync, f: F) -> Result<Vec<Sample>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let pool = thread_pool()?;
    pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                Ok(Sample {
                    at: p.clone(),
                    base: base(p),
                    value: f(p)?,
                })
            })
            .collect()
    })
}

// ---------------------------------------------------------------------------
// Whole-line integrals

/// `int_R f` for an integrand decaying like `|x|^{-decay}` with `decay > 1`.
///
/// The line is truncated at `X = 1e6 (1 + max |kink|)` and the two tails are
/// added from the power law through `f(+-X)`; the tail itself enters the error
/// with relative weight `(1 + max |kink|) / X`.
fn whole_line<F: Fn(f64) -> f64>(f: F, kinks: &[f64], decay: f64, opts: &QuadOptions) -> Result<Estimate> {
    let scale = 1.0 + kinks.iter().fold(0.0f64, |m, k| m.max(k.abs()));
    let big = 1e6 * scale;
    let mut bps = vec![-big, big, 0.0];
    bps.extend(kinks.iter().copied());
    let mut s = scale;
    while s < big {
        bps.push(s);
        bps.push(-s);
        s *= 10.0;
    }
    bps.sort_by(f64::total_cmp);
    bps.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * scale);
    let inner = integrate(&f, &bps, opts)?;
    let tail = (f(big) + f(-big)) * big / (decay - 1.0);
    Ok(Estimate {
        value: inner.value + tail,
        error: inner.error + tail.abs() * scale / big,
    })
}

/// `int_{-X}^{X}`, used where the full-line integral diverges.
fn truncated_line<F: Fn(f64) -> f64>(f: F, kinks: &[f64], extent: f64, opts: &QuadOptions) -> Result<Estimate> {
    let mut bps = vec![-extent, extent, 0.0];
    bps.extend(kinks.iter().copied().filter(|k| k.abs() < extent));
    let mut s = 1.0;
    while s < extent {
        bps.push(s);
        bps.push(-s);
        s *= 10.0;
    }
    bps.sort_by(f64::total_cmp);
    bps.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * extent);
    integrate(&f, &bps, opts)
}

/// `int_R <x>^{-a} <x+y>^{-b} dx`.
pub fn convolution_integral(a: f64, b: f64, y: f64, opts: &QuadOptions) -> Result<f64> {
    if !(a >= 0.0 && b >= 0.0 && a + b > 1.0) {
        return Err(Error::Hypothesis(vec![format!("need a, b >= 0 and a + b > 1, got a={a}, b={b}")]));
    }
    let f = |x: f64| bracket(x).powf(-a) * bracket(x + y).powf(-b);
    whole_line(f, &[-y], a + b, opts).map(|e| e.value)
}

/// Sup over `y` of the convolution integral; rejects `a + b <= 1`.
pub fn verify_convolution_bound(a: f64, b: f64, opts: &HarnessOptions) -> Result<EstimateReport> {
    if !(a >= 0.0 && b >= 0.0 && a + b > 1.0) {
        return Err(Error::Hypothesis(vec![format!("convolution bound needs a, b >= 0 and a + b > 1, got a={a}, b={b}")]));
    }
    let ext = opts.y_extent;
    let pts: Vec<Vec<f64>> = y_grid(ext, opts.diagonal_per_decade, true).into_iter().map(|y| vec![y]).collect();
    let samples = sample_all(&pts, |p| p[0].abs() <= 0.5 * ext, |p| convolution_integral(a, b, p[0], &opts.quad))?;
    Ok(make_report(
        format!("convolution a={a} b={b}"),
        y_descriptor(ext, opts.diagonal_per_decade, true),
        &samples,
        opts.threshold,
    ))
}

/// The convolution integral truncated to `|x| <= extent`, sampled for
/// `|y| <= extent`; the doubling doubles both. For `a + b <= 1` the sup grows
/// with the extent.
pub fn truncated_convolution_report(a: f64, b: f64, opts: &HarnessOptions) -> Result<EstimateReport> {
    let ext = opts.y_extent;
    let pts: Vec<Vec<f64>> = y_grid(ext, opts.diagonal_per_decade, true).into_iter().map(|y| vec![y]).collect();
    let f = |y: f64, x: f64| bracket(x).powf(-a) * bracket(x + y).powf(-b);
    let mut samples = Vec::new();
    for (extent, base) in [(ext, false), (0.5 * ext, true)] {
        for p in &pts {
            let y = p[0];
            if y.abs() > extent {
                continue;
            }
            let v = truncated_line(|x| f(y, x), &[-y], extent, &opts.quad)?.value;
            samples.push(Sample {
                at: vec![y, extent],
                base,
                value: v,
            });
        }
    }
    Ok(make_report(
        format!("truncated convolution a={a} b={b}"),
        format!("{}; truncation |x| <= extent", y_descriptor(ext, opts.diagonal_per_decade, true)),
        &samples,
        opts.threshold,
    ))
}

// ---------------------------------------------------------------------------
// One-dimensional lemmas

/// Which square-root lemma applies to `q`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QRegime {
    /// `q >= 1/2`.
    High,
    /// `0 <= q < 1/2`.
    Middle,
    /// `-1/2 <= q < 0`.
    Low,
    /// `q < -1/2`: no square-root lemma applies.
    Outside,
}

pub fn q_regime(q: f64) -> QRegime {
    if q >= 0.5 {
        QRegime::High
    } else if q >= 0.0 {
        QRegime::Middle
    } else if q >= -0.5 {
        QRegime::Low
    } else {
        QRegime::Outside
    }
}

/// Violations of the exponent window and the kappa range.
pub fn lemma_hypotheses(params: &ModelParams) -> Vec<String> {
    let mut v = Vec::new();
    let w = match params.window() {
        Ok(w) => w,
        Err(e) => return vec![e.to_string()],
    };
    if !(params.p > w.p_low) {
        v.push(format!("p <= p0(n+mu) = {}", w.p_low));
    }
    if !(params.p < w.p_high) {
        v.push(format!("p >= p_Fuj((n+mu-1)/2) = {}", w.p_high));
    }
    if !(params.kappa > w.kappa1) {
        v.push(format!("kappa <= kappa1 = {}", w.kappa1));
    }
    if !(params.kappa <= w.kappa2) {
        v.push(format!("kappa > kappa2 = {}", w.kappa2));
    }
    v
}

/// Additional hypotheses of the four-integral proposition.
pub fn ijpq_hypotheses(params: &ModelParams) -> Vec<String> {
    let mut v = lemma_hypotheses(params);
    let q = params.q();
    if !(q >= -0.5 && q <= params.m as f64 - 0.5) {
        v.push(format!("q = {q} outside [-1/2, m-1/2]"));
    }
    match fujita_exponent(params.mu) {
        Ok(pf) if params.p < pf => {}
        Ok(pf) => v.push(format!("p >= p_Fuj(mu) = {pf}")),
        Err(e) => v.push(e.to_string()),
    }
    v
}

fn gate(enforce: bool, violations: Vec<String>) -> Result<()> {
    if enforce && !violations.is_empty() {
        Err(Error::Hypothesis(violations))
    } else {
        Ok(())
    }
}

/// `G(y) = int <x>^{-p kappa} <x+y>^{-q - mu(p-1)/2} dx`.
pub fn g_integral(params: &ModelParams, y: f64, opts: &QuadOptions) -> Result<f64> {
    let a = params.p * params.kappa;
    let b = params.q() + params.time_decay();
    if !(a + b > 1.0) {
        return Err(Error::Hypothesis(vec![format!("G(y) diverges: exponent sum {} <= 1", a + b)]));
    }
    let f = |x: f64| bracket(x).powf(-a) * bracket(x + y).powf(-b);
    whole_line(f, &[-y], a + b, opts).map(|e| e.value)
}

/// Sup of `<y>^kappa G(y)` over a two-sided log grid.
pub fn verify_lemma_41(params: &ModelParams, opts: &HarnessOptions) -> Result<EstimateReport> {
    gate(opts.enforce_hypotheses, lemma_hypotheses(params))?;
    let ext = opts.y_extent;
    let pts: Vec<Vec<f64>> = y_grid(ext, opts.diagonal_per_decade, true).into_iter().map(|y| vec![y]).collect();
    let samples = sample_all(&pts, |p| p[0].abs() <= 0.5 * ext, |p| {
        Ok(bracket(p[0]).powf(params.kappa) * g_integral(params, p[0], &opts.quad)?)
    })?;
    Ok(make_report(
        format!("G(y) <y>^kappa, kappa={}", params.kappa),
        y_descriptor(ext, opts.diagonal_per_decade, true),
        &samples,
        opts.threshold,
    ))
}

/// Square-root integral over `[-y, -y/2]` of the regime of `q`, with
/// `x = -y + s^2` removing the inverse square root.
pub fn sqrt_lemma_integral(params: &ModelParams, regime: QRegime, y: f64, opts: &QuadOptions) -> Result<f64> {
    if !(y > 0.0) {
        return Ok(0.0);
    }
    let q = params.q();
    let base = -params.kappa * params.p - params.time_decay();
    let (ex, ey) = match regime {
        QRegime::High => (base, -q + 0.5),
        QRegime::Middle => (base + 0.5, -q),
        QRegime::Low => (base + 1.0, -q - 0.5),
        QRegime::Outside => return Err(Error::Hypothesis(vec![format!("q = {q} < -1/2")])),
    };
    let f = |s: f64| {
        let x = -y + s * s;
        2.0 * bracket(x).powf(ex) * bracket(s * s).powf(ey)
    };
    let hi = (0.5 * y).sqrt();
    let mut bps = vec![0.0, hi];
    let mut s = 1.0;
    while s < hi {
        bps.insert(bps.len() - 1, s);
        s *= 4.0;
    }
    integrate(f, &bps, opts).map(|e| e.value)
}

/// `K(y) = int_{-2y}^{y} <x-y>^{-mu(p-1)/2} <x+2y>^{-q-1} <x>^{-kappa p} dx`.
pub fn k_integral(params: &ModelParams, y: f64, opts: &QuadOptions) -> Result<f64> {
    if !(y > 0.0) {
        return Ok(0.0);
    }
    let a = params.time_decay();
    let b = params.q() + 1.0;
    let c = params.kappa * params.p;
    let f = |x: f64| bracket(x - y).powf(-a) * bracket(x + 2.0 * y).powf(-b) * bracket(x).powf(-c);
    let mut bps = vec![-2.0 * y, 0.0, y];
    let mut s = 1.0;
    while s < 2.0 * y {
        for v in [s, -s, -2.0 * y + s, y - s] {
            if v > -2.0 * y && v < y {
                bps.push(v);
            }
        }
        s *= 10.0;
    }
    bps.sort_by(f64::total_cmp);
    bps.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + y));
    integrate(f, &bps, opts).map(|e| e.value)
}

/// Reports for the square-root lemma of the current q-regime and for `K(y)`,
/// plus notices naming the square-root lemmas whose hypothesis excludes q.
pub fn verify_lemmas_42_to_45(params: &ModelParams, opts: &HarnessOptions) -> Result<(Vec<EstimateReport>, Vec<String>)> {
    gate(opts.enforce_hypotheses, lemma_hypotheses(params))?;
    let q = params.q();
    let regime = q_regime(q);
    let ext = opts.y_extent;
    let pts: Vec<Vec<f64>> = y_grid(ext, opts.diagonal_per_decade, false).into_iter().map(|y| vec![y]).collect();
    let base = |p: &[f64]| p[0] <= 0.5 * ext;
    let desc = y_descriptor(ext, opts.diagonal_per_decade, false);
    let mut reports = Vec::new();
    let mut notices = Vec::new();
    for (r, label) in [
        (QRegime::High, "q >= 1/2"),
        (QRegime::Middle, "0 <= q < 1/2"),
        (QRegime::Low, "-1/2 <= q < 0"),
    ] {
        if r != regime {
            notices.push(format!("square-root integral for {label} skipped: q = {q}"));
        }
    }
    if regime != QRegime::Outside {
        let samples = sample_all(&pts, base, |p| {
            Ok(bracket(p[0]).powf(params.kappa) * sqrt_lemma_integral(params, regime, p[0], &opts.quad)?)
        })?;
        reports.push(make_report(
            format!("square-root integral ({regime:?} q regime) <y>^kappa"),
            desc.clone(),
            &samples,
            opts.threshold,
        ));
    }
    let samples = sample_all(&pts, base, |p| {
        Ok(bracket(p[0]).powf(params.kappa) * k_integral(params, p[0], &opts.quad)?)
    })?;
    reports.push(make_report("K(y) <y>^kappa", desc, &samples, opts.threshold));
    Ok((reports, notices))
}

// ---------------------------------------------------------------------------
// Four-integral proposition

/// `phi_kappa(tau, lambda)^p`.
#[inline]
fn phi_p(tau: f64, lambda: f64, kappa: f64, p: f64) -> f64 {
    bracket(tau + lambda).powf(-0.5 * p) * bracket(tau - lambda).powf(-kappa * p)
}

/// The four integrals of the proposition at one `(t, r)`.
#[derive(Debug, Clone, Copy)]
pub struct Ijpq<'a> {
    pub params: &'a ModelParams,
    pub gamma: f64,
    pub opts: &'a QuadOptions,
}

fn push_inside(bps: &mut Vec<f64>, lo: f64, hi: f64, cands: &[f64]) {
    for &c in cands {
        if c > lo && c < hi {
            bps.push(c);
        }
    }
    bps.sort_by(f64::total_cmp);
    bps.dedup();
}

/// Outer breakpoints `[lo, ..., hi]`, refined geometrically toward both ends.
fn outer_breaks(lo: f64, hi: f64, cands: &[f64]) -> Vec<f64> {
    let mut bps = vec![lo, hi];
    let mut c: Vec<f64> = cands.to_vec();
    let len = hi - lo;
    let mut s = 1.0;
    while s < 0.5 * len {
        c.push(lo + s);
        c.push(hi - s);
        s *= 10.0;
    }
    push_inside(&mut bps, lo, hi, &c);
    bps
}

impl Ijpq<'_> {
    fn a(&self) -> f64 {
        self.params.time_decay()
    }

    fn q(&self) -> f64 {
        self.params.q()
    }

    pub fn i(&self, t: f64, r: f64) -> Result<f64> {
        let (p, kappa) = (self.params.p, self.params.kappa);
        let e = -self.q() + 0.5 * p - 0.5 - self.gamma;
        let inner = |tau: f64| -> f64 {
            let lm = t - tau - r;
            let s0 = (-2.0 * lm).max(0.0).sqrt();
            let s1 = (2.0 * r).sqrt();
            if !(s1 > s0) {
                return 0.0;
            }
            let f = |s: f64| {
                let lambda = lm + s * s;
                2.0 * bracket(lambda).powf(e) * phi_p(tau, lambda, kappa, p)
            };
            let mut bps = vec![s0, s1];
            let k = tau - lm;
            if k > 0.0 {
                push_inside(&mut bps, s0, s1, &[k.sqrt()]);
            }
            integrate(f, &bps, self.opts).map(|v| v.value).unwrap_or(f64::NAN)
        };
        let g = |tau: f64| bracket(tau).powf(-self.a()) * inner(tau);
        self.outer(g, 0.0, t, &[0.5 * (t - r), t - r, 0.5 * (t + r)])
    }

    pub fn j(&self, t: f64, r: f64) -> Result<f64> {
        let top = (t - r).max(0.0);
        if top == 0.0 {
            return Ok(0.0);
        }
        let (p, kappa) = (self.params.p, self.params.kappa);
        let e = -self.q() - 0.5 - self.gamma;
        let inner = |tau: f64| -> f64 {
            let lm = t - tau - r;
            if !(lm > 0.0) {
                return 0.0;
            }
            let f = |s: f64| {
                let lambda = lm - s * s;
                2.0 * bracket(lambda).powf(0.5 * p) * phi_p(tau, lambda, kappa, p)
            };
            let s1 = lm.sqrt();
            let mut bps = vec![0.0, s1];
            if lm > tau {
                push_inside(&mut bps, 0.0, s1, &[(lm - tau).sqrt()]);
            }
            integrate(f, &bps, self.opts).map(|v| v.value).unwrap_or(f64::NAN)
        };
        let g = |tau: f64| bracket(tau).powf(-self.a()) * bracket(t - tau - r).powf(e) * inner(tau);
        self.outer(g, 0.0, top, &[0.5 * (t - r)])
    }

    pub fn p(&self, t: f64, r: f64) -> Result<f64> {
        let top = (t - r).max(0.0);
        if top == 0.0 {
            return Ok(0.0);
        }
        let (p, kappa) = (self.params.p, self.params.kappa);
        let e = -self.q() + 0.5 * p - 1.0 - self.gamma;
        let g = |tau: f64| {
            let lm = t - tau - r;
            bracket(tau).powf(-self.a()) * bracket(lm).powf(e) * phi_p(tau, 0.5 * lm, kappa, p)
        };
        self.outer(g, 0.0, top, &[(t - r) / 3.0])
    }

    pub fn q_integral(&self, t: f64, r: f64) -> Result<f64> {
        let lo = (t - r).max(0.0);
        if !(t > lo) {
            return Ok(0.0);
        }
        let (p, kappa) = (self.params.p, self.params.kappa);
        let e = -self.q() + 0.5 * p - 1.0 - self.gamma;
        let g = |tau: f64| {
            let lm = t - tau - r;
            bracket(tau).powf(-self.a()) * bracket(lm).powf(e) * phi_p(tau, -lm, kappa, p)
        };
        self.outer(g, lo, t, &[])
    }

    fn outer<G: Fn(f64) -> f64>(&self, g: G, lo: f64, hi: f64, cands: &[f64]) -> Result<f64> {
        let bps = outer_breaks(lo, hi, cands);
        let est = integrate(&g, &bps, self.opts)?;
        if !est.value.is_finite() {
            return Err(Error::Quadrature {
                context: "inner lambda integral".into(),
                value: est.value,
                error: est.error,
            });
        }
        Ok(est.value)
    }
}

/// Sups of `<t-r>^{kappa+gamma}` times each of the four integrals.
pub fn verify_ijpq(params: &ModelParams, gamma: f64, opts: &HarnessOptions) -> Result<Vec<EstimateReport>> {
    if gamma != 0.0 && gamma != 0.5 {
        return Err(Error::Domain(format!("gamma must be 0 or 1/2, got {gamma}")));
    }
    gate(opts.enforce_hypotheses, ijpq_hypotheses(params))?;
    let ext = opts.lattice_extent;
    let lattice = probe_lattice(ext, opts.per_decade, opts.diagonal_per_decade);
    let pts: Vec<Vec<f64>> = lattice.iter().map(|&(t, r)| vec![t, r]).collect();
    let ij = Ijpq {
        params,
        gamma,
        opts: &opts.quad,
    };
    let weight = |t: f64, r: f64| bracket(t - r).powf(params.kappa + gamma);
    let base = |p: &[f64]| p[0] + p[1] <= 0.5 * ext * (1.0 + 1e-12);
    let pool = thread_pool()?;
    let rows: Vec<Result<[f64; 4]>> = pool.install(|| {
        pts.par_iter()
            .map(|p| {
                let (t, r) = (p[0], p[1]);
                let w = weight(t, r);
                Ok([
                    w * ij.i(t, r).map_err(|e| e.context(format!("I at t={t}, r={r}")))?,
                    w * ij.j(t, r).map_err(|e| e.context(format!("J at t={t}, r={r}")))?,
                    w * ij.p(t, r)?,
                    w * ij.q_integral(t, r)?,
                ])
            })
            .collect()
    });
    let rows: Vec<[f64; 4]> = rows.into_iter().collect::<Result<_>>()?;
    let desc = lattice_descriptor(ext, opts);
    Ok(["I", "J", "P", "Q"]
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let samples: Vec<Sample> = pts
                .iter()
                .zip(&rows)
                .map(|(p, row)| Sample {
                    at: p.clone(),
                    base: base(p),
                    value: row[k],
                })
                .collect();
            make_report(format!("{name}_gamma <t-r>^(kappa+gamma), gamma={gamma}"), desc.clone(), &samples, opts.threshold)
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Kernel bounds

fn lambda_fractions() -> [f64; 11] {
    [1e-6, 1e-4, 1e-2, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 0.9999, 1.0 - 1e-6]
}

#[derive(Clone, Copy)]
enum KernelQuantity {
    /// `|K_m|` or `|d_r K_{m-1}|` on `|t-r| < lambda < t+r`.
    Light { j_offset: u32, alpha: u32 },
    /// `|K~_m|` or `|d_r K~_{m-1}|` on `0 < lambda < t-r`.
    Tilde { j_offset: u32, alpha: u32 },
    /// `|d_lambda d_r^alpha K~_j|` on `0 < lambda < t-r`.
    TildeLambda { j: u32, alpha: u32 },
}

/// `ks` is the kernel sum already differentiated `alpha` times in r.
fn kernel_value(ks: &KernelSum, q: KernelQuantity, lambda: f64, t: f64, r: f64, opts: &QuadOptions) -> Result<f64> {
    match q {
        KernelQuantity::Light { .. } => eval_kj(ks, lambda, t, r, opts),
        KernelQuantity::Tilde { .. } => eval_ktildej(ks, lambda, t, r, opts),
        KernelQuantity::TildeLambda { .. } => {
            let h = 1e-5 * lambda.min(t - r - lambda);
            let f = |l: f64| eval_ktildej(ks, l, t, r, opts);
            Ok((f(lambda + h)? - f(lambda - h)?) / (2.0 * h))
        }
    }
}

/// Sup of `|kernel| / bound` for every kernel estimate with `gamma` in `{0, 1/2}`.
///
/// r-derivatives of order above one are not available and are skipped.
pub fn verify_kernel_bounds(m: u32, opts: &HarnessOptions) -> Result<Vec<EstimateReport>> {
    if m < 1 {
        return Err(Error::Domain("kernel bounds need m >= 1".into()));
    }
    let mf = m as f64;
    let kopts = QuadOptions::new(1e-14, 1e-10);
    let ext = opts.kernel_extent;
    let lattice = probe_lattice(ext, opts.per_decade, opts.per_decade);
    let mut quantities = vec![
        ("|K_m|".to_string(), KernelQuantity::Light { j_offset: 0, alpha: 0 }),
        ("|K_{m-1}|".to_string(), KernelQuantity::Light { j_offset: 1, alpha: 0 }),
        ("|d_r K_{m-1}|".to_string(), KernelQuantity::Light { j_offset: 1, alpha: 1 }),
        ("|K~_m|".to_string(), KernelQuantity::Tilde { j_offset: 0, alpha: 0 }),
        ("|K~_{m-1}|".to_string(), KernelQuantity::Tilde { j_offset: 1, alpha: 0 }),
        ("|d_r K~_{m-1}|".to_string(), KernelQuantity::Tilde { j_offset: 1, alpha: 1 }),
    ];
    for j in 0..=m {
        for alpha in 0..=(m - j).min(1) {
            quantities.push((format!("|d_lambda d_r^{alpha} K~_{j}|"), KernelQuantity::TildeLambda { j, alpha }));
        }
    }
    let pool = thread_pool()?;
    let mut reports = Vec::new();
    for (name, q) in quantities {
        let j = match q {
            KernelQuantity::Light { j_offset, .. } | KernelQuantity::Tilde { j_offset, .. } => m - j_offset,
            KernelQuantity::TildeLambda { j, .. } => j,
        };
        let alpha = match q {
            KernelQuantity::Light { alpha, .. } | KernelQuantity::Tilde { alpha, .. } | KernelQuantity::TildeLambda { alpha, .. } => alpha,
        };
        let ks = build_hj(m, j)?;
        let ks = if alpha == 1 { Arc::new(ks.r_derivative()?) } else { ks };
        let mut pts = Vec::new();
        for &(t, r) in &lattice {
            let light = matches!(q, KernelQuantity::Light { .. });
            if light {
                let lo = (t - r).abs();
                let hi = t + r;
                for s in lambda_fractions() {
                    pts.push(vec![t, r, lo + s * (hi - lo)]);
                }
            } else if t > r {
                for s in lambda_fractions() {
                    pts.push(vec![t, r, s * (t - r)]);
                }
            }
        }
        let values: Vec<f64> = pool.install(|| {
            pts.par_iter()
                .map(|p| kernel_value(&ks, q, p[2], p[0], p[1], &kopts).map(f64::abs))
                .collect::<Result<_>>()
        })?;
        for gamma in [0.0, 0.5] {
            let bound = |t: f64, r: f64, lambda: f64| -> f64 {
                match q {
                    KernelQuantity::Light { j_offset: 0, .. } => {
                        r.powf(mf + gamma - 0.5) * lambda.powf(-mf - gamma) * (lambda - t + r).powf(-0.5)
                    }
                    KernelQuantity::Light { alpha, .. } => {
                        r.powf(mf + gamma + 0.5 - alpha as f64) * lambda.powf(-mf - gamma + 1.0) * (lambda - t + r).powf(-0.5)
                    }
                    KernelQuantity::Tilde { j_offset: 0, .. } => {
                        r.powf(mf + gamma - 0.5) * (t - r).powf(-mf - gamma) * (t - r - lambda).powf(-0.5)
                    }
                    KernelQuantity::Tilde { alpha, .. } => {
                        r.powf(mf + gamma + 0.5 - alpha as f64) * (t - r).powf(-mf - gamma + 1.0) * (t - r - lambda).powf(-0.5)
                    }
                    KernelQuantity::TildeLambda { j, alpha } => {
                        r.powf(2.0 * mf - j as f64 + gamma - 0.5 - alpha as f64)
                            * (t - r).powf(-(j as f64) - gamma)
                            * (t - r - lambda).powf(-1.5)
                    }
                }
            };
            let samples: Vec<Sample> = pts
                .iter()
                .zip(&values)
                .map(|(p, &v)| Sample {
                    at: p.clone(),
                    base: p[0] + p[1] <= 0.5 * ext * (1.0 + 1e-12),
                    value: v / bound(p[0], p[1], p[2]),
                })
                .collect();
            reports.push(make_report(
                format!("{name} / bound, m={m}, gamma={gamma}"),
                format!(
                    "{} with lambda at fractions {:?} of its range",
                    lattice_descriptor(ext, &HarnessOptions {
                        diagonal_per_decade: opts.per_decade,
                        ..opts.clone()
                    }),
                    lambda_fractions()
                ),
                &samples,
                opts.threshold,
            ));
        }
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// Full harness

/// Outcome of a deliberately violated hypothesis.
#[derive(Debug, Clone, Serialize)]
pub struct NegativeControl {
    pub name: String,
    /// How the designated failure showed up.
    pub outcome: String,
    pub reports: Vec<EstimateReport>,
    /// True when the designated failure occurred.
    pub failed_as_designed: bool,
}

/// Every report for one admissible configuration.
#[derive(Debug, Clone, Serialize)]
pub struct HarnessSummary {
    pub params: ModelParams,
    pub q: f64,
    pub q_regime: QRegime,
    pub reports: Vec<EstimateReport>,
    pub notices: Vec<String>,
    pub negative_controls: Vec<NegativeControl>,
    pub all_pass: bool,
}

/// Run the convolution bound, the one-dimensional lemmas, the four-integral
/// proposition for both gammas and the kernel bounds.
pub fn run_all(params: &ModelParams, opts: &HarnessOptions) -> Result<(Vec<EstimateReport>, Vec<String>)> {
    let mut reports = Vec::new();
    reports.push(verify_convolution_bound(2.0, 0.0, opts)?);
    reports.push(verify_convolution_bound(1.5, 1.5, opts)?);
    reports.push(verify_lemma_41(params, opts)?);
    let (r, notices) = verify_lemmas_42_to_45(params, opts)?;
    reports.extend(r);
    for gamma in [0.0, 0.5] {
        reports.extend(verify_ijpq(params, gamma, opts)?);
    }
    reports.extend(verify_kernel_bounds(params.m, opts)?);
    Ok((reports, notices))
}

/// Amount by which the negative control pushes kappa past kappa2.
pub const KAPPA_OVERSHOOT: f64 = 0.25;

/// The three deliberate hypothesis violations.
pub fn negative_controls(params: &ModelParams, opts: &HarnessOptions) -> Result<Vec<NegativeControl>> {
    let mut out = Vec::new();

    let (a, b) = (0.4, 0.4);
    let gated = verify_convolution_bound(a, b, opts);
    let trunc = truncated_convolution_report(a, b, opts)?;
    out.push(NegativeControl {
        name: format!("a + b <= 1 (a={a}, b={b})"),
        outcome: format!(
            "{}; truncated sup moves by {:.3}",
            match &gated {
                Err(e) => format!("rejected: {e}"),
                Ok(_) => "accepted".into(),
            },
            trunc.stability
        ),
        failed_as_designed: gated.is_err() && !trunc.pass,
        reports: vec![trunc],
    });

    let w = params.window()?;
    let bad = ModelParams {
        kappa: w.kappa2 + KAPPA_OVERSHOOT,
        ..*params
    };
    let loose = HarnessOptions {
        enforce_hypotheses: false,
        ..opts.clone()
    };
    let rep = verify_lemma_41(&bad, &loose)?;
    out.push(NegativeControl {
        name: format!("kappa > kappa2 (kappa = {})", bad.kappa),
        outcome: format!("G(y) <y>^kappa sup moves by {:.3}", rep.stability),
        failed_as_designed: !rep.pass,
        reports: vec![rep],
    });

    let pf = fujita_exponent(params.mu)?;
    let bad = ModelParams {
        p: pf.max(params.p),
        ..*params
    };
    let gated = verify_ijpq(&bad, 0.0, opts);
    out.push(NegativeControl {
        name: format!("p >= p_Fuj(mu) (p = {})", bad.p),
        outcome: match &gated {
            Err(e) => format!("rejected: {e}"),
            Ok(_) => "accepted".into(),
        },
        failed_as_designed: matches!(gated, Err(Error::Hypothesis(_))),
        reports: Vec::new(),
    });
    Ok(out)
}

/// [`run_all`] plus the negative controls.
pub fn run_harness(params: &ModelParams, opts: &HarnessOptions) -> Result<HarnessSummary> {
    let (reports, notices) = run_all(params, opts)?;
    let negative_controls = negative_controls(params, opts)?;
    let all_pass = reports.iter().all(|r| r.pass) && negative_controls.iter().all(|c| c.failed_as_designed);
    Ok(HarnessSummary {
        params: *params,
        q: params.q(),
        q_regime: q_regime(params.q()),
        reports,
        notices,
        negative_controls,
        all_pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> HarnessOptions {
        HarnessOptions {
            y_extent: 100.0,
            lattice_extent: 20.0,
            kernel_extent: 10.0,
            per_decade: 2,
            diagonal_per_decade: 4,
            ..HarnessOptions::default()
        }
    }

    fn params() -> ModelParams {
        ModelParams::new(4, 2.0, 1.72, 0.6, 0.0).unwrap()
    }

    #[test]
    fn convolution_closed_form() {
        let q = QuadOptions::new(1e-15, 1e-10);
        for y in [0.0, 3.0, -50.0, 1e3] {
            let v = convolution_integral(2.0, 0.0, y, &q).unwrap();
            assert!((v - 2.0).abs() < 1e-5, "{v}");
        }
        assert!(matches!(verify_convolution_bound(0.4, 0.4, &quick()), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn regime_boundaries() {
        assert_eq!(q_regime(0.5), QRegime::High);
        assert_eq!(q_regime(0.0), QRegime::Middle);
        assert_eq!(q_regime(0.4999), QRegime::Middle);
        assert_eq!(q_regime(-0.5), QRegime::Low);
        assert_eq!(q_regime(-0.0001), QRegime::Low);
        assert_eq!(q_regime(-0.51), QRegime::Outside);
        assert!((params().q() - 0.08).abs() < 1e-12);
        assert_eq!(q_regime(params().q()), QRegime::Middle);
    }

    #[test]
    fn degenerate_ranges_vanish() {
        let p = params();
        let q = QuadOptions::default();
        assert_eq!(sqrt_lemma_integral(&p, QRegime::Middle, 0.0, &q).unwrap(), 0.0);
        assert_eq!(k_integral(&p, 0.0, &q).unwrap(), 0.0);
        let ij = Ijpq { params: &p, gamma: 0.0, opts: &q };
        assert_eq!(ij.j(1.0, 2.0).unwrap(), 0.0);
        assert_eq!(ij.p(1.0, 2.0).unwrap(), 0.0);
        assert_eq!(ij.i(0.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn g_at_zero_is_convolution() {
        let p = params();
        let q = QuadOptions::new(1e-15, 1e-10);
        let g = g_integral(&p, 0.0, &q).unwrap();
        let c = convolution_integral(p.p * p.kappa, p.q() + p.time_decay(), 0.0, &q).unwrap();
        assert!((g - c).abs() < 1e-12 * c);
    }

    #[test]
    fn sqrt_substitution_matches_direct() {
        let p = params();
        let q = QuadOptions::new(1e-15, 1e-11);
        let y = 7.0;
        let v = sqrt_lemma_integral(&p, QRegime::Middle, y, &q).unwrap();
        let ex = -p.kappa * p.p - p.time_decay() + 0.5;
        // Direct form with x + y = u^2 undone by a graded map near the singular end.
        let d = crate::quadrature::integrate_graded(
            |x: f64| {
                let u = x + y;
                if u > 0.0 {
                    bracket(x).powf(ex) * bracket(u).powf(-p.q()) / u.sqrt()
                } else {
                    0.0
                }
            },
            -y,
            -0.5 * y,
            true,
            false,
            &QuadOptions::new(1e-14, 1e-9),
        )
        .unwrap()
        .value;
        assert!((v - d).abs() < 1e-7 * d, "{v} {d}");
    }

    #[test]
    fn lattice_is_nested() {
        let small = probe_lattice(50.0, 4, 16);
        let big = probe_lattice(100.0, 4, 16);
        for p in &small {
            assert!(big.iter().any(|q| (q.0 - p.0).abs() < 1e-12 && (q.1 - p.1).abs() < 1e-12));
        }
        assert!(big.iter().all(|&(t, r)| r > 0.0 && t + r <= 100.0 + 1e-9));
    }

    #[test]
    fn hypothesis_gates_name_conditions() {
        let bad = ModelParams::new(4, 2.0, 2.0, 0.6, 0.0).unwrap();
        let e = verify_ijpq(&bad, 0.0, &quick()).unwrap_err().to_string();
        assert!(e.contains("p_Fuj(mu)"), "{e}");
        let e = verify_ijpq(&params(), 0.3, &quick()).unwrap_err().to_string();
        assert!(e.contains("gamma"));
    }

    #[test]
    fn quick_harness_runs() {
        let (reports, notices) = run_all(&params(), &quick()).unwrap();
        assert_eq!(notices.len(), 2);
        assert!(reports.iter().all(|r| r.weighted_sup.is_finite()));
    }
}
