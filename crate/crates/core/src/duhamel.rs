//! The Duhamel operator `L`, weighted norms and gauges, and Picard iteration
//! for `v = v0 + L v`.
//!
//! Two routes evaluate `L`:
//!
//! * [`DuhamelOperator`] integrates pointwise over `tau` with the propagator
//!   applied to the source slice `lambda -> |v(tau, lambda)|^p`.
//! * [`DuhamelStencil`] discretizes `L` on a [`GridSpec`] as a dense linear map
//!   acting on the normalized source values at the grid nodes. Its quadrature
//!   meshes are chosen once, adaptively on the source-free integrand, and
//!   reused across Picard iterates.
//!
//! Grid fields store `v / w_v` and `d_r v / w_d` with the smooth weights of
//! [`value_weight`] and [`derivative_weight`]. Outside the grid box the
//! normalized values are held constant.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exponents::ModelParams;
use crate::field::{bracket, phi_kappa, RadialField, SampleGrid, WeightedSup};
use crate::kernel::{eval_kj, eval_kj_boundary_dr, eval_ktildej};
use crate::profile::RadialProfile;
use crate::propagator::{data_family, v0, Propagator, PropagatorOptions};
use crate::quadrature::{integrate_graded, integrate_graded_collect, Node, QuadOptions};

/// Smooth comparable of `r^{1-m} <r>^{-1} phi_kappa(t, r)`.
pub fn value_weight(m: u32, kappa: f64, t: f64, r: f64) -> f64 {
    r.powi(1 - m as i32) * (1.0 + r * r).powf(-0.5) * derivative_tail(kappa, t, r)
}

/// Smooth comparable of `r^{-m} phi_kappa(t, r)`.
pub fn derivative_weight(m: u32, kappa: f64, t: f64, r: f64) -> f64 {
    r.powi(-(m as i32)) * derivative_tail(kappa, t, r)
}

fn derivative_tail(kappa: f64, t: f64, r: f64) -> f64 {
    let a = t + r;
    let b = t - r;
    (1.0 + a * a).powf(-0.25) * (1.0 + b * b).powf(-0.5 * kappa)
}

/// `d/dr log value_weight(t, r)`.
fn value_weight_log_dr(m: u32, kappa: f64, t: f64, r: f64) -> f64 {
    let a = t + r;
    let b = t - r;
    (1.0 - m as f64) / r - r / (1.0 + r * r) - 0.5 * a / (1.0 + a * a) + kappa * b / (1.0 + b * b)
}

/// Thread pool honouring `SCALEWAVE_THREADS`.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("SCALEWAVE_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if n > 0 {
            b = b.num_threads(n);
        }
    }
    b.build().map_err(|e| Error::Domain(format!("thread pool: {e}")))
}

// ---------------------------------------------------------------------------
// Grid and interpolation

/// Catmull-Rom weights on an equispaced axis and their derivatives with
/// respect to the physical coordinate.
#[derive(Debug, Clone, Copy, Default)]
pub struct AxisWeights {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub dw: [f64; 4],
}

impl AxisWeights {
    fn single(i: usize) -> Self {
        Self {
            idx: [i, i, i, i],
            w: [1.0, 0.0, 0.0, 0.0],
            dw: [0.0; 4],
        }
    }

    pub fn eval(&self, data: impl Fn(usize) -> f64) -> (f64, f64) {
        let mut v = 0.0;
        let mut d = 0.0;
        for k in 0..4 {
            if self.w[k] != 0.0 || self.dw[k] != 0.0 {
                let y = data(self.idx[k]);
                v += self.w[k] * y;
                d += self.dw[k] * y;
            }
        }
        (v, d)
    }
}

fn catmull_rom(u: f64) -> ([f64; 4], [f64; 4]) {
    let u2 = u * u;
    let u3 = u2 * u;
    (
        [
            0.5 * (-u3 + 2.0 * u2 - u),
            0.5 * (3.0 * u3 - 5.0 * u2 + 2.0),
            0.5 * (-3.0 * u3 + 4.0 * u2 + u),
            0.5 * (u3 - u2),
        ],
        [
            0.5 * (-3.0 * u2 + 4.0 * u - 1.0),
            0.5 * (9.0 * u2 - 10.0 * u),
            0.5 * (-9.0 * u2 + 8.0 * u + 1.0),
            0.5 * (3.0 * u2 - 2.0 * u),
        ],
    )
}

/// Equispaced axis in `x = ln(1 + t)` (shifted) or `x = ln r`.
#[derive(Debug, Clone, Serialize)]
pub struct Axis {
    shifted: bool,
    x0: f64,
    dx: f64,
    pub nodes: Vec<f64>,
}

impl Axis {
    fn new(lo: f64, hi: f64, n: usize, shifted: bool) -> Self {
        let map = |v: f64| if shifted { v.ln_1p() } else { v.ln() };
        let (x0, x1) = (map(lo), map(hi));
        let dx = (x1 - x0) / (n - 1) as f64;
        let nodes = (0..n)
            .map(|i| {
                if i == 0 {
                    lo
                } else if i == n - 1 {
                    hi
                } else {
                    let x = x0 + dx * i as f64;
                    if shifted {
                        x.exp_m1()
                    } else {
                        x.exp()
                    }
                }
            })
            .collect();
        Self { shifted, x0, dx, nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Interpolation weights at physical coordinate `v`; constant outside.
    pub fn weights(&self, v: f64) -> AxisWeights {
        let n = self.nodes.len();
        if v <= self.nodes[0] {
            return AxisWeights::single(0);
        }
        if v >= self.nodes[n - 1] {
            return AxisWeights::single(n - 1);
        }
        let (x, dxdv) = if self.shifted { (v.ln_1p(), 1.0 / (1.0 + v)) } else { (v.ln(), 1.0 / v) };
        let s = (x - self.x0) / self.dx;
        let i = (s.floor() as isize).clamp(0, n as isize - 2) as usize;
        let u = (s - i as f64).clamp(0.0, 1.0);
        let (mut w, mut dw) = catmull_rom(u);
        let scale = dxdv / self.dx;
        for d in dw.iter_mut() {
            *d *= scale;
        }
        let mut idx = [0usize; 4];
        // Ghost nodes by linear extrapolation: p_{-1} = 2 p_0 - p_1.
        if i == 0 {
            idx[0] = 0;
            for arr in [&mut w, &mut dw] {
                let g = arr[0];
                arr[1] += 2.0 * g;
                arr[2] -= g;
                arr[0] = 0.0;
            }
        } else {
            idx[0] = i - 1;
        }
        idx[1] = i;
        idx[2] = i + 1;
        if i + 2 > n - 1 {
            idx[3] = n - 1;
            for arr in [&mut w, &mut dw] {
                let g = arr[3];
                arr[2] += 2.0 * g;
                arr[1] -= g;
                arr[3] = 0.0;
            }
        } else {
            idx[3] = i + 2;
        }
        AxisWeights { idx, w, dw }
    }
}

/// Tensor grid dimensions and box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct GridConfig {
    pub nt: usize,
    pub nr: usize,
    pub t_max: f64,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            nt: 64,
            nr: 64,
            t_max: 32.0,
            r_min: 1e-3,
            r_max: 32.0,
        }
    }
}

/// Tensor grid: `ln(1 + t)` equispaced on `[0, t_max]`, `ln r` equispaced on
/// `[r_min, r_max]`.
#[derive(Debug, Clone, Serialize)]
pub struct GridSpec {
    pub config: GridConfig,
    pub t: Axis,
    pub r: Axis,
}

impl GridSpec {
    pub fn new(config: GridConfig) -> Result<Self> {
        let GridConfig { nt, nr, t_max, r_min, r_max } = config;
        if nt < 4 || nr < 4 {
            return Err(Error::Domain(format!("grid needs at least 4x4 nodes, got {nt}x{nr}")));
        }
        if !(t_max > 0.0) || !(r_min > 0.0) || !(r_max > r_min) || !t_max.is_finite() || !r_max.is_finite() {
            return Err(Error::Domain(format!(
                "grid box needs t_max > 0 and 0 < r_min < r_max, got t_max={t_max}, r=[{r_min}, {r_max}]"
            )));
        }
        Ok(Self {
            config,
            t: Axis::new(0.0, t_max, nt, true),
            r: Axis::new(r_min, r_max, nr, false),
        })
    }

    pub fn len(&self) -> usize {
        self.t.len() * self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.r.len() + j
    }

    pub fn node(&self, k: usize) -> (f64, f64) {
        let nr = self.r.len();
        (self.t.nodes[k / nr], self.r.nodes[k % nr])
    }

    pub fn contains(&self, t: f64, r: f64) -> bool {
        t <= self.config.t_max && r >= self.config.r_min && r <= self.config.r_max
    }

    /// `(value, d/dt, d/dr)` of the tensor interpolant of node data.
    pub fn interpolate(&self, data: &[f64], t: f64, r: f64) -> (f64, f64, f64) {
        let wt = self.t.weights(t);
        let wr = self.r.weights(r);
        let nr = self.r.len();
        let mut v = 0.0;
        let mut dt = 0.0;
        let mut dr = 0.0;
        for a in 0..4 {
            if wt.w[a] == 0.0 && wt.dw[a] == 0.0 {
                continue;
            }
            let row = wt.idx[a] * nr;
            let (rv, rd) = wr.eval(|j| data[row + j]);
            v += wt.w[a] * rv;
            dr += wt.w[a] * rd;
            dt += wt.dw[a] * rv;
        }
        (v, dt, dr)
    }

    /// Grid nodes plus interpolated points on the diagonal `t = r`.
    pub fn sample_grid(&self) -> SampleGrid {
        let mut points: Vec<(f64, f64)> = (0..self.len()).map(|k| self.node(k)).collect();
        for &r in &self.r.nodes {
            if r <= self.config.t_max {
                points.push((r, r));
            }
        }
        SampleGrid { points }
    }
}

/// A field stored on a [`GridSpec`] as normalized values and r-derivatives.
#[derive(Debug, Clone)]
pub struct GridField {
    pub spec: Arc<GridSpec>,
    pub m: u32,
    pub kappa: f64,
    /// `v / value_weight` at the nodes.
    pub psi: Vec<f64>,
    /// `d_r v / derivative_weight` at the nodes.
    pub chi: Vec<f64>,
}

impl GridField {
    pub fn zeros(spec: Arc<GridSpec>, m: u32, kappa: f64) -> Self {
        let n = spec.len();
        Self {
            spec,
            m,
            kappa,
            psi: vec![0.0; n],
            chi: vec![0.0; n],
        }
    }

    /// Sample a field at every node, in parallel.
    pub fn from_field(spec: Arc<GridSpec>, m: u32, kappa: f64, field: &(dyn RadialField + Sync)) -> Result<Self> {
        let pool = thread_pool()?;
        let vals: Vec<Result<(f64, f64)>> = pool.install(|| {
            (0..spec.len())
                .into_par_iter()
                .map(|k| {
                    let (t, r) = spec.node(k);
                    let v = field.value(t, r)?;
                    let d = field.r_derivative(t, r)?;
                    if !v.is_finite() || !d.is_finite() {
                        return Err(Error::NonFinite { t, r });
                    }
                    Ok((v / value_weight(m, kappa, t, r), d / derivative_weight(m, kappa, t, r)))
                })
                .collect()
        });
        let mut out = Self::zeros(spec, m, kappa);
        for (k, res) in vals.into_iter().enumerate() {
            let (a, b) = res?;
            out.psi[k] = a;
            out.chi[k] = b;
        }
        Ok(out)
    }

    pub fn node_value(&self, k: usize) -> f64 {
        let (t, r) = self.spec.node(k);
        self.psi[k] * value_weight(self.m, self.kappa, t, r)
    }

    pub fn node_derivative(&self, k: usize) -> f64 {
        let (t, r) = self.spec.node(k);
        self.chi[k] * derivative_weight(self.m, self.kappa, t, r)
    }

    /// `self * c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.psi.iter_mut().for_each(|v| *v *= c);
        out.chi.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// `self - other` on the same grid.
    pub fn difference(&self, other: &GridField) -> Self {
        let mut out = self.clone();
        for (a, b) in out.psi.iter_mut().zip(&other.psi) {
            *a -= b;
        }
        for (a, b) in out.chi.iter_mut().zip(&other.chi) {
            *a -= b;
        }
        out
    }

    /// Normalized source values `|psi|^p` at the nodes.
    pub fn normalized_source(&self, p: f64) -> Vec<f64> {
        self.psi.iter().map(|v| v.abs().powf(p)).collect()
    }
}

impl RadialField for GridField {
    fn value(&self, t: f64, r: f64) -> Result<f64> {
        let (v, _, _) = self.spec.interpolate(&self.psi, t, r);
        Ok(v * value_weight(self.m, self.kappa, t, r))
    }
    fn r_derivative(&self, t: f64, r: f64) -> Result<f64> {
        let (v, _, _) = self.spec.interpolate(&self.chi, t, r);
        Ok(v * derivative_weight(self.m, self.kappa, t, r))
    }
}

// ---------------------------------------------------------------------------
// Norms and gauges

/// Sampled X_kappa norm and auxiliary triple norm of a field.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WeightedNormReport {
    pub kappa: f64,
    /// `sup (r^{m-1} <r> |v| + r^m |d_r v|) / phi_kappa`.
    pub norm_xkappa: f64,
    pub norm_argmax: (f64, f64),
    /// `sup r^m |v| / phi_kappa`.
    pub triple_norm: f64,
    pub triple_argmax: (f64, f64),
    /// Probe points outside the grid box, where values come from the tail ansatz.
    pub unverified_points: usize,
}

fn xk_score(m: u32, kappa: f64, t: f64, r: f64, v: f64, dv: f64) -> f64 {
    let mi = m as i32;
    (r.powi(mi - 1) * bracket(r) * v.abs() + r.powi(mi) * dv.abs()) / phi_kappa(t, r, kappa)
}

fn triple_score(m: u32, kappa: f64, t: f64, r: f64, v: f64) -> f64 {
    r.powi(m as i32) * v.abs() / phi_kappa(t, r, kappa)
}

/// Grid-sup estimates of both norms; a lower bound of the true sups.
pub fn norm_xkappa(field: &dyn RadialField, m: u32, kappa: f64, grid: &SampleGrid) -> Result<WeightedNormReport> {
    let mut best = WeightedSup { value: 0.0, at: (f64::NAN, f64::NAN) };
    let mut tri = best;
    for &(t, r) in &grid.points {
        let v = field.value(t, r)?;
        let dv = field.r_derivative(t, r)?;
        if !v.is_finite() || !dv.is_finite() {
            return Err(Error::NonFinite { t, r });
        }
        let s = xk_score(m, kappa, t, r, v, dv);
        if s > best.value || best.at.0.is_nan() {
            best = WeightedSup { value: s, at: (t, r) };
        }
        let s = triple_score(m, kappa, t, r, v);
        if s > tri.value || tri.at.0.is_nan() {
            tri = WeightedSup { value: s, at: (t, r) };
        }
    }
    Ok(WeightedNormReport {
        kappa,
        norm_xkappa: best.value,
        norm_argmax: best.at,
        triple_norm: tri.value,
        triple_argmax: tri.at,
        unverified_points: 0,
    })
}

/// Norms of a grid field over its nodes and the interpolated diagonal.
pub fn grid_norms(field: &GridField) -> WeightedNormReport {
    let spec = &field.spec;
    let mut rep = WeightedNormReport {
        kappa: field.kappa,
        norm_xkappa: 0.0,
        norm_argmax: (f64::NAN, f64::NAN),
        triple_norm: 0.0,
        triple_argmax: (f64::NAN, f64::NAN),
        unverified_points: 0,
    };
    let mut visit = |t: f64, r: f64, v: f64, dv: f64| {
        let s = xk_score(field.m, field.kappa, t, r, v, dv);
        if s > rep.norm_xkappa || rep.norm_argmax.0.is_nan() {
            rep.norm_xkappa = s;
            rep.norm_argmax = (t, r);
        }
        let s = triple_score(field.m, field.kappa, t, r, v);
        if s > rep.triple_norm || rep.triple_argmax.0.is_nan() {
            rep.triple_norm = s;
            rep.triple_argmax = (t, r);
        }
    };
    for k in 0..spec.len() {
        let (t, r) = spec.node(k);
        visit(t, r, field.node_value(k), field.node_derivative(k));
    }
    for &r in &spec.r.nodes {
        if r <= spec.config.t_max {
            let v = field.value(r, r).unwrap_or(f64::NAN);
            let dv = field.r_derivative(r, r).unwrap_or(f64::NAN);
            visit(r, r, v, dv);
        }
    }
    rep
}

/// Sampled `N_0^nu`, `N_1^nu` of `|v|^p`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct NonlinearityGauge {
    pub nu: f64,
    pub n0: f64,
    pub n1: f64,
    pub n1_tilde: f64,
    pub n0_argmax: (f64, f64),
    pub n1_argmax: (f64, f64),
}

/// `N_j^nu(|v|^p) = sup |d_lambda^j (lambda^{2m} |v|^p)| lambda^{-m-nu+j}
/// <lambda>^{q-p/2+3/2+nu-j} phi_kappa^{-p}` over the `(tau, lambda)` grid.
pub fn gauge_n(field: &dyn RadialField, params: &ModelParams, nu: f64, grid: &SampleGrid) -> Result<NonlinearityGauge> {
    let m = params.m as i32;
    let p = params.p;
    let q = params.q();
    let mut g = NonlinearityGauge {
        nu,
        n0: 0.0,
        n1: 0.0,
        n1_tilde: 0.0,
        n0_argmax: (f64::NAN, f64::NAN),
        n1_argmax: (f64::NAN, f64::NAN),
    };
    for &(tau, l) in &grid.points {
        let v = field.value(tau, l)?;
        let dv = field.r_derivative(tau, l)?;
        let av = v.abs();
        let h0 = l.powi(2 * m) * av.powf(p);
        // d/dl (l^{2m} |v|^p) with the exact zero at v = 0.
        let dpow = if av == 0.0 { 0.0 } else { p * av.powf(p - 1.0) * v.signum() * dv };
        let h1 = 2.0 * m as f64 * l.powi(2 * m - 1) * av.powf(p) + l.powi(2 * m) * dpow;
        let phi = phi_kappa(tau, l, params.kappa).powf(-p);
        let base = q - 0.5 * p + 1.5 + nu;
        let s0 = h0 * l.powf(-(m as f64) - nu) * bracket(l).powf(base) * phi;
        let s1 = h1.abs() * l.powf(-(m as f64) - nu + 1.0) * bracket(l).powf(base - 1.0) * phi;
        if !s0.is_finite() || !s1.is_finite() {
            return Err(Error::NonFinite { t: tau, r: l });
        }
        if s0 > g.n0 || g.n0_argmax.0.is_nan() {
            g.n0 = s0;
            g.n0_argmax = (tau, l);
        }
        if s1 > g.n1 || g.n1_argmax.0.is_nan() {
            g.n1 = s1;
            g.n1_argmax = (tau, l);
        }
    }
    g.n1_tilde = g.n0 + g.n1;
    Ok(g)
}

/// `nu = m - (m-1) p`, the gauge index paired with the X_kappa norm.
pub fn gauge_nu(params: &ModelParams) -> f64 {
    params.m as f64 - (params.m as f64 - 1.0) * params.p
}

// ---------------------------------------------------------------------------
// Source models

/// A time-dependent nonnegative source `G(tau, lambda)` with its lambda-derivative.
pub trait SourceModel: Send + Sync {
    /// `(G, d_lambda G)`; errors surface as NaN and abort the quadrature.
    fn eval(&self, tau: f64, lambda: f64) -> (f64, f64);
}

/// `|v|^p` for an arbitrary field.
pub struct PowerSource {
    pub field: Arc<dyn RadialField>,
    pub p: f64,
}

impl SourceModel for PowerSource {
    fn eval(&self, tau: f64, l: f64) -> (f64, f64) {
        let (Ok(v), Ok(dv)) = (self.field.value(tau, l), self.field.r_derivative(tau, l)) else {
            return (f64::NAN, f64::NAN);
        };
        let av = v.abs();
        if av == 0.0 {
            return (0.0, 0.0);
        }
        (av.powf(self.p), self.p * av.powf(self.p - 1.0) * v.signum() * dv)
    }
}

/// `value_weight^p * I(ghat)` with `I` the grid interpolant of normalized
/// source values; the source model seen by [`DuhamelStencil`].
pub struct GridSource {
    pub spec: Arc<GridSpec>,
    pub m: u32,
    pub kappa: f64,
    pub p: f64,
    pub ghat: Vec<f64>,
}

impl GridSource {
    pub fn from_field(field: &GridField, p: f64) -> Self {
        Self {
            spec: field.spec.clone(),
            m: field.m,
            kappa: field.kappa,
            p,
            ghat: field.normalized_source(p),
        }
    }
}

impl SourceModel for GridSource {
    fn eval(&self, tau: f64, l: f64) -> (f64, f64) {
        let (g, _, dg) = self.spec.interpolate(&self.ghat, tau, l);
        let wp = value_weight(self.m, self.kappa, tau, l).powf(self.p);
        let dlog = self.p * value_weight_log_dr(self.m, self.kappa, tau, l);
        (wp * g, wp * (dg + dlog * g))
    }
}

/// A fixed-time slice of a source as a radial profile.
struct Slice<'a> {
    source: &'a dyn SourceModel,
    tau: f64,
}

impl std::fmt::Debug for Slice<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Slice(tau={})", self.tau)
    }
}

impl RadialProfile for Slice<'_> {
    fn derivative(&self, r: f64, order: u8) -> f64 {
        let (g, dg) = self.source.eval(self.tau, r);
        match order {
            0 => g,
            1 => dg,
            _ => panic!("source slices provide derivatives up to order 1"),
        }
    }
    fn origin_exponent(&self) -> f64 {
        f64::NAN
    }
    fn tail_exponent(&self) -> f64 {
        f64::NAN
    }
}

// ---------------------------------------------------------------------------
// Pointwise operator

/// Pointwise evaluation of `Lv` through the propagator.
#[derive(Debug, Clone)]
pub struct DuhamelOperator {
    pub propagator: Arc<Propagator>,
    pub p: f64,
    /// Power `mu (p-1)/2` of the time weight.
    pub time_decay: f64,
    pub tau_opts: QuadOptions,
}

impl DuhamelOperator {
    /// Operator with moderately tight default tolerances.
    pub fn new(params: &ModelParams) -> Result<Self> {
        let popts = PropagatorOptions {
            kernel: QuadOptions::new(1e-300, 1e-9),
            outer: QuadOptions::new(1e-300, 1e-7),
            diagonal_band: 1e-6,
        };
        Self::with_options(params, popts, QuadOptions::new(1e-300, 1e-6))
    }

    /// Operator with explicit propagator and tau tolerances.
    pub fn with_options(params: &ModelParams, popts: PropagatorOptions, tau_opts: QuadOptions) -> Result<Self> {
        Ok(Self {
            propagator: Arc::new(Propagator::with_options(params.n, popts)?),
            p: params.p,
            time_decay: params.time_decay(),
            tau_opts,
        })
    }

    fn tau_integral<F>(&self, t: f64, r: f64, what: &str, mut f: F) -> Result<f64>
    where
        F: FnMut(f64, f64) -> Result<f64>,
    {
        if t == 0.0 {
            return Ok(0.0);
        }
        let mut failure: Option<Error> = None;
        let mut g = |tau: f64| {
            if failure.is_some() {
                return 0.0;
            }
            let s = t - tau;
            if s <= 0.0 || tau < 0.0 {
                return 0.0;
            }
            match f(tau, s) {
                Ok(v) => bracket(tau).powf(-self.time_decay) * v,
                Err(e) => {
                    failure = Some(e);
                    0.0
                }
            }
        };
        let total = if t > r {
            let c = t - r;
            let a = integrate_graded(&mut g, 0.0, c, false, true, &self.tau_opts);
            let b = integrate_graded(&mut g, c, t, true, false, &self.tau_opts);
            a.and_then(|a| b.map(|b| a.value + b.value))
        } else {
            integrate_graded(&mut g, 0.0, t, false, false, &self.tau_opts).map(|e| e.value)
        };
        if let Some(e) = failure {
            return Err(e.context(format!("{what}: tau-panel in [0, {t}]")));
        }
        let total = total.map_err(|e| e.context(format!("{what}: tau in [0, {t}]")))?;
        Ok(total / self.propagator.consts.c_n)
    }

    /// `Lv(t, r)` for the source `G`, via `W1 + W2`.
    pub fn value(&self, source: &dyn SourceModel, t: f64, r: f64) -> Result<f64> {
        self.tau_integral(t, r, "Lv", |tau, s| {
            let slice = Slice { source, tau };
            self.propagator.theta_w12(&slice, s, r)
        })
    }

    /// `d_r Lv(t, r)` for the source `G`, via `W5 + W6`.
    pub fn r_derivative(&self, source: &dyn SourceModel, t: f64, r: f64) -> Result<f64> {
        self.tau_integral(t, r, "d_r Lv", |tau, s| {
            if s == r {
                return Ok(0.0);
            }
            let slice = Slice { source, tau };
            self.propagator.theta_r_derivative(&slice, s, r)
        })
    }

    /// Raw `(W1, W2, W3, W4)` of the source slice at time `tau`, evaluated at
    /// `(t - tau, r)`.
    pub fn w_decomposition(&self, source: &dyn SourceModel, tau: f64, t: f64, r: f64) -> Result<[f64; 4]> {
        let slice = Slice { source, tau };
        let s = t - tau;
        let (w1, w2) = self.propagator.w12(&slice, s, r)?;
        let (w3, w4) = self.propagator.w34(&slice, s, r)?;
        Ok([w1, w2, w3, w4])
    }
}

/// `Lv` as a lazily evaluated field.
pub struct AppliedField {
    pub operator: Arc<DuhamelOperator>,
    pub source: Arc<dyn SourceModel>,
}

impl RadialField for AppliedField {
    fn value(&self, t: f64, r: f64) -> Result<f64> {
        self.operator.value(self.source.as_ref(), t, r)
    }
    fn r_derivative(&self, t: f64, r: f64) -> Result<f64> {
        self.operator.r_derivative(self.source.as_ref(), t, r)
    }
}

/// `L` applied to a field, with the nonlinearity `|v|^p`.
pub fn apply_l(field: Arc<dyn RadialField>, operator: Arc<DuhamelOperator>) -> AppliedField {
    let p = operator.p;
    AppliedField {
        operator,
        source: Arc::new(PowerSource { field, p }),
    }
}

// ---------------------------------------------------------------------------
// Stencil operator

/// Tolerances for the stencil quadratures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct StencilOptions {
    pub kernel_rel: f64,
    pub lambda_rel: f64,
    pub tau_rel: f64,
}

impl Default for StencilOptions {
    fn default() -> Self {
        Self {
            kernel_rel: 1e-8,
            lambda_rel: 1e-4,
            tau_rel: 1e-4,
        }
    }
}

/// Dense discretization of `L` on a grid: maps normalized source values
/// `|psi|^p` to normalized `Lv` and `d_r Lv` at the nodes.
#[derive(Debug, Clone)]
pub struct DuhamelStencil {
    pub spec: Arc<GridSpec>,
    pub m: u32,
    pub kappa: f64,
    pub p: f64,
    value_rows: Vec<f64>,
    derivative_rows: Vec<f64>,
}

struct RowBuilder<'a> {
    spec: &'a GridSpec,
    prop: &'a Propagator,
    m: u32,
    kappa: f64,
    p: f64,
    time_decay: f64,
    kernel: QuadOptions,
    lambda: QuadOptions,
    tau: QuadOptions,
}

/// Per-tau accumulations over the r-index of the source grid.
struct TauPayload {
    value: Vec<f64>,
    deriv: Vec<f64>,
}

impl<'a> RowBuilder<'a> {
    fn new(params: &ModelParams, spec: &'a GridSpec, prop: &'a Propagator, opts: StencilOptions) -> Self {
        Self {
            spec,
            prop,
            m: params.m,
            kappa: params.kappa,
            p: params.p,
            time_decay: params.time_decay(),
            kernel: QuadOptions::new(1e-300, opts.kernel_rel),
            lambda: QuadOptions::new(1e-300, opts.lambda_rel),
            tau: QuadOptions::new(1e-300, opts.tau_rel),
        }
    }

    fn wp(&self, tau: f64, l: f64) -> f64 {
        value_weight(self.m, self.kappa, tau, l).powf(self.p)
    }

    /// Collect lambda nodes of `int_a^b proxy` where `kern` gives the kernel.
    fn lambda_nodes<K>(&self, a: f64, b: f64, left: bool, right: bool, proxy_w: impl Fn(f64) -> f64, kern: K) -> Result<Vec<Node<f64>>>
    where
        K: Fn(f64) -> Result<f64>,
    {
        if !(b > a) {
            return Ok(Vec::new());
        }
        let mut failure: Option<Error> = None;
        let res = integrate_graded_collect(
            |l: f64| {
                if failure.is_some() || (left && l <= a) || (right && l >= b) {
                    return (0.0, 0.0);
                }
                match kern(l) {
                    Ok(k) => ((proxy_w(l) * k).abs(), k),
                    Err(e) => {
                        failure = Some(e);
                        (0.0, 0.0)
                    }
                }
            },
            a,
            b,
            left,
            right,
            &self.lambda,
        );
        if let Some(e) = failure {
            return Err(e.context(format!("lambda-panel [{a:.6e}, {b:.6e}]")));
        }
        let (_, nodes) = res.map_err(|e| e.context(format!("lambda-panel [{a:.6e}, {b:.6e}]")))?;
        Ok(nodes)
    }

    fn inner(&self, tau: f64, s: f64, r: f64) -> Result<(f64, TauPayload)> {
        let nr = self.spec.r.len();
        let mut out = TauPayload {
            value: vec![0.0; nr],
            deriv: vec![0.0; nr],
        };
        if s <= 0.0 {
            return Ok((0.0, out));
        }
        let m = self.m as i32;
        let km = self.prop.kernel_m();
        let km1 = self.prop.kernel_m_minus_1();
        let dkm1 = self.prop.kernel_dr_m_minus_1();
        let o = &self.kernel;
        let lo = (s - r).abs();
        let hi = s + r;
        let outside = s > r;
        let mut proxy = 0.0;

        // W1, W2: value.
        let vw = |l: f64| l.powi(2 * m + 1) * self.wp(tau, l);
        let mut add_value = |nodes: Vec<Node<f64>>, proxy: &mut f64| {
            for n in nodes {
                let c = n.weight * vw(n.x) * n.payload;
                *proxy += c.abs();
                let w = self.spec.r.weights(n.x);
                for k in 0..4 {
                    out.value[w.idx[k]] += c * w.w[k];
                }
            }
        };
        add_value(self.lambda_nodes(lo, hi, outside, false, vw, |l| eval_kj(km, l, s, r, o))?, &mut proxy);
        if outside {
            let c = s - r;
            add_value(
                self.lambda_nodes(0.0, c, false, true, vw, |l| if l < c { eval_ktildej(km, l, s, r, o) } else { Ok(0.0) })?,
                &mut proxy,
            );
        }

        // W5, W6: derivative, with d_l (l^{2m} G) split into the weight part
        // and the interpolant part.
        let dy = (self.spec.r.nodes[1] / self.spec.r.nodes[0]).ln();
        let dens = |l: f64| {
            let wp = self.wp(tau, l);
            let l2m = l.powi(2 * m);
            let d = l2m * wp * (2.0 * m as f64 / l + self.p * value_weight_log_dr(self.m, self.kappa, tau, l));
            (d, l2m * wp)
        };
        let proxy_d = |l: f64| {
            let (d, b) = dens(l);
            d.abs() + b / (l * dy)
        };
        let mut dproxy = 0.0;
        let mut add_deriv = |nodes: Vec<Node<f64>>, dproxy: &mut f64| {
            for n in nodes {
                let (d, b) = dens(n.x);
                let ca = n.weight * d * n.payload;
                let cb = n.weight * b * n.payload;
                *dproxy += ca.abs() + (cb / (n.x * dy)).abs();
                let w = self.spec.r.weights(n.x);
                for k in 0..4 {
                    out.deriv[w.idx[k]] += ca * w.w[k] + cb * w.dw[k];
                }
            }
        };
        add_deriv(self.lambda_nodes(lo, hi, outside, false, proxy_d, |l| eval_kj(dkm1, l, s, r, o))?, &mut dproxy);
        if outside {
            let c = s - r;
            add_deriv(
                self.lambda_nodes(0.0, c, false, true, proxy_d, |l| if l < c { eval_ktildej(dkm1, l, s, r, o) } else { Ok(0.0) })?,
                &mut dproxy,
            );
        } else if s < r {
            let l = r - s;
            let kb = eval_kj_boundary_dr(km1, s, r, o)?;
            let c = l.powi(2 * m) * self.wp(tau, l) * kb;
            dproxy += c.abs();
            let w = self.spec.r.weights(l);
            for k in 0..4 {
                out.deriv[w.idx[k]] += c * w.w[k];
            }
        }
        Ok((proxy + 0.5 * r * dproxy, out))
    }

    fn rows(&self, t: f64, r: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.spec.len();
        let nr = self.spec.r.len();
        let mut vrow = vec![0.0; n];
        let mut drow = vec![0.0; n];
        if t == 0.0 {
            return Ok((vrow, drow));
        }
        let failure: std::cell::RefCell<Option<Error>> = std::cell::RefCell::new(None);
        let f = |tau: f64| -> (f64, Option<TauPayload>) {
            let s = t - tau;
            if failure.borrow().is_some() || s <= 0.0 || s == r {
                return (0.0, None);
            }
            match self.inner(tau, s, r) {
                Ok((proxy, pl)) => (bracket(tau).powf(-self.time_decay) * proxy, Some(pl)),
                Err(e) => {
                    *failure.borrow_mut() = Some(e.context(format!("tau={tau:.6e}")));
                    (0.0, None)
                }
            }
        };
        let mut nodes = Vec::new();
        let pieces: Vec<(f64, f64, bool, bool)> = if t > r {
            vec![(0.0, t - r, false, true), (t - r, t, true, false)]
        } else {
            vec![(0.0, t, false, false)]
        };
        for (a, b, l, rr) in pieces {
            let res = integrate_graded_collect(f, a, b, l, rr, &self.tau);
            if let Some(e) = failure.borrow_mut().take() {
                return Err(e.context(format!("tau-panel [{a:.6e}, {b:.6e}]")));
            }
            let (_, ns) = res.map_err(|e| e.context(format!("tau-panel [{a:.6e}, {b:.6e}]")))?;
            nodes.extend(ns);
        }
        for node in nodes {
            let Some(pl) = node.payload else { continue };
            let c = node.weight * bracket(node.x).powf(-self.time_decay);
            let wt = self.spec.t.weights(node.x);
            for k in 0..4 {
                let cw = c * wt.w[k];
                if cw == 0.0 {
                    continue;
                }
                let base = wt.idx[k] * nr;
                for j in 0..nr {
                    vrow[base + j] += cw * pl.value[j];
                    drow[base + j] += cw * pl.deriv[j];
                }
            }
        }
        let m = self.m as i32;
        let scale = r.powi(-2 * m) / self.prop.consts.c_n;
        let wv = value_weight(self.m, self.kappa, t, r);
        let wd = derivative_weight(self.m, self.kappa, t, r);
        for k in 0..n {
            let v = scale * vrow[k];
            let d = 0.5 * scale * drow[k] - 2.0 * m as f64 * v / r;
            vrow[k] = v / wv;
            drow[k] = d / wd;
        }
        Ok((vrow, drow))
    }
}

impl DuhamelStencil {
    /// Build the stencil for `params` on `spec`, rows in parallel.
    pub fn build(params: &ModelParams, spec: Arc<GridSpec>, opts: StencilOptions) -> Result<Self> {
        let prop = Propagator::new(params.n)?;
        let builder = RowBuilder::new(params, &spec, &prop, opts);
        let n = spec.len();
        let pool = thread_pool()?;
        let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = pool.install(|| {
            (0..n)
                .into_par_iter()
                .map(|k| {
                    let (t, r) = spec.node(k);
                    builder.rows(t, r).map_err(|e| e.context(format!("stencil row at t={t:.6e}, r={r:.6e}")))
                })
                .collect()
        });
        let mut value_rows = Vec::with_capacity(n * n);
        let mut derivative_rows = Vec::with_capacity(n * n);
        for row in rows {
            let (v, d) = row?;
            value_rows.extend(v);
            derivative_rows.extend(d);
        }
        if value_rows.iter().chain(derivative_rows.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Quadrature {
                context: "stencil has non-finite entries".into(),
                value: f64::NAN,
                error: f64::NAN,
            });
        }
        Ok(Self {
            spec,
            m: params.m,
            kappa: params.kappa,
            p: params.p,
            value_rows,
            derivative_rows,
        })
    }

    /// Normalized value and derivative rows for a single output point.
    pub fn rows_at(params: &ModelParams, spec: &GridSpec, opts: StencilOptions, t: f64, r: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let prop = Propagator::new(params.n)?;
        RowBuilder::new(params, spec, &prop, opts).rows(t, r)
    }

    /// Normalized `(Lv, d_r Lv)` at the nodes for normalized source values.
    pub fn apply_normalized(&self, ghat: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.spec.len();
        assert_eq!(ghat.len(), n, "source length must match the grid");
        let dot = |rows: &[f64], k: usize| -> f64 { rows[k * n..(k + 1) * n].iter().zip(ghat).map(|(a, b)| a * b).sum() };
        let v = (0..n).into_par_iter().map(|k| dot(&self.value_rows, k)).collect();
        let d = (0..n).into_par_iter().map(|k| dot(&self.derivative_rows, k)).collect();
        (v, d)
    }

    /// `L` applied to a grid field.
    pub fn apply(&self, field: &GridField) -> GridField {
        let (psi, chi) = self.apply_normalized(&field.normalized_source(self.p));
        GridField {
            spec: self.spec.clone(),
            m: self.m,
            kappa: self.kappa,
            psi,
            chi,
        }
    }
}

// ---------------------------------------------------------------------------
// Picard iteration

/// Summary of one Picard iterate `v_k`.
#[derive(Debug, Clone, Serialize)]
pub struct IterateSummary {
    pub k: usize,
    pub norm: WeightedNormReport,
    /// `||v_{k+1} - v_k|| / ||v0||` in X_kappa.
    pub increment: f64,
    /// `|||v_{k+1} - v_k||| / ||v0||`.
    pub triple_increment: f64,
    /// `increment_k / increment_{k-1}`.
    pub ratio: Option<f64>,
    /// `|||L v_k - L v_{k-1}||| / (|||v_k - v_{k-1}||| (||v_k||^{p-1} + ||v_{k-1}||^{p-1}))`.
    pub lipschitz_constant: Option<f64>,
}

/// History of a Picard run.
#[derive(Debug, Clone, Serialize)]
pub struct PicardTrace {
    pub iterates: Vec<IterateSummary>,
    pub norm_history: Vec<f64>,
    pub increment_history: Vec<f64>,
    pub contraction_ratios: Vec<f64>,
    /// `||v - v0 - Lv|| / ||v0||` for the returned field, on the grid.
    pub residual: f64,
    pub converged: bool,
    pub v0_norm: f64,
    /// Box on which the integral identity is checked; outside it values come
    /// from the tail ansatz and are unverified.
    pub verified_box: GridConfig,
}

/// Output of [`picard_solve`].
#[derive(Debug, Clone)]
pub struct PicardSolution {
    pub trace: PicardTrace,
    pub field: GridField,
    pub v0: GridField,
}

/// Settings for [`picard_solve`].
#[derive(Debug, Clone, Copy, Serialize, serde::Deserialize)]
pub struct PicardOptions {
    pub max_iter: usize,
    pub tol: f64,
    pub grid: GridConfig,
    pub stencil: StencilOptions,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self {
            max_iter: 30,
            tol: 1e-6,
            grid: GridConfig::default(),
            stencil: StencilOptions::default(),
        }
    }
}

/// Iterate `v_{k+1} = v0 + L v_k` from `v_0 = v0` with a prebuilt stencil.
///
/// Increments and the residual are measured relative to `||v0||` (absolute
/// when `v0 = 0`). Stops when the increment is below `tol` and the residual
/// below `10 tol`.
pub fn picard_iterate(v0: &GridField, stencil: &DuhamelStencil, max_iter: usize, tol: f64) -> Result<(PicardTrace, GridField)> {
    let p = stencil.p;
    let v0_norm = grid_norms(v0).norm_xkappa;
    let scale = if v0_norm > 0.0 { v0_norm } else { 1.0 };
    let mut iterates = Vec::new();
    let mut v = v0.clone();
    let mut prev_step: Option<(GridField, f64)> = None; // (v_k - v_{k-1}, ||v_{k-1}||)
    let mut ratios = Vec::new();
    let mut above_one = 0usize;
    let mut converged = false;
    let mut residual = f64::NAN;
    for k in 0..max_iter.max(1) {
        let norm = grid_norms(&v);
        let lv = if v0_norm > 0.0 { stencil.apply(&v) } else { GridField::zeros(v.spec.clone(), v.m, v.kappa) };
        let mut next = v0.clone();
        for (a, b) in next.psi.iter_mut().zip(&lv.psi) {
            *a += b;
        }
        for (a, b) in next.chi.iter_mut().zip(&lv.chi) {
            *a += b;
        }
        let step = next.difference(&v);
        let step_norms = grid_norms(&step);
        let increment = step_norms.norm_xkappa / scale;
        let triple_increment = step_norms.triple_norm / scale;
        let ratio = iterates.last().map(|s: &IterateSummary| if s.increment > 0.0 { increment / s.increment } else { 0.0 });
        let lipschitz_constant = prev_step.as_ref().and_then(|(prev, prev_norm)| {
            let den = grid_norms(prev).triple_norm * (norm.norm_xkappa.powf(p - 1.0) + prev_norm.powf(p - 1.0));
            (den > 0.0).then(|| step_norms.triple_norm / den)
        });
        if let Some(q) = ratio {
            ratios.push(q);
            above_one = if q > 1.0 { above_one + 1 } else { 0 };
            if above_one >= 3 {
                return Err(Error::Divergence { step: k, ratios });
            }
        }
        iterates.push(IterateSummary {
            k,
            norm,
            increment,
            triple_increment,
            ratio,
            lipschitz_constant,
        });
        prev_step = Some((step, norm.norm_xkappa));
        v = next;
        // The increment of the step just taken is the residual of the
        // previous iterate; measure the new iterate's residual only when the
        // step is small enough to stop.
        if increment < tol {
            let lv = if v0_norm > 0.0 { stencil.apply(&v) } else { GridField::zeros(v.spec.clone(), v.m, v.kappa) };
            let mut res = v.difference(v0);
            for (a, b) in res.psi.iter_mut().zip(&lv.psi) {
                *a -= b;
            }
            for (a, b) in res.chi.iter_mut().zip(&lv.chi) {
                *a -= b;
            }
            residual = grid_norms(&res).norm_xkappa / scale;
            if residual < 10.0 * tol {
                converged = true;
                break;
            }
        }
    }
    let trace = PicardTrace {
        norm_history: iterates.iter().map(|s| s.norm.norm_xkappa).collect(),
        increment_history: iterates.iter().map(|s| s.increment).collect(),
        contraction_ratios: ratios,
        iterates,
        residual,
        converged,
        v0_norm,
        verified_box: v0.spec.config,
    };
    Ok((trace, v))
}

/// Linear solution for the canonical data family sampled on a grid.
pub fn linear_grid(params: &ModelParams, kappa_bar: f64, spec: Arc<GridSpec>) -> Result<GridField> {
    let fam = data_family(params, kappa_bar);
    let prop = Arc::new(Propagator::with_options(
        params.n,
        PropagatorOptions {
            kernel: QuadOptions::new(1e-300, 1e-10),
            outer: QuadOptions::new(1e-300, 1e-8),
            diagonal_band: 1e-6,
        },
    )?);
    let sol = v0(Arc::new(fam.f), Arc::new(fam.g), prop);
    GridField::from_field(spec, params.m, params.kappa, &sol)
}

/// Solve `v = v0 + L v` for the canonical data family on a grid.
pub fn picard_solve(params: &ModelParams, kappa_bar: f64, opts: &PicardOptions) -> Result<PicardSolution> {
    params.require_admissible()?;
    if !(opts.tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let spec = Arc::new(GridSpec::new(opts.grid)?);
    let v0g = linear_grid(params, kappa_bar, spec.clone())?;
    if v0g.psi.iter().all(|&x| x == 0.0) {
        let (trace, field) = picard_iterate(&v0g, &empty_stencil(params, spec), opts.max_iter, opts.tol)?;
        return Ok(PicardSolution { trace, field, v0: v0g });
    }
    let stencil = DuhamelStencil::build(params, spec, opts.stencil)?;
    let (trace, field) = picard_iterate(&v0g, &stencil, opts.max_iter, opts.tol)?;
    Ok(PicardSolution { trace, field, v0: v0g })
}

fn empty_stencil(params: &ModelParams, spec: Arc<GridSpec>) -> DuhamelStencil {
    DuhamelStencil {
        spec,
        m: params.m,
        kappa: params.kappa,
        p: params.p,
        value_rows: Vec::new(),
        derivative_rows: Vec::new(),
    }
}
