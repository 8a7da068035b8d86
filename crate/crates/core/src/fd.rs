//! Finite-difference solver for the radial damped wave equation
//! `u_tt - u_rr - (n-1)/r u_r + mu/(1+t) u_t + nu^2/(1+t)^2 u = |u|^p`
//! used as an independent oracle.
//!
//! Space: cell-centered finite volumes `r_i = (i + 1/2) h` with zero flux
//! through the origin, so the `(n-1)/r` coefficient never appears in point
//! form. Time: leapfrog with the damping term averaged over `t_{k-1}, t_{k+1}`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::profile::RadialProfile;
use crate::propagator::{v0, Propagator};

/// Treatment of the outer boundary `r = R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum Boundary {
    /// First-order upwind outflow condition.
    Absorbing,
    /// Zero flux through `r = R`.
    Reflecting,
}

/// Settings of one finite-difference run.
#[derive(Debug, Clone, Serialize, serde::Deserialize)]
pub struct FdConfig {
    pub n: u32,
    pub mu: f64,
    pub nu: f64,
    /// Power of the nonlinearity; `None` runs the linear equation.
    pub p: Option<f64>,
    pub r_max: f64,
    pub h: f64,
    /// Requested ratio `dt / h`.
    pub cfl: f64,
    /// Cap `dt` at 95% of the leapfrog stability limit of the discrete Laplacian.
    pub stability_guard: bool,
    pub t_end: f64,
    pub boundary: Boundary,
    /// Blow-up (semilinear) or instability (linear) is declared when `max |u|`
    /// exceeds this multiple of its initial value.
    pub blowup_factor: f64,
    pub snapshot_times: Vec<f64>,
}

impl FdConfig {
    /// Linear run with `mu = nu = 0` and an absorbing boundary.
    pub fn free_wave(n: u32, r_max: f64, h: f64, t_end: f64) -> Self {
        Self {
            n,
            mu: 0.0,
            nu: 0.0,
            p: None,
            r_max,
            h,
            cfl: 0.9,
            stability_guard: true,
            t_end,
            boundary: Boundary::Absorbing,
            blowup_factor: 1e6,
            snapshot_times: vec![t_end],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Domain(format!("{field}: {why}")));
        if self.n < 2 {
            return bad("n", format!("dimension must be at least 2, got {}", self.n));
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return bad("h", format!("grid spacing must be positive, got {}", self.h));
        }
        if !(self.r_max > 4.0 * self.h) || !self.r_max.is_finite() {
            return bad("r_max", format!("domain must span at least 4 cells, got R={} h={}", self.r_max, self.h));
        }
        if !(self.cfl > 0.0 && self.cfl <= 0.9) {
            return bad("cfl", format!("CFL ratio must lie in (0, 0.9], got {}", self.cfl));
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return bad("t_end", format!("end time must be finite and >= 0, got {}", self.t_end));
        }
        if !(self.mu >= 0.0) || !self.nu.is_finite() {
            return bad("mu", format!("need mu >= 0 and finite nu, got mu={} nu={}", self.mu, self.nu));
        }
        if let Some(p) = self.p {
            if !(p > 1.0) {
                return bad("p", format!("power must exceed 1, got {p}"));
            }
        }
        if !(self.blowup_factor > 1.0) {
            return bad("blowup_factor", format!("must exceed 1, got {}", self.blowup_factor));
        }
        if let Some(t) = self.snapshot_times.iter().find(|&&t| !(t >= 0.0 && t <= self.t_end)) {
            return bad("snapshot_times", format!("{t} outside [0, {}]", self.t_end));
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        (self.r_max / self.h).round() as usize
    }

    /// Smallest grid radius `h / 2`.
    pub fn r_min(&self) -> f64 {
        0.5 * self.h
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.cells()).map(|i| (i as f64 + 0.5) * self.h).collect()
    }

    /// Largest admissible step: `cfl * h`, capped by the stability limit when
    /// the guard is on. The cap is a fixed multiple of `h` for each `n`.
    pub fn max_step(&self) -> f64 {
        let ratio = if self.stability_guard {
            self.cfl.min(stable_ratio(self.n))
        } else {
            self.cfl
        };
        ratio * self.h
    }

    /// Time step and number of steps, `dt <= max_step()` dividing `t_end` exactly.
    pub fn time_step(&self) -> (f64, usize) {
        let dt_max = self.max_step();
        if self.t_end == 0.0 {
            return (dt_max, 0);
        }
        let steps = (self.t_end / dt_max - 1e-9).ceil().max(1.0) as usize;
        (self.t_end / steps as f64, steps)
    }
}

/// Outcome of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status")]
pub enum FdStatus {
    Completed,
    BlowupDetected { t: f64 },
    Unstable { t: f64 },
}

/// Solution on the grid at one time.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub u: Vec<f64>,
}

/// Output of [`fd_solve`].
#[derive(Debug, Clone, Serialize)]
pub struct FdRun {
    pub r: Vec<f64>,
    pub h: f64,
    pub dt: f64,
    pub steps: usize,
    pub snapshots: Vec<Snapshot>,
    /// `(t_{k+1/2}, E)` with the staggered free-wave energy.
    pub energy_history: Vec<(f64, f64)>,
    pub status: FdStatus,
}

impl FdRun {
    /// Four-point Lagrange interpolation of a snapshot at radius `r`.
    pub fn sample(&self, snapshot: &Snapshot, r: f64) -> f64 {
        let n = self.r.len();
        let x = r / self.h - 0.5;
        let i = (x.floor() as isize).clamp(1, n as isize - 3) as usize;
        let mut acc = 0.0;
        for a in 0..4 {
            let ia = i + a - 1;
            let mut w = 1.0;
            for b in 0..4 {
                if a != b {
                    let ib = i + b - 1;
                    w *= (x - ib as f64) / (ia as f64 - ib as f64);
                }
            }
            acc += w * snapshot.u[ia];
        }
        acc
    }
}

struct Geometry {
    /// `r_{i+1/2}^{n-1} / h` for faces `i + 1/2`, `i = 0..N-1`.
    face: Vec<f64>,
    /// Cell volumes `(r_{i+1/2}^n - r_{i-1/2}^n) / n`.
    vol: Vec<f64>,
}

impl Geometry {
    fn new(n: u32, h: f64, cells: usize) -> Self {
        let nf = n as f64;
        let face = (0..cells).map(|i| ((i + 1) as f64 * h).powi(n as i32 - 1) / h).collect();
        let vol = (0..cells)
            .map(|i| (((i + 1) as f64 * h).powi(n as i32) - (i as f64 * h).powi(n as i32)) / nf)
            .collect();
        Self { face, vol }
    }

    /// Finite-volume Laplacian; the outermost face carries no flux.
    fn laplacian(&self, u: &[f64], out: &mut [f64]) {
        let nc = u.len();
        out.par_iter_mut().with_min_len(4096).enumerate().for_each(|(i, o)| {
            let right = if i + 1 < nc { self.face[i] * (u[i + 1] - u[i]) } else { 0.0 };
            let left = if i > 0 { self.face[i - 1] * (u[i] - u[i - 1]) } else { 0.0 };
            *o = (right - left) / self.vol[i];
        });
    }

    /// `<a, -Lap b>` in the volume inner product, interior faces only.
    fn stiffness(&self, a: &[f64], b: &[f64]) -> f64 {
        (0..a.len() - 1)
            .map(|i| self.face[i] * (a[i + 1] - a[i]) * (b[i + 1] - b[i]))
            .sum()
    }

    /// Largest eigenvalue of `-Lap`, by power iteration in the volume inner product.
    fn spectral_radius(&self) -> f64 {
        let nc = self.vol.len();
        let mut x: Vec<f64> = (0..nc).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let mut y = vec![0.0; nc];
        let mut lambda = 0.0;
        for _ in 0..500 {
            self.laplacian(&x, &mut y);
            let next = -self.mass(&x, &y) / self.mass(&x, &x);
            let norm = self.mass(&y, &y).sqrt();
            for (a, b) in x.iter_mut().zip(&y) {
                *a = -b / norm;
            }
            let done = (next - lambda).abs() <= 1e-8 * next;
            lambda = next;
            if done {
                break;
            }
        }
        // The Rayleigh quotient approaches from below.
        1.01 * lambda
    }

    fn mass(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.vol).map(|((x, y), v)| x * y * v).sum()
    }
}

/// 95% of the leapfrog limit `dt / h <= 2 / sqrt(h^2 lambda_max)`. The
/// Laplacian scales as `h^-2` at fixed cell count and its top mode sits at
/// the origin, so a unit-spacing grid of 256 cells fixes the ratio.
fn stable_ratio(n: u32) -> f64 {
    0.95 * 2.0 / Geometry::new(n, 1.0, 256).spectral_radius().sqrt()
}

fn max_abs(u: &[f64]) -> f64 {
    u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Solve the Cauchy problem with data `(f, g)` on `[0, R]`.
pub fn fd_solve(cfg: &FdConfig, f: &dyn RadialProfile, g: &dyn RadialProfile) -> Result<FdRun> {
    cfg.validate()?;
    let r = cfg.centers();
    let nc = r.len();
    let h = cfg.h;
    let (dt, steps) = cfg.time_step();
    let geo = Geometry::new(cfg.n, h, nc);
    let (mu, nu2) = (cfg.mu, cfg.nu * cfg.nu);
    let power = cfg.p;
    let source = |u: f64| match power {
        Some(p) => u.abs().powf(p),
        None => 0.0,
    };

    let u0: Vec<f64> = r.iter().map(|&x| f.eval(x)).collect();
    let v0: Vec<f64> = r.iter().map(|&x| g.eval(x)).collect();
    if u0.iter().chain(&v0).any(|x| !x.is_finite()) {
        return Err(Error::Domain("initial data not finite on the grid".into()));
    }
    let initial_max = max_abs(&u0).max(max_abs(&v0));
    let limit = cfg.blowup_factor * initial_max;

    let mut lap = vec![0.0; nc];
    geo.laplacian(&u0, &mut lap);
    // Taylor start: u^1 = u^0 + dt g + dt^2/2 u_tt(0).
    let mut u1: Vec<f64> = (0..nc)
        .map(|i| {
            let utt = lap[i] - mu * v0[i] - nu2 * u0[i] + source(u0[i]);
            u0[i] + dt * v0[i] + 0.5 * dt * dt * utt
        })
        .collect();
    if cfg.boundary == Boundary::Absorbing && steps > 0 {
        outflow(&mut u1, &u0, &r, cfg.n, dt, h);
    }

    let mut snaps: Vec<(usize, f64)> = cfg.snapshot_times.iter().copied().enumerate().collect();
    snaps.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut snapshots: Vec<Option<Snapshot>> = vec![None; snaps.len()];
    let mut next_snap = 0usize;
    let mut take = |k: usize, prev: &[f64], cur: &[f64], snapshots: &mut Vec<Option<Snapshot>>| {
        // Linear interpolation between t_{k-1} and t_k.
        while next_snap < snaps.len() && snaps[next_snap].1 <= k as f64 * dt * (1.0 + 1e-12) {
            let (slot, ts) = snaps[next_snap];
            let theta = if k == 0 { 1.0 } else { ((ts - (k - 1) as f64 * dt) / dt).clamp(0.0, 1.0) };
            let u = prev.iter().zip(cur).map(|(a, b)| (1.0 - theta) * a + theta * b).collect();
            snapshots[slot] = Some(Snapshot { t: ts, u });
            next_snap += 1;
        }
    };
    take(0, &u0, &u0, &mut snapshots);

    let mut energy_history = Vec::with_capacity(steps + 1);
    let energy = |a: &[f64], b: &[f64]| -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| (y - x) / dt).collect();
        0.5 * geo.mass(&d, &d) + 0.5 * geo.stiffness(a, b)
    };
    let mut status = FdStatus::Completed;
    if steps == 0 {
        return Ok(FdRun {
            r,
            h,
            dt,
            steps,
            snapshots: snapshots.into_iter().map(|s| s.expect("snapshot at t = 0")).collect(),
            energy_history,
            status,
        });
    }
    energy_history.push((0.5 * dt, energy(&u0, &u1)));
    take(1, &u0, &u1, &mut snapshots);

    let mut prev = u0;
    let mut cur = u1;
    let mut next = vec![0.0; nc];
    for k in 1..steps {
        let t = k as f64 * dt;
        if max_abs(&cur) > limit || cur.iter().any(|x| !x.is_finite()) {
            status = if power.is_some() { FdStatus::BlowupDetected { t } } else { FdStatus::Unstable { t } };
            break;
        }
        geo.laplacian(&cur, &mut lap);
        let beta = 0.5 * mu * dt / (1.0 + t);
        let m2 = nu2 / ((1.0 + t) * (1.0 + t));
        next.par_iter_mut().with_min_len(4096).enumerate().for_each(|(i, o)| {
            let rhs = lap[i] - m2 * cur[i] + source(cur[i]);
            *o = (2.0 * cur[i] - (1.0 - beta) * prev[i] + dt * dt * rhs) / (1.0 + beta);
        });
        if cfg.boundary == Boundary::Absorbing {
            outflow(&mut next, &cur, &r, cfg.n, dt, h);
        }
        energy_history.push(((k as f64 + 0.5) * dt, energy(&cur, &next)));
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        take(k + 1, &prev, &cur, &mut snapshots);
    }
    if status == FdStatus::Completed && (max_abs(&cur) > limit || cur.iter().any(|x| !x.is_finite())) {
        let t = steps as f64 * dt;
        status = if power.is_some() { FdStatus::BlowupDetected { t } } else { FdStatus::Unstable { t } };
    }
    Ok(FdRun {
        r,
        h,
        dt,
        steps,
        snapshots: snapshots.into_iter().flatten().collect(),
        energy_history,
        status,
    })
}

/// Upwind update of the last cell from `w_t + w_r + (n-1)/(2r) w = 0`.
fn outflow(next: &mut [f64], cur: &[f64], r: &[f64], n: u32, dt: f64, h: f64) {
    let l = cur.len() - 1;
    let damp = 0.5 * (n as f64 - 1.0) / r[l];
    next[l] = cur[l] - dt / h * (cur[l] - cur[l - 1]) - dt * damp * cur[l];
}

/// One row of a blow-up sweep.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProbeRow {
    pub p: f64,
    pub epsilon: f64,
    #[serde(flatten)]
    pub status: FdStatus,
}

/// Sweep table with the largest completed amplitude per power.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeSummary {
    pub rows: Vec<ProbeRow>,
    /// `(p, largest epsilon below the first blow-up)`; `None` when the
    /// smallest amplitude already blows up.
    pub thresholds: Vec<(f64, Option<f64>)>,
}

/// Run `fd_solve` with data `(eps * f, eps * g)` for every `(p, eps)`.
pub fn blowup_probe(
    base: &FdConfig,
    powers: &[f64],
    epsilons: &[f64],
    f: &dyn RadialProfile,
    g: &dyn RadialProfile,
) -> Result<ProbeSummary> {
    let mut eps: Vec<f64> = epsilons.to_vec();
    eps.sort_by(f64::total_cmp);
    let mut rows = Vec::new();
    let mut thresholds = Vec::new();
    for &p in powers {
        let cfg = FdConfig {
            p: Some(p),
            snapshot_times: Vec::new(),
            ..base.clone()
        };
        let mut best = None;
        let mut seen_blowup = false;
        for &e in &eps {
            let fe = Scaled { inner: f, c: e };
            let ge = Scaled { inner: g, c: e };
            let run = fd_solve(&cfg, &fe, &ge)?;
            if run.status == FdStatus::Completed && !seen_blowup {
                best = Some(e);
            } else if run.status != FdStatus::Completed {
                seen_blowup = true;
            }
            rows.push(ProbeRow {
                p,
                epsilon: e,
                status: run.status,
            });
        }
        thresholds.push((p, best));
    }
    Ok(ProbeSummary { rows, thresholds })
}

#[derive(Debug)]
struct Scaled<'a> {
    inner: &'a dyn RadialProfile,
    c: f64,
}

impl RadialProfile for Scaled<'_> {
    fn derivative(&self, r: f64, order: u8) -> f64 {
        if self.c == 0.0 {
            0.0
        } else {
            self.c * self.inner.derivative(r, order)
        }
    }
    fn origin_exponent(&self) -> f64 {
        self.inner.origin_exponent()
    }
    fn tail_exponent(&self) -> f64 {
        self.inner.tail_exponent()
    }
    fn is_zero(&self) -> bool {
        self.c == 0.0 || self.inner.is_zero()
    }
}

/// Discrepancy between the oracle and a reference at one time.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ComparisonRow {
    pub t: f64,
    pub max_abs_diff: f64,
    pub max_reference: f64,
    /// `max_abs_diff / max_reference`.
    pub rel_linf: f64,
    /// Radius of the largest difference.
    pub at_r: f64,
}

/// Oracle versus the kernel propagator on a radial window.
#[derive(Debug, Clone, Serialize)]
pub struct CrossValidation {
    pub n: u32,
    pub h: f64,
    pub r_max: f64,
    pub window: (f64, f64),
    pub sample_spacing: f64,
    pub rows: Vec<ComparisonRow>,
    pub max_rel_linf: f64,
    /// The oracle run behind the comparison.
    #[serde(skip)]
    pub run: FdRun,
}

/// Free-wave run of the oracle compared with `v0` of the propagator at the
/// given times, on sample radii spaced `spacing` apart in `window`.
///
/// The outer boundary is placed beyond the window, the data support and the
/// largest time so that no boundary signal reaches the window.
pub fn cross_validate(
    propagator: Arc<Propagator>,
    f: Arc<dyn RadialProfile>,
    g: Arc<dyn RadialProfile>,
    times: &[f64],
    window: (f64, f64),
    h: f64,
    spacing: f64,
) -> Result<CrossValidation> {
    if !(window.0 > 0.0 && window.1 > window.0 && spacing > 0.0) {
        return Err(Error::Domain(format!("window must satisfy 0 < lo < hi, got {window:?}")));
    }
    let t_end = times.iter().copied().fold(0.0f64, f64::max);
    let reach = [f.support(), g.support()]
        .iter()
        .map(|s| s.map_or(window.1, |(_, hi)| hi))
        .fold(window.1, f64::max);
    let r_max = ((reach.max(window.1) + t_end + 2.0) / h).ceil() * h;
    let cfg = FdConfig {
        snapshot_times: times.to_vec(),
        ..FdConfig::free_wave(propagator.consts.n, r_max, h, t_end)
    };
    let run = fd_solve(&cfg, f.as_ref(), g.as_ref())?;
    if run.status != FdStatus::Completed {
        return Err(Error::Domain(format!("oracle run did not complete: {:?}", run.status)));
    }
    let count = ((window.1 - window.0) / spacing).round() as usize;
    let radii: Vec<f64> = (0..=count).map(|i| window.0 + i as f64 * spacing).collect();
    let sol = v0(f, g, propagator.clone());
    let mut rows = Vec::new();
    for snap in &run.snapshots {
        let reference: Vec<f64> = radii
            .par_iter()
            .map(|&r| sol.value(snap.t, r))
            .collect::<Result<_>>()?;
        let mut row = ComparisonRow {
            t: snap.t,
            max_abs_diff: 0.0,
            max_reference: 0.0,
            rel_linf: 0.0,
            at_r: radii[0],
        };
        for (&r, &v) in radii.iter().zip(&reference) {
            let d = (run.sample(snap, r) - v).abs();
            if d > row.max_abs_diff {
                row.max_abs_diff = d;
                row.at_r = r;
            }
            row.max_reference = row.max_reference.max(v.abs());
        }
        row.rel_linf = if row.max_reference > 0.0 { row.max_abs_diff / row.max_reference } else { row.max_abs_diff };
        rows.push(row);
    }
    let max_rel_linf = rows.iter().map(|r| r.rel_linf).fold(0.0, f64::max);
    Ok(CrossValidation {
        n: cfg.n,
        h,
        r_max,
        window,
        sample_spacing: spacing,
        rows,
        max_rel_linf,
        run,
    })
}

/// Richardson self-convergence study of the oracle.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceStudy {
    pub t: f64,
    pub hs: [f64; 3],
    /// `||u_h - u_{h/2}||` and `||u_{h/2} - u_{h/4}||`, discrete L2 over the
    /// coarsest cell centers in the window.
    pub differences: [f64; 2],
    /// `log2` of the ratio of the two differences.
    pub order: f64,
}

/// Runs `base` at `h`, `h/2`, `h/4` and estimates the convergence order at
/// `base.t_end` from the solutions at the cell centers of the coarsest grid
/// inside `window`; finer grids are interpolated there.
pub fn self_convergence(
    base: &FdConfig,
    f: &dyn RadialProfile,
    g: &dyn RadialProfile,
    window: (f64, f64),
) -> Result<ConvergenceStudy> {
    let hs = [base.h, 0.5 * base.h, 0.25 * base.h];
    let radii: Vec<f64> = base.centers().into_iter().filter(|&r| r >= window.0 && r <= window.1).collect();
    if radii.is_empty() {
        return Err(Error::Domain(format!("window {window:?} holds no cell center")));
    }
    let mut samples = Vec::new();
    for &h in &hs {
        let cfg = FdConfig {
            h,
            snapshot_times: vec![base.t_end],
            ..base.clone()
        };
        let run = fd_solve(&cfg, f, g)?;
        if run.status != FdStatus::Completed {
            return Err(Error::Domain(format!("oracle run at h={h} did not complete: {:?}", run.status)));
        }
        let snap = &run.snapshots[0];
        samples.push(radii.iter().map(|&r| run.sample(snap, r)).collect::<Vec<f64>>());
    }
    let l2 = |a: &[f64], b: &[f64]| (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * base.h).sqrt();
    let differences = [l2(&samples[0], &samples[1]), l2(&samples[1], &samples[2])];
    Ok(ConvergenceStudy {
        t: base.t_end,
        hs,
        differences,
        order: (differences[0] / differences[1]).log2(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{BumpProfile, ZeroProfile};

    #[test]
    fn zero_data_stays_zero() {
        let mut cfg = FdConfig::free_wave(4, 4.0, 1.0 / 16.0, 2.0);
        cfg.p = Some(1.7);
        cfg.mu = 2.0;
        let run = fd_solve(&cfg, &ZeroProfile, &ZeroProfile).unwrap();
        assert_eq!(run.status, FdStatus::Completed);
        assert!(run.snapshots[0].u.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn config_validation_names_fields() {
        let mut cfg = FdConfig::free_wave(4, 4.0, 0.1, 1.0);
        cfg.cfl = 1.2;
        let e = cfg.validate().unwrap_err().to_string();
        assert!(e.contains("cfl"), "{e}");
        let mut cfg = FdConfig::free_wave(4, 4.0, 0.1, 1.0);
        cfg.snapshot_times = vec![2.0];
        assert!(cfg.validate().unwrap_err().to_string().contains("snapshot_times"));
        let (dt, steps) = FdConfig::free_wave(4, 4.0, 0.1, 1.0).time_step();
        assert!(dt <= 0.09 + 1e-15 && (dt * steps as f64 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn guard_caps_step_in_high_dimension() {
        let low = FdConfig::free_wave(4, 4.0, 0.05, 1.0);
        assert!(low.max_step() > 0.85 * 0.05, "{}", low.max_step());
        let high = FdConfig::free_wave(8, 4.0, 0.05, 1.0);
        assert!(high.max_step() < 0.8 * 0.05, "{}", high.max_step());
    }

    #[test]
    fn unguarded_step_is_reported_unstable() {
        let mut cfg = FdConfig::free_wave(8, 4.0, 1.0 / 32.0, 20.0);
        cfg.boundary = Boundary::Reflecting;
        cfg.stability_guard = false;
        let f = BumpProfile::new(0.5, 2.0, 1.0);
        let run = fd_solve(&cfg, &f, &ZeroProfile).unwrap();
        assert!(matches!(run.status, FdStatus::Unstable { .. }), "{:?}", run.status);
        cfg.stability_guard = true;
        let run = fd_solve(&cfg, &f, &ZeroProfile).unwrap();
        assert_eq!(run.status, FdStatus::Completed);
    }

    #[test]
    fn reflecting_energy_is_conserved() {
        let mut cfg = FdConfig::free_wave(4, 6.0, 1.0 / 64.0, 1.5);
        cfg.boundary = Boundary::Reflecting;
        let f = BumpProfile::new(2.0, 3.0, 1.0);
        let run = fd_solve(&cfg, &f, &ZeroProfile).unwrap();
        let e0 = run.energy_history[0].1;
        for &(_, e) in &run.energy_history {
            assert!((e - e0).abs() <= 5e-3 * e0, "{e} vs {e0}");
        }
    }

    #[test]
    fn finite_speed_of_propagation() {
        let cfg = FdConfig::free_wave(4, 8.0, 1.0 / 64.0, 2.0);
        let f = BumpProfile::new(2.0, 3.0, 1.0);
        let run = fd_solve(&cfg, &f, &ZeroProfile).unwrap();
        let s = &run.snapshots[0];
        let peak = max_abs(&s.u);
        // Leapfrog has unit numerical speed bound dt/h per step; check a margin.
        for (i, &x) in run.r.iter().enumerate() {
            if x > 3.0 + 2.0 + 2.0 * cfg.h + 0.25 {
                assert!(s.u[i].abs() <= 1e-8 * peak, "r={x}: {}", s.u[i]);
            }
        }
    }

    #[test]
    fn damping_reduces_energy() {
        let mut cfg = FdConfig::free_wave(4, 8.0, 1.0 / 32.0, 2.0);
        cfg.mu = 2.0;
        cfg.boundary = Boundary::Reflecting;
        let f = BumpProfile::new(2.0, 3.0, 1.0);
        let run = fd_solve(&cfg, &f, &ZeroProfile).unwrap();
        let first = run.energy_history[0].1;
        let last = run.energy_history.last().unwrap().1;
        assert!(last < first);
    }

    #[test]
    fn large_data_blows_up() {
        let mut cfg = FdConfig::free_wave(4, 6.0, 1.0 / 16.0, 3.0);
        cfg.p = Some(3.0);
        cfg.blowup_factor = 1e3;
        let f = BumpProfile::new(1.0, 3.0, 1.0);
        let s = blowup_probe(&cfg, &[3.0], &[0.0, 1e-3, 50.0], &f, &ZeroProfile).unwrap();
        assert_eq!(s.rows[0].status, FdStatus::Completed);
        assert!(matches!(s.rows[2].status, FdStatus::BlowupDetected { .. }));
        assert_eq!(s.thresholds[0], (3.0, Some(1e-3)));
    }
}
