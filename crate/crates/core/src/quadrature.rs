//! Globally adaptive 21-point Gauss–Kronrod integration.
//!
//! Two drivers share the same rule: [`integrate`] for scalar integrands and
//! [`integrate_collect`] which additionally returns the Kronrod nodes and
//! weights of the accepted panels together with a caller payload computed at
//! each node. The latter lets a nested integral reuse inner results when the
//! outer quadrature is turned into a linear functional.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];

const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077958109831074,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];

/// Gauss weights for the nodes `XGK[1], XGK[3], ..., XGK[9]`.
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

/// Tolerances and budget for the adaptive drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-9,
            max_panels: 4000,
        }
    }
}

impl QuadOptions {
    pub fn new(abs_tol: f64, rel_tol: f64) -> Self {
        Self {
            abs_tol,
            rel_tol,
            ..Self::default()
        }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// Integral value with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// One quadrature node of an accepted panel.
#[derive(Debug, Clone)]
pub struct Node<T> {
    pub x: f64,
    pub weight: f64,
    pub payload: T,
}

fn abscissae(a: f64, b: f64) -> [f64; 21] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut xs = [0.0; 21];
    for k in 0..10 {
        xs[2 * k] = c - h * XGK[k];
        xs[2 * k + 1] = c + h * XGK[k];
    }
    xs[20] = c;
    xs
}

/// Combine the 21 samples into (kronrod, error, roundoff floor) following
/// QUADPACK's scaling.
fn combine(fv: &[f64; 21], h: f64) -> (f64, f64, f64) {
    let fc = fv[20];
    let mut kron = WGK[10] * fc;
    let mut gauss = 0.0;
    let mut resabs = WGK[10] * fc.abs();
    for k in 0..10 {
        let s = fv[2 * k] + fv[2 * k + 1];
        kron += WGK[k] * s;
        resabs += WGK[k] * (fv[2 * k].abs() + fv[2 * k + 1].abs());
        if k % 2 == 1 {
            gauss += WG[k / 2] * s;
        }
    }
    let mean = 0.5 * kron;
    let mut resasc = WGK[10] * (fc - mean).abs();
    for k in 0..10 {
        resasc += WGK[k] * ((fv[2 * k] - mean).abs() + (fv[2 * k + 1] - mean).abs());
    }
    let value = kron * h;
    let resabs = resabs * h.abs();
    let resasc = resasc * h.abs();
    let mut err = ((kron - gauss) * h).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    let floor = 50.0 * f64::EPSILON * resabs;
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(floor);
    }
    (value, err, floor)
}

fn node_weights(a: f64, b: f64) -> [f64; 21] {
    let h = 0.5 * (b - a);
    let mut ws = [0.0; 21];
    for k in 0..10 {
        ws[2 * k] = WGK[k] * h;
        ws[2 * k + 1] = WGK[k] * h;
    }
    ws[20] = WGK[10] * h;
    ws
}

/// Single 21-point Gauss–Kronrod panel.
pub fn gk21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Estimate {
    let xs = abscissae(a, b);
    let mut fv = [0.0; 21];
    for (v, &x) in fv.iter_mut().zip(xs.iter()) {
        *v = f(x);
    }
    let (value, error, _) = combine(&fv, 0.5 * (b - a));
    Estimate { value, error }
}

struct Panel<T> {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    floor: f64,
    nodes: Vec<(f64, T)>,
}

impl<T> PartialEq for Panel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl<T> Eq for Panel<T> {}
impl<T> PartialOrd for Panel<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T> Ord for Panel<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn eval_panel<T, F: FnMut(f64) -> (f64, T)>(f: &mut F, a: f64, b: f64, keep: bool) -> Panel<T> {
    let xs = abscissae(a, b);
    let mut fv = [0.0; 21];
    let mut nodes = Vec::with_capacity(if keep { 21 } else { 0 });
    for (v, &x) in fv.iter_mut().zip(xs.iter()) {
        let (y, payload) = f(x);
        *v = y;
        if keep {
            nodes.push((x, payload));
        }
    }
    let (value, error, floor) = combine(&fv, 0.5 * (b - a));
    Panel {
        a,
        b,
        value,
        error,
        floor,
        nodes,
    }
}

fn too_narrow(a: f64, b: f64, range: f64) -> bool {
    (b - a).abs() <= 64.0 * f64::EPSILON * a.abs().max(b.abs()).max(1e-6 * range)
}

fn adapt<T, F: FnMut(f64) -> (f64, T)>(
    f: &mut F,
    breakpoints: &[f64],
    opts: &QuadOptions,
    keep: bool,
) -> Result<(Estimate, Vec<Panel<T>>)> {
    let range = breakpoints[breakpoints.len() - 1] - breakpoints[0];
    let mut heap = BinaryHeap::new();
    // Panels that cannot be refined further: either limited by roundoff in
    // the samples or too narrow to bisect.
    let mut frozen: Vec<Panel<T>> = Vec::new();
    let mut narrow_error = 0.0;
    for w in breakpoints.windows(2) {
        if w[1] > w[0] {
            heap.push(eval_panel(f, w[0], w[1], keep));
        }
    }
    let mut value: f64 = heap.iter().map(|p| p.value).sum();
    let mut error: f64 = heap.iter().map(|p| p.error).sum();
    // Sum of per-panel roundoff floors, proportional to the integral of |f|.
    // Integrals that cancel to (near) zero cannot beat a small multiple of it.
    let mut floor: f64 = heap.iter().map(|p| p.floor).sum();
    let mut count = heap.len();
    while error > opts.target(value).max(10.0 * floor) {
        let Some(worst) = heap.pop() else { break };
        if worst.error <= 1.0000001 * worst.floor {
            frozen.push(worst);
            continue;
        }
        if too_narrow(worst.a, worst.b, range) || count >= opts.max_panels {
            if count >= opts.max_panels {
                heap.push(worst);
                let total: f64 = heap.iter().map(|p| p.value).sum::<f64>()
                    + frozen.iter().map(|p| p.value).sum::<f64>();
                let err: f64 = heap.iter().map(|p| p.error).sum::<f64>()
                    + frozen.iter().map(|p| p.error).sum::<f64>();
                return Err(Error::Quadrature {
                    context: format!("[{:.6e}, {:.6e}]", breakpoints[0], breakpoints[breakpoints.len() - 1]),
                    value: total,
                    error: err,
                });
            }
            narrow_error += worst.error;
            frozen.push(worst);
            continue;
        }
        let mid = 0.5 * (worst.a + worst.b);
        let left = eval_panel(f, worst.a, mid, keep);
        let right = eval_panel(f, mid, worst.b, keep);
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        floor += left.floor + right.floor - worst.floor;
        count += 1;
        heap.push(left);
        heap.push(right);
        if count % 64 == 0 {
            value = heap.iter().map(|p| p.value).sum::<f64>()
                + frozen.iter().map(|p| p.value).sum::<f64>();
            error = heap.iter().map(|p| p.error).sum::<f64>()
                + frozen.iter().map(|p| p.error).sum::<f64>();
            floor = heap.iter().map(|p| p.floor).sum::<f64>()
                + frozen.iter().map(|p| p.floor).sum::<f64>();
        }
    }
    let mut panels: Vec<Panel<T>> = heap.into_vec();
    panels.extend(frozen);
    let value = panels.iter().map(|p| p.value).sum::<f64>();
    let error = panels.iter().map(|p| p.error).sum::<f64>();
    let floor = panels.iter().map(|p| p.floor).sum::<f64>();
    if !value.is_finite() || !error.is_finite() {
        return Err(Error::Quadrature {
            context: "non-finite integrand".into(),
            value,
            error,
        });
    }
    let target = opts.target(value).max(10.0 * floor);
    if error > target && narrow_error > target {
        // Roundoff-limited panels are accepted; narrow ones signal a
        // singularity the rule cannot resolve.
        return Err(Error::Quadrature {
            context: "roundoff floor".into(),
            value,
            error,
        });
    }
    Ok((Estimate { value, error }, panels))
}

/// Adaptive integral of `f` over consecutive breakpoints `[x0, x1, ..., xk]`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    breakpoints: &[f64],
    opts: &QuadOptions,
) -> Result<Estimate> {
    let mut g = |x: f64| (f(x), ());
    adapt(&mut g, breakpoints, opts, false).map(|(e, _)| e)
}

/// Adaptive integral that also returns the accepted Kronrod nodes with their
/// weights and the payload produced at each node.
pub fn integrate_collect<T, F: FnMut(f64) -> (f64, T)>(
    mut f: F,
    breakpoints: &[f64],
    opts: &QuadOptions,
) -> Result<(Estimate, Vec<Node<T>>)> {
    let (est, panels) = adapt(&mut f, breakpoints, opts, true)?;
    let mut nodes = Vec::with_capacity(21 * panels.len());
    for panel in panels {
        let ws = node_weights(panel.a, panel.b);
        for ((x, payload), w) in panel.nodes.into_iter().zip(ws) {
            nodes.push(Node {
                x,
                weight: w,
                payload,
            });
        }
    }
    Ok((est, nodes))
}

/// Adaptive integral over `[a, b]` with graded meshes at the flagged ends.
///
/// A flagged end is mapped by `x = end +/- len * v^3`, which turns
/// logarithmic or inverse-square-root endpoint behaviour into a smooth or
/// vanishing integrand in `v`.
pub fn integrate_graded<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    left: bool,
    right: bool,
    opts: &QuadOptions,
) -> Result<Estimate> {
    if !(b > a) {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let mid = match (left, right) {
        (true, true) => 0.5 * (a + b),
        (true, false) => b,
        (false, true) => a,
        (false, false) => return integrate(f, &[a, b], opts),
    };
    let mut total = Estimate { value: 0.0, error: 0.0 };
    let split_opts = QuadOptions {
        abs_tol: 0.5 * opts.abs_tol,
        ..*opts
    };
    if left {
        let len = mid - a;
        let e = integrate(|v: f64| 3.0 * len * v * v * f(a + len * v * v * v), &[0.0, 0.5, 1.0], &split_opts)?;
        total.value += e.value;
        total.error += e.error;
    }
    if right {
        let len = b - mid;
        let e = integrate(|v: f64| 3.0 * len * v * v * f(b - len * v * v * v), &[0.0, 0.5, 1.0], &split_opts)?;
        total.value += e.value;
        total.error += e.error;
    }
    Ok(total)
}

/// [`integrate_graded`] that also returns nodes in the original variable,
/// with weights that include the Jacobian of the grading map.
pub fn integrate_graded_collect<T, F: FnMut(f64) -> (f64, T)>(
    mut f: F,
    a: f64,
    b: f64,
    left: bool,
    right: bool,
    opts: &QuadOptions,
) -> Result<(Estimate, Vec<Node<T>>)> {
    if !(b > a) {
        return Ok((Estimate { value: 0.0, error: 0.0 }, Vec::new()));
    }
    let mid = match (left, right) {
        (true, true) => 0.5 * (a + b),
        (true, false) => b,
        (false, true) => a,
        (false, false) => return integrate_collect(f, &[a, b], opts),
    };
    let split_opts = QuadOptions {
        abs_tol: 0.5 * opts.abs_tol,
        ..*opts
    };
    let mut total = Estimate { value: 0.0, error: 0.0 };
    let mut out = Vec::new();
    for (flag, end, len, sign) in [(left, a, mid - a, 1.0), (right, b, b - mid, -1.0)] {
        if !flag {
            continue;
        }
        let (e, nodes) = integrate_collect(
            |v: f64| {
                let jac = 3.0 * len * v * v;
                let (y, p) = f(end + sign * len * v * v * v);
                (jac * y, (jac, p))
            },
            &[0.0, 0.5, 1.0],
            &split_opts,
        )?;
        total.value += e.value;
        total.error += e.error;
        for n in nodes {
            let (jac, payload) = n.payload;
            out.push(Node {
                x: end + sign * len * n.x * n.x * n.x,
                weight: n.weight * jac,
                payload,
            });
        }
    }
    Ok((total, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn graded_collect_matches_graded() {
        let opts = QuadOptions::new(0.0, 1e-12);
        let f = |x: f64| (x * (2.0 - x)).ln() * x.cos();
        let e = integrate_graded(f, 0.0, 2.0, true, true, &opts).unwrap();
        let (c, nodes) = integrate_graded_collect(|x| (f(x), ()), 0.0, 2.0, true, true, &opts).unwrap();
        let s: f64 = nodes.iter().map(|n| n.weight * f(n.x)).sum();
        assert!((e.value - c.value).abs() < 1e-13);
        assert!((s - c.value).abs() < 1e-12);
        let (c, nodes) = integrate_graded_collect(|x| (x, ()), 1.0, 3.0, false, false, &opts).unwrap();
        assert!((c.value - 4.0).abs() < 1e-13 && nodes.iter().all(|n| n.x > 1.0 && n.x < 3.0));
    }

    #[test]
    fn polynomial_exact() {
        let e = integrate(|x| x.powi(7) - 3.0 * x * x, &[0.0, 2.0], &QuadOptions::default()).unwrap();
        assert!((e.value - (32.0 - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn sqrt_endpoint_singularity() {
        let e = integrate(|x| 1.0 / x.sqrt(), &[0.0, 1.0], &QuadOptions::default()).unwrap();
        assert!((e.value - 2.0).abs() < 1e-8, "{e:?}");
    }

    #[test]
    fn log_singularity_with_breakpoint() {
        let e = integrate(|x: f64| (x - 0.3).abs().ln(), &[0.0, 0.3, 1.0], &QuadOptions::default()).unwrap();
        let exact = 0.3 * (0.3f64.ln() - 1.0) + 0.7 * (0.7f64.ln() - 1.0);
        assert!((e.value - exact).abs() < 1e-9);
    }

    #[test]
    fn collected_nodes_reproduce_integral() {
        let (est, nodes) = integrate_collect(|x: f64| (x.exp(), x), &[-1.0, 0.5, 2.0], &QuadOptions::default()).unwrap();
        let s: f64 = nodes.iter().map(|n| n.weight * n.payload.exp()).sum();
        assert!((s - est.value).abs() < 1e-13 * est.value);
        assert!((est.value - (2f64.exp() - (-1f64).exp())).abs() < 1e-11);
    }

    #[test]
    fn budget_exhaustion_reports_error() {
        let opts = QuadOptions { abs_tol: 0.0, rel_tol: 1e-15, max_panels: 4 };
        let r = integrate(|x: f64| (1.0 / x).sin(), &[1e-3, 1.0], &opts);
        assert!(matches!(r, Err(Error::Quadrature { .. })));
    }

    #[test]
    fn graded_log_ends() {
        let opts = QuadOptions::new(0.0, 1e-12);
        let e = integrate_graded(|x: f64| (x * (1.0 - x)).ln(), 0.0, 1.0, true, true, &opts).unwrap();
        assert!((e.value + 2.0).abs() < 1e-11, "{e:?}");
        let e = integrate_graded(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, true, false, &opts).unwrap();
        assert!((e.value - 2.0).abs() < 1e-11);
    }

    #[test]
    fn empty_interval_is_zero() {
        let e = integrate(|x| x, &[1.0, 1.0], &QuadOptions::default()).unwrap();
        assert_eq!(e.value, 0.0);
    }
}
