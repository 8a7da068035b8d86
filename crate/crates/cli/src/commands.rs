//! One function per subcommand.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use scalewave_core::duhamel::{derivative_weight, picard_solve, thread_pool, value_weight, PicardOptions};
use scalewave_core::estimates::{run_harness, HarnessOptions};
use scalewave_core::exponents::{nu_for_unit_delta, summary};
use scalewave_core::fd::{blowup_probe, cross_validate, self_convergence, ConvergenceStudy, CrossValidation};
use scalewave_core::field::bracket;
use scalewave_core::propagator::{data_family, v0};
use scalewave_core::{Boundary, BumpProfile, FdConfig, FdStatus, GridConfig, ModelParams, Propagator, RadialProfile, ZeroProfile};

use crate::config::{Command, DataKind, ExperimentConfig};
use crate::output::{num, slug, write_csv, write_json, AppError};

pub fn run(cfg: &ExperimentConfig) -> Result<(), AppError> {
    match cfg.command {
        Command::Exponents => exponents(cfg),
        Command::PropagateLinear => propagate_linear(cfg),
        Command::SolveSemilinear => solve_semilinear(cfg),
        Command::VerifyEstimates => verify_estimates(cfg),
        Command::CompareOracle => compare_oracle(cfg),
        Command::BlowupProbe => probe(cfg),
    }
}

fn params(cfg: &ExperimentConfig) -> Result<ModelParams, AppError> {
    Ok(ModelParams::new(cfg.n, cfg.mu, cfg.p, cfg.kappa, cfg.epsilon)?)
}

fn exponents(cfg: &ExperimentConfig) -> Result<(), AppError> {
    let s = summary(cfg.n, cfg.mu, Some(cfg.p), Some(cfg.kappa))?;
    write_json(&cfg.out.join("exponents.json"), &s)?;
    println!("{}", serde_json::to_string_pretty(&s).unwrap_or_default());
    Ok(())
}

type DataPair = (Arc<dyn RadialProfile>, Arc<dyn RadialProfile>);

fn data(cfg: &ExperimentConfig, p: &ModelParams) -> DataPair {
    match cfg.data {
        DataKind::Family => {
            let fam = data_family(p, cfg.kappa_bar);
            (Arc::new(fam.f), Arc::new(fam.g))
        }
        DataKind::Bump => (Arc::new(BumpProfile::new(cfg.bump_lo, cfg.bump_hi, cfg.epsilon)), Arc::new(ZeroProfile)),
        DataKind::Zero => (Arc::new(ZeroProfile), Arc::new(ZeroProfile)),
    }
}

/// Evaluation nodes `ln(1+t)`, `ln r` equispaced, jittered by the seed.
fn nodes(cfg: &ExperimentConfig) -> Result<Vec<(f64, f64)>, AppError> {
    let (nt, nr) = cfg.tensor_grid()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ds = (1.0 + cfg.tmax).ln() / (nt - 1) as f64;
    let dl = (cfg.rmax / cfg.rmin).ln() / (nr - 1) as f64;
    let mut out = Vec::with_capacity(nt * nr);
    for i in 0..nt {
        for j in 0..nr {
            let mut s = i as f64 * ds;
            let mut l = cfg.rmin.ln() + j as f64 * dl;
            if cfg.jitter > 0.0 {
                if i > 0 && i + 1 < nt {
                    s += cfg.jitter * ds * rng.gen_range(-1.0..1.0);
                }
                if j > 0 && j + 1 < nr {
                    l += cfg.jitter * dl * rng.gen_range(-1.0..1.0);
                }
            }
            let t = if i + 1 == nt { cfg.tmax } else { s.exp_m1() };
            let r = match j {
                0 => cfg.rmin,
                _ if j + 1 == nr => cfg.rmax,
                _ => l.exp(),
            };
            out.push((t, r));
        }
    }
    Ok(out)
}

fn propagate_linear(cfg: &ExperimentConfig) -> Result<(), AppError> {
    let p = params(cfg)?;
    let (f, g) = data(cfg, &p);
    let prop = Arc::new(Propagator::new(cfg.n)?);
    let sol = v0(f, g, prop);
    let points = nodes(cfg)?;
    let pool = thread_pool()?;
    let values: Vec<scalewave_core::Result<(f64, f64)>> = pool.install(|| {
        points
            .par_iter()
            .map(|&(t, r)| Ok((sol.value(t, r)?, sol.r_derivative(t, r)?)))
            .collect()
    });
    let mut rows = Vec::with_capacity(points.len());
    for (&(t, r), res) in points.iter().zip(values) {
        let (v, d) = res?;
        rows.push(vec![
            num(t),
            num(r),
            num(v),
            num(d),
            num(v / value_weight(p.m, p.kappa, t, r)),
            num(d / derivative_weight(p.m, p.kappa, t, r)),
        ]);
    }
    write_csv(
        &cfg.out.join("linear.csv"),
        &["t", "r", "v0", "dr_v0", "weight_ratio_value", "weight_ratio_deriv"],
        &rows,
    )?;
    println!("wrote {} points to {}", rows.len(), cfg.out.join("linear.csv").display());
    Ok(())
}

fn solve_semilinear(cfg: &ExperimentConfig) -> Result<(), AppError> {
    if cfg.data != DataKind::Family {
        return Err(AppError::Config(crate::config::ConfigError::Invalid {
            key: "data".into(),
            reason: "solve-semilinear runs the family data; scale it with epsilon".into(),
        }));
    }
    let p = params(cfg)?;
    let (nt, nr) = cfg.tensor_grid()?;
    let opts = PicardOptions {
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        grid: GridConfig {
            nt,
            nr,
            t_max: cfg.tmax,
            r_min: cfg.rmin,
            r_max: cfg.rmax,
        },
        ..PicardOptions::default()
    };
    let sol = picard_solve(&p, cfg.kappa_bar, &opts)?;
    write_json(&cfg.out.join("trace.json"), &sol.trace)?;
    let field = &sol.field;
    let rows: Vec<Vec<String>> = (0..field.spec.len())
        .map(|k| {
            let (t, r) = field.spec.node(k);
            let v = field.node_value(k);
            vec![
                num(t),
                num(r),
                num(v),
                num(field.node_derivative(k)),
                num(v * bracket(t).powf(-0.5 * p.mu)),
                num(field.psi[k]),
            ]
        })
        .collect();
    write_csv(&cfg.out.join("field.csv"), &["t", "r", "v", "dr_v", "u", "weight_ratio"], &rows)?;
    let t = &sol.trace;
    println!(
        "iterations {} converged {} residual {:.3e} norm {:.6e}",
        t.iterates.len(),
        t.converged,
        t.residual,
        t.norm_history.last().copied().unwrap_or(0.0)
    );
    if !t.converged {
        return Err(AppError::Failed(format!(
            "Picard iteration did not reach tol {} in {} iterations",
            cfg.tol, cfg.max_iter
        )));
    }
    Ok(())
}

fn verify_estimates(cfg: &ExperimentConfig) -> Result<(), AppError> {
    let p = params(cfg)?;
    let opts = HarnessOptions {
        threshold: cfg.threshold,
        lattice_extent: cfg.lattice_extent,
        ..HarnessOptions::default()
    };
    let s = run_harness(&p, &opts)?;
    let dir = cfg.out.join("reports");
    crate::output::ensure_dir(&dir)?;
    let mut rows = Vec::new();
    for (i, r) in s.reports.iter().enumerate() {
        write_json(&dir.join(format!("{:02}_{}.json", i, slug(&r.name))), r)?;
        rows.push(vec![r.name.clone(), num(r.weighted_sup), num(r.stability), r.pass.to_string()]);
        println!("{:<5} {:<48} sup {:>12.5e} stability {:.4}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.weighted_sup, r.stability);
    }
    for c in &s.negative_controls {
        println!("{:<5} negative control {}: {}", if c.failed_as_designed { "PASS" } else { "FAIL" }, c.name, c.outcome);
    }
    for n in &s.notices {
        println!("note: {n}");
    }
    write_csv(&cfg.out.join("summary.csv"), &["name", "weighted_sup", "stability", "pass"], &rows)?;
    write_json(&cfg.out.join("summary.json"), &s)?;
    if !s.all_pass {
        return Err(AppError::Failed("some estimate checks failed".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleReport<'a> {
    cross_validation: &'a CrossValidation,
    convergence: &'a ConvergenceStudy,
}

fn compare_oracle(cfg: &ExperimentConfig) -> Result<(), AppError> {
    if cfg.data == DataKind::Family {
        return Err(AppError::Config(crate::config::ConfigError::Invalid {
            key: "data".into(),
            reason: "the oracle needs data supported away from the origin (bump or zero)".into(),
        }));
    }
    let p = params(cfg)?;
    let (f, g) = data(cfg, &p);
    let h = 1.0 / cfg.cells_per_unit()? as f64;
    let prop = Arc::new(Propagator::new(cfg.n)?);
    let window = (cfg.window_lo, cfg.window_hi);
    let cv = cross_validate(prop, f.clone(), g.clone(), &cfg.times, window, h, cfg.spacing)?;
    let t_end = cfg.times.iter().copied().fold(0.0, f64::max);
    let base = FdConfig::free_wave(cfg.n, cv.r_max, h, t_end);
    let conv = self_convergence(&base, f.as_ref(), g.as_ref(), window)?;
    let rows: Vec<Vec<String>> = cv
        .rows
        .iter()
        .map(|r| vec![num(r.t), num(r.max_abs_diff), num(r.max_reference), num(r.rel_linf), num(r.at_r)])
        .collect();
    write_csv(&cfg.out.join("errors.csv"), &["t", "max_abs_diff", "max_reference", "rel_linf", "at_r"], &rows)?;
    let snaps: Vec<Vec<String>> = cv
        .run
        .snapshots
        .iter()
        .flat_map(|s| cv.run.r.iter().zip(&s.u).map(move |(&r, &u)| vec![num(s.t), num(r), num(u)]))
        .collect();
    write_csv(&cfg.out.join("snapshots.csv"), &["t", "r", "u"], &snaps)?;
    write_json(
        &cfg.out.join("comparison.json"),
        &OracleReport {
            cross_validation: &cv,
            convergence: &conv,
        },
    )?;
    for r in &cv.rows {
        println!("t {:>6} rel_linf {:.4e} at r {:.4}", r.t, r.rel_linf, r.at_r);
    }
    println!("self-convergence order {:.3} (h = {}, {}, {})", conv.order, conv.hs[0], conv.hs[1], conv.hs[2]);
    Ok(())
}

#[derive(Serialize)]
struct ProbeReport {
    config: FdConfig,
    thresholds: Vec<(f64, Option<f64>)>,
}

fn probe(cfg: &ExperimentConfig) -> Result<(), AppError> {
    if cfg.data == DataKind::Family {
        return Err(AppError::Config(crate::config::ConfigError::Invalid {
            key: "data".into(),
            reason: "the oracle needs data supported away from the origin (bump or zero)".into(),
        }));
    }
    let (f, g): DataPair = match cfg.data {
        DataKind::Zero => (Arc::new(ZeroProfile), Arc::new(ZeroProfile)),
        _ => (Arc::new(BumpProfile::new(cfg.bump_lo, cfg.bump_hi, 1.0)), Arc::new(ZeroProfile)),
    };
    let base = FdConfig {
        n: cfg.n,
        mu: cfg.mu,
        nu: nu_for_unit_delta(cfg.mu)?,
        p: Some(cfg.powers[0]),
        r_max: cfg.rmax,
        h: 1.0 / cfg.cells_per_unit()? as f64,
        cfl: cfg.cfl,
        stability_guard: true,
        t_end: cfg.tmax,
        boundary: Boundary::Absorbing,
        blowup_factor: 1e6,
        snapshot_times: Vec::new(),
    };
    let s = blowup_probe(&base, &cfg.powers, &cfg.epsilons, f.as_ref(), g.as_ref())?;
    let rows: Vec<Vec<String>> = s
        .rows
        .iter()
        .map(|row| {
            let (status, t) = match row.status {
                FdStatus::Completed => ("completed", String::new()),
                FdStatus::BlowupDetected { t } => ("blowup_detected", num(t)),
                FdStatus::Unstable { t } => ("unstable", num(t)),
            };
            vec![num(row.p), num(row.epsilon), status.to_string(), t]
        })
        .collect();
    write_csv(&cfg.out.join("probe.csv"), &["p", "epsilon", "status", "t_star"], &rows)?;
    write_json(
        &cfg.out.join("probe.json"),
        &ProbeReport {
            config: base,
            thresholds: s.thresholds.clone(),
        },
    )?;
    for (p, eps) in &s.thresholds {
        match eps {
            Some(e) => println!("p {p}: largest completed epsilon {e}"),
            None => println!("p {p}: no completed epsilon"),
        }
    }
    Ok(())
}
