use std::sync::Arc;

use proptest::prelude::*;
use scalewave_core::fd::{cross_validate, self_convergence};
use scalewave_core::*;

fn bump() -> BumpProfile {
    BumpProfile::new(2.0, 3.0, 1.0)
}

#[test]
fn zero_data_gives_zero_in_linear_and_semilinear_modes() {
    for p in [None, Some(1.72)] {
        let mut cfg = FdConfig::free_wave(4, 6.0, 1.0 / 32.0, 3.0);
        cfg.mu = 2.0;
        cfg.p = p;
        let run = fd_solve(&cfg, &ZeroProfile, &ZeroProfile).unwrap();
        assert_eq!(run.status, FdStatus::Completed);
        assert!(run.snapshots.iter().all(|s| s.u.iter().all(|&x| x == 0.0)));
    }
}

#[test]
fn agrees_with_kernel_propagator_on_free_wave() {
    let prop = Arc::new(Propagator::new(4).unwrap());
    let f: Arc<dyn RadialProfile> = Arc::new(bump());
    let g: Arc<dyn RadialProfile> = Arc::new(ZeroProfile);
    let cv = cross_validate(prop, f, g, &[1.0, 2.0, 4.0], (1.0, 8.0), 1.0 / 128.0, 1.0 / 32.0).unwrap();
    assert_eq!(cv.rows.len(), 3);
    assert!(cv.max_rel_linf <= 0.02, "{:?}", cv.rows);
}

#[test]
fn second_order_self_convergence() {
    let cfg = FdConfig::free_wave(4, 12.0, 1.0 / 128.0, 4.0);
    let study = self_convergence(&cfg, &bump(), &ZeroProfile, (1.0, 8.0)).unwrap();
    assert!(study.order >= 1.8, "{study:?}");
}

#[test]
fn nothing_outside_the_light_cone() {
    let (b, t) = (3.0, 4.0);
    let mut cfg = FdConfig::free_wave(4, 10.0, 1.0 / 1024.0, t);
    cfg.snapshot_times = vec![0.25, 0.5, 1.0, 2.0, 3.0, t];
    let run = fd_solve(&cfg, &bump(), &ZeroProfile).unwrap();
    for s in &run.snapshots {
        let peak = s.u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (&r, &u) in run.r.iter().zip(&s.u) {
            if r > b + s.t + 2.0 * cfg.h {
                assert!(u.abs() < 1e-8 * peak, "t={} r={r}: {u}", s.t);
            }
        }
    }
}

#[test]
fn snapshots_follow_requested_times() {
    let mut cfg = FdConfig::free_wave(4, 6.0, 1.0 / 32.0, 2.0);
    cfg.snapshot_times = vec![2.0, 0.0, 1.3];
    let run = fd_solve(&cfg, &bump(), &ZeroProfile).unwrap();
    let times: Vec<f64> = run.snapshots.iter().map(|s| s.t).collect();
    assert_eq!(times, vec![2.0, 0.0, 1.3]);
    let f = bump();
    for (&r, &u) in run.r.iter().zip(&run.snapshots[1].u) {
        assert_eq!(u, f.eval(r));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn linear_mode_is_linear(a in -5.0f64..5.0, mu in 0.0f64..3.0) {
        let mut cfg = FdConfig::free_wave(4, 5.0, 1.0 / 16.0, 1.5);
        cfg.mu = mu;
        let base = fd_solve(&cfg, &bump(), &ZeroProfile).unwrap();
        let scaled = fd_solve(&cfg, &BumpProfile::new(2.0, 3.0, a), &ZeroProfile).unwrap();
        for (x, y) in base.snapshots[0].u.iter().zip(&scaled.snapshots[0].u) {
            prop_assert!((a * x - y).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn damping_never_adds_energy(mu in 0.5f64..4.0) {
        let mut cfg = FdConfig::free_wave(4, 6.0, 1.0 / 32.0, 2.0);
        cfg.mu = mu;
        cfg.boundary = Boundary::Reflecting;
        let run = fd_solve(&cfg, &bump(), &ZeroProfile).unwrap();
        for w in run.energy_history.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 * (1.0 + 1e-12));
        }
    }
}
