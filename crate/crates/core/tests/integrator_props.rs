use lorenz_lab::dynamics::{equilibria, rhs};
use lorenz_lab::integrator::{locate_event, Axis};
use lorenz_lab::manifold::{gamma_plus, SeedConfig};
use lorenz_lab::{integrate, EventSpec, EventTag, IntegratorConfig, Params, State, Trajectory};
use proptest::prelude::*;

fn p12() -> Params {
    Params::new(10.0, 1.0, 12.0).unwrap()
}

fn start() -> impl Strategy<Value = State> {
    (-15.0f64..15.0, -15.0f64..15.0, 0.0f64..30.0).prop_map(|(x, y, z)| State::new(x, y, z))
}

fn live(tr: &Trajectory, tag: EventTag) -> Vec<f64> {
    tr.events.iter().filter(|e| e.kind == tag && !e.at_start && !e.degenerate).map(|e| e.t).collect()
}

/// Sign changes of `g` on a grid of sixteen points per accepted step.
fn oversampled_changes(tr: &Trajectory, g: impl Fn(&State) -> f64) -> usize {
    let pts = tr.samples(16);
    pts.windows(2).filter(|w| g(&w[0].1).signum() * g(&w[1].1).signum() < 0.0).count()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn no_sign_change_goes_unrecorded(s in start(), t in 2.0f64..20.0) {
        let p = p12();
        let cfg = IntegratorConfig::default().with_horizon(t);
        let tr = integrate(s, &p, &cfg, &[EventSpec::x_zero(), EventSpec::xprime()]).unwrap();
        let xz = tr.events_of(EventTag::XZero).filter(|e| !e.at_start).count();
        let xp = tr.events_of(EventTag::XprimeSignChange).filter(|e| !e.at_start).count();
        let xz_grid = oversampled_changes(&tr, |s| s.x);
        let xp_grid = oversampled_changes(&tr, |s| s.y - s.x);
        // The grid can miss close pairs but never sees a change the events lack.
        prop_assert!(xz_grid <= xz, "x: grid {xz_grid} events {xz}");
        prop_assert!(xp_grid <= xp, "x': grid {xp_grid} events {xp}");
        prop_assert_eq!(xz_grid % 2, xz % 2);
    }

    #[test]
    fn forward_then_backward_returns(s in start(), t in 0.01f64..0.25) {
        let p = p12();
        let cfg = IntegratorConfig::default().with_horizon(t);
        let end = integrate(s, &p, &cfg, &[]).unwrap().final_state();
        let back = integrate(end, &p, &cfg.backward(), &[]).unwrap().final_state();
        prop_assert!(back.distance(&s) < 1e-6, "returned {} away", back.distance(&s));
    }

    #[test]
    fn xprime_events_are_plane_crossings(s in start()) {
        let p = p12();
        let cfg = IntegratorConfig::default().with_horizon(15.0);
        let tr = integrate(s, &p, &cfg, &[EventSpec::xprime(), EventSpec::plane_xy()]).unwrap();
        let xp = live(&tr, EventTag::XprimeSignChange);
        let pl: Vec<f64> = tr
            .events
            .iter()
            .filter(|e| e.kind == EventTag::PlaneXyCross && !e.at_start && !e.degenerate)
            .filter(|e| (e.state.x * (p.r - 1.0 - e.state.z)).abs() > cfg.tangency_tol)
            .map(|e| e.t)
            .collect();
        prop_assert_eq!(xp.len(), pl.len());
        for (a, b) in xp.iter().zip(&pl) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}

/// Halving the tolerances on the reference branch runs moves the end state
/// by less than a hundred times the finer tolerance.
#[test]
fn halving_tolerances_barely_moves_the_end() {
    for (q, r, horizon) in [(1.0, 12.0, 50.0), (1.0, 1000.0, 5.0), (8.0 / 3.0, 28.0, 10.0)] {
        let p = Params::new(10.0, q, r).unwrap();
        let seed = SeedConfig::default();
        let base = IntegratorConfig::default().with_horizon(horizon);
        let a = gamma_plus(&p, &seed, &base, &[]).unwrap().final_state();
        let fine = base.scaled_tolerances(0.5);
        let b = gamma_plus(&p, &seed, &fine, &[]).unwrap().final_state();
        let bound = 100.0 * (fine.rel_tol * b.max_abs() + fine.abs_tol);
        assert!(a.distance(&b) < bound, "R={r}: moved {} > {bound}", a.distance(&b));
    }
}

#[test]
fn constant_solution_at_p0() {
    let p = p12();
    let p0 = equilibria(&p).unwrap().p0;
    let tr = integrate(p0, &p, &IntegratorConfig::default().with_horizon(30.0), &[EventSpec::x_zero(), EventSpec::xprime()]).unwrap();
    assert!(tr.events.iter().all(|e| e.at_start || e.degenerate));
    for (_, s) in tr.samples(4) {
        assert!(s.distance(&p0) < 1e-12);
    }
    let d = tr.dense[tr.dense.len() / 2];
    assert!(tr.evaluate(0.5 * (d.t0 + d.t1)).unwrap().distance(&p0) < 1e-12);
}

#[test]
fn dense_output_matches_nodes_and_reintegration() {
    let p = p12();
    let cfg = IntegratorConfig::default().with_horizon(10.0);
    let s0 = State::new(1.0, 2.0, 3.0);
    let tr = integrate(s0, &p, &cfg, &[]).unwrap();
    for (k, &t) in tr.times.iter().enumerate() {
        assert_eq!(tr.evaluate(t).unwrap(), tr.states[k]);
    }
    for t in [0.37, 2.2, 5.05, 9.91] {
        let direct = integrate(s0, &p, &cfg.with_horizon(t), &[]).unwrap().final_state();
        let interp = tr.evaluate(t).unwrap();
        assert!(direct.distance(&interp) < 10.0 * cfg.rel_tol * (1.0 + direct.max_abs()), "t={t}");
    }
}

#[test]
fn plane_start_is_not_a_crossing() {
    let p = p12();
    let tr = integrate(State::new(2.0, 2.0, 5.0), &p, &IntegratorConfig::default().with_horizon(0.5), &[EventSpec::plane_xy()]).unwrap();
    let first = tr.events.first().expect("boundary record");
    assert!(first.at_start && first.t == 0.0);
    // d(y - x)/dt = x (R - 1 - z) on the plane.
    let rate = rhs(&State::new(2.0, 2.0, 5.0), &p);
    assert!(((rate.y - rate.x) - 2.0 * (11.0 - 5.0)).abs() < 1e-12);
}

#[test]
fn event_times_stable_under_tolerance_halving() {
    let p = p12();
    let seed = SeedConfig::default();
    let cfg = IntegratorConfig::default().with_horizon(40.0);
    let ev = [EventSpec::x_zero(), EventSpec::xprime()];
    let a = gamma_plus(&p, &seed, &cfg, &ev).unwrap();
    let b = gamma_plus(&p, &seed, &cfg.scaled_tolerances(0.5), &ev).unwrap();
    for tag in [EventTag::XZero, EventTag::XprimeSignChange] {
        let (ta, tb) = (live(&a, tag), live(&b, tag));
        assert_eq!(ta.len(), tb.len());
        for (x, y) in ta.iter().zip(&tb) {
            assert!((x - y).abs() < 1e-8, "{tag:?}: {x} vs {y}");
        }
    }
}

#[test]
fn locate_event_on_linear_function() {
    let root = locate_event(|t| 3.0 * t - 1.0, 0.0, 1.0, 1e-15).unwrap();
    assert!((root - 1.0 / 3.0).abs() < 4.0 * f64::EPSILON);
}

#[test]
fn branch_has_x_zero_at_r_1000() {
    let p = Params::new(10.0, 1.0, 1000.0).unwrap();
    let tr = gamma_plus(&p, &SeedConfig::default(), &IntegratorConfig::default().with_horizon(10.0), &[EventSpec::x_zero()]).unwrap();
    assert!(!live(&tr, EventTag::XZero).is_empty());
}

#[test]
fn plane_events_respect_direction_filters() {
    let p = p12();
    let tr = integrate(
        State::new(1.0, 2.0, 3.0),
        &p,
        &IntegratorConfig::default().with_horizon(20.0),
        &[EventSpec::plane(Axis::Z, 10.0).rising(), EventSpec::plane(Axis::Z, 10.0).falling()],
    )
    .unwrap();
    for e in tr.events.iter().filter(|e| !e.at_start) {
        assert_eq!(e.direction, if e.spec == 0 { 1 } else { -1 });
    }
}
