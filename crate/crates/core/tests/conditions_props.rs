use lorenz_lab::conditions::{
    check_condition_a, check_condition_b, condition_b_sample, continuation_after_exit, find_p1, sweep_condition_a, ConditionAConfig,
    ConditionBConfig, FailureReason, SampleVerdict, Verdict, TRANSVERSAL_TOL,
};
use lorenz_lab::dynamics::{ellipsoid_bound, point_on_m};
use lorenz_lab::manifold::SeedConfig;
use lorenz_lab::{Geometry, IntegratorConfig, Params};

fn grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|k| lo + k as f64 * step).collect()
}

fn p(r: f64) -> Params {
    Params::new(10.0, 1.0, r).unwrap()
}

#[test]
fn reference_verdicts() {
    let cfg = ConditionAConfig::default();
    assert!(check_condition_a(&p(12.0), &cfg).unwrap().holds);
    let low = check_condition_a(&p(5.0), &cfg).unwrap();
    assert!(!low.holds);
    assert!(low.failure_reason.is_some());
    assert!(check_condition_a(&Params::new(10.0, 8.0 / 3.0, 28.0).unwrap(), &cfg).unwrap().holds);
}

#[test]
fn holding_runs_show_the_ordering() {
    let r = check_condition_a(&p(12.0), &ConditionAConfig::default()).unwrap();
    let labels: Vec<&str> = r.ordering.iter().map(|e| e.label.as_str()).collect();
    assert_eq!(&labels[..6], ["tau1", "t1", "tau2", "tau3", "tau4", "tau5"]);
    assert!(r.ordering.windows(2).all(|w| w[0].t < w[1].t));
    assert!(r.t2_infinite || r.t2.unwrap() > r.ordering[5].t);
}

#[test]
fn sweep_brackets_the_holds_region() {
    let r = sweep_condition_a(10.0, 1.0, &grid(5.0, 20.0, 0.1), &ConditionAConfig::default()).unwrap();
    let (lo, hi) = r.estimated_range.unwrap();
    assert!((lo - 8.2).abs() <= 0.5 && (hi - 17.2).abs() <= 0.5, "({lo}, {hi})");
    // Endpoints sit on grid points next to a verdict flip.
    let idx = |x: f64| r.grid.iter().position(|&g| g == x).unwrap();
    let (i, j) = (idx(lo), idx(hi));
    assert!(r.verdicts[i].holds && r.verdicts[j].holds);
    assert!(i == 0 || !r.verdicts[i - 1].holds);
    assert!(j + 1 == r.grid.len() || !r.verdicts[j + 1].holds);
    let empty = sweep_condition_a(10.0, 1.0, &grid(2.0, 4.0, 0.5), &ConditionAConfig::default()).unwrap();
    assert!(empty.estimated_range.is_none());
}

#[test]
fn verdicts_stable_under_tolerance_halving_away_from_the_ends() {
    let cfg = ConditionAConfig::default();
    let sweep = sweep_condition_a(10.0, 1.0, &grid(5.0, 20.0, 0.1), &cfg).unwrap();
    let (lo, hi) = sweep.estimated_range.unwrap();
    let fine = ConditionAConfig { integrator: cfg.integrator.scaled_tolerances(0.5), ..cfg };
    let mut checked = 0;
    for (r, v) in sweep.grid.iter().zip(&sweep.verdicts) {
        if (r - lo).abs() < 0.2 || (r - hi).abs() < 0.2 {
            continue;
        }
        let again = check_condition_a(&p(*r), &fine).unwrap();
        assert_eq!(v.verdict(), again.verdict(), "R={r}");
        checked += 1;
    }
    assert!(checked > 100);
}

#[test]
fn p1_margin_positive_where_condition_a_holds() {
    let cfg = ConditionAConfig::default();
    let sweep = sweep_condition_a(10.0, 1.0, &grid(5.0, 20.0, 0.5), &cfg).unwrap();
    let mut holding = 0;
    for v in sweep.verdicts.iter().filter(|v| v.verdict() == Verdict::Holds) {
        let r = find_p1(&v.params, &cfg.seed, &cfg.integrator, 40.0).unwrap();
        assert!(r.margin > 0.0, "R={}: margin {}", v.params.r, r.margin);
        assert!(r.transversality > TRANSVERSAL_TOL);
        assert!(r.p1.x == r.p1.y);
        holding += 1;
    }
    assert!(holding >= 10);
}

#[test]
fn no_crossing_in_the_small_r_regime() {
    let r = find_p1(&p(1.01), &SeedConfig::default(), &IntegratorConfig::default(), 40.0);
    assert_eq!(r.unwrap_err().code(), "NO_CROSSING");
    let miss = check_condition_a(&p(1.01), &ConditionAConfig::default()).unwrap();
    assert_eq!(miss.failure_reason, Some(FailureReason::NoXZero));
}

fn geometry() -> Geometry {
    let params = p(12.0);
    let rep = find_p1(&params, &SeedConfig::default(), &IntegratorConfig::default(), 40.0).unwrap();
    Geometry::new(params, rep.p1).unwrap()
}

#[test]
fn backward_orbits_never_reenter_the_ellipsoid() {
    let g = geometry();
    let cfg = ConditionBConfig::default();
    let mut checked = 0;
    for k in 0..10 {
        let xi = -12.0 + 2.4 * k as f64 + 0.123;
        let v = condition_b_sample(&g, xi, &cfg);
        let Some(t_exit) = v.t_exit else { continue };
        let values = continuation_after_exit(&point_on_m(xi, &g.params), &g.params, t_exit, 1.0, &cfg.integrator);
        assert!(values.len() > 2, "xi={xi}");
        assert!(values[0].1 >= ellipsoid_bound(&g.params) * (1.0 - 1e-9));
        // Samples run backward in time: V must not decrease along them.
        for w in values.windows(2) {
            assert!(w[1].0 < w[0].0);
            assert!(w[1].1 >= w[0].1 * (1.0 - 1e-12), "xi={xi}: V fell from {} to {}", w[0].1, w[1].1);
        }
        checked += 1;
    }
    assert_eq!(checked, 10);
}

#[test]
fn condition_b_is_deterministic() {
    let cfg = ConditionBConfig { n_samples: 48, ..ConditionBConfig::default() };
    let a = check_condition_b(&p(12.0), &cfg).unwrap();
    let b = check_condition_b(&p(12.0), &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    for s in &a.samples {
        if s.verdict == SampleVerdict::LeavesEBeforeL {
            assert!(s.min_dist_to_l > cfg.l_tol && s.t_exit.unwrap() < 0.0);
        }
    }
}

#[test]
fn sample_next_to_p0_runs() {
    let g = geometry();
    let cfg = ConditionBConfig::default();
    let xi0 = 11f64.sqrt();
    let v = condition_b_sample(&g, xi0 + 2.0 * cfg.delta, &cfg);
    assert!(v.min_dist_to_l.is_finite() || v.verdict == SampleVerdict::Inconclusive);
}

#[test]
fn ellipsoid_coefficient_guard() {
    let err = check_condition_b(&Params::new(8.0, 1.0, 12.0).unwrap(), &ConditionBConfig { n_samples: 4, ..Default::default() });
    assert!(err.is_err());
}
