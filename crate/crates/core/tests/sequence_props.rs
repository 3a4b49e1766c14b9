use lorenz_lab::conditions::{sweep_condition_a, ConditionAConfig};
use lorenz_lab::dynamics::equilibria;
use lorenz_lab::sequence::{
    endpoint_behaviors, point_on_l, prepare, resample, shoot_word_on, sigma_transition_audit, AnchorKind, Letter, ShootConfig, TargetWord,
};
use lorenz_lab::{IntegratorConfig, Params};

fn p12() -> Params {
    Params::new(10.0, 1.0, 12.0).unwrap()
}

fn word(s: &str) -> TargetWord {
    s.parse().unwrap()
}

#[test]
fn points_on_the_segment() {
    let cfg = ShootConfig::default();
    let g = prepare(&p12(), &cfg).unwrap();
    assert_eq!(point_on_l(1.0, &g).unwrap(), equilibria(&g.params).unwrap().p0);
    assert_eq!(point_on_l(0.0, &g).unwrap(), g.p1);
    let mid = point_on_l(0.5, &g).unwrap();
    assert_eq!(mid.x, mid.y);
    assert!(point_on_l(1.5, &g).is_err());
}

#[test]
fn audit_alarms() {
    let l = Letter::Closed;
    assert!(sigma_transition_audit(&[(0.0, l(3)), (0.1, l(3)), (0.2, l(1))]).is_empty());
    assert!(sigma_transition_audit(&[(0.0, l(1)), (0.1, l(1)), (0.2, l(1))]).is_empty());
    let alarms = sigma_transition_audit(&[(0.0, l(4)), (0.1, l(1))]);
    assert_eq!(alarms.len(), 1);
    assert_eq!((alarms[0].alpha_left, alarms[0].alpha_right), (0.0, 0.1));
    assert_eq!(sigma_transition_audit(&[(0.0, Letter::Open(5)), (0.1, l(0))]).len(), 1);
}

#[test]
fn certificates_are_nested_and_anchors_reproducible() {
    let cfg = ShootConfig::default();
    let g = prepare(&p12(), &cfg).unwrap();
    for w in ["1", "3", "131", "313"] {
        let r = shoot_word_on(&word(w), &g, &cfg).unwrap();
        assert_eq!(r.achieved_word, word(w).letters(), "{w}");
        assert_eq!(r.halved_tolerance_word, word(w).letters(), "{w}");
        let mut outer = (0.0, 1.0);
        for c in &r.certificates {
            assert!(outer.0 <= c.parent.0 && c.parent.1 <= outer.1, "{w}: parent escapes");
            assert!(c.parent.0 <= c.interval.0 && c.interval.1 <= c.parent.1 && c.interval.0 < c.interval.1);
            outer = c.interval;
            for a in &c.anchors {
                assert!(c.parent.0 <= a.alpha && a.alpha <= c.parent.1);
                let s = resample(&g, &cfg, a.alpha, c.step + 1).unwrap();
                assert_eq!((s.letter(c.step), s.letter(c.step + 1)), (a.sigma_n, a.sigma_next), "{w} {:?}", a.kind);
                match a.kind {
                    AnchorKind::A => assert_eq!(a.sigma_n, Letter::Closed(1)),
                    AnchorKind::B => assert_eq!(a.sigma_n, Letter::Closed(3)),
                    AnchorKind::C => assert!(a.sigma_n.at_least_four()),
                }
            }
        }
        assert_eq!(r.alpha_interval, outer);
        assert!(outer.0 <= r.witness_alpha && r.witness_alpha <= outer.1);
        assert_eq!(r.final_state.realized_prefix, word(w).letters());
        for s in &r.final_state.continuity_grid {
            assert!((1..=w.len() + 1).all(|k| s.zero(k).is_some_and(f64::is_finite)));
        }
    }
}

#[test]
fn witness_of_131_holds_at_tenfold_tighter_tolerance() {
    let cfg = ShootConfig::default();
    let g = prepare(&p12(), &cfg).unwrap();
    let r = shoot_word_on(&word("131"), &g, &cfg).unwrap();
    let tight = ShootConfig { integrator: IntegratorConfig::default().scaled_tolerances(0.1), ..cfg };
    let s = resample(&g, &tight, r.witness_alpha, 3).unwrap();
    assert_eq!(&s.word()[..3], [1, 3, 1]);
}

#[test]
fn single_letters_agree_with_a_coarse_scan() {
    let cfg = ShootConfig::default();
    let g = prepare(&p12(), &cfg).unwrap();
    let scan: Vec<Letter> = (0..40).map(|i| resample(&g, &cfg, i as f64 / 40.0, 1).unwrap().letter(1)).collect();
    for (w, l) in [("1", 1), ("3", 3)] {
        assert!(scan.contains(&Letter::Closed(l)), "coarse scan misses {l}");
        let r = shoot_word_on(&word(w), &g, &cfg).unwrap();
        assert_eq!(resample(&g, &cfg, r.witness_alpha, 1).unwrap().letter(1), Letter::Closed(l));
    }
}

#[test]
fn endpoints_behave_wherever_condition_a_holds() {
    let cfg = ShootConfig::default();
    let grid: Vec<f64> = (0..=12).map(|k| 8.5 + 0.7 * k as f64).collect();
    let sweep = sweep_condition_a(10.0, 1.0, &grid, &ConditionAConfig::default()).unwrap();
    let holding: Vec<f64> = sweep.grid.iter().zip(&sweep.verdicts).filter(|(_, v)| v.holds).map(|(r, _)| *r).collect();
    assert!(holding.len() >= 5);
    let step = holding.len() / 5;
    for r in holding.iter().step_by(step).take(5) {
        let rep = endpoint_behaviors(&Params::new(10.0, 1.0, *r).unwrap(), &cfg, 0.999, 0.01, 30.0).unwrap();
        assert!(rep.pass, "R={r}: {rep:?}");
    }
}

#[test]
fn endpoint_at_the_equilibrium_is_rejected() {
    let cfg = ShootConfig::default();
    assert!(endpoint_behaviors(&p12(), &cfg, 1.0, 0.01, 30.0).is_err());
}
