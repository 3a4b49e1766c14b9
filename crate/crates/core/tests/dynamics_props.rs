use lorenz_lab::dynamics::{
    complex_pair_at_p0, ellipsoid_bound, ellipsoid_value, equilibria, jacobian, m_cap_e_extent, monitor_s_q, point_on_m, rhs,
    unstable_eigenpair,
};
use lorenz_lab::manifold::jacobian_fd_error;
use lorenz_lab::{Params, State};
use proptest::prelude::*;

fn params() -> impl Strategy<Value = Params> {
    (0.5f64..20.0, 0.1f64..5.0, 1.05f64..200.0).prop_map(|(s, q, r)| Params::new(s, q, r).unwrap())
}

fn state() -> impl Strategy<Value = State> {
    (-30.0f64..30.0, -30.0f64..30.0, -10.0f64..60.0).prop_map(|(x, y, z)| State::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn equilibria_are_zeros_of_the_field(p in params()) {
        let eq = equilibria(&p).unwrap();
        for e in eq.members() {
            let scale = 1.0 + e.max_abs() * e.max_abs();
            prop_assert!(rhs(&e, &p).max_abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn unstable_eigenpair_is_an_eigenpair(p in params()) {
        let (lambda, v) = unstable_eigenpair(&p).unwrap();
        prop_assert!(lambda > 0.0);
        prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        let j = jacobian(&State::ORIGIN, &p);
        let jv = j * nalgebra::Vector3::new(v.x, v.y, v.z);
        let res = (jv - nalgebra::Vector3::new(v.x, v.y, v.z) * lambda).norm();
        prop_assert!(res < 1e-10 * (1.0 + p.r.max(p.s)), "residual {res}");
    }

    #[test]
    fn ellipsoid_center_and_origin(p in params()) {
        let c = State::new(0.0, 0.0, 2.0 * p.r);
        prop_assert_eq!(ellipsoid_value(&c, &p), 0.0);
        let v0 = ellipsoid_value(&State::ORIGIN, &p);
        prop_assert!((v0 - 40.0 * p.r).abs() <= 1e-12 * 40.0 * p.r);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jacobian_matches_central_differences(p in params(), s in state()) {
        let err = jacobian_fd_error(&s, &p, 1e-6);
        prop_assert!(err < 1e-6 * (1.0 + s.max_abs()), "fd error {err}");
    }

    #[test]
    fn m_cap_e_endpoints_lie_on_the_boundary(r in 1.5f64..500.0) {
        let p = Params::new(10.0, 1.0, r).unwrap();
        let (lo, hi) = m_cap_e_extent(&p).unwrap();
        for xi in [lo, hi] {
            let v = ellipsoid_value(&point_on_m(xi, &p), &p);
            prop_assert!((v - ellipsoid_bound(&p)).abs() < 1e-9 * ellipsoid_bound(&p));
        }
    }
}

#[test]
fn hand_values() {
    let p = Params::new(10.0, 1.0, 12.0).unwrap();
    assert_eq!(rhs(&State::ORIGIN, &p), State::ORIGIN);
    assert_eq!(rhs(&State::new(1.0, 0.0, 0.0), &p), State::new(-10.0, 12.0, 0.0));
    let j = jacobian(&State::ORIGIN, &p);
    let expect = [[-10.0, 10.0, 0.0], [12.0, -1.0, 0.0], [0.0, 0.0, -1.0]];
    for (i, row) in expect.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            assert_eq!(j[(i, k)], *v);
        }
    }
    let p0 = equilibria(&p).unwrap().p0;
    assert!((p0.x - 11f64.sqrt()).abs() < 1e-15 && p0.z == 11.0);
    assert!(rhs(&p0, &p).max_abs() < 1e-13);
    let (lambda, _) = unstable_eigenpair(&p).unwrap();
    assert!((lambda - (-11.0 + 561f64.sqrt()) / 2.0).abs() < 1e-12);
    let v = ellipsoid_value(&p0, &p);
    assert!((v - (11.0 + 10.0 / 12.0 * 11.0 + 10.0 / 12.0 * 169.0)).abs() < 1e-12);
    assert!(v < 480.0);
    assert!((ellipsoid_value(&State::new(0.0, 0.0, 11.0), &p) - 10.0 / 12.0 * 169.0).abs() < 1e-12);
    let (_, hi) = m_cap_e_extent(&p).unwrap();
    assert!((hi - (4070.0f64 / 22.0).sqrt()).abs() < 1e-12);
    let (sv, qv) = monitor_s_q(&State::new(0.1, 1.0, 0.05));
    assert!((sv - 0.00125).abs() < 1e-15 && (qv - 0.0495).abs() < 1e-15);
}

#[test]
fn spectrum_at_p0() {
    assert!(complex_pair_at_p0(&Params::new(10.0, 8.0 / 3.0, 28.0).unwrap()).unwrap());
    assert!(complex_pair_at_p0(&Params::new(10.0, 1.0, 12.0).unwrap()).unwrap());
    assert!(!complex_pair_at_p0(&Params::new(10.0, 1.0, 1.0001).unwrap()).unwrap());
    assert_eq!(equilibria(&Params::new(10.0, 8.0 / 3.0, 28.0).unwrap()).unwrap().p0.z, 27.0);
}
