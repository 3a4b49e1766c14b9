//! The Lorenz vector field and the fixed geometric objects built around it.
//!
//! Everything here is a pure function of `(s, q, R)` and a phase-space point.
//! The coefficient `10` in the trapping ellipsoid is kept literal; it is only
//! known to be invariant for `s` near 10, so callers that rely on it check
//! [`Params::ellipsoid_matches_s`] first.

use std::fmt;
use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use nalgebra::Matrix3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::DynamicsError;

/// Coefficient used in the trapping ellipsoid.
pub const ELLIPSOID_COEFF: f64 = 10.0;

/// Residual bound that every returned equilibrium satisfies.
pub const EQUILIBRIUM_RESIDUAL: f64 = 1e-12;

/// Parameters `(s, q, R)` of the Lorenz system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub s: f64,
    pub q: f64,
    #[serde(rename = "R")]
    pub r: f64,
}

impl Params {
    /// Validated constructor: `s > 0`, `q > 0`, `R > 1`, all finite.
    pub fn new(s: f64, q: f64, r: f64) -> Result<Self, DynamicsError> {
        let p = Params { s, q, r };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.s.is_finite() && self.q.is_finite() && self.r.is_finite()) {
            return Err(DynamicsError::InvalidParams(format!("non-finite parameter in {self}")));
        }
        if self.s <= 0.0 {
            return Err(DynamicsError::InvalidParams(format!("s must be positive, got {}", self.s)));
        }
        if self.q <= 0.0 {
            return Err(DynamicsError::InvalidParams(format!("q must be positive, got {}", self.q)));
        }
        if self.r <= 1.0 {
            return Err(DynamicsError::RNotAboveOne(self.r));
        }
        Ok(())
    }

    pub fn with_r(&self, r: f64) -> Self {
        Params { r, ..*self }
    }

    /// Whether the literal ellipsoid coefficient agrees with `s`.
    pub fn ellipsoid_matches_s(&self) -> bool {
        self.s == ELLIPSOID_COEFF
    }
}

impl fmt::Display for Params {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(s={}, q={}, R={})", self.s, self.q, self.r)
    }
}

/// A point in phase space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl State {
    pub const ORIGIN: State = State { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        State { x, y, z }
    }

    pub fn dot(&self, other: &State) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &State) -> f64 {
        (*self - *other).norm()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        State::new(a[0], a[1], a[2])
    }
}

impl Add for State {
    type Output = State;
    fn add(self, o: State) -> State {
        State::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for State {
    fn add_assign(&mut self, o: State) {
        self.x += o.x;
        self.y += o.y;
        self.z += o.z;
    }
}

impl Sub for State {
    type Output = State;
    fn sub(self, o: State) -> State {
        State::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for State {
    type Output = State;
    fn mul(self, k: f64) -> State {
        State::new(self.x * k, self.y * k, self.z * k)
    }
}

impl Mul<State> for f64 {
    type Output = State;
    fn mul(self, v: State) -> State {
        v * self
    }
}

impl Neg for State {
    type Output = State;
    fn neg(self) -> State {
        State::new(-self.x, -self.y, -self.z)
    }
}

impl Index<usize> for State {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("state index {i} out of range"),
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.12e}, {:.12e}, {:.12e})", self.x, self.y, self.z)
    }
}

/// `(s(y-x), Rx - y - xz, xy - qz)`.
#[inline]
pub fn rhs(state: &State, params: &Params) -> State {
    let State { x, y, z } = *state;
    State::new(params.s * (y - x), params.r * x - y - x * z, x * y - params.q * z)
}

pub fn jacobian(state: &State, params: &Params) -> Matrix3<f64> {
    let State { x, y, z } = *state;
    Matrix3::new(
        -params.s,
        params.s,
        0.0, //
        params.r - z,
        -1.0,
        -x, //
        y,
        x,
        -params.q,
    )
}

/// The three equilibria for `R > 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSet {
    pub origin: State,
    pub p0: State,
    pub p0_mirror: State,
}

impl EquilibriumSet {
    pub fn members(&self) -> [State; 3] {
        [self.origin, self.p0, self.p0_mirror]
    }
}

pub fn equilibria(params: &Params) -> Result<EquilibriumSet, DynamicsError> {
    if params.r <= 1.0 {
        return Err(DynamicsError::RNotAboveOne(params.r));
    }
    let xi = (params.q * (params.r - 1.0)).sqrt();
    let zi = params.r - 1.0;
    Ok(EquilibriumSet { origin: State::ORIGIN, p0: State::new(xi, xi, zi), p0_mirror: State::new(-xi, -xi, zi) })
}

/// Unstable eigenvalue at the origin and its unit eigenvector, oriented
/// with positive `x` and `y` components.
pub fn unstable_eigenpair(params: &Params) -> Result<(f64, State), DynamicsError> {
    if params.r <= 1.0 {
        return Err(DynamicsError::RNotAboveOne(params.r));
    }
    let s = params.s;
    let b = s + 1.0;
    let disc = b * b + 4.0 * s * (params.r - 1.0);
    // Stable form of (-b + sqrt(disc)) / 2 that avoids cancellation near R = 1.
    let lambda = 2.0 * s * (params.r - 1.0) / (b + disc.sqrt());
    let v = State::new(s, s + lambda, 0.0);
    Ok((lambda, v * (1.0 / v.norm())))
}

/// Coefficients `(a, b, c)` of the monic characteristic polynomial
/// `l^3 + a l^2 + b l + c` of a 3x3 matrix.
pub fn characteristic_cubic(m: &Matrix3<f64>) -> (f64, f64, f64) {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let minors = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)] + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    (-trace, minors, -m.determinant())
}

/// Roots of `l^3 + a l^2 + b l + c`; the real root comes first, and a
/// conjugate pair (if any) is ordered with positive imaginary part second.
pub fn cubic_roots(a: f64, b: f64, c: f64) -> [Complex64; 3] {
    let p = |l: f64| ((l + a) * l + b) * l + c;
    // Cauchy bound brackets every real root.
    let bound = 1.0 + a.abs().max(b.abs()).max(c.abs());
    let (mut lo, mut hi) = (-bound, bound);
    if p(lo) > 0.0 {
        std::mem::swap(&mut lo, &mut hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if p(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut r = 0.5 * (lo + hi);
    // Newton polish.
    for _ in 0..3 {
        let dp = (3.0 * r + 2.0 * a) * r + b;
        if dp == 0.0 {
            break;
        }
        let step = p(r) / dp;
        if !step.is_finite() {
            break;
        }
        r -= step;
    }
    // Deflate: l^2 + (a + r) l + (b + (a + r) r).
    let qb = a + r;
    let qc = b + qb * r;
    let disc = qb * qb - 4.0 * qc;
    let (r2, r3) = if disc >= 0.0 {
        let sq = disc.sqrt();
        let big = -0.5 * (qb + qb.signum() * sq);
        if big == 0.0 {
            (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
        } else {
            (Complex64::new(big, 0.0), Complex64::new(qc / big, 0.0))
        }
    } else {
        let re = -0.5 * qb;
        let im = 0.5 * (-disc).sqrt();
        (Complex64::new(re, im), Complex64::new(re, -im))
    };
    [Complex64::new(r, 0.0), r2, r3]
}

/// Jacobian, spectrum and (at the origin) the unstable direction.
#[derive(Clone, Debug, Serialize)]
pub struct LinearizationReport {
    pub jacobian: [[f64; 3]; 3],
    #[serde(serialize_with = "serialize_complex")]
    pub eigenvalues: [Complex64; 3],
    pub unstable_eigenvector: Option<State>,
}

fn serialize_complex<S: serde::Serializer>(v: &[Complex64; 3], ser: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = ser.serialize_seq(Some(3))?;
    for c in v {
        seq.serialize_element(&[c.re, c.im])?;
    }
    seq.end()
}

pub fn linearize(state: &State, params: &Params) -> LinearizationReport {
    let j = jacobian(state, params);
    let (a, b, c) = characteristic_cubic(&j);
    let eigenvalues = cubic_roots(a, b, c);
    let unstable_eigenvector =
        if *state == State::ORIGIN && params.r > 1.0 { unstable_eigenpair(params).ok().map(|(_, v)| v) } else { None };
    let mut rows = [[0.0; 3]; 3];
    for (i, row) in rows.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = j[(i, k)];
        }
    }
    LinearizationReport { jacobian: rows, eigenvalues, unstable_eigenvector }
}

/// True iff the linearization at `p0` has a nonreal conjugate pair.
pub fn complex_pair_at_p0(params: &Params) -> Result<bool, DynamicsError> {
    let eq = equilibria(params)?;
    let roots = linearize(&eq.p0, params).eigenvalues;
    let scale = roots.iter().map(|z| z.norm()).fold(1.0, f64::max);
    Ok(roots.iter().any(|z| z.im.abs() > 1e-12 * scale))
}

/// `x^2 + (10/R) y^2 + (10/R) (z - 2R)^2`; the ellipsoid is `V <= 40 R`.
pub fn ellipsoid_value(state: &State, params: &Params) -> f64 {
    let k = ELLIPSOID_COEFF / params.r;
    let dz = state.z - 2.0 * params.r;
    state.x * state.x + k * state.y * state.y + k * dz * dz
}

pub fn ellipsoid_bound(params: &Params) -> f64 {
    4.0 * ELLIPSOID_COEFF * params.r
}

pub fn inside_ellipsoid(state: &State, params: &Params) -> bool {
    ellipsoid_value(state, params) <= ellipsoid_bound(params)
}

/// The auxiliary functions `S = (y^2 + z^2)/2 - 50 x^2` and `Q = z - x^2/20`.
pub fn monitor_s_q(state: &State) -> (f64, f64) {
    let State { x, y, z } = *state;
    (0.5 * (y * y + z * z) - 50.0 * x * x, z - x * x / 20.0)
}

/// Range of the common coordinate `x = y = xi` on the line `M` that lies
/// inside the ellipsoid. Symmetric, so `xi_min = -xi_max`.
pub fn m_cap_e_extent(params: &Params) -> Result<(f64, f64), DynamicsError> {
    let r = params.r;
    let k = ELLIPSOID_COEFF;
    let radicand = (4.0 * k * r * r - k * (r + 1.0) * (r + 1.0)) / (r + k);
    if !(radicand > 0.0) {
        return Err(DynamicsError::EmptyIntersection(r));
    }
    let xi = radicand.sqrt();
    Ok((-xi, xi))
}

/// Point of the line `M` with `x = y = xi`.
pub fn point_on_m(xi: f64, params: &Params) -> State {
    State::new(xi, xi, params.r - 1.0)
}

/// `p0`, `p1`, the segment `L = [p1, p0]` and the line `M`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub params: Params,
    pub p0: State,
    pub p1: State,
}

impl Geometry {
    /// `p1` must lie on the plane `x = y`.
    pub fn new(params: Params, p1: State) -> Result<Self, DynamicsError> {
        let p0 = equilibria(&params)?.p0;
        Ok(Geometry { params, p0, p1 })
    }

    /// `alpha * p0 + (1 - alpha) * p1`. The common coordinate is computed
    /// once so the result lies exactly on `x = y` whenever `p1` does.
    pub fn point_on_l(&self, alpha: f64) -> State {
        let beta = 1.0 - alpha;
        let xy = alpha * self.p0.x + beta * self.p1.x;
        let y = if self.p1.x == self.p1.y { xy } else { alpha * self.p0.y + beta * self.p1.y };
        State::new(xy, y, alpha * self.p0.z + beta * self.p1.z)
    }

    /// Euclidean distance from `p` to the segment `L`.
    pub fn distance_to_l(&self, p: &State) -> f64 {
        distance_to_segment(p, &self.p1, &self.p0)
    }

    pub fn on_m(&self, p: &State, tol: f64) -> bool {
        (p.x - p.y).abs() <= tol && (p.z - (self.params.r - 1.0)).abs() <= tol
    }
}

pub fn distance_to_segment(p: &State, a: &State, b: &State) -> f64 {
    let ab = *b - *a;
    let len2 = ab.dot(&ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((*p - *a).dot(&ab) / len2).clamp(0.0, 1.0);
    p.distance(&(*a + ab * t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p(s: f64, q: f64, r: f64) -> Params {
        Params::new(s, q, r).unwrap()
    }

    #[test]
    fn rhs_examples() {
        let pr = p(10.0, 1.0, 12.0);
        assert_eq!(rhs(&State::ORIGIN, &pr), State::ORIGIN);
        let r11 = 11f64.sqrt();
        let f = rhs(&State::new(r11, r11, 11.0), &pr);
        assert!(f.norm() < 1e-13, "{f}");
        assert_eq!(rhs(&State::new(1.0, 0.0, 0.0), &pr), State::new(-10.0, 12.0, 0.0));
    }

    #[test]
    fn jacobian_at_origin() {
        let j = jacobian(&State::ORIGIN, &p(10.0, 1.0, 12.0));
        let want = Matrix3::new(-10.0, 10.0, 0.0, 12.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        assert_eq!(j, want);
    }

    #[test]
    fn jacobian_third_column_structure() {
        let pr = p(10.0, 8.0 / 3.0, 28.0);
        let st = State::new(1.5, -2.0, 7.0);
        let j = jacobian(&st, &pr);
        assert_eq!(j[(0, 2)], 0.0);
        assert_eq!(j[(1, 2)], -st.x);
        assert_eq!(j[(2, 2)], -pr.q);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(matches!(Params::new(10.0, 1.0, 1.0), Err(DynamicsError::RNotAboveOne(_))));
        assert!(Params::new(0.0, 1.0, 2.0).is_err());
        assert!(Params::new(10.0, -1.0, 2.0).is_err());
        assert!(Params::new(f64::NAN, 1.0, 2.0).is_err());
        let raw = Params { s: 10.0, q: 1.0, r: 1.0 };
        assert!(equilibria(&raw).is_err());
        assert!(unstable_eigenpair(&raw).is_err());
    }

    #[test]
    fn equilibria_examples() {
        let eq = equilibria(&p(10.0, 1.0, 12.0)).unwrap();
        assert_relative_eq!(eq.p0.x, 3.316_624_790_355_4, epsilon = 1e-12);
        assert_eq!(eq.p0.x, eq.p0.y);
        assert_eq!(eq.p0.z, 11.0);
        assert_eq!(eq.p0_mirror, State::new(-eq.p0.x, -eq.p0.y, 11.0));
        assert_eq!(equilibria(&p(10.0, 8.0 / 3.0, 28.0)).unwrap().p0.z, 27.0);
        // Degenerate limit: p0 collapses onto the origin.
        let near = equilibria(&p(10.0, 1.0, 1.0 + 1e-9)).unwrap();
        assert!(near.p0.norm() < 1e-4);
    }

    #[test]
    fn unstable_eigenvalue_closed_form() {
        let (l, v) = unstable_eigenpair(&p(10.0, 1.0, 12.0)).unwrap();
        assert_relative_eq!(l, (-11.0 + 561f64.sqrt()) / 2.0, max_relative = 1e-14);
        assert!((l - 6.3427).abs() < 1e-4);
        assert_eq!(v.z, 0.0);
        assert!(v.x > 0.0 && v.y > 0.0);
        assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-15);
        let jv = jacobian(&State::ORIGIN, &p(10.0, 1.0, 12.0)) * nalgebra::Vector3::new(v.x, v.y, v.z);
        let res = State::new(jv[0], jv[1], jv[2]) - v * l;
        assert!(res.norm() < 1e-10);
    }

    #[test]
    fn cubic_roots_recover_known_polynomials() {
        // (l - 1)(l + 2)(l - 3) = l^3 - 2 l^2 - 5 l + 6
        let mut re: Vec<f64> = cubic_roots(-2.0, -5.0, 6.0).iter().map(|z| z.re).collect();
        re.sort_by(f64::total_cmp);
        for (got, want) in re.iter().zip([-2.0, 1.0, 3.0]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
        // (l + 1)(l^2 + 4) = l^3 + l^2 + 4 l + 4
        let roots = cubic_roots(1.0, 4.0, 4.0);
        assert_relative_eq!(roots[0].re, -1.0, epsilon = 1e-12);
        assert_relative_eq!(roots[1].im.abs(), 2.0, epsilon = 1e-12);
        assert_relative_eq!(roots[1].re, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ellipsoid_examples() {
        let pr = p(10.0, 1.0, 12.0);
        assert_eq!(ellipsoid_value(&State::ORIGIN, &pr), 480.0);
        assert_eq!(ellipsoid_bound(&pr), 480.0);
        assert_eq!(ellipsoid_value(&State::new(0.0, 0.0, 24.0), &pr), 0.0);
        let p0 = equilibria(&pr).unwrap().p0;
        let v = ellipsoid_value(&p0, &pr);
        assert_relative_eq!(v, 11.0 + 10.0 / 12.0 * 11.0 + 10.0 / 12.0 * 169.0, max_relative = 1e-14);
        assert!(v < 480.0);
    }

    #[test]
    fn monitor_examples() {
        assert_eq!(monitor_s_q(&State::ORIGIN), (0.0, 0.0));
        let (s, q) = monitor_s_q(&State::new(0.1, 1.0, 0.05));
        assert_relative_eq!(s, 0.00125, epsilon = 1e-15);
        assert_relative_eq!(q, 0.0495, epsilon = 1e-15);
    }

    #[test]
    fn m_cap_e_examples() {
        let pr = p(10.0, 1.0, 12.0);
        let (lo, hi) = m_cap_e_extent(&pr).unwrap();
        assert_relative_eq!(hi, (4070.0f64 / 22.0).sqrt(), max_relative = 1e-14);
        assert_relative_eq!(hi, 13.601_470_508_735_444, epsilon = 1e-9);
        assert_eq!(lo, -hi);
        let centre = point_on_m(0.0, &pr);
        assert_relative_eq!(ellipsoid_value(&centre, &pr), 10.0 / 12.0 * 169.0, max_relative = 1e-14);
        for xi in [lo, hi] {
            assert_relative_eq!(ellipsoid_value(&point_on_m(xi, &pr), &pr), 480.0, max_relative = 1e-9);
        }
        // The radicand vanishes at R = 1.
        let raw = Params { s: 10.0, q: 1.0, r: 1.0 };
        assert!(matches!(m_cap_e_extent(&raw), Err(DynamicsError::EmptyIntersection(_))));
    }

    #[test]
    fn geometry_l_and_m() {
        let pr = p(10.0, 1.0, 12.0);
        let g = Geometry::new(pr, State::new(9.4, 9.4, 16.0)).unwrap();
        assert_eq!(g.point_on_l(1.0), g.p0);
        assert_eq!(g.point_on_l(0.0), g.p1);
        let mid = g.point_on_l(0.5);
        assert_eq!(mid.x, mid.y);
        assert!(g.distance_to_l(&mid) < 1e-12);
        // M meets L only at p0.
        assert!(g.on_m(&g.p0, 1e-12));
        for a in [0.0, 0.25, 0.5, 0.75, 0.999] {
            assert!(!g.on_m(&g.point_on_l(a), 1e-9));
        }
        let off = point_on_m(5.0, &pr);
        assert!(g.distance_to_l(&off) > 0.1);
    }
}
