//! Outward-rounded interval arithmetic and a short-span enclosure stepper
//! for the Lorenz flow.
//!
//! Every arithmetic result is rounded to nearest and then widened by one ulp
//! on each side, which contains the exact result.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::dynamics::{ellipsoid_bound, equilibria, point_on_m, Geometry, Params, State, ELLIPSOID_COEFF};
use crate::error::ValidatedError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

fn down(x: f64) -> f64 {
    x.next_down()
}

fn up(x: f64) -> f64 {
    x.next_up()
}

impl Interval {
    /// Panics unless `lo <= hi`.
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "interval bounds out of order: [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    /// `[c - r, c + r]`, rounded outward.
    pub fn around(c: f64, r: f64) -> Self {
        Interval::new(down(c - r), up(c + r))
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * self.lo + 0.5 * self.hi
    }

    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_interval(&self, o: &Interval) -> bool {
        self.lo <= o.lo && o.hi <= self.hi
    }

    /// `o` lies in the interior.
    pub fn contains_strictly(&self, o: &Interval) -> bool {
        self.lo < o.lo && o.hi < self.hi
    }

    pub fn hull(&self, o: &Interval) -> Interval {
        Interval { lo: self.lo.min(o.lo), hi: self.hi.max(o.hi) }
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn square(self) -> Interval {
        let (a, b) = (self.lo * self.lo, self.hi * self.hi);
        if self.lo >= 0.0 || self.hi <= 0.0 {
            Interval::new(down(a.min(b)).max(0.0), up(a.max(b)))
        } else {
            Interval::new(0.0, up(a.max(b)))
        }
    }

    pub fn scale(self, k: f64) -> Interval {
        let (a, b) = (self.lo * k, self.hi * k);
        Interval::new(down(a.min(b)), up(a.max(b)))
    }

    /// Symmetric widening by `r >= 0`.
    pub fn inflate(self, r: f64) -> Interval {
        Interval::new(down(self.lo - r), up(self.hi + r))
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:e}, {:e}]", self.lo, self.hi)
    }
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, o: Interval) -> Interval {
        Interval::new(down(self.lo + o.lo), up(self.hi + o.hi))
    }
}

impl Sub for Interval {
    type Output = Interval;
    fn sub(self, o: Interval) -> Interval {
        Interval::new(down(self.lo - o.hi), up(self.hi - o.lo))
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval { lo: -self.hi, hi: -self.lo }
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, o: Interval) -> Interval {
        let p = [self.lo * o.lo, self.lo * o.hi, self.hi * o.lo, self.hi * o.hi];
        let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Interval::new(down(lo), up(hi))
    }
}

impl Mul<f64> for Interval {
    type Output = Interval;
    fn mul(self, k: f64) -> Interval {
        self.scale(k)
    }
}

impl Add<f64> for Interval {
    type Output = Interval;
    fn add(self, k: f64) -> Interval {
        self + Interval::point(k)
    }
}

/// Axis-aligned box of intervals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IBox {
    pub x: Interval,
    pub y: Interval,
    pub z: Interval,
}

impl IBox {
    pub fn new(x: Interval, y: Interval, z: Interval) -> Self {
        IBox { x, y, z }
    }

    pub fn point(s: &State) -> Self {
        IBox::new(Interval::point(s.x), Interval::point(s.y), Interval::point(s.z))
    }

    /// The cube of half-width `r` centred at `s`.
    pub fn around(s: &State, r: f64) -> Self {
        IBox::new(Interval::around(s.x, r), Interval::around(s.y, r), Interval::around(s.z, r))
    }

    pub fn components(&self) -> [Interval; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_components(c: [Interval; 3]) -> Self {
        IBox::new(c[0], c[1], c[2])
    }

    /// Largest component width.
    pub fn width(&self) -> f64 {
        self.components().iter().map(|i| i.width()).fold(0.0, f64::max)
    }

    pub fn widths(&self) -> [f64; 3] {
        self.components().map(|i| i.width())
    }

    pub fn mid(&self) -> State {
        State::new(self.x.mid(), self.y.mid(), self.z.mid())
    }

    /// Upper bound on the distance from the midpoint to any point.
    pub fn radius(&self) -> f64 {
        let m = self.mid();
        let d = |i: &Interval, c: f64| (c - i.lo).max(i.hi - c);
        up(d(&self.x, m.x).hypot(d(&self.y, m.y)).hypot(d(&self.z, m.z)) * (1.0 + 4.0 * f64::EPSILON))
    }

    pub fn contains(&self, s: &State) -> bool {
        self.x.contains(s.x) && self.y.contains(s.y) && self.z.contains(s.z)
    }

    pub fn contains_box(&self, o: &IBox) -> bool {
        self.components().iter().zip(o.components().iter()).all(|(a, b)| a.contains_interval(b))
    }

    pub fn contains_box_strictly(&self, o: &IBox) -> bool {
        self.components().iter().zip(o.components().iter()).all(|(a, b)| a.contains_strictly(b))
    }

    pub fn hull(&self, o: &IBox) -> IBox {
        IBox::new(self.x.hull(&o.x), self.y.hull(&o.y), self.z.hull(&o.z))
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(Interval::is_finite)
    }

    fn map(&self, f: impl Fn(Interval) -> Interval) -> IBox {
        IBox::new(f(self.x), f(self.y), f(self.z))
    }
}

impl Add for IBox {
    type Output = IBox;
    fn add(self, o: IBox) -> IBox {
        IBox::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Mul<Interval> for IBox {
    type Output = IBox;
    fn mul(self, k: Interval) -> IBox {
        self.map(|c| c * k)
    }
}

/// Natural interval extension of the vector field.
pub fn interval_rhs(b: &IBox, params: &Params) -> IBox {
    let IBox { x, y, z } = *b;
    IBox::new((y - x) * params.s, x * params.r - y - x * z, x * y - z * params.q)
}

/// Encloses `J(b) f(b)`, the second time derivative of the solution.
fn interval_second_derivative(b: &IBox, params: &Params) -> IBox {
    let IBox { x, y, z } = *b;
    let f = interval_rhs(b, params);
    IBox::new((f.y - f.x) * params.s, f.x * params.r - f.y - (f.x * z + x * f.z), f.x * y + x * f.y - f.z * params.q)
}

/// `x^2 + (10/R) y^2 + (10/R) (z - 2R)^2` over a box.
pub fn interval_ellipsoid_value(b: &IBox, params: &Params) -> Interval {
    let k = ELLIPSOID_COEFF / params.r;
    let k = Interval::new(down(k), up(k));
    b.x.square() + k * (b.y.square() + (b.z + -2.0 * params.r).square())
}

/// One accepted step of [`enclose_flow`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnclosureStep {
    /// Time at the end of the step.
    pub t: f64,
    pub h: f64,
    /// Encloses the flow image of the previous box at time `t`.
    pub enclosure: IBox,
    /// Validated box containing every solution from the previous box over
    /// the whole step.
    pub a_priori: IBox,
    /// Times the nominal step was halved before validation succeeded.
    pub halvings: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnclosureRun {
    pub params: Params,
    pub start: IBox,
    pub t_span: f64,
    pub steps: Vec<EnclosureStep>,
    /// `log10(final width / initial width) / |t_span|`; absent for a
    /// degenerate start box.
    pub digits_lost_per_unit: Option<f64>,
}

impl EnclosureRun {
    pub fn final_box(&self) -> IBox {
        self.steps.last().map(|s| s.enclosure).unwrap_or(self.start)
    }

    /// `(t, Box)` pairs, starting with the initial box at `t = 0`.
    pub fn boxes(&self) -> Vec<(f64, IBox)> {
        std::iter::once((0.0, self.start)).chain(self.steps.iter().map(|s| (s.t, s.enclosure))).collect()
    }
}

pub const MAX_HALVINGS: u32 = 20;

/// Finds `B` with `x + [0, h] F(B)` inside the interior of `B`, which by
/// the Picard argument contains every solution from `x` over `[0, h]`.
fn a_priori_box(x: &IBox, h: f64, params: &Params) -> Option<IBox> {
    let hull = Interval::new(h.min(0.0), h.max(0.0));
    let mut b = *x + interval_rhs(x, params) * hull;
    for _ in 0..4 {
        let grow = b.widths().map(|w| 0.2 * w + 1e-300);
        let widened = IBox::new(
            b.x.inflate(grow[0] + 1e-15 * b.x.mag()),
            b.y.inflate(grow[1] + 1e-15 * b.y.mag()),
            b.z.inflate(grow[2] + 1e-15 * b.z.mag()),
        );
        let image = *x + interval_rhs(&widened, params) * hull;
        if !image.is_finite() {
            return None;
        }
        if widened.contains_box_strictly(&image) {
            return Some(widened);
        }
        b = widened.hull(&image);
    }
    None
}

/// Interval Jacobian of the vector field over a box, row by row.
fn interval_jacobian(b: &IBox, params: &Params) -> [[Interval; 3]; 3] {
    let p = Interval::point;
    [[p(-params.s), p(params.s), p(0.0)], [p(params.r) - b.z, p(-1.0), -b.x], [b.y, b.x, p(-params.q)]]
}

/// First-order Taylor step with the remainder evaluated on the a-priori box,
/// `x + h F(x) + (h^2/2) (J F)(B)`, where the linear part is enclosed in
/// mean-value form around the midpoint of `x`.
fn taylor_step(x: &IBox, h: f64, b: &IBox, params: &Params) -> IBox {
    let hi = Interval::point(h);
    let half_h2 = Interval::point(h) * Interval::point(h) * 0.5;
    let m = IBox::point(&x.mid());
    let gm = m + interval_rhs(&m, params) * hi;
    let j = interval_jacobian(x, params);
    let dx = [x.x - m.x, x.y - m.y, x.z - m.z];
    let mut lin = [Interval::point(0.0); 3];
    for (i, row) in j.iter().enumerate() {
        for (k, jik) in row.iter().enumerate() {
            let d = if i == k { Interval::point(1.0) } else { Interval::point(0.0) };
            lin[i] = lin[i] + (d + *jik * hi) * dx[k];
        }
    }
    gm + IBox::from_components(lin) + interval_second_derivative(b, params) * half_h2
}

/// Validated step of signed nominal size `h` from `x`. Returns the end box,
/// the a-priori box, the step taken and the number of halvings.
pub fn enclosure_step(x: &IBox, h: f64, params: &Params) -> Option<(IBox, IBox, f64, u32)> {
    let mut h = h;
    for halvings in 0..=MAX_HALVINGS {
        if let Some(b) = a_priori_box(x, h, params) {
            let next = taylor_step(x, h, &b, params);
            if next.is_finite() {
                return Some((next, b, h, halvings));
            }
        }
        h *= 0.5;
    }
    None
}

/// Encloses the flow of `start` over `t_span` (negative for backward time)
/// with nominal step `step`.
pub fn enclose_flow(start: &IBox, params: &Params, t_span: f64, step: f64) -> Result<EnclosureRun, ValidatedError> {
    params.validate()?;
    if !(step > 0.0) || !t_span.is_finite() || !start.is_finite() {
        return Err(ValidatedError::InvalidRequest(format!("t_span {t_span}, step {step}")));
    }
    let sign = t_span.signum();
    let mut x = *start;
    let mut t = 0.0;
    let mut steps = Vec::new();
    while (t_span - t) * sign > 0.0 {
        let remaining = t_span - t;
        let nominal = if remaining.abs() < step { remaining } else { sign * step };
        let (next, b, h, halvings) = enclosure_step(&x, nominal, params)
            .ok_or(ValidatedError::ValidationFailed { t, step: nominal * 0.5f64.powi(MAX_HALVINGS as i32) })?;
        t = if h == remaining { t_span } else { t + h };
        steps.push(EnclosureStep { t, h, enclosure: next, a_priori: b, halvings });
        x = next;
    }
    let w0 = start.width();
    let digits_lost_per_unit = (w0 > 0.0 && t_span != 0.0).then(|| (x.width() / w0).log10() / t_span.abs());
    Ok(EnclosureRun { params: *params, start: *start, t_span, steps, digits_lost_per_unit })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SegmentVerdict {
    #[serde(rename = "CERTIFIED_2A")]
    Certified2a,
    Inconclusive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyConfig {
    /// Longest backward time allowed.
    pub back_span: f64,
    pub step: f64,
    /// Tube radius around `L`.
    pub l_tol: f64,
    /// Give up once the enclosure is wider than this.
    pub max_width: f64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig { back_span: 3.0, step: 1e-3, l_tol: 1e-6, max_width: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentCertificate {
    pub params: Params,
    pub xi: Interval,
    pub verdict: SegmentVerdict,
    /// Backward time at which the whole box was outside the ellipsoid.
    pub t_exit: Option<f64>,
    /// Smallest value of `distance(mid, L) - radius` over the a-priori boxes.
    pub min_clearance: f64,
    pub final_width: f64,
    pub steps: usize,
    pub reason: String,
}

/// Tries to certify alternative (2a) for every start on `M` with `xi` in the
/// interval: backward in time the whole enclosure leaves the ellipsoid while
/// staying clear of the `l_tol` tube around `L`.
pub fn certify_condition_b_segment(xi: Interval, geometry: &Geometry, cfg: &CertifyConfig) -> Result<SegmentCertificate, ValidatedError> {
    let params = geometry.params;
    params.validate()?;
    if !(cfg.back_span > 0.0 && cfg.step > 0.0 && cfg.l_tol >= 0.0) {
        return Err(ValidatedError::InvalidRequest(format!("{cfg:?}")));
    }
    let xi0 = equilibria(&params)?.p0.x;
    if xi.contains(xi0) || xi.contains(-xi0) {
        return Err(ValidatedError::ContainsEquilibrium);
    }
    let z = point_on_m(0.0, &params).z;
    let mut x = IBox::new(xi, xi, Interval::point(z));
    let bound = ellipsoid_bound(&params);
    let mut t = 0.0;
    let mut steps = 0;
    let mut min_clearance = f64::INFINITY;
    let outcome = |verdict, t_exit, min_clearance, x: &IBox, steps, reason: &str| SegmentCertificate {
        params,
        xi,
        verdict,
        t_exit,
        min_clearance,
        final_width: x.width(),
        steps,
        reason: reason.to_string(),
    };
    while t > -cfg.back_span {
        let nominal = -cfg.step.min(cfg.back_span + t);
        let Some((next, b, h, _)) = enclosure_step(&x, nominal, &params) else {
            return Ok(outcome(SegmentVerdict::Inconclusive, None, min_clearance, &x, steps, "enclosure could not be validated"));
        };
        let clearance = geometry.distance_to_l(&b.mid()) - b.radius();
        // Guard the float distance against its own rounding.
        let clearance = clearance - 1e-12 * (1.0 + b.mid().norm());
        min_clearance = min_clearance.min(clearance);
        if clearance <= cfg.l_tol {
            return Ok(outcome(SegmentVerdict::Inconclusive, None, min_clearance, &next, steps + 1, "enclosure reaches the tube around L"));
        }
        t += h;
        steps += 1;
        x = next;
        if interval_ellipsoid_value(&x, &params).lo > bound {
            return Ok(outcome(SegmentVerdict::Certified2a, Some(t), min_clearance, &x, steps, "whole box outside E"));
        }
        if x.width() > cfg.max_width {
            return Ok(outcome(SegmentVerdict::Inconclusive, None, min_clearance, &x, steps, "enclosure too wide"));
        }
    }
    Ok(outcome(SegmentVerdict::Inconclusive, None, min_clearance, &x, steps, "backward span exhausted inside E"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(lo: f64, hi: f64) -> Interval {
        Interval::new(lo, hi)
    }

    fn ulps_outside(got: Interval, want: Interval) -> bool {
        let mut lo = want.lo;
        let mut hi = want.hi;
        for _ in 0..4 {
            lo = lo.next_down();
            hi = hi.next_up();
        }
        got.contains_interval(&want) && got.lo >= lo && got.hi <= hi
    }

    #[test]
    fn basic_ops() {
        assert!(ulps_outside(iv(1.0, 2.0) + iv(3.0, 4.0), iv(4.0, 6.0)));
        assert!(ulps_outside(iv(-1.0, 2.0) * iv(-3.0, 4.0), iv(-6.0, 8.0)));
        assert!(ulps_outside(iv(-2.0, 1.0).square(), iv(0.0, 4.0)));
        assert_eq!(iv(-2.0, 1.0).square().lo, 0.0);
        assert!(ulps_outside(iv(1.0, 2.0) - iv(3.0, 4.0), iv(-3.0, -1.0)));
        assert!(ulps_outside(iv(1.0, 2.0) * -2.0, iv(-4.0, -2.0)));
    }

    #[test]
    fn rhs_hand_values() {
        let p = Params::new(10.0, 1.0, 12.0).unwrap();
        let f = interval_rhs(&IBox::point(&State::new(1.0, 0.0, 0.0)), &p);
        assert!(f.contains(&State::new(-10.0, 12.0, 0.0)));
        let p0 = equilibria(&p).unwrap().p0;
        let f = interval_rhs(&IBox::point(&p0), &p);
        assert!(f.contains(&State::ORIGIN));
    }

    #[test]
    fn equilibrium_box_stays_tight() {
        let p = Params::new(10.0, 1.0, 12.0).unwrap();
        let p0 = equilibria(&p).unwrap().p0;
        let run = enclose_flow(&IBox::point(&p0), &p, 1.0, 0.01).unwrap();
        assert!(run.final_box().width() < 1e-6, "{}", run.final_box().width());
        assert!(run.final_box().contains(&p0));
        assert!(run.digits_lost_per_unit.is_none());
    }

    #[test]
    fn backward_run_reaches_negative_span() {
        let p = Params::new(10.0, 1.0, 12.0).unwrap();
        let run = enclose_flow(&IBox::around(&State::new(1.0, 2.0, 3.0), 1e-9), &p, -0.1, 0.01).unwrap();
        assert_eq!(run.steps.last().unwrap().t, -0.1);
        assert!(run.steps.iter().all(|s| s.h < 0.0));
    }

    #[test]
    fn rejects_equilibrium_xi() {
        let p = Params::new(10.0, 1.0, 12.0).unwrap();
        let g = Geometry::new(p, State::new(9.0, 9.0, 16.0)).unwrap();
        let xi0 = 11f64.sqrt();
        let e = certify_condition_b_segment(iv(xi0 - 1e-3, xi0 + 1e-3), &g, &CertifyConfig::default());
        assert!(matches!(e, Err(ValidatedError::ContainsEquilibrium)));
        let e = certify_condition_b_segment(iv(-xi0 - 1e-3, -xi0 + 1e-3), &g, &CertifyConfig::default());
        assert!(matches!(e, Err(ValidatedError::ContainsEquilibrium)));
    }
}
