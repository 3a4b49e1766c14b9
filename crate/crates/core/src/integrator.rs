//! Adaptive Dormand-Prince 5(4) stepping with free fourth-order dense output
//! and root-resolved event detection.
//!
//! Every accepted step stores its interpolation coefficients, so a
//! [`Trajectory`] can be evaluated anywhere in its span and every event is
//! localized on the interpolant rather than on the step grid.

use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, distance_to_segment, rhs, Params, State};
use crate::error::{EventError, IntegrateError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Forward,
    Backward,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Length of the integration interval; the trajectory covers
    /// `[0, t_max]` forward or `[-t_max, 0]` backward.
    pub t_max: f64,
    pub direction: Direction,
    pub event_tol: f64,
    /// Crossings whose rate `|dg/dt|` is at most this are flagged degenerate.
    pub tangency_tol: f64,
    pub blow_up: f64,
    pub min_step: f64,
    /// Event functions are sampled this many times per step so that pairs
    /// of roots inside one step are not missed.
    pub event_substeps: usize,
    /// Cap on accepted steps; backward-time orbits oscillate ever faster as
    /// they grow and would otherwise exhaust memory.
    pub max_steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: 0.05,
            t_max: 50.0,
            direction: Direction::Forward,
            event_tol: 1e-12,
            tangency_tol: 1e-9,
            blow_up: 1e8,
            min_step: 1e-14,
            event_substeps: 4,
            max_steps: 1_000_000,
        }
    }
}

impl IntegratorConfig {
    pub fn with_horizon(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn backward(mut self) -> Self {
        self.direction = Direction::Backward;
        self
    }

    pub fn forward(mut self) -> Self {
        self.direction = Direction::Forward;
        self
    }

    /// Both tolerances scaled by `factor`.
    pub fn scaled_tolerances(mut self, factor: f64) -> Self {
        self.rel_tol *= factor;
        self.abs_tol *= factor;
        self
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
            ("t_max", self.t_max),
            ("event_tol", self.event_tol),
            ("blow_up", self.blow_up),
            ("min_step", self.min_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(IntegrateError::InvalidConfig(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.tangency_tol >= 0.0) {
            return Err(IntegrateError::InvalidConfig("tangency_tol must be nonnegative".into()));
        }
        if self.event_substeps == 0 {
            return Err(IntegrateError::InvalidConfig("event_substeps must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(IntegrateError::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// What an event function watches.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventKind {
    /// `x = 0`.
    XZero,
    /// Transversal sign changes of `x'`, i.e. crossings of `y = x` away
    /// from the tangency line `M`.
    XprimeSignChange,
    /// Every crossing of `y = x`, transversal or not.
    PlaneXyCross,
    /// A coordinate plane `axis = level`.
    PlaneCross { axis: Axis, level: f64 },
    /// Leaving the trapping ellipsoid in the integration direction.
    EllipsoidExit,
    /// Entering the tube of radius `tube` around the segment `[a, b]`.
    SegmentLHit { a: State, b: State, tube: f64 },
}

/// Flat tag for recorded events.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EventTag {
    XZero,
    XprimeSignChange,
    PlaneXyCross,
    PlaneXCross,
    PlaneYCross,
    PlaneZCross,
    EllipsoidExit,
    SegmentLHit,
}

impl EventKind {
    pub fn tag(&self) -> EventTag {
        match self {
            EventKind::XZero => EventTag::XZero,
            EventKind::XprimeSignChange => EventTag::XprimeSignChange,
            EventKind::PlaneXyCross => EventTag::PlaneXyCross,
            EventKind::PlaneCross { axis: Axis::X, .. } => EventTag::PlaneXCross,
            EventKind::PlaneCross { axis: Axis::Y, .. } => EventTag::PlaneYCross,
            EventKind::PlaneCross { axis: Axis::Z, .. } => EventTag::PlaneZCross,
            EventKind::EllipsoidExit => EventTag::EllipsoidExit,
            EventKind::SegmentLHit { .. } => EventTag::SegmentLHit,
        }
    }

    /// Scalar event function; events are its sign changes.
    pub fn value(&self, s: &State, params: &Params) -> f64 {
        match self {
            EventKind::XZero => s.x,
            EventKind::XprimeSignChange | EventKind::PlaneXyCross => s.y - s.x,
            EventKind::PlaneCross { axis, level } => s[axis.index()] - level,
            EventKind::EllipsoidExit => dynamics::ellipsoid_value(s, params) - dynamics::ellipsoid_bound(params),
            EventKind::SegmentLHit { a, b, tube } => distance_to_segment(s, a, b) - tube,
        }
    }

    /// Time derivative of the event function along the flow, where it has a
    /// closed form.
    pub fn rate(&self, s: &State, params: &Params) -> Option<f64> {
        let f = rhs(s, params);
        match self {
            EventKind::XZero => Some(f.x),
            EventKind::XprimeSignChange | EventKind::PlaneXyCross => Some(f.y - f.x),
            EventKind::PlaneCross { axis, .. } => Some(f[axis.index()]),
            EventKind::EllipsoidExit => {
                let k = dynamics::ELLIPSOID_COEFF / params.r;
                Some(2.0 * s.x * f.x + 2.0 * k * s.y * f.y + 2.0 * k * (s.z - 2.0 * params.r) * f.z)
            }
            EventKind::SegmentLHit { .. } => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CrossingFilter {
    #[default]
    Any,
    /// Event function increasing in forward time.
    Rising,
    /// Event function decreasing in forward time.
    Falling,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub kind: EventKind,
    #[serde(default)]
    pub filter: CrossingFilter,
    /// Stop integrating once this many qualifying events have been recorded.
    #[serde(default)]
    pub terminal_after: Option<usize>,
}

impl EventSpec {
    pub fn new(kind: EventKind) -> Self {
        EventSpec { kind, filter: CrossingFilter::Any, terminal_after: None }
    }

    pub fn x_zero() -> Self {
        Self::new(EventKind::XZero)
    }

    pub fn xprime() -> Self {
        Self::new(EventKind::XprimeSignChange)
    }

    pub fn plane_xy() -> Self {
        Self::new(EventKind::PlaneXyCross)
    }

    pub fn plane(axis: Axis, level: f64) -> Self {
        Self::new(EventKind::PlaneCross { axis, level })
    }

    pub fn ellipsoid_exit() -> Self {
        Self::new(EventKind::EllipsoidExit)
    }

    pub fn segment_hit(a: State, b: State, tube: f64) -> Self {
        Self::new(EventKind::SegmentLHit { a, b, tube })
    }

    pub fn rising(mut self) -> Self {
        self.filter = CrossingFilter::Rising;
        self
    }

    pub fn falling(mut self) -> Self {
        self.filter = CrossingFilter::Falling;
        self
    }

    pub fn terminal(mut self) -> Self {
        self.terminal_after = Some(1);
        self
    }

    pub fn terminal_after(mut self, n: usize) -> Self {
        self.terminal_after = Some(n);
        self
    }

    /// Whether a crossing in the given forward-time direction is reported.
    fn accepts(&self, forward_sign: f64, integration: Direction) -> bool {
        // Sign in integration order: +1 means the function grew along the run.
        let along = forward_sign * integration.sign();
        match self.kind {
            EventKind::EllipsoidExit => along > 0.0,
            EventKind::SegmentLHit { .. } => along < 0.0,
            _ => match self.filter {
                CrossingFilter::Any => true,
                CrossingFilter::Rising => forward_sign > 0.0,
                CrossingFilter::Falling => forward_sign < 0.0,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub kind: EventTag,
    /// Index of the originating spec in the list passed to [`integrate`].
    pub spec: usize,
    pub t: f64,
    pub state: State,
    /// Sign of the change of the event function in forward time.
    pub direction: i8,
    /// `dg/dt` at the event, the transversality certificate. `None` where no
    /// closed form exists.
    pub rate: Option<f64>,
    pub degenerate: bool,
    /// The trajectory starts on the event surface; not a crossing.
    pub at_start: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Termination {
    Horizon,
    TerminalEvent,
    BlowUp,
    StepUnderflow,
    StepBudget,
}

/// Continuous extension of one accepted step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseStep {
    pub t0: f64,
    /// Full step length (signed). The stored node may end earlier when a
    /// terminal event truncates the step.
    pub h: f64,
    pub t1: f64,
    y0: State,
    c: [State; 4],
}

impl DenseStep {
    pub fn eval(&self, t: f64) -> State {
        let theta = (t - self.t0) / self.h;
        let theta1 = 1.0 - theta;
        let [c1, c2, c3, c4] = self.c;
        self.y0 + (c1 + (c2 + (c3 + c4 * theta1) * theta) * theta1) * theta
    }
}

/// A dense-output solution on `[0, t_end]` (or `[t_end, 0]` backward).
#[derive(Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub params: Params,
    pub direction: Direction,
    pub times: Vec<f64>,
    pub states: Vec<State>,
    pub dense: Vec<DenseStep>,
    pub events: Vec<EventRecord>,
    pub termination: Termination,
    pub rejected_steps: usize,
}

impl fmt::Debug for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Trajectory")
            .field("params", &self.params)
            .field("direction", &self.direction)
            .field("span", &self.span())
            .field("steps", &self.dense.len())
            .field("events", &self.events.len())
            .field("termination", &self.termination)
            .finish()
    }
}

impl Trajectory {
    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one node")
    }

    pub fn final_state(&self) -> State {
        *self.states.last().expect("trajectory has at least one node")
    }

    pub fn contains_time(&self, t: f64) -> bool {
        let (a, b) = self.span();
        t >= a && t <= b
    }

    /// `(min t, max t)` regardless of direction.
    pub fn span(&self) -> (f64, f64) {
        let (a, b) = (self.start_time(), self.end_time());
        (a.min(b), a.max(b))
    }

    /// Index of the dense step covering `t`.
    fn step_index(&self, t: f64) -> usize {
        let n = self.dense.len();
        let sign = self.direction.sign();
        // times are monotone in the integration direction
        let pos = self.times.partition_point(|&ti| (ti - t) * sign < 0.0);
        pos.saturating_sub(1).min(n - 1)
    }

    pub fn evaluate(&self, t: f64) -> Result<State, EventError> {
        let (a, b) = self.span();
        if !(t >= a && t <= b) {
            return Err(EventError::OutOfSpan { t, start: self.start_time(), end: self.end_time() });
        }
        if self.dense.is_empty() {
            return Ok(self.states[0]);
        }
        let k = self.step_index(t);
        if t == self.times[k] {
            return Ok(self.states[k]);
        }
        if t == self.times[k + 1] {
            return Ok(self.states[k + 1]);
        }
        Ok(self.dense[k].eval(t))
    }

    pub fn events_of(&self, tag: EventTag) -> impl Iterator<Item = &EventRecord> + '_ {
        self.events.iter().filter(move |e| e.kind == tag)
    }

    /// Samples of the dense output, `per_step` intervals per accepted step,
    /// including every node.
    pub fn samples(&self, per_step: usize) -> Vec<(f64, State)> {
        let per_step = per_step.max(1);
        let mut out = Vec::with_capacity(self.dense.len() * per_step + 1);
        out.push((self.times[0], self.states[0]));
        for (k, d) in self.dense.iter().enumerate() {
            for j in 1..per_step {
                let t = d.t0 + (d.t1 - d.t0) * j as f64 / per_step as f64;
                out.push((t, d.eval(t)));
            }
            out.push((self.times[k + 1], self.states[k + 1]));
        }
        out
    }

    /// Writes `t,x,y,z` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x,y,z")?;
        for (t, s) in self.times.iter().zip(&self.states) {
            writeln!(w, "{t:e},{:e},{:e},{:e}", s.x, s.y, s.z)?;
        }
        Ok(())
    }

    /// Writes one JSON object per event.
    pub fn write_events_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

// Dormand-Prince 5(4) tableau. The system is autonomous, so the node
// times c_i never enter.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
// Shampine's dense output weights.
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct StepResult {
    y1: State,
    k7: State,
    err: f64,
    dense: [State; 4],
}

fn dp_step(y: &State, k1: &State, h: f64, p: &Params, cfg: &IntegratorConfig) -> StepResult {
    let k2 = rhs(&(*y + *k1 * (h * A21)), p);
    let k3 = rhs(&(*y + (*k1 * A31 + k2 * A32) * h), p);
    let k4 = rhs(&(*y + (*k1 * A41 + k2 * A42 + k3 * A43) * h), p);
    let k5 = rhs(&(*y + (*k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h), p);
    let k6 = rhs(&(*y + (*k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h), p);
    let y1 = *y + (*k1 * A71 + k3 * A73 + k4 * A74 + k5 * A75 + k6 * A76) * h;
    let k7 = rhs(&y1, p);
    let e = (*k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;
    let mut sum = 0.0;
    for i in 0..3 {
        let sc = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y1[i].abs());
        let r = e[i] / sc;
        sum += r * r;
    }
    let err = (sum / 3.0).sqrt();
    let ydiff = y1 - *y;
    let bspl = *k1 * h - ydiff;
    let dense = [ydiff, bspl, ydiff - k7 * h - bspl, (*k1 * D1 + k3 * D3 + k4 * D4 + k5 * D5 + k6 * D6 + k7 * D7) * h];
    StepResult { y1, k7, err, dense }
}

fn initial_step(y: &State, f0: &State, p: &Params, cfg: &IntegratorConfig) -> f64 {
    let norm = |v: &State, base: &State| {
        let mut s = 0.0;
        for i in 0..3 {
            let sc = cfg.abs_tol + cfg.rel_tol * base[i].abs();
            s += (v[i] / sc).powi(2);
        }
        (s / 3.0).sqrt()
    };
    let d0 = norm(y, y);
    let d1 = norm(f0, y);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(cfg.max_step);
    let y1 = *y + *f0 * (h0 * cfg.direction.sign());
    let f1 = rhs(&y1, p);
    let d2 = norm(&(f1 - *f0), y) / h0;
    let dm = d1.max(d2);
    let h1 = if dm <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / dm).powf(0.2) };
    (100.0 * h0).min(h1).min(cfg.max_step)
}

/// Bracketing root refinement of a scalar function on `[lo, hi]`.
///
/// Each iteration takes a false-position trial and, when that fails to
/// halve the bracket, a bisection step, so the bracket width at least
/// halves per iteration. Deterministic for identical inputs.
pub fn locate_event<F: Fn(f64) -> f64>(g: F, lo: f64, hi: f64, tol: f64) -> Result<f64, EventError> {
    let (mut a, mut b) = (lo, hi);
    let (mut ga, mut gb) = (g(a), g(b));
    if ga == 0.0 {
        return Ok(a);
    }
    if gb == 0.0 {
        return Ok(b);
    }
    if ga.signum() == gb.signum() || ga.is_nan() || gb.is_nan() {
        return Err(EventError::NoSignChange { lo, hi });
    }
    for _ in 0..200 {
        let width = (b - a).abs();
        if width <= tol {
            break;
        }
        let mut t = b - gb * (b - a) / (gb - ga);
        if !(t - a.min(b) > 0.0 && a.max(b) - t > 0.0) {
            t = 0.5 * (a + b);
        }
        let gt = g(t);
        if gt == 0.0 {
            return Ok(t);
        }
        if gt.signum() == ga.signum() {
            a = t;
            ga = gt;
        } else {
            b = t;
            gb = gt;
        }
        if (b - a).abs() > 0.5 * width {
            let m = 0.5 * (a + b);
            if m == a || m == b {
                break;
            }
            let gm = g(m);
            if gm == 0.0 {
                return Ok(m);
            }
            if gm.signum() == ga.signum() {
                a = m;
                ga = gm;
            } else {
                b = m;
                gb = gm;
            }
        }
    }
    // Return the endpoint with the smaller residual.
    Ok(if ga.abs() <= gb.abs() { a } else { b })
}

struct EventTracker {
    /// Last sample value with a nonzero sign.
    last_g: f64,
    /// Start sits exactly on the surface and no nonzero sample seen yet.
    pending_start: bool,
    count: usize,
}

/// Integrates the Lorenz system from `start` at `t = 0`.
pub fn integrate(start: State, params: &Params, config: &IntegratorConfig, events: &[EventSpec]) -> Result<Trajectory, IntegrateError> {
    config.validate()?;
    params.validate()?;
    if !start.is_finite() {
        return Err(IntegrateError::NonFiniteStart);
    }
    let sign = config.direction.sign();
    let t_end = sign * config.t_max;
    let mut traj = Trajectory {
        params: *params,
        direction: config.direction,
        times: vec![0.0],
        states: vec![start],
        dense: Vec::new(),
        events: Vec::new(),
        termination: Termination::Horizon,
        rejected_steps: 0,
    };
    let mut trackers: Vec<EventTracker> = events
        .iter()
        .map(|e| {
            let g = e.kind.value(&start, params);
            EventTracker { last_g: g, pending_start: g == 0.0, count: 0 }
        })
        .collect();

    let mut t = 0.0f64;
    let mut y = start;
    let mut k1 = rhs(&y, params);
    if k1 == State::ORIGIN {
        // Equilibrium: the solution is constant, no event function changes.
        traj.times.push(t_end);
        traj.states.push(y);
        traj.dense.push(DenseStep { t0: 0.0, h: t_end, t1: t_end, y0: y, c: [State::ORIGIN; 4] });
        return Ok(traj);
    }
    let mut h = initial_step(&y, &k1, params, config);
    let mut last_rejected = false;

    loop {
        let remaining = (t_end - t) * sign;
        if remaining <= 0.0 {
            break;
        }
        let mut h_abs = h.min(config.max_step);
        let last_step = h_abs >= remaining;
        if last_step {
            h_abs = remaining;
        } else if h_abs < config.min_step {
            traj.termination = Termination::StepUnderflow;
            return Err(IntegrateError::StepUnderflow { t, h: h_abs, partial: Box::new(traj) });
        }
        let hs = h_abs * sign;
        let step = dp_step(&y, &k1, hs, params, config);
        if !step.err.is_finite() || !step.y1.is_finite() {
            h = 0.2 * h_abs;
            traj.rejected_steps += 1;
            last_rejected = true;
            if h >= config.min_step {
                continue;
            }
            traj.termination = Termination::BlowUp;
            return Err(IntegrateError::BlowUp { t, threshold: config.blow_up, partial: Box::new(traj) });
        }
        if step.err > 1.0 {
            let fac = (0.9 * step.err.powf(-0.2)).clamp(0.2, 1.0);
            h = h_abs * fac;
            traj.rejected_steps += 1;
            last_rejected = true;
            if h < config.min_step {
                traj.termination = Termination::StepUnderflow;
                return Err(IntegrateError::StepUnderflow { t, h, partial: Box::new(traj) });
            }
            continue;
        }
        let t_new = if last_step { t_end } else { t + hs };
        let mut dense = DenseStep { t0: t, h: hs, t1: t_new, y0: y, c: step.dense };

        // Events inside (t, t_new].
        let stop_at = scan_events(&dense, params, config, events, &mut trackers, &mut traj.events);
        let (t_acc, y_acc) = match stop_at {
            Some(ts) => (ts, if ts == t_new { step.y1 } else { dense.eval(ts) }),
            None => (t_new, step.y1),
        };
        dense.t1 = t_acc;
        traj.times.push(t_acc);
        traj.states.push(y_acc);
        traj.dense.push(dense);

        if y_acc.norm() > config.blow_up {
            traj.termination = Termination::BlowUp;
            return Err(IntegrateError::BlowUp { t: t_acc, threshold: config.blow_up, partial: Box::new(traj) });
        }
        if stop_at.is_some() {
            traj.termination = Termination::TerminalEvent;
            return Ok(traj);
        }

        if traj.dense.len() >= config.max_steps && !last_step {
            traj.termination = Termination::StepBudget;
            return Err(IntegrateError::StepBudget { t: t_acc, steps: traj.dense.len(), partial: Box::new(traj) });
        }
        t = t_new;
        y = step.y1;
        k1 = step.k7;
        let mut fac = if step.err == 0.0 { 5.0 } else { 0.9 * step.err.powf(-0.2) };
        fac = fac.clamp(0.2, 5.0);
        if last_rejected {
            fac = fac.min(1.0);
        }
        last_rejected = false;
        h = h_abs * fac;
    }
    Ok(traj)
}

/// Detects and records events inside one dense step. Returns the time of a
/// terminal event if one fires.
fn scan_events(
    dense: &DenseStep,
    params: &Params,
    config: &IntegratorConfig,
    specs: &[EventSpec],
    trackers: &mut [EventTracker],
    out: &mut Vec<EventRecord>,
) -> Option<f64> {
    if specs.is_empty() {
        return None;
    }
    let n = config.event_substeps;
    let ts: Vec<f64> = (0..=n).map(|j| if j == n { dense.t1 } else { dense.t0 + (dense.t1 - dense.t0) * j as f64 / n as f64 }).collect();
    let ys: Vec<State> = ts.iter().map(|&t| dense.eval(t)).collect();
    let mut found: Vec<EventRecord> = Vec::new();
    for (idx, (spec, tr)) in specs.iter().zip(trackers.iter_mut()).enumerate() {
        for j in 1..=n {
            let g1 = spec.kind.value(&ys[j], params);
            if g1 == 0.0 || g1.is_nan() {
                continue;
            }
            if tr.pending_start {
                tr.pending_start = false;
                tr.last_g = g1;
                let st = dense.y0;
                let forward_sign = g1.signum() * config.direction.sign();
                found.push(EventRecord {
                    kind: spec.kind.tag(),
                    spec: idx,
                    t: dense.t0,
                    state: st,
                    direction: forward_sign as i8,
                    rate: spec.kind.rate(&st, params),
                    degenerate: false,
                    at_start: true,
                });
                continue;
            }
            if g1.signum() != tr.last_g.signum() {
                let g = |t: f64| spec.kind.value(&dense.eval(t), params);
                let tc = locate_event(g, ts[j - 1], ts[j], config.event_tol).unwrap_or(ts[j]);
                let st = dense.eval(tc);
                // forward-time direction of the change
                let forward_sign = (g1 - tr.last_g).signum() * config.direction.sign();
                let rate = spec.kind.rate(&st, params);
                let degenerate = rate.is_some_and(|r| r.abs() <= config.tangency_tol);
                if spec.accepts(forward_sign, config.direction) {
                    found.push(EventRecord {
                        kind: spec.kind.tag(),
                        spec: idx,
                        t: tc,
                        state: st,
                        direction: forward_sign as i8,
                        rate,
                        degenerate,
                        at_start: false,
                    });
                }
            }
            tr.last_g = g1;
        }
    }
    if found.is_empty() {
        return None;
    }
    let sign = config.direction.sign();
    found.sort_by(|a, b| (a.t * sign).total_cmp(&(b.t * sign)).then(a.spec.cmp(&b.spec)));
    let mut stop: Option<f64> = None;
    for rec in found {
        if let Some(ts) = stop {
            if (rec.t - ts) * sign > 0.0 {
                break;
            }
        }
        let spec = &specs[rec.spec];
        let counts = !rec.at_start && !rec.degenerate;
        out.push(rec);
        if counts {
            let tr = &mut trackers[rec.spec];
            tr.count += 1;
            if spec.terminal_after.is_some_and(|n| tr.count >= n) && stop.is_none() {
                stop = Some(rec.t);
            }
        }
    }
    stop
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::equilibria;

    fn p12() -> Params {
        Params::new(10.0, 1.0, 12.0).unwrap()
    }

    #[test]
    fn equilibrium_start_is_constant_without_events() {
        let p = p12();
        let p0 = equilibria(&p).unwrap().p0;
        let cfg = IntegratorConfig::default().with_horizon(30.0);
        let tr = integrate(p0, &p, &cfg, &[EventSpec::x_zero(), EventSpec::plane(Axis::Z, 5.0)]).unwrap();
        assert!(tr.events.is_empty());
        assert_eq!(tr.final_state(), p0);
        assert_eq!(tr.evaluate(11.3).unwrap(), p0);
        assert_eq!(tr.termination, Termination::Horizon);
    }

    #[test]
    fn linear_event_root_is_exact() {
        let t = locate_event(|t| 3.0 * t - 1.5, 0.0, 2.0, 1e-15).unwrap();
        assert_eq!(t, 0.5);
        assert!(matches!(locate_event(|t| t * t + 1.0, -1.0, 1.0, 1e-12), Err(EventError::NoSignChange { .. })));
    }

    #[test]
    fn bracket_halves_every_iteration() {
        // A function on which false position stalls at one end.
        let g = |t: f64| (t - 0.9).powi(3) + 1e-3 * (t - 0.9);
        let mut widths = Vec::new();
        let (mut a, mut b) = (0.0f64, 1.0f64);
        // Replay the same iteration to observe the bracket widths.
        for _ in 0..20 {
            let (ga, gb) = (g(a), g(b));
            let w = b - a;
            widths.push(w);
            let mut t = b - gb * (b - a) / (gb - ga);
            if !(t > a && t < b) {
                t = 0.5 * (a + b);
            }
            if g(t).signum() == ga.signum() {
                a = t
            } else {
                b = t
            }
            if b - a > 0.5 * w {
                let m = 0.5 * (a + b);
                if g(m).signum() == g(a).signum() {
                    a = m
                } else {
                    b = m
                }
            }
        }
        for pair in widths.windows(2) {
            assert!(pair[1] <= 0.5 * pair[0] + 1e-300);
        }
        let root = locate_event(g, 0.0, 1.0, 1e-14).unwrap();
        assert!((root - 0.9).abs() < 1e-12);
    }

    #[test]
    fn locate_event_is_deterministic() {
        let g = |t: f64| (3.0 * t).sin() - 0.2;
        let a = locate_event(g, 0.0, 0.5, 1e-13).unwrap();
        let b = locate_event(g, 0.0, 0.5, 1e-13).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn rejects_invalid_config() {
        let p = p12();
        let cfg = IntegratorConfig { rel_tol: 0.0, ..IntegratorConfig::default() };
        assert!(matches!(integrate(State::new(1.0, 1.0, 1.0), &p, &cfg, &[]), Err(IntegrateError::InvalidConfig(_))));
        let cfg = IntegratorConfig::default();
        assert!(matches!(integrate(State::new(f64::NAN, 1.0, 1.0), &p, &cfg, &[]), Err(IntegrateError::NonFiniteStart)));
    }

    #[test]
    fn start_on_plane_records_boundary_event() {
        let p = p12();
        // On y = x with x (R - 1 - z) = 2 * 6 != 0, so y - x becomes positive.
        let start = State::new(2.0, 2.0, 5.0);
        let cfg = IntegratorConfig::default().with_horizon(0.5);
        let tr = integrate(start, &p, &cfg, &[EventSpec::plane_xy()]).unwrap();
        let first = tr.events[0];
        assert!(first.at_start);
        assert_eq!(first.t, 0.0);
        assert_eq!(first.direction, 1);
        assert_eq!(first.rate, Some(2.0 * (12.0 - 1.0 - 5.0)));
    }

    #[test]
    fn nodes_are_exact_and_dense_is_continuous() {
        let p = p12();
        let cfg = IntegratorConfig::default().with_horizon(5.0);
        let tr = integrate(State::new(1.0, 2.0, 3.0), &p, &cfg, &[]).unwrap();
        for k in 0..tr.times.len() {
            assert_eq!(tr.evaluate(tr.times[k]).unwrap(), tr.states[k]);
        }
        for (k, d) in tr.dense.iter().enumerate() {
            let end = d.eval(d.t1);
            assert!(end.distance(&tr.states[k + 1]) < 1e-12 * (1.0 + end.norm()));
        }
        assert!(matches!(tr.evaluate(5.5), Err(EventError::OutOfSpan { .. })));
        assert!(matches!(tr.evaluate(-0.1), Err(EventError::OutOfSpan { .. })));
    }

    #[test]
    fn backward_times_decrease() {
        let p = p12();
        let cfg = IntegratorConfig::default().with_horizon(0.3).backward();
        let tr = integrate(State::new(1.0, 2.0, 3.0), &p, &cfg, &[]).unwrap();
        assert!(tr.times.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(tr.end_time(), -0.3);
        let mid = tr.evaluate(-0.15).unwrap();
        assert!(mid.is_finite());
    }

    #[test]
    fn terminal_event_truncates() {
        let p = p12();
        let cfg = IntegratorConfig::default().with_horizon(20.0);
        let spec = EventSpec::plane(Axis::Z, 8.0).rising().terminal();
        let tr = integrate(State::new(1.0, 2.0, 3.0), &p, &cfg, &[spec]).unwrap();
        assert_eq!(tr.termination, Termination::TerminalEvent);
        let e = tr.events.last().unwrap();
        assert_eq!(e.t, tr.end_time());
        assert!((tr.final_state().z - 8.0).abs() < 1e-9);
    }

    #[test]
    fn backward_blow_up_is_reported_with_partial() {
        let p = p12();
        let cfg = IntegratorConfig::default().with_horizon(50.0).backward();
        let err = integrate(State::new(5.0, -3.0, 20.0), &p, &cfg, &[]).unwrap_err();
        assert!(
            matches!(err, IntegrateError::BlowUp { .. } | IntegrateError::StepUnderflow { .. } | IntegrateError::StepBudget { .. }),
            "{err}"
        );
        assert!(err.partial().unwrap().times.len() > 1);
    }

    #[test]
    fn exports_round_trip() {
        let p = p12();
        let cfg = IntegratorConfig::default().with_horizon(3.0);
        let tr = integrate(State::new(1.0, 2.0, 3.0), &p, &cfg, &[EventSpec::xprime(), EventSpec::x_zero()]).unwrap();
        let mut buf = Vec::new();
        tr.write_events_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let parsed: Vec<EventRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed.len(), tr.events.len());
        for (a, b) in parsed.iter().zip(&tr.events) {
            assert!((a.t - b.t).abs() <= 1e-15 * b.t.abs());
            assert!(a.state.distance(&b.state) <= 1e-15 * b.state.norm());
        }
        let mut csv = Vec::new();
        tr.write_csv(&mut csv).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.starts_with("t,x,y,z\n"));
        assert_eq!(csv.lines().count(), tr.times.len() + 1);
    }
}
