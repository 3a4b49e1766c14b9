//! The positive branch of the origin's unstable manifold: seeding, the
//! quantitative checkpoints at `R = 1000`, and bisection for the homoclinic
//! parameter.

use serde::{Deserialize, Serialize};

use crate::dynamics::{equilibria, jacobian, linearize, rhs, unstable_eigenpair, Params, State};
use crate::error::{IntegrateError, ManifoldError};
use crate::integrator::{integrate, Axis, EventSpec, EventTag, IntegratorConfig, Trajectory};
use crate::trace::{classify_branch, BranchClass, BranchCriteria, BranchTag};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedConfig {
    /// Offset along the unit unstable eigenvector.
    pub epsilon: f64,
    /// Add the quadratic term of the manifold expansion, estimated from the
    /// two-scale expansion `eps v + eps^2 w`.
    pub richardson: bool,
}

impl Default for SeedConfig {
    fn default() -> Self {
        SeedConfig { epsilon: 1e-8, richardson: false }
    }
}

impl SeedConfig {
    pub fn validate(&self) -> Result<(), ManifoldError> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-4) {
            return Err(ManifoldError::InvalidSeed(format!("epsilon must lie in (0, 1e-4], got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Starting point on the positive branch.
///
/// To second order the branch is `(eps v_x, eps v_y, eps^2 v_x v_y / (2 lambda + q))`:
/// `x` and `y` only pick up cubic corrections through `x z`.
pub fn seed_gamma_plus(params: &Params, cfg: &SeedConfig) -> Result<State, ManifoldError> {
    cfg.validate()?;
    let (lambda, v) = unstable_eigenpair(params)?;
    let eps = cfg.epsilon;
    let mut seed = v * eps;
    if cfg.richardson {
        seed.z = eps * eps * v.x * v.y / (2.0 * lambda + params.q);
    }
    Ok(seed)
}

/// Time for the seed to grow to unit size, `ln(1/eps) / lambda`.
pub fn departure_time(params: &Params, cfg: &SeedConfig) -> Result<f64, ManifoldError> {
    let (lambda, _) = unstable_eigenpair(params)?;
    Ok((1.0 / cfg.epsilon).ln() / lambda)
}

/// Integrates the seed backward and returns the angle between the final
/// state and the eigenvector. A wrong orientation or eigenvector shows up
/// as a large angle. The run stops after a hundredfold shrink or once the
/// stable directions, which grow in backward time, have amplified rounding
/// errors a millionfold.
pub fn validate_seed(params: &Params, cfg: &SeedConfig, base: &IntegratorConfig) -> Result<f64, ManifoldError> {
    let seed = seed_gamma_plus(params, cfg)?;
    let (lambda, v) = unstable_eigenpair(params)?;
    let b = params.s + 1.0;
    let fastest_stable = (0.5 * (b + (b * b + 4.0 * params.s * (params.r - 1.0)).sqrt())).max(params.q);
    let span = (100f64.ln() / lambda).min(1e6f64.ln() / fastest_stable);
    let mut icfg = base.backward().with_horizon(span);
    icfg.abs_tol = icfg.rel_tol * cfg.epsilon * 1e-3;
    icfg.max_step = icfg.max_step.min(0.1 / lambda);
    let tr = integrate(seed, params, &icfg, &[])?;
    let end = tr.final_state();
    let cos = (end.dot(&v) / end.norm()).clamp(-1.0, 1.0);
    let angle = cos.acos();
    if angle > 1e-3 {
        return Err(ManifoldError::SeedValidation { angle });
    }
    Ok(angle)
}

/// Seeds the branch and integrates it forward. The horizon in `config` is
/// measured from the seed, so callers usually add [`departure_time`].
///
/// The absolute tolerance is capped at `rel_tol * epsilon` so that the
/// error control stays relative while the state is still of seed size.
pub fn gamma_plus(
    params: &Params,
    seed: &SeedConfig,
    config: &IntegratorConfig,
    events: &[EventSpec],
) -> Result<Trajectory, ManifoldError> {
    let start = seed_gamma_plus(params, seed)?;
    let mut icfg = config.forward();
    icfg.abs_tol = icfg.abs_tol.min(icfg.rel_tol * seed.epsilon);
    Ok(integrate(start, params, &icfg, events)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub label: String,
    pub value: f64,
    pub pass: bool,
}

impl InequalityCheck {
    fn new(label: &str, value: f64, pass: bool) -> Self {
        InequalityCheck { label: label.to_string(), value, pass }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub level: String,
    pub t: f64,
    pub state: State,
    pub checks: Vec<InequalityCheck>,
}

impl Checkpoint {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointReport {
    pub params: Params,
    pub at_y_equals_1: Checkpoint,
    pub at_z_equals_1000: Checkpoint,
    pub at_y_equals_0: Checkpoint,
    /// `x, y, z` strictly increasing from the seed up to the `y = 1` crossing.
    pub monotone_initial: bool,
    pub all_pass: bool,
}

impl CheckpointReport {
    pub fn checkpoints(&self) -> [&Checkpoint; 3] {
        [&self.at_y_equals_1, &self.at_z_equals_1000, &self.at_y_equals_0]
    }
}

/// Follows the branch through the first rising crossings of `y = 1` and
/// `z = 1000` and the first falling crossing of `y = 0`, and evaluates the
/// inequalities that bound the state at each.
pub fn branch_checkpoints(params: &Params, seed: &SeedConfig, config: &IntegratorConfig) -> Result<CheckpointReport, ManifoldError> {
    let events = [
        EventSpec::plane(Axis::Y, 1.0).rising(),
        EventSpec::plane(Axis::Z, 1000.0).rising(),
        EventSpec::plane(Axis::Y, 0.0).falling().terminal(),
    ];
    let horizon = departure_time(params, seed)? + 10.0;
    let tr = gamma_plus(params, seed, &config.with_horizon(horizon), &events)?;
    let first = |tag: EventTag, name: &'static str| {
        tr.events.iter().find(|e| e.kind == tag && !e.at_start && !e.degenerate).copied().ok_or(ManifoldError::MissingCheckpoint(name))
    };
    let e1 = first(EventTag::PlaneYCross, "y=1")?;
    let e2 = first(EventTag::PlaneZCross, "z=1000")?;
    let e3 = tr.events.iter().find(|e| e.spec == 2 && !e.degenerate).copied().ok_or(ManifoldError::MissingCheckpoint("y=0"))?;

    let s1 = e1.state;
    let c1 = Checkpoint {
        level: "y=1".into(),
        t: e1.t,
        state: s1,
        checks: vec![
            InequalityCheck::new("0.096 <= x <= 0.1", s1.x, (0.096..=0.1).contains(&s1.x)),
            InequalityCheck::new("x^2/20 < z", s1.z - s1.x * s1.x / 20.0, s1.z > s1.x * s1.x / 20.0),
            InequalityCheck::new("z < 0.1", s1.z, s1.z < 0.1),
        ],
    };
    let s2 = e2.state;
    let c2 = Checkpoint {
        level: "z=1000".into(),
        t: e2.t,
        state: s2,
        checks: vec![
            InequalityCheck::new("126.4 < x < 135.6", s2.x, s2.x > 126.4 && s2.x < 135.6),
            InequalityCheck::new("798 < y < 1000", s2.y, s2.y > 798.0 && s2.y < 1000.0),
        ],
    };
    let s3 = e3.state;
    let c3 = Checkpoint {
        level: "y=0".into(),
        t: e3.t,
        state: s3,
        checks: vec![
            InequalityCheck::new("155 < x < 189", s3.x, s3.x > 155.0 && s3.x < 189.0),
            InequalityCheck::new("z > 10.4 x", s3.z - 10.4 * s3.x, s3.z > 10.4 * s3.x),
        ],
    };

    // x' > 0 and y' > 0 everywhere up to the first checkpoint; z' > 0 once
    // z has left its seeded value.
    let monotone_initial = tr.samples(8).iter().take_while(|(t, _)| *t <= e1.t).all(|(_, s)| {
        let f = rhs(s, params);
        f.x > 0.0 && f.y > 0.0 && f.z > 0.0
    });
    let all_pass = c1.pass() && c2.pass() && c3.pass() && monotone_initial;
    Ok(CheckpointReport { params: *params, at_y_equals_1: c1, at_z_equals_1000: c2, at_y_equals_0: c3, monotone_initial, all_pass })
}

/// Settings for classifying the branch at a single `R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyConfig {
    pub seed: SeedConfig,
    pub integrator: IntegratorConfig,
    pub criteria: BranchCriteria,
    /// Horizon beyond the departure time; `None` picks one from the slowest
    /// decay rate at `p0`.
    pub horizon: Option<f64>,
    /// Undetermined runs are repeated with a doubled horizon this many times.
    pub horizon_doublings: u32,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig {
            seed: SeedConfig::default(),
            integrator: IntegratorConfig::default(),
            criteria: BranchCriteria::default(),
            horizon: None,
            horizon_doublings: 3,
        }
    }
}

fn auto_horizon(params: &Params, cfg: &ClassifyConfig) -> Result<f64, ManifoldError> {
    let leave = departure_time(params, &cfg.seed)?;
    let base = match cfg.horizon {
        Some(h) => h,
        None => {
            let p0 = equilibria(params)?.p0;
            let slowest = linearize(&p0, params).eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            let settle = if slowest < 0.0 { 25.0 / -slowest } else { 100.0 };
            60.0 + 2.0 * leave + settle.min(5000.0)
        }
    };
    Ok(leave + base)
}

/// Classifies the branch at `params`, doubling the horizon while undecided.
pub fn classify_at(params: &Params, cfg: &ClassifyConfig) -> Result<BranchClass, ManifoldError> {
    let mut horizon = auto_horizon(params, cfg)?;
    let events = [EventSpec::x_zero().terminal(), EventSpec::xprime()];
    let mut last = None;
    for _ in 0..=cfg.horizon_doublings {
        let icfg = cfg.integrator.with_horizon(horizon);
        let class = match gamma_plus(params, &cfg.seed, &icfg, &events) {
            Ok(tr) => classify_branch(&tr, horizon, &cfg.criteria),
            Err(ManifoldError::Integrate(
                e @ (IntegrateError::BlowUp { .. } | IntegrateError::StepUnderflow { .. } | IntegrateError::StepBudget { .. }),
            )) => {
                let partial = e.partial().expect("failure carries partial trajectory");
                let mut c = classify_branch(partial, horizon, &cfg.criteria);
                if c.tag == BranchTag::Undetermined {
                    c.cause = Some(e.to_string());
                    return Ok(c);
                }
                c
            }
            Err(e) => return Err(e),
        };
        if class.tag != BranchTag::Undetermined {
            return Ok(class);
        }
        last = Some(class);
        horizon *= 2.0;
    }
    Ok(last.expect("at least one attempt"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RStarResult {
    pub s: f64,
    pub q: f64,
    /// `(R_lo, R_hi)`: positive branch at `R_lo`, zero crossing at `R_hi`.
    pub bracket: (f64, f64),
    pub class_lo: BranchClass,
    pub class_hi: BranchClass,
    pub width: f64,
    pub iterations: u32,
    /// False when five consecutive trial points stayed undetermined.
    pub resolved: bool,
    /// Classification of a grid straddling the final bracket, used to spot
    /// non-monotone behavior in `R`.
    pub probe: Vec<(f64, ProbeClass)>,
    pub non_monotone: bool,
}

impl RStarResult {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.bracket.0 + self.bracket.1)
    }
}

/// Side of the bracket a probe point falls on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProbeClass {
    Positive,
    Crossing,
    Unknown,
}

impl ProbeClass {
    fn of(c: &BranchClass) -> Self {
        if c.tag == BranchTag::CrossesZero {
            ProbeClass::Crossing
        } else if c.is_positive_side() {
            ProbeClass::Positive
        } else {
            ProbeClass::Unknown
        }
    }
}

/// Trial fractions tried in order when a bisection point stays undetermined.
const TRIAL_FRACTIONS: [f64; 5] = [0.5, 0.375, 0.625, 0.25, 0.75];

/// Bisection on `R` between a positive branch and a zero-crossing branch.
pub fn find_r_star(s: f64, q: f64, bracket0: (f64, f64), width_tol: f64, cfg: &ClassifyConfig) -> Result<RStarResult, ManifoldError> {
    let base = Params::new(s, q, bracket0.0.max(bracket0.1))?;
    let (mut lo, mut hi) = (bracket0.0.min(bracket0.1), bracket0.0.max(bracket0.1));
    let mut class_lo = classify_at(&base.with_r(lo), cfg)?;
    let mut class_hi = classify_at(&base.with_r(hi), cfg)?;
    if class_lo.tag == class_hi.tag && class_lo.tag != BranchTag::Undetermined {
        return Err(ManifoldError::SameClassAtEndpoints(format!("{:?}", class_lo.tag)));
    }
    if !(class_lo.is_positive_side() && class_hi.tag == BranchTag::CrossesZero) {
        return Err(ManifoldError::SameClassAtEndpoints(format!(
            "{:?}/{:?}; need a positive branch at the lower end and a zero crossing at the upper end",
            class_lo.tag, class_hi.tag
        )));
    }
    let mut iterations = 0;
    let mut resolved = true;
    while hi - lo >= width_tol {
        let mut moved = false;
        for frac in TRIAL_FRACTIONS {
            let r = lo + frac * (hi - lo);
            iterations += 1;
            let c = classify_at(&base.with_r(r), cfg)?;
            if c.tag == BranchTag::CrossesZero {
                hi = r;
                class_hi = c;
            } else if c.is_positive_side() {
                lo = r;
                class_lo = c;
            } else {
                continue;
            }
            moved = true;
            break;
        }
        if !moved {
            resolved = false;
            break;
        }
    }

    let width = hi - lo;
    let mut probe = Vec::new();
    if resolved {
        let a = (lo - 4.0 * width).max(1.0 + 1e-12);
        let b = hi + 4.0 * width;
        for k in 0..9 {
            let r = a + (b - a) * k as f64 / 8.0;
            probe.push((r, ProbeClass::of(&classify_at(&base.with_r(r), cfg)?)));
        }
    }
    let non_monotone = probe.windows(2).any(|w| w[0].1 == ProbeClass::Crossing && w[1].1 == ProbeClass::Positive);
    Ok(RStarResult { s, q, bracket: (lo, hi), class_lo, class_hi, width, iterations, resolved, probe, non_monotone })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HomoclinicDiagnostics {
    pub r: f64,
    pub tau1: Option<f64>,
    /// Smallest `max(|x|, |x'|)` in the return window after `tau1`.
    pub min_max_x_xprime: f64,
    pub closest_approach: f64,
    pub closest_time: f64,
    /// The return window `(tau1, window_end]` that was searched.
    pub window_end: f64,
    pub entered_ball_1e_2: bool,
}

/// Measures how nearly the branch returns to the origin after its first
/// turn: the window starts at the first sign change of `x'` and covers one
/// return excursion.
pub fn near_homoclinic_diagnostics(params: &Params, cfg: &ClassifyConfig) -> Result<HomoclinicDiagnostics, ManifoldError> {
    let leave = departure_time(params, &cfg.seed)?;
    let run = |horizon: f64, events: &[EventSpec]| match gamma_plus(params, &cfg.seed, &cfg.integrator.with_horizon(horizon), events) {
        Ok(tr) => Ok(tr),
        Err(ManifoldError::Integrate(e)) if e.partial().is_some() => Ok(e.partial().cloned().expect("checked")),
        Err(e) => Err(e),
    };
    let first = run(auto_horizon(params, cfg)?, &[EventSpec::xprime().terminal()])?;
    let tau1 = first.events.iter().find(|e| e.kind == EventTag::XprimeSignChange && !e.degenerate && !e.at_start).map(|e| e.t);
    let start = tau1.unwrap_or(leave);
    // One return excursion takes about as long as the first one. Near the
    // connection the branch slides down close to the z axis, so the window
    // is not cut at the zero of x.
    let tr = run(2.0 * start + 5.0, &[])?;
    let mut best = (f64::INFINITY, start, f64::INFINITY);
    let mut consider = |t: f64, s: &State| {
        if t <= start {
            return;
        }
        let n = s.norm();
        if n < best.0 {
            best.0 = n;
            best.1 = t;
        }
        best.2 = best.2.min(s.x.abs().max(rhs(s, params).x.abs()));
    };
    for (t, s) in tr.samples(8) {
        consider(t, &s);
    }
    let end = tr.end_time();
    Ok(HomoclinicDiagnostics {
        r: params.r,
        tau1,
        min_max_x_xprime: best.2,
        closest_approach: best.0,
        closest_time: best.1,
        window_end: end,
        entered_ball_1e_2: best.0 < 1e-2,
    })
}

/// Diagnostics at the midpoint of the bracket obtained for each width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NestedDiagnostic {
    pub width_tol: f64,
    pub bracket: (f64, f64),
    pub resolved: bool,
    pub diagnostics: HomoclinicDiagnostics,
}

/// Runs the bisection to each width in `widths` and measures the return at
/// the bracket midpoint. Bisection is deterministic, so the brackets are
/// nested when the widths decrease.
pub fn nested_diagnostics(
    s: f64,
    q: f64,
    bracket0: (f64, f64),
    widths: &[f64],
    cfg: &ClassifyConfig,
) -> Result<Vec<NestedDiagnostic>, ManifoldError> {
    widths
        .iter()
        .map(|&w| {
            let r = find_r_star(s, q, bracket0, w, cfg)?;
            let params = Params::new(s, q, r.midpoint())?;
            Ok(NestedDiagnostic {
                width_tol: w,
                bracket: r.bracket,
                resolved: r.resolved,
                diagnostics: near_homoclinic_diagnostics(&params, cfg)?,
            })
        })
        .collect()
}

/// Finite-difference check of the Jacobian, used by property tests.
pub fn jacobian_fd_error(state: &State, params: &Params, h: f64) -> f64 {
    let j = jacobian(state, params);
    let mut worst: f64 = 0.0;
    for k in 0..3 {
        let mut a = state.to_array();
        let mut b = state.to_array();
        a[k] += h;
        b[k] -= h;
        let d = (rhs(&State::from_array(a), params) - rhs(&State::from_array(b), params)) * (0.5 / h);
        for i in 0..3 {
            worst = worst.max((d[i] - j[(i, k)]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lies_along_positive_eigenvector() {
        let p = Params::new(10.0, 1.0, 1000.0).unwrap();
        let s = seed_gamma_plus(&p, &SeedConfig::default()).unwrap();
        assert_eq!(s.z, 0.0);
        assert!(s.x > 0.0 && s.y > 0.0);
        assert!((s.norm() - 1e-8).abs() < 1e-22);
        let second = seed_gamma_plus(&p, &SeedConfig { epsilon: 1e-8, richardson: true }).unwrap();
        assert!(second.z > 0.0 && second.z < 1e-15);
    }

    #[test]
    fn seed_tends_to_origin_with_epsilon() {
        let p = Params::new(10.0, 1.0, 12.0).unwrap();
        let norms: Vec<f64> = [1e-4, 1e-6, 1e-8, 1e-10]
            .iter()
            .map(|&e| seed_gamma_plus(&p, &SeedConfig { epsilon: e, richardson: false }).unwrap().norm())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]));
        assert!(norms[3] < 1e-9);
    }

    #[test]
    fn seed_config_bounds() {
        let p = Params::new(10.0, 1.0, 12.0).unwrap();
        assert!(seed_gamma_plus(&p, &SeedConfig { epsilon: 1e-3, richardson: false }).is_err());
        assert!(seed_gamma_plus(&p, &SeedConfig { epsilon: 0.0, richardson: false }).is_err());
    }

    #[test]
    fn backward_validation_accepts_the_seed() {
        for r in [1.5, 12.0, 28.0, 1000.0] {
            let p = Params::new(10.0, 1.0, r).unwrap();
            let angle = validate_seed(&p, &SeedConfig::default(), &IntegratorConfig::default()).unwrap();
            assert!(angle < 1e-3, "R = {r}: angle {angle}");
        }
    }

    #[test]
    fn same_class_endpoints_are_rejected() {
        let cfg = ClassifyConfig::default();
        let err = find_r_star(10.0, 1.0, (20.0, 1000.0), 1e-4, &cfg).unwrap_err();
        assert!(matches!(err, ManifoldError::SameClassAtEndpoints(_)), "{err}");
    }
}
