//! Checkers for the event-ordering hypothesis on the branch (condition A),
//! the backward-time dichotomy for starts on `M` inside the ellipsoid
//! (condition B), and the sweep over `R` for condition A.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::{ellipsoid_value, equilibria, m_cap_e_extent, point_on_m, Geometry, Params, State};
use crate::error::{ConditionsError, ManifoldError};
use crate::integrator::{integrate, EventSpec, EventTag, IntegratorConfig, Termination, Trajectory};
use crate::manifold::{departure_time, gamma_plus, SeedConfig};
use crate::parallel;
use crate::trace::POS_TOL;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionAConfig {
    pub seed: SeedConfig,
    pub integrator: IntegratorConfig,
    /// Integration time past the departure from the origin.
    pub horizon: f64,
}

impl Default for ConditionAConfig {
    fn default() -> Self {
        ConditionAConfig { seed: SeedConfig::default(), integrator: IntegratorConfig::default(), horizon: 60.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FailureReason {
    TooFewTaus,
    NoXZero,
    OrderViolation,
    Horizon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderedEvent {
    pub label: String,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionAReport {
    pub params: Params,
    pub holds: bool,
    /// A degenerate crossing made the ordering unreliable.
    pub inconclusive: bool,
    /// The first five sign changes of `x'` and the first two zeros of `x`,
    /// merged in time order.
    pub ordering: Vec<OrderedEvent>,
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    /// No second zero before the horizon: `t2` is taken to be infinite.
    pub t2_infinite: bool,
    pub failure_reason: Option<FailureReason>,
    pub horizon: f64,
}

impl ConditionAReport {
    pub fn verdict(&self) -> Verdict {
        if self.inconclusive {
            Verdict::Inconclusive
        } else if self.holds {
            Verdict::Holds
        } else {
            Verdict::Fails
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Holds,
    Fails,
    Inconclusive,
}

/// Tests `tau1 < t1 < tau2 < tau3 < tau4 < tau5 < t2` on the branch.
pub fn check_condition_a(params: &Params, cfg: &ConditionAConfig) -> Result<ConditionAReport, ConditionsError> {
    let horizon = departure_time(params, &cfg.seed)? + cfg.horizon;
    let events = [EventSpec::x_zero().terminal_after(2), EventSpec::xprime()];
    let tr = match gamma_plus(params, &cfg.seed, &cfg.integrator.with_horizon(horizon), &events) {
        Ok(tr) => tr,
        Err(ManifoldError::Integrate(e)) => match e.partial() {
            Some(p) => p.clone(),
            None => return Err(e.into()),
        },
        Err(e) => return Err(e.into()),
    };
    Ok(condition_a_from_trajectory(&tr, horizon))
}

pub fn condition_a_from_trajectory(tr: &Trajectory, horizon: f64) -> ConditionAReport {
    let live = |tag: EventTag| tr.events.iter().filter(move |e| e.kind == tag && !e.at_start);
    let degenerate =
        tr.events.iter().any(|e| !e.at_start && e.degenerate && matches!(e.kind, EventTag::XZero | EventTag::XprimeSignChange));
    let zeros: Vec<f64> = live(EventTag::XZero).map(|e| e.t).take(2).collect();
    let taus: Vec<f64> = live(EventTag::XprimeSignChange).map(|e| e.t).collect();
    let t1 = zeros.first().copied();
    let t2 = zeros.get(1).copied();
    let reached_end = tr.termination == Termination::Horizon || tr.termination == Termination::TerminalEvent;
    let t2_infinite = t2.is_none() && tr.termination == Termination::Horizon;

    let mut ordering: Vec<OrderedEvent> =
        taus.iter().take(5).enumerate().map(|(i, &t)| OrderedEvent { label: format!("tau{}", i + 1), t }).collect();
    for (i, &t) in zeros.iter().enumerate() {
        ordering.push(OrderedEvent { label: format!("t{}", i + 1), t });
    }
    ordering.sort_by(|a, b| a.t.total_cmp(&b.t));

    let failure_reason = match t1 {
        None if tr.termination == Termination::Horizon => Some(FailureReason::NoXZero),
        None => Some(FailureReason::Horizon),
        Some(t1) => {
            let expected = ["tau1", "t1", "tau2", "tau3", "tau4", "tau5"];
            let prefix_ok = ordering.len() >= 6 && ordering.iter().zip(expected).all(|(e, l)| e.label == l);
            let tail_ok = match t2 {
                Some(t2) => taus.len() >= 5 && taus[4] < t2,
                None => taus.len() >= 5,
            };
            if prefix_ok && tail_ok && taus[0] < t1 {
                None
            } else if t2.is_some() {
                Some(FailureReason::OrderViolation)
            } else if !reached_end {
                Some(FailureReason::Horizon)
            } else if taus.len() < 5 {
                Some(FailureReason::TooFewTaus)
            } else {
                Some(FailureReason::OrderViolation)
            }
        }
    };
    ConditionAReport {
        params: tr.params,
        holds: failure_reason.is_none() && !degenerate,
        inconclusive: degenerate,
        ordering,
        t1,
        t2,
        t2_infinite,
        failure_reason,
        horizon,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub s: f64,
    pub q: f64,
    /// Sorted grid, including the points added near verdict flips.
    pub grid: Vec<f64>,
    pub verdicts: Vec<ConditionAReport>,
    /// Longest contiguous run of grid points where the condition holds.
    pub estimated_range: Option<(f64, f64)>,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "R,verdict")?;
        for (r, v) in self.grid.iter().zip(&self.verdicts) {
            writeln!(w, "{r},{}", verdict_label(v.verdict()))?;
        }
        Ok(())
    }
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::Holds => "HOLDS",
        Verdict::Fails => "FAILS",
        Verdict::Inconclusive => "INCONCLUSIVE",
    }
}

/// Number of bisection rounds applied between neighbours whose verdicts
/// differ.
pub const REFINE_ROUNDS: usize = 3;

pub fn sweep_condition_a(s: f64, q: f64, grid: &[f64], cfg: &ConditionAConfig) -> Result<SweepResult, ConditionsError> {
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ConditionsError::BadGrid);
    }
    for &r in grid {
        Params::new(s, q, r)?;
    }
    let eval = |rs: &[f64]| -> Result<Vec<ConditionAReport>, ConditionsError> {
        parallel::map(rs, |&r| check_condition_a(&Params { s, q, r }, cfg)).into_iter().collect()
    };
    let mut points: Vec<(f64, ConditionAReport)> = grid.iter().copied().zip(eval(grid)?).collect();
    // Each round bisects every adjacent pair with differing verdicts.
    for _ in 0..REFINE_ROUNDS {
        let mids: Vec<f64> = points.windows(2).filter(|w| w[0].1.verdict() != w[1].1.verdict()).map(|w| 0.5 * (w[0].0 + w[1].0)).collect();
        if mids.is_empty() {
            break;
        }
        points.extend(mids.iter().copied().zip(eval(&mids)?));
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    for i in 0..=points.len() {
        let holds = i < points.len() && points[i].1.verdict() == Verdict::Holds;
        match (holds, run_start) {
            (true, None) => run_start = Some(i),
            (false, Some(a)) => {
                let b = i - 1;
                let longer = best.is_none_or(|(ba, bb)| points[b].0 - points[a].0 > points[bb].0 - points[ba].0);
                if longer {
                    best = Some((a, b));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    let estimated_range = best.map(|(a, b)| (points[a].0, points[b].0));
    let (grid, verdicts) = points.into_iter().unzip();
    Ok(SweepResult { s, q, grid, verdicts, estimated_range })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct P1Report {
    /// The crossing with `y` set equal to `x`, as used for the segment `L`.
    pub p1: State,
    pub t: f64,
    /// `z - (R - 1)`; positive in the expected regime.
    pub margin: f64,
    /// `|x (R - 1 - z)|`, the rate of `y - x` at the crossing.
    pub transversality: f64,
    /// `|y - x|` of the located crossing before projection.
    pub plane_residual: f64,
}

/// Crossings with `|x (R - 1 - z)|` at or below this are tangential.
pub const TRANSVERSAL_TOL: f64 = 1e-9;

/// First transversal crossing of the plane `x = y` along the branch.
pub fn find_p1(params: &Params, seed: &SeedConfig, integrator: &IntegratorConfig, horizon: f64) -> Result<P1Report, ConditionsError> {
    let total = departure_time(params, seed)? + horizon;
    let events = [EventSpec::plane_xy()];
    let tr = match gamma_plus(params, seed, &integrator.with_horizon(total), &events) {
        Ok(tr) => tr,
        Err(ManifoldError::Integrate(e)) => match e.partial() {
            Some(p) => p.clone(),
            None => return Err(e.into()),
        },
        Err(e) => return Err(e.into()),
    };
    let hit = tr
        .events
        .iter()
        .filter(|e| e.kind == EventTag::PlaneXyCross && !e.at_start)
        .find(|e| {
            let s = e.state;
            (s.x * (params.r - 1.0 - s.z)).abs() > TRANSVERSAL_TOL
        })
        .ok_or(ConditionsError::NoCrossing { horizon: total })?;
    let s = hit.state;
    let xy = 0.5 * (s.x + s.y);
    Ok(P1Report {
        p1: State::new(xy, xy, s.z),
        t: hit.t,
        margin: s.z - (params.r - 1.0),
        transversality: (s.x * (params.r - 1.0 - s.z)).abs(),
        plane_residual: (s.y - s.x).abs(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConditionBConfig {
    pub n_samples: usize,
    pub back_horizon: f64,
    /// Samples closer than this to `p0` (or its mirror) along `M` are moved
    /// out to this distance.
    pub delta: f64,
    /// Tube radius around `L` treated as a hit.
    pub l_tol: f64,
    pub pos_tol: f64,
    /// Upper end of the forward part of the (2b) window.
    pub window_forward: f64,
    /// Proceed even though the ellipsoid is only invariant for `s = 10`.
    pub ellipsoid_override: bool,
    pub integrator: IntegratorConfig,
    pub seed: SeedConfig,
    /// Horizon used to find `p1`.
    pub p1_horizon: f64,
}

impl Default for ConditionBConfig {
    fn default() -> Self {
        ConditionBConfig {
            n_samples: 4096,
            back_horizon: 50.0,
            delta: 1e-4,
            l_tol: 1e-6,
            pos_tol: POS_TOL,
            window_forward: 10.0,
            ellipsoid_override: false,
            integrator: IntegratorConfig::default(),
            seed: SeedConfig::default(),
            p1_horizon: 40.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleVerdict {
    /// (2a): leaves the ellipsoid in backward time before meeting `L`.
    #[serde(rename = "LEAVES_E_BEFORE_L")]
    LeavesEBeforeL,
    /// (2b): four transversal sign changes of `x'` on a window around
    /// `t = 0` on which `x` does not vanish.
    #[serde(rename = "FOUR_CHANGES_LOCAL")]
    FourChangesLocal,
    #[serde(rename = "VIOLATION")]
    Violation,
    #[serde(rename = "INCONCLUSIVE")]
    Inconclusive,
}

impl SampleVerdict {
    pub fn label(self) -> &'static str {
        match self {
            SampleVerdict::LeavesEBeforeL => "LEAVES_E_BEFORE_L",
            SampleVerdict::FourChangesLocal => "FOUR_CHANGES_LOCAL",
            SampleVerdict::Violation => "VIOLATION",
            SampleVerdict::Inconclusive => "INCONCLUSIVE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionBSampleVerdict {
    pub xi: f64,
    pub verdict: SampleVerdict,
    /// Backward exit time from the ellipsoid (negative).
    pub t_exit: Option<f64>,
    /// Smallest sampled distance to `L` up to the exit or the end of the run.
    pub min_dist_to_l: f64,
    /// The (2b) window `(a, b)` and the transversal sign changes found in it.
    pub window: (f64, f64),
    pub window_changes: u32,
    pub note: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub leaves_e_before_l: usize,
    pub four_changes_local: usize,
    pub violation: usize,
    pub inconclusive: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionBReport {
    pub params: Params,
    pub p1: State,
    pub xi_range: (f64, f64),
    pub config: ConditionBConfig,
    pub samples: Vec<ConditionBSampleVerdict>,
    pub counts: VerdictCounts,
    /// Every sample is (2a) or (2b).
    pub holds: bool,
    pub warnings: Vec<String>,
}

impl ConditionBReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "xi,verdict")?;
        for s in &self.samples {
            writeln!(w, "{},{}", s.xi, s.verdict.label())?;
        }
        Ok(())
    }
}

/// Sample positions: midpoints of `n` equal cells of `[lo, hi]`, pushed to
/// distance `delta` from the equilibria at `+-xi0` when closer.
pub fn condition_b_samples(lo: f64, hi: f64, n: usize, xi0: f64, delta: f64) -> Vec<f64> {
    let h = (hi - lo) / n as f64;
    (0..n)
        .map(|k| {
            let mut xi = lo + (k as f64 + 0.5) * h;
            for c in [xi0, -xi0] {
                if (xi - c).abs() < delta {
                    xi = if xi >= c { c + delta } else { c - delta };
                }
            }
            xi
        })
        .collect()
}

pub fn check_condition_b(params: &Params, cfg: &ConditionBConfig) -> Result<ConditionBReport, ConditionsError> {
    if cfg.n_samples < 2 {
        return Err(ConditionsError::TooFewSamples(cfg.n_samples));
    }
    let mut warnings = Vec::new();
    if !params.ellipsoid_matches_s() {
        if !cfg.ellipsoid_override {
            return Err(ConditionsError::EllipsoidCoefficient(params.s));
        }
        warnings.push(format!("s = {} but the ellipsoid is only invariant for s = 10; exits are not conclusive", params.s));
    }
    let p1 = find_p1(params, &cfg.seed, &cfg.integrator, cfg.p1_horizon)?;
    let geometry = Geometry::new(*params, p1.p1)?;
    let (lo, hi) = m_cap_e_extent(params)?;
    let xi0 = equilibria(params)?.p0.x;
    let xis = condition_b_samples(lo, hi, cfg.n_samples, xi0, cfg.delta);
    let samples: Vec<ConditionBSampleVerdict> = parallel::map(&xis, |&xi| condition_b_sample(&geometry, xi, cfg));
    let mut counts = VerdictCounts::default();
    for s in &samples {
        match s.verdict {
            SampleVerdict::LeavesEBeforeL => counts.leaves_e_before_l += 1,
            SampleVerdict::FourChangesLocal => counts.four_changes_local += 1,
            SampleVerdict::Violation => counts.violation += 1,
            SampleVerdict::Inconclusive => counts.inconclusive += 1,
        }
    }
    let holds = counts.violation == 0 && counts.inconclusive == 0;
    Ok(ConditionBReport { params: *params, p1: p1.p1, xi_range: (lo, hi), config: *cfg, samples, counts, holds, warnings })
}

fn trajectory_or_partial(r: Result<Trajectory, crate::error::IntegrateError>) -> Result<Trajectory, String> {
    match r {
        Ok(t) => Ok(t),
        Err(e) => e.partial().cloned().ok_or_else(|| e.to_string()),
    }
}

/// Number of transversal sign changes of `x'` on the largest window around
/// `t = 0` inside `[-back_horizon, window_forward]` on which
/// `|x| > pos_tol`. The backward half also ends at the exit from `E`;
/// past it the orbit grows without bound and oscillates ever faster.
fn local_window(start: &State, params: &Params, cfg: &ConditionBConfig) -> (f64, f64, u32) {
    let run = |icfg: IntegratorConfig, events: &[EventSpec]| trajectory_or_partial(integrate(*start, params, &icfg, events)).ok();
    let fwd = run(cfg.integrator.forward().with_horizon(cfg.window_forward), &[EventSpec::x_zero().terminal(), EventSpec::xprime()]);
    let back = run(
        cfg.integrator.backward().with_horizon(cfg.back_horizon),
        &[EventSpec::x_zero().terminal(), EventSpec::xprime(), EventSpec::ellipsoid_exit().terminal()],
    );
    let mut count = 0;
    let mut ends = [0.0, 0.0];
    for (k, tr) in [fwd.as_ref(), back.as_ref()].into_iter().enumerate() {
        let Some(tr) = tr else { continue };
        let mut end = tr.end_time();
        for (t, s) in tr.samples(4) {
            if s.x.abs() <= cfg.pos_tol {
                end = t;
                break;
            }
        }
        ends[k] = end;
        count += tr
            .events
            .iter()
            .filter(|e| {
                e.kind == EventTag::XprimeSignChange
                    && !e.at_start
                    && !e.degenerate
                    && e.t != 0.0
                    && (e.t - end) * tr.direction.sign() < 0.0
            })
            .count() as u32;
    }
    (ends[1], ends[0], count)
}

/// Verdict for one start on `M`.
pub fn condition_b_sample(geometry: &Geometry, xi: f64, cfg: &ConditionBConfig) -> ConditionBSampleVerdict {
    let params = &geometry.params;
    let start = point_on_m(xi, params);
    let mut verdict = ConditionBSampleVerdict {
        xi,
        verdict: SampleVerdict::Inconclusive,
        t_exit: None,
        min_dist_to_l: geometry.distance_to_l(&start),
        window: (0.0, 0.0),
        window_changes: 0,
        note: None,
    };
    // (2a) first; the local window is only needed when it does not settle
    // the sample.
    let events = [EventSpec::ellipsoid_exit().terminal(), EventSpec::segment_hit(geometry.p1, geometry.p0, cfg.l_tol).terminal()];
    let icfg = cfg.integrator.backward().with_horizon(cfg.back_horizon);
    let backward = match trajectory_or_partial(integrate(start, params, &icfg, &events)) {
        Ok(tr) => {
            let min_dist = tr.samples(4).iter().map(|(_, s)| geometry.distance_to_l(s)).fold(f64::INFINITY, f64::min);
            verdict.min_dist_to_l = min_dist;
            let first = tr.events.iter().find(|e| !e.at_start && (e.kind == EventTag::EllipsoidExit || e.kind == EventTag::SegmentLHit));
            match first {
                Some(e) if e.kind == EventTag::SegmentLHit => {
                    Err((SampleVerdict::Violation, Some(format!("reached the tube around L at t = {}", e.t))))
                }
                Some(e) if min_dist > cfg.l_tol => {
                    verdict.verdict = SampleVerdict::LeavesEBeforeL;
                    verdict.t_exit = Some(e.t);
                    Ok(())
                }
                Some(e) => {
                    verdict.t_exit = Some(e.t);
                    Err((SampleVerdict::Inconclusive, Some("sampled distance to L fell below the tube radius".into())))
                }
                None => Err((
                    SampleVerdict::Inconclusive,
                    Some(match tr.termination {
                        Termination::Horizon => format!("still inside E at t = {}", -cfg.back_horizon),
                        other => format!("integration stopped: {other:?}"),
                    }),
                )),
            }
        }
        Err(msg) => Err((SampleVerdict::Inconclusive, Some(msg))),
    };
    let Err((fallback, note)) = backward else {
        return verdict;
    };
    let (a, b, changes) = local_window(&start, params, cfg);
    verdict.window = (a, b);
    verdict.window_changes = changes;
    if changes >= 4 {
        verdict.verdict = SampleVerdict::FourChangesLocal;
    } else {
        verdict.verdict = fallback;
        verdict.note = note;
    }
    verdict
}

/// Ellipsoid values along the backward continuation past `t_exit`, for
/// checking that the orbit does not come back into `E`.
pub fn continuation_after_exit(start: &State, params: &Params, t_exit: f64, extra: f64, cfg: &IntegratorConfig) -> Vec<(f64, f64)> {
    let icfg = cfg.backward().with_horizon(-t_exit + extra);
    let tr = match trajectory_or_partial(integrate(*start, params, &icfg, &[])) {
        Ok(t) => t,
        Err(_) => return Vec::new(),
    };
    tr.samples(4).into_iter().filter(|(t, _)| *t <= t_exit).map(|(t, s)| (t, ellipsoid_value(&s, params))).collect()
}
