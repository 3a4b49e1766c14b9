//! Symbolic shooting along the segment `L`: starts
//! `p_alpha = alpha p0 + (1 - alpha) p1` are refined by nested intervals
//! until the counts of `x'` sign changes between consecutive zeros of `x`
//! spell a prescribed word over `{1, 3}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conditions::{check_condition_a, find_p1, ConditionAConfig};
use crate::dynamics::{complex_pair_at_p0, Geometry, Params, State};
use crate::error::SequenceError;
use crate::integrator::{integrate, EventSpec, EventTag, IntegratorConfig, Trajectory};
use crate::parallel;
use crate::trace::{summarize, TraceSummary};

/// A nonempty word over `{1, 3}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TargetWord {
    letters: Vec<u32>,
}

impl TargetWord {
    pub fn new(letters: Vec<u32>) -> Result<Self, SequenceError> {
        if letters.is_empty() || letters.iter().any(|&l| l != 1 && l != 3) {
            return Err(SequenceError::BadWord(format!("{letters:?}")));
        }
        Ok(TargetWord { letters })
    }

    pub fn letters(&self) -> &[u32] {
        &self.letters
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    /// Every word over `{1, 3}` of length `1..=max_len`.
    pub fn all_up_to(max_len: usize) -> Vec<TargetWord> {
        let mut out = Vec::new();
        for n in 1..=max_len {
            for bits in 0..(1u32 << n) {
                let letters = (0..n).map(|i| if bits >> (n - 1 - i) & 1 == 1 { 3 } else { 1 }).collect();
                out.push(TargetWord { letters });
            }
        }
        out
    }
}

impl FromStr for TargetWord {
    type Err = SequenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let letters = s
            .trim()
            .chars()
            .map(|c| match c {
                '1' => Ok(1),
                '3' => Ok(3),
                _ => Err(SequenceError::BadWord(s.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        TargetWord::new(letters).map_err(|_| SequenceError::BadWord(s.to_string()))
    }
}

impl TryFrom<String> for TargetWord {
    type Error = SequenceError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TargetWord> for String {
    fn from(w: TargetWord) -> String {
        w.to_string()
    }
}

impl fmt::Display for TargetWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.letters {
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

/// `alpha p0 + (1 - alpha) p1`.
pub fn point_on_l(alpha: f64, geometry: &Geometry) -> Result<State, SequenceError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(SequenceError::AlphaOutOfRange(alpha));
    }
    Ok(geometry.point_on_l(alpha))
}

/// Letter `n` of a sampled word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "count", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Letter {
    /// Both bounding zeros were observed.
    Closed(u32),
    /// The interval after the last observed zero was cut off by the
    /// horizon; the count is a lower bound.
    Open(u32),
    /// The zero opening this interval was not observed.
    Unreached,
}

impl Letter {
    pub fn at_least_four(self) -> bool {
        matches!(self, Letter::Closed(n) | Letter::Open(n) if n >= 4)
    }

    /// Letters that a finer grid or a longer horizon cannot settle.
    fn settled(self) -> bool {
        matches!(self, Letter::Closed(_)) || self.at_least_four()
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Letter::Closed(n) => write!(f, "{n}"),
            Letter::Open(n) => write!(f, ">={n}"),
            Letter::Unreached => write!(f, "?"),
        }
    }
}

/// Data read off the trajectory from one `alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootSample {
    pub alpha: f64,
    /// Sign changes of `x'` before the first zero of `x`.
    pub pre: u32,
    pub zeros: Vec<f64>,
    pub letters: Vec<Letter>,
    pub degenerate: bool,
    pub horizon: f64,
}

impl ShootSample {
    pub fn from_summary(alpha: f64, summary: &TraceSummary, n_letters: usize, horizon: f64) -> Self {
        let letters = (1..=n_letters)
            .map(|k| {
                if k <= summary.sigma.len() {
                    Letter::Closed(summary.sigma[k - 1])
                } else if k == summary.sigma.len() + 1 && summary.x_zeros.len() >= k && summary.open_tail {
                    Letter::Open(summary.tail_changes)
                } else {
                    Letter::Unreached
                }
            })
            .collect();
        ShootSample {
            alpha,
            pre: summary.pre_zero_changes,
            zeros: summary.x_zeros.clone(),
            letters,
            degenerate: summary.degenerate,
            horizon,
        }
    }

    pub fn letter(&self, k: usize) -> Letter {
        k.checked_sub(1).and_then(|i| self.letters.get(i).copied()).unwrap_or(Letter::Unreached)
    }

    pub fn zero(&self, k: usize) -> Option<f64> {
        k.checked_sub(1).and_then(|i| self.zeros.get(i).copied())
    }

    /// The closed letters, i.e. the realized word.
    pub fn word(&self) -> Vec<u32> {
        self.letters
            .iter()
            .map_while(|l| match l {
                Letter::Closed(n) => Some(*n),
                _ => None,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShootConfig {
    pub integrator: IntegratorConfig,
    pub condition_a: ConditionAConfig,
    /// Horizon used to locate `p1`.
    pub p1_horizon: f64,
    /// Adjacent samples whose zero times differ by this much are not
    /// treated as lying on one continuity interval.
    pub jump_tol: f64,
    /// Smallest gap between samples produced by refinement.
    pub resolution: f64,
    /// Samples laid over each interval before refinement.
    pub grid: usize,
    /// New integrations allowed per letter.
    pub max_samples_per_step: usize,
    /// The horizon for letter `n` is `horizon_base + horizon_per_letter * n`.
    pub horizon_base: f64,
    pub horizon_per_letter: f64,
    pub max_len: usize,
}

impl Default for ShootConfig {
    fn default() -> Self {
        ShootConfig {
            integrator: IntegratorConfig::default(),
            condition_a: ConditionAConfig::default(),
            p1_horizon: 40.0,
            jump_tol: 5.0,
            resolution: 1e-12,
            grid: 65,
            max_samples_per_step: 6000,
            horizon_base: 30.0,
            horizon_per_letter: 15.0,
            max_len: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorKind {
    /// `sigma_n = 1` and `sigma_{n+1} >= 4`.
    A,
    /// `sigma_n = 3` and `sigma_{n+1} >= 4`.
    B,
    /// `sigma_n >= 4`.
    C,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub kind: AnchorKind,
    pub alpha: f64,
    pub sigma_n: Letter,
    pub sigma_next: Letter,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LetterCertificate {
    /// 1-based letter index.
    pub step: usize,
    pub letter: u32,
    /// Interval scanned at this step; all its samples realize the earlier
    /// letters with continuous zero times.
    pub parent: (f64, f64),
    /// Sub-interval on which the letter is realized and the next zero time
    /// is continuous.
    pub interval: (f64, f64),
    /// First anchor of each kind found in `parent`.
    pub anchors: Vec<Anchor>,
    pub samples: usize,
    pub alarms: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootResult {
    pub target: TargetWord,
    pub params: Params,
    pub p1: State,
    pub alpha_interval: (f64, f64),
    pub witness_alpha: f64,
    pub achieved_word: Vec<u32>,
    /// Word of the witness recomputed with halved tolerances.
    pub halved_tolerance_word: Vec<u32>,
    pub certificates: Vec<LetterCertificate>,
    pub horizon_used: f64,
    pub final_width: f64,
    pub final_state: ShootState,
}

impl ShootResult {
    pub fn interval_chain(&self) -> Vec<(f64, f64)> {
        self.certificates.iter().map(|c| c.interval).collect()
    }
}

/// The refinement state after the last letter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShootState {
    pub interval: (f64, f64),
    pub realized_prefix: Vec<u32>,
    pub anchors: Vec<Anchor>,
    /// Retained samples, sorted by `alpha`.
    pub continuity_grid: Vec<ShootSample>,
}

/// One adjacent pair flagged by [`sigma_transition_audit`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionAlarm {
    pub alpha_left: f64,
    pub alpha_right: f64,
    pub left: Letter,
    pub right: Letter,
}

/// Flags neighbours whose letters jump between `>= 4` and `<= 1`, which
/// cannot happen without an intermediate count and so indicates a grid that
/// is too coarse.
pub fn sigma_transition_audit(samples: &[(f64, Letter)]) -> Vec<TransitionAlarm> {
    let low = |l: Letter| matches!(l, Letter::Closed(n) if n <= 1);
    samples
        .windows(2)
        .filter(|w| (w[0].1.at_least_four() && low(w[1].1)) || (low(w[0].1) && w[1].1.at_least_four()))
        .map(|w| TransitionAlarm { alpha_left: w[0].0, alpha_right: w[1].0, left: w[0].1, right: w[1].1 })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointCheck {
    pub alpha: f64,
    pub pass: bool,
    pub first_plane_xy: Option<f64>,
    pub first_x_zero: Option<f64>,
    pub second_x_zero: Option<f64>,
    /// Sign changes of `x'` before the first zero.
    pub pre_zero_changes: u32,
    /// Sign changes of `x'` after the first zero and before the second (or
    /// the horizon).
    pub changes_after_first_zero: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointReport {
    pub params: Params,
    pub p1: State,
    /// Near `p0`: the plane `y = x` is crossed before any zero of `x`.
    pub near_p0: EndpointCheck,
    /// Near `p1`: `x` falls monotonically below zero, then `x'` changes sign
    /// at least four times before the next zero.
    pub near_p1: EndpointCheck,
    pub pass: bool,
}

/// Checks the hypotheses of the construction and returns the geometry of
/// `L`.
pub fn prepare(params: &Params, cfg: &ShootConfig) -> Result<Geometry, SequenceError> {
    let a = check_condition_a(params, &cfg.condition_a)?;
    if !a.holds {
        return Err(SequenceError::ConditionAFailed);
    }
    if !complex_pair_at_p0(params)? {
        return Err(SequenceError::NoComplexPair);
    }
    let p1 = find_p1(params, &cfg.condition_a.seed, &cfg.integrator, cfg.p1_horizon)?;
    Ok(Geometry::new(*params, p1.p1)?)
}

fn run_from(geometry: &Geometry, alpha: f64, icfg: &IntegratorConfig, events: &[EventSpec]) -> Result<Trajectory, SequenceError> {
    let start = point_on_l(alpha, geometry)?;
    match integrate(start, &geometry.params, &icfg.forward(), events) {
        Ok(t) => Ok(t),
        Err(e) => match e.partial() {
            Some(p) => Ok(p.clone()),
            None => Err(e.into()),
        },
    }
}

pub fn endpoint_behaviors(
    params: &Params,
    cfg: &ShootConfig,
    alpha_near_p0: f64,
    alpha_near_p1: f64,
    horizon: f64,
) -> Result<EndpointReport, SequenceError> {
    for a in [alpha_near_p0, alpha_near_p1] {
        if !(0.0..1.0).contains(&a) {
            // alpha = 1 is the equilibrium p0 itself.
            return Err(SequenceError::AlphaOutOfRange(a));
        }
    }
    let geometry = prepare(params, cfg)?;
    let icfg = cfg.integrator.with_horizon(horizon);
    let events = [EventSpec::plane_xy(), EventSpec::x_zero().terminal_after(2), EventSpec::xprime()];
    let check = |alpha: f64| -> Result<(EndpointCheck, Trajectory), SequenceError> {
        let tr = run_from(&geometry, alpha, &icfg, &events)?;
        let first = |tag: EventTag| tr.events.iter().find(|e| e.kind == tag && !e.at_start).map(|e| e.t);
        let s = summarize(&tr);
        let c = EndpointCheck {
            alpha,
            pass: false,
            first_plane_xy: first(EventTag::PlaneXyCross),
            first_x_zero: s.zero(1),
            second_x_zero: s.zero(2),
            pre_zero_changes: s.pre_zero_changes,
            changes_after_first_zero: s.letter_lower_bound(1).unwrap_or(0),
        };
        Ok((c, tr))
    };
    let (mut near_p0, _) = check(alpha_near_p0)?;
    near_p0.pass = match (near_p0.first_plane_xy, near_p0.first_x_zero) {
        (Some(c), Some(z)) => c < z,
        (Some(_), None) => true,
        _ => false,
    };
    let (mut near_p1, tr) = check(alpha_near_p1)?;
    let monotone = match near_p1.first_x_zero {
        Some(t1) => {
            near_p1.pre_zero_changes == 0 && tr.samples(4).iter().filter(|(t, _)| *t > 0.0 && *t <= t1).all(|(_, s)| s.y - s.x < 0.0)
        }
        None => false,
    };
    near_p1.pass = monotone && near_p1.changes_after_first_zero >= 4;
    let pass = near_p0.pass && near_p1.pass;
    Ok(EndpointReport { params: *params, p1: geometry.p1, near_p0, near_p1, pass })
}

struct Shooter<'a> {
    geometry: &'a Geometry,
    cfg: &'a ShootConfig,
    icfg: IntegratorConfig,
}

impl Shooter<'_> {
    fn horizon(&self, letters: usize) -> f64 {
        self.cfg.horizon_base + self.cfg.horizon_per_letter * letters as f64
    }

    /// Integrates far enough to read letters `1..=n_letters`, doubling the
    /// horizon once when the last of them is still unsettled.
    fn sample(&self, alpha: f64, n_letters: usize) -> Result<ShootSample, SequenceError> {
        let events = [EventSpec::x_zero().terminal_after(n_letters + 1), EventSpec::xprime()];
        let mut horizon = self.horizon(n_letters);
        let mut out = None;
        for _ in 0..2 {
            let tr = run_from(self.geometry, alpha, &self.icfg.with_horizon(horizon), &events)?;
            let s = ShootSample::from_summary(alpha, &summarize(&tr), n_letters, horizon);
            let done = s.letters.iter().all(|l| l.settled()) || s.letters.iter().any(|l| *l == Letter::Unreached && s.zeros.is_empty());
            out = Some(s);
            if done {
                break;
            }
            horizon *= 2.0;
        }
        Ok(out.expect("sampled at least once"))
    }

    /// Pushes both ends of the run out to the edge of its continuity
    /// interval by bisection against the neighbouring samples.
    fn widen(&self, samples: &mut Vec<ShootSample>, run: (usize, usize), k: usize, want: &[u32]) -> Result<(usize, usize), SequenceError> {
        let mut inner_lo = samples[run.0].clone();
        let mut inner_hi = samples[run.1].clone();
        let mut added = Vec::new();
        let mut bisect = |inner: &mut ShootSample, outer: Option<ShootSample>| -> Result<(), SequenceError> {
            let Some(mut outer) = outer else { return Ok(()) };
            while (outer.alpha - inner.alpha).abs() > self.cfg.resolution {
                let mid = self.sample(0.5 * (outer.alpha + inner.alpha), k)?;
                if connected(inner, &mid, k, want, self.cfg.jump_tol) {
                    *inner = mid.clone();
                } else {
                    outer = mid.clone();
                }
                added.push(mid);
            }
            Ok(())
        };
        bisect(&mut inner_lo, run.0.checked_sub(1).map(|i| samples[i].clone()))?;
        bisect(&mut inner_hi, samples.get(run.1 + 1).cloned())?;
        merge(samples, added);
        let lo = samples.iter().position(|s| s.alpha == inner_lo.alpha).expect("merged");
        let hi = samples.iter().position(|s| s.alpha == inner_hi.alpha).expect("merged");
        Ok((lo, hi))
    }

    fn sample_many(&self, alphas: &[f64], n_letters: usize) -> Result<Vec<ShootSample>, SequenceError> {
        parallel::map(alphas, |&a| self.sample(a, n_letters)).into_iter().collect()
    }
}

/// Indices `i` where samples `i` and `i + 1` belong to one continuity
/// interval of the first `k` zero times and realize `prefix`.
fn connected(a: &ShootSample, b: &ShootSample, k: usize, prefix: &[u32], jump_tol: f64) -> bool {
    if a.pre != b.pre || a.degenerate || b.degenerate {
        return false;
    }
    for (i, &m) in prefix.iter().enumerate() {
        if a.letter(i + 1) != Letter::Closed(m) || b.letter(i + 1) != Letter::Closed(m) {
            return false;
        }
    }
    (1..=k).all(|j| match (a.zero(j), b.zero(j)) {
        (Some(x), Some(y)) => (x - y).abs() < jump_tol,
        _ => false,
    })
}

/// Maximal runs `[start, end]` of samples pairwise connected for `k` zeros
/// and the given prefix. Singletons count as runs when they realize the
/// prefix.
fn runs(samples: &[ShootSample], k: usize, prefix: &[u32], jump_tol: f64) -> Vec<(usize, usize)> {
    let ok = |s: &ShootSample| {
        !s.degenerate
            && (1..=k).all(|j| s.zero(j).is_some())
            && prefix.iter().enumerate().all(|(i, &m)| s.letter(i + 1) == Letter::Closed(m))
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        if !ok(&samples[i]) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < samples.len() && connected(&samples[j], &samples[j + 1], k, prefix, jump_tol) {
            j += 1;
        }
        out.push((i, j));
        i = j + 1;
    }
    out
}

fn anchors_in(samples: &[ShootSample], k: usize) -> Vec<Anchor> {
    let mut out: Vec<Anchor> = Vec::new();
    for s in samples {
        let (now, next) = (s.letter(k), s.letter(k + 1));
        let kind = match now {
            Letter::Closed(1) if next.at_least_four() => Some(AnchorKind::A),
            Letter::Closed(3) if next.at_least_four() => Some(AnchorKind::B),
            l if l.at_least_four() => Some(AnchorKind::C),
            _ => None,
        };
        if let Some(kind) = kind {
            if !out.iter().any(|a| a.kind == kind) {
                out.push(Anchor { kind, alpha: s.alpha, sigma_n: now, sigma_next: next });
            }
        }
    }
    out.sort_by_key(|a| a.kind as u8);
    out
}

fn merge(samples: &mut Vec<ShootSample>, new: Vec<ShootSample>) {
    samples.extend(new);
    samples.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
    samples.dedup_by(|a, b| a.alpha == b.alpha);
}

/// Realizes `target` as the first letters of the word of some start on `L`.
pub fn shoot_word(target: &TargetWord, params: &Params, cfg: &ShootConfig) -> Result<ShootResult, SequenceError> {
    if target.len() > cfg.max_len {
        return Err(SequenceError::BadWord(format!("{target} is longer than the configured limit {}", cfg.max_len)));
    }
    let geometry = prepare(params, cfg)?;
    shoot_word_on(target, &geometry, cfg)
}

/// As [`shoot_word`], for a segment that has already been set up.
pub fn shoot_word_on(target: &TargetWord, geometry: &Geometry, cfg: &ShootConfig) -> Result<ShootResult, SequenceError> {
    let shooter = Shooter { geometry, cfg, icfg: cfg.integrator };
    let n = target.len();
    let grid = |lo: f64, hi: f64| -> Vec<f64> {
        let m = cfg.grid.max(2);
        (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
    };

    // The first continuity interval of t1: the run of samples that starts
    // next to p1 (alpha = 0). alpha = 1 is the equilibrium and is left out.
    let hi0 = 1.0 - 1e-9;
    let mut samples = shooter.sample_many(&grid(0.0, hi0), 2)?;
    let first = runs(&samples, 1, &[], cfg.jump_tol).into_iter().find(|&(i, _)| i == 0).ok_or(SequenceError::AnchorNotFound {
        step: 1,
        missing: "continuity interval of t1 at alpha = 0".into(),
        scanned: samples.len(),
    })?;
    let mut interval = (samples[first.0].alpha, samples[first.1].alpha);
    samples = samples[first.0..=first.1].to_vec();

    let mut certificates = Vec::new();
    let mut horizon_used: f64 = 0.0;
    for k in 1..=n {
        let prefix = &target.letters()[..k - 1];
        let letter = target.letters()[k - 1];
        let parent = interval;
        // Re-read the retained samples far enough for letters k and k + 1
        // and fill in the interval.
        let mut alphas: Vec<f64> = samples.iter().map(|s| s.alpha).collect();
        alphas.extend(grid(parent.0, parent.1));
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        samples = shooter.sample_many(&alphas, k + 1)?;
        samples.retain(|s| s.alpha >= parent.0 && s.alpha <= parent.1);
        let mut budget = cfg.max_samples_per_step;
        let mut alarms_seen = 0;
        let mut want: Vec<u32> = prefix.to_vec();
        want.push(letter);

        let chosen = loop {
            let found = runs(&samples, k + 1, &want, cfg.jump_tol);
            let anchors = anchors_in(&samples, k);
            let letters: Vec<(f64, Letter)> = samples.iter().map(|s| (s.alpha, s.letter(k))).collect();
            let alarms = sigma_transition_audit(&letters);
            alarms_seen = alarms_seen.max(alarms.len());

            // Prefer a run that already shows a letter >= 4 in the next
            // position, so the following step has somewhere to start.
            let best = found
                .iter()
                .copied()
                .max_by(|&(a0, a1), &(b0, b1)| {
                    let score = |(i, j): (usize, usize)| {
                        let c = samples[i..=j].iter().any(|s| s.letter(k + 1).at_least_four()) as usize;
                        (if k < n { c } else { 0 }, j - i)
                    };
                    score((a0, a1)).cmp(&score((b0, b1)))
                })
                .filter(|&(i, j)| j - i >= 2 && (k == n || samples[i..=j].iter().any(|s| s.letter(k + 1).at_least_four())));

            // Pairs worth splitting: transitions of letter k (where the
            // target letter may hide), audit alarms, and breaks inside or at
            // the edge of a target run.
            let mut split: Vec<f64> = Vec::new();
            for w in samples.windows(2) {
                let (a, b) = (&w[0], &w[1]);
                if b.alpha - a.alpha <= cfg.resolution {
                    continue;
                }
                let la = a.letter(k);
                let lb = b.letter(k);
                let hit_a = la == Letter::Closed(letter);
                let hit_b = lb == Letter::Closed(letter);
                let differ = la != lb || a.pre != b.pre;
                let broken = (hit_a || hit_b) && !connected(a, b, k + 1, &want, cfg.jump_tol);
                let alarm = alarms.iter().any(|x| x.alpha_left == a.alpha);
                if best.is_none() && (differ || broken || alarm) {
                    split.push(0.5 * (a.alpha + b.alpha));
                }
            }
            if let Some(run) = best {
                if split.is_empty() || budget == 0 {
                    break Ok((run, anchors, alarms_seen));
                }
            }
            if split.is_empty() || budget == 0 {
                if samples.iter().all(|s| !s.letter(k).settled()) {
                    break Err(SequenceError::HorizonExhausted { step: k });
                }
                let missing = match letter {
                    1 => "A (sigma = 1)",
                    _ => "B (sigma = 3)",
                };
                break Err(SequenceError::AnchorNotFound { step: k, missing: missing.into(), scanned: samples.len() });
            }
            split.truncate(budget);
            budget -= split.len();
            let new = shooter.sample_many(&split, k + 1)?;
            merge(&mut samples, new);
        };
        let ((i, j), anchors, alarms) = chosen?;
        let (i, j) = shooter.widen(&mut samples, (i, j), k + 1, &want)?;
        horizon_used = horizon_used.max(samples[i..=j].iter().map(|s| s.horizon).fold(0.0, f64::max));
        interval = (samples[i].alpha, samples[j].alpha);
        certificates.push(LetterCertificate { step: k, letter, parent, interval, anchors, samples: samples.len(), alarms });
        samples = samples[i..=j].to_vec();
    }

    let witness = samples[samples.len() / 2].clone();
    let achieved_word: Vec<u32> = witness.word().into_iter().take(n).collect();
    let halved = IntegratorConfig { rel_tol: cfg.integrator.rel_tol * 0.5, abs_tol: cfg.integrator.abs_tol * 0.5, ..cfg.integrator };
    let check = Shooter { geometry, cfg, icfg: halved }.sample(witness.alpha, n)?;
    let halved_tolerance_word: Vec<u32> = check.word().into_iter().take(n).collect();
    Ok(ShootResult {
        target: target.clone(),
        params: geometry.params,
        p1: geometry.p1,
        alpha_interval: interval,
        witness_alpha: witness.alpha,
        achieved_word,
        halved_tolerance_word,
        certificates,
        horizon_used,
        final_width: interval.1 - interval.0,
        final_state: ShootState {
            interval,
            realized_prefix: target.letters().to_vec(),
            anchors: anchors_in(&samples, n),
            continuity_grid: samples,
        },
    })
}

/// Recomputes the sample at `alpha` from scratch, reading `n_letters`.
pub fn resample(geometry: &Geometry, cfg: &ShootConfig, alpha: f64, n_letters: usize) -> Result<ShootSample, SequenceError> {
    Shooter { geometry, cfg, icfg: cfg.integrator }.sample(alpha, n_letters)
}
