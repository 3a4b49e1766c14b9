//! Combinatorial data read off a trajectory: zeros of `x`, sign changes of
//! `x'`, the counts between consecutive zeros, and the classification of the
//! unstable branch.

use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::{equilibria, jacobian, Params, State};
use crate::integrator::{EventTag, Termination, Trajectory};

/// Default lower bound on `x, y, z` for a positivity verdict.
pub const POS_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    /// Zeros of `x`, increasing.
    #[serde(rename = "t")]
    pub x_zeros: Vec<f64>,
    /// Transversal sign changes of `x'`, increasing.
    #[serde(rename = "tau")]
    pub xprime_changes: Vec<f64>,
    /// Sign changes of `x'` strictly inside each completed interval between
    /// consecutive zeros. This is the realized word.
    pub sigma: Vec<u32>,
    /// The interval after the last zero was cut off by the horizon.
    pub open_tail: bool,
    /// Sign changes seen after the last zero (a lower bound for the next
    /// letter when `open_tail`).
    pub tail_changes: u32,
    /// Sign changes before the first zero (all of them if there is none).
    pub pre_zero_changes: u32,
    /// A tangential crossing was flagged and excluded from the counts.
    pub degenerate: bool,
    pub t_end: f64,
}

impl TraceSummary {
    pub fn word(&self) -> &[u32] {
        &self.sigma
    }

    /// The `n`-th zero (1-based), if observed.
    pub fn zero(&self, n: usize) -> Option<f64> {
        n.checked_sub(1).and_then(|i| self.x_zeros.get(i).copied())
    }

    /// Lower bound for letter `n` (1-based): the exact count for a completed
    /// interval, the tail count for the open one, `None` beyond.
    pub fn letter_lower_bound(&self, n: usize) -> Option<u32> {
        if n == 0 {
            return None;
        }
        if n <= self.sigma.len() {
            Some(self.sigma[n - 1])
        } else if n == self.sigma.len() + 1 && !self.x_zeros.is_empty() {
            Some(self.tail_changes)
        } else {
            None
        }
    }
}

/// Builds the summary from the `X_ZERO` and `XPRIME_SIGN_CHANGE` records of a
/// forward trajectory. Boundary records at `t = 0` are ignored.
pub fn summarize(trajectory: &Trajectory) -> TraceSummary {
    let mut degenerate = false;
    let mut x_zeros = Vec::new();
    let mut taus = Vec::new();
    for e in &trajectory.events {
        if e.at_start {
            continue;
        }
        match e.kind {
            EventTag::XZero => {
                if e.degenerate {
                    degenerate = true;
                }
                x_zeros.push(e.t);
            }
            EventTag::XprimeSignChange => {
                if e.degenerate {
                    degenerate = true;
                } else {
                    taus.push(e.t);
                }
            }
            _ => {}
        }
    }
    summarize_times(x_zeros, taus, degenerate, trajectory.end_time())
}

/// Summary from raw event times (forward time, any order).
pub fn summarize_times(mut x_zeros: Vec<f64>, mut taus: Vec<f64>, degenerate: bool, t_end: f64) -> TraceSummary {
    x_zeros.sort_by(f64::total_cmp);
    x_zeros.dedup();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let count_in = |a: f64, b: f64| taus.iter().filter(|&&t| t > a && t < b).count() as u32;
    let sigma: Vec<u32> = x_zeros.windows(2).map(|w| count_in(w[0], w[1])).collect();
    let (tail_changes, open_tail) = match x_zeros.last() {
        Some(&last) => (count_in(last, f64::INFINITY), t_end > last),
        None => (0, false),
    };
    let pre_zero_changes = match x_zeros.first() {
        Some(&t1) => count_in(f64::NEG_INFINITY, t1),
        None => taus.len() as u32,
    };
    TraceSummary { x_zeros, xprime_changes: taus, sigma, open_tail, tail_changes, pre_zero_changes, degenerate, t_end }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BranchTag {
    AllPositive,
    CrossesZero,
    Undetermined,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchClass {
    pub tag: BranchTag,
    /// First zero of `x` (CROSSES_ZERO).
    pub t1: Option<f64>,
    /// Sign changes of `x'` in `(-inf, t1]` (CROSSES_ZERO).
    pub xprime_before_t1: Option<u32>,
    /// Time at which the trajectory entered the trapping ball around `p0`
    /// (ALL_POSITIVE).
    pub trapped_at: Option<f64>,
    /// Smallest of `x, y, z` after leaving the origin's neighborhood.
    pub min_coordinate: f64,
    pub horizon: f64,
    /// `x` stayed above `pos_tol` over the whole horizon (after leaving the
    /// origin), whether or not a trapping certificate was found.
    pub positive_to_horizon: bool,
    pub cause: Option<String>,
}

impl BranchClass {
    /// ALL_POSITIVE, or UNDETERMINED but positive over the full horizon.
    pub fn is_positive_side(&self) -> bool {
        self.tag == BranchTag::AllPositive || (self.tag == BranchTag::Undetermined && self.positive_to_horizon)
    }

    /// The behavior used to define R*: a zero of `x` preceded by exactly one
    /// sign change of `x'`.
    pub fn crosses_after_one_turn(&self) -> bool {
        self.tag == BranchTag::CrossesZero && self.xprime_before_t1 == Some(1)
    }

    pub fn undetermined(horizon: f64, cause: impl Into<String>) -> Self {
        BranchClass {
            tag: BranchTag::Undetermined,
            t1: None,
            xprime_before_t1: None,
            trapped_at: None,
            min_coordinate: f64::NAN,
            horizon,
            positive_to_horizon: false,
            cause: Some(cause.into()),
        }
    }
}

/// A ball around `p0` that no solution leaves and that lies in the open
/// positive octant, certified by a quadratic Lyapunov function.
///
/// With `J^T P + P J = -I` and `f(p0 + e) = J e + N(e)`, where
/// `|N(e)| <= |e|^2 / 2`, the derivative of `V = e^T P e` is at most
/// `-|e|^2 (1 - lambda_max(P) |e|)`, so every sublevel set inside the ball
/// `|e| < 1 / lambda_max(P)` is forward invariant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrappingBall {
    pub center: State,
    p: Matrix3<f64>,
    /// Sublevel bound: `{ e^T P e <= level }` is invariant.
    pub level: f64,
    pub radius: f64,
}

impl TrappingBall {
    /// `None` when the linearization at `p0` is not Hurwitz.
    pub fn at_p0(params: &Params) -> Option<Self> {
        let p0 = equilibria(params).ok()?.p0;
        let j = jacobian(&p0, params);
        let p = solve_lyapunov(&j)?;
        let eig = SymmetricEigen::new(p);
        let lmin = eig.eigenvalues.min();
        let lmax = eig.eigenvalues.max();
        if !(lmin > 0.0) || !lmax.is_finite() {
            return None;
        }
        let to_boundary = p0.x.min(p0.y).min(p0.z);
        let radius = 0.9 * (1.0 / lmax).min(to_boundary);
        Some(TrappingBall { center: p0, p, level: lmin * radius * radius, radius })
    }

    pub fn lyapunov(&self, s: &State) -> f64 {
        let e = *s - self.center;
        let v = nalgebra::Vector3::new(e.x, e.y, e.z);
        (v.transpose() * self.p * v)[(0, 0)]
    }

    /// Inside the certified set with a relative safety margin.
    pub fn contains(&self, s: &State) -> bool {
        self.lyapunov(s) <= 0.5 * self.level
    }
}

/// Solves `J^T P + P J = -I` by vectorization.
fn solve_lyapunov(j: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let mut a = SMatrix::<f64, 9, 9>::zeros();
    // vec(J^T P) = (I kron J^T) vec(P), vec(P J) = (J^T kron I) vec(P),
    // column-major vec.
    for col in 0..3 {
        for row in 0..3 {
            let out = col * 3 + row;
            for k in 0..3 {
                // (J^T P)[row, col] = sum_k J[k, row] P[k, col]
                a[(out, col * 3 + k)] += j[(k, row)];
                // (P J)[row, col] = sum_k P[row, k] J[k, col]
                a[(out, k * 3 + row)] += j[(k, col)];
            }
        }
    }
    let mut b = SVector::<f64, 9>::zeros();
    for i in 0..3 {
        b[i * 3 + i] = -1.0;
    }
    let x = a.lu().solve(&b)?;
    let p = Matrix3::from_column_slice(x.as_slice());
    Some(0.5 * (p + p.transpose()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchCriteria {
    pub pos_tol: f64,
    /// Positivity margins are measured only once the trajectory is this far
    /// from the origin; inside, the branch is tangent to the eigenvector.
    pub departure_radius: f64,
}

impl Default for BranchCriteria {
    fn default() -> Self {
        BranchCriteria { pos_tol: POS_TOL, departure_radius: 1e-3 }
    }
}

/// Classifies a trajectory started on the unstable branch, looking only at
/// `[0, positivity_horizon]`.
pub fn classify_branch(trajectory: &Trajectory, positivity_horizon: f64, criteria: &BranchCriteria) -> BranchClass {
    let horizon = positivity_horizon.min(trajectory.end_time());
    let first_zero = trajectory.events.iter().find(|e| e.kind == EventTag::XZero && !e.at_start && e.t <= horizon);
    if let Some(z) = first_zero {
        if z.degenerate {
            return BranchClass::undetermined(horizon, "tangential zero of x");
        }
        let before =
            trajectory.events.iter().filter(|e| e.kind == EventTag::XprimeSignChange && !e.at_start && !e.degenerate && e.t <= z.t).count()
                as u32;
        return BranchClass {
            tag: BranchTag::CrossesZero,
            t1: Some(z.t),
            xprime_before_t1: Some(before),
            trapped_at: None,
            min_coordinate: f64::NAN,
            horizon,
            positive_to_horizon: false,
            cause: None,
        };
    }

    let ball = TrappingBall::at_p0(&trajectory.params);
    let mut min_coord = f64::INFINITY;
    let mut min_x = f64::INFINITY;
    let mut departed = false;
    let mut trapped_at = None;
    for (t, s) in trajectory.times.iter().zip(&trajectory.states) {
        if *t > horizon {
            break;
        }
        if !departed && s.norm() >= criteria.departure_radius {
            departed = true;
        }
        if departed {
            min_x = min_x.min(s.x);
            min_coord = min_coord.min(s.x).min(s.y).min(s.z);
            if let Some(b) = &ball {
                if trapped_at.is_none() && b.contains(s) {
                    trapped_at = Some(*t);
                    if min_coord > criteria.pos_tol {
                        break;
                    }
                }
            }
        }
    }
    let mut class = BranchClass::undetermined(horizon, "");
    class.min_coordinate = min_coord;
    let positive = departed && min_coord > criteria.pos_tol;
    let full_span = trajectory.end_time() >= positivity_horizon;
    class.positive_to_horizon = departed && min_x > criteria.pos_tol && ((trapped_at.is_some() && positive) || full_span);
    match (trapped_at, positive) {
        (Some(t), true) => {
            class.tag = BranchTag::AllPositive;
            class.trapped_at = Some(t);
            class.cause = None;
        }
        (_, _) if trajectory.termination != Termination::Horizon && trajectory.termination != Termination::TerminalEvent => {
            class.cause = Some(format!("integration stopped: {:?}", trajectory.termination));
        }
        (None, _) if ball.is_none() => {
            class.cause = Some("p0 is not linearly stable; no trapping certificate".into());
        }
        _ if positive && class.positive_to_horizon => {
            class.cause = Some("positive up to the horizon only".into());
        }
        _ if class.positive_to_horizon => {
            class.cause = Some(format!("x positive up to the horizon; min coordinate {min_coord:e}"));
        }
        _ => {
            class.cause = Some("horizon shorter than requested".into());
        }
    }
    class
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{integrate, EventSpec, IntegratorConfig};

    #[test]
    fn sigma_counts_strictly_between_zeros() {
        let s = summarize_times(vec![1.0, 3.0, 6.0], vec![0.5, 1.5, 2.0, 2.5, 3.5, 7.0], false, 8.0);
        assert_eq!(s.sigma, vec![3, 1]);
        assert_eq!(s.pre_zero_changes, 1);
        assert_eq!(s.tail_changes, 1);
        assert!(s.open_tail);
        assert_eq!(s.letter_lower_bound(3), Some(1));
        assert_eq!(s.letter_lower_bound(4), None);
        // a tau coinciding with a zero is not strictly inside
        let s = summarize_times(vec![1.0, 3.0], vec![1.0, 2.0, 3.0], false, 3.0);
        assert_eq!(s.sigma, vec![1]);
        assert!(!s.open_tail);
    }

    #[test]
    fn constant_trajectory_has_empty_word() {
        let p = Params::new(10.0, 1.0, 12.0).unwrap();
        let p0 = equilibria(&p).unwrap().p0;
        let tr = integrate(p0, &p, &IntegratorConfig::default(), &[EventSpec::x_zero(), EventSpec::xprime()]).unwrap();
        let s = summarize(&tr);
        assert!(s.x_zeros.is_empty());
        assert!(s.word().is_empty());
        assert!(!s.open_tail);
    }

    #[test]
    fn json_uses_short_keys() {
        let s = summarize_times(vec![1.0, 2.0], vec![1.5], false, 3.0);
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["t"], serde_json::json!([1.0, 2.0]));
        assert_eq!(v["tau"], serde_json::json!([1.5]));
        assert_eq!(v["sigma"], serde_json::json!([1]));
        assert_eq!(v["open_tail"], serde_json::json!(true));
    }

    #[test]
    fn lyapunov_solution_satisfies_equation() {
        let p = Params::new(10.0, 1.0, 5.0).unwrap();
        let j = jacobian(&equilibria(&p).unwrap().p0, &p);
        let sol = solve_lyapunov(&j).unwrap();
        let res = j.transpose() * sol + sol * j + Matrix3::identity();
        assert!(res.abs().max() < 1e-10);
        let ball = TrappingBall::at_p0(&p).unwrap();
        assert!(ball.contains(&ball.center));
        assert!(ball.radius < ball.center.z);
    }

    #[test]
    fn no_trapping_ball_beyond_hopf() {
        // The Hopf value for (10, 1) is 10 * 14 / 8 = 17.5.
        let p = Params::new(10.0, 1.0, 20.0).unwrap();
        assert!(TrappingBall::at_p0(&p).is_none());
        assert!(TrappingBall::at_p0(&p.with_r(17.0)).is_some());
    }
}
