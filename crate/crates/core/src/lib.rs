//! Numerical laboratory for a shooting analysis of the Lorenz equations
//!
//! ```text
//! x' = s (y - x),   y' = R x - y - x z,   z' = x y - q z
//! ```
//!
//! The crate follows the positive branch of the origin's unstable manifold,
//! brackets the parameter at which it becomes homoclinic, checks the event
//! ordering and backward-time hypotheses that drive the symbolic shooting
//! construction, realizes prescribed words of 1's and 3's by nested
//! intervals on the shooting segment, and measures how fast naive interval
//! enclosures lose accuracy.

// Guards written as `!(a > b)` also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod manifold;
pub mod parallel;
pub mod sequence;
pub mod trace;
pub mod validated;

pub use dynamics::{Geometry, Params, State};
pub use error::*;
pub use integrator::{integrate, EventKind, EventRecord, EventSpec, EventTag, IntegratorConfig, Trajectory};
