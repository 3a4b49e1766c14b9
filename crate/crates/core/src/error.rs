use thiserror::Error;

use crate::integrator::Trajectory;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("R must exceed 1 (got {0}); p0 and the unstable manifold do not exist")]
    RNotAboveOne(f64),
    #[error("the line M misses the ellipsoid at R = {0}")]
    EmptyIntersection(f64),
}

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("invalid integrator configuration: {0}")]
    InvalidConfig(String),
    #[error("start state is not finite")]
    NonFiniteStart,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("blow-up at t = {t}: state norm exceeded {threshold:e}")]
    BlowUp { t: f64, threshold: f64, partial: Box<Trajectory> },
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64, partial: Box<Trajectory> },
    #[error("step budget of {steps} accepted steps exhausted at t = {t}")]
    StepBudget { t: f64, steps: usize, partial: Box<Trajectory> },
}

impl IntegrateError {
    /// The trajectory computed before the failure, when there is one.
    pub fn partial(&self) -> Option<&Trajectory> {
        match self {
            IntegrateError::BlowUp { partial, .. }
            | IntegrateError::StepUnderflow { partial, .. }
            | IntegrateError::StepBudget { partial, .. } => Some(partial),
            _ => None,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            IntegrateError::InvalidConfig(_) => "INVALID_CONFIG",
            IntegrateError::NonFiniteStart => "NON_FINITE_START",
            IntegrateError::Dynamics(_) => "INVALID_PARAMS",
            IntegrateError::BlowUp { .. } => "BLOW_UP",
            IntegrateError::StepUnderflow { .. } => "STEP_UNDERFLOW",
            IntegrateError::StepBudget { .. } => "STEP_BUDGET",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventError {
    #[error("event function does not change sign on [{lo}, {hi}]")]
    NoSignChange { lo: f64, hi: f64 },
    #[error("t = {t} lies outside the trajectory span [{start}, {end}]")]
    OutOfSpan { t: f64, start: f64, end: f64 },
}

#[derive(Debug, Error)]
pub enum ManifoldError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error("invalid seed configuration: {0}")]
    InvalidSeed(String),
    #[error("checkpoint level {0} was never crossed before the horizon")]
    MissingCheckpoint(&'static str),
    #[error("both bracket endpoints classify as {0}")]
    SameClassAtEndpoints(String),
    #[error("backward validation of the seed failed: angle {angle:e} to the eigenvector")]
    SeedValidation { angle: f64 },
}

#[derive(Debug, Error)]
pub enum ConditionsError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("gamma+ does not cross the plane x = y before t = {horizon}")]
    NoCrossing { horizon: f64 },
    #[error("R grid must be strictly increasing")]
    BadGrid,
    #[error("condition B needs s = 10 for the trapping ellipsoid (got s = {0}); set the override to proceed")]
    EllipsoidCoefficient(f64),
    #[error("need at least two samples on M, got {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Conditions(#[from] ConditionsError),
    #[error("target word must be a nonempty string over {{1, 3}}: {0}")]
    BadWord(String),
    #[error("alpha = {0} lies outside [0, 1]")]
    AlphaOutOfRange(f64),
    #[error("condition A does not hold at these parameters")]
    ConditionAFailed,
    #[error("the linearization at p0 has no complex pair")]
    NoComplexPair,
    #[error("no {missing} anchor found at step {step}")]
    AnchorNotFound { step: usize, missing: String, scanned: usize },
    #[error("horizon exhausted at step {step}")]
    HorizonExhausted { step: usize },
}

impl SequenceError {
    pub fn code(&self) -> &'static str {
        match self {
            SequenceError::Dynamics(e) => e.code(),
            SequenceError::Integrate(e) => e.code(),
            SequenceError::Conditions(e) => e.code(),
            SequenceError::BadWord(_) => "BAD_WORD",
            SequenceError::AlphaOutOfRange(_) => "ALPHA_OUT_OF_RANGE",
            SequenceError::ConditionAFailed => "CONDITION_A_FAILED",
            SequenceError::NoComplexPair => "NO_COMPLEX_PAIR",
            SequenceError::AnchorNotFound { .. } => "ANCHOR_NOT_FOUND",
            SequenceError::HorizonExhausted { .. } => "HORIZON_EXHAUSTED",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValidatedError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("a-priori enclosure could not be validated at t = {t} even with step {step:e}")]
    ValidationFailed { t: f64, step: f64 },
    #[error("invalid enclosure request: {0}")]
    InvalidRequest(String),
    #[error("the xi interval contains an equilibrium (constant solution)")]
    ContainsEquilibrium,
}

impl ValidatedError {
    pub fn code(&self) -> &'static str {
        match self {
            ValidatedError::Dynamics(e) => e.code(),
            ValidatedError::ValidationFailed { .. } => "VALIDATION_FAILED",
            ValidatedError::InvalidRequest(_) => "INVALID_REQUEST",
            ValidatedError::ContainsEquilibrium => "CONTAINS_EQUILIBRIUM",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: duplicate key {key}")]
    Duplicate { line: usize, key: String },
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl ConfigError {
    pub fn code(&self) -> &'static str {
        match self {
            ConfigError::Syntax { .. } => "CONFIG_SYNTAX",
            ConfigError::Duplicate { .. } => "CONFIG_DUPLICATE_KEY",
            ConfigError::UnknownKey(_) => "CONFIG_UNKNOWN_KEY",
            ConfigError::Invalid(_) => "CONFIG_INVALID",
        }
    }
}

impl DynamicsError {
    pub fn code(&self) -> &'static str {
        match self {
            DynamicsError::InvalidParams(_) => "INVALID_PARAMS",
            DynamicsError::RNotAboveOne(_) => "R_NOT_ABOVE_ONE",
            DynamicsError::EmptyIntersection(_) => "EMPTY_INTERSECTION",
        }
    }
}

impl ManifoldError {
    pub fn code(&self) -> &'static str {
        match self {
            ManifoldError::Dynamics(e) => e.code(),
            ManifoldError::Integrate(e) => e.code(),
            ManifoldError::InvalidSeed(_) => "INVALID_SEED",
            ManifoldError::MissingCheckpoint(_) => "MISSING_CHECKPOINT",
            ManifoldError::SameClassAtEndpoints(_) => "SAME_CLASS_AT_ENDPOINTS",
            ManifoldError::SeedValidation { .. } => "SEED_VALIDATION",
        }
    }
}

impl ConditionsError {
    pub fn code(&self) -> &'static str {
        match self {
            ConditionsError::Dynamics(e) => e.code(),
            ConditionsError::Integrate(e) => e.code(),
            ConditionsError::Manifold(e) => e.code(),
            ConditionsError::NoCrossing { .. } => "NO_CROSSING",
            ConditionsError::BadGrid => "BAD_GRID",
            ConditionsError::EllipsoidCoefficient(_) => "ELLIPSOID_COEFFICIENT",
            ConditionsError::TooFewSamples(_) => "TOO_FEW_SAMPLES",
        }
    }
}
