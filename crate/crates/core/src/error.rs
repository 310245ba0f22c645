use thiserror::Error;

/// Every failure mode the toolkit reports.
///
/// Verdicts such as "degenerate orbit" or "not shadowed within budget" are
/// not errors; they are carried in the corresponding report types.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid phase point: {0}")]
    InvalidPoint(String),

    #[error("invalid system definition: {0}")]
    InvalidSystem(String),

    #[error("gradient unavailable at the requested point (non-finite evaluation)")]
    GradientUnavailable,

    #[error("hessian unavailable at the requested point (non-finite evaluation)")]
    HessianUnavailable,

    #[error("inverse base map unavailable for negative suspension time")]
    InverseUnavailable,

    #[error("ceiling function {value} below lower bound {beta}")]
    CeilingTooLow { value: f64, beta: f64 },

    #[error("roof coordinate {r} outside [0, {ceiling})")]
    RoofOutOfRange { r: f64, ceiling: f64 },

    #[error("implicit step rejected at t = {t}: no convergence in {iterations} iterations")]
    StepRejected { t: f64, iterations: usize },

    #[error("integration started at a singular point (|grad H| = {grad_norm:e})")]
    SingularStart { grad_norm: f64 },

    #[error("leapfrog requested for a system not declared separable")]
    NotSeparable,

    #[error("singular point: |grad H| = {grad_norm:e}")]
    SingularPoint { grad_norm: f64 },

    #[error("orbit became singular at t = {t}")]
    SingularOnOrbit { t: f64 },

    #[error("induced form degenerate: |det| = {det:e}")]
    DegenerateForm { det: f64 },

    #[error("no return to the section within time {budget}")]
    NoReturn { budget: f64 },

    #[error("tangential crossing of the section at t = {t}")]
    TangentialCrossing { t: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("singular Newton system (min singular value {min_sv:e}); eigenvalue 1 suspected")]
    SingularJacobian { min_sv: f64 },

    #[error("eigenvalue computation failed")]
    EigenFailure,

    #[error("no unit-modulus eigenvalue reachable within perturbation budget {delta}")]
    NudgeOutOfReach { delta: f64 },

    #[error("matrix is not symplectic (defect {defect:e})")]
    NotSymplectic { defect: f64 },

    #[error("orbit escaped the working region at t = {t}")]
    OrbitEscaped { t: f64 },

    #[error("index {index} out of range 1..={max}")]
    IndexOutOfRange { index: usize, max: usize },

    #[error("finite-time rates are not separable (gap {gap:e})")]
    RankCollapse { gap: f64 },

    #[error("invalid splitting: {0}")]
    InvalidSplitting(String),

    #[error("jump {index} has error {error:e} >= delta {delta:e}")]
    JumpTooLarge { index: i64, error: f64, delta: f64 },

    #[error("jump time t_{index} = {time} shorter than T = {min_time}")]
    TimeTooShort { index: i64, time: f64, min_time: f64 },

    #[error("time {t} outside the pseudo-orbit window [{start}, {end})")]
    OutOfWindow { t: f64, start: f64, end: f64 },

    #[error("{steps} steps of size {delta} cannot cover distance {distance}")]
    InsufficientSteps { steps: usize, delta: f64, distance: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Bad input or configuration, as opposed to a numerical breakdown.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::DimensionMismatch { .. }
                | Error::InvalidPoint(_)
                | Error::InvalidSystem(_)
                | Error::InverseUnavailable
                | Error::CeilingTooLow { .. }
                | Error::RoofOutOfRange { .. }
                | Error::SingularStart { .. }
                | Error::NotSeparable
                | Error::SingularPoint { .. }
                | Error::NotSymplectic { .. }
                | Error::IndexOutOfRange { .. }
                | Error::InvalidSplitting(_)
                | Error::JumpTooLarge { .. }
                | Error::TimeTooShort { .. }
                | Error::OutOfWindow { .. }
                | Error::InsufficientSteps { .. }
                | Error::InvalidParameter(_)
        )
    }
}
