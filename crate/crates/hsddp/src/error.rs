use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError<E: std::error::Error + 'static> {
    #[error("model evaluation failed: {0}")]
    Model(#[source] E),
    /// Quu stayed indefinite up to the maximum regularization.
    #[error("Quu not positive definite at step {step} after maximum regularization")]
    NonPositiveCurvature { step: usize },
    /// State norm exceeded the configured bound or became non-finite.
    #[error("rollout diverged at step {step}")]
    RolloutDiverged { step: usize },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}
