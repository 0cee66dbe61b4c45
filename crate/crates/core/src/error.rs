use thiserror::Error;

/// Failure modes shared by every module of the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),
    #[error("metric is degenerate at {0}")]
    MetricDegenerate(String),
    #[error("chart singularity: {0}")]
    ChartSingularity(String),
    #[error("geodesic distance unavailable: {0}")]
    DistanceUnavailable(String),
    #[error("unsupported action: {0}")]
    UnsupportedAction(String),
    #[error("orientation violated at node {node}: det F = {det}")]
    Orientation { node: usize, det: f64 },
    #[error("numerical consistency check failed: {0}")]
    NumericalConsistency(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("trace extrapolation did not converge: {0}")]
    TraceDivergence(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("minimizer stagnated after {iterations} iterations: {detail}")]
    Stagnation { iterations: usize, detail: String },
    #[error("integration became unstable at step {step}: energy {energy} exceeds 10x initial {initial}")]
    Instability { step: usize, energy: f64, initial: f64 },
    #[error("unknown case `{0}`")]
    UnknownCase(String),
}

pub type Result<T> = std::result::Result<T, Error>;
