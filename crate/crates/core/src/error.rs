use thiserror::Error;

use crate::solver::SolverState;

#[derive(Debug, Error)]
pub enum KwError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid weight: {0}")]
    InvalidWeight(String),
    #[error("weighted mass ∫h e^u dv = {mass:e} is not positive")]
    NonpositiveMass { mass: f64 },
    #[error("epsilon {eps} outside the admissible range")]
    InvalidEpsilon { eps: f64 },
    #[error("distance {dist} is beyond the local chart radius 1/4")]
    DistanceTooLarge { dist: f64 },
    #[error("annulus contains only {count} nodes (need at least 50)")]
    AnnulusTooThin { count: usize },
    #[error("inner radius {r1} does not clear the regularized core 8/N = {min}")]
    CoreContamination { r1: f64, min: f64 },
    #[error("annulus radii must satisfy r1 < r2 < 1/4, got ({r1}, {r2})")]
    InvalidAnnulus { r1: f64, r2: f64 },
    #[error("alpha = {alpha} must exceed 1/2")]
    AlphaTooSmall { alpha: f64 },
    #[error("weight has no positive node on the sampling lattice")]
    EmptyPositiveSet,
    #[error("weight {value} at the evaluation point is not positive")]
    NonpositiveWeightAtPoint { value: f64 },
    #[error("field is constant")]
    ConstantField,
    #[error("initial field has nonpositive mass {mass:e}")]
    InadmissibleInit { mass: f64 },
    #[error("line search stalled at iteration {}", state.iter)]
    LineSearchStall { state: Box<SolverState> },
    #[error("schedule must be strictly decreasing with positive entries")]
    ScheduleNotDecreasing,
    #[error("stage {index}: {source}")]
    Stage {
        index: usize,
        #[source]
        source: Box<KwError>,
    },
    #[error("window radius {window} reaches the chart radius {limit}")]
    WindowTooLarge { window: f64, limit: f64 },
    #[error("neck annulus is empty: inner radius {inner} >= outer radius {outer}")]
    NeckEmpty { inner: f64, outer: f64 },
    #[error("weight takes value {min_h} <= 0 inside the neck chart")]
    PositivityViolated { min_h: f64 },
    #[error("matching radius {radius} exceeds the chart radius {limit}")]
    ScaleTooLarge { radius: f64, limit: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("format: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, KwError>;
