//! Error taxonomy shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GeonetError>;

#[derive(Debug, Error)]
pub enum GeonetError {
    /// A point lies outside every chart domain, or outside a tube.
    #[error("domain error: {0}")]
    Domain(String),

    /// A stated precondition does not hold (e.g. |w| >= injectivity bound).
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// ODE stepping failed or left the atlas without a valid transition.
    #[error("integration error: {0}")]
    Integration(String),

    /// An iterative solve did not reach its tolerance.
    #[error("convergence failure: {0}")]
    Convergence(String),

    /// The requested object is not unique (antipodal endpoints, cut radius).
    #[error("ambiguity: {0}")]
    Ambiguity(String),

    /// Curves intersect where disjointness was required.
    #[error("curves intersect: {0}")]
    Intersection(String),

    /// A distance exceeds the injectivity radius bound.
    #[error("out of range: {0}")]
    OutOfRange(String),

    /// Geometric construction impossible (tube self-overlap, cutoff too large).
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Zero-speed samples or otherwise degenerate parametrization.
    #[error("parametrization error: {0}")]
    Parametrization(String),

    /// Grid too coarse for the requested finite-difference order.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Malformed input data (too few samples, mismatched lengths, ...).
    #[error("input error: {0}")]
    Input(String),

    /// An edge or loop collapsed below the degeneration threshold.
    #[error("degeneration: {0}")]
    Degeneration(String),

    /// Continuation left the local basin.
    #[error("continuation error: {0}")]
    Continuation(String),

    /// Curve pieces do not share endpoints to tolerance.
    #[error("assembly error: {0}")]
    Assembly(String),

    /// A graph construction left its tube.
    #[error("tube exit: {0}")]
    TubeExit(String),

    /// Required separation is nonpositive.
    #[error("separation error: {0}")]
    Separation(String),

    /// Tangential intersection where transversality was required.
    #[error("degeneracy: {0}")]
    Degeneracy(String),

    /// Supports declared disjoint were found overlapping.
    #[error("support overlap: {0}")]
    SupportOverlap(String),

    /// Two evaluation routes disagree beyond tolerance.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Scenario or net file violates the schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// Verification ran but a required check failed.
    #[error("verification failure: {0}")]
    Verification(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Wraps an error with the pipeline stage that raised it.
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<GeonetError>,
    },
}

impl GeonetError {
    pub fn in_stage(self, stage: &'static str) -> Self {
        GeonetError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Exit code for the CLI: schema problems are 2, verification failures 4,
    /// everything else is a pipeline-stage error (3).
    pub fn exit_code(&self) -> i32 {
        match self {
            GeonetError::Schema(_) | GeonetError::Json(_) => 2,
            GeonetError::Verification(_) => 4,
            GeonetError::Stage { source, .. } => source.exit_code().max(3),
            _ => 3,
        }
    }
}
