use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("measure has no atoms")]
    EmptyMeasure,
    #[error("negative weight {weight} at atom {index}")]
    NegativeWeight { index: usize, weight: f64 },
    #[error("total weight must be positive, got {0}")]
    ZeroMass(f64),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no atom lies inside the restriction ball")]
    EmptyRestriction,
    #[error("atom {index} lies outside the grid")]
    OutOfGrid { index: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("radius must be positive, got {0}")]
    InvalidRadius(f64),

    #[error("kernel evaluated at nonpositive distance {0}")]
    NonpositiveDistance(f64),
    #[error("invalid kernel: {0}")]
    InvalidKernel(String),
    #[error("Fourier transform of the kernel requested at zero frequency")]
    ZeroFrequency,
    #[error("support diameter {diameter} exceeds truncation radius {radius}")]
    SupportTooLarge { diameter: f64, radius: f64 },

    #[error("transport problem with {entries} cost entries exceeds the cap {cap}")]
    ProblemTooLarge { entries: usize, cap: usize },
    #[error("transport problem infeasible: {0}")]
    Infeasible(String),
    #[error("scaling iterations did not converge within {0} iterations")]
    NotConverged(usize),
    #[error("plan is not optimal: duality gap {gap}")]
    PlanNotOptimal { gap: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("interaction energy needs at least two atoms, found {0}")]
    TooFewAtoms(usize),
    #[error("reference measure has an atom at distance {distance} > R0 = {radius}")]
    SupportViolation { distance: f64, radius: f64 },

    #[error("all candidate points coincide")]
    DegenerateCandidates,
    #[error("result has no support points")]
    NoSupport,
    #[error("diagnostic requires a two-dimensional grid run")]
    NotTwoDimensional,
    #[error("ball contains no points")]
    EmptyBall,
    #[error("time step {dt} exceeds the stability bound {dt_max}")]
    CflViolation { dt: f64, dt_max: f64 },
    #[error("negative density {value} at cell {cell}")]
    NegativeDensity { cell: usize, value: f64 },

    #[error("Metropolis energy is not finite")]
    NonFiniteEnergy,
    #[error("need at least {required} samples, found {found}")]
    TooFewSamples { required: usize, found: usize },
    #[error("relation check requires a one-dimensional result")]
    WrongDimension,
    #[error("relation check requires a Dirac reference measure at the origin")]
    WrongTarget,

    #[error("config parse error at `{key}`: {message}")]
    ConfigParse { key: String, message: String },
    #[error("missing input {0}")]
    MissingInput(PathBuf),
    #[error("manifest missing in {0}")]
    ManifestMissing(PathBuf),
    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context { context: context.into(), source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
