//! Single-epoch GNSS integer ambiguity resolution aided by lidar map
//! registration.
//!
//! The crate models a rover that observes double-differenced (DD) GNSS code
//! and carrier-phase measurements on one or two frequencies while a lidar
//! scanner matches keypoints against a georeferenced reference map. Both
//! sensor models are joined in a mixed (condition-equation) least-squares
//! adjustment whose float ambiguities are then fixed to integers by
//! decorrelation and integer least squares. Closed-form precision analysis
//! (ambiguity dilution of precision and its lidar-aided ratio) and a seeded
//! Monte-Carlo harness round out the toolkit.
//!
//! Module map:
//!
//! - [`gnss`] — DD observation model: differencing, elevation weights,
//!   design matrices, synthetic observations.
//! - [`lidar`] — keypoint observation model, Kabsch/RANSAC registration,
//!   scaled registration error.
//! - [`fusion`] — mixed-model weighted least squares producing the float
//!   solution and its covariance; epoch-bundle ingestion.
//! - [`ambiguity`] — decorrelation, integer least-squares search,
//!   bootstrapped success rate, acceptance test, back-substitution.
//! - [`adop`] — closed-form variance matrices, ADOP, ADOP-ratio and the
//!   determinant identities that cross-check them.
//! - [`sim`] — constellation/keypoint generation, coordinate frames, and
//!   multi-epoch Monte-Carlo experiments.
//! - [`config`] — flat-sectioned text configuration shared by the CLI.

pub mod adop;
pub mod ambiguity;
pub mod config;
pub mod frame;
pub mod fusion;
pub mod gnss;
pub mod lidar;
pub mod sim;

/// Crate-wide error type.
///
/// The CLI maps variants onto exit codes: argument/configuration/parse
/// problems are usage errors, while geometry, rank, and search failures are
/// numerical errors.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Input geometry does not constrain the requested quantity.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    /// A normal or covariance matrix is singular or numerically rank-deficient.
    #[error("rank deficiency: {0}")]
    RankDeficient(String),
    /// RANSAC could not find a consensus set.
    #[error("registration failed: {0}")]
    RegistrationFailed(String),
    /// A numerical routine failed to produce a trustworthy result.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// The integer search enumeration bound was exceeded.
    #[error("search exhausted: {0}")]
    SearchExhausted(String),
    /// Bad configuration contents (semantic, not syntactic).
    #[error("configuration error: {0}")]
    Config(String),
    /// Syntactic error in a text input, with a 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that stem from how the tool was invoked rather than
    /// from the numerics of a well-posed problem.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::Io(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
