//! Lane detection and departure warning from a single forward-facing camera.
//!
//! The pipeline stages are:
//!
//! 1. **imgcore** – raster containers, CIE Lab conversion, shadow-attenuating
//!    preprocessing, PPM/PGM I/O.
//! 2. **ipm** – ground-plane remapping from extrinsic parameters only
//!    (height, pitch, yaw, half-aperture), valid to 45 m ahead.
//! 3. **filters** – steerable 2nd/4th-order Gaussian-derivative bank and
//!    adaptive, orientation-gated extraction of lane-marking points.
//! 4. **lanes** – gap interpolation and sequential RANSAC fitting of up to
//!    eight cubic lane curves in ground coordinates.
//! 5. **segmentation** – three-class Gaussian mixture labelling of the
//!    remapped image and road-boundary recovery without painted markings.
//! 6. **departure** – sparse optical flow between consecutive bird's-eye
//!    frames and the drift-angle warning with curved-road gating.
//! 7. **harness** – synthetic scene generator with exact ground truth and
//!    the pixel-wise precision evaluation protocol.

pub mod config;
pub mod departure;
pub mod filters;
pub mod harness;
pub mod imgcore;
pub mod ipm;
pub mod lanes;
pub mod pipeline;
pub mod segmentation;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("pixel row {row} is at or above the horizon row {hz}")]
    AboveHorizon { row: f64, hz: f64 },
    #[error("mapping denominator is numerically singular")]
    NonFinite,
    #[error("ground point x = {0} m is behind the camera plane")]
    BehindCamera(f64),
    #[error("no grid cell maps inside the source image")]
    EmptyGrid,
    #[error("image dimensions do not match: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("no model reached the inlier minimum")]
    NoModel,
    #[error("no curve pair straddles the vehicle position")]
    NoEgoLane,
    #[error("class {0} has no sample pixels")]
    MissingClass(String),
    #[error("class {0} has only {1} sample pixels (minimum 30)")]
    InsufficientSamples(String, usize),
    #[error("road class covers less than 10% of valid cells")]
    NoRoad,
    #[error("no {0} boundary model could be fitted")]
    BoundaryNoModel(&'static str),
    #[error("fewer than 5 confident flow samples")]
    InsufficientFlow,
    #[error("prediction and truth are on different grids")]
    GridMismatch,
    #[error("dataset directory has no camera config (camera.cfg)")]
    MissingCamera,
    #[error("malformed truth file {path} at line {line}")]
    MalformedTruth { path: String, line: usize },
    #[error("{path}: {msg}")]
    Config { path: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
