//! Batch driver around the snse2d library: declarative TOML configuration,
//! experiment orchestration, tab-separated tables, and static SVG plots.
//! The binary is a thin argument parser over [`commands`].

pub mod commands;
pub mod config;
pub mod plot;
pub mod verify;

/// Process-level failure classes, mapped one-to-one onto exit codes.
#[derive(Debug)]
pub enum AppError {
    /// Unreadable, unparsable, or inconsistent configuration (exit 2).
    Config(String),
    /// Solver or statistics failure on a valid configuration (exit 3).
    Numerical(String),
    /// Result files could not be written (exit 4).
    Io(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) => 2,
            AppError::Numerical(_) => 3,
            AppError::Io(_) => 4,
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "configuration error: {m}"),
            AppError::Numerical(m) => write!(f, "numerical failure: {m}"),
            AppError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Io(e.to_string())
    }
}

impl From<snse2d::experiments::ExperimentError> for AppError {
    fn from(e: snse2d::experiments::ExperimentError) -> Self {
        match e {
            snse2d::experiments::ExperimentError::Config(m) => AppError::Config(m),
            other => AppError::Numerical(other.to_string()),
        }
    }
}

impl From<snse2d::scheme::SchemeError> for AppError {
    fn from(e: snse2d::scheme::SchemeError) -> Self {
        AppError::Numerical(e.to_string())
    }
}

impl From<snse2d::stokes::StokesError> for AppError {
    fn from(e: snse2d::stokes::StokesError) -> Self {
        AppError::Numerical(e.to_string())
    }
}

impl From<snse2d::noise::NoiseError> for AppError {
    fn from(e: snse2d::noise::NoiseError) -> Self {
        AppError::Numerical(e.to_string())
    }
}

impl From<snse2d::spaces::SpaceError> for AppError {
    fn from(e: snse2d::spaces::SpaceError) -> Self {
        AppError::Numerical(e.to_string())
    }
}
