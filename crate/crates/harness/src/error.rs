use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] wvn_core::Error),

    #[error("configuration: {0}")]
    Config(String),

    #[error("scripted driver failed to reach waypoint {waypoint}")]
    DriverFailed { waypoint: usize },

    #[error("{0}")]
    Run(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
