use std::path::PathBuf;

use pg_core::aggregation::AggError;
use pg_core::floor::FloorError;
use pg_core::geoqa::GeoQaError;
use pg_core::grounder::GroundError;
use pg_core::metrics::MetricsError;
use pg_core::panorama::PanoramaError;
use pg_core::placement::PlacementError;
use pg_core::scene::SceneError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PgError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Scene {
        path: PathBuf,
        #[source]
        source: SceneError,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Floor(#[from] FloorError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Panorama(#[from] PanoramaError),
    #[error(transparent)]
    Ground(GroundError),
    #[error(transparent)]
    Aggregate(AggError),
    #[error(transparent)]
    GeoQa(#[from] GeoQaError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("remote endpoint unreachable: {0}")]
    Unreachable(String),
}

impl From<GroundError> for PgError {
    fn from(e: GroundError) -> Self {
        match e {
            GroundError::Transport(m) => PgError::Unreachable(m),
            other => PgError::Ground(other),
        }
    }
}

impl From<AggError> for PgError {
    fn from(e: AggError) -> Self {
        match e {
            AggError::ProviderTransport(m) => PgError::Unreachable(m),
            other => PgError::Aggregate(other),
        }
    }
}

impl PgError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PgError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        PgError::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// 3 for an unreachable remote, 1 for plain IO failures, 2 for everything
    /// that is a problem with the inputs.
    pub fn exit_code(&self) -> i32 {
        match self {
            PgError::Unreachable(_) => 3,
            PgError::Io { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = PgError> = std::result::Result<T, E>;
