use thiserror::Error;

use crate::coverage::CoverageError;
use crate::features::FeatureError;
use crate::hierclass::HierError;
use crate::ingest::IngestError;
use crate::metrics::MetricsError;
use crate::preprocess::PreprocessError;
use crate::svm::SvmError;
use crate::taxonomy::TaxonomyError;

/// Process exit statuses of the command-line tool.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const SOLVER: i32 = 4;
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Svm(#[from] SvmError),
    #[error(transparent)]
    Hier(#[from] HierError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {reason}")]
    Format { path: String, reason: String },
    #[error("no cached {backend_id} feature for {image_id} ({x}, {y}); run extract first")]
    MissingFeature {
        image_id: String,
        x: u32,
        y: u32,
        backend_id: String,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn svm_code(e: &SvmError) -> i32 {
    match e {
        SvmError::DimensionMismatch { .. }
        | SvmError::NonFiniteFeature(_)
        | SvmError::LengthMismatch { .. }
        | SvmError::InvalidLabel(_)
        | SvmError::SingleClassInput
        | SvmError::InsufficientSamplesForFolds { .. }
        | SvmError::ModelFormat(_) => exit::DATA,
        SvmError::InvalidConfig(_) => exit::CONFIG,
        SvmError::EmptyModelList => exit::SOLVER,
    }
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => exit::CONFIG,
            Error::Stage { source, .. } => source.exit_code(),
            Error::Taxonomy(_) => exit::CONFIG,
            Error::Svm(e) => svm_code(e),
            Error::Hier(HierError::UnsupportedStrategy) => exit::CONFIG,
            Error::Hier(HierError::Svm(e)) => svm_code(e),
            Error::Hier(HierError::Taxonomy(_)) => exit::CONFIG,
            Error::Feature(FeatureError::BackendUnavailable(_)) => exit::CONFIG,
            Error::Feature(FeatureError::InferenceFailure(_)) => exit::SOLVER,
            _ => exit::DATA,
        }
    }
}

/// `map_err` helpers for I/O and JSON with the offending path attached.
pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

pub(crate) fn json_err(path: &std::path::Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |source| Error::Json {
        path: path.display().to_string(),
        source,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        let dim = Error::Hier(HierError::DimensionMismatch { expected: 2, got: 3 });
        assert_eq!(dim.exit_code(), 3);
        assert_eq!(dim.in_stage("evaluate").exit_code(), 3);
        assert_eq!(Error::Svm(SvmError::EmptyModelList).exit_code(), 4);
        assert_eq!(Error::Hier(HierError::UnsupportedStrategy).exit_code(), 2);
    }
}
