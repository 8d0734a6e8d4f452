use std::fmt;

use airsig::dataset::DatasetError;
use airsig::landmark::TraceError;
use airsig::nn::ModelFormatError;
use airsig::service::ServiceError;
use airsig::siamese::SiameseError;
use airsig::stroke::StrokeError;

/// Process exit status: 0 ok, 1 usage, 2 data, 3 model format.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Model(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Model(_) => 3,
        }
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        CliError::Data(msg.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Model(m) => write!(f, "model error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Pairs(inner) => inner.into(),
            DatasetError::Ratios(_) | DatasetError::UnknownLayout(_) | DatasetError::Synth(_) => {
                CliError::Usage(e.to_string())
            }
            other => CliError::data(other),
        }
    }
}

impl From<SiameseError> for CliError {
    fn from(e: SiameseError) -> Self {
        match e {
            SiameseError::ModelFormat(_) | SiameseError::Shape(_) | SiameseError::Nn(_) => CliError::Model(e.to_string()),
            SiameseError::Config(_) => CliError::Usage(e.to_string()),
            other => CliError::data(other),
        }
    }
}

impl From<ModelFormatError> for CliError {
    fn from(e: ModelFormatError) -> Self {
        CliError::Model(e.to_string())
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Model(inner) => inner.into(),
            other => CliError::data(other),
        }
    }
}

impl From<TraceError> for CliError {
    fn from(e: TraceError) -> Self {
        CliError::data(e)
    }
}

impl From<StrokeError> for CliError {
    fn from(e: StrokeError) -> Self {
        match e {
            StrokeError::Alpha(_) | StrokeError::Canvas(..) => CliError::Usage(e.to_string()),
            other => CliError::data(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e)
    }
}
