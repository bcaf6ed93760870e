use std::path::PathBuf;

/// Broad error class, used by the command line to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad input data or files.
    Data,
    /// A computation could not be carried out on otherwise valid data.
    Compute,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("AE trace has zero mean absolute amplitude")]
    AllZeroTrace,
    #[error("span of {span} s is shorter than the window width {width} s")]
    SpanTooShort { span: f64, width: f64 },
    #[error(
        "window [{t_start}, {t_end}] s is outside the trace span [{span_start}, {span_end}] s"
    )]
    WindowOutOfRange {
        t_start: f64,
        t_end: f64,
        span_start: f64,
        span_end: f64,
    },
    #[error("empty signal")]
    EmptySignal,
    #[error("empty input")]
    EmptyInput,
    #[error("frequency {freq} Hz is outside the band [{f_min}, {f_max}] Hz")]
    FrequencyOutOfBand { freq: f64, f_min: f64, f_max: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("model expects {expected} features, got {got}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("{rows} rows are too few for {folds}-fold cross-validation")]
    TooFewRows { rows: usize, folds: usize },
    #[error("target has zero variance")]
    DegenerateTarget,
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("{count} combinations exceed the configured cap of {cap}")]
    CombinatorialLimit { count: u128, cap: u128 },
    #[error("insufficient experiments: {0}")]
    InsufficientExperiments(String),
    #[error("no events to average over")]
    NoEvents,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("invalid experiment data: {0}")]
    InvalidData(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::AllZeroTrace
            | Error::SpanTooShort { .. }
            | Error::WindowOutOfRange { .. }
            | Error::EmptySignal
            | Error::EmptyInput
            | Error::FrequencyOutOfBand { .. }
            | Error::InsufficientExperiments(_)
            | Error::ConfigInvalid(_)
            | Error::InvalidData(_)
            | Error::Io { .. }
            | Error::Csv { .. }
            | Error::Json { .. } => ErrorClass::Data,
            Error::ShapeMismatch(_)
            | Error::ArityMismatch { .. }
            | Error::TooFewRows { .. }
            | Error::DegenerateTarget
            | Error::DegenerateInput(_)
            | Error::LengthMismatch(_)
            | Error::CombinatorialLimit { .. }
            | Error::NoEvents => ErrorClass::Compute,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
