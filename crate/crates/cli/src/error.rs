use std::fmt;

use driftbench_core::Error;

/// Process exit status classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitClass {
    Other = 1,
    Config = 2,
    Data = 3,
    Extractor = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub class: ExitClass,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn new(class: ExitClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitClass::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ExitClass::Data, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.class as i32
    }

    /// Prefixes the message with what was being done.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

pub fn classify(e: &Error) -> ExitClass {
    match e {
        Error::InvalidParameter(_) => ExitClass::Config,
        Error::Io { .. }
        | Error::Decode { .. }
        | Error::EmptyDataset(_)
        | Error::DuplicateSourceId(_)
        | Error::NoMatches
        | Error::ShapeMismatch(_)
        | Error::TooFewSamples { .. }
        | Error::NonFinite(_)
        | Error::DimensionMismatch(_)
        | Error::NotPsd { .. }
        | Error::Serialization(_) => ExitClass::Data,
        Error::Adapter { .. } | Error::Timeout { .. } | Error::MalformedOutput { .. } | Error::ZeroEmbedding(_) => {
            ExitClass::Extractor
        }
        Error::Diverged { .. } => ExitClass::Other,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::new(classify(&e), e.to_string())
    }
}

/// Io errors outside the core library are data errors.
pub fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::data(format!("{}: {e}", path.display()))
}
