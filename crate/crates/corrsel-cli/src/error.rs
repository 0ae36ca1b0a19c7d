//! Exit-code policy: 0 success, 1 usage, 2 data error, 3 runtime failure.

use corrsel::baseline::BaselineError;
use corrsel::compat::CompatError;
use corrsel::eval::EvalError;
use corrsel::net::NetError;
use corrsel::synth::SynthError;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or flag combinations.
    Usage(String),
    /// Unreadable or inconsistent input data.
    Data(String),
    /// Everything else that stops a run.
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match &e {
            SynthError::InvalidConfig(_) | SynthError::NoInliers => CliError::Usage(e.to_string()),
            SynthError::Parse { .. } | SynthError::Version { .. } => CliError::Data(e.to_string()),
            SynthError::GenerationFailed(_) | SynthError::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        match &e {
            NetError::Config(_) | NetError::ArchParse(_) => CliError::Usage(e.to_string()),
            NetError::Checkpoint(_) | NetError::EmptyDataset | NetError::Shape(_) => {
                CliError::Data(e.to_string())
            }
            NetError::Mining(_) => CliError::Data(e.to_string()),
            NetError::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<CompatError> for CliError {
    fn from(e: CompatError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match &e {
            BaselineError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
