use std::fmt;

use ridgegrok_core::Error;

#[derive(Debug)]
pub enum CliError {
    /// Unreadable, malformed or out-of-range configuration.
    Config(String),
    /// Plot inputs that are empty or do not share a schema.
    Input(String),
    /// A run exceeded the divergence limit; its artifacts were still written.
    Divergence(String),
    Io(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Input(_) => "input",
            CliError::Divergence(_) => "divergence",
            CliError::Io(_) => "io",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Input(m)
            | CliError::Divergence(m)
            | CliError::Io(m)
            | CliError::Runtime(m) => m,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Contract(m) | Error::Precondition(m) => CliError::Config(m),
            Error::Divergence {
                step,
                quantity,
                value,
            } => CliError::Divergence(format!("{quantity} = {value} at step {step}")),
            Error::Io(e) => CliError::Io(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// `error[<kind>]: <message>` on one line.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flat: String = self
            .message()
            .chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        write!(f, "error[{}]: {}", self.kind(), flat)
    }
}

impl std::error::Error for CliError {}
