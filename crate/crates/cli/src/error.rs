use std::fmt;

/// Failure category; each maps to its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Invalid or inconsistent configuration.
    Config,
    /// A required input file is absent or unreadable as expected.
    MissingInput,
    /// A simulation, training or evaluation step failed.
    Module,
    /// Writing outputs failed.
    Io,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 3,
            ErrorKind::MissingInput => 4,
            ErrorKind::Module => 5,
            ErrorKind::Io => 6,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ErrorKind::Config => "config error",
            ErrorKind::MissingInput => "missing input",
            ErrorKind::Module => "module error",
            ErrorKind::Io => "i/o error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::MissingInput, message)
    }

    pub fn module(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Module, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Io, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.label(), self.message)
    }
}

impl std::error::Error for CliError {}

impl From<conceptlab::Error> for CliError {
    fn from(e: conceptlab::Error) -> Self {
        use conceptlab::Error as E;
        let kind = match &e {
            E::Config(_) => ErrorKind::Config,
            E::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ErrorKind::MissingInput
            }
            E::Io { .. } => ErrorKind::Io,
            E::Schema { .. } | E::Csv(_) | E::Json(_) => ErrorKind::MissingInput,
            _ => ErrorKind::Module,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::module(format!("json: {e}"))
    }
}
