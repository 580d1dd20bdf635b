use std::fmt;

/// Process exit classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad command line, or a failure while running a command.
    Usage,
    Config,
    Verification,
}

impl Kind {
    pub fn code(self) -> u8 {
        match self {
            Kind::Usage => 1,
            Kind::Config => 2,
            Kind::Verification => 3,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

pub type CliResult<T> = Result<T, Failure>;

/// Attach an exit class and a short context to a fallible call.
pub trait Classify<T> {
    fn or_fail(self, kind: Kind, what: &str) -> CliResult<T>;
}

impl<T, E: fmt::Display> Classify<T> for Result<T, E> {
    fn or_fail(self, kind: Kind, what: &str) -> CliResult<T> {
        self.map_err(|e| Failure::new(kind, format!("{what}: {e}")))
    }
}
