use std::fmt::Display;

/// A command failure tagged with its exit status.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, bad config, unreadable or malformed inputs.
    Usage(anyhow::Error),
    /// The computation itself failed.
    Domain(anyhow::Error),
    /// Writing results failed.
    Io(anyhow::Error),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Domain(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Usage(e) | Failure::Domain(e) | Failure::Io(e) => e,
        }
    }

    pub fn usage(msg: impl Display) -> Self {
        Failure::Usage(anyhow::anyhow!("{msg}"))
    }

    pub fn domain(msg: impl Display) -> Self {
        Failure::Domain(anyhow::anyhow!("{msg}"))
    }
}

pub type CmdResult<T> = Result<T, Failure>;

pub trait Classify<T> {
    fn usage(self, context: impl Display) -> CmdResult<T>;
    fn domain(self, context: impl Display) -> CmdResult<T>;
    fn io(self, context: impl Display) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self, context: impl Display) -> CmdResult<T> {
        self.map_err(|e| Failure::Usage(e.into().context(context.to_string())))
    }

    fn domain(self, context: impl Display) -> CmdResult<T> {
        self.map_err(|e| Failure::Domain(e.into().context(context.to_string())))
    }

    fn io(self, context: impl Display) -> CmdResult<T> {
        self.map_err(|e| Failure::Io(e.into().context(context.to_string())))
    }
}
