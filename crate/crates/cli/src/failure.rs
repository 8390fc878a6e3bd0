use std::fmt::Display;

pub const USAGE: u8 = 1;
pub const DATA: u8 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: USAGE,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            code: DATA,
            message: message.into(),
        }
    }
}

/// Bad parameters are usage errors; everything else concerns the data.
impl From<shardann::Error> for Failure {
    fn from(e: shardann::Error) -> Self {
        match e {
            shardann::Error::InvalidParameter(_) => Failure::usage(e.to_string()),
            other => Failure::data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}

pub trait Context<T> {
    fn context(self, what: impl Display) -> Result<T, Failure>;
}

impl<T, E: Into<Failure>> Context<T> for Result<T, E> {
    fn context(self, what: impl Display) -> Result<T, Failure> {
        self.map_err(|e| {
            let mut f = e.into();
            f.message = format!("{what}: {}", f.message);
            f
        })
    }
}
