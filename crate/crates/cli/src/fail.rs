//! Error-to-exit-code mapping. Codes are stable: 0 ok, 2 config or input
//! error, 3 diverged run, 4 detection failure.

use std::fmt;
use std::process::ExitCode;

use eseize_core::Error as CoreError;
use eseize_harness::HarnessError;

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;
pub const EXIT_DETECTION: u8 = 4;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn diverged(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DIVERGED,
            message: message.into(),
        }
    }

    pub fn detection(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_DETECTION,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

fn core_code(e: &CoreError) -> u8 {
    match e {
        CoreError::DegenerateTrace(_) | CoreError::NotStabilized(_) => EXIT_DETECTION,
        CoreError::NonFinite(_) => EXIT_DIVERGED,
        CoreError::Input(_) | CoreError::Format(_) | CoreError::Io(_) => EXIT_INPUT,
        _ => EXIT_INTERNAL,
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            HarnessError::Config(_) | HarnessError::Format(_) | HarnessError::Io(_) => EXIT_INPUT,
            HarnessError::Diverged(_) => EXIT_DIVERGED,
            HarnessError::Detection(_) => EXIT_DETECTION,
            HarnessError::Core(c) => core_code(c),
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        Self {
            code: core_code(&e),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::input(e.to_string())
    }
}
