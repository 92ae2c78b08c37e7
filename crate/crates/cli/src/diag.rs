//! Diagnostics and the exit-code contract.

use std::fmt;

use qemlab::Error;

/// Distinct diagnostic codes, printed as `error[Exxx]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Code {
    Parse,
    Schema,
    NegativeEpsilon,
    Resolution,
    UnknownLabel,
    PressureTie,
    Cycle,
    EpsilonCount,
    Ensemble,
    Solver,
    Missing,
    Invalid,
    Io,
    NonConvergence,
    Extinct,
    Numerical,
}

impl Code {
    pub fn id(self) -> &'static str {
        match self {
            Code::Parse => "E001",
            Code::Schema => "E002",
            Code::NegativeEpsilon => "E003",
            Code::Resolution => "E004",
            Code::UnknownLabel => "E005",
            Code::PressureTie => "E006",
            Code::Cycle => "E007",
            Code::EpsilonCount => "E008",
            Code::Ensemble => "E009",
            Code::Solver => "E010",
            Code::Missing => "E011",
            Code::Invalid => "E012",
            Code::Io => "E100",
            Code::NonConvergence => "E200",
            Code::Numerical => "E201",
            Code::Extinct => "E300",
        }
    }

    /// 0 success, 1 io, 2 config, 3 numerical non-convergence, 4 extinction.
    pub fn exit_code(self) -> u8 {
        match self {
            Code::Io => 1,
            Code::NonConvergence | Code::Numerical => 3,
            Code::Extinct => 4,
            _ => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostic {
    pub code: Code,
    pub message: String,
}

impl Diagnostic {
    pub fn new(code: Code, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Self::new(Code::Io, format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: {}", self.code.id(), self.message)
    }
}

impl From<Error> for Diagnostic {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonConvergence { .. } => Code::NonConvergence,
            Error::EnsembleExtinct { .. } => Code::Extinct,
            Error::NoPositiveSpectralRadius | Error::DegenerateEigendata => Code::Numerical,
            Error::Cycle(_) => Code::Cycle,
            Error::PressureTie(..) => Code::PressureTie,
            Error::UnknownNode(_) => Code::UnknownLabel,
            _ => Code::Invalid,
        };
        Diagnostic::new(code, e.to_string())
    }
}
