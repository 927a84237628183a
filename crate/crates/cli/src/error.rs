use std::fmt;

use sbll_core::SbllError;

/// CLI failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Config(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
        }
    }
}

impl From<SbllError> for CliError {
    fn from(e: SbllError) -> Self {
        match e {
            SbllError::InvalidInput(_) | SbllError::MissingResponse | SbllError::InvalidDesign(_) => CliError::Input(e.to_string()),
            SbllError::BasisTooLarge { n, basis_dim } => CliError::Config(format!(
                "sample size {n} is smaller than the spline basis dimension {basis_dim}; pass fewer covariates with --vars or lower --knot-constant"
            )),
            SbllError::Config(m) => CliError::Config(m),
            SbllError::Numerical(_) | SbllError::TooLarge { .. } => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
