use thiserror::Error;

/// Domain errors raised by the closed-form network models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{quantity} must be positive, got {value}")]
    NonPositive { quantity: &'static str, value: f64 },
    #[error("{quantity} must be non-negative, got {value}")]
    Negative { quantity: &'static str, value: f64 },
    #[error("verification overhead undefined: every follower CPU frequency is zero")]
    AllFrequenciesZero,
    #[error("layout mismatch: expected {expected:?}, got {actual:?}")]
    LayoutMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
}

/// Errors from simulation orchestration (I/O, config, ledger propagation).
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigReport),
    #[error(transparent)]
    Ledger(#[from] crate::ledger::LedgerError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl SimError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn csv(path: impl AsRef<std::path::Path>, source: csv::Error) -> Self {
        SimError::Csv {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub(crate) fn ensure_positive(quantity: &'static str, value: f64) -> Result<(), ModelError> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::NonPositive { quantity, value })
    }
}

pub(crate) fn ensure_non_negative(quantity: &'static str, value: f64) -> Result<(), ModelError> {
    if value >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::Negative { quantity, value })
    }
}
