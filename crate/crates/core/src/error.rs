use thiserror::Error;

/// Errors raised by the sampling pipeline.
#[derive(Debug, Error)]
pub enum PlsError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate kernel: no eigenvalue above the rank floor {floor:e}")]
    DegenerateKernel { floor: f64 },

    #[error("particle {particle} diverged at step {step}: non-finite state")]
    Diverged { particle: usize, step: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl PlsError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        PlsError::Input(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        PlsError::Numerical(msg.into())
    }

    /// Process exit code: 1 for bad input, 2 for numerical trouble, 3 for io.
    pub fn exit_code(&self) -> i32 {
        match self {
            PlsError::Input(_) | PlsError::Dimension { .. } => 1,
            PlsError::Numerical(_) | PlsError::DegenerateKernel { .. } | PlsError::Diverged { .. } => 2,
            PlsError::Io(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, PlsError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(PlsError::Dimension {
            context,
            expected,
            got,
        })
    }
}
