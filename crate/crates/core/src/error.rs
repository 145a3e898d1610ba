use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("point ({x}, {y}) outside {width}x{height} grid")]
    OutOfBounds {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("target area {target} unreachable on {width}x{height} grid")]
    UnreachableArea {
        target: f64,
        width: usize,
        height: usize,
    },

    #[error("mask collapsed to zero cells")]
    MaskCollapse,

    #[error("backend error: {0}")]
    Backend(String),

    #[error("evolution failed at step {step} during {stage}: {cause}")]
    EvolutionFailed {
        step: usize,
        stage: &'static str,
        cause: Box<Error>,
    },

    #[error("all {} evolutions failed: {}", .0.len(), join_causes(.0))]
    AllEvolutionsFailed(Vec<Error>),
}

fn join_causes(errors: &[Error]) -> String {
    errors
        .iter()
        .enumerate()
        .map(|(i, e)| format!("[{i}] {e}"))
        .collect::<Vec<_>>()
        .join("; ")
}

pub(crate) fn check_dims(
    what: &str,
    expected: (usize, usize),
    actual: (usize, usize),
) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            expected: format!("{what} {}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        });
    }
    Ok(())
}
