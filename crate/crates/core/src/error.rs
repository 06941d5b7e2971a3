use thiserror::Error;

/// Errors raised anywhere in the re-aggregation engine.
///
/// Variants split into two families: input/validation problems (bad shapes,
/// malformed files, empty groups, zero populations) and numerical failures
/// (non-convergence, singular systems). [`ReaggError::is_validation`] tells
/// them apart so front ends can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum ReaggError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate polygon `{id}`: {reason}")]
    DegeneratePolygon { id: String, reason: String },

    #[error("group index {group} of base region {base} is out of range for {n_groups} groups")]
    GroupOutOfRange {
        base: usize,
        group: usize,
        n_groups: usize,
    },

    #[error("group `{group}` has no base regions (incomplete allocation)")]
    EmptyGroup { group: String },

    #[error("source region `{region}` has zero weighted population")]
    ZeroPopulation { region: String },

    #[error("unknown geometry level `{0}`")]
    UnknownLevel(String),

    #[error("geometry levels `{a}` and `{b}` share no common base level")]
    DisconnectedLevels { a: String, b: String },

    #[error("{what} did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
        grad_norm: f64,
    },

    #[error("ill-conditioned design (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{source_name}{}: {message}", line.map(|l| format!(" line {l}")).unwrap_or_default())]
    Parse {
        source_name: String,
        line: Option<u64>,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ReaggError {
    /// True for errors caused by the caller's input rather than by numerics.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            ReaggError::NonConvergence { .. }
                | ReaggError::IllConditioned { .. }
                | ReaggError::Numerical(_)
        )
    }

    pub fn parse(source: impl Into<String>, line: Option<u64>, message: impl Into<String>) -> Self {
        ReaggError::Parse {
            source_name: source.into(),
            line,
            message: message.into(),
        }
    }
}

pub type Result<T, E = ReaggError> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(ReaggError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
