//! Experiment harness for `parint-core`: configuration, convergence and gap
//! sweeps, slope fitting, CSV output and the invariant self-test.

pub mod checks;
pub mod config;
pub mod experiment;
pub mod fit;
pub mod output;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] parint_core::Error),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code: 2 for bad input, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Core(e) if is_input_error(e) => 2,
            _ => 1,
        }
    }
}

fn is_input_error(e: &parint_core::Error) -> bool {
    use parint_core::Error as E;
    matches!(
        e,
        E::InvalidSpec(_)
            | E::NotSolvable { .. }
            | E::BudgetBelowMinimum { .. }
            | E::EmptyBudget
            | E::AdaptiveRegime(_)
            | E::GapRegime { .. }
            | E::EmbeddingRequired
            | E::ZeroSmoothness
    )
}
