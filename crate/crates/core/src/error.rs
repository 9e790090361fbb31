use thiserror::Error;

use crate::mdp::ValueFunction;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit reports.
///
/// Variants split into two families: model validation (bad input files,
/// malformed distributions) and solver failures. The CLI maps them onto
/// distinct exit codes through [`Error::is_validation`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} row {index:?} sums to {sum} (expected 1 within 1e-9)")]
    NotStochastic {
        what: &'static str,
        index: Vec<usize>,
        sum: f64,
    },

    #[error("{what} entry {index:?} = {value} is outside [0, 1]")]
    ProbabilityOutOfRange {
        what: &'static str,
        index: Vec<usize>,
        value: f64,
    },

    #[error("cost entry {index:?} = {value} is negative or not finite")]
    InvalidCost { index: Vec<usize>, value: f64 },

    #[error("discount {0} is outside [0, 1)")]
    InvalidDiscount(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("observation {x_o_next} is impossible from x_o={x_o} under action {action}")]
    ZeroProbabilityObservation {
        x_o: usize,
        action: usize,
        x_o_next: usize,
    },

    #[error("value iteration did not converge in {iterations} sweeps (last change {last_change:e})")]
    NotConverged {
        iterations: usize,
        last_change: f64,
        best: ValueFunction,
    },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("simplex hit the pivot limit of {0}")]
    IterationLimit(usize),

    #[error("linear program is infeasible: {0}")]
    Infeasible(String),

    #[error("linear program is unbounded: {0}")]
    Unbounded(String),

    #[error("belief DP memo exceeded {cap} entries (horizon {horizon})")]
    BudgetExceeded {
        cap: usize,
        horizon: usize,
        memo_entries: usize,
    },

    #[error("no solved belief within {radius:e} of the query at x_o={x_o} (nearest {distance:e}){}", episode.map(|e| format!(" in episode {e}")).unwrap_or_default())]
    KeyNotCovered {
        x_o: usize,
        distance: f64,
        radius: f64,
        episode: Option<usize>,
    },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("hypothesis not satisfied: {0}")]
    HypothesisNotSatisfied(String),

    #[error("{what}: value iteration {vi}, primal LP {primal}, dual LP {dual} disagree beyond 1e-6")]
    Disagreement {
        what: &'static str,
        vi: f64,
        primal: f64,
        dual: f64,
    },
}

impl Error {
    /// True for errors caused by the input model rather than by a solver.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse(_)
                | Error::Dimension(_)
                | Error::NotStochastic { .. }
                | Error::ProbabilityOutOfRange { .. }
                | Error::InvalidCost { .. }
                | Error::InvalidDiscount(_)
        )
    }
}
