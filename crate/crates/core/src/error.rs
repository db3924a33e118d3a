use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("plan violates {count} constraint(s): {summary}")]
    PlanInvalid { count: usize, summary: String },

    #[error("ill-posed query: {0}")]
    IllPosed(String),

    #[error("corrupt log at record {record}: {message}")]
    CorruptLog { record: usize, message: String },

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error("no data: {0}")]
    NoData(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("search failed: {0}")]
    SearchFailed(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by malformed or inconsistent user input, as opposed to
    /// failures while running a well-formed request.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Geometry(_)
                | Error::Parse { .. }
                | Error::PlanInvalid { .. }
                | Error::IllPosed(_)
                | Error::CorruptLog { .. }
                | Error::Incompatible(_)
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}
