use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("data set is empty")]
    EmptyData,

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("records lack calendar fields (randomization and absolute follow-up times)")]
    MissingCalendar,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A hazard piece with no events; its rate estimate would be zero.
    #[error("piece {piece} contains no events")]
    EmptyPiece { piece: usize },

    /// A piece whose events all sit on its left edge with nobody at risk beyond.
    #[error("piece {piece} has zero exposure time")]
    ZeroExposure { piece: usize },

    #[error("no feasible model: {0}")]
    NoFeasibleModel(String),

    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("accrual plan: {0}")]
    Accrual(String),

    #[error("bootstrap replicates are required for {0}")]
    BootstrapRequired(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors produced by the numerical routines rather than I/O or parsing.
    pub fn is_numeric(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Csv(_) | Error::Json(_))
    }
}
