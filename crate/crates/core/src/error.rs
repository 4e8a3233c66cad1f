use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("model evaluation failed at t={t}, y={y}, eta={eta:?}: {reason}")]
    ModelEvaluation {
        t: f64,
        y: f64,
        eta: Vec<f64>,
        reason: String,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error{}: {message}", location_suffix(*.row, *.column))]
    Data {
        message: String,
        row: Option<usize>,
        column: Option<usize>,
    },

    #[error("degenerate trajectory for individual {individual}: {reason}")]
    DegenerateTrajectory { individual: usize, reason: String },

    #[error("simulation blew up for individual {individual} at t={time} (value {value})")]
    Simulation {
        individual: usize,
        time: f64,
        value: f64,
    },

    #[error("numerical error{}: {message}", individual_suffix(*.individual))]
    Numeric {
        message: String,
        individual: Option<usize>,
    },

    #[error("estimation failed: {message}")]
    Estimation {
        message: String,
        best_point: Option<Vec<f64>>,
        trace: Vec<String>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn location_suffix(row: Option<usize>, column: Option<usize>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" at row {r}, column {c}"),
        (Some(r), None) => format!(" at row {r}"),
        (None, Some(c)) => format!(" at column {c}"),
        (None, None) => String::new(),
    }
}

fn individual_suffix(individual: Option<usize>) -> String {
    individual.map(|i| format!(" (individual {i})")).unwrap_or_default()
}

impl Error {
    pub fn data(message: impl Into<String>) -> Self {
        Error::Data {
            message: message.into(),
            row: None,
            column: None,
        }
    }

    pub fn data_at(message: impl Into<String>, row: usize, column: Option<usize>) -> Self {
        Error::Data {
            message: message.into(),
            row: Some(row),
            column,
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Error::Numeric {
            message: message.into(),
            individual: None,
        }
    }

    pub fn estimation(message: impl Into<String>) -> Self {
        Error::Estimation {
            message: message.into(),
            best_point: None,
            trace: Vec::new(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidModel(_) | Error::InvalidParams(_) => 2,
            Error::Data { .. } | Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
            Error::DegenerateTrajectory { .. }
            | Error::Simulation { .. }
            | Error::Numeric { .. }
            | Error::Estimation { .. }
            | Error::ModelEvaluation { .. } => 4,
        }
    }
}
