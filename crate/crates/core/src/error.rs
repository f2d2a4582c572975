use std::path::PathBuf;

/// Errors raised by the engine. Each variant maps to one failure named by the
/// session contract; the CLI turns them into distinct exit codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("invalid module {}: {reason}", path.display())]
    InvalidModule { path: PathBuf, reason: String },

    #[error("module {} is listed twice (link name `{name}`)", path.display())]
    DuplicateModule { path: PathBuf, name: String },

    #[error("instrumentation failed: {0}")]
    InstrumentationFailure(String),

    #[error("malformed probe event stream: {0}")]
    MalformedEventStream(String),

    #[error("duplicate test name `{0}`")]
    DuplicateTestName(String),

    #[error("unknown test function `{0}`")]
    UnknownTestFunction(String),

    #[error("test `{name}`: {reason}")]
    InvalidTestSignature { name: String, reason: String },

    #[error(
        "stack analysis failed in function {func_index} at instruction {instr_index}: {reason}"
    )]
    AnalysisFailure {
        func_index: u32,
        instr_index: usize,
        reason: String,
    },

    #[error("rewrite failed for {mp_id}: {reason}")]
    RewriteFailure { mp_id: String, reason: String },

    #[error("instantiation failed: {0}")]
    InstantiationFailure(String),

    #[error("compilation failed: {0}")]
    CompilationFailure(String),

    #[error("no tests found")]
    NoTestsFound,

    #[error("session has no mutation points")]
    EmptySession,

    #[error("config parse error at line {line}: {reason}")]
    ParseError { line: usize, reason: String },

    #[error("config field `{field}`: {reason}")]
    ValidationError { field: String, reason: String },

    #[error("database error: {0}")]
    Database(#[from] rusqlite::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid_module(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        Error::InvalidModule {
            path: path.into(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::ValidationError {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
