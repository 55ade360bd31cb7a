use halaltrace_node::ErrorBody;

/// Exit status 2 for usage problems, 1 for everything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{} ({}, HTTP {status})", body.detail, body.code)]
    Api { status: u16, body: ErrorBody },
    #[error("cannot reach node: {0}")]
    Transport(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
