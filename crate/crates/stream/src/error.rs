use std::io;

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed message: {0}")]
    Json(#[from] serde_json::Error),
    #[error("frame of {0} bytes exceeds the limit")]
    Oversized(usize),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("protocol: {0}")]
    Protocol(String),
    #[error(transparent)]
    Core(#[from] insitu_core::Error),
}

pub type Result<T, E = StreamError> = std::result::Result<T, E>;
