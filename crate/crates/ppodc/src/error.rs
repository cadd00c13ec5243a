use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("cryptosystem: {0}")]
    Paillier(#[from] ppodc_core::PaillierError),

    #[error("transform: {0}")]
    Transform(#[from] ppodc_core::TransformError),

    #[error("transport: {0}")]
    Transport(#[from] TransportError),

    #[error("protocol aborted: {0}")]
    Abort(String),

    #[error("protocol integrity violation: {0}")]
    Integrity(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("ingest error at row {row}, column {col}: {reason}")]
    Ingest { row: usize, col: usize, reason: String },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("channel closed")]
    Closed,

    #[error("malformed frame: {0}")]
    Malformed(String),

    #[error("unknown message type {0}")]
    UnknownType(u8),
}
