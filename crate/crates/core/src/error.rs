use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid kernel: {0}")]
    Kernel(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("degenerate angular table: cumulative mass is zero")]
    DegenerateTable,

    #[error("gamma table is not strictly decreasing: gamma({p_lo}) = {g_lo}, gamma({p_hi}) = {g_hi}")]
    NonMonotoneGamma {
        p_lo: f64,
        g_lo: f64,
        p_hi: f64,
        g_hi: f64,
    },

    #[error("gamma table exhausted: no order up to {max_order} satisfies the p0 threshold")]
    TableExhausted { max_order: f64 },

    #[error("order {order} outside the tabulated range [{lo}, {hi}]")]
    OrderOutOfRange { order: f64, lo: f64, hi: f64 },

    #[error("moment order p = {p} exceeds truncation n = {n}")]
    OrderExceedsTruncation { p: usize, n: usize },

    #[error("non-finite partial sum at order {order} (z = {z})")]
    NonFiniteSeries { order: usize, z: f64 },

    #[error("weight too large: exp overflow at |v| = {speed}")]
    ExpOverflow { speed: f64 },

    #[error("envelope blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error("configuration error in `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidArgument {
        name,
        reason: reason.into(),
    }
}
