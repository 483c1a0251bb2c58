use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Invalid user-supplied configuration (shapes, fractions, presets).
    #[error("configuration error: {0}")]
    Config(String),
    /// An API was used out of order, e.g. backward without a forward cache.
    #[error("usage error: {0}")]
    Usage(String),
    /// Bad input data such as labels outside the class range.
    #[error("input error: {0}")]
    Input(String),
    /// The model plus its training tensors do not fit the accelerator DRAM.
    #[error("capacity error: {needed} bytes needed, {available} bytes of DRAM")]
    Capacity { needed: u64, available: u64 },
    /// A device had no local data; the round continues without it.
    #[error("empty local shard")]
    EmptyShard,
    /// Broken internal invariant.
    #[error("internal error: {0}")]
    Internal(String),
    /// Error raised while running a round, tagged with where it happened.
    #[error("round {round}, device {device}: {source}")]
    InRound {
        round: usize,
        device: usize,
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn internal(msg: impl Into<String>) -> Self {
        Error::Internal(msg.into())
    }

    pub fn in_round(self, round: usize, device: usize) -> Self {
        Error::InRound {
            round,
            device,
            source: alloc::boxed::Box::new(self),
        }
    }
}
