use thiserror::Error;

/// Crate-wide error type. Variants map onto the failure modes of the
/// pipeline stages; the CLI collapses them into process exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// A ciphertext was decrypted (or combined) under a key identity it was
    /// not encrypted with.
    #[error("key identity mismatch: ciphertext was produced under a different key")]
    KeyMismatch,

    /// Operands from two distinct backend instances were fed to one gate.
    #[error("operands belong to different backend instances")]
    BackendMismatch,

    /// Two words with different fixed-point formats were combined.
    #[error("fixed-point format mismatch: ({0}:{1}) vs ({2}:{3})")]
    FormatMismatch(u32, u32, u32, u32),

    /// A requested fixed-point format violates its structural constraints.
    #[error("invalid fixed-point format {0}:{1} (need total >= frac + 2, total <= {max})", max = crate::fixed::MAX_TOTAL_BITS)]
    InvalidFormat(u32, u32),

    /// A real value cannot be represented in the requested format.
    #[error("value {0} is not representable in format {1}:{2}")]
    Unrepresentable(f64, u32, u32),

    /// Arithmetic left the representable range and overflow checks were on.
    #[error("fixed-point overflow in {0}")]
    Overflow(&'static str),

    /// An aggregate was requested over an empty collection.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// Domain size exceeds the configured enumeration limit.
    #[error("domain size {n} exceeds the configured limit {max}")]
    DomainTooLarge { n: usize, max: usize },

    /// A [l, r] range does not denote a non-empty 1-indexed interval.
    #[error("invalid range [{l}, {r}] for domain size {n}")]
    BadRange { l: usize, r: usize, n: usize },

    /// Histogram or configuration values are structurally invalid.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The privacy budget for this dataset has already been consumed.
    #[error("privacy budget exhausted: a summary was already constructed for this dataset and budget")]
    BudgetExhausted,

    /// The decryption server refused a request that was not DP-protected.
    #[error("decryption refused: {0}")]
    DecryptRefused(&'static str),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
