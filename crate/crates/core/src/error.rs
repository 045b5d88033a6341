use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A real-valued input was NaN or infinite.
    #[error("non-finite input value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("invalid quantizer parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A level does not fit in the declared bit width.
    #[error("level {level} at index {index} does not fit in {bits} bits")]
    CorruptLevel { index: usize, level: u8, bits: u8 },

    /// A packed matrix has a nonzero bit beyond its logical columns.
    #[error("nonzero pad bit in plane {plane}, row {row}")]
    NonzeroPad { plane: usize, row: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid tile configuration: {0}")]
    Config(String),

    /// The worst-case accumulated value would not fit a signed 32-bit accumulator.
    #[error("accumulator overflow risk: worst case {worst_case} exceeds i32")]
    OverflowRisk { worst_case: u128 },

    #[error("unsupported shape: {0}")]
    Unsupported(String),
}
