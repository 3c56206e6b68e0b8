use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("qubit count mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("register of {n} qubits exceeds the limit of {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("domain size {domain} is narrower than a term support of width {width}")]
    DomainTooSmall { domain: usize, width: usize },

    #[error("operator is not Hermitian")]
    NonHermitian,

    #[error("gate payload is not unitary (deviation {0:.3e})")]
    NonUnitary(f64),

    #[error("noise can only be simulated on a density matrix")]
    NoiseOnStateVector,

    #[error("qubit index {0} out of range or repeated")]
    BadQubit(usize),

    #[error("squared-norm estimate c = {0} is not positive; step aborted")]
    NonPositiveNorm(f64),

    #[error("post-selection discarded every shot")]
    AllShotsDiscarded,

    #[error("pauli strings {0} and {1} do not commute")]
    NotCommuting(String, String),

    #[error("division by a vanishing quantity: {0}")]
    ZeroDenominator(&'static str),

    #[error("singular calibration matrix")]
    SingularCalibration,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical abort: {0}")]
    Aborted(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
