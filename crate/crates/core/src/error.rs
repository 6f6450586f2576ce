use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("{photons} photons exceeds the supported bound of {max}")]
    PhotonBound { photons: usize, max: usize },
    #[error("matrix is not unitary (max deviation {0:.3e})")]
    NotUnitary(f64),
    #[error("invalid post-selection: {0}")]
    PostSelection(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("gram matrix is not positive semidefinite (min eigenvalue {0:.3e})")]
    NotPsd(f64),
    #[error("non-physical density matrix: {0}")]
    NonPhysical(String),
    #[error("no coincidences recorded")]
    NoCoincidences,
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

pub type Result<T> = std::result::Result<T, Error>;
