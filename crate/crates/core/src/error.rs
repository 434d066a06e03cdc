use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid layout: {0}")]
    Layout(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("matrix is not Hermitian (relative asymmetry {asymmetry:.3e})")]
    NotHermitian { asymmetry: f64 },

    /// Cholesky pivot fell below the definiteness tolerance. `node` is set
    /// when the failing matrix is a node-wise diagonal block.
    #[error("matrix is not positive definite (pivot {pivot:.3e} at row {row}{})", node_suffix(*.node))]
    NotPositiveDefinite {
        row: usize,
        pivot: f64,
        node: Option<usize>,
    },

    #[error("eigensolver did not converge (off-diagonal residual {residual:.3e})")]
    EigenNoConvergence { residual: f64 },

    #[error("cannot normalize: reference entry magnitude {magnitude:.3e} is numerically zero")]
    ZeroReference { magnitude: f64 },

    #[error("no dominant direction: principal eigenvalue {0:.3e} is not positive")]
    NoDominantDirection(f64),

    #[error("off-diagonal selection needs at least 3 nodes, layout has {nodes}")]
    Identifiability { nodes: usize },

    #[error("MVDR denominator is not positive ({0:.3e})")]
    DegenerateBeamformer(f64),

    #[error("bin {bin} has no {class} frames")]
    EmptyClass { bin: usize, class: &'static str },

    #[error("zero power in {0}")]
    ZeroPower(&'static str),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn node_suffix(node: Option<usize>) -> String {
    match node {
        Some(n) => format!(", node {n}"),
        None => String::new(),
    }
}
