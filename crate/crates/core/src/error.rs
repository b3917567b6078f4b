use num_complex::Complex64;

/// Every failure the library reports.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("eigenvalue iteration did not converge")]
    NoConvergence,

    #[error("matrix singular to tolerance (sigma_min = {sigma_min:e}, norm = {norm:e})")]
    Singular { sigma_min: f64, norm: f64 },

    #[error("block ({row},{col}) is not complex linear (residual {residual:e})")]
    NotComplexLinear { row: usize, col: usize, residual: f64 },

    #[error("spectral radius {radius} not below 1 - {margin}")]
    SpectralRadius { radius: f64, margin: f64 },

    #[error("eigenvalue {lambda} is within {tol:e} of the real axis")]
    NearRealEigenvalue { lambda: Complex64, tol: f64 },

    #[error("pole of the fractional map hit (sigma_min = {sigma_min:e})")]
    Pole { sigma_min: f64 },

    #[error("trace-zero normalization failed (last residual {residual:e})")]
    TraceNormalization { residual: f64 },

    #[error("not a complex structure: |J^2 + I| = {residual:e}")]
    NotComplexStructure { residual: f64 },

    #[error("determinant {det} is not 1")]
    NotUnimodular { det: f64 },

    #[error("vector is not a unit vector (norm {norm})")]
    NotUnit { norm: f64 },

    #[error("degenerate plane: {0}")]
    DegeneratePlane(String),

    #[error("fiber inversion failed (residual {residual:e})")]
    FiberInversion { residual: f64 },

    #[error("tangent directions are rank deficient (sigma_min = {sigma_min:e})")]
    RankDeficient { sigma_min: f64 },

    #[error("ellipticity fails: margin {margin:e}")]
    NotElliptic { margin: f64 },

    #[error("frame orientation cannot be kept positive: {0}")]
    Orientation(String),

    #[error("frame field jumps between stencil points (jump {jump:e})")]
    Discontinuity { jump: f64 },

    #[error("torsion correction left residual {residual:e}")]
    Torsion { residual: f64 },

    #[error("plane is not invariant under the complex structure (residual {residual:e})")]
    NotInvariant { residual: f64 },

    #[error("zero vector")]
    ZeroVector,

    #[error("no hinge found in {draws} draws (best margins {best:?})")]
    HingeExhausted { draws: usize, best: [f64; 3] },

    #[error("point left the complement of the real locus (distance {distance:e})")]
    RealLocus { distance: f64 },

    #[error("newton inversion did not converge (residual {residual:e})")]
    Inversion { residual: f64 },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
