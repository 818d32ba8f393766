use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("grid needs at least 4 cells, got {0}")]
    GridTooSmall(usize),
    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("fields live on different grids ({0} vs {1} cells)")]
    GridMismatch(usize, usize),
    #[error("non-finite value at cell {0}")]
    NonFinite(usize),
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("CFL violated: dt*max|b|/h = {0:.4} > 1")]
    Cfl(f64),
    #[error("negative mass {0:e} produced by transport step")]
    NegativeMass(f64),
    #[error("singular tridiagonal system")]
    SingularSystem,
    #[error("total masses differ by {0:e}")]
    MassMismatch(f64),
    #[error("dual norm of order {0} is not supported (use 0 or 1)")]
    UnsupportedOrder(u32),
    #[error("Legendre maximizer {alpha} reached the search box boundary")]
    LegendreBoundary { alpha: f64 },
    #[error("truncation radius must be at least 2, got {0}")]
    TruncationRadius(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
    #[error("cannot parse value `{value}` for key `{key}`")]
    ParseValue { key: String, value: String },
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("operation requires a non-leaf node, got node {0}")]
    LeafNode(usize),
    #[error("{what} did not converge in {iterations} iterations (last residual {last:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        last: f64,
        residuals: Vec<f64>,
    },
    #[error("major state {x} left the box [-{half_width}, {half_width}]")]
    BoxExit { x: f64, half_width: f64 },
    #[error("model lacks the long-time coefficient {0}")]
    MissingCoefficient(&'static str),
    #[error("model lacks second-derivative data: {0:?}")]
    MissingDerivatives(Vec<&'static str>),
    #[error("solution reached the truncation zone: |p| = {reached:.4} > R = {radius:.4}")]
    TruncationZone { reached: f64, radius: f64 },
    #[error("outer map is not contracting (ratios {ratios:?}); shorten the horizon or use continuation")]
    NoContraction { ratios: Vec<f64> },
    #[error("master-field lattice extrapolation: {0}")]
    Extrapolation(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
