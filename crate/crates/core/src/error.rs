use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum Error {
    #[error("unsupported cone family: {0}")]
    UnsupportedFamily(String),
    #[error("resolution {got} below minimum {min}")]
    ResolutionTooLow { got: usize, min: usize },
    #[error("quadrature order {0} below minimum 2")]
    QuadratureOrder(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("graph degenerate at node {node} (Gram determinant {det:e})")]
    DegenerateGraph { node: usize, det: f64 },
    #[error("field too large for a spherical graph: C0 norm {0}")]
    FieldTooLarge(f64),
    #[error("radial quadrature too coarse: estimated error {estimate:e} above {tol:e}")]
    RadialGridTooCoarse { estimate: f64, tol: f64 },
    #[error("degenerate spectral gap (gap_minus {gap_minus}, gap_plus {gap_plus})")]
    DegenerateGap { gap_minus: f64, gap_plus: f64 },
    #[error("unresolved spectral tail: {fraction:e} of the energy lies above the cutoff")]
    UnresolvedTail { fraction: f64 },
    #[error("kernel coordinate |mu| = {norm} exceeds domain radius {radius}")]
    OutsideDomain { norm: f64, radius: f64 },
    #[error("Newton iteration did not converge in {iterations} steps (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("Newton residual stagnated at {residual:e} after {iterations} steps")]
    NewtonStagnated { iterations: usize, residual: f64 },
    #[error("gradient mismatch between reduction and finite differences: {discrepancy:e}")]
    GradientMismatch { discrepancy: f64 },
    #[error("Lojasiewicz fit impossible: {0}")]
    FitImpossible(String),
    #[error("trace norm {norm} exceeds admissible bound {delta}")]
    TraceTooLarge { norm: f64, delta: f64 },
    #[error("case 2 refused: A(mu0) = {0:e} is negative")]
    NegativeReducedEnergy(f64),
    #[error("empty spectral band after filtering")]
    EmptyBand,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("decay integration blew up at log r = {0}")]
    BlowUp(f64),
    #[error("trajectory too short: needs log r <= {needed}, reaches {reached}")]
    TrajectoryTooShort { needed: f64, reached: f64 },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
