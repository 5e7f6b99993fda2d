use thiserror::Error;

/// Errors produced by the normal-form engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("multi-indices must have disjoint support, both contain mode {mode}")]
    OverlappingSupport { mode: i32 },

    #[error("mode {mode} outside the truncated mode set |j| <= {j_max}")]
    ModeOutOfRange { mode: i32, j_max: i32 },

    #[error("reality violated at ({alpha}|{beta}): H = {got}, conjugate partner = {partner}")]
    RealityViolation {
        alpha: String,
        beta: String,
        got: String,
        partner: String,
    },

    #[error("mass conservation violated at ({alpha}|{beta}): |alpha| = {ma}, |beta| = {mb}")]
    MassViolation {
        alpha: String,
        beta: String,
        ma: u32,
        mb: u32,
    },

    #[error("term ({alpha}|{beta}) lies in the kernel of the frequency operator")]
    KernelTerm { alpha: String, beta: String },

    #[error("near-resonant divisor {divisor:e} at ({alpha}|{beta})")]
    NearResonance {
        alpha: String,
        beta: String,
        divisor: f64,
    },

    #[error("Neumann series diverges: increment grew over {0} consecutive terms")]
    NeumannDivergence(usize),

    #[error("flow diverged at t = {t}: |u| = {norm:e} exceeds twice the domain radius")]
    FlowDivergence { t: f64, norm: f64 },

    #[error("Hamiltonian is not in normal form: |Pi^(<=0)(N - D_omega)| = {residual:e} > {tol:e}")]
    NotNormalForm { residual: f64, tol: f64 },

    #[error("action-angle inverse undefined: |u_{mode}| = 0")]
    ZeroCoordinate { mode: i32 },

    #[error("Lipschitz estimation needs at least 2 frequency samples, got {0}")]
    TooFewSamples(usize),

    #[error("KAM iteration failed to converge: {reason}")]
    NonConvergence { reason: String },

    #[error("fixed-point iteration for the frequency map failed to contract after {0} sweeps")]
    ContractionFailure(usize),

    #[error("projection cross-check failed: subtract route and direct route differ by {0:e} (relative)")]
    ProjectionMismatch(f64),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
