//! Error types for the solver layers. Each module has its own enum; nothing
//! here is meant to be matched exhaustively by callers outside this crate.

use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum OdeError {
    /// Step size shrank below the representable floor. For the profile
    /// shooter this is the deliberate blow-up signal: the trajectory left the
    /// region where the equation is regular faster than the controller could
    /// follow.
    #[error("step size underflow at t = {t} (|h| = {h:.3e})")]
    StepSizeUnderflow { t: f64, h: f64 },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    MaxStepsExceeded { t: f64, max_steps: usize },
    #[error("non-finite state at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("invalid problem: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Error)]
pub enum FrobeniusError {
    #[error("rho = {0} is not a singular endpoint of the problem (only 0 and 1 are)")]
    NotSingularPoint(f64),
    #[error(
        "index {index} is the smaller root of a degenerate pair (difference {diff}); \
         that branch generically carries a log term and is not supported"
    )]
    LogarithmicBranch { index: f64, diff: f64 },
    #[error("requested index {index} is not an indicial root (roots {r1}, {r2})")]
    NotAnIndex { index: f64, r1: f64, r2: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Error)]
pub enum ProfileError {
    #[error("no profile with n = {n}, ell = {ell} located in scan range [{lo:.3e}, {hi:.3e}]")]
    NotFound { n: u32, ell: u32, lo: f64, hi: f64 },
    #[error(
        "shooting Newton iteration diverged for n = {n}, ell = {ell}: \
         |mismatch| = {mismatch:.3e} after {iterations} iterations (b = {b:.6e}, c = {c:.6e})"
    )]
    NewtonDiverged { n: u32, ell: u32, b: f64, c: f64, mismatch: f64, iterations: usize },
    /// A sign change sits within one cell of a near-tangency, so the crossing
    /// count cannot be certified at this resolution.
    #[error("mesh too coarse to certify intersection count (refine beyond {resolution} points)")]
    MeshTooCoarse { resolution: usize },
    #[error("integration failed: {0}")]
    Integration(#[from] OdeError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Error)]
pub enum SlpError {
    #[error("meshes of the two factors do not match")]
    MeshMismatch,
    #[error("mesh touches a singular endpoint (rho = {0})")]
    MeshTouchesEndpoint(f64),
    #[error(
        "lambda = {0} lies in [0, inf), which is covered by the essential spectrum and \
         carries no H-admissible boundary behavior at rho = 1; refusing to shoot there"
    )]
    NotBelowEssentialSpectrum(f64),
    #[error("test function support [{lo}, {hi}] is not compactly contained in (0, 1)")]
    SupportNotCompact { lo: f64, hi: f64 },
    #[error(
        "eigenvalue scan too coarse: root count changed from {coarse} to {fine} under \
         refinement; rerun with a denser grid"
    )]
    ScanTooCoarse { coarse: usize, fine: usize },
    #[error("integration failed: {0}")]
    Integration(#[from] OdeError),
    #[error("frobenius start failed: {0}")]
    Frobenius(#[from] FrobeniusError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Error)]
pub enum InftyError {
    #[error("gamma evaluated at a non-positive integer {0}")]
    GammaPole(f64),
    #[error("cutoff interval [{lo}, {hi}] must satisfy 0.5 < lo < hi < 1")]
    BadCutoff { lo: f64, hi: f64 },
    #[error(
        "bracket extrapolation did not settle: spread {spread:.3e} over the sampling window \
         (expected a limit; the wrong solution combination oscillates)"
    )]
    BracketNotConvergent { spread: f64 },
    #[error("integration failed: {0}")]
    Integration(#[from] OdeError),
    #[error("frobenius start failed: {0}")]
    Frobenius(#[from] FrobeniusError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Error)]
pub enum VerifyError {
    #[error("profile solve failed for column {column}: {source}")]
    Profile {
        column: String,
        #[source]
        source: ProfileError,
    },
    #[error("spectrum solve failed for column {column}: {source}")]
    Spectrum {
        column: String,
        #[source]
        source: SlpError,
    },
    #[error("limiting-operator solve failed: {0}")]
    Limiting(#[from] InftyError),
    #[error(
        "column {column} produced {found} rates where the reference table prints {expected}"
    )]
    MissingRates { column: String, found: usize, expected: usize },
}

#[derive(Debug, Clone, Error)]
pub enum EvolveError {
    #[error("discretized operator is not symmetric (defect {0:.3e}); refusing spectral propagation")]
    NotSymmetric(f64),
    #[error("non-finite state at sigma = {sigma}; returning last good state")]
    NonFinite { sigma: f64 },
    #[error("growth-rate window [{lo}, {hi}] contains fewer than 3 emitted states")]
    WindowTooShort { lo: f64, hi: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}
