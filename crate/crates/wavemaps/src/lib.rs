//! Co-rotational wave maps from (3+1)-dimensional Minkowski space into the
//! three-sphere admit self-similar blow-up solutions. This crate computes the
//! objects behind their mode stability analysis:
//!
//! * the self-similar profiles `f_{n,ell}` inside the backward light cone,
//!   parameterized by the equivariance index `ell` and the number `n` of
//!   intersections with the equator map ([`profiles`]),
//! * the singular Sturm-Liouville operators obtained by linearizing around a
//!   profile in similarity coordinates, and their negative point spectra by
//!   two-sided shooting ([`slp`]),
//! * the limiting operator reached as `n` grows, whose spectrum reduces to a
//!   hypergeometric connection problem solvable in closed form up to complex
//!   Gamma evaluations ([`infty`]),
//! * the linearized flow itself on a truncated similarity slab, evolved by
//!   method of lines, with growth rates read off seeded mode runs
//!   ([`evolution`]).
//!
//! Supporting machinery: an embedded Runge-Kutta integrator with dense output
//! ([`odeint`]), Frobenius series starts at the singular endpoints
//! ([`frobenius`]), truncated power-series arithmetic ([`series`]), and
//! weighted quadrature ([`quad`]).
//!
//! Everything is plain `f64` numerics; no global state. All solvers take
//! explicit tolerance/offset parameters with defaults matching the ones the
//! reference table in [`verify`] was produced with.

// Numeric kernels prefer explicit indices and NaN-rejecting comparisons, and
// printed constants carry full measured precision.
#![allow(clippy::excessive_precision)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]
#![allow(clippy::manual_memcpy)]
#![allow(clippy::manual_swap)]
#![allow(clippy::type_complexity)]

pub mod error;
pub mod evolution;
pub mod frobenius;
pub mod infty;
pub mod odeint;
pub mod profiles;
pub mod quad;
pub mod series;
pub mod slp;
pub mod verify;

pub use error::{
    EvolveError, FrobeniusError, InftyError, OdeError, ProfileError, SlpError, VerifyError,
};
