//! Exact computation toolkit for semi-algebraic geometry over `Q_p`.
//!
//! The library provides capped-precision arithmetic in `Q_p` together with the
//! residue-side maps `ord`, `ac_m`, `rv_n` and the coset predicates `Q_{m,n}`,
//! cells over a trivial base with their balls and fractional monomials, a small
//! expression language for univariate piecewise rational functions, verifiers
//! for the (n-)Jacobian property, ultrametric fixed-point and collision
//! solvers, an n-preparation engine that approximates functions by
//! center-plus-monomial data, and an ε-preserving piecewise Lipschitz
//! decomposer.
//!
//! Every qualitative claim is certified by exhaustive enumeration over finite
//! windows of `Q_p`: sets of points `p^v·u` with the valuation in a fixed range
//! and the unit part enumerated modulo `p^k`.

pub mod error;
pub mod functions;
pub mod geometry;
pub mod jacobian;
pub mod lipschitz;
pub mod padic;
pub mod poly;
pub mod prepare;
pub mod qrat;
pub mod report;

pub use error::PadicError;
pub use padic::{FieldContext, PadicNumber, RvElement};
pub use qrat::Q;
