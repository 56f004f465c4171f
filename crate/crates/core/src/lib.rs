//! Linear convolutional networks trained by gradient flow.
//!
//! - [`lcn`]: architectures, filters, convolution matrices, final filters.
//! - [`poly`]: filter polynomials, roots, linear factorizations.
//! - [`losses`]: losses, empirical risk, gradients and the bound `g`.
//! - [`flow`]: the gradient-flow integrator, certificates and verification.
//! - [`harness`]: experiment configs, artifacts and the CLI backend.

pub mod flow;
#[cfg(feature = "harness")]
pub mod harness;
pub mod lcn;
pub mod losses;
pub mod poly;
