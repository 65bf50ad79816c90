//! Stochastic chemical reaction networks and their large-deviation limits.
//!
//! The crate covers four layers that meet in the `experiments` module:
//!
//! * [`stochastic`]: exact simulation of the jump process on a lattice of
//!   spacing `h` and Monte Carlo estimates of `h log E[exp(u0(X_t)/h)]`;
//! * [`cme`]: the master equation on a truncated box, its generator and dual,
//!   product-Poisson invariant measures and their landscapes;
//! * [`hje_discrete`]: the monotone WKB schemes on the lattice, solved by
//!   backward Euler and nonlinear Gauss-Seidel;
//! * [`hje_continuous`] and [`rre`]: the limiting Hamiltonian, its Legendre
//!   dual, characteristics, Lax-Oleinik minimisation and the rate equation.

// `!(x > 0.0)` guards also reject NaN; indexed loops mirror the linear algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cme;
pub mod error;
pub mod experiments;
pub mod hje_continuous;
pub mod hje_discrete;
pub mod lattice;
pub mod network;
pub mod rre;
pub mod stochastic;

pub use error::{CrnError, Result};
pub use lattice::{GridFunction, Jump, JumpTable, Lattice};
pub use network::{
    catalog, mass_vector, parse_network, Direction, FluxPoint, JumpGroup, Reaction, ReactionNetwork,
    StoichiometricStructure,
};
