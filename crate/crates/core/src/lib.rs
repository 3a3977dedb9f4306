//! Demand estimation for random-coefficient logit models when the share of
//! the outside good is not observed.
//!
//! The crate computes the sharp identified set for `(alpha, beta, lambda)`
//! given only conditional inside shares and a set of admissible outside
//! shares, confidence sets from the implied conditional moment inequalities,
//! and bounds on elasticities, markups and diversion ratios.

pub mod data;
pub mod error;
pub mod grid;
pub mod identified;
pub mod inference;
mod interp;
pub mod inversion;
pub mod model;
pub mod quadrature;
pub mod shares;
pub mod simulation;

pub use error::{Error, Result};
pub use grid::{GridPoint, GridResult, Projection};
pub use inversion::{demand_shocks, invert_sigma, InversionOptions};
pub use model::*;
pub use shares::{choice_probabilities, sigma, sigma_tilde, EquilibriumObject, MarketKernel};
