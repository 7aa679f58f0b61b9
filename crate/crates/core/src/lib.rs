//! Splitting trees with neutral Poissonian mutations.
//!
//! The crate simulates the genealogy of a binary Crump-Mode-Jagers population
//! through its coalescent point process (CPP), scatters infinite-alleles
//! mutations on it, and evaluates closed-form and recursive expressions for
//! the moments of the allele frequency spectrum `A(k, t)`. A forward-in-time
//! simulator is provided as an independent oracle, and a harness compares
//! every formula with Monte Carlo estimates.
//!
//! Module map:
//!
//! * [`model`]: lifespan laws, Laplace exponents `psi`, `psi_theta`, Malthusian parameter.
//! * [`scale`]: scale functions `W`, `W_theta` by Volterra marching, survival, limit constants `c_k`.
//! * [`cpp`]: CPP sampling, mutation scattering, allelic partition, grafting construction.
//! * [`forward`]: event-level forward simulator, infinite-descent counts, residual lifetimes.
//! * [`moments`]: pmfs, mean spectrum, joint pgf and coefficient extraction, second-order moments.
//! * [`stats`]: goodness-of-fit statistics.
//! * [`mc`]: replica-parallel Monte Carlo with deterministic per-replica streams.
//! * [`harness`]: validation battery, convergence study and CSV reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod cpp;
pub mod error;
pub mod forward;
pub mod harness;
pub mod mc;
pub mod model;
pub mod moments;
pub mod scale;
pub mod series;
pub mod stats;

pub use error::{Error, Result};
pub use model::{LifespanDistribution, ModelParams};
pub use scale::ScaleGrid;
