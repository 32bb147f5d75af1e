//! Clustered-SIS predictions for heterogeneous SIS epidemics.
//!
//! The pipeline approximates the infection-rate matrix by a non-negative factorization
//! `Ã ≈ WᵀH`, groups nodes with similar (infectiousness, susceptibility, curing) profiles,
//! solves the balance equations of the clustered birth–death system for the metastable
//! mean, and linearizes the fluctuations around it to obtain the metastable covariance.
//! Exact stochastic simulation and small-chain quasi-stationary solvers are included as
//! ground truth.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod clustering;
pub mod error;
pub mod fluctuation;
pub mod io;
pub mod linalg;
pub mod metastable;
pub mod network;
pub mod nmf;
pub mod pipeline;
pub mod qsd;
pub mod report;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod surrogate;

pub use clustering::{Clustering, NodeProfiles};
pub use error::{Result, SisError};
pub use network::{InfectionRates, RateNetwork};
pub use nmf::FactorPair;
