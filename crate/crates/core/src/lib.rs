//! Learning restricted Boltzmann machines through their feedforward conditional means.
//!
//! The crate covers exact model semantics ([`rbm`]), polynomial approximation of the
//! `f_β` activations ([`approx`]), ℓ1-constrained logistic regression ([`logistic`]),
//! two-hop structure recovery ([`structure`]), MRF distribution recovery
//! ([`distribution`]), supervised label prediction ([`supervised`]) and the
//! experiment plumbing ([`harness`]).

pub mod approx;
pub mod distribution;
pub mod error;
pub mod harness;
pub mod hypercube;
pub mod logistic;
pub mod poly;
pub mod rbm;
pub mod spins;
pub mod structure;
pub mod supervised;

pub use error::{Error, Result};
pub use hypercube::Pmf;
pub use poly::{SparsePolynomial, Subset};
pub use rbm::{NormBounds, Rbm};
pub use spins::{SpinDataset, SpinSource, WeightedSpins};
