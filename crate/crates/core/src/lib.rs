//! Tabular laboratory for value-aware model learning.
//!
//! Everything in this crate is pure computation over finite MDPs: exact
//! policy evaluation, model-advantage identities, learnable softmax dynamics
//! models with analytic gradients, and a Dyna-style training loop. The crate
//! is `no_std` and only needs `alloc`; file formats and the CLI live in the
//! `vaml-lab` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agent;
pub mod env;
pub mod error;
pub mod gradcheck;
pub mod lemma;
mod linalg;
pub mod math;
pub mod mbrl;
pub mod mdp;
pub mod model;
pub mod random;

pub use error::{Error, Result};
pub use mdp::{StateDistribution, TabularMdp, TabularPolicy, ValueTable};
