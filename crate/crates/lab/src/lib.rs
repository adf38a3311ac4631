//! File formats, experiment orchestration and the command-line front end for
//! `vaml-lab-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod mdp_json;
pub mod output;
pub mod sweep;
pub mod train;

pub use error::{LabError, Result};
