//! File formats, the Monte Carlo experiment runner and the `ips`
//! command-line front end on top of [`ips_core`].

pub mod cli;
pub mod error;
pub mod harness;
pub mod io;
pub mod stats;
pub mod svg;
pub mod trace;

pub use error::{Error, Result};
