//! Outdoor-to-indoor positioning core.
//!
//! Geometry, multipath generation, channel synthesis, position estimators,
//! Cramér–Rao bounds and the sidelink positioning session logic. The crate
//! is `no_std` and only needs `alloc`; file formats, the experiment runner
//! and the command-line front end live in the `ips` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bounds;
pub mod channel;
pub mod locate;
pub mod pipeline;
pub mod geom;
pub mod raypath;
pub mod rng;
pub mod scenario;
pub mod scene;
pub mod slp;

pub use geom::{Point3, Vec3};
