//! Planning core for a heterogeneous multi-UAV surface reconstruction system:
//! one LiDAR explorer maps the scene by surface-frontier exploration while
//! camera photographers visit incrementally generated coverage viewpoints
//! assigned by a consistency-aware genetic multi-depot MTSP.
//!
//! The crate is `no_std` (with `alloc`). Everything here is a pure function
//! of its inputs and an explicit seed; IO, scenarios and the simulation
//! engine live in the `soar-sim` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod assign;
pub mod coverage;
pub mod explore;
pub mod geom;
pub mod linalg;
pub mod oracle;
pub mod photographer;
pub mod routes;
pub mod sensors;
pub mod world;
