//! Decentralized inexact projected-gradient scheduling for peer-to-peer
//! energy trading communities.

pub mod error;
pub mod index;
pub mod io;
pub mod model;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod polyhedron;
pub mod pricing;
pub mod problem;
pub mod projection;
pub mod scenario;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
