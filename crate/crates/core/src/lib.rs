//! Simulation, training and fabrication export for passive phase-only
//! acoustic diffractive classifiers ("meta-neural-networks").
//!
//! A network is a stack of 2D phase masks separated by free space. An object
//! illuminated by a plane wave produces a field that diffracts through the
//! stack onto a detector plane, where ten square regions collect energy; the
//! region with the most energy is the predicted digit.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod fabricate;
pub mod field;
pub mod network;
pub mod propagation;
pub mod training;

pub use config::PhysicsConfig;
pub use error::{Error, Result};
pub use field::ComplexField;
pub use network::MetaNetwork;
