//! Deterministic kinetic solver for the time-periodic state of a hard-sphere
//! rarefied gas between a fixed wall and an oscillating wall with diffuse
//! reflection.
//!
//! The crate is organized bottom-up: wall kinematics and the frame change,
//! the phase grid, forced characteristics, collision operators, boundary
//! operators, the periodic solver ladder and the stability march.

pub mod boundary;
pub mod characteristics;
pub mod collision;
pub mod config;
pub mod error;
pub mod frame;
pub mod grid;
pub mod report;
pub mod solvers;
pub mod stability;
pub mod transport;
pub mod wall;

pub use error::{KineticsError, Result};

/// Sizes the global worker pool. Only the first call has an effect.
pub fn init_threads(n: usize) {
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global();
}
