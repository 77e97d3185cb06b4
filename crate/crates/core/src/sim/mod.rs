//! Synthetic generators with known interaction graphs.

pub mod boid;
pub mod kuramoto;
