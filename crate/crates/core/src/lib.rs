//! SE(3) trajectory-supervised manipulation policies on a kinematic tabletop world.

pub mod datasets;
pub mod geometry;
pub mod harness;
pub mod policy;
pub mod provenance;
pub mod seeds;
pub mod simworld;
pub mod tensornet;
