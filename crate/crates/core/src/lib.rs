//! Magnetic levitation of a spinning dipole in an axisymmetric field:
//! field evaluation, relative equilibria, energy-momentum stability and
//! direct simulation.

pub mod dynamics;
pub mod equilibrium;
pub mod fields;
pub mod stability;
