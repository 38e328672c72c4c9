//! Simulation and spectral analysis of a vector-borne crop epidemic with
//! predator biocontrol on heterogeneous landscapes.
//!
//! The model tracks four densities on a rectangular field: infected hosts
//! `I`, infective vectors `V_i`, susceptible vectors `V_s`, and predators
//! `P`. Vectors diffuse; predators follow an ideal-free dispersal law tied
//! to their local growth rate `r_P`. Landscape structure enters through a
//! refuge mask that raises predator growth and removes host plants.
//!
//! The crate is organized bottom-up:
//!
//! * [`geometry`]: grids, refuge masks, patch layouts
//! * [`coefficients`]: model parameters and spatial coefficient fields
//! * [`operators`]: discrete diffusion operators and implicit solves
//! * [`spectral`]: principal eigenvalues and regime classification
//! * [`dynamics`]: time stepping, monitors, run summaries
//! * [`analysis`]: harvest accounting and rigorous decay/harvest bounds
//! * [`control`]: refuge-geometry sweeps (frequency and quantity)

pub mod analysis;
pub mod coefficients;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod geometry;
pub mod operators;
pub mod spectral;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
