//! Learning spatially varying coefficients of time-dependent scalar PDEs with a
//! differentiable, CFL-stable forward-Euler finite-difference solver.

pub mod commands;
pub mod datagen;
pub mod error;
pub mod grid;
pub mod io;
pub mod learn;
pub mod metrics;
pub mod solver;
pub mod stencil;

pub use error::{Error, Result};
pub use grid::{Field, Grid, Mesh, Trajectory};
