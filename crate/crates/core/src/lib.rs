//! Simulation and analysis of spatially entangled photon pairs passing a
//! double slit: state model, Fourier-optics propagation, synthetic camera
//! frames, coincidence estimation and fringe fitting.

pub mod analytic;
pub mod biphoton;
pub mod config;
pub mod detector;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod fit;
pub mod grid;
pub mod io;
pub mod profile;
pub mod propagation;

pub use error::{Error, Result};
