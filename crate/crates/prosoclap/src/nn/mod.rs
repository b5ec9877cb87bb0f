//! Numerical core: tape autodiff, parameter store, layers, optimizer and
//! gradient verification.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
