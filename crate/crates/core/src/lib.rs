//! Separable spatio-temporal log-Gaussian Cox process modelling.

pub mod bandwidth;
pub mod config;
pub mod covfit;
pub mod data;
pub mod error;
mod fft2;
pub mod forecast;
pub mod glm;
pub mod grf;
pub mod intensity;
pub mod mala;
mod optim;
pub mod pipeline;
pub mod rng;
pub mod sim;
pub mod summary;

pub use error::{Error, Result};
