//! Second-order summary statistics and Monte-Carlo diagnostics.

mod autocov;
mod cross_k;
mod edge;
mod envelope;
mod index;
mod kfunction;
mod mctest;
mod pcf;

pub use autocov::{empirical_autocov, AutocovCurve};
pub use cross_k::{bivariate_k, CrossK};
pub use edge::{
    circle_fraction, circle_fraction_polygon, circle_fraction_rectangle, ripley_weight_spatial,
    ripley_weight_temporal,
};
pub use envelope::{envelope, Envelope};
pub use kfunction::{spatial_inhom_k, st_inhom_k, KCurve, KSurface, SeparableIntensity};
pub use mctest::{spacetime_mc_test, McTestResult};
pub use pcf::{stoyan_bandwidth, time_averaged_pcf, PcfCurve, STOYAN_C};
