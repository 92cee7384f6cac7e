//! Forecasting the latent field and the intensity beyond the last observed
//! day.
//!
//! Given `z_T`, the field `Delta` days ahead is Gaussian with mean
//! `phi z_T + (1 - phi) mu` and covariance `(1 - phi^2)` times the spatial
//! prior covariance, where `phi = exp(-Delta / theta)`.

use ndarray::Array2;
use rand::Rng;

use crate::covfit::CovarianceParams;
use crate::data::{Raster, RasterUnits};
use crate::error::{Error, Result};
use crate::grf::CirculantSpectrum;
use crate::mala::MalaRun;

/// Weight on the current field after `delta` days.
pub fn forecast_weight(delta: f64, params: &CovarianceParams) -> f64 {
    (-delta / params.theta).exp()
}

/// `phi E[z_T] + (1 - phi) mu` per base cell.
pub fn forecast_mean(run: &MalaRun, delta: f64, params: &CovarianceParams) -> Result<Array2<f64>> {
    if delta < 0.0 {
        return Err(Error::domain("forecast horizon must be non-negative"));
    }
    let last = run
        .mean_fields
        .last()
        .ok_or_else(|| Error::domain("chain has no modelled days"))?;
    Ok(forecast_mean_from(last, delta, params))
}

/// As [`forecast_mean`] from an explicit posterior mean field.
pub fn forecast_mean_from(
    posterior_mean: &Array2<f64>,
    delta: f64,
    params: &CovarianceParams,
) -> Array2<f64> {
    let w = forecast_weight(delta, params);
    let mu = params.mean();
    posterior_mean.mapv(|z| w * z + (1.0 - w) * mu)
}

/// One draw of `z_{T+Delta}` from a retained `z_T`.
pub fn forecast_field_draw<R: Rng + ?Sized>(
    z_t: &Array2<f64>,
    delta: f64,
    spectrum: &CirculantSpectrum,
    rng: &mut R,
) -> Result<Array2<f64>> {
    if delta < 1.0 {
        return Err(Error::domain("forecast horizon must be at least one day"));
    }
    let params = &spectrum.params;
    let w = forecast_weight(delta, params);
    let mu = params.mean();
    let innovation = spectrum.restrict(&spectrum.apply_sqrt(&spectrum.white_noise(rng)));
    if innovation.dim() != z_t.dim() {
        return Err(Error::Dimension(
            "field and spectrum lattices differ".into(),
        ));
    }
    let s = (1.0 - w * w).max(0.0).sqrt();
    let out = ndarray::Zip::from(z_t)
        .and(&innovation)
        .map_collect(|&z, &e| w * z + (1.0 - w) * mu + s * e);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite forecast field".into()));
    }
    Ok(out)
}

/// `Lambda(c) = lambda0(c) * lambda1 * exp(z(c))`, events per unit area.
pub fn forecast_intensity(density: &Raster, lambda1: f64, field: &Array2<f64>) -> Result<Raster> {
    if !(lambda1 > 0.0 && lambda1.is_finite()) {
        return Err(Error::domain(format!(
            "temporal intensity must be positive, got {lambda1}"
        )));
    }
    if field.dim() != density.values().dim() {
        return Err(Error::Dimension("field and density lattices differ".into()));
    }
    let values = ndarray::Zip::from(density.values())
        .and(field)
        .map_collect(|&d, &z| d * lambda1 * z.exp());
    Raster::new(
        density.grid().clone(),
        values,
        RasterUnits::IntensityPerArea,
    )
}
