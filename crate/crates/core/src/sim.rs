//! Poisson and log-Gaussian Cox simulation on a lattice.

use std::io::Write;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::covfit::CovarianceParams;
use crate::data::{Event, ObservationWindow, Point, Raster, SpatioTemporalPointPattern, TimeRange};
use crate::error::{Error, Result};
use crate::grf::{circulant_eigenvalues, extend_grid, CirculantSpectrum};

/// Realisation count and seed for repeated simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub n_realizations: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_realizations == 0 {
            return Err(Error::config("n_realizations", "must be at least 1"));
        }
        Ok(())
    }
}

pub(crate) fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if mean > 0.0 {
        Poisson::new(mean)
            .map(|d| d.sample(rng) as u64)
            .unwrap_or(0)
    } else {
        0
    }
}

/// Uniform point in cell `(i, j)`, resampled until it falls in the window
/// (falling back to the centroid, which lies inside for masked-in cells).
fn jitter<R: Rng + ?Sized>(
    raster: &Raster,
    window: Option<&ObservationWindow>,
    i: usize,
    j: usize,
    rng: &mut R,
) -> Point {
    let g = raster.grid();
    let c = g.centroid(i, j);
    for _ in 0..64 {
        let p = Point::new(
            c.x + (rng.random::<f64>() - 0.5) * g.dx,
            c.y + (rng.random::<f64>() - 0.5) * g.dy,
        );
        if window.is_none_or(|w| w.contains(p)) {
            return p;
        }
    }
    c
}

/// Per masked-in cell a Poisson count with mean `value * dx * dy`, placed
/// uniformly inside the cell.
pub fn simulate_poisson_from_raster<R: Rng + ?Sized>(
    raster: &Raster,
    rng: &mut R,
) -> Result<Vec<Point>> {
    simulate_in_window(raster, None, rng)
}

/// As [`simulate_poisson_from_raster`], keeping points inside `window`.
pub fn simulate_in_window<R: Rng + ?Sized>(
    raster: &Raster,
    window: Option<&ObservationWindow>,
    rng: &mut R,
) -> Result<Vec<Point>> {
    let g = raster.grid();
    if let Some((i, j)) = g
        .masked_cells()
        .find(|&(i, j)| raster.values()[[i, j]] < 0.0)
    {
        return Err(Error::domain(format!(
            "negative intensity {} in cell ({i}, {j})",
            raster.values()[[i, j]]
        )));
    }
    let area = g.cell_area();
    let mut out = Vec::new();
    for (i, j) in g.masked_cells() {
        let n = poisson_count(raster.values()[[i, j]] * area, rng);
        for _ in 0..n {
            out.push(jitter(raster, window, i, j, rng));
        }
    }
    Ok(out)
}

/// A simulated dataset with the latent fields that generated it.
#[derive(Debug, Clone)]
pub struct LgcpDraw {
    pub pattern: SpatioTemporalPointPattern,
    /// `z_t` on the base lattice, one per day.
    pub fields: Vec<Array2<f64>>,
}

/// Draws an AR(1)-coupled field series and a Poisson pattern per day with
/// intensity `lambda0 * lambda1(t) * exp(z_t)`.
pub fn simulate_lgcp_dataset<R: Rng + ?Sized>(
    params: &CovarianceParams,
    density: &Raster,
    lambda1: &[f64],
    window: &ObservationWindow,
    t_range: TimeRange,
    rng: &mut R,
) -> Result<LgcpDraw> {
    let spectrum = circulant_eigenvalues(&extend_grid(density.grid()), params)?;
    simulate_lgcp_with(&spectrum, density, lambda1, window, t_range, rng)
}

/// As [`simulate_lgcp_dataset`] with a precomputed spectrum.
pub fn simulate_lgcp_with<R: Rng + ?Sized>(
    spectrum: &CirculantSpectrum,
    density: &Raster,
    lambda1: &[f64],
    window: &ObservationWindow,
    t_range: TimeRange,
    rng: &mut R,
) -> Result<LgcpDraw> {
    if lambda1.len() != t_range.len() {
        return Err(Error::Dimension(format!(
            "{} temporal intensities for {} days",
            lambda1.len(),
            t_range.len()
        )));
    }
    if let Some(v) = lambda1.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::domain(format!(
            "temporal intensity must be positive, got {v}"
        )));
    }
    let params = spectrum.params;
    let beta = (-1.0 / params.theta).exp();
    let innov = (1.0 - beta * beta).sqrt();
    let mu = params.mean();
    let mut gamma = spectrum.white_noise(rng);
    let mut events = Vec::new();
    let mut fields = Vec::with_capacity(t_range.len());
    for (k, t) in t_range.days().enumerate() {
        if k > 0 {
            let eps = spectrum.white_noise(rng);
            gamma.mapv_inplace(|g| beta * g);
            gamma.scaled_add(innov, &eps);
        }
        let z = spectrum
            .restrict(&spectrum.apply_sqrt(&gamma))
            .mapv(|v| v + mu);
        let l1 = lambda1[k];
        let intensity = Raster::new(
            density.grid().clone(),
            ndarray::Zip::from(density.values())
                .and(&z)
                .map_collect(|&d, &zv| d * l1 * zv.exp()),
            crate::data::RasterUnits::IntensityPerArea,
        )?;
        for p in simulate_in_window(&intensity, Some(window), rng)? {
            events.push(Event { x: p.x, y: p.y, t });
        }
        fields.push(z);
    }
    Ok(LgcpDraw {
        pattern: SpatioTemporalPointPattern::new(events, window.clone(), t_range)?,
        fields,
    })
}

/// Writes a planar pattern as CSV `x,y`.
pub fn write_points<W: Write>(points: &[Point], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["x", "y"])?;
    for p in points {
        wtr.serialize((p.x, p.y))?;
    }
    wtr.flush()?;
    Ok(())
}
