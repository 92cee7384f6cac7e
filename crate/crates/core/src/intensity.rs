//! Quartic-kernel spatial intensity, its normalisation to a density over the
//! window, and the Epanechnikov temporal intensity used as a plug-in for the
//! second-order summaries.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{GridSpec, Point, Raster, RasterUnits, SpatioTemporalPointPattern};
use crate::error::{Error, Result};

pub const DEFAULT_GRID_SIZE: usize = 128;

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// `(1 - u^2/2)^2` on `|u| <= sqrt(2)`, zero elsewhere.
#[inline]
pub fn quartic_kernel(u: f64) -> f64 {
    if u * u < 2.0 {
        let a = 1.0 - 0.5 * u * u;
        a * a
    } else {
        0.0
    }
}

/// `0.75 (1 - u^2)` on `|u| <= 1`.
#[inline]
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

fn check_bandwidth(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidBandwidth(h))
    }
}

/// Bucket index over event locations used to visit only events within the
/// kernel support of a centroid.
struct Buckets {
    x0: f64,
    y0: f64,
    side: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<Point>>,
}

impl Buckets {
    fn new(points: &[Point], side: f64) -> Self {
        let x0 = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let y0 = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let x1 = points.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let y1 = points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let nx = (((x1 - x0) / side).floor() as usize + 1).min(4096);
        let ny = (((y1 - y0) / side).floor() as usize + 1).min(4096);
        let side = side.max((x1 - x0) / nx as f64).max((y1 - y0) / ny as f64);
        let mut cells = vec![Vec::new(); nx * ny];
        for p in points {
            let i = (((p.x - x0) / side) as usize).min(nx - 1);
            let j = (((p.y - y0) / side) as usize).min(ny - 1);
            cells[i * ny + j].push(*p);
        }
        Self {
            x0,
            y0,
            side,
            nx,
            ny,
            cells,
        }
    }

    fn for_each_near(&self, c: Point, radius: f64, mut f: impl FnMut(&Point)) {
        let lo = |v: f64, o: f64| (((v - radius - o) / self.side).floor().max(0.0)) as usize;
        let hi = |v: f64, o: f64, n: usize| {
            let k = ((v + radius - o) / self.side).floor();
            if k < 0.0 {
                None
            } else {
                Some((k as usize).min(n - 1))
            }
        };
        let (Some(ihi), Some(jhi)) = (hi(c.x, self.x0, self.nx), hi(c.y, self.y0, self.ny)) else {
            return;
        };
        for i in lo(c.x, self.x0)..=ihi {
            for j in lo(c.y, self.y0)..=jhi {
                self.cells[i * self.ny + j].iter().for_each(&mut f);
            }
        }
    }
}

/// Kernel estimate `(1/h) sum_i k(|s - s_i| / h)` at every cell centroid.
///
/// No edge correction is applied.
pub fn kernel_intensity_raster(
    pattern: &SpatioTemporalPointPattern,
    grid: &GridSpec,
    h: f64,
) -> Result<Raster> {
    kernel_intensity_points(&pattern.locations(), grid, h)
}

/// As [`kernel_intensity_raster`] for bare locations.
pub fn kernel_intensity_points(points: &[Point], grid: &GridSpec, h: f64) -> Result<Raster> {
    check_bandwidth(h)?;
    let mut values = Array2::<f64>::zeros((grid.m, grid.p));
    if !points.is_empty() {
        let support = SQRT2 * h;
        let buckets = Buckets::new(points, support);
        let inv_h = 1.0 / h;
        values
            .as_slice_mut()
            .expect("standard layout")
            .par_iter_mut()
            .enumerate()
            .for_each(|(k, v)| {
                let (i, j) = (k / grid.p, k % grid.p);
                if !grid.in_mask(i, j) {
                    return;
                }
                let c = grid.centroid(i, j);
                let mut acc = 0.0;
                buckets.for_each_near(c, support, |s| {
                    acc += quartic_kernel(c.dist(s) * inv_h);
                });
                *v = acc * inv_h;
            });
    }
    Raster::new(grid.clone(), values, RasterUnits::IntensityPerArea)
}

/// A spatial density over the window: the Riemann sum of its values over the
/// masked-in cells is one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialDensity {
    pub raster: Raster,
    pub bandwidth: f64,
    /// The divisor applied to the input raster.
    pub normalization: f64,
}

impl SpatialDensity {
    /// Density value of the cell containing `p`. Points in masked-out
    /// boundary cells take the nearest masked-in cell's value; points off the
    /// grid get zero.
    pub fn at(&self, p: Point) -> f64 {
        self.raster.value_near(p).unwrap_or(0.0)
    }

    /// A density that is constant over the masked-in cells.
    pub fn uniform(grid: &GridSpec) -> Result<Self> {
        let ones = Raster::new(
            grid.clone(),
            Array2::from_elem((grid.m, grid.p), 1.0),
            RasterUnits::IntensityPerArea,
        )?;
        normalize_to_density(&ones, f64::NAN)
    }
}

/// Divides the raster by its Riemann mass over the masked-in cells.
pub fn normalize_to_density(raster: &Raster, bandwidth: f64) -> Result<SpatialDensity> {
    let mass = raster.integral();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::ZeroMass);
    }
    let normalized = raster.map(RasterUnits::Density, |v| v / mass)?;
    Ok(SpatialDensity {
        raster: normalized,
        bandwidth,
        normalization: mass,
    })
}

/// `(1/h_t) sum_i 0.75 (1 - ((t - t_i)/h_t)^2)_+`.
pub fn epanechnikov_temporal_intensity(times: &[i64], h_t: f64, t: f64) -> Result<f64> {
    check_bandwidth(h_t)?;
    Ok(times
        .iter()
        .map(|&ti| epanechnikov((t - ti as f64) / h_t))
        .sum::<f64>()
        / h_t)
}

/// Temporal intensity for every day of the pattern's range, computed from the
/// daily counts (equivalent to [`epanechnikov_temporal_intensity`] per day).
pub fn epanechnikov_daily(pattern: &SpatioTemporalPointPattern, h_t: f64) -> Result<Vec<f64>> {
    check_bandwidth(h_t)?;
    let counts = crate::data::daily_counts(pattern);
    let reach = h_t.floor() as i64;
    Ok(counts
        .iter()
        .map(|&(t, _)| {
            let mut acc = 0.0;
            for &(s, n) in &counts {
                if (s - t).abs() <= reach && n > 0 {
                    acc += n as f64 * epanechnikov((t - s) as f64 / h_t);
                }
            }
            acc / h_t
        })
        .collect())
}
