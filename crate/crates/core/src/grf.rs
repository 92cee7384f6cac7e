//! Stationary Gaussian fields on a torus-extended lattice via circulant
//! embedding.

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covfit::CovarianceParams;
use crate::data::{GridSpec, Raster, RasterUnits};
use crate::error::{Error, Result};
use crate::fft2::Fft2;

/// The base lattice embedded in an `M x N` torus with `M >= 2m`, `N >= 2p`,
/// both powers of two. Extended cell `(u, v)` with `u < m`, `v < p` is base
/// cell `(u, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtendedGrid {
    pub base: GridSpec,
    pub big_m: usize,
    pub big_n: usize,
}

impl ExtendedGrid {
    /// Torus circumference along x.
    pub fn range_x(&self) -> f64 {
        self.big_m as f64 * self.base.dx
    }

    pub fn range_y(&self) -> f64 {
        self.big_n as f64 * self.base.dy
    }

    pub fn n_cells(&self) -> usize {
        self.big_m * self.big_n
    }
}

pub fn extend_grid(base: &GridSpec) -> ExtendedGrid {
    ExtendedGrid {
        base: base.clone(),
        big_m: (2 * base.m).next_power_of_two(),
        big_n: (2 * base.p).next_power_of_two(),
    }
}

/// Shortest distance between two extended cells' centroids on the torus.
pub fn torus_distance(c1: (usize, usize), c2: (usize, usize), ext: &ExtendedGrid) -> f64 {
    let du = (c1.0 as f64 - c2.0 as f64).abs() * ext.base.dx;
    let dv = (c1.1 as f64 - c2.1 as f64).abs() * ext.base.dy;
    let du = du.min(ext.range_x() - du);
    let dv = dv.min(ext.range_y() - dv);
    (du * du + dv * dv).sqrt()
}

/// Eigenvalues of the block-circulant extended covariance.
#[derive(Debug, Clone)]
pub struct CirculantSpectrum {
    pub ext: ExtendedGrid,
    pub params: CovarianceParams,
    /// First row of the extended covariance arranged as an `M x N` array.
    pub base_row: Array2<f64>,
    /// Eigenvalues after clipping.
    pub eigenvalues: Array2<f64>,
    /// Smallest eigenvalue before clipping.
    pub min_eigenvalue: f64,
    /// Largest imaginary part seen in the transform.
    pub imag_residue: f64,
    /// Negative eigenvalues were set to zero.
    pub clipped: bool,
    sqrt_eig: Array2<f64>,
    fft: Fft2,
}

/// Negative eigenvalues whose total magnitude is below this share of the
/// trace are clipped to zero; larger negative mass is an error.
pub const CLIP_TOLERANCE: f64 = 1e-6;

pub fn circulant_eigenvalues(
    ext: &ExtendedGrid,
    params: &CovarianceParams,
) -> Result<CirculantSpectrum> {
    params.validate()?;
    let (mm, nn) = (ext.big_m, ext.big_n);
    let base_row = Array2::from_shape_fn((mm, nn), |(u, v)| {
        params.sigma2 * params.spatial_corr(torus_distance((0, 0), (u, v), ext))
    });
    let fft = Fft2::new(mm, nn);
    let mut buf = base_row.mapv(|v| Complex64::new(v, 0.0));
    fft.transform(&mut buf, false);
    let max_abs = buf.iter().map(|z| z.re.abs()).fold(0.0, f64::max);
    let imag_residue = buf.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    let raw = buf.mapv(|z| z.re);
    let min_eigenvalue = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let trace: f64 = raw.sum();
    let negative_mass: f64 = raw.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
    let flagged = min_eigenvalue < -1e-8 * max_abs;
    if flagged && negative_mass >= CLIP_TOLERANCE * trace {
        return Err(Error::NegativeEigenvalues {
            negative_mass,
            trace,
        });
    }
    let eigenvalues = raw.mapv(|v| v.max(0.0));
    let sqrt_eig = eigenvalues.mapv(f64::sqrt);
    Ok(CirculantSpectrum {
        ext: ext.clone(),
        params: *params,
        base_row,
        eigenvalues,
        min_eigenvalue,
        imag_residue,
        clipped: negative_mass > 0.0,
        sqrt_eig,
        fft,
    })
}

impl CirculantSpectrum {
    /// `A x` with `A` the symmetric square root of the extended covariance.
    pub fn apply_sqrt(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut buf = x.mapv(|v| Complex64::new(v, 0.0));
        self.fft.transform(&mut buf, false);
        buf.zip_mut_with(&self.sqrt_eig, |z, &s| *z *= s);
        self.fft.transform(&mut buf, true);
        let scale = 1.0 / self.ext.n_cells() as f64;
        buf.mapv(|z| z.re * scale)
    }

    /// Standard-normal array of the extended shape.
    pub fn white_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((self.ext.big_m, self.ext.big_n), || {
            rng.sample(StandardNormal)
        })
    }

    /// Restriction of an extended array to the base lattice.
    pub fn restrict(&self, a: &Array2<f64>) -> Array2<f64> {
        let (m, p) = (self.ext.base.m, self.ext.base.p);
        Array2::from_shape_fn((m, p), |(i, j)| a[[i, j]])
    }
}

/// One field draw: on the torus and restricted to the base lattice.
#[derive(Debug, Clone)]
pub struct GrfSample {
    pub extended: Array2<f64>,
    pub base: Raster,
}

/// Draws `mean + A U` with `U` white noise.
pub fn sample_grf<R: Rng + ?Sized>(
    spectrum: &CirculantSpectrum,
    mean: f64,
    rng: &mut R,
) -> Result<GrfSample> {
    let u = spectrum.white_noise(rng);
    let mut extended = spectrum.apply_sqrt(&u);
    extended.mapv_inplace(|v| v + mean);
    if extended.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in sampled field".into()));
    }
    let base = Raster::new(
        spectrum.ext.base.clone(),
        spectrum.restrict(&extended),
        RasterUnits::Dimensionless,
    )?;
    Ok(GrfSample { extended, base })
}
