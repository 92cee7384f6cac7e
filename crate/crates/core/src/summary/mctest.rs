//! Monte-Carlo test for space-time interaction by permuting day stamps.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kfunction::{KEngine, KSurface};
use crate::data::{Point, SpatioTemporalPointPattern};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McTestResult {
    /// Residual sum of the observed K surface.
    pub observed: f64,
    pub permuted: Vec<f64>,
    /// Share of permutations whose statistic is below the observed one.
    pub fraction_below: f64,
}

fn statistic(
    engine: &KEngine<'_>,
    points: &[Point],
    times: &[i64],
    intensity: &(impl Fn(Point, i64) -> f64 + Sync),
    r_grid: &[f64],
    t_grid: &[f64],
) -> Result<f64> {
    let lambda: Vec<f64> = points
        .iter()
        .zip(times)
        .enumerate()
        .map(|(index, (&p, &t))| {
            let value = intensity(p, t);
            if value > 0.0 && value.is_finite() {
                Ok(value)
            } else {
                Err(Error::NonPositiveIntensity { index, value })
            }
        })
        .collect::<Result<_>>()?;
    let surface = KSurface {
        r_grid: r_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        values: engine.surface(times, &lambda),
    };
    Ok(surface.residual_sum())
}

/// Compares `sum (K(r,t) - 2 pi r^2 t)` for the data against `n_perm`
/// copies whose day stamps are shuffled uniformly among the events.
/// Permutation `i` uses RNG stream `i` under `seed`.
pub fn spacetime_mc_test(
    pattern: &SpatioTemporalPointPattern,
    intensity: impl Fn(Point, i64) -> f64 + Sync,
    n_perm: usize,
    r_grid: &[f64],
    t_grid: &[f64],
    seed: u64,
) -> Result<McTestResult> {
    if n_perm == 0 {
        return Err(Error::domain("n_perm must be at least 1"));
    }
    let points = pattern.locations();
    let times = pattern.times();
    let engine = KEngine::new(&points, pattern.window(), pattern.t_range(), r_grid, t_grid)?;
    let observed = statistic(&engine, &points, &times, &intensity, r_grid, t_grid)?;
    let permuted: Vec<f64> = (0..n_perm)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let mut shuffled = times.clone();
            shuffled.shuffle(&mut rng);
            statistic(&engine, &points, &shuffled, &intensity, r_grid, t_grid)
        })
        .collect::<Result<_>>()?;
    let below = permuted.iter().filter(|&&u| u < observed).count();
    Ok(McTestResult {
        observed,
        fraction_below: below as f64 / n_perm as f64,
        permuted,
    })
}
