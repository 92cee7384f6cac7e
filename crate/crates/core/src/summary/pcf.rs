//! Time-averaged spatial pair correlation function.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::edge::EdgeGeometry;
use super::index::CellIndex;
use super::kfunction::check_grid;
use crate::data::{ObservationWindow, Point};
use crate::error::{Error, Result};
use crate::intensity::epanechnikov;

/// Default constant in Stoyan's rule.
pub const STOYAN_C: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcfCurve {
    pub u_grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
}

impl PcfCurve {
    /// CSV `u,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["u", "value"])?;
        for (&u, &v) in self.u_grid.iter().zip(&self.values) {
            wtr.serialize((u, v))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `h = c / sqrt(intensity)`.
pub fn stoyan_bandwidth(mean_intensity: f64, c: f64) -> Result<f64> {
    if !(mean_intensity > 0.0 && mean_intensity.is_finite()) {
        return Err(Error::domain(format!(
            "mean intensity must be positive, got {mean_intensity}"
        )));
    }
    if !(c > 0.0) {
        return Err(Error::domain("Stoyan constant must be positive"));
    }
    Ok(c / mean_intensity.sqrt())
}

/// Pair correlation averaged over days.
///
/// `by_day[t]` holds the locations of day `t` and `lambda1[t]` the expected
/// count that day; `lambda0` is the spatial density. Each ordered pair of
/// distinct same-day events contributes an Epanechnikov kernel in
/// `u - |s1 - s2|` with half-width `h`, weighted by the spatial edge
/// correction and divided by the product of intensities. The total is
/// normalised by `2 pi u |R| T`.
pub fn time_averaged_pcf(
    by_day: &[Vec<Point>],
    window: &ObservationWindow,
    lambda0: impl Fn(Point) -> f64 + Sync,
    lambda1: &[f64],
    u_grid: &[f64],
    h: f64,
) -> Result<PcfCurve> {
    check_grid("u_grid", u_grid)?;
    if u_grid[0] <= 0.0 {
        return Err(Error::domain("pair correlation lags must be positive"));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidBandwidth(h));
    }
    if lambda1.len() != by_day.len() {
        return Err(Error::Dimension(format!(
            "{} temporal intensities for {} days",
            lambda1.len(),
            by_day.len()
        )));
    }
    let reach = u_grid.last().expect("checked non-empty") + h;
    let edge = EdgeGeometry::new(window);
    let nu = u_grid.len();

    let partials: Vec<Result<Vec<f64>>> = by_day
        .par_iter()
        .zip(lambda1)
        .map(|(pts, &l1)| {
            let mut acc = vec![0.0; nu];
            if pts.len() < 2 {
                return Ok(acc);
            }
            if !(l1 > 0.0 && l1.is_finite()) {
                return Err(Error::domain(format!(
                    "temporal intensity {l1} on a day with events"
                )));
            }
            let l0: Vec<f64> = pts.iter().map(|&p| lambda0(p)).collect();
            if let Some((index, &value)) = l0.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(Error::NonPositiveIntensity { index, value });
            }
            let index = CellIndex::new(pts, reach);
            let scale = 1.0 / (l1 * l1);
            for (i, &si) in pts.iter().enumerate() {
                index.for_each_candidate(si, reach, |j| {
                    if j == i {
                        return;
                    }
                    let d = si.dist(&pts[j]);
                    if d >= reach {
                        return;
                    }
                    let ws = if d > 0.0 { edge.weight(si, d) } else { 1.0 };
                    let base = scale * ws / (l0[i] * l0[j]);
                    let lo = u_grid.partition_point(|&u| u <= d - h);
                    for (k, &u) in u_grid.iter().enumerate().skip(lo) {
                        if u >= d + h {
                            break;
                        }
                        acc[k] += base * epanechnikov((u - d) / h) / h;
                    }
                });
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![0.0; nu];
    for p in partials {
        for (t, v) in total.iter_mut().zip(p?) {
            *t += v;
        }
    }
    let denom = 2.0 * PI * window.area() * by_day.len() as f64;
    let values = total
        .iter()
        .zip(u_grid)
        .map(|(s, &u)| s / (denom * u))
        .collect();
    Ok(PcfCurve {
        u_grid: u_grid.to_vec(),
        values,
        bandwidth: h,
    })
}
